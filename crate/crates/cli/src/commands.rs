use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nutriscan_core::config::Config;
use nutriscan_core::embedding::{extract, Modality, ModalityInput, ProviderRegistry};
use nutriscan_core::eval::{
    classify_predictions, confusion_metrics, evaluate, feature_subsets, gamma_mae_csv, group_by_device,
    lighting_sweep, load_manifest, parse_mask, perceive_records, predictions_csv, provider_grid, reports_csv,
    reports_jsonl, run_ablation, write_synthetic_dataset, AblationCell, AblationResult, EvalReport, Split,
    SubjectRecord,
};
use nutriscan_core::fusion::{load_params, save_params, Architecture, FusionModelParams, TrainingConfig};
use nutriscan_core::geometry::apply_gamma;
use nutriscan_core::perception::{sidecar_path, Annotations};
use nutriscan_core::pipeline::{Perception, Pipeline, ScanRequest};
use nutriscan_core::raster::RgbImage;
use nutriscan_core::recon3d::write_xyz;
use nutriscan_core::{Error, Gender};
use serde::Serialize;

use crate::{
    AblateArgs, CliError, CliResult, Command, DataArgs, EstimateArgs, EvaluateArgs, ImageArgs, ModelArgs, PlotArgs,
    PreprocessArgs, Run, ServeArgs, SweepArgs, TrainArgs,
};

pub(crate) fn dispatch(cmd: &Command, run: &mut Run) -> CliResult<()> {
    match cmd {
        Command::Preprocess(a) => preprocess(a, run),
        Command::Height(a) => height(a, run),
        Command::Reconstruct(a) => reconstruct(a, run),
        Command::Embed(a) => embed(a, run),
        Command::Train(a) => train(a, run),
        Command::Estimate(a) => estimate(a, run),
        Command::Evaluate(a) => evaluate_cmd(a, run),
        Command::Ablate(a) => ablate(a, run),
        Command::LightingSweep(a) => sweep(a, run),
        Command::Serve(a) => serve(a, run),
        Command::PlotData(a) => plot_data(a, run),
    }
}

fn json_text(value: &impl Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn gender(s: &str) -> CliResult<Gender> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

/// Pipeline from the config, with `params` replacing the configured model.
fn pipeline(run: &mut Run, params: Option<&Path>) -> CliResult<Pipeline> {
    let cfg = run.config()?.clone();
    let path = params.map(Path::to_path_buf).unwrap_or_else(|| cfg.model.params.clone());
    let bytes = run.input(&path)?;
    Ok(Pipeline::from_config_with_params(&cfg, load_params(&bytes)?)?)
}

/// Pipeline for perception only; its fusion model is never used.
fn perception_pipeline(run: &Run) -> CliResult<Pipeline> {
    let cfg = run.config()?;
    let params = FusionModelParams::init(&Architecture::default(), 0)?;
    Ok(Pipeline::from_config_with_params(cfg, params)?)
}

fn perceive(run: &mut Run, p: &Pipeline, a: &ImageArgs, gamma: Option<f64>) -> CliResult<(RgbImage, Perception)> {
    let bytes = run.input(&a.image)?;
    let mut image = RgbImage::decode(&bytes)?;
    if let Some(g) = gamma {
        image = apply_gamma(&image, g)?;
    }
    let side = sidecar_path(&a.image);
    let annotations = if side.exists() {
        run.note_input(&side);
        Some(Annotations::load_sidecar(&side)?)
    } else {
        None
    };
    let perception = p.perceive(&ScanRequest {
        image: &image,
        age_years: a.age,
        gender: gender(&a.gender)?,
        device_id: a.device.as_deref(),
        annotations: annotations.as_ref(),
    })?;
    Ok((image, perception))
}

#[derive(Serialize)]
struct PerceptionSummary<'a> {
    device_id: &'a str,
    height_cm: f64,
    subject_rect: [u32; 4],
    face_crop: [u32; 2],
    body_crop: [u32; 2],
    cloud_points: usize,
}

fn summary<'a>(p: &'a Pipeline, a: &'a ImageArgs, x: &Perception) -> PerceptionSummary<'a> {
    let r = x.subject_rect;
    PerceptionSummary {
        device_id: p.resolve_device(a.device.as_deref()),
        height_cm: x.height_cm,
        subject_rect: [r.x, r.y, r.width, r.height],
        face_crop: [x.face_crop.width(), x.face_crop.height()],
        body_crop: [x.body_crop.width(), x.body_crop.height()],
        cloud_points: x.cloud.points.len(),
    }
}

fn preprocess(a: &PreprocessArgs, run: &mut Run) -> CliResult<()> {
    let p = perception_pipeline(run)?;
    let (image, x) = perceive(run, &p, &a.image, a.gamma)?;
    if a.gamma.is_some() {
        run.write("input.png", image.encode_png()?)?;
    }
    run.write("face_aligned.png", x.face_crop.encode_png()?)?;
    run.write("body_crop.png", x.body_crop.encode_png()?)?;
    let text = json_text(&summary(&p, &a.image, &x))?;
    run.write("perception.json", &text)?;
    print!("{text}");
    Ok(())
}

fn height(a: &ImageArgs, run: &mut Run) -> CliResult<()> {
    let p = perception_pipeline(run)?;
    let (_, x) = perceive(run, &p, a, None)?;
    let device = p.resolve_device(a.device.as_deref());
    let text = json_text(&serde_json::json!({
        "device_id": device,
        "ppm": p.calibrations.get(device)?.ppm,
        "height_cm": x.height_cm,
    }))?;
    run.write("height.json", &text)?;
    print!("{text}");
    Ok(())
}

fn reconstruct(a: &ImageArgs, run: &mut Run) -> CliResult<()> {
    let p = perception_pipeline(run)?;
    let (_, x) = perceive(run, &p, a, None)?;
    write_xyz(&x.cloud, run.output_path("cloud.xyz")?)?;
    run.note_output(Path::new("cloud.xyz"));
    let text = json_text(&serde_json::json!({
        "points": x.cloud.points.len(),
        "source": x.cloud.source,
        "normalization": x.cloud.normalization,
    }))?;
    run.write("cloud.json", &text)?;
    print!("{text}");
    Ok(())
}

fn embed(a: &ImageArgs, run: &mut Run) -> CliResult<()> {
    let p = perception_pipeline(run)?;
    let (_, x) = perceive(run, &p, a, None)?;
    for m in Modality::ALL {
        let input = match m {
            Modality::Face => ModalityInput::Face(&x.face_crop),
            Modality::Body => ModalityInput::Body(&x.body_crop),
            Modality::Cloud => ModalityInput::Cloud(&x.cloud),
        };
        let provider = p.providers.get(m);
        let z = extract(provider.as_ref(), &input)?;
        let path = run.write(format!("embeddings/{m}.txt"), z.to_text(&provider.descriptor().digest))?;
        println!("{m} {} {}", provider.descriptor().provider_name, path.display());
    }
    Ok(())
}

fn estimate(a: &EstimateArgs, run: &mut Run) -> CliResult<()> {
    let p = pipeline(run, None)?;
    let bytes = run.input(&a.image)?;
    let resp = p.respond(&bytes, a.age, gender(&a.gender)?, a.device.as_deref(), 0)?;
    let text = json_text(&resp)?;
    run.write("estimate.json", &text)?;
    print!("{text}");
    Ok(())
}

fn training_config(m: &ModelArgs, seed: u64) -> TrainingConfig {
    TrainingConfig {
        architecture: Architecture {
            hidden: m.hidden.clone(),
            ..Architecture::default()
        },
        epochs: m.epochs,
        learning_rate: m.learning_rate,
        batch_size: m.batch_size,
        ridge_lambda: m.ridge_lambda,
        patience: m.patience,
        seed,
        ..TrainingConfig::default()
    }
}

fn manifest_records(run: &mut Run, path: &Path) -> CliResult<(PathBuf, Vec<SubjectRecord>)> {
    run.note_input(path);
    let records = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    Ok((base, records))
}

/// Records from `--manifest`, or a freshly rendered synthetic cohort under
/// `<out>/cohort`.
fn dataset(run: &mut Run, d: &DataArgs) -> CliResult<(PathBuf, Vec<SubjectRecord>)> {
    match (&d.manifest, d.synthetic_cohort) {
        (Some(path), _) => manifest_records(run, path),
        (None, Some(n)) => {
            let device = run.config()?.calibration.default_device.clone();
            let dir = run.out_dir.join("cohort");
            let records = write_synthetic_dataset(&dir, n, d.heldout, run.seed, &[device.as_str()])?;
            run.note_output(Path::new("cohort/manifest.jsonl"));
            Ok((dir, records))
        }
        (None, None) => Err(CliError::Usage("pass --manifest or --synthetic-cohort".into())),
    }
}

fn registry(cfg: &Config) -> CliResult<ProviderRegistry> {
    Ok(ProviderRegistry::synthetic(cfg.providers.seed, cfg.providers.brightness_sensitivity)?)
}

fn parse_masks(labels: &[String]) -> CliResult<Vec<[bool; 3]>> {
    let mut out = Vec::new();
    for l in labels {
        if l == "all" {
            out.extend(feature_subsets());
        } else {
            out.push(parse_mask(l).map_err(|e| CliError::Usage(e.to_string()))?);
        }
    }
    Ok(out)
}

fn train_cells(
    run: &mut Run,
    data: &DataArgs,
    model: &ModelArgs,
    cells: &[AblationCell],
) -> CliResult<Vec<AblationResult>> {
    let cfg = run.config()?.clone();
    let p = perception_pipeline(run)?;
    let (base, records) = dataset(run, data)?;
    let perceived = perceive_records(&p, &base, &records, 1.0)?;
    Ok(run_ablation(cells, &perceived, &registry(&cfg)?, &training_config(model, run.seed))?)
}

fn train(a: &TrainArgs, run: &mut Run) -> CliResult<()> {
    let cfg = run.config()?.clone();
    let mask = parse_masks(std::slice::from_ref(&a.mask))?;
    let cells: Vec<AblationCell> = mask
        .into_iter()
        .map(|mask| AblationCell {
            face: cfg.providers.face.clone(),
            body: cfg.providers.body.clone(),
            cloud: cfg.providers.cloud.clone(),
            mask,
        })
        .collect();
    let result = train_cells(run, &a.data, &a.model, &cells)?.remove(0);
    run.write("params.bin", save_params(&result.params)?)?;
    let reports = [result.report];
    run.write("report.csv", reports_csv(&reports))?;
    run.write("report.jsonl", reports_jsonl(&reports)?)?;
    run.write("predictions.csv", predictions_csv(&result.predictions))?;
    print!("{}", reports_csv(&reports));
    Ok(())
}

fn select_split(records: Vec<SubjectRecord>, split: &str) -> CliResult<Vec<SubjectRecord>> {
    let want = match split {
        "all" => None,
        "train" => Some(Split::Train),
        "val" => Some(Split::Val),
        "test" => Some(Split::Test),
        "heldout" => Some(Split::Heldout),
        other => return Err(CliError::Usage(format!("unknown split `{other}`"))),
    };
    let out: Vec<SubjectRecord> = records
        .into_iter()
        .filter(|r| want.is_none_or(|s| r.split == s))
        .collect();
    if out.is_empty() {
        return Err(Error::Data(format!("manifest has no `{split}` records")).into());
    }
    Ok(out)
}

fn devices_csv(preds: &[nutriscan_core::eval::Prediction]) -> CliResult<String> {
    let mut s = String::from("device,mae,rmse,r2\n");
    for (device, m) in group_by_device(preds)? {
        let _ = writeln!(s, "{device},{},{},{}", m.mae, m.rmse, m.r2);
    }
    Ok(s)
}

fn evaluate_cmd(a: &EvaluateArgs, run: &mut Run) -> CliResult<()> {
    let p = pipeline(run, a.params.as_deref())?;
    let (base, records) = manifest_records(run, &a.manifest)?;
    let records = select_split(records, &a.split)?;
    let data = perceive_records(&p, &base, &records, a.gamma)?;
    let (mut report, preds) = evaluate(&p, &data)?;
    if a.gamma != 1.0 {
        report.gamma = Some(a.gamma);
    }
    report.weight.check()?;
    let reports = [report];
    let csv = reports_csv(&reports);
    run.write("reports.csv", &csv)?;
    run.write("reports.jsonl", reports_jsonl(&reports)?)?;
    run.write("predictions.csv", predictions_csv(&preds))?;
    run.write("devices.csv", devices_csv(&preds)?)?;
    let counts = classify_predictions(&preds);
    let metrics = confusion_metrics(&counts)?;
    run.write(
        "confusion.json",
        json_text(&serde_json::json!({ "counts": counts, "metrics": metrics }))?,
    )?;
    print!("{csv}");
    Ok(())
}

fn or_default(list: &[String], default: &str) -> Vec<String> {
    if list.is_empty() {
        vec![default.to_string()]
    } else {
        list.to_vec()
    }
}

fn cell_file(i: usize, r: &EvalReport) -> String {
    format!("predictions/{i:02}_{}_{}_{}_{}.csv", r.face, r.body, r.cloud, r.mask.replace('+', "-"))
}

fn ablate(a: &AblateArgs, run: &mut Run) -> CliResult<()> {
    let cfg = run.config()?.clone();
    let grid = provider_grid(
        &or_default(&a.face, &cfg.providers.face),
        &or_default(&a.body, &cfg.providers.body),
        &or_default(&a.cloud, &cfg.providers.cloud),
    );
    let masks = if a.masks.is_empty() { vec![[true; 3]] } else { parse_masks(&a.masks)? };
    let cells: Vec<AblationCell> = grid
        .iter()
        .flat_map(|c| masks.iter().map(move |&mask| AblationCell { mask, ..c.clone() }))
        .collect();
    let results = train_cells(run, &a.data, &a.model, &cells)?;
    let reports: Vec<EvalReport> = results.iter().map(|r| r.report.clone()).collect();
    for r in &reports {
        r.weight.check()?;
    }
    for (i, r) in results.iter().enumerate() {
        run.write(cell_file(i, &r.report), predictions_csv(&r.predictions))?;
    }
    let csv = reports_csv(&reports);
    run.write("reports.csv", &csv)?;
    run.write("reports.jsonl", reports_jsonl(&reports)?)?;
    print!("{csv}");
    Ok(())
}

fn sweep_reports(p: &Pipeline, base: &Path, records: &[SubjectRecord], gammas: &[f64]) -> CliResult<Vec<EvalReport>> {
    let out = lighting_sweep(p, base, records, gammas)?;
    let reports: Vec<EvalReport> = out.into_iter().map(|(_, r, _)| r).collect();
    for r in &reports {
        r.weight.check()?;
    }
    Ok(reports)
}

fn sweep(a: &SweepArgs, run: &mut Run) -> CliResult<()> {
    let p = pipeline(run, a.params.as_deref())?;
    let (base, records) = manifest_records(run, &a.manifest)?;
    let records = select_split(records, &a.split)?;
    let reports = sweep_reports(&p, &base, &records, &a.gammas)?;
    run.write("sweep.csv", reports_csv(&reports))?;
    let curve = gamma_mae_csv(&reports);
    run.write("gamma_mae.csv", &curve)?;
    print!("{curve}");
    Ok(())
}

fn plot_data(a: &PlotArgs, run: &mut Run) -> CliResult<()> {
    let p = pipeline(run, a.params.as_deref())?;
    let (base, records) = manifest_records(run, &a.manifest)?;
    let has_test = records.iter().any(|r| r.split == Split::Test);
    let eval_records = select_split(records.clone(), if has_test { "test" } else { "all" })?;

    let reports = sweep_reports(&p, &base, &eval_records, &a.gammas)?;
    run.write("gamma_mae.csv", gamma_mae_csv(&reports))?;

    let data = perceive_records(&p, &base, &eval_records, 1.0)?;
    let (_, preds) = evaluate(&p, &data)?;
    run.write("device_mae.csv", devices_csv(&preds)?)?;
    run.write("pred_true.csv", predictions_csv(&preds))?;

    if !a.masks.is_empty() {
        let cfg = run.config()?.clone();
        let cells = nutriscan_core::eval::mask_grid(
            &cfg.providers.face,
            &cfg.providers.body,
            &cfg.providers.cloud,
            &parse_masks(&a.masks)?,
        );
        let all = perceive_records(&p, &base, &records, 1.0)?;
        let results = run_ablation(&cells, &all, &registry(&cfg)?, &training_config(&a.model, run.seed))?;
        for r in &results {
            run.write(
                format!("pred_true_{}.csv", r.report.mask.replace('+', "-")),
                predictions_csv(&r.predictions),
            )?;
        }
    }
    for f in &run.outputs {
        println!("{}", run.out_dir.join(f).display());
    }
    Ok(())
}

fn serve(a: &ServeArgs, run: &mut Run) -> CliResult<()> {
    let cfg = run.config()?.clone();
    let addr = match a.addr {
        Some(addr) => addr,
        None => {
            let port = match std::env::var(nutriscan_service::PORT_ENV) {
                Ok(v) => v
                    .parse::<u16>()
                    .map_err(|_| CliError::Usage(format!("{} must be a port number", nutriscan_service::PORT_ENV)))?,
                Err(_) => 8080,
            };
            std::net::SocketAddr::from(([127, 0, 0, 1], port))
        }
    };
    let token = std::env::var(nutriscan_service::ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty());
    let state = nutriscan_service::AppState::from_config(cfg, token)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("cannot start runtime", e))?;
    rt.block_on(nutriscan_service::serve(state, addr))?;
    Ok(())
}
