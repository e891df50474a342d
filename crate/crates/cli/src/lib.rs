//! `nutriscan` command line: one subcommand per pipeline stage or experiment.
//! Every run leaves a `run-manifest.json` in its output directory.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nutriscan_core::config::Config;
use nutriscan_core::pipeline::{sha256_hex, StageError, PIPELINE_VERSION};
use nutriscan_core::Error;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_PROVIDER: i32 = 5;
pub const EXIT_INTERNAL: i32 = 1;

pub const RUN_MANIFEST: &str = "run-manifest.json";
const DEFAULT_CONFIG: &str = "nutriscan.toml";

#[derive(Debug, Parser)]
#[command(name = "nutriscan", version, about = "Single-image height, weight and health estimation", arg_required_else_help = true)]
pub struct Cli {
    /// TOML config shared with the service (default: ./nutriscan.toml).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Config override, e.g. `--set providers.seed=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for training and synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Where artifacts go (default: runs/<subcommand>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment, crop and align one image; writes the face and body crops.
    Preprocess(PreprocessArgs),
    /// Calibrated height of the subject in one image.
    Height(ImageArgs),
    /// Reconstruct and sample the subject's surface point cloud.
    Reconstruct(ImageArgs),
    /// Face, body and point-cloud embeddings of one image.
    Embed(ImageArgs),
    /// Train the fusion model on a manifest or a synthetic cohort.
    Train(TrainArgs),
    /// Full estimate for one image, printed as JSON.
    Estimate(EstimateArgs),
    /// Score the configured model on a manifest.
    Evaluate(EvaluateArgs),
    /// Train and score a grid of extractor and feature-set choices.
    Ablate(AblateArgs),
    /// Model error as a function of image gamma.
    LightingSweep(SweepArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// CSV series for the brightness, device and correlation plots.
    PlotData(PlotArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Height(_) => "height",
            Command::Reconstruct(_) => "reconstruct",
            Command::Embed(_) => "embed",
            Command::Train(_) => "train",
            Command::Estimate(_) => "estimate",
            Command::Evaluate(_) => "evaluate",
            Command::Ablate(_) => "ablate",
            Command::LightingSweep(_) => "lighting-sweep",
            Command::Serve(_) => "serve",
            Command::PlotData(_) => "plot-data",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Only checked for range by the perception stages.
    #[arg(long, default_value_t = 30.0)]
    pub age: f64,
    #[arg(long, default_value = "female")]
    pub gender: String,
    /// Calibrated device id (default: the configured one).
    #[arg(long)]
    pub device: Option<String>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub image: ImageArgs,
    /// Apply this gamma to the image first.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub age: f64,
    #[arg(long)]
    pub gender: String,
    #[arg(long)]
    pub device: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = nutriscan_core::fusion::DEFAULT_HIDDEN)]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub ridge_lambda: f64,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// JSONL manifest of subject records.
    #[arg(long, conflicts_with = "synthetic_cohort", required_unless_present = "synthetic_cohort")]
    pub manifest: Option<PathBuf>,
    /// Render this many synthetic subjects instead (split 60/20/20).
    #[arg(long)]
    pub synthetic_cohort: Option<usize>,
    /// Extra held-out synthetic subjects.
    #[arg(long, default_value_t = 0, requires = "synthetic_cohort")]
    pub heldout: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Feature sets to use, e.g. `FF+BF`.
    #[arg(long, default_value = "FF+BF+DF")]
    pub mask: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Parameter file (default: the configured one).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// train, val, test, heldout or all.
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Face extractors (default: the configured one).
    #[arg(long, value_delimiter = ',')]
    pub face: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub body: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub cloud: Vec<String>,
    /// Feature sets (`all` for every non-empty subset), comma separated.
    /// Applied to the configured extractors when given.
    #[arg(long, value_delimiter = ',')]
    pub masks: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0, 1.5, 2.0])]
    pub gammas: Vec<f64>,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address (default: 127.0.0.1 on $NUTRISCAN_PORT or 8080).
    #[arg(long)]
    pub addr: Option<std::net::SocketAddr>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0, 1.5, 2.0])]
    pub gammas: Vec<f64>,
    /// Feature sets to train for the prediction/truth series (none by default).
    #[arg(long, value_delimiter = ',')]
    pub masks: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Service(#[from] nutriscan_service::ServiceError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => core_exit_code(e),
            CliError::Stage(e) => core_exit_code(&e.source),
            CliError::Service(nutriscan_service::ServiceError::Core(e)) => core_exit_code(e),
            CliError::Service(_) => EXIT_INTERNAL,
            CliError::Io { .. } => EXIT_DATA,
        }
    }
}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) | Error::Configuration(_) | Error::Infeasible { .. } => EXIT_USAGE,
        Error::Training { .. } | Error::Numeric(_) => EXIT_TRAINING,
        Error::Provider { .. } | Error::Contract(_) => EXIT_PROVIDER,
        _ => EXIT_DATA,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: u64,
    pipeline_version: &'a str,
    config: Option<FileEntry>,
    overrides: &'a [String],
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
    exit_code: i32,
    error: Option<String>,
}

/// Per-run state: resolved config, output directory and the files read and
/// written, which end up in the run manifest.
pub struct Run {
    pub seed: u64,
    pub out_dir: PathBuf,
    config_path: Option<PathBuf>,
    config: Option<Config>,
    config_error: Option<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(cli: &Cli) -> CliResult<Self> {
        let out_dir = cli
            .out_dir
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
        let path = cli.config.clone().or_else(|| {
            let p = PathBuf::from(DEFAULT_CONFIG);
            p.exists().then_some(p)
        });
        let (config, config_error) = match &path {
            Some(p) => {
                let mut cfg = Config::load(p)?;
                let base = p.parent().unwrap_or(Path::new("")).to_path_buf();
                for o in &cli.overrides {
                    cfg.apply_override(o, &base)?;
                }
                (Some(cfg), None)
            }
            None if !cli.overrides.is_empty() => {
                return Err(CliError::Usage("--set needs a config file".into()));
            }
            None => (None, Some(format!("no config file: pass --config or create ./{DEFAULT_CONFIG}"))),
        };
        Ok(Self {
            seed: cli.seed,
            out_dir,
            config_path: path,
            config,
            config_error,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn config(&self) -> CliResult<&Config> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Usage(self.config_error.clone().unwrap_or_default()))
    }

    pub fn input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("cannot read {}", path.display()), e))?;
        self.inputs.push(path.to_path_buf());
        Ok(bytes)
    }

    pub fn note_input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes `name` under the output directory and records it.
    pub fn write(&mut self, name: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name.as_ref());
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
        self.note_output(name.as_ref());
        Ok(path)
    }

    /// Path for an output that something else writes. Creates its directory;
    /// call `note_output` once the file exists.
    pub fn output_path(&self, name: impl AsRef<Path>) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name.as_ref());
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
        }
        Ok(path)
    }

    /// Records a file something else wrote under the output directory.
    pub fn note_output(&mut self, rel: &Path) {
        self.outputs.push(rel.to_path_buf());
    }

    fn manifest(&self, cli_args: &[String], cli: &Cli, outcome: &CliResult<()>) -> CliResult<String> {
        let entry = |p: &Path, shown: String| -> CliResult<FileEntry> {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(format!("cannot hash {}", p.display()), e))?;
            Ok(FileEntry {
                path: shown,
                sha256: sha256_hex(&bytes),
            })
        };
        let mut inputs = Vec::new();
        for p in &self.inputs {
            if p.is_file() {
                inputs.push(entry(p, p.display().to_string())?);
            }
        }
        let mut outputs = Vec::new();
        for rel in &self.outputs {
            outputs.push(entry(&self.out_dir.join(rel), rel.display().to_string())?);
        }
        let config = match &self.config_path {
            Some(p) if p.is_file() => Some(entry(p, p.display().to_string())?),
            _ => None,
        };
        let m = RunManifest {
            command: cli.command.name(),
            args: cli_args.to_vec(),
            seed: self.seed,
            pipeline_version: PIPELINE_VERSION,
            config,
            overrides: &cli.overrides,
            inputs,
            outputs,
            exit_code: outcome.as_ref().map_or_else(CliError::exit_code, |_| EXIT_OK),
            error: outcome.as_ref().err().map(|e| e.to_string()),
        };
        let mut text = serde_json::to_string_pretty(&m).map_err(Error::from)?;
        text.push('\n');
        Ok(text)
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut run = match Run::new(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let outcome = commands::dispatch(&cli.command, &mut run);
    let code = match &outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    let written = run
        .manifest(&args, &cli, &outcome)
        .and_then(|text| {
            std::fs::create_dir_all(&run.out_dir)
                .and_then(|_| std::fs::write(run.out_dir.join(RUN_MANIFEST), text))
                .map_err(|e| CliError::io("cannot write run manifest", e))
        });
    match written {
        Err(e) if code == EXIT_OK => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        _ => code,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_distinct_exit_codes() {
        let cases = [
            (Error::Parameter("x".into()), EXIT_USAGE),
            (Error::Configuration("x".into()), EXIT_USAGE),
            (Error::Data("x".into()), EXIT_DATA),
            (Error::NoSubject("x".into()), EXIT_DATA),
            (Error::Training { epoch: 3, message: "nan".into() }, EXIT_TRAINING),
            (Error::Numeric("x".into()), EXIT_TRAINING),
            (
                Error::Provider {
                    provider: "p".into(),
                    message: "down".into(),
                },
                EXIT_PROVIDER,
            ),
            (Error::Contract("x".into()), EXIT_PROVIDER),
        ];
        for (e, code) in cases {
            assert_eq!(CliError::from(e).exit_code(), code);
        }
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
    }

    #[test]
    fn stage_errors_use_the_underlying_kind() {
        let e = StageError {
            stage: nutriscan_core::pipeline::Stage::Embed,
            source: Error::Provider {
                provider: "p".into(),
                message: "down".into(),
            },
        };
        assert_eq!(CliError::from(e).exit_code(), EXIT_PROVIDER);
    }

    #[test]
    fn every_subcommand_parses() {
        for cmd in [
            "preprocess --image a.png",
            "height --image a.png",
            "reconstruct --image a.png",
            "embed --image a.png",
            "train --synthetic-cohort 10",
            "estimate --image a.png --age 3 --gender male",
            "evaluate --manifest m.jsonl",
            "ablate --manifest m.jsonl --masks all",
            "lighting-sweep --manifest m.jsonl",
            "serve",
            "plot-data --manifest m.jsonl",
        ] {
            let argv = std::iter::once("nutriscan").chain(cmd.split(' '));
            let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| panic!("{cmd}: {e}"));
            assert_eq!(cli.command.name(), cmd.split(' ').next().unwrap());
        }
        assert!(Cli::try_parse_from(["nutriscan", "train"]).is_err());
        assert!(Cli::try_parse_from(["nutriscan", "train", "--manifest", "m", "--synthetic-cohort", "3"]).is_err());
    }
}
