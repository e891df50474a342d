//! Append-only record store: one JSON event per line plus an in-memory index.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use nutriscan_core::health::{ActivityLevel, DietType, NutritionPlan};
use nutriscan_core::pipeline::EstimateResponse;
use nutriscan_core::Gender;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("record store: {0}")]
    Storage(String),
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Storage(e.to_string())
    }
}

/// Inputs of one estimate. Ground truth is unknown to the service, so this
/// keeps only the identifying fields of a manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSubject {
    pub record_id: String,
    pub image_sha256: String,
    pub gender: Gender,
    pub age_years: f64,
    pub device_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub diet_type: DietType,
    pub weeks: i64,
    #[serde(default)]
    pub activity_level: Option<ActivityLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub request: PlanRequest,
    pub plan: NutritionPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub subject: StoredSubject,
    pub response: EstimateResponse,
    pub plans: Vec<PlanEntry>,
}

/// Identity of an estimate's inputs; repeated submissions get increasing
/// ordinals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InputKey {
    pub image_sha256: String,
    pub age_bits: u64,
    pub gender: Gender,
    pub device_id: String,
}

impl InputKey {
    pub fn of(subject: &StoredSubject) -> Self {
        Self {
            image_sha256: subject.image_sha256.clone(),
            age_bits: subject.age_years.to_bits(),
            gender: subject.gender,
            device_id: subject.device_id.clone(),
        }
    }
}

pub type Builder<'a> = dyn FnMut(u64) -> (StoredSubject, EstimateResponse) + 'a;

pub trait RecordStore: Send + Sync {
    /// Calls `build` with the ordinal for `key` and persists what it returns,
    /// atomically with respect to other inserts.
    fn insert_estimate(&self, key: &InputKey, build: &mut Builder<'_>) -> Result<StoredRecord, StoreError>;

    fn add_plan(&self, record_id: &str, entry: PlanEntry) -> Result<(), StoreError>;

    fn get(&self, record_id: &str) -> Result<StoredRecord, StoreError>;

    /// Stores image bytes under their digest.
    fn put_image(&self, sha256: &str, bytes: &[u8]) -> Result<(), StoreError>;
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Event {
    Estimate {
        subject: StoredSubject,
        response: EstimateResponse,
    },
    Plan {
        record_id: String,
        entry: PlanEntry,
    },
}

#[derive(Default)]
struct Index {
    records: HashMap<String, StoredRecord>,
    ordinals: HashMap<InputKey, u64>,
}

impl Index {
    fn apply(&mut self, event: Event) -> Result<(), StoreError> {
        match event {
            Event::Estimate { subject, response } => {
                *self.ordinals.entry(InputKey::of(&subject)).or_insert(0) += 1;
                let id = subject.record_id.clone();
                let rec = StoredRecord {
                    subject,
                    response,
                    plans: Vec::new(),
                };
                if self.records.insert(id.clone(), rec).is_some() {
                    return Err(StoreError::Storage(format!("record `{id}` written twice")));
                }
            }
            Event::Plan { record_id, entry } => self
                .records
                .get_mut(&record_id)
                .ok_or_else(|| StoreError::Storage(format!("plan for unknown record `{record_id}`")))?
                .plans
                .push(entry),
        }
        Ok(())
    }
}

struct Inner {
    file: File,
    index: Index,
}

pub struct JsonlStore {
    log_path: PathBuf,
    images_dir: PathBuf,
    inner: Mutex<Inner>,
}

impl JsonlStore {
    pub const LOG_FILE: &'static str = "records.jsonl";

    /// Opens or creates the store in `dir`, replaying the existing log. A
    /// final line without its newline is an interrupted write and is dropped.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        let images_dir = dir.join("images");
        std::fs::create_dir_all(&images_dir)?;
        let log_path = dir.join(Self::LOG_FILE);
        let mut index = Index::default();
        if log_path.exists() {
            let mut reader = BufReader::new(File::open(&log_path)?);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    tracing::warn!(line = line_no, "dropping incomplete trailing record");
                    break;
                }
                let event: Event = serde_json::from_str(line.trim_end())
                    .map_err(|e| StoreError::Storage(format!("line {line_no}: {e}")))?;
                index.apply(event)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        tracing::info!(path = %log_path.display(), records = index.records.len(), "record store opened");
        Ok(Self {
            log_path,
            images_dir,
            inner: Mutex::new(Inner { file, index }),
        })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn image_path(&self, sha256: &str) -> PathBuf {
        self.images_dir.join(format!("{sha256}.img"))
    }

    fn lock(&self) -> Result<std::sync::MutexGuard<'_, Inner>, StoreError> {
        self.inner
            .lock()
            .map_err(|_| StoreError::Storage("store lock poisoned".into()))
    }

    fn ensure_log(&self) -> Result<(), StoreError> {
        if !self.log_path.exists() {
            return Err(StoreError::Storage(format!(
                "log file {} is missing",
                self.log_path.display()
            )));
        }
        Ok(())
    }

    fn append(inner: &mut Inner, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(event).map_err(|e| StoreError::Storage(e.to_string()))?;
        line.push('\n');
        // one write per complete line keeps concurrent readers from seeing halves
        inner.file.write_all(line.as_bytes())?;
        inner.file.sync_data()?;
        Ok(())
    }
}

impl RecordStore for JsonlStore {
    fn insert_estimate(&self, key: &InputKey, build: &mut Builder<'_>) -> Result<StoredRecord, StoreError> {
        self.ensure_log()?;
        let mut inner = self.lock()?;
        let ordinal = inner.index.ordinals.get(key).copied().unwrap_or(0);
        let (subject, response) = build(ordinal);
        if inner.index.records.contains_key(&subject.record_id) {
            return Err(StoreError::Storage(format!("record id `{}` already used", subject.record_id)));
        }
        let event = Event::Estimate { subject, response };
        Self::append(&mut inner, &event)?;
        let Event::Estimate { subject, .. } = &event else { unreachable!() };
        let id = subject.record_id.clone();
        inner.index.apply(event)?;
        Ok(inner.index.records[&id].clone())
    }

    fn add_plan(&self, record_id: &str, entry: PlanEntry) -> Result<(), StoreError> {
        self.ensure_log()?;
        let mut inner = self.lock()?;
        if !inner.index.records.contains_key(record_id) {
            return Err(StoreError::NotFound(record_id.to_string()));
        }
        let event = Event::Plan {
            record_id: record_id.to_string(),
            entry,
        };
        Self::append(&mut inner, &event)?;
        inner.index.apply(event)
    }

    fn get(&self, record_id: &str) -> Result<StoredRecord, StoreError> {
        self.ensure_log()?;
        self.lock()?
            .index
            .records
            .get(record_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(record_id.to_string()))
    }

    fn put_image(&self, sha256: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let path = self.image_path(sha256);
        if path.exists() {
            return Ok(());
        }
        static NEXT: AtomicU64 = AtomicU64::new(0);
        let n = NEXT.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp{}-{n}", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
