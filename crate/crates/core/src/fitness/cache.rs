use super::{FitnessRecord, Source};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    record: FitnessRecord,
}

/// Evaluation cache keyed by a content hash.
///
/// Reads are concurrent; writes are serialized and, when backed by a file,
/// appended as one JSON line per record.
#[derive(Default)]
pub struct FitnessCache {
    entries: RwLock<HashMap<String, FitnessRecord>>,
    log: Option<Mutex<File>>,
}

impl FitnessCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new records to it. A truncated
    /// final line is skipped.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Entry>(&line) {
                    Ok(e) => {
                        entries.insert(e.key, e.record);
                    }
                    Err(err) => eprintln!("warning: skipping bad cache line in {}: {err}", path.display()),
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let bytes = std::fs::read(path)?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            writeln!(file)?;
        }
        Ok(FitnessCache {
            entries: RwLock::new(entries),
            log: Some(Mutex::new(file)),
        })
    }

    /// Stored record, marked as coming from the cache.
    pub fn get(&self, key: &str) -> Option<FitnessRecord> {
        self.entries.read().unwrap().get(key).map(|r| FitnessRecord {
            source: Source::Cache,
            ..r.clone()
        })
    }

    pub fn insert(&self, key: &str, record: &FitnessRecord) -> io::Result<()> {
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(key) {
            return Ok(());
        }
        entries.insert(key.to_string(), record.clone());
        if let Some(log) = &self.log {
            let line = serde_json::to_string(&Entry {
                key: key.to_string(),
                record: record.clone(),
            })?;
            let mut f = log.lock().unwrap();
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
