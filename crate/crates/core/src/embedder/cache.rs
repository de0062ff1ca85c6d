use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::error::{Error, Result};

/// One line of the vector cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub key: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

/// Append-only vector store keyed by text content hash. Values are written
/// in shortest round-trip decimal form, so reloads are bit-exact.
pub struct VectorCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, EmbeddingVector>>,
    writer: Option<Mutex<File>>,
}

impl VectorCache {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<VectorRecord>(&line) {
                    Ok(rec) if rec.values.len() == rec.dim => {
                        entries.insert(rec.key, EmbeddingVector(rec.values));
                    }
                    Ok(rec) => log::warn!(
                        "{}:{}: vector {} declares dim {} but has {} values; skipped",
                        path.display(),
                        idx + 1,
                        rec.key,
                        rec.dim,
                        rec.values.len()
                    ),
                    Err(e) => log::warn!(
                        "{}:{}: skipping corrupt vector cache line: {e}",
                        path.display(),
                        idx + 1
                    ),
                }
            }
        }
        let writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(VectorCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(writer)),
        })
    }

    /// A cache that is never written to disk.
    pub fn in_memory() -> Self {
        VectorCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: None,
        }
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingVector> {
        self.entries
            .read()
            .expect("vector cache lock poisoned")
            .get(key)
            .cloned()
    }

    pub fn put(&self, key: &str, vector: &EmbeddingVector) -> Result<()> {
        if let (Some(writer), Some(path)) = (&self.writer, &self.path) {
            let rec = VectorRecord {
                key: key.to_string(),
                dim: vector.dim(),
                values: vector.0.clone(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::invalid(e.to_string()))?;
            let mut w = writer.lock().expect("vector cache writer poisoned");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        self.entries
            .write()
            .expect("vector cache lock poisoned")
            .insert(key.to_string(), vector.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries
            .read()
            .expect("vector cache lock poisoned")
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
