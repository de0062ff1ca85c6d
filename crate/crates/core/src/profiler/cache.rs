use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::TemporalProfiles;
use crate::error::{Error, Result};

type Key = (String, String);

/// Append-only profile store keyed by `(user_id, prompt_fingerprint)`.
///
/// Reads are served from memory; writes append one line under a single lock.
/// On reopen, later lines for the same key replace earlier ones.
pub struct ProfileCache {
    path: PathBuf,
    entries: RwLock<HashMap<Key, TemporalProfiles>>,
    writer: Mutex<File>,
}

impl ProfileCache {
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
                match serde_json::from_str::<TemporalProfiles>(&line) {
                    Ok(p) => {
                        entries.insert((p.user_id.clone(), p.prompt_fingerprint.clone()), p);
                    }
                    Err(e) => log::warn!(
                        "{}:{}: skipping corrupt profile cache line: {e}",
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
        Ok(ProfileCache {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn get(&self, user_id: &str, fingerprint: &str) -> Option<TemporalProfiles> {
        self.entries
            .read()
            .expect("profile cache lock poisoned")
            .get(&(user_id.to_string(), fingerprint.to_string()))
            .cloned()
    }

    pub fn put(&self, profiles: &TemporalProfiles) -> Result<()> {
        let line = serde_json::to_string(profiles).map_err(|e| Error::invalid(e.to_string()))?;
        {
            let mut w = self.writer.lock().expect("profile cache writer poisoned");
            writeln!(w, "{line}").map_err(|e| Error::io(&self.path, e))?;
            w.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        self.entries
            .write()
            .expect("profile cache lock poisoned")
            .insert(
                (
                    profiles.user_id.clone(),
                    profiles.prompt_fingerprint.clone(),
                ),
                profiles.clone(),
            );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries
            .read()
            .expect("profile cache lock poisoned")
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::ProfileSource;

    fn record(user: &str, text: &str) -> TemporalProfiles {
        TemporalProfiles {
            user_id: user.into(),
            prompt_fingerprint: "fp".into(),
            short_text: text.into(),
            long_text: text.into(),
            general_text: None,
            source: ProfileSource::Stub,
        }
    }

    #[test]
    fn put_get_and_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ProfileCache::open(&path).unwrap();
        assert!(cache.get("u", "fp").is_none());
        cache.put(&record("u", "first")).unwrap();
        assert_eq!(cache.get("u", "fp"), Some(record("u", "first")));
        cache.put(&record("u", "second")).unwrap();
        assert_eq!(cache.len(), 1);
        drop(cache);

        let reopened = ProfileCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.get("u", "fp").unwrap().short_text, "second");
    }

    #[test]
    fn corrupt_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let good = serde_json::to_string(&record("u", "ok")).unwrap();
        std::fs::write(&path, format!("{{broken\n{good}\n")).unwrap();
        let cache = ProfileCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get("u", "fp").unwrap().short_text, "ok");
    }
}
