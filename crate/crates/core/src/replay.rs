//! Append-only record/replay store of `(request-hash, response)` pairs.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Live,
    Record,
    #[default]
    Replay,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredEntry {
    hash: String,
    response: String,
}

#[derive(Debug, Default)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, String>>,
    writer: Mutex<Option<File>>,
    skipped_lines: usize,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Load `path` if it exists. Unparseable lines (such as a torn final
    /// write) are skipped and counted.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = HashMap::new();
        let mut skipped = 0;
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoredEntry>(&line) {
                    Ok(e) => {
                        entries.insert(e.hash, e.response);
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
        Ok(ReplayStore {
            path: Some(path.to_owned()),
            entries: RwLock::new(entries),
            writer: Mutex::new(None),
            skipped_lines: skipped,
        })
    }

    pub fn get(&self, hash: &str) -> Option<String> {
        self.entries.read().expect("store lock").get(hash).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    /// Persist one entry as a single newline-terminated write.
    pub fn append(&self, hash: &str, response: &str) -> io::Result<()> {
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&StoredEntry {
                hash: hash.to_owned(),
                response: response.to_owned(),
            })
            .map_err(io::Error::other)?;
            line.push('\n');
            let mut w = self.writer.lock().expect("writer lock");
            if w.is_none() {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                *w = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let f = w.as_mut().expect("opened above");
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries
            .write()
            .expect("store lock")
            .insert(hash.to_owned(), response.to_owned());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_then_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let s = ReplayStore::open(&path).unwrap();
        s.append("h1", "one\ntwo").unwrap();
        s.append("h2", "three").unwrap();
        drop(s);
        // torn tail
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"hash\":\"h3\",\"resp").unwrap();
        let s = ReplayStore::open(&path).unwrap();
        assert_eq!(s.get("h1").as_deref(), Some("one\ntwo"));
        assert_eq!(s.get("h2").as_deref(), Some("three"));
        assert_eq!(s.get("h3"), None);
        assert_eq!(s.skipped_lines(), 1);
    }
}
