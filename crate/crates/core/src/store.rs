//! Append-only, namespaced key/value store backed by JSONL segment files.
//!
//! Layout: one file per namespace, `<dir>/<slug>.jsonl`, where `slug` is the
//! namespace with unsafe characters replaced plus an 8-hex-digit hash suffix.
//! Each line is `{"ns": ..., "key": ..., "value": ...}`. Lines are only ever
//! appended; a torn final line (interrupted write) is skipped on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Line<V> {
    ns: String,
    key: String,
    value: V,
}

pub struct JsonlStore<V> {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<(String, String), V>>,
    writers: Mutex<HashMap<String, File>>,
}

pub fn segment_slug(ns: &str) -> String {
    let clean: String = ns
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .take(48)
        .collect();
    let digest = Sha256::digest(ns.as_bytes());
    format!("{clean}-{}", &hex::encode(digest)[..8])
}

impl<V: Clone + Serialize + DeserializeOwned> JsonlStore<V> {
    pub fn in_memory() -> Self {
        JsonlStore {
            dir: None,
            entries: RwLock::new(HashMap::new()),
            writers: Mutex::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) a store directory and loads every segment.
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Line<V>>(&line) {
                    Ok(l) => {
                        entries.entry((l.ns, l.key)).or_insert(l.value);
                    }
                    Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), i + 1),
                }
            }
        }
        Ok(JsonlStore {
            dir: Some(dir.to_path_buf()),
            entries: RwLock::new(entries),
            writers: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, ns: &str, key: &str) -> Option<V> {
        self.entries
            .read()
            .expect("store lock")
            .get(&(ns.to_string(), key.to_string()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts unless the key already exists; returns the stored value.
    pub fn insert(&self, ns: &str, key: &str, value: V) -> Result<V> {
        let mut writers = self.writers.lock().expect("writer lock");
        if let Some(existing) = self.get(ns, key) {
            return Ok(existing);
        }
        if let Some(dir) = &self.dir {
            let slug = segment_slug(ns);
            if !writers.contains_key(&slug) {
                let path = dir.join(format!("{slug}.jsonl"));
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                writers.insert(slug.clone(), f);
            }
            let f = writers.get_mut(&slug).expect("writer present");
            let mut line = serde_json::to_string(&Line {
                ns: ns.to_string(),
                key: key.to_string(),
                value: value.clone(),
            })?;
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(dir, e))?;
        }
        self.entries
            .write()
            .expect("store lock")
            .insert((ns.to_string(), key.to_string()), value.clone());
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s: JsonlStore<Vec<f64>> = JsonlStore::open(dir.path()).unwrap();
            s.insert("hash/8", "abc", vec![1.0, 2.0]).unwrap();
            s.insert("hash/8", "abc", vec![9.0]).unwrap();
            s.insert("other model", "x", vec![3.0]).unwrap();
        }
        let s: JsonlStore<Vec<f64>> = JsonlStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("hash/8", "abc"), Some(vec![1.0, 2.0]));
        assert_eq!(s.get("other model", "x"), Some(vec![3.0]));
    }

    #[test]
    fn torn_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s: JsonlStore<String> = JsonlStore::open(dir.path()).unwrap();
            s.insert("m", "k1", "v1".into()).unwrap();
        }
        let seg = dir.path().join(format!("{}.jsonl", segment_slug("m")));
        let mut f = OpenOptions::new().append(true).open(&seg).unwrap();
        f.write_all(b"{\"ns\":\"m\",\"key\":\"k2\",\"val").unwrap();
        let s: JsonlStore<String> = JsonlStore::open(dir.path()).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn slug_is_filesystem_safe() {
        let slug = segment_slug("gpt-4o/2024 08:06");
        assert!(slug.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)));
        assert_ne!(segment_slug("a/b"), segment_slug("a:b"));
    }
}
