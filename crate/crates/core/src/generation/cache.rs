//! Append-only JSONL completion cache, one file per model.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// One line of `cache/<model_id>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub prompt_id: String,
    pub model_id: String,
    pub index: u32,
    pub raw_text: String,
}

#[derive(Debug, Clone)]
pub struct CompletionCache {
    dir: PathBuf,
}

impl CompletionCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, model_id: &str) -> PathBuf {
        self.dir.join(format!("{model_id}.jsonl"))
    }

    /// All records in file order. A final line without a newline is what an
    /// interrupted write leaves behind and is skipped if it does not parse.
    pub fn load(&self, model_id: &str) -> Result<Vec<CacheRecord>, CacheError> {
        let path = self.path(model_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let complete = text.ends_with('\n');
        let lines: Vec<&str> = text.lines().collect();
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<CacheRecord>(line) {
                Ok(r) => out.push(r),
                Err(_) if !complete && i + 1 == lines.len() => {
                    log::warn!("{}: ignoring truncated final line", path.display());
                }
                Err(e) => {
                    return Err(CacheError::Corrupt {
                        path,
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Appends records, first dropping any partial line left by an
    /// interrupted write.
    pub fn append(&self, model_id: &str, records: &[CacheRecord]) -> Result<(), CacheError> {
        let path = self.path(model_id);
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(&self.dir).map_err(|source| CacheError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        repair_tail(&mut file).map_err(io_err)?;
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("cache record serializes"));
            buf.push('\n');
        }
        file.write_all(buf.as_bytes()).map_err(io_err)?;
        file.flush().map_err(io_err)
    }

    /// Rewrites the file sorted by `(prompt_id, index)` with duplicates
    /// removed (first occurrence wins). Returns the surviving records.
    pub fn compact(&self, model_id: &str) -> Result<Vec<CacheRecord>, CacheError> {
        let mut unique: BTreeMap<(String, u32), CacheRecord> = BTreeMap::new();
        for r in self.load(model_id)? {
            unique.entry((r.prompt_id.clone(), r.index)).or_insert(r);
        }
        let records: Vec<CacheRecord> = unique.into_values().collect();
        if records.is_empty() && !self.path(model_id).exists() {
            return Ok(records);
        }
        let path = self.path(model_id);
        let tmp = path.with_extension("jsonl.tmp");
        let mut buf = String::new();
        for r in &records {
            buf.push_str(&serde_json::to_string(r).expect("cache record serializes"));
            buf.push('\n');
        }
        fs::write(&tmp, buf).map_err(|source| CacheError::Io {
            path: tmp.clone(),
            source,
        })?;
        fs::rename(&tmp, &path).map_err(|source| CacheError::Io { path, source })?;
        Ok(records)
    }
}

fn repair_tail(file: &mut File) -> io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::Start(0))?;
    let mut contents = Vec::with_capacity(len as usize);
    file.read_to_end(&mut contents)?;
    if contents.last() == Some(&b'\n') {
        return Ok(());
    }
    let keep = contents
        .iter()
        .rposition(|&b| b == b'\n')
        .map_or(0, |p| p + 1);
    file.set_len(keep as u64)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: &str, i: u32, t: &str) -> CacheRecord {
        CacheRecord {
            prompt_id: p.into(),
            model_id: "m".into(),
            index: i,
            raw_text: t.into(),
        }
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::new(dir.path().join("cache"));
        assert!(cache.load("m").unwrap().is_empty());
        assert!(cache.compact("m").unwrap().is_empty());
    }

    #[test]
    fn truncated_tail_is_skipped_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::new(dir.path());
        cache.append("m", &[rec("a", 0, " x.")]).unwrap();
        let mut f = OpenOptions::new()
            .append(true)
            .open(cache.path("m"))
            .unwrap();
        f.write_all(br#"{"prompt_id":"a","model_id":"m","ind"#)
            .unwrap();
        drop(f);
        assert_eq!(cache.load("m").unwrap(), vec![rec("a", 0, " x.")]);
        cache.append("m", &[rec("a", 1, " y.")]).unwrap();
        assert_eq!(
            cache.load("m").unwrap(),
            vec![rec("a", 0, " x."), rec("a", 1, " y.")]
        );
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::new(dir.path());
        fs::write(cache.path("m"), "garbage\n").unwrap();
        assert!(matches!(
            cache.load("m"),
            Err(CacheError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn compact_sorts_and_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        let cache = CompletionCache::new(dir.path());
        cache
            .append(
                "m",
                &[
                    rec("b", 0, "1"),
                    rec("a", 1, "2"),
                    rec("a", 0, "3"),
                    rec("b", 0, "4"),
                ],
            )
            .unwrap();
        let out = cache.compact("m").unwrap();
        assert_eq!(
            out,
            vec![rec("a", 0, "3"), rec("a", 1, "2"), rec("b", 0, "1")]
        );
        assert_eq!(cache.load("m").unwrap(), out);
    }
}
