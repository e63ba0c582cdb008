//! Minimal embedded key-value store: an append-only log with an in-memory
//! ordered index, rebuilt on open.
//!
//! Keys are ordered bytes, so composite keys like `OBS:<id>:<datetime>` give
//! the same temporal-grouping access pattern a wide-column store would,
//! without a cluster dependency. A put that does not change the stored value
//! writes nothing, which makes every upsert idempotent at the log level.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};

use thiserror::Error;

const LOG_FILE: &str = "kv.log";

#[derive(Debug, Error)]
pub enum KvError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub struct Kv {
    path: PathBuf,
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    log: BufWriter<File>,
}

impl Kv {
    /// Open (or create) a store under `dir`, replaying the log into memory.
    /// A torn record at the tail is dropped, not fatal.
    pub fn open(dir: &Path) -> Result<Self, KvError> {
        let io_err = |source| KvError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io_err)?;
        let path = dir.join(LOG_FILE);
        let mut map = BTreeMap::new();
        if path.exists() {
            let mut data = Vec::new();
            File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut data))
                .map_err(io_err)?;
            let mut pos = 0usize;
            while pos + 8 <= data.len() {
                let klen = u32::from_le_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
                let vlen = u32::from_le_bytes(data[pos + 4..pos + 8].try_into().unwrap()) as usize;
                let end = pos + 8 + klen + vlen;
                if end > data.len() {
                    break; // torn tail
                }
                let key = data[pos + 8..pos + 8 + klen].to_vec();
                let value = data[pos + 8 + klen..end].to_vec();
                map.insert(key, value);
                pos = end;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(Kv {
            path,
            map,
            log: BufWriter::new(file),
        })
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(|v| v.as_slice())
    }

    /// Insert or update. Returns true when the stored value actually changed.
    pub fn put(&mut self, key: &[u8], value: &[u8]) -> Result<bool, KvError> {
        if self.map.get(key).is_some_and(|v| v == value) {
            return Ok(false);
        }
        let mut frame = Vec::with_capacity(8 + key.len() + value.len());
        frame.extend_from_slice(&(key.len() as u32).to_le_bytes());
        frame.extend_from_slice(&(value.len() as u32).to_le_bytes());
        frame.extend_from_slice(key);
        frame.extend_from_slice(value);
        self.log.write_all(&frame).map_err(|source| KvError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.map.insert(key.to_vec(), value.to_vec());
        Ok(true)
    }

    /// All pairs whose key starts with `prefix`, in key order.
    pub fn scan_prefix<'a>(
        &'a self,
        prefix: &'a [u8],
    ) -> impl Iterator<Item = (&'a [u8], &'a [u8])> + 'a {
        self.map
            .range::<[u8], _>((Bound::Included(prefix), Bound::Unbounded))
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn flush(&mut self) -> Result<(), KvError> {
        self.log.flush().map_err(|source| KvError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

impl Drop for Kv {
    fn drop(&mut self) {
        let _ = self.log.flush();
    }
}
