//! Content-centric temporal graph store.
//!
//! Persisted vertices are content checksums, so duplicate mementos (same
//! payload captured at many datetimes, or under many URIs) collapse onto one
//! outlink set. Observations map (source id, datetime) to a checksum, and the
//! property-schema view (URI -> URI edges with datetime bags) is
//! reconstructed by joining the two. Inlinks are materialized into their own
//! key family so inlink queries do not invert the graph on the fly.
//!
//! Key families:
//!   `ID:<id>`                          -> (surt, representative URI)
//!   `OBS:<source_id>:<datetime>`       -> checksum
//!   `OUT:<checksum>`                   -> sorted outlink triples
//!   `IN:<target_id>:<src_surt>:<dt>`   -> (source URI, sorted (type, text))

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::{LinkRecord, LinkType};
use crate::kv::{Kv, KvError};
use crate::uri_id::{SurtKey, UriId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("value corrupt at key {key}: {detail}")]
    Corrupt { key: String, detail: String },
    #[error(
        "checksum conflict for source {source_id} at {datetime}: stored {stored}, new {new} \
         (archives are append-only; a memento cannot change content)"
    )]
    ChecksumConflict {
        source_id: UriId,
        datetime: String,
        stored: String,
        new: String,
    },
}

/// One capture: source URI id observed at a datetime with a payload checksum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationEntry {
    pub source_id: UriId,
    pub datetime: String,
    pub checksum: String,
}

/// One member of a content vertex's outlink set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OutlinkTriple {
    pub target_id: UriId,
    pub link_type: LinkType,
    pub text: String,
}

/// Property-schema edge: all datetimes at which the source was observed
/// linking to the target with this (type, text).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalEdge {
    pub source_id: UriId,
    pub target_id: UriId,
    pub link_type: LinkType,
    pub text: String,
    /// ascending, no duplicates
    pub datetimes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InlinkEntry {
    pub target_id: UriId,
    pub source_uri: String,
    pub datetime: String,
    pub link_type: LinkType,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
struct IdValue {
    surt: String,
    original: String,
}

#[derive(Serialize, Deserialize, Default)]
struct OutValue {
    // (id hex, "href"|"image", text), sorted for deterministic bytes
    links: BTreeSet<(String, String, String)>,
}

#[derive(Serialize, Deserialize, Default)]
struct InValue {
    source_uri: String,
    entries: BTreeSet<(String, String)>,
}

fn id_key(id: UriId) -> Vec<u8> {
    format!("ID:{id}").into_bytes()
}

fn obs_key(source: UriId, datetime: &str) -> Vec<u8> {
    format!("OBS:{source}:{datetime}").into_bytes()
}

fn out_key(checksum: &str) -> Vec<u8> {
    format!("OUT:{checksum}").into_bytes()
}

fn in_key(target: UriId, source_surt: &str, datetime: &str) -> Vec<u8> {
    format!("IN:{target}:{source_surt}:{datetime}").into_bytes()
}

fn decode<'a, T: Deserialize<'a>>(key: &[u8], value: &'a [u8]) -> Result<T, StoreError> {
    serde_json::from_slice(value).map_err(|e| StoreError::Corrupt {
        key: String::from_utf8_lossy(key).into_owned(),
        detail: e.to_string(),
    })
}

fn in_range(datetime: &str, range: Option<(&str, &str)>) -> bool {
    match range {
        None => true,
        Some((from, to)) => datetime >= from && datetime <= to,
    }
}

pub struct GraphStore {
    kv: Mutex<Kv>,
}

impl GraphStore {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        Ok(GraphStore {
            kv: Mutex::new(Kv::open(dir)?),
        })
    }

    pub fn flush(&self) -> Result<(), StoreError> {
        Ok(self.kv.lock().unwrap().flush()?)
    }

    pub fn put_id(&self, id: UriId, surt: &SurtKey, original: &str) -> Result<(), StoreError> {
        let value = serde_json::to_vec(&IdValue {
            surt: surt.as_str().to_string(),
            original: original.to_string(),
        })
        .expect("serializable");
        self.kv.lock().unwrap().put(&id_key(id), &value)?;
        Ok(())
    }

    pub fn get_id(&self, id: UriId) -> Result<Option<(String, String)>, StoreError> {
        let kv = self.kv.lock().unwrap();
        match kv.get(&id_key(id)) {
            Some(value) => {
                let v: IdValue = decode(&id_key(id), value)?;
                Ok(Some((v.surt, v.original)))
            }
            None => Ok(None),
        }
    }

    /// Idempotent: a second identical call changes nothing. A different
    /// checksum for an existing (source, datetime) is a conflict.
    pub fn upsert_observation(&self, entry: &ObservationEntry) -> Result<(), StoreError> {
        let key = obs_key(entry.source_id, &entry.datetime);
        let mut kv = self.kv.lock().unwrap();
        if let Some(existing) = kv.get(&key) {
            if existing != entry.checksum.as_bytes() {
                return Err(StoreError::ChecksumConflict {
                    source_id: entry.source_id,
                    datetime: entry.datetime.clone(),
                    stored: String::from_utf8_lossy(existing).into_owned(),
                    new: entry.checksum.clone(),
                });
            }
            return Ok(());
        }
        kv.put(&key, entry.checksum.as_bytes())?;
        Ok(())
    }

    /// Union the fragment into the content vertex's outlink set. Re-inserting
    /// an existing triple is a no-op.
    pub fn upsert_content(
        &self,
        checksum: &str,
        fragment: &[OutlinkTriple],
    ) -> Result<(), StoreError> {
        let key = out_key(checksum);
        let mut kv = self.kv.lock().unwrap();
        let mut value: OutValue = match kv.get(&key) {
            Some(v) => decode(&key, v)?,
            None => OutValue::default(),
        };
        let before = value.links.len();
        for triple in fragment {
            value.links.insert((
                triple.target_id.to_hex(),
                triple.link_type.as_str().to_string(),
                triple.text.clone(),
            ));
        }
        if before != value.links.len() || kv.get(&key).is_none() {
            kv.put(&key, &serde_json::to_vec(&value).expect("serializable"))?;
        }
        Ok(())
    }

    pub fn content(&self, checksum: &str) -> Result<Option<Vec<OutlinkTriple>>, StoreError> {
        let key = out_key(checksum);
        let kv = self.kv.lock().unwrap();
        match kv.get(&key) {
            Some(v) => {
                let value: OutValue = decode(&key, v)?;
                Ok(Some(decode_triples(&key, &value)?))
            }
            None => Ok(None),
        }
    }

    pub fn observations(&self) -> Result<Vec<ObservationEntry>, StoreError> {
        let kv = self.kv.lock().unwrap();
        let mut out = Vec::new();
        for (key, value) in kv.scan_prefix(b"OBS:") {
            let text = std::str::from_utf8(key).map_err(|_| StoreError::Corrupt {
                key: String::from_utf8_lossy(key).into_owned(),
                detail: "non-UTF8 key".into(),
            })?;
            let mut parts = text.splitn(3, ':');
            let (_, id_hex, datetime) = (parts.next(), parts.next(), parts.next());
            let (Some(id_hex), Some(datetime)) = (id_hex, datetime) else {
                continue;
            };
            let Some(source_id) = UriId::from_hex(id_hex) else {
                continue;
            };
            out.push(ObservationEntry {
                source_id,
                datetime: datetime.to_string(),
                checksum: String::from_utf8_lossy(value).into_owned(),
            });
        }
        Ok(out)
    }

    /// Invert (observations join content) into the IN family. Rerunnable;
    /// returns the number of entries actually written plus the checksums
    /// referenced by observations but missing from the content family.
    pub fn materialize_inlinks(&self) -> Result<(usize, Vec<String>), StoreError> {
        let observations = self.observations()?;
        let mut written = 0usize;
        let mut dangling = BTreeSet::new();
        for obs in observations {
            let (source_surt, source_uri) = match self.get_id(obs.source_id)? {
                Some(pair) => pair,
                None => continue,
            };
            let Some(triples) = self.content(&obs.checksum)? else {
                dangling.insert(obs.checksum.clone());
                continue;
            };
            // group per target so one key carries all (type, text) pairs
            let mut per_target: BTreeMap<UriId, BTreeSet<(String, String)>> = BTreeMap::new();
            for t in triples {
                per_target
                    .entry(t.target_id)
                    .or_default()
                    .insert((t.link_type.as_str().to_string(), t.text));
            }
            let mut kv = self.kv.lock().unwrap();
            for (target, entries) in per_target {
                let key = in_key(target, &source_surt, &obs.datetime);
                let mut value: InValue = match kv.get(&key) {
                    Some(v) => decode(&key, v)?,
                    None => InValue {
                        source_uri: source_uri.clone(),
                        ..Default::default()
                    },
                };
                let before = value.entries.len();
                value.entries.extend(entries);
                if before != value.entries.len() || kv.get(&key).is_none() {
                    if kv.put(&key, &serde_json::to_vec(&value).expect("serializable"))? {
                        written += 1;
                    }
                }
            }
        }
        Ok((written, dangling.into_iter().collect()))
    }

    /// Property-schema outlink view for one source, optional inclusive
    /// datetime range. Datetime sets are trimmed to the range; results sorted
    /// by target SURT, then (type, text).
    pub fn get_outlinks(
        &self,
        source_id: UriId,
        range: Option<(&str, &str)>,
    ) -> Result<Vec<TemporalEdge>, StoreError> {
        let observations: Vec<(String, String)> = {
            let kv = self.kv.lock().unwrap();
            let prefix = format!("OBS:{source_id}:").into_bytes();
            kv.scan_prefix(&prefix)
                .map(|(k, v)| {
                    let datetime = String::from_utf8_lossy(&k[prefix.len()..]).into_owned();
                    (datetime, String::from_utf8_lossy(v).into_owned())
                })
                .collect()
        };
        // (target, type, text) -> datetime set
        let mut edges: BTreeMap<(UriId, LinkType, String), BTreeSet<String>> = BTreeMap::new();
        for (datetime, checksum) in observations {
            if !in_range(&datetime, range) {
                continue;
            }
            let Some(triples) = self.content(&checksum)? else {
                continue;
            };
            for t in triples {
                edges
                    .entry((t.target_id, t.link_type, t.text))
                    .or_default()
                    .insert(datetime.clone());
            }
        }
        let mut out: Vec<TemporalEdge> = edges
            .into_iter()
            .map(|((target_id, link_type, text), datetimes)| TemporalEdge {
                source_id,
                target_id,
                link_type,
                text,
                datetimes: datetimes.into_iter().collect(),
            })
            .collect();
        let surt_of = |id: UriId| {
            self.get_id(id)
                .ok()
                .flatten()
                .map(|(s, _)| s)
                .unwrap_or_else(|| id.to_hex())
        };
        out.sort_by_key(|e| (surt_of(e.target_id), e.link_type, e.text.clone()));
        Ok(out)
    }

    /// Materialized inlink entries for one target, optional inclusive range,
    /// sorted by source SURT then datetime.
    pub fn get_inlinks(
        &self,
        target_id: UriId,
        range: Option<(&str, &str)>,
    ) -> Result<Vec<InlinkEntry>, StoreError> {
        let kv = self.kv.lock().unwrap();
        let prefix = format!("IN:{target_id}:").into_bytes();
        let mut out = Vec::new();
        for (key, value) in kv.scan_prefix(&prefix) {
            let tail = String::from_utf8_lossy(&key[prefix.len()..]).into_owned();
            // datetime is the fixed-width suffix; the SURT may contain ':'
            let Some((_surt, datetime)) = tail.rsplit_once(':') else {
                continue;
            };
            if !in_range(datetime, range) {
                continue;
            }
            let v: InValue = decode(key, value)?;
            for (type_str, text) in &v.entries {
                let Some(link_type) = LinkType::parse(type_str) else {
                    continue;
                };
                out.push(InlinkEntry {
                    target_id,
                    source_uri: v.source_uri.clone(),
                    datetime: datetime.to_string(),
                    link_type,
                    text: text.clone(),
                });
            }
        }
        Ok(out)
    }

    /// All ids known to the ID family.
    pub fn ids(&self) -> Result<Vec<(UriId, String, String)>, StoreError> {
        let kv = self.kv.lock().unwrap();
        let mut out = Vec::new();
        for (key, value) in kv.scan_prefix(b"ID:") {
            let hex = &key[3..];
            let Some(id) = std::str::from_utf8(hex).ok().and_then(UriId::from_hex) else {
                continue;
            };
            let v: IdValue = decode(key, value)?;
            out.push((id, v.surt, v.original));
        }
        Ok(out)
    }

    /// Deterministic property-schema export: sorted tab-separated quints
    /// (source surt, target surt, datetime, type, text).
    pub fn export_quads(&self) -> Result<Vec<String>, StoreError> {
        let mut surt_by_id: BTreeMap<UriId, String> = BTreeMap::new();
        for (id, surt, _) in self.ids()? {
            surt_by_id.insert(id, surt);
        }
        let mut lines = BTreeSet::new();
        for obs in self.observations()? {
            let Some(source_surt) = surt_by_id.get(&obs.source_id) else {
                continue;
            };
            let Some(triples) = self.content(&obs.checksum)? else {
                continue;
            };
            for t in triples {
                let target_surt = surt_by_id
                    .get(&t.target_id)
                    .cloned()
                    .unwrap_or_else(|| t.target_id.to_hex());
                lines.insert(format!(
                    "{}\t{}\t{}\t{}\t{}",
                    source_surt,
                    target_surt,
                    obs.datetime,
                    t.link_type,
                    t.text.replace('\t', "\\t").replace('\n', "\\n")
                ));
            }
        }
        Ok(lines.into_iter().collect())
    }

    pub fn key_count(&self) -> usize {
        self.kv.lock().unwrap().len()
    }
}

fn decode_triples(key: &[u8], value: &OutValue) -> Result<Vec<OutlinkTriple>, StoreError> {
    let mut out = Vec::with_capacity(value.links.len());
    for (id_hex, type_str, text) in &value.links {
        let (Some(target_id), Some(link_type)) =
            (UriId::from_hex(id_hex), LinkType::parse(type_str))
        else {
            return Err(StoreError::Corrupt {
                key: String::from_utf8_lossy(key).into_owned(),
                detail: format!("bad triple ({id_hex}, {type_str})"),
            });
        };
        out.push(OutlinkTriple {
            target_id,
            link_type,
            text: text.clone(),
        });
    }
    Ok(out)
}

/// Turn extractor link records into content-vertex fragments grouped by
/// document checksum.
pub fn fragments_by_checksum(records: &[LinkRecord]) -> BTreeMap<String, Vec<OutlinkTriple>> {
    let mut out: BTreeMap<String, Vec<OutlinkTriple>> = BTreeMap::new();
    for r in records {
        out.entry(r.doc_checksum.clone()).or_default().push(OutlinkTriple {
            target_id: r.outlink_id,
            link_type: r.link_type,
            text: r.text.clone(),
        });
    }
    out
}
