//! End-to-end pipeline orchestration: filter -> extract -> load, plus the
//! query-side commands. Each build stage records a fingerprint of its inputs
//! in the run directory so re-running it is a no-op unless something it
//! depends on actually changed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::cdx::{
    self, apply_filters, default_rule_chain, parse_rule_chain, CdxError, CdxRecord, FilterRule,
};
use crate::extract::{
    self, parse_batch_line, plan_partitions, ExtractError, ExtractionSource, LinkRecord,
};
use crate::store::{fragments_by_checksum, GraphStore, ObservationEntry, StoreError};
use crate::uri_id::id_of;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Cdx(#[from] CdxError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("malformed {file} line {line}: {text:?}")]
    BadLine {
        file: String,
        line: usize,
        text: String,
    },
}

fn default_politeness() -> u64 {
    100
}
fn default_workers() -> usize {
    4
}
fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// All stage outputs, markers, and the store live under this directory.
    pub run_dir: PathBuf,
    /// Crawl index files, plain or gzip.
    pub cdx: Vec<PathBuf>,
    /// Optional filter-rule file; the default chain applies when absent.
    #[serde(default)]
    pub rules: Option<PathBuf>,
    /// Exactly one of `warc_root` / `replay_endpoint` must be set.
    #[serde(default)]
    pub warc_root: Option<PathBuf>,
    #[serde(default)]
    pub replay_endpoint: Option<String>,
    #[serde(default = "default_politeness")]
    pub politeness_ms: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_listen")]
    pub listen: String,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.cdx.is_empty() {
            return Err(PipelineError::Config("no cdx inputs configured".into()));
        }
        match (&self.warc_root, &self.replay_endpoint) {
            (Some(_), Some(_)) => Err(PipelineError::Config(
                "warc_root and replay_endpoint are mutually exclusive".into(),
            )),
            (None, None) => Err(PipelineError::Config(
                "one of warc_root or replay_endpoint is required".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn source(&self) -> ExtractionSource {
        match (&self.warc_root, &self.replay_endpoint) {
            (Some(root), _) => ExtractionSource::WarcCorpus { root: root.clone() },
            (_, Some(base)) => ExtractionSource::ReplayEndpoint {
                base: base.clone(),
                politeness_ms: self.politeness_ms,
            },
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.run_dir.join("store")
    }

    fn rule_chain(&self) -> Result<Vec<FilterRule>, PipelineError> {
        match &self.rules {
            None => Ok(default_rule_chain()),
            Some(path) => Ok(parse_rule_chain(&fs::read_to_string(path)?)?),
        }
    }
}

fn sha1_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha1::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fingerprint of a stage's inputs: hash of each part's hash, order-sensitive.
fn fingerprint(parts: &[Vec<u8>]) -> String {
    let mut hasher = Sha1::new();
    for part in parts {
        hasher.update(sha1_hex(part).as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    /// Inputs unchanged since the recorded marker; outputs left as-is.
    Skipped,
}

struct Markers {
    dir: PathBuf,
}

impl Markers {
    fn new(run_dir: &Path) -> Result<Self, PipelineError> {
        let dir = run_dir.join("markers");
        fs::create_dir_all(&dir)?;
        Ok(Markers { dir })
    }

    fn up_to_date(&self, stage: &str, fp: &str, outputs: &[PathBuf]) -> bool {
        let recorded = fs::read_to_string(self.dir.join(stage)).unwrap_or_default();
        recorded.trim() == fp && outputs.iter().all(|p| p.exists())
    }

    fn record(&self, stage: &str, fp: &str) -> Result<(), PipelineError> {
        fs::write(self.dir.join(stage), fp)?;
        Ok(())
    }
}

fn read_optional(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_default()
}

/// Stage 1: parse the crawl indexes, apply the filter chain, and write the
/// extraction list, observation log, and filter report.
pub fn run_filter(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    fs::create_dir_all(&config.run_dir)?;
    let markers = Markers::new(&config.run_dir)?;
    let chain = config.rule_chain()?;

    let mut parts: Vec<Vec<u8>> = Vec::new();
    for path in &config.cdx {
        parts.push(fs::read(path)?);
    }
    let chain_text: String = chain.iter().map(|r| r.describe() + "\n").collect();
    parts.push(chain_text.into_bytes());
    let fp = fingerprint(&parts);

    let list_path = config.run_dir.join("extraction_list.tsv");
    let log_path = config.run_dir.join("observation_log.tsv");
    let report_path = config.run_dir.join("filter_report.txt");
    let outputs = [list_path.clone(), log_path.clone(), report_path.clone()];
    if markers.up_to_date("filter", &fp, &outputs) {
        return Ok(StageOutcome::Skipped);
    }

    let mut records: Vec<CdxRecord> = Vec::new();
    let mut skipped = 0usize;
    for path in &config.cdx {
        let parse = cdx::open_cdx(path)?;
        skipped += parse.skipped.len();
        records.extend(parse.records);
    }
    let output = apply_filters(&records, &chain);

    let mut list = fs::File::create(&list_path)?;
    for record in &output.extraction_list {
        writeln!(list, "{}", cdx::extraction_list_line(record))?;
    }
    let mut log = fs::File::create(&log_path)?;
    for obs in &output.observation_log {
        writeln!(log, "{}", cdx::observation_log_line(obs))?;
    }
    let mut report = output.report.render_table();
    if skipped > 0 {
        report.push_str(&format!("malformed index lines skipped: {skipped}\n"));
    }
    fs::write(&report_path, report)?;
    markers.record("filter", &fp)?;
    Ok(StageOutcome::Ran)
}

fn parse_extraction_list(path: &Path) -> Result<Vec<CdxRecord>, PipelineError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = || PipelineError::BadLine {
            file: path.display().to_string(),
            line: i + 1,
            text: line.to_string(),
        };
        if fields.len() != 6 {
            return Err(bad());
        }
        records.push(CdxRecord {
            urlkey: fields[0].to_string(),
            timestamp: fields[1].to_string(),
            original_uri: fields[2].to_string(),
            mimetype: String::new(),
            status: Some(200),
            digest: (fields[3] != "-").then(|| fields[3].to_string()),
            redirect: "-".into(),
            meta: "-".into(),
            offset: fields[4].parse().map_err(|_| bad())?,
            warc_file: fields[5].to_string(),
            length: None,
        });
    }
    Ok(records)
}

/// Stage 2: pull each listed capture from the configured source and write one
/// link batch file per worker partition.
pub fn run_extract(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let markers = Markers::new(&config.run_dir)?;
    let list_path = config.run_dir.join("extraction_list.tsv");
    let source = config.source();
    let fp = fingerprint(&[
        read_optional(&list_path),
        format!("{source:?}|workers={}", config.workers).into_bytes(),
    ]);
    let outputs: Vec<PathBuf> = (0..config.workers)
        .map(|i| config.run_dir.join(format!("links_{i:03}.tsv")))
        .collect();
    if markers.up_to_date("extract", &fp, &outputs) {
        return Ok(StageOutcome::Skipped);
    }

    let extraction_list = parse_extraction_list(&list_path)?;
    let plan = plan_partitions(&extraction_list, config.workers.max(1));
    let run = extract::run_extraction(&source, &extraction_list, &plan)?;

    for (i, path) in outputs.iter().enumerate() {
        let mut file = fs::File::create(path)?;
        if let Some(batch) = run.batches.iter().find(|b| b.partition == i) {
            for record in &batch.records {
                writeln!(file, "{}", extract::batch_line(record))?;
            }
        }
    }
    let mut report = String::new();
    report.push_str(&format!(
        "records processed: {}\nnon-html skipped: {}\ntotal seconds: {:.3}\n",
        run.report.records_processed, run.report.skipped_non_html, run.report.total_secs
    ));
    for (i, secs) in run.report.per_partition_secs.iter().enumerate() {
        report.push_str(&format!("partition {i}: {secs:.3}s\n"));
    }
    for failure in &run.report.failures {
        report.push_str(&format!("failure: {failure}\n"));
    }
    fs::write(config.run_dir.join("extraction_report.txt"), report)?;
    markers.record("extract", &fp)?;
    Ok(StageOutcome::Ran)
}

/// Stage 3: load identities, observations, and content outlink sets into the
/// store, then materialize the inlink index. Upserts are idempotent, so
/// loading incrementally grown inputs converges to the same store as a fresh
/// batch load.
pub fn run_load(config: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let markers = Markers::new(&config.run_dir)?;
    let list_path = config.run_dir.join("extraction_list.tsv");
    let log_path = config.run_dir.join("observation_log.tsv");
    let mut parts = vec![read_optional(&list_path), read_optional(&log_path)];
    let batch_paths: Vec<PathBuf> = (0..config.workers)
        .map(|i| config.run_dir.join(format!("links_{i:03}.tsv")))
        .collect();
    for path in &batch_paths {
        parts.push(read_optional(path));
    }
    let fp = fingerprint(&parts);
    if markers.up_to_date("load", &fp, &[config.store_dir().join("kv.log")]) {
        return Ok(StageOutcome::Skipped);
    }

    let store = GraphStore::open(&config.store_dir())?;
    load_into_store(config, &store)?;
    store.flush()?;
    markers.record("load", &fp)?;
    Ok(StageOutcome::Ran)
}

pub fn load_into_store(config: &PipelineConfig, store: &GraphStore) -> Result<(), PipelineError> {
    let list_path = config.run_dir.join("extraction_list.tsv");
    let log_path = config.run_dir.join("observation_log.tsv");

    // identities and checksums of captured sources
    let extraction_list = parse_extraction_list(&list_path)?;
    let mut checksum_of: BTreeMap<(String, String), String> = BTreeMap::new();
    for record in &extraction_list {
        if let Ok((surt, id)) = id_of(&record.original_uri) {
            store.put_id(id, &surt, &record.original_uri)?;
        }
        if let Some(digest) = &record.digest {
            checksum_of.insert(
                (record.urlkey.clone(), record.timestamp.clone()),
                digest.clone(),
            );
        }
    }

    // observations: every successful capture, keyed by source id and datetime
    let log_text = fs::read_to_string(&log_path)?;
    for (i, line) in log_text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(PipelineError::BadLine {
                file: log_path.display().to_string(),
                line: i + 1,
                text: line.to_string(),
            });
        }
        let (urlkey, timestamp, digest) = (fields[0], fields[1], fields[2]);
        if digest == "-" {
            continue;
        }
        let Ok((_, source_id)) = id_of(urlkey) else {
            continue;
        };
        store.upsert_observation(&ObservationEntry {
            source_id,
            datetime: timestamp.to_string(),
            checksum: digest.to_string(),
        })?;
    }

    // content vertices: outlink fragments grouped by payload checksum
    let mut link_records: Vec<LinkRecord> = Vec::new();
    for i in 0..config.workers {
        let path = config.run_dir.join(format!("links_{i:03}.tsv"));
        if !path.exists() {
            continue;
        }
        for line in fs::read_to_string(&path)?.lines() {
            if let Some(record) = parse_batch_line(line) {
                link_records.push(record);
            }
        }
    }
    for record in &link_records {
        if let Ok((surt, id)) = id_of(&record.outlink_uri) {
            store.put_id(id, &surt, &record.outlink_uri)?;
        }
    }
    for (checksum, triples) in fragments_by_checksum(&link_records) {
        store.upsert_content(&checksum, &triples)?;
    }

    let (_, dangling) = store.materialize_inlinks()?;
    if !dangling.is_empty() {
        fs::write(
            config.run_dir.join("dangling_checksums.txt"),
            dangling.join("\n") + "\n",
        )?;
    }
    Ok(())
}

/// filter -> extract -> load in sequence; each stage may individually skip.
pub fn run_all(config: &PipelineConfig) -> Result<[StageOutcome; 3], PipelineError> {
    Ok([run_filter(config)?, run_extract(config)?, run_load(config)?])
}
