//! Outlink extraction from memento HTML, plus partition planning so each
//! WARC file is touched by exactly one worker.
//!
//! Extraction reads either the WARC corpus directly or a remote
//! archive-replay endpoint; both sources must yield the same link set for the
//! same content. Replay-sourced HTML carries the archive's rewriting prefix
//! (`<replay-root>/<14-digit-timestamp>/<original>`) which is stripped back
//! to the original URI before resolution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use scraper::{Html, Selector};
use thiserror::Error;
use url::Url;

use crate::cdx::CdxRecord;
use crate::uri_id::{canonicalize, uri_id, UriId};
use crate::warc::{self, WarcLocator};

pub const USER_AGENT: &str = "arclink-extractor/0.1 (+temporal web graph builder)";

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("invalid replay base URL: {0}")]
    BadReplayBase(String),
    #[error("worker panicked")]
    WorkerPanic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkType {
    Href,
    Image,
}

impl LinkType {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkType::Href => "href",
            LinkType::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "href" => Some(LinkType::Href),
            "image" => Some(LinkType::Image),
            _ => None,
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One extracted edge observation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkRecord {
    /// base32 SHA-1 of the source document payload
    pub doc_checksum: String,
    pub outlink_uri: String,
    pub outlink_id: UriId,
    pub link_type: LinkType,
    /// anchor text or img alt, whitespace-collapsed, possibly empty
    pub text: String,
}

fn escape_text(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some('\\') => out.push('\\'),
                Some(other) => out.push(other),
                None => {}
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Tab-separated batch line: checksum, outlink URI, 32-hex id, type, text.
pub fn batch_line(record: &LinkRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        record.doc_checksum,
        record.outlink_uri,
        record.outlink_id,
        record.link_type,
        escape_text(&record.text)
    )
}

pub fn parse_batch_line(line: &str) -> Option<LinkRecord> {
    let mut fields = line.splitn(5, '\t');
    Some(LinkRecord {
        doc_checksum: fields.next()?.to_string(),
        outlink_uri: fields.next()?.to_string(),
        outlink_id: UriId::from_hex(fields.next()?)?,
        link_type: LinkType::parse(fields.next()?)?,
        text: unescape_text(fields.next().unwrap_or("")),
    })
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strip an archive rewriting prefix, if present, back to the original URI.
fn strip_replay_prefix(raw: &str, replay_root: &str) -> String {
    let tails: &[&str] = &[replay_root, replay_root.trim_start_matches("http://")];
    let mut candidates: Vec<String> = tails.iter().map(|t| t.to_string()).collect();
    // server-relative rewritten links keep only the path of the replay root
    if let Ok(root) = Url::parse(replay_root) {
        candidates.push(root.path().to_string());
    }
    for prefix in candidates {
        if prefix.is_empty() || !raw.starts_with(prefix.as_str()) {
            continue;
        }
        let rest = &raw[prefix.len()..];
        let rest = rest.strip_prefix('/').unwrap_or(rest);
        let (ts, original) = match rest.split_once('/') {
            Some(pair) => pair,
            None => continue,
        };
        if ts.len() == 14 && ts.bytes().all(|b| b.is_ascii_digit()) && !original.is_empty() {
            return original.to_string();
        }
    }
    raw.to_string()
}

#[derive(Debug, Default)]
pub struct ExtractedLinks {
    pub records: Vec<LinkRecord>,
    /// set when the body was not HTML and extraction was skipped
    pub skipped_non_html: bool,
    /// hrefs that could not be resolved or canonicalized (mailto:, javascript:, ...)
    pub dropped: usize,
}

fn looks_like_html(content_type: &str) -> bool {
    content_type.is_empty()
        || content_type.contains("html")
        || content_type.contains("xhtml")
}

/// Extract one LinkRecord per `<a href>` and per `<img src>` from memento
/// HTML. Relative URLs resolve against `page_uri`, honoring `<base href>`.
/// Tag soup is parsed tolerantly; a non-HTML body yields an empty set with
/// the skip flag raised.
pub fn extract_links(
    body: &[u8],
    content_type: &str,
    page_uri: &str,
    doc_checksum: &str,
    replay_root: Option<&str>,
) -> ExtractedLinks {
    let mut out = ExtractedLinks::default();
    if !looks_like_html(content_type) {
        out.skipped_non_html = true;
        return out;
    }
    let html = String::from_utf8_lossy(body);
    let document = Html::parse_document(&html);

    let base_sel = Selector::parse("base[href]").unwrap();
    let anchor_sel = Selector::parse("a[href]").unwrap();
    let img_sel = Selector::parse("img[src]").unwrap();

    let base_url = document
        .select(&base_sel)
        .next()
        .and_then(|e| e.value().attr("href"))
        .and_then(|href| {
            let href = replay_root.map_or(href.to_string(), |r| strip_replay_prefix(href, r));
            resolve(page_uri, &href)
        })
        .unwrap_or_else(|| page_uri.to_string());

    let mut push = |raw: &str, link_type: LinkType, text: String| {
        let raw = replay_root.map_or(raw.to_string(), |r| strip_replay_prefix(raw, r));
        let Some(resolved) = resolve(&base_url, &raw) else {
            out.dropped += 1;
            return;
        };
        match canonicalize(&resolved) {
            Ok(key) => out.records.push(LinkRecord {
                doc_checksum: doc_checksum.to_string(),
                outlink_uri: resolved,
                outlink_id: uri_id(&key),
                link_type,
                text,
            }),
            Err(_) => out.dropped += 1,
        }
    };

    for anchor in document.select(&anchor_sel) {
        let href = anchor.value().attr("href").unwrap_or_default();
        let text = collapse_whitespace(&anchor.text().collect::<String>());
        push(href, LinkType::Href, text);
    }
    for img in document.select(&img_sel) {
        let src = img.value().attr("src").unwrap_or_default();
        let alt = collapse_whitespace(img.value().attr("alt").unwrap_or_default());
        push(src, LinkType::Image, alt);
    }
    out
}

fn resolve(base: &str, raw: &str) -> Option<String> {
    if raw.is_empty() {
        return None;
    }
    if let Ok(url) = Url::parse(raw) {
        return Some(url.to_string());
    }
    Url::parse(base).ok()?.join(raw).ok().map(|u| u.to_string())
}

/// Where extraction reads page content from.
#[derive(Debug, Clone)]
pub enum ExtractionSource {
    WarcCorpus { root: PathBuf },
    ReplayEndpoint { base: String, politeness_ms: u64 },
}

impl ExtractionSource {
    pub fn validate(&self) -> Result<(), ExtractError> {
        if let ExtractionSource::ReplayEndpoint { base, .. } = self {
            Url::parse(base).map_err(|_| ExtractError::BadReplayBase(base.clone()))?;
        }
        Ok(())
    }
}

/// Assignment of extraction-list records to workers; every WARC file lands in
/// exactly one partition.
#[derive(Debug, Clone, Default)]
pub struct PartitionPlan {
    /// per partition: indices into the extraction list, in input order
    pub partitions: Vec<Vec<usize>>,
    pub file_to_partition: BTreeMap<String, usize>,
}

/// Greedy bin-packing: group records by WARC file, then assign file groups in
/// descending record count to the currently lightest partition.
pub fn plan_partitions(extraction_list: &[CdxRecord], k: usize) -> PartitionPlan {
    assert!(k >= 1, "worker count must be at least 1");
    let mut by_file: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, record) in extraction_list.iter().enumerate() {
        by_file.entry(&record.warc_file).or_default().push(i);
    }
    let mut groups: Vec<(&str, Vec<usize>)> = by_file.into_iter().collect();
    groups.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));

    let mut plan = PartitionPlan {
        partitions: vec![Vec::new(); k],
        ..Default::default()
    };
    let mut loads = vec![0usize; k];
    for (file, indices) in groups {
        let lightest = (0..k).min_by_key(|&p| (loads[p], p)).unwrap();
        loads[lightest] += indices.len();
        plan.file_to_partition.insert(file.to_string(), lightest);
        plan.partitions[lightest].extend(indices);
    }
    for partition in &mut plan.partitions {
        partition.sort_unstable();
    }
    plan
}

#[derive(Debug, Clone)]
pub struct LinkBatch {
    pub partition: usize,
    pub records: Vec<LinkRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractionReport {
    pub per_partition_secs: Vec<f64>,
    pub total_secs: f64,
    pub records_processed: usize,
    pub skipped_non_html: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Default)]
pub struct ExtractionRun {
    pub batches: Vec<LinkBatch>,
    pub report: ExtractionReport,
}

struct WorkerResult {
    partition: usize,
    records: Vec<LinkRecord>,
    secs: f64,
    processed: usize,
    skipped_non_html: usize,
    failures: Vec<String>,
}

/// Extract all partitions of the plan, one worker per partition. Workers
/// touch disjoint WARC files; replay mode serializes requests per worker with
/// the politeness delay and retries each record up to 3 times before
/// recording a failure.
pub fn run_extraction(
    source: &ExtractionSource,
    extraction_list: &[CdxRecord],
    plan: &PartitionPlan,
) -> Result<ExtractionRun, ExtractError> {
    source.validate()?;
    let start = Instant::now();
    let results: Vec<WorkerResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .partitions
            .iter()
            .enumerate()
            .map(|(p, indices)| {
                scope.spawn(move || run_partition(source, extraction_list, p, indices))
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect::<Vec<_>>()
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(|_| ExtractError::WorkerPanic)?;

    let mut run = ExtractionRun::default();
    run.report.total_secs = start.elapsed().as_secs_f64();
    for result in results {
        run.report.per_partition_secs.push(result.secs);
        run.report.records_processed += result.processed;
        run.report.skipped_non_html += result.skipped_non_html;
        run.report.failures.extend(result.failures);
        run.batches.push(LinkBatch {
            partition: result.partition,
            records: result.records,
        });
    }
    Ok(run)
}

fn run_partition(
    source: &ExtractionSource,
    extraction_list: &[CdxRecord],
    partition: usize,
    indices: &[usize],
) -> WorkerResult {
    let start = Instant::now();
    let mut result = WorkerResult {
        partition,
        records: Vec::new(),
        secs: 0.0,
        processed: 0,
        skipped_non_html: 0,
        failures: Vec::new(),
    };
    let client = match source {
        ExtractionSource::ReplayEndpoint { .. } => reqwest::blocking::Client::builder()
            .user_agent(USER_AGENT)
            .redirect(reqwest::redirect::Policy::limited(5))
            .timeout(Duration::from_secs(30))
            .build()
            .ok(),
        _ => None,
    };

    for &index in indices {
        let record = &extraction_list[index];
        match fetch_page(source, client.as_ref(), record, &mut result) {
            Some((body, content_type, replay_root)) => {
                let checksum = record
                    .digest
                    .clone()
                    .unwrap_or_else(|| warc::sha1_base32(&body));
                let extracted = extract_links(
                    &body,
                    &content_type,
                    &record.original_uri,
                    &checksum,
                    replay_root.as_deref(),
                );
                if extracted.skipped_non_html {
                    result.skipped_non_html += 1;
                }
                result.records.extend(extracted.records);
                result.processed += 1;
            }
            None => {}
        }
    }
    result.secs = start.elapsed().as_secs_f64();
    result
}

fn fetch_page(
    source: &ExtractionSource,
    client: Option<&reqwest::blocking::Client>,
    record: &CdxRecord,
    result: &mut WorkerResult,
) -> Option<(Vec<u8>, String, Option<String>)> {
    match source {
        ExtractionSource::WarcCorpus { root } => {
            let path = root.join(&record.warc_file);
            if !path.exists() {
                result.failures.push(format!(
                    "partition {}: missing WARC file {} (record {} {})",
                    result.partition, record.warc_file, record.urlkey, record.timestamp
                ));
                return None;
            }
            match warc::read_record(WarcLocator {
                warc_file: &path,
                offset: record.offset,
            }) {
                Ok(payload) => Some((payload.body, payload.content_type, None)),
                Err(err) => {
                    result
                        .failures
                        .push(format!("partition {}: {err}", result.partition));
                    None
                }
            }
        }
        ExtractionSource::ReplayEndpoint { base, politeness_ms } => {
            let client = client?;
            let url = format!(
                "{}/{}/{}",
                base.trim_end_matches('/'),
                record.timestamp,
                record.original_uri
            );
            for attempt in 0..3 {
                if *politeness_ms > 0 {
                    std::thread::sleep(Duration::from_millis(*politeness_ms));
                }
                match client.get(&url).send() {
                    Ok(resp) if resp.status().is_server_error() => {
                        if attempt == 2 {
                            result.failures.push(format!(
                                "partition {}: {} gave {} after 3 attempts",
                                result.partition,
                                url,
                                resp.status()
                            ));
                        }
                    }
                    Ok(resp) => {
                        let content_type = resp
                            .headers()
                            .get(reqwest::header::CONTENT_TYPE)
                            .and_then(|v| v.to_str().ok())
                            .unwrap_or("")
                            .to_string();
                        match resp.bytes() {
                            Ok(bytes) => {
                                return Some((bytes.to_vec(), content_type, Some(base.clone())))
                            }
                            Err(err) => {
                                if attempt == 2 {
                                    result.failures.push(format!(
                                        "partition {}: {url}: {err}",
                                        result.partition
                                    ));
                                }
                            }
                        }
                    }
                    Err(err) => {
                        if attempt == 2 {
                            result
                                .failures
                                .push(format!("partition {}: {url}: {err}", result.partition));
                        }
                    }
                }
            }
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHECKSUM: &str = "E6T72C2R6BRRKSI3IZPMRJDXTFJIRC7P";

    #[test]
    fn anchor_resolution_and_text() {
        let body = br#"<a href="/news">News</a>"#;
        let out = extract_links(body, "text/html", "http://vancouver2010.com/", CHECKSUM, None);
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.outlink_uri, "http://vancouver2010.com/news");
        assert_eq!(r.link_type, LinkType::Href);
        assert_eq!(r.text, "News");
        assert_eq!(r.outlink_id, uri_id(&canonicalize(&r.outlink_uri).unwrap()));
    }

    #[test]
    fn no_links_no_records() {
        let out = extract_links(b"<p>plain</p>", "text/html", "http://a.org/", CHECKSUM, None);
        assert!(out.records.is_empty());
        assert!(!out.skipped_non_html);
    }

    #[test]
    fn non_html_body_skipped() {
        let out = extract_links(b"%PDF-1.4", "application/pdf", "http://a.org/", CHECKSUM, None);
        assert!(out.records.is_empty());
        assert!(out.skipped_non_html);
    }

    #[test]
    fn replay_prefix_stripped_before_resolution() {
        let body =
            br#"<a href="http://replay.example/web/20100130003005/http://example.org/x">x</a>"#;
        let out = extract_links(
            body,
            "text/html",
            "http://example.org/",
            CHECKSUM,
            Some("http://replay.example/web"),
        );
        assert_eq!(out.records[0].outlink_uri, "http://example.org/x");
    }

    #[test]
    fn server_relative_replay_prefix_stripped() {
        let body = br#"<a href="/web/20100130003005/http://example.org/y">y</a>"#;
        let out = extract_links(
            body,
            "text/html",
            "http://example.org/",
            CHECKSUM,
            Some("http://replay.example/web"),
        );
        assert_eq!(out.records[0].outlink_uri, "http://example.org/y");
    }

    #[test]
    fn img_alt_and_base_href_honored() {
        let body = br#"<head><base href="http://cdn.example.org/assets/"></head>
            <img src="logo.png" alt=" the   logo ">"#;
        let out = extract_links(body, "text/html", "http://a.org/page", CHECKSUM, None);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].outlink_uri, "http://cdn.example.org/assets/logo.png");
        assert_eq!(out.records[0].link_type, LinkType::Image);
        assert_eq!(out.records[0].text, "the logo");
    }

    #[test]
    fn tag_soup_is_tolerated() {
        let body = br#"<a href="/a">one<b>two</a><a href=/b>three"#;
        let out = extract_links(body, "text/html", "http://a.org/", CHECKSUM, None);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].text, "onetwo");
    }

    #[test]
    fn javascript_and_mailto_links_dropped() {
        let body = br#"<a href="javascript:void(0)">j</a><a href="mailto:a@b.c">m</a><a href="/ok">k</a>"#;
        let out = extract_links(body, "text/html", "http://a.org/", CHECKSUM, None);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.dropped, 2);
    }

    #[test]
    fn batch_line_roundtrip_with_escapes() {
        let record = LinkRecord {
            doc_checksum: CHECKSUM.into(),
            outlink_uri: "http://a.org/x".into(),
            outlink_id: UriId(0xdeadbeef),
            link_type: LinkType::Href,
            text: "tab\there\nand newline \\ backslash".into(),
        };
        let line = batch_line(&record);
        assert!(!line.contains('\n'));
        assert_eq!(parse_batch_line(&line).unwrap(), record);
    }

    fn cdx(warc_file: &str, n: usize) -> Vec<CdxRecord> {
        (0..n)
            .map(|i| CdxRecord {
                urlkey: format!("{warc_file}/{i}"),
                timestamp: "20100101000000".into(),
                original_uri: format!("http://{warc_file}/{i}"),
                mimetype: "text/html".into(),
                status: Some(200),
                digest: None,
                redirect: "-".into(),
                meta: "-".into(),
                offset: i as u64,
                warc_file: warc_file.into(),
                length: None,
            })
            .collect()
    }

    #[test]
    fn symmetric_partitioning_one_file_each() {
        let mut records = Vec::new();
        for f in ["f1.warc", "f2.warc", "f3.warc"] {
            records.extend(cdx(f, 10));
        }
        let plan = plan_partitions(&records, 3);
        assert!(plan.partitions.iter().all(|p| p.len() == 10));
        assert_eq!(plan.file_to_partition.len(), 3);
    }

    #[test]
    fn greedy_assignment_balances_descending() {
        // counts {100, 60, 40, 40}, k=2: 100 to bin0, 60 to bin1,
        // then 40 to bin1 (60 < 100), then 40 to bin0 (100 == 100, lower index)
        let mut records = Vec::new();
        records.extend(cdx("a.warc", 100));
        records.extend(cdx("b.warc", 60));
        records.extend(cdx("c.warc", 40));
        records.extend(cdx("d.warc", 40));
        let plan = plan_partitions(&records, 2);
        let mut loads: Vec<usize> = plan.partitions.iter().map(|p| p.len()).collect();
        loads.sort_unstable();
        assert_eq!(loads, vec![60 + 40, 100 + 40]);
        assert_eq!(plan.file_to_partition["a.warc"], 0);
        assert_eq!(plan.file_to_partition["b.warc"], 1);
        assert_eq!(plan.file_to_partition["c.warc"], 1);
        assert_eq!(plan.file_to_partition["d.warc"], 0);
    }

    #[test]
    fn k_one_takes_everything() {
        let mut records = cdx("a.warc", 3);
        records.extend(cdx("b.warc", 4));
        let plan = plan_partitions(&records, 1);
        assert_eq!(plan.partitions.len(), 1);
        assert_eq!(plan.partitions[0].len(), 7);
    }

    #[test]
    fn every_file_in_exactly_one_partition() {
        let mut records = Vec::new();
        for i in 0..17 {
            records.extend(cdx(&format!("f{i}.warc"), (i % 5) + 1));
        }
        let plan = plan_partitions(&records, 4);
        for (file, &p) in &plan.file_to_partition {
            let holders: Vec<usize> = plan
                .partitions
                .iter()
                .enumerate()
                .filter(|(_, indices)| {
                    indices.iter().any(|&i| &records[i].warc_file == file)
                })
                .map(|(i, _)| i)
                .collect();
            assert_eq!(holders, vec![p], "{file}");
        }
        let total: usize = plan.partitions.iter().map(|p| p.len()).sum();
        assert_eq!(total, records.len());
    }
}
