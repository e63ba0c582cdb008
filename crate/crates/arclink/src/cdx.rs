//! CDX crawl-index parsing and the include/exclude filter chain.
//!
//! The CDX file is the crawler's space-delimited capture index: one line per
//! memento with its URI key, 14-digit timestamp, mimetype, HTTP status,
//! payload digest, and the (WARC file, offset) locator. Filtering reduces the
//! index to the unique mementos that can carry link structure, and emits a
//! full observation log so the store can later reconstruct every capture time.

use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use flate2::read::MultiGzDecoder;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CdxError {
    #[error("I/O error reading CDX: {0}")]
    Io(#[from] io::Error),
    #[error("bad rule line {line}: {text:?}")]
    BadRule { line: usize, text: String },
}

/// One crawl-index line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdxRecord {
    pub urlkey: String,
    /// 14-digit archival datetime, YYYYMMDDHHMMSS in UTC.
    pub timestamp: String,
    pub original_uri: String,
    pub mimetype: String,
    /// None when the CDX column holds "-".
    pub status: Option<u16>,
    /// 32-char base32 SHA-1 of the payload; None when "-".
    pub digest: Option<String>,
    pub redirect: String,
    pub meta: String,
    pub offset: u64,
    pub warc_file: String,
    /// Compressed record length, present only in 11-field layouts.
    pub length: Option<u64>,
}

fn valid_timestamp(ts: &str) -> bool {
    if ts.len() != 14 || !ts.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let num = |r: std::ops::Range<usize>| ts[r].parse::<u32>().unwrap();
    let (month, day) = (num(4..6), num(6..8));
    let (hour, min, sec) = (num(8..10), num(10..12), num(12..14));
    (1..=12).contains(&month) && (1..=31).contains(&day) && hour < 24 && min < 60 && sec < 60
}

const BASE32_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";

fn valid_digest(d: &str) -> bool {
    d.len() == 32 && d.bytes().all(|b| BASE32_ALPHABET.contains(&b))
}

/// Column layout, either auto-detected from a ` CDX ...` header line or
/// inferred from the field count.
#[derive(Debug, Clone)]
struct Layout {
    urlkey: usize,
    timestamp: usize,
    original: usize,
    mimetype: usize,
    status: usize,
    digest: usize,
    redirect: Option<usize>,
    meta: Option<usize>,
    offset: usize,
    warc_file: usize,
    length: Option<usize>,
    width: usize,
}

impl Layout {
    /// The common 10-field layout; `extra_trailing_length` adds the optional
    /// trailing compressed-length column.
    fn standard(extra_trailing_length: bool) -> Self {
        Layout {
            urlkey: 0,
            timestamp: 1,
            original: 2,
            mimetype: 3,
            status: 4,
            digest: 5,
            redirect: Some(6),
            meta: Some(7),
            offset: 8,
            warc_file: 9,
            length: extra_trailing_length.then_some(10),
            width: if extra_trailing_length { 11 } else { 10 },
        }
    }

    /// 9-field layout: the standard one without the meta column.
    fn compact() -> Self {
        Layout {
            urlkey: 0,
            timestamp: 1,
            original: 2,
            mimetype: 3,
            status: 4,
            digest: 5,
            redirect: Some(6),
            meta: None,
            offset: 7,
            warc_file: 8,
            length: None,
            width: 9,
        }
    }

    /// Build a layout from the field letters of a ` CDX N b a m s k ...` header.
    fn from_header(letters: &[&str]) -> Option<Self> {
        let pos = |c: &str| letters.iter().position(|l| *l == c);
        Some(Layout {
            urlkey: pos("N")?,
            timestamp: pos("b")?,
            original: pos("a")?,
            mimetype: pos("m")?,
            status: pos("s")?,
            digest: pos("k")?,
            redirect: pos("r"),
            meta: pos("M"),
            offset: pos("V").or_else(|| pos("v"))?,
            warc_file: pos("g")?,
            length: pos("S"),
            width: letters.len(),
        })
    }

    fn parse(&self, fields: &[&str]) -> Option<CdxRecord> {
        if fields.len() < self.width {
            return None;
        }
        let dash_opt = |s: &str| (s != "-").then(|| s.to_string());
        let timestamp = fields[self.timestamp].to_string();
        if !valid_timestamp(&timestamp) {
            return None;
        }
        let digest = dash_opt(fields[self.digest]);
        if let Some(d) = &digest {
            if !valid_digest(d) {
                return None;
            }
        }
        Some(CdxRecord {
            urlkey: fields[self.urlkey].to_string(),
            timestamp,
            original_uri: fields[self.original].to_string(),
            mimetype: fields[self.mimetype].to_string(),
            status: fields[self.status].parse().ok(),
            digest,
            redirect: self.redirect.map_or("-".into(), |i| fields[i].to_string()),
            meta: self.meta.map_or("-".into(), |i| fields[i].to_string()),
            offset: fields[self.offset].parse().ok()?,
            warc_file: fields[self.warc_file].to_string(),
            length: self.length.and_then(|i| fields[i].parse().ok()),
        })
    }
}

/// Result of parsing one CDX stream: records in input order plus the
/// malformed lines that were skipped.
#[derive(Debug, Default)]
pub struct CdxParse {
    pub records: Vec<CdxRecord>,
    /// (1-based line number, reason)
    pub skipped: Vec<(usize, String)>,
}

/// Parse a CDX text stream. A leading ` CDX ...` header line fixes the column
/// layout; otherwise the layout is inferred per line from the field count.
/// Malformed lines are skipped and counted, never fatal.
pub fn parse_cdx_stream<R: BufRead>(reader: R) -> Result<CdxParse, CdxError> {
    let mut out = CdxParse::default();
    let mut header_layout: Option<Layout> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with(' ') || line.starts_with("CDX ") {
            let letters: Vec<&str> = line.trim().split_whitespace().skip(1).collect();
            header_layout = Layout::from_header(&letters);
            if header_layout.is_none() {
                out.skipped.push((line_no, "unusable CDX header".into()));
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 9 {
            out.skipped
                .push((line_no, format!("{} fields, need at least 9", fields.len())));
            continue;
        }
        let layout = match &header_layout {
            Some(l) => l.clone(),
            None => match fields.len() {
                9 => Layout::compact(),
                10 => Layout::standard(false),
                _ => Layout::standard(true),
            },
        };
        match layout.parse(&fields) {
            Some(record) => out.records.push(record),
            None => out.skipped.push((line_no, "unparseable fields".into())),
        }
    }
    Ok(out)
}

/// Open a CDX file, transparently decompressing `.gz`.
pub fn open_cdx(path: &Path) -> Result<CdxParse, CdxError> {
    let file = File::open(path)?;
    let gz = path.extension().is_some_and(|e| e == "gz");
    if gz {
        parse_cdx_stream(BufReader::new(MultiGzDecoder::new(file)))
    } else {
        parse_cdx_stream(BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleMode {
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    /// HTTP status match; `any_2xx` widens the match to the whole 2xx class.
    Status { code: u16, any_2xx: bool },
    /// Mimetype starts with any member of the set.
    MimetypePrefixIn(Vec<String>),
    /// Path extension (query/fragment stripped, case-insensitive) in the set.
    ExtensionIn(Vec<String>),
    /// Content-checksum duplicate; keeps the earliest timestamp per digest.
    DuplicateDigest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterRule {
    pub mode: RuleMode,
    pub predicate: Predicate,
}

impl FilterRule {
    pub fn describe(&self) -> String {
        let mode = match self.mode {
            RuleMode::Include => "INCLUDE",
            RuleMode::Exclude => "EXCLUDE",
        };
        let what = match &self.predicate {
            Predicate::Status { code, any_2xx } => {
                if *any_2xx {
                    "HTTP status 2xx".to_string()
                } else {
                    format!("HTTP status {code}")
                }
            }
            Predicate::MimetypePrefixIn(set) => format!("mimetype in {{{}}}", set.join(", ")),
            Predicate::ExtensionIn(set) => format!("extension in {{{}}}", set.join(", ")),
            Predicate::DuplicateDigest => "duplicate checksum".to_string(),
        };
        format!("{mode} {what}")
    }
}

fn path_extension(original_uri: &str) -> Option<String> {
    let no_frag = original_uri.split('#').next().unwrap_or(original_uri);
    let no_query = no_frag.split('?').next().unwrap_or(no_frag);
    let last_segment = no_query.rsplit('/').next().unwrap_or(no_query);
    let (stem, ext) = last_segment.rsplit_once('.')?;
    if stem.is_empty() || ext.is_empty() {
        return None;
    }
    Some(ext.to_ascii_lowercase())
}

fn predicate_matches(predicate: &Predicate, record: &CdxRecord) -> bool {
    match predicate {
        Predicate::Status { code, any_2xx } => match record.status {
            Some(s) if *any_2xx => (200..300).contains(&s),
            Some(s) => s == *code,
            None => false,
        },
        Predicate::MimetypePrefixIn(set) => {
            set.iter().any(|prefix| record.mimetype.starts_with(prefix))
        }
        Predicate::ExtensionIn(set) => path_extension(&record.original_uri)
            .is_some_and(|ext| set.iter().any(|e| *e == ext)),
        Predicate::DuplicateDigest => unreachable!("stateful rule handled separately"),
    }
}

/// The five rules of the reduction chain, in evaluation order: include status
/// 200, drop image/script/stylesheet mimetypes, keep text/* only, drop
/// image-extension resources, drop duplicate checksums.
pub fn default_rule_chain() -> Vec<FilterRule> {
    vec![
        FilterRule {
            mode: RuleMode::Include,
            predicate: Predicate::Status {
                code: 200,
                any_2xx: false,
            },
        },
        FilterRule {
            mode: RuleMode::Exclude,
            predicate: Predicate::MimetypePrefixIn(vec![
                "image/".into(),
                "text/css".into(),
                "application/javascript".into(),
                "text/javascript".into(),
                "application/x-javascript".into(),
            ]),
        },
        FilterRule {
            mode: RuleMode::Include,
            predicate: Predicate::MimetypePrefixIn(vec!["text/".into()]),
        },
        FilterRule {
            mode: RuleMode::Exclude,
            predicate: Predicate::ExtensionIn(
                ["jpg", "jpeg", "png", "gif", "bmp", "ico", "tif", "tiff", "css", "js", "swf"]
                    .map(String::from)
                    .to_vec(),
            ),
        },
        FilterRule {
            mode: RuleMode::Exclude,
            predicate: Predicate::DuplicateDigest,
        },
    ]
}

/// Parse a rule-chain config: one rule per line,
/// `include|exclude status|mimetype|extension|duplicate-digest [params...]`.
/// `#` starts a comment.
pub fn parse_rule_chain(text: &str) -> Result<Vec<FilterRule>, CdxError> {
    let mut chain = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || CdxError::BadRule {
            line: idx + 1,
            text: raw.to_string(),
        };
        let mut words = line.split_whitespace();
        let mode = match words.next().ok_or_else(bad)? {
            "include" | "INCLUDE" => RuleMode::Include,
            "exclude" | "EXCLUDE" => RuleMode::Exclude,
            _ => return Err(bad()),
        };
        let params: Vec<String>;
        let predicate = match words.next().ok_or_else(bad)? {
            "status" => {
                let arg = words.next().ok_or_else(bad)?;
                if arg == "2xx" {
                    Predicate::Status {
                        code: 200,
                        any_2xx: true,
                    }
                } else {
                    Predicate::Status {
                        code: arg.parse().map_err(|_| bad())?,
                        any_2xx: false,
                    }
                }
            }
            "mimetype" => {
                params = words.map(String::from).collect();
                if params.is_empty() {
                    return Err(bad());
                }
                Predicate::MimetypePrefixIn(params)
            }
            "extension" => {
                params = words.map(|w| w.to_ascii_lowercase()).collect();
                if params.is_empty() {
                    return Err(bad());
                }
                Predicate::ExtensionIn(params)
            }
            "duplicate-digest" => Predicate::DuplicateDigest,
            _ => return Err(bad()),
        };
        chain.push(FilterRule { mode, predicate });
    }
    Ok(chain)
}

/// One status-200 capture: enough to reconstruct every observation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub urlkey: String,
    pub timestamp: String,
    /// "-" when the CDX carried no digest.
    pub digest: String,
}

#[derive(Debug, Clone)]
pub struct RuleStat {
    pub rule: String,
    pub surviving: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FilterReport {
    pub input_count: usize,
    pub output_count: usize,
    pub per_rule: Vec<RuleStat>,
}

impl FilterReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("input records: {}\n", self.input_count));
        for stat in &self.per_rule {
            out.push_str(&format!(
                "{:<60} surviving {:>10}  ({:.3} s)\n",
                stat.rule, stat.surviving, stat.elapsed_secs
            ));
        }
        out.push_str(&format!("output records: {}\n", self.output_count));
        out
    }

    pub fn render_keyvalues(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("input_count={}\n", self.input_count));
        for (i, stat) in self.per_rule.iter().enumerate() {
            out.push_str(&format!(
                "rule.{i}.desc={}\nrule.{i}.surviving={}\nrule.{i}.secs={:.6}\n",
                stat.rule, stat.surviving, stat.elapsed_secs
            ));
        }
        out.push_str(&format!("output_count={}\n", self.output_count));
        out
    }
}

#[derive(Debug, Default)]
pub struct FilterOutput {
    pub extraction_list: Vec<CdxRecord>,
    pub observation_log: Vec<Observation>,
    pub report: FilterReport,
}

/// Apply the rule chain in order. The extraction list holds exactly the
/// records surviving every rule; the observation log holds EVERY status-200
/// record, content duplicates included. The duplicate-digest rule keeps the
/// earliest-timestamp record per digest (ties: first in input order);
/// digest-less records are never deduplicated.
pub fn apply_filters(records: &[CdxRecord], chain: &[FilterRule]) -> FilterOutput {
    let observation_log = records
        .iter()
        .filter(|r| r.status == Some(200))
        .map(|r| Observation {
            urlkey: r.urlkey.clone(),
            timestamp: r.timestamp.clone(),
            digest: r.digest.clone().unwrap_or_else(|| "-".into()),
        })
        .collect();

    let mut survivors: Vec<&CdxRecord> = records.iter().collect();
    let mut report = FilterReport {
        input_count: records.len(),
        ..Default::default()
    };

    for rule in chain {
        let start = Instant::now();
        survivors = match &rule.predicate {
            Predicate::DuplicateDigest => dedupe_by_digest(survivors, rule.mode),
            predicate => {
                let keep_on_match = rule.mode == RuleMode::Include;
                survivors
                    .into_iter()
                    .filter(|r| predicate_matches(predicate, r) == keep_on_match)
                    .collect()
            }
        };
        report.per_rule.push(RuleStat {
            rule: rule.describe(),
            surviving: survivors.len(),
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    }

    report.output_count = survivors.len();
    FilterOutput {
        extraction_list: survivors.into_iter().cloned().collect(),
        observation_log,
        report,
    }
}

fn dedupe_by_digest<'a>(survivors: Vec<&'a CdxRecord>, mode: RuleMode) -> Vec<&'a CdxRecord> {
    use std::collections::hash_map::Entry;
    use std::collections::HashMap;
    // digest -> index (into survivors) of the earliest-timestamp record;
    // ties keep the first in input order
    let mut keeper: HashMap<&str, usize> = HashMap::new();
    for (i, record) in survivors.iter().enumerate() {
        let Some(digest) = record.digest.as_deref() else {
            continue;
        };
        match keeper.entry(digest) {
            Entry::Vacant(slot) => {
                slot.insert(i);
            }
            Entry::Occupied(mut slot) => {
                if record.timestamp < survivors[*slot.get()].timestamp {
                    slot.insert(i);
                }
            }
        }
    }
    survivors
        .iter()
        .enumerate()
        .filter(|(i, r)| match r.digest.as_deref() {
            None => mode == RuleMode::Exclude,
            Some(d) => {
                let kept = keeper[d] == *i;
                if mode == RuleMode::Exclude {
                    kept
                } else {
                    !kept
                }
            }
        })
        .map(|(_, r)| *r)
        .collect()
}

/// Extraction-list line: urlkey, timestamp, original URI, digest, offset, warc file.
pub fn extraction_list_line(r: &CdxRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.urlkey,
        r.timestamp,
        r.original_uri,
        r.digest.as_deref().unwrap_or("-"),
        r.offset,
        r.warc_file
    )
}

pub fn observation_log_line(o: &Observation) -> String {
    format!("{}\t{}\t{}", o.urlkey, o.timestamp, o.digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE_LINE: &str = "example.org/foo.html 20090312223142 http://www.example.org/foo.html text/html 200 E6T72C2R6BRRKSI3IZPMRJDXTFJIRC7P - - 111739 TENN-000001.warc.gz";

    fn record(urlkey: &str, ts: &str, status: Option<u16>, mime: &str, digest: Option<&str>) -> CdxRecord {
        CdxRecord {
            urlkey: urlkey.into(),
            timestamp: ts.into(),
            original_uri: format!("http://{urlkey}"),
            mimetype: mime.into(),
            status,
            digest: digest.map(String::from),
            redirect: "-".into(),
            meta: "-".into(),
            offset: 0,
            warc_file: "w.warc.gz".into(),
            length: None,
        }
    }

    #[test]
    fn parses_classic_example_line() {
        let parse = parse_cdx_stream(EXAMPLE_LINE.as_bytes()).unwrap();
        assert_eq!(parse.skipped.len(), 0);
        let r = &parse.records[0];
        assert_eq!(r.urlkey, "example.org/foo.html");
        assert_eq!(r.timestamp, "20090312223142");
        assert_eq!(r.status, Some(200));
        assert_eq!(r.offset, 111739);
        assert_eq!(r.warc_file, "TENN-000001.warc.gz");
        assert_eq!(r.length, None);
    }

    #[test]
    fn empty_stream_is_empty() {
        let parse = parse_cdx_stream(&b""[..]).unwrap();
        assert!(parse.records.is_empty());
        assert!(parse.skipped.is_empty());
    }

    #[test]
    fn eleven_field_layout_retains_trailing_length() {
        let line = format!("{EXAMPLE_LINE} 2461");
        let parse = parse_cdx_stream(line.as_bytes()).unwrap();
        assert_eq!(parse.records[0].length, Some(2461));
        assert_eq!(parse.records[0].offset, 111739);
    }

    #[test]
    fn header_line_drives_field_alignment() {
        // same data, columns rearranged by an explicit header
        let text = " CDX N b a m s k r M S V g\n\
            example.org/foo.html 20090312223142 http://www.example.org/foo.html text/html 200 E6T72C2R6BRRKSI3IZPMRJDXTFJIRC7P - - 2461 111739 TENN-000001.warc.gz";
        let parse = parse_cdx_stream(text.as_bytes()).unwrap();
        let r = &parse.records[0];
        assert_eq!(r.offset, 111739);
        assert_eq!(r.length, Some(2461));
        assert_eq!(r.warc_file, "TENN-000001.warc.gz");
    }

    #[test]
    fn short_line_lands_in_skip_counter_with_line_number() {
        let text = format!("{EXAMPLE_LINE}\nonly three fields\n");
        let parse = parse_cdx_stream(text.as_bytes()).unwrap();
        assert_eq!(parse.records.len(), 1);
        assert_eq!(parse.skipped.len(), 1);
        assert_eq!(parse.skipped[0].0, 2);
    }

    #[test]
    fn bad_timestamp_skipped() {
        let line = EXAMPLE_LINE.replace("20090312223142", "20091332223142");
        let parse = parse_cdx_stream(line.as_bytes()).unwrap();
        assert!(parse.records.is_empty());
        assert_eq!(parse.skipped.len(), 1);
    }

    #[test]
    fn default_chain_has_the_five_rules_in_order() {
        let chain = default_rule_chain();
        assert_eq!(chain.len(), 5);
        assert!(matches!(
            chain[0].predicate,
            Predicate::Status { code: 200, any_2xx: false }
        ));
        assert_eq!(chain[0].mode, RuleMode::Include);
        assert!(matches!(chain[4].predicate, Predicate::DuplicateDigest));
        assert_eq!(chain[4].mode, RuleMode::Exclude);
    }

    #[test]
    fn non_200_excluded_by_status_rule() {
        let records = vec![
            record("a.org/", "20100101000000", Some(200), "text/html", Some("AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA")),
            record("b.org/", "20100101000000", Some(404), "text/html", Some("BBBBBBBBBBBBBBBBBBBBBBBBBBBBBBBB")),
        ];
        let out = apply_filters(&records, &default_rule_chain());
        assert_eq!(out.extraction_list.len(), 1);
        assert_eq!(out.extraction_list[0].urlkey, "a.org/");
    }

    #[test]
    fn duplicate_digest_keeps_earliest_and_logs_both() {
        let records = vec![
            record("a.org/", "20100201000000", Some(200), "text/html", Some("CCCCCCCCCCCCCCCCCCCCCCCCCCCCCCCC")),
            record("a.org/", "20100101000000", Some(200), "text/html", Some("CCCCCCCCCCCCCCCCCCCCCCCCCCCCCCCC")),
        ];
        let out = apply_filters(&records, &default_rule_chain());
        assert_eq!(out.extraction_list.len(), 1);
        assert_eq!(out.extraction_list[0].timestamp, "20100101000000");
        assert_eq!(out.observation_log.len(), 2);
    }

    #[test]
    fn digest_tie_keeps_first_in_input_order() {
        let mut first = record("a.org/x", "20100101000000", Some(200), "text/html", Some("DDDDDDDDDDDDDDDDDDDDDDDDDDDDDDDD"));
        first.offset = 7;
        let second = record("a.org/y", "20100101000000", Some(200), "text/html", Some("DDDDDDDDDDDDDDDDDDDDDDDDDDDDDDDD"));
        let out = apply_filters(&[first.clone(), second], &default_rule_chain());
        assert_eq!(out.extraction_list, vec![first]);
    }

    #[test]
    fn dashed_digest_never_deduplicated() {
        let records = vec![
            record("a.org/x", "20100101000000", Some(200), "text/html", None),
            record("a.org/y", "20100102000000", Some(200), "text/html", None),
        ];
        let out = apply_filters(&records, &default_rule_chain());
        assert_eq!(out.extraction_list.len(), 2);
    }

    #[test]
    fn extension_rule_strips_query_and_is_case_insensitive() {
        let mut r = record("a.org/pic", "20100101000000", Some(200), "text/html", Some("EEEEEEEEEEEEEEEEEEEEEEEEEEEEEEEE"));
        r.original_uri = "http://a.org/pic.JPG?size=large#top".into();
        let out = apply_filters(&[r], &default_rule_chain());
        assert!(out.extraction_list.is_empty());
    }

    #[test]
    fn empty_input_gives_zero_report() {
        let out = apply_filters(&[], &default_rule_chain());
        assert_eq!(out.report.input_count, 0);
        assert_eq!(out.report.output_count, 0);
        assert!(out.report.per_rule.iter().all(|s| s.surviving == 0));
    }

    #[test]
    fn per_rule_counts_monotonically_non_increasing() {
        let records: Vec<CdxRecord> = (0..50)
            .map(|i| {
                record(
                    &format!("s{i}.org/"),
                    &format!("201001{:02}000000", (i % 28) + 1),
                    if i % 3 == 0 { Some(404) } else { Some(200) },
                    if i % 4 == 0 { "image/png" } else { "text/html" },
                    Some("GGGGGGGGGGGGGGGGGGGGGGGGGGGGGGGG"),
                )
            })
            .collect();
        let out = apply_filters(&records, &default_rule_chain());
        let mut prev = out.report.input_count;
        for stat in &out.report.per_rule {
            assert!(stat.surviving <= prev);
            prev = stat.surviving;
        }
    }

    #[test]
    fn rule_chain_config_roundtrip() {
        let text = "# default chain\ninclude status 200\nexclude mimetype image/ text/css application/javascript text/javascript application/x-javascript\ninclude mimetype text/\nexclude extension jpg jpeg png gif bmp ico tif tiff css js swf\nexclude duplicate-digest\n";
        let chain = parse_rule_chain(text).unwrap();
        assert_eq!(chain, default_rule_chain());
        assert!(parse_rule_chain("frobnicate everything").is_err());
    }

    fn arb_record() -> impl Strategy<Value = CdxRecord> {
        (
            0usize..30,
            prop_oneof![Just(Some(200u16)), Just(Some(404)), Just(None)],
            prop_oneof![
                Just("text/html"),
                Just("image/png"),
                Just("text/css"),
                Just("application/pdf")
            ],
            0u8..6,
            1u32..28,
        )
            .prop_map(|(host, status, mime, digest_class, day)| {
                let digest = if digest_class == 0 {
                    None
                } else {
                    Some(format!("{}", BASE32_ALPHABET[digest_class as usize] as char).repeat(32))
                };
                record(
                    &format!("h{host}.org/"),
                    &format!("201001{day:02}000000"),
                    status,
                    mime,
                    digest.as_deref(),
                )
            })
    }

    proptest! {
        // EXCLUDE-only prefixes survive permutation with an identical set
        #[test]
        fn exclude_rules_are_order_independent(records in prop::collection::vec(arb_record(), 0..60)) {
            let chain = default_rule_chain();
            let stateless: Vec<FilterRule> = chain[..4].to_vec();
            let mut permuted = stateless.clone();
            permuted.reverse();
            let a = apply_filters(&records, &stateless);
            let b = apply_filters(&records, &permuted);
            let set = |o: &FilterOutput| {
                let mut v: Vec<String> = o.extraction_list.iter().map(extraction_list_line).collect();
                v.sort();
                v
            };
            prop_assert_eq!(set(&a), set(&b));
        }

        #[test]
        fn appending_a_rule_never_grows_output(records in prop::collection::vec(arb_record(), 0..60)) {
            let chain = default_rule_chain();
            for cut in 0..=chain.len() {
                let out = apply_filters(&records, &chain[..cut]);
                if cut > 0 {
                    let prev = apply_filters(&records, &chain[..cut - 1]);
                    prop_assert!(out.report.output_count <= prev.report.output_count);
                }
            }
        }

        #[test]
        fn filtering_is_idempotent(records in prop::collection::vec(arb_record(), 0..60)) {
            let chain = default_rule_chain();
            let once = apply_filters(&records, &chain);
            let twice = apply_filters(&once.extraction_list, &chain);
            prop_assert_eq!(once.extraction_list, twice.extraction_list);
        }

        #[test]
        fn observation_log_covers_surviving_200s(records in prop::collection::vec(arb_record(), 0..60)) {
            let out = apply_filters(&records, &default_rule_chain());
            for r in &out.extraction_list {
                let obs = Observation {
                    urlkey: r.urlkey.clone(),
                    timestamp: r.timestamp.clone(),
                    digest: r.digest.clone().unwrap_or_else(|| "-".into()),
                };
                prop_assert!(out.observation_log.contains(&obs));
            }
        }
    }
}
