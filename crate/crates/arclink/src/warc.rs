//! Random-access and streaming reader for WARC files.
//!
//! Fetches the archived HTTP response payload for a (warc_file, offset)
//! locator taken from the CDX record. Supports WARC/1.0 and WARC/1.1, plain
//! or record-compressed (`.warc.gz`, one gzip member per record). Whole-file
//! gzip is rejected: offsets would not land on record boundaries.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::bufread::GzDecoder;
use sha1::{Digest, Sha1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarcError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: io::Error,
    },
    #[error("corrupt record at offset {offset}: {detail}")]
    CorruptRecord { offset: u64, detail: String },
    #[error("truncated record at offset {offset}")]
    Truncated { offset: u64 },
    #[error("record at offset {offset} is of type {actual:?}, not response")]
    WrongType { offset: u64, actual: String },
    #[error("{path} is whole-file gzip, expected one gzip member per record")]
    WholeFileGzip { path: PathBuf },
}

#[derive(Debug, Clone, Copy)]
pub struct WarcLocator<'a> {
    pub warc_file: &'a Path,
    pub offset: u64,
}

/// One archived HTTP response: WARC envelope fields plus the payload body
/// with the embedded HTTP header block already split off.
#[derive(Debug, Clone)]
pub struct MementoPayload {
    pub target_uri: String,
    pub warc_datetime: String,
    pub http_status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

struct RawRecord {
    warc_type: String,
    headers: HashMap<String, String>,
    block: Vec<u8>,
    consumed: usize,
}

fn find_blank_line(data: &[u8]) -> Option<(usize, usize)> {
    // returns (index of blank line, length of the separator)
    if let Some(i) = data.windows(4).position(|w| w == b"\r\n\r\n") {
        return Some((i, 4));
    }
    data.windows(2).position(|w| w == b"\n\n").map(|i| (i, 2))
}

/// Parse one WARC record from the front of `data`. Returns the record and the
/// number of bytes consumed, including the trailing record separator.
fn parse_record(data: &[u8], offset: u64) -> Result<RawRecord, WarcError> {
    let corrupt = |detail: &str| WarcError::CorruptRecord {
        offset,
        detail: detail.to_string(),
    };
    let (header_end, sep_len) = find_blank_line(data).ok_or_else(|| corrupt("no header block"))?;
    let header_text =
        std::str::from_utf8(&data[..header_end]).map_err(|_| corrupt("non-UTF8 header block"))?;
    let mut lines = header_text.lines();
    let version = lines.next().ok_or_else(|| corrupt("empty header block"))?;
    if !version.starts_with("WARC/1.0") && !version.starts_with("WARC/1.1") {
        return Err(corrupt(&format!("bad magic {version:?}")));
    }
    let mut headers = HashMap::new();
    for line in lines {
        if let Some((name, value)) = line.split_once(':') {
            headers.insert(name.trim().to_ascii_lowercase(), value.trim().to_string());
        }
    }
    let content_length: usize = headers
        .get("content-length")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("missing Content-Length"))?;
    let block_start = header_end + sep_len;
    if block_start + content_length > data.len() {
        return Err(WarcError::Truncated { offset });
    }
    let block = data[block_start..block_start + content_length].to_vec();
    // skip the two CRLF (or LF) separators that close a record
    let mut consumed = block_start + content_length;
    for _ in 0..2 {
        if data[consumed..].starts_with(b"\r\n") {
            consumed += 2;
        } else if data[consumed..].starts_with(b"\n") {
            consumed += 1;
        }
    }
    let warc_type = headers.get("warc-type").cloned().unwrap_or_default();
    Ok(RawRecord {
        warc_type,
        headers,
        block,
        consumed,
    })
}

fn to_payload(raw: RawRecord, offset: u64) -> Result<MementoPayload, WarcError> {
    if raw.warc_type != "response" {
        return Err(WarcError::WrongType {
            offset,
            actual: raw.warc_type,
        });
    }
    let corrupt = |detail: &str| WarcError::CorruptRecord {
        offset,
        detail: detail.to_string(),
    };
    let (split, sep_len) =
        find_blank_line(&raw.block).ok_or_else(|| corrupt("no HTTP header block in response"))?;
    let http_headers =
        std::str::from_utf8(&raw.block[..split]).map_err(|_| corrupt("non-UTF8 HTTP headers"))?;
    let mut lines = http_headers.lines();
    let status_line = lines.next().ok_or_else(|| corrupt("empty HTTP block"))?;
    let http_status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| corrupt("bad HTTP status line"))?;
    let mut content_type = String::new();
    for line in lines {
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-type") {
                content_type = value.trim().to_string();
            }
        }
    }
    Ok(MementoPayload {
        target_uri: raw
            .headers
            .get("warc-target-uri")
            .cloned()
            .unwrap_or_default(),
        warc_datetime: raw.headers.get("warc-date").cloned().unwrap_or_default(),
        http_status,
        content_type,
        body: raw.block[split + sep_len..].to_vec(),
    })
}

fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn read_file(path: &Path) -> Result<Vec<u8>, WarcError> {
    fs::read(path).map_err(|source| WarcError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Decompress the single gzip member starting at `data[0]`. Returns the
/// decompressed bytes and the compressed length of the member.
fn read_gzip_member(data: &[u8], offset: u64) -> Result<(Vec<u8>, usize), WarcError> {
    if !data.starts_with(&[0x1f, 0x8b]) {
        return Err(WarcError::CorruptRecord {
            offset,
            detail: "no gzip magic at offset".into(),
        });
    }
    let mut decoder = GzDecoder::new(data);
    let mut out = Vec::new();
    decoder
        .read_to_end(&mut out)
        .map_err(|_| WarcError::Truncated { offset })?;
    let remaining = decoder.into_inner().len();
    Ok((out, data.len() - remaining))
}

/// Read the single response record at the locator.
pub fn read_record(locator: WarcLocator<'_>) -> Result<MementoPayload, WarcError> {
    let data = read_file(locator.warc_file)?;
    let offset = locator.offset as usize;
    if offset >= data.len() {
        return Err(WarcError::CorruptRecord {
            offset: locator.offset,
            detail: format!("offset beyond file length {}", data.len()),
        });
    }
    let record = if is_gzip_path(locator.warc_file) {
        let (bytes, _) = read_gzip_member(&data[offset..], locator.offset)?;
        parse_record(&bytes, locator.offset)?
    } else {
        parse_record(&data[offset..], locator.offset)?
    };
    to_payload(record, locator.offset)
}

#[derive(Debug, Default)]
pub struct WarcStream {
    pub payloads: Vec<(u64, MementoPayload)>,
    pub skipped_non_response: usize,
    pub warnings: Vec<String>,
}

/// Stream every response record of a WARC file in file order, with its byte
/// offset. Non-response records are counted and skipped; a truncated trailing
/// record becomes a warning, not an error.
pub fn stream_records(path: &Path) -> Result<WarcStream, WarcError> {
    let data = read_file(path)?;
    let gz = is_gzip_path(path);
    let mut out = WarcStream::default();
    let mut offset = 0usize;
    while offset < data.len() {
        // tolerate stray separators between records
        if data[offset] == b'\r' || data[offset] == b'\n' {
            offset += 1;
            continue;
        }
        let parsed = if gz {
            read_gzip_member(&data[offset..], offset as u64).and_then(|(bytes, used)| {
                let record = parse_record(&bytes, offset as u64)?;
                // one member must hold exactly one record
                if bytes[record.consumed..].iter().any(|b| !b"\r\n".contains(b)) {
                    return Err(WarcError::WholeFileGzip {
                        path: path.to_path_buf(),
                    });
                }
                Ok((record, used))
            })
        } else {
            parse_record(&data[offset..], offset as u64).map(|r| {
                let used = r.consumed;
                (r, used)
            })
        };
        match parsed {
            Ok((record, used)) => {
                match to_payload(record, offset as u64) {
                    Ok(payload) => out.payloads.push((offset as u64, payload)),
                    Err(WarcError::WrongType { .. }) => out.skipped_non_response += 1,
                    Err(other) => return Err(other),
                }
                offset += used;
            }
            Err(WarcError::Truncated { offset }) => {
                out.warnings.push(format!("truncated record at offset {offset}"));
                break;
            }
            Err(err @ WarcError::WholeFileGzip { .. }) => return Err(err),
            Err(err) => return Err(err),
        }
    }
    Ok(out)
}

/// SHA-1 of `data`, base32-encoded the way CDX digests are.
pub fn sha1_base32(data: &[u8]) -> String {
    let digest = Sha1::digest(data);
    base32_encode(&digest)
}

fn base32_encode(bytes: &[u8]) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";
    let mut out = String::new();
    let mut buffer: u64 = 0;
    let mut bits = 0u32;
    for &byte in bytes {
        buffer = (buffer << 8) | byte as u64;
        bits += 8;
        while bits >= 5 {
            bits -= 5;
            out.push(ALPHABET[((buffer >> bits) & 0x1f) as usize] as char);
        }
    }
    if bits > 0 {
        out.push(ALPHABET[((buffer << (5 - bits)) & 0x1f) as usize] as char);
    }
    out
}
