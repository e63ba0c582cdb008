//! Shared fixtures for integration tests: a synthetic archive corpus
//! (per-record gzipped WARC files plus a matching crawl index) and a minimal
//! replay endpoint serving the same captures over HTTP.

#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use flate2::write::GzEncoder;
use flate2::Compression;

use arclink::uri_id::canonicalize;
use arclink::warc::sha1_base32;

pub fn build_record(target_uri: &str, date: &str, warc_type: &str, http: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    write!(
        out,
        "WARC/1.0\r\nWARC-Type: {warc_type}\r\nWARC-Target-URI: {target_uri}\r\nWARC-Date: {date}\r\nContent-Length: {}\r\n\r\n",
        http.len()
    )
    .unwrap();
    out.extend_from_slice(http);
    out.extend_from_slice(b"\r\n\r\n");
    out
}

pub fn http_response(content_type: &str, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    write!(
        out,
        "HTTP/1.1 200 OK\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .unwrap();
    out.extend_from_slice(body);
    out
}

pub fn gzip_member(record: &[u8]) -> Vec<u8> {
    let mut encoder = GzEncoder::new(Vec::new(), Compression::default());
    encoder.write_all(record).unwrap();
    encoder.finish().unwrap()
}

fn warc_date(ts14: &str) -> String {
    format!(
        "{}-{}-{}T{}:{}:{}Z",
        &ts14[0..4],
        &ts14[4..6],
        &ts14[6..8],
        &ts14[8..10],
        &ts14[10..12],
        &ts14[12..14]
    )
}

/// One capture to place in the corpus.
#[derive(Debug, Clone)]
pub struct Page {
    pub uri: String,
    /// 14-digit datetime
    pub timestamp: String,
    pub content_type: String,
    pub body: Vec<u8>,
    pub warc_file: String,
}

impl Page {
    pub fn html(uri: &str, timestamp: &str, body: &str, warc_file: &str) -> Self {
        Page {
            uri: uri.to_string(),
            timestamp: timestamp.to_string(),
            content_type: "text/html".to_string(),
            body: body.as_bytes().to_vec(),
            warc_file: warc_file.to_string(),
        }
    }

    pub fn digest(&self) -> String {
        sha1_base32(&self.body)
    }
}

/// Built corpus: WARC files under `warc_root`, one crawl-index line per page.
pub struct Corpus {
    pub warc_root: PathBuf,
    pub cdx_lines: Vec<String>,
    pub pages: Vec<Page>,
    /// (page index in `pages`) -> byte offset of its record
    pub offsets: Vec<u64>,
}

impl Corpus {
    pub fn build(root: &Path, pages: &[Page]) -> Corpus {
        let warc_root = root.join("warcs");
        std::fs::create_dir_all(&warc_root).unwrap();
        let mut file_bytes: HashMap<String, Vec<u8>> = HashMap::new();
        let mut cdx_lines = Vec::new();
        let mut offsets = Vec::new();
        for page in pages {
            let record = build_record(
                &page.uri,
                &warc_date(&page.timestamp),
                "response",
                &http_response(&page.content_type, &page.body),
            );
            let member = gzip_member(&record);
            let buffer = file_bytes.entry(page.warc_file.clone()).or_default();
            let offset = buffer.len() as u64;
            buffer.extend_from_slice(&member);
            offsets.push(offset);
            let urlkey = canonicalize(&page.uri)
                .map(|k| k.as_str().to_string())
                .unwrap_or_else(|_| page.uri.clone());
            cdx_lines.push(format!(
                "{urlkey} {} {} {} 200 {} - - {offset} {}",
                page.timestamp,
                page.uri,
                page.content_type,
                page.digest(),
                page.warc_file
            ));
        }
        for (name, bytes) in &file_bytes {
            std::fs::write(warc_root.join(name), bytes).unwrap();
        }
        Corpus {
            warc_root,
            cdx_lines,
            pages: pages.to_vec(),
            offsets,
        }
    }

    pub fn write_cdx(&self, path: &Path) {
        std::fs::write(path, self.cdx_lines.join("\n") + "\n").unwrap();
    }
}

/// Threaded stub replay endpoint answering `GET <path>/<ts>/<uri>`.
pub struct ReplayServer {
    pub base: String,
    shutdown: Arc<std::sync::atomic::AtomicBool>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl ReplayServer {
    /// Serve the given pages under `/web`; returns once the listener is bound.
    pub fn start(pages: &[Page]) -> ReplayServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        listener.set_nonblocking(true).unwrap();
        let routes: HashMap<String, (String, Vec<u8>)> = pages
            .iter()
            .map(|p| {
                (
                    format!("/web/{}/{}", p.timestamp, p.uri),
                    (p.content_type.clone(), p.body.clone()),
                )
            })
            .collect();
        let shutdown = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let stop = shutdown.clone();
        let handle = std::thread::spawn(move || {
            while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                match listener.accept() {
                    Ok((mut stream, _)) => {
                        stream.set_nonblocking(false).ok();
                        let mut buffer = [0u8; 8192];
                        let mut request = Vec::new();
                        // read until end of headers; requests have no body
                        loop {
                            match stream.read(&mut buffer) {
                                Ok(0) => break,
                                Ok(n) => {
                                    request.extend_from_slice(&buffer[..n]);
                                    if request.windows(4).any(|w| w == b"\r\n\r\n") {
                                        break;
                                    }
                                }
                                Err(_) => break,
                            }
                        }
                        let text = String::from_utf8_lossy(&request);
                        let path = text
                            .lines()
                            .next()
                            .and_then(|l| l.split_whitespace().nth(1))
                            .unwrap_or("");
                        let response = match routes.get(path) {
                            Some((content_type, body)) => {
                                let mut r = format!(
                                    "HTTP/1.1 200 OK\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                                    body.len()
                                )
                                .into_bytes();
                                r.extend_from_slice(body);
                                r
                            }
                            None => b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
                                .to_vec(),
                        };
                        stream.write_all(&response).ok();
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        ReplayServer {
            base: format!("http://{addr}/web"),
            shutdown,
            handle: Some(handle),
        }
    }
}

impl Drop for ReplayServer {
    fn drop(&mut self) {
        self.shutdown
            .store(true, std::sync::atomic::Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            handle.join().ok();
        }
    }
}
