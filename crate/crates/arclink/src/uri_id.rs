//! URI identity: SURT canonicalization and the 128-bit SimHash URI-ID.
//!
//! The id is a pure function of the canonical SURT string, so ids can be
//! assigned on any partition, in any order, and always come out the same.
//! No global ordering or counter is involved.

use std::fmt;

use dashmap::DashMap;
use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum CanonicalizeError {
    #[error("unparseable URI: {0:?}")]
    Unparseable(String),
    #[error("unsupported scheme in URI: {0:?}")]
    UnsupportedScheme(String),
    #[error("URI has no host: {0:?}")]
    NoHost(String),
}

/// Canonical SURT form of a URI, e.g. `org,example)/foo.html`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SurtKey(String);

impl SurtKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Render back to a plain http URI (host labels un-reversed).
    pub fn to_uri(&self) -> String {
        match self.0.split_once(')') {
            Some((host, rest)) => {
                let (labels, port) = match host.split_once(':') {
                    Some((h, p)) => (h, Some(p)),
                    None => (host, None),
                };
                let mut parts: Vec<&str> = labels.split(',').collect();
                parts.reverse();
                let mut out = format!("http://{}", parts.join("."));
                if let Some(p) = port {
                    out.push(':');
                    out.push_str(p);
                }
                if rest.is_empty() {
                    out.push('/');
                } else {
                    out.push_str(rest);
                }
                out
            }
            None => format!("http://{}/", self.0),
        }
    }
}

impl fmt::Display for SurtKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// 128-bit SimHash identity of a SURT-canonicalized URI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UriId(pub u128);

impl UriId {
    pub fn to_hex(self) -> String {
        format!("{:032x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        u128::from_str_radix(s, 16).ok().map(UriId)
    }
}

impl fmt::Display for UriId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

fn is_surt_form(s: &str) -> bool {
    let paren = match (s.find(')'), s.find('/')) {
        (Some(p), Some(slash)) if p < slash => p,
        (Some(p), None) => p,
        _ => return false,
    };
    // host part: reversed labels, commas, optional :port
    !s[..paren].is_empty()
        && s[..paren]
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b",.-_:".contains(&b))
}

fn has_explicit_scheme(s: &str) -> bool {
    let Some(colon) = s.find(':') else {
        return false;
    };
    if s.find('/').is_some_and(|slash| slash < colon) {
        return false;
    }
    let scheme = &s[..colon];
    let mut chars = scheme.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && scheme[1..]
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "+.-".contains(c))
}

fn is_www_label(label: &str) -> bool {
    label.len() >= 3
        && label.starts_with("www")
        && label[3..].bytes().all(|b| b.is_ascii_digit())
}

/// Canonicalize a URI into SURT form.
///
/// Scheme and fragment are dropped, the host is lowercased with any leading
/// `www`/`www<N>` label removed, default ports are stripped, host labels are
/// reversed and comma-joined, and the query is sorted by parameter name so
/// crawler-dependent parameter order does not split identities.
pub fn canonicalize(uri: &str) -> Result<SurtKey, CanonicalizeError> {
    let trimmed = uri.trim();
    if trimmed.is_empty() {
        return Err(CanonicalizeError::Unparseable(uri.to_string()));
    }
    if is_surt_form(trimmed) {
        return Ok(SurtKey(trimmed.to_ascii_lowercase()));
    }

    let absolute = if trimmed.starts_with("//") {
        format!("http:{trimmed}")
    } else if has_explicit_scheme(trimmed) {
        trimmed.to_string()
    } else {
        // bare host or host/path form
        format!("http://{trimmed}")
    };

    let parsed =
        Url::parse(&absolute).map_err(|_| CanonicalizeError::Unparseable(uri.to_string()))?;
    match parsed.scheme() {
        "http" | "https" => {}
        s => return Err(CanonicalizeError::UnsupportedScheme(format!("{s}: {uri}"))),
    }
    let host = parsed
        .host_str()
        .ok_or_else(|| CanonicalizeError::NoHost(uri.to_string()))?
        .to_ascii_lowercase();

    let mut labels: Vec<&str> = host.split('.').collect();
    if labels.len() > 1 && is_www_label(labels[0]) {
        labels.remove(0);
    }
    labels.reverse();
    let mut key = labels.join(",");
    // Url::port() is None for the scheme default, so :80/:443 vanish here.
    if let Some(port) = parsed.port() {
        key.push(':');
        key.push_str(&port.to_string());
    }
    key.push(')');

    let path = parsed.path();
    if path.is_empty() {
        key.push('/');
    } else {
        key.push_str(path);
    }

    if let Some(query) = parsed.query() {
        if !query.is_empty() {
            let mut params: Vec<&str> = query.split('&').collect();
            params.sort_by_key(|p| p.split('=').next().unwrap_or(p).to_string());
            key.push('?');
            key.push_str(&params.join("&"));
        }
    }

    Ok(SurtKey(key))
}

const FNV_OFFSET_BASIS: u128 = 0x6c62272e07bb014262b821756295c58d;
const FNV_PRIME: u128 = 0x0000000001000000000000000000013b;

fn fnv1a_128(data: &[u8]) -> u128 {
    let mut hash = FNV_OFFSET_BASIS;
    for &byte in data {
        hash ^= byte as u128;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derive the 128-bit SimHash id for a SURT key.
///
/// Features are the overlapping byte 4-grams of the key (the whole key when
/// shorter than 4 bytes), base-hashed with 128-bit FNV-1a. Each feature votes
/// +1/-1 per bit position; output bit i is set iff the vote is positive.
pub fn uri_id(key: &SurtKey) -> UriId {
    let bytes = key.as_str().as_bytes();
    let mut votes = [0i32; 128];
    let mut vote = |hash: u128| {
        for (i, v) in votes.iter_mut().enumerate() {
            if (hash >> i) & 1 == 1 {
                *v += 1;
            } else {
                *v -= 1;
            }
        }
    };
    if bytes.len() < 4 {
        vote(fnv1a_128(bytes));
    } else {
        for gram in bytes.windows(4) {
            vote(fnv1a_128(gram));
        }
    }
    let mut out: u128 = 0;
    for (i, v) in votes.iter().enumerate() {
        if *v > 0 {
            out |= 1 << i;
        }
    }
    UriId(out)
}

/// Convenience: canonicalize then hash.
pub fn id_of(uri: &str) -> Result<(SurtKey, UriId), CanonicalizeError> {
    let key = canonicalize(uri)?;
    let id = uri_id(&key);
    Ok((key, id))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Inserted,
    Updated,
    /// A different SurtKey already owns this id; the new key went to the
    /// collision sidecar instead.
    Collision,
}

/// Reverse lookup table: id -> (SURT key, representative original URI).
///
/// Last write wins on the representative URI; the SurtKey for an id never
/// changes once stored. Distinct keys hashing to the same id are alarmed and
/// kept in a sidecar list for operator review.
#[derive(Debug, Default)]
pub struct IdTable {
    entries: DashMap<UriId, (SurtKey, String)>,
    collisions: DashMap<UriId, Vec<(SurtKey, String)>>,
}

impl IdTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, id: UriId, key: SurtKey, original: String) -> PutOutcome {
        match self.entries.entry(id) {
            dashmap::mapref::entry::Entry::Vacant(slot) => {
                slot.insert((key, original));
                PutOutcome::Inserted
            }
            dashmap::mapref::entry::Entry::Occupied(mut slot) => {
                if slot.get().0 == key {
                    slot.get_mut().1 = original;
                    PutOutcome::Updated
                } else {
                    self.collisions.entry(id).or_default().push((key, original));
                    PutOutcome::Collision
                }
            }
        }
    }

    pub fn get(&self, id: UriId) -> Option<(SurtKey, String)> {
        self.entries.get(&id).map(|e| e.clone())
    }

    pub fn collisions(&self) -> Vec<(UriId, SurtKey, String)> {
        self.collisions
            .iter()
            .flat_map(|e| {
                let id = *e.key();
                e.value()
                    .iter()
                    .map(move |(k, o)| (id, k.clone(), o.clone()))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
