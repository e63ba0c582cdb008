//! HTTP access layer: the temporal link structure of a URI as RDF/XML in the
//! twg vocabulary, with response-level aggregation across instances.
//!
//! `GET /linkQuery?uri=<uri>[&from=<ts>&to=<ts>&format=rdf|json]` returns one
//! `rdf:Description` about the queried URI holding `twg:hasOutlinks` and
//! `twg:hasInlinks` collections; each member carries type, text, and an
//! `rdf:Bag` of 14-digit timestamps. Outlink members are identified by SURT
//! key, inlink members by the original source URI.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use quick_xml::escape::{escape, unescape};
use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{GraphStore, StoreError};
use crate::uri_id::{canonicalize, uri_id};

pub const RDF_NS: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const TWG_NS: &str = "http://www.mementoweb.org/TemporalWebGraph/";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("malformed RDF/XML: {0}")]
    BadXml(String),
    #[error("cannot merge responses about different subjects: {0:?} vs {1:?}")]
    SubjectMismatch(String, String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bind failed: {0}")]
    Bind(std::io::Error),
}

/// One collection member: link target (outlinks) or source (inlinks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    /// SURT key for outlink targets, original URI for inlink sources
    pub descriptor: String,
    pub link_type: String,
    pub text: String,
    /// ascending, non-empty
    pub timestamps: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStructureResponse {
    pub subject_uri: String,
    pub outlinks: Vec<Member>,
    pub inlinks: Vec<Member>,
}

fn drop_controls(text: &str) -> String {
    text.chars().filter(|c| !c.is_control()).collect()
}

fn xml_text(text: &str) -> String {
    escape(&drop_controls(text)).into_owned()
}

impl LinkStructureResponse {
    pub fn empty(subject_uri: &str) -> Self {
        LinkStructureResponse {
            subject_uri: subject_uri.to_string(),
            outlinks: Vec::new(),
            inlinks: Vec::new(),
        }
    }

    pub fn to_rdf_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\"?>");
        out.push_str(&format!(
            "<rdf:RDF xmlns:rdf=\"{RDF_NS}\" xmlns:twg=\"{TWG_NS}\">\n"
        ));
        out.push_str(&format!(
            "<rdf:Description rdf:about=\"{}\">\n",
            xml_text(&self.subject_uri)
        ));
        for (tag, members) in [("twg:hasOutlinks", &self.outlinks), ("twg:hasInlinks", &self.inlinks)]
        {
            out.push_str(&format!(" <{tag} rdf:parseType=\"Collection\">\n"));
            for member in members {
                out.push_str(&format!(
                    "   <rdf:Description rdf:about=\"{}\">\n",
                    xml_text(&member.descriptor)
                ));
                out.push_str(&format!(
                    "    <twg:type>{}</twg:type> <twg:text>{}</twg:text>\n",
                    xml_text(&member.link_type),
                    xml_text(&member.text)
                ));
                out.push_str("    <twg:timestamp> <rdf:Bag>\n");
                for ts in &member.timestamps {
                    out.push_str(&format!("     <rdf:li>{}</rdf:li>", xml_text(ts)));
                }
                out.push_str("\n    </rdf:Bag> </twg:timestamp> </rdf:Description>\n");
            }
            out.push_str(&format!(" </{tag}>\n"));
        }
        out.push_str("</rdf:Description></rdf:RDF>\n");
        out
    }

    pub fn from_rdf_xml(xml: &str) -> Result<Self, ServiceError> {
        let bad = |detail: &str| ServiceError::BadXml(detail.to_string());
        let mut reader = Reader::from_str(xml);
        reader.trim_text(true);

        #[derive(PartialEq)]
        enum Section {
            None,
            Outlinks,
            Inlinks,
        }
        let mut response: Option<LinkStructureResponse> = None;
        let mut section = Section::None;
        let mut member: Option<Member> = None;
        let mut text_target: Option<&'static str> = None;
        let mut in_bag = false;
        let mut buf = Vec::new();
        loop {
            match reader.read_event_into(&mut buf) {
                Ok(Event::Start(e)) | Ok(Event::Empty(e)) => {
                    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                    let about = e
                        .attributes()
                        .flatten()
                        .find(|a| a.key.as_ref() == b"rdf:about")
                        .map(|a| {
                            unescape(&String::from_utf8_lossy(&a.value))
                                .map(|s| s.into_owned())
                                .unwrap_or_default()
                        });
                    match name.as_str() {
                        "rdf:Description" => {
                            let about = about.ok_or_else(|| bad("Description without rdf:about"))?;
                            if response.is_none() {
                                response = Some(LinkStructureResponse::empty(&about));
                            } else if section != Section::None {
                                member = Some(Member {
                                    descriptor: about,
                                    link_type: String::new(),
                                    text: String::new(),
                                    timestamps: BTreeSet::new(),
                                });
                            }
                        }
                        "twg:hasOutlinks" => section = Section::Outlinks,
                        "twg:hasInlinks" => section = Section::Inlinks,
                        "twg:type" => text_target = Some("type"),
                        "twg:text" => text_target = Some("text"),
                        "rdf:Bag" => in_bag = true,
                        "rdf:li" => text_target = Some("li"),
                        _ => {}
                    }
                }
                Ok(Event::Text(t)) => {
                    let value = t
                        .unescape()
                        .map_err(|e| bad(&e.to_string()))?
                        .into_owned();
                    if let (Some(target), Some(m)) = (text_target, member.as_mut()) {
                        match target {
                            "type" => m.link_type = value,
                            "text" => m.text = value,
                            "li" if in_bag => {
                                m.timestamps.insert(value);
                            }
                            _ => {}
                        }
                    }
                }
                Ok(Event::End(e)) => {
                    let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                    match name.as_str() {
                        "rdf:Description" => {
                            if let Some(m) = member.take() {
                                let response =
                                    response.as_mut().ok_or_else(|| bad("member before subject"))?;
                                match section {
                                    Section::Outlinks => response.outlinks.push(m),
                                    Section::Inlinks => response.inlinks.push(m),
                                    Section::None => return Err(bad("member outside collection")),
                                }
                            }
                        }
                        "twg:hasOutlinks" | "twg:hasInlinks" => section = Section::None,
                        "twg:type" | "twg:text" | "rdf:li" => text_target = None,
                        "rdf:Bag" => in_bag = false,
                        _ => {}
                    }
                }
                Ok(Event::Eof) => break,
                Err(e) => return Err(bad(&e.to_string())),
                _ => {}
            }
            buf.clear();
        }
        response.ok_or_else(|| bad("no rdf:Description found"))
    }
}

/// Union two responses about the same subject. Members with equal
/// (descriptor, type, text) merge their timestamp bags; the result is sorted,
/// which makes the operation commutative, associative, and idempotent.
pub fn merge_responses(
    a: &LinkStructureResponse,
    b: &LinkStructureResponse,
) -> Result<LinkStructureResponse, ServiceError> {
    let subj_a = canonicalize(&a.subject_uri);
    let subj_b = canonicalize(&b.subject_uri);
    let equal = match (&subj_a, &subj_b) {
        (Ok(x), Ok(y)) => x == y,
        _ => a.subject_uri == b.subject_uri,
    };
    if !equal {
        return Err(ServiceError::SubjectMismatch(
            a.subject_uri.clone(),
            b.subject_uri.clone(),
        ));
    }
    let merge_side = |xs: &[Member], ys: &[Member]| -> Vec<Member> {
        use std::collections::BTreeMap;
        let mut merged: BTreeMap<(String, String, String), BTreeSet<String>> = BTreeMap::new();
        for m in xs.iter().chain(ys) {
            merged
                .entry((m.descriptor.clone(), m.link_type.clone(), m.text.clone()))
                .or_default()
                .extend(m.timestamps.iter().cloned());
        }
        merged
            .into_iter()
            .map(|((descriptor, link_type, text), timestamps)| Member {
                descriptor,
                link_type,
                text,
                timestamps,
            })
            .collect()
    };
    Ok(LinkStructureResponse {
        subject_uri: a.subject_uri.clone(),
        outlinks: merge_side(&a.outlinks, &b.outlinks),
        inlinks: merge_side(&a.inlinks, &b.inlinks),
    })
}

/// Build the response for a URI straight from the store. Unknown URIs give
/// empty collections, not an error: a URI may exist only as a link target.
pub fn build_response(
    store: &GraphStore,
    uri: &str,
    range: Option<(&str, &str)>,
) -> Result<LinkStructureResponse, ServiceError> {
    let Ok(key) = canonicalize(uri) else {
        return Ok(LinkStructureResponse::empty(uri));
    };
    let id = uri_id(&key);
    let mut response = LinkStructureResponse::empty(uri);

    for edge in store.get_outlinks(id, range)? {
        let descriptor = store
            .get_id(edge.target_id)?
            .map(|(surt, _)| surt)
            .unwrap_or_else(|| edge.target_id.to_hex());
        response.outlinks.push(Member {
            descriptor,
            link_type: edge.link_type.as_str().to_string(),
            text: edge.text,
            timestamps: edge.datetimes.into_iter().collect(),
        });
    }

    use std::collections::BTreeMap;
    let mut inlink_members: BTreeMap<(String, String, String), BTreeSet<String>> = BTreeMap::new();
    for entry in store.get_inlinks(id, range)? {
        inlink_members
            .entry((
                entry.source_uri,
                entry.link_type.as_str().to_string(),
                entry.text,
            ))
            .or_default()
            .insert(entry.datetime);
    }
    for ((descriptor, link_type, text), timestamps) in inlink_members {
        response.inlinks.push(Member {
            descriptor,
            link_type,
            text,
            timestamps,
        });
    }
    Ok(response)
}

#[derive(Debug, Deserialize)]
struct LinkQueryParams {
    uri: Option<String>,
    from: Option<String>,
    to: Option<String>,
    format: Option<String>,
}

async fn handle_link_query(
    State(store): State<Arc<GraphStore>>,
    Query(params): Query<LinkQueryParams>,
) -> Response {
    let Some(uri) = params.uri else {
        return (StatusCode::BAD_REQUEST, "missing required parameter: uri").into_response();
    };
    let range = match (&params.from, &params.to) {
        (Some(from), Some(to)) => Some((from.as_str(), to.as_str())),
        (Some(from), None) => Some((from.as_str(), "99999999999999")),
        (None, Some(to)) => Some(("00000000000000", to.as_str())),
        (None, None) => None,
    };
    let response = match build_response(&store, &uri, range) {
        Ok(r) => r,
        Err(err) => {
            return (
                StatusCode::SERVICE_UNAVAILABLE,
                format!("store unavailable: {err}"),
            )
                .into_response()
        }
    };
    if params.format.as_deref() == Some("json") {
        (
            [(header::CONTENT_TYPE, "application/json")],
            serde_json::to_string_pretty(&response).expect("serializable"),
        )
            .into_response()
    } else {
        (
            [(header::CONTENT_TYPE, "application/rdf+xml")],
            response.to_rdf_xml(),
        )
            .into_response()
    }
}

pub fn router(store: Arc<GraphStore>) -> Router {
    Router::new()
        .route("/linkQuery", get(handle_link_query))
        .with_state(store)
}

/// Bind and serve on a background thread; returns the bound address.
pub fn spawn(
    store: Arc<GraphStore>,
    addr: SocketAddr,
) -> Result<(SocketAddr, std::thread::JoinHandle<()>), ServiceError> {
    let listener = std::net::TcpListener::bind(addr).map_err(ServiceError::Bind)?;
    listener.set_nonblocking(true).map_err(ServiceError::Bind)?;
    let local = listener.local_addr().map_err(ServiceError::Bind)?;
    let app = router(store);
    let handle = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            axum::serve(listener, app).await.expect("serve");
        });
    });
    Ok((local, handle))
}

/// Serve forever on the calling thread.
pub fn serve_blocking(store: Arc<GraphStore>, addr: SocketAddr) -> Result<(), ServiceError> {
    let (bound, handle) = spawn(store, addr)?;
    eprintln!("link service listening on http://{bound}/linkQuery");
    handle.join().map_err(|_| {
        ServiceError::Bind(std::io::Error::new(
            std::io::ErrorKind::Other,
            "server thread panicked",
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::LinkType;

    fn member(descriptor: &str, text: &str, timestamps: &[&str]) -> Member {
        Member {
            descriptor: descriptor.into(),
            link_type: LinkType::Href.as_str().into(),
            text: text.into(),
            timestamps: timestamps.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn listing_style_response() -> LinkStructureResponse {
        LinkStructureResponse {
            subject_uri: "vancouver2010.com".into(),
            outlinks: vec![
                member(
                    "org,paralympic-games)/news",
                    "News",
                    &["20091103011307", "20100130003005"],
                ),
                member(
                    "org,olympic-cross-country-skiing)/",
                    "Cross-Country Skiing",
                    &["20091110011557", "20100227081100"],
                ),
            ],
            inlinks: vec![member(
                "http://vancouver2010.teamgb.com/gallery/gillian-cooke/",
                "Official Vancouver Games site",
                &["20100217101229"],
            )],
        }
    }

    #[test]
    fn rdf_xml_has_listing_structure() {
        let xml = listing_style_response().to_rdf_xml();
        assert!(xml.contains(&format!("xmlns:rdf=\"{RDF_NS}\"")));
        assert!(xml.contains(&format!("xmlns:twg=\"{TWG_NS}\"")));
        assert!(xml.contains("<twg:hasOutlinks rdf:parseType=\"Collection\">"));
        assert!(xml.contains("<twg:hasInlinks rdf:parseType=\"Collection\">"));
        assert!(xml.contains("<rdf:li>20091103011307</rdf:li>"));
        assert!(xml.contains("<rdf:li>20100130003005</rdf:li>"));
        assert!(xml.contains("<twg:text>News</twg:text>"));
        assert!(xml.contains("rdf:about=\"http://vancouver2010.teamgb.com/gallery/gillian-cooke/\""));
    }

    #[test]
    fn rdf_xml_roundtrip() {
        let response = listing_style_response();
        let parsed = LinkStructureResponse::from_rdf_xml(&response.to_rdf_xml()).unwrap();
        assert_eq!(parsed, response);
    }

    #[test]
    fn empty_response_roundtrip() {
        let response = LinkStructureResponse::empty("http://unknown.example/");
        let parsed = LinkStructureResponse::from_rdf_xml(&response.to_rdf_xml()).unwrap();
        assert_eq!(parsed, response);
        assert!(parsed.outlinks.is_empty() && parsed.inlinks.is_empty());
    }

    #[test]
    fn escaping_survives_roundtrip_and_controls_drop() {
        let mut response = LinkStructureResponse::empty("http://a.org/?q=<b>&x=\"y\"");
        response.outlinks.push(member("org,b)/x?a=1&b=2", "a < b & \"c\"", &["20100101000000"]));
        let parsed = LinkStructureResponse::from_rdf_xml(&response.to_rdf_xml()).unwrap();
        assert_eq!(parsed, response);

        let mut dirty = response.clone();
        dirty.outlinks[0].text = "bell\x07here".into();
        let xml = dirty.to_rdf_xml();
        assert!(!xml.contains('\x07'));
        let parsed = LinkStructureResponse::from_rdf_xml(&xml).unwrap();
        assert_eq!(parsed.outlinks[0].text, "bellhere");
    }

    #[test]
    fn merge_identity_and_idempotence() {
        let r = listing_style_response();
        let empty = LinkStructureResponse::empty("vancouver2010.com");
        let merged = merge_responses(&r, &empty).unwrap();
        // merge sorts members; compare as sets
        let normalize = |r: &LinkStructureResponse| merge_responses(r, r).unwrap();
        assert_eq!(merged, normalize(&r));
        assert_eq!(merge_responses(&merged, &merged).unwrap(), merged);
    }

    #[test]
    fn merge_unions_timestamp_bags() {
        let mut a = LinkStructureResponse::empty("a.org");
        a.outlinks.push(member("org,b)/", "b", &["t1", "t2"]));
        let mut b = LinkStructureResponse::empty("a.org");
        b.outlinks.push(member("org,b)/", "b", &["t2", "t3"]));
        let merged = merge_responses(&a, &b).unwrap();
        assert_eq!(merged.outlinks.len(), 1);
        let expected: BTreeSet<String> = ["t1", "t2", "t3"].iter().map(|s| s.to_string()).collect();
        assert_eq!(merged.outlinks[0].timestamps, expected);
    }

    #[test]
    fn merge_rejects_subject_mismatch() {
        let a = LinkStructureResponse::empty("a.org");
        let b = LinkStructureResponse::empty("b.org");
        assert!(matches!(
            merge_responses(&a, &b),
            Err(ServiceError::SubjectMismatch(..))
        ));
    }

    #[test]
    fn merge_accepts_canonically_equal_subjects() {
        let a = LinkStructureResponse::empty("http://www.a.org/");
        let b = LinkStructureResponse::empty("http://a.org/");
        assert!(merge_responses(&a, &b).is_ok());
    }
}
