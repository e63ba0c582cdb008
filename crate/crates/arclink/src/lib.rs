//! Toolkit for building, storing, and serving the temporal web graph of a
//! web-archive collection.
//!
//! The pipeline runs in four stages: filter the crawl index (CDX) down to the
//! mementos that carry link structure, extract time-stamped outlinks from the
//! archived pages, persist them in a content-centric graph store, and serve
//! the link structure over HTTP as RDF/XML. On top of the store sit temporal
//! analytics: windowed PageRank, rank comparison, inlink anchor timelines,
//! coverage, and a scale-up cost model.

pub mod analytics;
pub mod cdx;
pub mod extract;
pub mod kv;
pub mod pipeline;
pub mod service;
pub mod store;
pub mod uri_id;
pub mod warc;
