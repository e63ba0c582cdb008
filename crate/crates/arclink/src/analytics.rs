//! Analytics over the stored temporal graph: windowed PageRank, rank-list
//! comparison (top-k overlap and Kendall's tau), inlink anchor timelines,
//! crawl coverage, and the back-of-envelope cost model for scaling the
//! pipeline to a full crawl corpus.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::store::{GraphStore, StoreError};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot rank an empty graph")]
    EmptyGraph,
    #[error("bad window {0:?}: expected YYYYMM")]
    BadWindow(String),
}

/// Time slice for graph construction: everything, or one UTC calendar month.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Window {
    Whole,
    /// "YYYYMM" — captures whose 14-digit datetime starts with this prefix
    Month(String),
}

impl Window {
    pub fn parse(text: Option<&str>) -> Result<Self, AnalyticsError> {
        match text {
            None => Ok(Window::Whole),
            Some(t) => {
                if t.len() == 6 && t.bytes().all(|b| b.is_ascii_digit()) {
                    Ok(Window::Month(t.to_string()))
                } else {
                    Err(AnalyticsError::BadWindow(t.to_string()))
                }
            }
        }
    }

    fn contains(&self, datetime: &str) -> bool {
        match self {
            Window::Whole => true,
            Window::Month(prefix) => datetime.starts_with(prefix.as_str()),
        }
    }
}

/// Directed graph keyed by SURT string, with deduplicated edges.
#[derive(Debug, Clone, Default)]
pub struct WindowedGraph {
    /// sorted, deduplicated
    pub nodes: Vec<String>,
    /// source index -> sorted target indexes
    pub outlinks: Vec<Vec<usize>>,
}

impl WindowedGraph {
    pub fn from_edges<I, S>(edges: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let pairs: Vec<(String, String)> =
            edges.into_iter().map(|(a, b)| (a.into(), b.into())).collect();
        let mut nodes: BTreeSet<String> = BTreeSet::new();
        for (src, tgt) in &pairs {
            nodes.insert(src.clone());
            nodes.insert(tgt.clone());
        }
        let nodes: Vec<String> = nodes.into_iter().collect();
        let index: HashMap<&str, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut outlinks: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nodes.len()];
        for (src, tgt) in &pairs {
            outlinks[index[src.as_str()]].insert(index[tgt.as_str()]);
        }
        WindowedGraph {
            outlinks: outlinks
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            nodes,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.outlinks.iter().map(Vec::len).sum()
    }
}

/// Build the link graph restricted to captures inside the window.
pub fn build_window_graph(
    store: &GraphStore,
    window: &Window,
) -> Result<WindowedGraph, AnalyticsError> {
    let mut edges = Vec::new();
    for quad in store.export_quads()? {
        let mut parts = quad.split('\t');
        let (Some(src), Some(tgt), Some(dt)) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        if window.contains(dt) {
            edges.push((src.to_string(), tgt.to_string()));
        }
    }
    Ok(WindowedGraph::from_edges(edges))
}

#[derive(Debug, Clone, Copy)]
pub struct PageRankOptions {
    pub damping: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for PageRankOptions {
    fn default() -> Self {
        PageRankOptions {
            damping: 0.85,
            epsilon: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Scores sorted descending; ties broken by SURT key ascending.
#[derive(Debug, Clone)]
pub struct RankTable {
    pub entries: Vec<(String, f64)>,
    pub iterations: usize,
}

impl RankTable {
    pub fn top_k(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }

    fn rank_of(&self, key: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == key).map(|i| i + 1)
    }
}

/// Power iteration with uniform teleport and uniform redistribution of
/// dangling mass; the score vector stays an exact probability distribution.
pub fn pagerank(
    graph: &WindowedGraph,
    opts: PageRankOptions,
) -> Result<RankTable, AnalyticsError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(AnalyticsError::EmptyGraph);
    }
    let nf = n as f64;
    let d = opts.damping;
    let mut scores = vec![1.0 / nf; n];
    let mut iterations = 0;
    for _ in 0..opts.max_iterations {
        iterations += 1;
        let mut next = vec![0.0f64; n];
        let mut dangling_mass = 0.0;
        for (src, targets) in graph.outlinks.iter().enumerate() {
            if targets.is_empty() {
                dangling_mass += scores[src];
            } else {
                let share = scores[src] / targets.len() as f64;
                for &tgt in targets {
                    next[tgt] += share;
                }
            }
        }
        let base = (1.0 - d) / nf + d * dangling_mass / nf;
        let mut delta = 0.0;
        for (i, value) in next.iter_mut().enumerate() {
            *value = base + d * *value;
            delta += (*value - scores[i]).abs();
        }
        scores = next;
        if delta < opts.epsilon {
            break;
        }
    }
    let mut entries: Vec<(String, f64)> = graph
        .nodes
        .iter()
        .cloned()
        .zip(scores)
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(RankTable {
        entries,
        iterations,
    })
}

/// Fraction of the top-k sets that coincide: |topk(a) ∩ topk(b)| / k.
pub fn top_k_overlap(a: &RankTable, b: &RankTable, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let set_a: BTreeSet<&str> = a.top_k(k).iter().map(|(n, _)| n.as_str()).collect();
    let set_b: BTreeSet<&str> = b.top_k(k).iter().map(|(n, _)| n.as_str()).collect();
    set_a.intersection(&set_b).count() as f64 / k as f64
}

/// Kendall's tau over the intersection of the two top-k sets, using ranks
/// taken from the full tables. Returns None when fewer than two items are
/// shared, since the statistic is undefined there.
pub fn kendall_tau_topk(a: &RankTable, b: &RankTable, k: usize) -> Option<f64> {
    let set_a: BTreeSet<&str> = a.top_k(k).iter().map(|(n, _)| n.as_str()).collect();
    let set_b: BTreeSet<&str> = b.top_k(k).iter().map(|(n, _)| n.as_str()).collect();
    let shared: Vec<&str> = set_a.intersection(&set_b).copied().collect();
    let n = shared.len();
    if n < 2 {
        return None;
    }
    let ranks: Vec<(usize, usize)> = shared
        .iter()
        .map(|key| (a.rank_of(key).unwrap(), b.rank_of(key).unwrap()))
        .collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            let da = ranks[i].0 as i64 - ranks[j].0 as i64;
            let db = ranks[i].1 as i64 - ranks[j].1 as i64;
            if da * db > 0 {
                concordant += 1;
            } else if da * db < 0 {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Some((concordant - discordant) as f64 / pairs)
}

/// One dated anchor-text observation pointing at the queried URI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineEntry {
    /// DD-Mon-YY rendering of the capture datetime
    pub date: String,
    pub datetime: String,
    pub source_uri: String,
    pub text: String,
}

const MONTHS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

/// Render a 14-digit datetime as DD-Mon-YY; falls back to the raw value for
/// malformed input rather than failing the whole timeline.
pub fn render_date(datetime: &str) -> String {
    if datetime.len() >= 8 && datetime.bytes().take(8).all(|b| b.is_ascii_digit()) {
        let month: usize = datetime[4..6].parse().unwrap_or(0);
        if (1..=12).contains(&month) {
            return format!("{}-{}-{}", &datetime[6..8], MONTHS[month - 1], &datetime[2..4]);
        }
    }
    datetime.to_string()
}

/// How a URI was described over time: the anchor text of every dated inlink,
/// in capture order.
pub fn inlink_anchor_timeline(
    store: &GraphStore,
    uri: &str,
) -> Result<Vec<TimelineEntry>, AnalyticsError> {
    let Ok((_, id)) = crate::uri_id::id_of(uri) else {
        return Ok(Vec::new());
    };
    let mut entries: Vec<TimelineEntry> = store
        .get_inlinks(id, None)?
        .into_iter()
        .map(|e| TimelineEntry {
            date: render_date(&e.datetime),
            datetime: e.datetime,
            source_uri: e.source_uri,
            text: e.text,
        })
        .collect();
    entries.sort_by(|a, b| {
        a.datetime
            .cmp(&b.datetime)
            .then_with(|| a.source_uri.cmp(&b.source_uri))
            .then_with(|| a.text.cmp(&b.text))
    });
    Ok(entries)
}

/// Crawl frontier coverage: how much of the discovered graph was captured.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// URIs with at least one stored capture
    pub crawled_nodes: usize,
    /// URIs known only as link targets
    pub uncrawled_nodes: usize,
    pub total_nodes: usize,
    pub edge_count: usize,
    pub crawled_fraction: f64,
}

pub fn coverage_report(store: &GraphStore) -> Result<CoverageReport, AnalyticsError> {
    let crawled: BTreeSet<_> = store
        .observations()?
        .into_iter()
        .map(|o| o.source_id)
        .collect();
    let crawled_surts: BTreeSet<String> = crawled
        .iter()
        .filter_map(|id| store.get_id(*id).ok().flatten().map(|(s, _)| s))
        .collect();
    let graph = build_window_graph(store, &Window::Whole)?;
    let mut node_set: BTreeSet<String> = graph.nodes.iter().cloned().collect();
    node_set.extend(crawled_surts.iter().cloned());
    let total = node_set.len();
    let crawled_count = node_set
        .iter()
        .filter(|n| crawled_surts.contains(*n))
        .count();
    Ok(CoverageReport {
        crawled_nodes: crawled_count,
        uncrawled_nodes: total - crawled_count,
        total_nodes: total,
        edge_count: graph.edge_count(),
        crawled_fraction: if total == 0 {
            0.0
        } else {
            crawled_count as f64 / total as f64
        },
    })
}

/// Scale-up cost model with measured per-million-record coefficients.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    /// seconds to filter one million index records on one machine
    pub filter_secs_per_million: f64,
    /// fraction of index records surviving the default filter chain
    pub survival_rate: f64,
    /// hours to extract links from one million captures on one machine
    pub extract_hours_per_million: f64,
    /// graph storage size as a fraction of raw corpus size:
    /// outlinks + inlinks + identifiers
    pub outlink_fraction: f64,
    pub inlink_fraction: f64,
    pub id_fraction: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            filter_secs_per_million: 88.0,
            survival_rate: 0.30,
            extract_hours_per_million: 5.5,
            outlink_fraction: 0.05,
            inlink_fraction: 0.05,
            id_fraction: 0.002,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub filtering_secs: f64,
    pub filtering_hours: f64,
    pub surviving_records: f64,
    pub extraction_hours: f64,
    pub extraction_days: f64,
    /// same unit as the corpus size passed in
    pub storage_size: f64,
}

impl CostModel {
    pub fn filtering_time_secs(&self, records: f64, machines: f64) -> f64 {
        records / 1e6 * self.filter_secs_per_million / machines
    }

    pub fn surviving_records(&self, records: f64) -> f64 {
        records * self.survival_rate
    }

    pub fn extraction_time_hours(&self, captures: f64, machines: f64) -> f64 {
        captures / 1e6 * self.extract_hours_per_million / machines
    }

    pub fn storage_size(&self, corpus_size: f64) -> f64 {
        corpus_size * (self.outlink_fraction + self.inlink_fraction + self.id_fraction)
    }

    pub fn estimate(&self, records: f64, machines: f64, corpus_size: f64) -> CostEstimate {
        let filtering_secs = self.filtering_time_secs(records, machines);
        let surviving = self.surviving_records(records);
        let extraction_hours = self.extraction_time_hours(surviving, machines);
        CostEstimate {
            filtering_secs,
            filtering_hours: filtering_secs / 3600.0,
            surviving_records: surviving,
            extraction_hours,
            extraction_days: extraction_hours / 24.0,
            storage_size: self.storage_size(corpus_size),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, &str)]) -> WindowedGraph {
        WindowedGraph::from_edges(edges.iter().map(|&(a, b)| (a, b)))
    }

    fn table(entries: &[&str]) -> RankTable {
        RankTable {
            entries: entries
                .iter()
                .enumerate()
                .map(|(i, n)| (n.to_string(), 1.0 / (i + 1) as f64))
                .collect(),
            iterations: 0,
        }
    }

    #[test]
    fn three_cycle_is_uniform() {
        let g = graph(&[("a", "b"), ("b", "c"), ("c", "a")]);
        let t = pagerank(&g, PageRankOptions::default()).unwrap();
        for (_, score) in &t.entries {
            assert!((score - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_sum_to_one_with_dangling() {
        let g = graph(&[("a", "b"), ("a", "c"), ("b", "c")]); // c is dangling
        let t = pagerank(&g, PageRankOptions::default()).unwrap();
        let sum: f64 = t.entries.iter().map(|(_, s)| s).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        // c receives from both; it should outrank a (only teleport inflow)
        assert_eq!(t.entries[0].0, "c");
        assert_eq!(t.entries.last().unwrap().0, "a");
    }

    #[test]
    fn empty_graph_is_an_error() {
        let g = WindowedGraph::default();
        assert!(matches!(
            pagerank(&g, PageRankOptions::default()),
            Err(AnalyticsError::EmptyGraph)
        ));
    }

    #[test]
    fn ties_break_by_key_ascending() {
        // two disjoint 2-cycles: all scores identical
        let g = graph(&[("b", "d"), ("d", "b"), ("a", "c"), ("c", "a")]);
        let t = pagerank(&g, PageRankOptions::default()).unwrap();
        let order: Vec<&str> = t.entries.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn overlap_counts_shared_top_k_members() {
        let a = table(&["a", "b", "c", "d"]);
        let b = table(&["a", "c", "x", "y"]);
        assert!((top_k_overlap(&a, &b, 2) - 0.5).abs() < 1e-12);
        assert!((top_k_overlap(&a, &a, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tau_extremes() {
        let a = table(&["a", "b", "c", "d"]);
        let rev = table(&["d", "c", "b", "a"]);
        assert_eq!(kendall_tau_topk(&a, &a, 4), Some(1.0));
        assert_eq!(kendall_tau_topk(&a, &rev, 4), Some(-1.0));
    }

    #[test]
    fn tau_six_item_hand_example() {
        // b-ranks of a's order (1..6) are (3,6,5,1,4,2): 10 inversions,
        // so tau = (5 - 10) / 15 = -1/3
        let a = table(&["a", "b", "c", "d", "e", "f"]);
        let b = table(&["d", "f", "a", "e", "c", "b"]);
        let tau = kendall_tau_topk(&a, &b, 6).unwrap();
        assert!((tau - (-1.0 / 3.0)).abs() < 1e-12, "tau = {tau}");
    }

    #[test]
    fn tau_undefined_below_two_shared() {
        let a = table(&["a", "b"]);
        let b = table(&["x", "y"]);
        assert_eq!(kendall_tau_topk(&a, &b, 2), None);
        let c = table(&["a", "y"]);
        assert_eq!(kendall_tau_topk(&a, &c, 1), None);
    }

    #[test]
    fn window_parse_and_filter() {
        assert_eq!(Window::parse(None).unwrap(), Window::Whole);
        assert_eq!(
            Window::parse(Some("201002")).unwrap(),
            Window::Month("201002".into())
        );
        assert!(Window::parse(Some("2010-02")).is_err());
        assert!(Window::Month("201002".into()).contains("20100217101229"));
        assert!(!Window::Month("201002".into()).contains("20100317101229"));
    }

    #[test]
    fn date_rendering() {
        assert_eq!(render_date("20100217101229"), "17-Feb-10");
        assert_eq!(render_date("19991231235959"), "31-Dec-99");
        assert_eq!(render_date("bogus"), "bogus");
    }

    #[test]
    fn cost_model_reproduces_reference_scale_up() {
        let m = CostModel::default();
        // 240 billion index records across 100 machines
        let est = m.estimate(240e9, 100.0, 5.0); // corpus size in PB
        assert!((est.filtering_secs - 211_200.0).abs() < 1e-6);
        assert!((est.filtering_hours - 58.666_666_666).abs() < 1e-3);
        assert!((est.surviving_records - 72e9).abs() < 1.0);
        assert!((est.extraction_hours - 3_960.0).abs() < 1e-6);
        assert!((est.extraction_days - 165.0).abs() < 1e-9);
        assert!((est.storage_size - 0.51).abs() < 1e-12);
    }

    #[test]
    fn graph_dedupes_edges() {
        let g = graph(&[("a", "b"), ("a", "b"), ("b", "a")]);
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
    }
}
