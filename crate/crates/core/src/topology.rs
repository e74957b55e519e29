//! Balanced Forman curvature on the undirected simplification of a triple set.
//!
//! For an edge `s ~ o` with degrees `d_s`, `d_o`:
//!
//! ```text
//! ric = 2/d_s + 2/d_o - 2
//!     + 2 |tri| / max(d_s, d_o) + |tri| / min(d_s, d_o)
//!     + (|sq_s| + |sq_o|) / (gamma_max * max(d_s, d_o))
//! ```
//!
//! `tri` are common neighbours, `sq_s` the neighbours of `s` that close a
//! diagonal-free 4-cycle `s-k-w-o` and `sq_o` the `w` endpoints of those
//! cycles. `gamma_max` is the largest number of such cycles passing through a
//! single node. Leaf edges (`min(d_s, d_o) = 1`) have curvature 0 and the last
//! term vanishes when there are no 4-cycles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{HkgError, Result};
use crate::model::Triple;
use crate::par;

/// Undirected graph without self-loops or parallel edges.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimpleGraph {
    adjacency: Vec<Vec<u32>>,
    edges: Vec<(u32, u32)>,
    pub self_loops_dropped: usize,
    pub duplicate_edges_dropped: usize,
}

impl SimpleGraph {
    /// Builds from `(u, v)` pairs over nodes `0..n_nodes` (grown as needed).
    pub fn from_edges(n_nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut n = n_nodes;
        let mut self_loops = 0;
        let mut raw = Vec::new();
        for (u, v) in pairs {
            if u == v {
                self_loops += 1;
                continue;
            }
            n = n.max(u + 1).max(v + 1);
            raw.push((u.min(v) as u32, u.max(v) as u32));
        }
        let total = raw.len();
        raw.sort_unstable();
        raw.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &raw {
            adjacency[u as usize].push(v);
            adjacency[v as usize].push(u);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        SimpleGraph {
            duplicate_edges_dropped: total - raw.len(),
            edges: raw,
            adjacency,
            self_loops_dropped: self_loops,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[u32] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.get(node).map_or(0, Vec::len)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_nodes() && v < self.n_nodes() && self.adjacency[u].binary_search(&(v as u32)).is_ok()
    }

    fn check_edge(&self, s: usize, o: usize) -> Result<()> {
        if self.has_edge(s, o) {
            Ok(())
        } else {
            Err(HkgError::MissingEdge(s, o))
        }
    }
}

/// Ignores relation labels and direction; drops self-loops; merges parallel edges.
pub fn build_simple_graph(triples: &[Triple], n_nodes: usize) -> SimpleGraph {
    SimpleGraph::from_edges(
        n_nodes,
        triples.iter().map(|t| (t.subject.0 as usize, t.object.0 as usize)),
    )
}

/// Number of common neighbours of `s` and `o`.
pub fn triangles(g: &SimpleGraph, s: usize, o: usize) -> Result<usize> {
    g.check_edge(s, o)?;
    let (a, b) = (g.neighbors(s), g.neighbors(o));
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(n)
}

/// Which degenerate-case convention fixed an edge's curvature, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    None,
    /// `min(d_s, d_o) = 1`: curvature set to 0.
    Leaf,
    /// `gamma_max = 0`: the 4-cycle term is 0.
    NoSquares,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::None => "none",
            Convention::Leaf => "leaf",
            Convention::NoSquares => "no_squares",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeCurvature {
    pub s: usize,
    pub o: usize,
    pub d_s: usize,
    pub d_o: usize,
    pub triangles: usize,
    pub sq_s: usize,
    pub sq_o: usize,
    pub gamma_max: usize,
    pub ric: f64,
    pub convention: Convention,
}

/// Evaluates the curvature expression from its integer components.
pub fn ric_from_components(d_s: usize, d_o: usize, tri: usize, sq_s: usize, sq_o: usize, gamma_max: usize) -> (f64, Convention) {
    let (lo, hi) = (d_s.min(d_o), d_s.max(d_o));
    if lo <= 1 {
        return (0.0, Convention::Leaf);
    }
    let (ds, dob, lo, hi, t) = (d_s as f64, d_o as f64, lo as f64, hi as f64, tri as f64);
    let mut ric = 2.0 / ds + 2.0 / dob - 2.0 + 2.0 * t / hi + t / lo;
    if gamma_max == 0 {
        return (ric, Convention::NoSquares);
    }
    ric += (sq_s + sq_o) as f64 / (gamma_max as f64 * hi);
    (ric, Convention::None)
}

/// Reusable per-worker marks so each edge costs O(local neighbourhood).
pub struct Scratch {
    in_s: Vec<u32>,
    in_o: Vec<u32>,
    in_w: Vec<u32>,
    hits: Vec<u32>,
    touched: Vec<u32>,
    stamp: u32,
}

impl Scratch {
    pub fn new(n_nodes: usize) -> Self {
        Scratch {
            in_s: vec![0; n_nodes],
            in_o: vec![0; n_nodes],
            in_w: vec![0; n_nodes],
            hits: vec![0; n_nodes],
            touched: Vec::new(),
            stamp: 0,
        }
    }

    fn next_stamp(&mut self) -> u32 {
        if self.stamp == u32::MAX {
            self.in_s.fill(0);
            self.in_o.fill(0);
            self.in_w.fill(0);
            self.stamp = 0;
        }
        self.stamp += 1;
        self.stamp
    }
}

/// Returns `(|sq_s|, |sq_o|, gamma_max)` for edge `(s, o)`.
pub fn squares(g: &SimpleGraph, s: usize, o: usize) -> Result<(usize, usize, usize)> {
    g.check_edge(s, o)?;
    let mut scratch = Scratch::new(g.n_nodes());
    let (_, sq_s, sq_o, gamma) = components(g, s, o, &mut scratch);
    Ok((sq_s, sq_o, gamma))
}

/// `(triangles, sq_s, sq_o, gamma_max)` of an existing edge.
fn components(g: &SimpleGraph, s: usize, o: usize, sc: &mut Scratch) -> (usize, usize, usize, usize) {
    let stamp = sc.next_stamp();
    for &v in g.neighbors(s) {
        sc.in_s[v as usize] = stamp;
    }
    for &v in g.neighbors(o) {
        sc.in_o[v as usize] = stamp;
    }
    let tri = g.neighbors(s).iter().filter(|&&k| sc.in_o[k as usize] == stamp).count();

    // Candidate cycle nodes: k on the s side, w on the o side, neither adjacent
    // to the opposite endpoint (no diagonals).
    let ks: Vec<u32> = g
        .neighbors(s)
        .iter()
        .copied()
        .filter(|&k| k as usize != o && sc.in_o[k as usize] != stamp)
        .collect();
    let ws: Vec<u32> = g
        .neighbors(o)
        .iter()
        .copied()
        .filter(|&w| w as usize != s && sc.in_s[w as usize] != stamp)
        .collect();
    if ks.is_empty() || ws.is_empty() {
        return (tri, 0, 0, 0);
    }

    // Enumerate cycle pairs from the cheaper side: for each node on `from`,
    // look for neighbours in `to`.
    let cost_k: usize = ks.iter().map(|&k| g.degree(k as usize)).sum();
    let cost_w: usize = ws.iter().map(|&w| g.degree(w as usize)).sum();
    let (from, to) = if cost_k <= cost_w { (&ks, &ws) } else { (&ws, &ks) };
    for &t in to.iter() {
        sc.in_w[t as usize] = stamp;
    }
    let mut n_from = 0;
    let mut gamma = 0u32;
    sc.touched.clear();
    for &u in from.iter() {
        let mut c = 0u32;
        for &v in g.neighbors(u as usize) {
            if sc.in_w[v as usize] == stamp {
                c += 1;
                if sc.hits[v as usize] == 0 {
                    sc.touched.push(v);
                }
                sc.hits[v as usize] += 1;
            }
        }
        if c > 0 {
            n_from += 1;
            gamma = gamma.max(c);
        }
    }
    let n_to = sc.touched.len();
    for &v in &sc.touched {
        gamma = gamma.max(sc.hits[v as usize]);
        sc.hits[v as usize] = 0;
    }
    let (sq_s, sq_o) = if cost_k <= cost_w { (n_from, n_to) } else { (n_to, n_from) };
    (tri, sq_s, sq_o, gamma as usize)
}

fn curvature_with(g: &SimpleGraph, s: usize, o: usize, sc: &mut Scratch) -> EdgeCurvature {
    let (tri, sq_s, sq_o, gamma_max) = components(g, s, o, sc);
    let (d_s, d_o) = (g.degree(s), g.degree(o));
    let (ric, convention) = ric_from_components(d_s, d_o, tri, sq_s, sq_o, gamma_max);
    EdgeCurvature {
        s,
        o,
        d_s,
        d_o,
        triangles: tri,
        sq_s,
        sq_o,
        gamma_max,
        ric,
        convention,
    }
}

/// Balanced Forman curvature of edge `(s, o)`.
pub fn balanced_forman(g: &SimpleGraph, s: usize, o: usize) -> Result<EdgeCurvature> {
    g.check_edge(s, o)?;
    let mut sc = Scratch::new(g.n_nodes());
    Ok(curvature_with(g, s, o, &mut sc))
}

pub const BRUTE_FORCE_MAX_NODES: usize = 64;

/// Exhaustive-enumeration reference for [`balanced_forman`] on graphs of at most 64 nodes.
///
/// Triangles are found by testing every third node; 4-cycles by testing every
/// ordered node pair `(k, w)` for the cycle `s-k-w-o` and the absence of both
/// diagonals.
pub fn brute_force_curvature(g: &SimpleGraph, s: usize, o: usize) -> Result<EdgeCurvature> {
    let n = g.n_nodes();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(HkgError::GraphTooLarge {
            nodes: n,
            limit: BRUTE_FORCE_MAX_NODES,
        });
    }
    let mut adj = [0u64; BRUTE_FORCE_MAX_NODES];
    for &(u, v) in g.edges() {
        adj[u as usize] |= 1 << v;
        adj[v as usize] |= 1 << u;
    }
    let linked = |a: usize, b: usize| adj[a] >> b & 1 == 1;
    if !linked(s, o) {
        return Err(HkgError::MissingEdge(s, o));
    }
    let tri = (0..n).filter(|&v| v != s && v != o && linked(v, s) && linked(v, o)).count();
    let mut per_node = vec![0usize; n];
    let mut side_s = vec![false; n];
    let mut side_o = vec![false; n];
    for k in 0..n {
        for w in 0..n {
            if [s, o].contains(&k) || [s, o].contains(&w) || k == w {
                continue;
            }
            let cycle = linked(s, k) && linked(k, w) && linked(w, o);
            let diagonal = linked(k, o) || linked(w, s);
            if cycle && !diagonal {
                side_s[k] = true;
                side_o[w] = true;
                per_node[k] += 1;
                per_node[w] += 1;
            }
        }
    }
    let sq_s = side_s.iter().filter(|&&b| b).count();
    let sq_o = side_o.iter().filter(|&&b| b).count();
    let gamma_max = per_node.iter().copied().max().unwrap_or(0);
    let (d_s, d_o) = (adj[s].count_ones() as usize, adj[o].count_ones() as usize);
    let (ric, convention) = ric_from_components(d_s, d_o, tri, sq_s, sq_o, gamma_max);
    Ok(EdgeCurvature {
        s,
        o,
        d_s,
        d_o,
        triangles: tri,
        sq_s,
        sq_o,
        gamma_max,
        ric,
        convention,
    })
}

/// Per-edge curvatures plus the over-squashing summary.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    /// One entry per edge, in canonical edge order (`u < v`, sorted).
    pub edges: Vec<EdgeCurvature>,
    /// All curvatures sorted ascending.
    pub sorted: Vec<f64>,
    /// Fraction of edges with `ric <= 0`; NaN for an edgeless graph.
    pub proportion_nonpositive: f64,
    pub n_nonpositive: usize,
    pub n_negative: usize,
}

pub fn curvature_report(g: &SimpleGraph) -> CurvatureReport {
    curvature_report_with(g, par::Mode::Auto)
}

pub fn curvature_report_with(g: &SimpleGraph, mode: par::Mode) -> CurvatureReport {
    let n = g.n_nodes();
    let edges = par::map_init(g.edges(), mode, || Scratch::new(n), |sc, &(u, v)| {
        curvature_with(g, u as usize, v as usize, sc)
    });
    let mut sorted: Vec<f64> = edges.iter().map(|e| e.ric).collect();
    sorted.sort_by(f64::total_cmp);
    let n_nonpositive = sorted.partition_point(|&r| r <= 0.0);
    let n_negative = sorted.partition_point(|&r| r < 0.0);
    let proportion_nonpositive = if sorted.is_empty() {
        f64::NAN
    } else {
        n_nonpositive as f64 / sorted.len() as f64
    };
    CurvatureReport {
        edges,
        sorted,
        proportion_nonpositive,
        n_nonpositive,
        n_negative,
    }
}

impl CurvatureReport {
    /// CSV with one row per edge and a `#` footer carrying the summary.
    pub fn write_csv<W: Write>(&self, mut out: W, labels: Option<&dyn Fn(usize) -> String>) -> std::io::Result<()> {
        writeln!(out, "s,o,d_s,d_o,triangles,sq_s,sq_o,gamma_max,ric,convention")?;
        for e in &self.edges {
            let (s, o) = match labels {
                Some(f) => (csv_field(&f(e.s)), csv_field(&f(e.o))),
                None => (e.s.to_string(), e.o.to_string()),
            };
            writeln!(
                out,
                "{s},{o},{},{},{},{},{},{},{},{}",
                e.d_s,
                e.d_o,
                e.triangles,
                e.sq_s,
                e.sq_o,
                e.gamma_max,
                e.ric,
                e.convention.name()
            )?;
        }
        writeln!(
            out,
            "# over_squashing_proportion={} nonpositive={} negative={} edges={}",
            self.proportion_nonpositive,
            self.n_nonpositive,
            self.n_negative,
            self.edges.len()
        )
    }

    /// `(rank, ric)` pairs with 1-based ranks in ascending curvature order.
    pub fn write_distribution<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rank,ric")?;
        for (i, r) in self.sorted.iter().enumerate() {
            writeln!(out, "{},{r}", i + 1)?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
