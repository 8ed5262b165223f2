//! Weighted category graph and shortest-distance document harvesting.
//!
//! Snapshot lines:
//!
//! ```text
//! N <id>\t<name>\t<description>
//! E <u>\t<v>
//! D <node_id>\t<doc_id>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbedderModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::taxonomy::Taxonomy;
use crate::textpipe::Tokenizer;

pub const MANIFEST_FILE: &str = ".harvest_manifest.tsv";
pub const SHORTFALL_FILE: &str = ".shortfall.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMetric {
    /// `1 - cos`.
    #[default]
    OneMinusCos,
    /// Angle scaled to `[0, 2]`: `2·acos(cos)/π`.
    Arccos,
}

/// Weight of an edge between vectors; a missing vector counts as orthogonal.
pub fn edge_weight(u: Option<&[f64]>, v: Option<&[f64]>, metric: EdgeMetric) -> Result<f64> {
    let cos = match (u, v) {
        (Some(u), Some(v)) => cosine_similarity(u, v)?,
        _ => 0.0,
    };
    let w = match metric {
        EdgeMetric::OneMinusCos => 1.0 - cos,
        EdgeMetric::Arccos => 2.0 * cos.acos() / std::f64::consts::PI,
    };
    Ok(w.clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: String,
    pub name: String,
    pub description: Option<String>,
    pub vector: Option<Vec<f64>>,
    /// Set by [`embed_nodes`] when the node text had no vocabulary word.
    pub no_known_tokens: bool,
    pub documents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryGraph {
    nodes: Vec<GraphNode>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    /// Outgoing edge indices per node.
    out: Vec<Vec<usize>>,
}

fn is_safe_doc_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl CategoryGraph {
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = CategoryGraph::default();
        let loc = |n: usize| format!("snapshot line {}", n + 1);
        let body = |n: usize, line: &str| -> Result<Vec<String>> {
            let rest = line
                .get(2..)
                .filter(|_| line.as_bytes().get(1) == Some(&b' '))
                .ok_or_else(|| Error::parse(loc(n), "expected `<kind> <fields>`"))?;
            Ok(rest.split('\t').map(|s| s.trim().to_string()).collect())
        };
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .collect();

        for &(n, line) in &lines {
            match line.as_bytes()[0] {
                b'N' => {
                    let f = body(n, line)?;
                    let id = f[0].clone();
                    if id.is_empty() {
                        return Err(Error::parse(loc(n), "empty node id"));
                    }
                    if g.index.contains_key(&id) {
                        return Err(Error::DuplicateId(id));
                    }
                    g.index.insert(id.clone(), g.nodes.len());
                    g.nodes.push(GraphNode {
                        id,
                        name: f.get(1).cloned().unwrap_or_default(),
                        description: f.get(2).filter(|d| !d.is_empty()).cloned(),
                        vector: None,
                        no_known_tokens: false,
                        documents: Vec::new(),
                    });
                    g.out.push(Vec::new());
                }
                b'E' | b'D' => {}
                _ => return Err(Error::parse(loc(n), "line must start with N, E or D")),
            }
        }
        for &(n, line) in &lines {
            let kind = line.as_bytes()[0];
            if kind == b'N' {
                continue;
            }
            let f = body(n, line)?;
            if f.len() != 2 {
                return Err(Error::parse(loc(n), "expected two tab-separated fields"));
            }
            if kind == b'E' {
                let (u, v) = match (g.index.get(&f[0]), g.index.get(&f[1])) {
                    (Some(&u), Some(&v)) => (u, v),
                    _ => {
                        return Err(Error::DanglingEdge {
                            u: f[0].clone(),
                            v: f[1].clone(),
                        })
                    }
                };
                g.out[u].push(g.edges.len());
                g.edges.push(Edge { u, v, weight: None });
            } else {
                let node = *g
                    .index
                    .get(&f[0])
                    .ok_or_else(|| Error::UnknownNode(f[0].clone()))?;
                if !is_safe_doc_id(&f[1]) {
                    return Err(Error::parse(loc(n), format!("unsafe document id `{}`", f[1])));
                }
                g.nodes[node].documents.push(f[1].clone());
            }
        }
        Ok(g)
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.find(id).map(|i| &self.nodes[i])
    }

    /// Adds a node; used to build graphs in code.
    pub fn add_node(&mut self, id: &str, name: &str, description: Option<&str>) -> Result<usize> {
        if self.index.contains_key(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let i = self.nodes.len();
        self.index.insert(id.to_string(), i);
        self.nodes.push(GraphNode {
            id: id.to_string(),
            name: name.to_string(),
            description: description.map(str::to_string),
            vector: None,
            no_known_tokens: false,
            documents: Vec::new(),
        });
        self.out.push(Vec::new());
        Ok(i)
    }

    pub fn add_edge(&mut self, u: &str, v: &str, weight: Option<f64>) -> Result<()> {
        let (Some(ui), Some(vi)) = (self.find(u), self.find(v)) else {
            return Err(Error::DanglingEdge {
                u: u.to_string(),
                v: v.to_string(),
            });
        };
        self.out[ui].push(self.edges.len());
        self.edges.push(Edge { u: ui, v: vi, weight });
        Ok(())
    }

    pub fn add_document(&mut self, node: &str, doc_id: &str) -> Result<()> {
        let i = self.find(node).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        self.nodes[i].documents.push(doc_id.to_string());
        Ok(())
    }

    pub fn set_vector(&mut self, node: &str, vector: Vec<f64>) -> Result<()> {
        let i = self.find(node).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        self.nodes[i].vector = Some(vector);
        Ok(())
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<CategoryGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CategoryGraph::parse(&text)
}

/// Infers a vector for every node from its name and description. Returns the
/// ids of nodes whose text had no vocabulary word; those get the zero vector.
pub fn embed_nodes<T: Scalar>(
    g: &mut CategoryGraph,
    model: &EmbedderModel<T>,
    tokenizer: &Tokenizer,
) -> Result<Vec<String>> {
    let steps = model.params.infer_steps;
    let vectors: Vec<(Vec<f64>, bool)> = g
        .nodes
        .par_iter()
        .map(|n| {
            let mut text = n.name.clone();
            if let Some(d) = &n.description {
                text.push(' ');
                text.push_str(d);
            }
            let v = model.infer_vector(&tokenizer.tokenize(&text), steps)?;
            Ok((v.values.iter().map(|x| x.to_f64_exact()).collect(), v.no_known_tokens))
        })
        .collect::<Result<_>>()?;
    let mut flagged = Vec::new();
    for (n, (v, empty)) in g.nodes.iter_mut().zip(vectors) {
        n.vector = Some(v);
        n.no_known_tokens = empty;
        if empty {
            flagged.push(n.id.clone());
        }
    }
    Ok(flagged)
}

pub fn weight_edges(g: &mut CategoryGraph, metric: EdgeMetric) -> Result<()> {
    for i in 0..g.edges.len() {
        let (u, v) = (g.edges[i].u, g.edges[i].v);
        g.edges[i].weight = Some(edge_weight(
            g.nodes[u].vector.as_deref(),
            g.nodes[v].vector.as_deref(),
            metric,
        )?);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPaths {
    /// `f64::INFINITY` for unreachable nodes.
    pub dist: Vec<f64>,
    pub pred: Vec<Option<usize>>,
}

impl ShortestPaths {
    /// Node indices from a source to `target`, or `None` if unreachable.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if !self.dist[target].is_finite() {
            return None;
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(p) = self.pred[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }
}

/// Dijkstra from every node in `sources` at distance 0. Among equal
/// distances the lexicographically smaller node id is settled first and
/// wins as predecessor.
pub fn shortest_semantic_paths(g: &CategoryGraph, sources: &[&str]) -> Result<ShortestPaths> {
    let n = g.nodes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g.nodes[a].id.cmp(&g.nodes[b].id));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut weights = Vec::with_capacity(g.edges.len());
    for e in &g.edges {
        match e.weight {
            Some(w) if w >= 0.0 && w.is_finite() => weights.push(w),
            Some(w) => return Err(Error::InvalidArgument(format!("edge weight {w} is not a finite non-negative number"))),
            None => return Err(Error::InvalidArgument("edges are not weighted".into())),
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    // Non-negative finite f64 order matches the order of their bit patterns.
    let mut heap = BinaryHeap::new();
    for s in sources {
        let i = g.find(s).ok_or_else(|| Error::UnknownNode(s.to_string()))?;
        dist[i] = 0.0;
        heap.push(Reverse((0f64.to_bits(), rank[i])));
    }
    while let Some(Reverse((bits, r))) = heap.pop() {
        let u = order[r];
        if done[u] || f64::from_bits(bits) > dist[u] {
            continue;
        }
        done[u] = true;
        for &ei in &g.out[u] {
            let v = g.edges[ei].v;
            if done[v] {
                continue;
            }
            let nd = dist[u] + weights[ei];
            let better = nd < dist[v]
                || (nd == dist[v] && pred[v].is_some_and(|p| rank[u] < rank[p]));
            if better {
                let improved = nd < dist[v];
                dist[v] = nd;
                pred[v] = Some(u);
                if improved {
                    heap.push(Reverse((nd.to_bits(), rank[v])));
                }
            }
        }
    }
    Ok(ShortestPaths { dist, pred })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafPlan {
    pub matched: Vec<String>,
    pub quota: usize,
}

/// Per-leaf quota and graph match points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HarvestPlan {
    pub leaves: BTreeMap<String, LeafPlan>,
}

impl HarvestPlan {
    /// Every leaf with its match hints as match points and the same quota.
    pub fn from_taxonomy(t: &Taxonomy, quota: usize) -> Self {
        let leaves = t
            .leaves()
            .into_iter()
            .filter(|&l| l != t.root())
            .map(|l| {
                let matched = t.node(l).match_hints.iter().map(|h| h.external_id.clone()).collect();
                (t.id(l).to_string(), LeafPlan { matched, quota })
            })
            .collect();
        HarvestPlan { leaves }
    }

    /// `leaf<TAB>quota[<TAB>node,node,...]` lines. Without the third column
    /// the leaf's match hints are used.
    pub fn parse(text: &str, t: &Taxonomy) -> Result<Self> {
        let mut plan = HarvestPlan::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let loc = format!("plan line {}", n + 1);
            let f: Vec<&str> = line.split('\t').collect();
            let leaf = t.get(f[0].trim())?;
            if !t.is_leaf(leaf) {
                return Err(Error::parse(loc, format!("`{}` is not a leaf", f[0])));
            }
            let quota: usize = f
                .get(1)
                .and_then(|q| q.trim().parse().ok())
                .ok_or_else(|| Error::parse(&loc, "expected `leaf<TAB>quota`"))?;
            let matched = match f.get(2) {
                Some(m) => m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                None => t.node(leaf).match_hints.iter().map(|h| h.external_id.clone()).collect(),
            };
            if plan.leaves.insert(f[0].trim().to_string(), LeafPlan { matched, quota }).is_some() {
                return Err(Error::DuplicateId(f[0].to_string()));
            }
        }
        Ok(plan)
    }

    pub fn validate(&self, g: &CategoryGraph) -> Result<()> {
        for (leaf, p) in &self.leaves {
            if p.quota == 0 {
                return Err(Error::InvalidArgument(format!("quota of `{leaf}` must be at least 1")));
            }
            for m in &p.matched {
                if g.find(m).is_none() {
                    return Err(Error::UnknownNode(m.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub leaf: String,
    pub node: String,
    pub distance: f64,
    pub docs_taken: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub leaf: String,
    pub quota: usize,
    pub collected: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HarvestReport {
    pub rows: Vec<ManifestRow>,
    pub shortfalls: Vec<Shortfall>,
    /// Collected doc ids per leaf, in visit order.
    pub collected: BTreeMap<String, Vec<String>>,
}

impl HarvestReport {
    pub fn manifest_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{:.6}\t{}", r.leaf, r.node, r.distance, r.docs_taken);
        }
        out
    }

    pub fn shortfall_text(&self) -> String {
        let mut out = String::new();
        for s in &self.shortfalls {
            let _ = writeln!(out, "{}\t{}\t{}", s.leaf, s.quota, s.collected);
        }
        out
    }
}

/// Chooses documents for every leaf without touching the filesystem: matched
/// nodes first, then other reachable nodes by increasing distance.
pub fn plan_harvest(g: &CategoryGraph, plan: &HarvestPlan) -> Result<HarvestReport> {
    plan.validate(g)?;
    let per_leaf: Vec<(String, Vec<ManifestRow>, Vec<String>, usize)> = plan
        .leaves
        .par_iter()
        .map(|(leaf, p)| {
            let sources: Vec<&str> = p.matched.iter().map(String::as_str).collect();
            let sp = shortest_semantic_paths(g, &sources)?;
            let matched: HashSet<usize> = sources.iter().filter_map(|s| g.find(s)).collect();
            let mut visit: Vec<usize> = (0..g.nodes.len()).filter(|&i| sp.dist[i].is_finite()).collect();
            visit.sort_by(|&a, &b| {
                sp.dist[a]
                    .total_cmp(&sp.dist[b])
                    .then(matched.contains(&b).cmp(&matched.contains(&a)))
                    .then_with(|| g.nodes[a].id.cmp(&g.nodes[b].id))
            });
            let mut rows = Vec::new();
            let mut taken: Vec<String> = Vec::new();
            let mut seen = HashSet::new();
            for i in visit {
                if taken.len() >= p.quota {
                    break;
                }
                let mut count = 0;
                for d in &g.nodes[i].documents {
                    if taken.len() >= p.quota {
                        break;
                    }
                    if seen.insert(d.as_str()) {
                        taken.push(d.clone());
                        count += 1;
                    }
                }
                rows.push(ManifestRow {
                    leaf: leaf.clone(),
                    node: g.nodes[i].id.clone(),
                    distance: sp.dist[i],
                    docs_taken: count,
                });
            }
            Ok((leaf.clone(), rows, taken, p.quota))
        })
        .collect::<Result<_>>()?;

    let mut report = HarvestReport::default();
    for (leaf, rows, taken, quota) in per_leaf {
        if taken.len() < quota {
            report.shortfalls.push(Shortfall {
                leaf: leaf.clone(),
                quota,
                collected: taken.len(),
            });
        }
        report.rows.extend(rows);
        report.collected.insert(leaf, taken);
    }
    Ok(report)
}

/// Runs [`plan_harvest`] and writes a taxonomy-mirrored corpus under
/// `out_dir`, copying texts from `docs_dir/<doc_id>.txt`. The manifest and
/// shortfall report are written as dotfiles in `out_dir`.
pub fn harvest(
    g: &CategoryGraph,
    t: &Taxonomy,
    plan: &HarvestPlan,
    docs_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<HarvestReport> {
    let (docs_dir, out_dir) = (docs_dir.as_ref(), out_dir.as_ref());
    let report = plan_harvest(g, plan)?;
    for (leaf, docs) in &report.collected {
        let dir = out_dir.join(t.dir_path(t.get(leaf)?));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for d in docs {
            let src = docs_dir.join(format!("{d}.txt"));
            let dst = dir.join(format!("{d}.txt"));
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        }
    }
    let m = out_dir.join(MANIFEST_FILE);
    std::fs::write(&m, report.manifest_text()).map_err(|e| Error::io(&m, e))?;
    let s = out_dir.join(SHORTFALL_FILE);
    std::fs::write(&s, report.shortfall_text()).map_err(|e| Error::io(&s, e))?;
    Ok(report)
}
