//! Hierarchical navigable small-world graph over one vector column, with
//! plain, filtered and iterative search.
//!
//! Traversal ranks nodes with a 32-bit surrogate distance (squared L2 or
//! negated dot product); every returned distance is recomputed exactly with
//! [`Metric::distance`] and results are ordered by `(distance, id)`.

mod persist;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{Metric, Table};

pub use persist::{load_index, save_index};

const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    /// Max degree above layer 0; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub level_factor: f64,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            m: 16,
            ef_construction: 200,
            level_factor: 1.0 / (16f64).ln(),
            seed: 0x5eed_0001,
        }
    }
}

impl BuildParams {
    pub fn with_m(m: usize) -> Self {
        BuildParams {
            m,
            level_factor: 1.0 / (m.max(2) as f64).ln(),
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig("HNSW m must be at least 2".into()));
        }
        if self.ef_construction == 0 {
            return Err(Error::InvalidConfig("ef_construction must be positive".into()));
        }
        if !(self.level_factor > 0.0 && self.level_factor.is_finite()) {
            return Err(Error::InvalidConfig("level factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IterativeScan {
    Off,
    Relaxed,
    Strict,
}

impl IterativeScan {
    pub const ALL: [IterativeScan; 3] = [IterativeScan::Off, IterativeScan::Relaxed, IterativeScan::Strict];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IterativeScan::Off => "off",
            IterativeScan::Relaxed => "relaxed",
            IterativeScan::Strict => "strict",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Some(IterativeScan::Off),
            "relaxed" | "relaxed_order" => Some(IterativeScan::Relaxed),
            "strict" | "strict_order" => Some(IterativeScan::Strict),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub ef_search: usize,
    /// `None` is unbounded. Counts nodes whose predicate was evaluated.
    pub max_scan_tuples: Option<usize>,
    pub iterative_scan: IterativeScan,
}

impl SearchParams {
    pub fn new(ef_search: usize) -> Self {
        SearchParams {
            ef_search,
            max_scan_tuples: None,
            iterative_scan: IterativeScan::Off,
        }
    }

    pub fn with_mode(mut self, mode: IterativeScan) -> Self {
        self.iterative_scan = mode;
        self
    }

    pub fn with_max_scan(mut self, max_scan: usize) -> Self {
        self.max_scan_tuples = Some(max_scan);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilteredResult {
    pub results: Vec<Neighbor>,
    pub scanned_count: usize,
    pub converged: bool,
    /// Surrogate distance evaluations at layer 0 plus upper-layer descent.
    pub distance_evals: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cand {
    d: f32,
    node: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d.total_cmp(&other.d).then(self.node.cmp(&other.node))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Visited {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Returns true if `i` was not yet marked.
    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i / 64) as usize, i % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        fresh
    }
}

#[derive(Clone, Debug)]
pub struct GraphIndex {
    dim: usize,
    metric: Metric,
    params: BuildParams,
    ids: Vec<u64>,
    data: Vec<f32>,
    /// `links[node][layer]`, layers `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
}

impl GraphIndex {
    pub fn new(dim: usize, metric: Metric, params: BuildParams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("index dimension must be positive".into()));
        }
        params.validate()?;
        Ok(GraphIndex {
            dim,
            metric,
            params,
            ids: Vec::new(),
            data: Vec::new(),
            links: Vec::new(),
            entry: None,
        })
    }

    /// Builds over every current row of `column`.
    pub fn build(table: &Table, column: usize, params: BuildParams) -> Result<Self> {
        let col = table
            .schema()
            .vector_columns
            .get(column)
            .ok_or_else(|| Error::UnknownColumn(format!("vector column #{column}")))?;
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        let mut index = GraphIndex::new(col.dim, col.metric, params)?;
        index.ids.reserve(table.len());
        index.data.reserve(table.len() * col.dim);
        for row in 0..table.len() {
            index.ids.push(table.id(row));
            index.data.extend_from_slice(table.vector(column, row));
            index.links.push(Vec::new());
            index.link_node(row as u32);
        }
        index.repair_connectivity();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn params(&self) -> &BuildParams {
        &self.params
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn max_level(&self) -> usize {
        self.entry.map_or(0, |e| self.level(e))
    }

    pub fn insert(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let node = self.ids.len() as u32;
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        self.links.push(Vec::new());
        self.link_node(node);
        self.repair_connectivity();
        Ok(())
    }

    #[inline]
    fn vec(&self, node: u32) -> &[f32] {
        let s = node as usize * self.dim;
        &self.data[s..s + self.dim]
    }

    #[inline]
    fn level(&self, node: u32) -> usize {
        self.links[node as usize].len() - 1
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    #[inline]
    fn dist_nodes(&self, a: u32, b: u32) -> f32 {
        self.metric.surrogate(self.vec(a), self.vec(b))
    }

    fn random_level(&self, node: u32) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(node as u64);
        let u: f64 = 1.0 - rng.random::<f64>();
        ((-u.ln() * self.params.level_factor) as usize).min(MAX_LEVEL)
    }

    fn link_node(&mut self, node: u32) {
        let level = self.random_level(node);
        self.links[node as usize] = vec![Vec::new(); level + 1];
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return;
        };
        let top = self.level(entry);
        let q = self.vec(node).to_vec();
        let mut ep = Cand {
            d: self.metric.surrogate(&q, self.vec(entry)),
            node: entry,
        };
        let mut evals = 0;
        for layer in (level + 1..=top).rev() {
            ep = self.greedy_closest(&q, ep, layer, &mut evals);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &eps, self.params.ef_construction, layer, &mut evals);
            let chosen = self.select_heuristic(&found, self.params.m);
            self.links[node as usize][layer] = chosen.iter().map(|c| c.node).collect();
            for c in &chosen {
                self.add_link(c.node, node, layer);
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
    }

    fn add_link(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.cap(layer);
        let list = &mut self.links[from as usize][layer];
        if list.contains(&to) {
            return;
        }
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let mut cands: Vec<Cand> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Cand {
                d: self.dist_nodes(from, n),
                node: n,
            })
            .collect();
        cands.sort();
        let kept = self.select_heuristic(&cands, cap);
        self.links[from as usize][layer] = kept.into_iter().map(|c| c.node).collect();
    }

    /// Keeps a candidate only if it is closer to the base than to every
    /// already kept neighbor. `sorted` must be ascending.
    fn select_heuristic(&self, sorted: &[Cand], m: usize) -> Vec<Cand> {
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|k| self.dist_nodes(c.node, k.node) > c.d) {
                kept.push(c);
            }
        }
        kept
    }

    fn greedy_closest(&self, q: &[f32], mut cur: Cand, layer: usize, evals: &mut usize) -> Cand {
        loop {
            let mut moved = false;
            for &n in &self.links[cur.node as usize][layer] {
                *evals += 1;
                let d = self.metric.surrogate(q, self.vec(n));
                if d < cur.d || (d == cur.d && n < cur.node) {
                    cur = Cand { d, node: n };
                    moved = true;
                }
            }
            if !moved {
                return cur;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes ascending.
    fn search_layer(&self, q: &[f32], eps: &[Cand], ef: usize, layer: usize, evals: &mut usize) -> Vec<Cand> {
        let mut visited = Visited::new(self.len());
        let mut frontier = BinaryHeap::new();
        let mut beam: BinaryHeap<Cand> = BinaryHeap::new();
        for &e in eps {
            if visited.insert(e.node) {
                frontier.push(Reverse(e));
                beam.push(e);
            }
        }
        while beam.len() > ef {
            beam.pop();
        }
        while let Some(Reverse(c)) = frontier.pop() {
            if beam.len() >= ef && c.d > beam.peek().unwrap().d {
                break;
            }
            for &n in &self.links[c.node as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                *evals += 1;
                let d = self.metric.surrogate(q, self.vec(n));
                if beam.len() < ef || d < beam.peek().unwrap().d {
                    let cand = Cand { d, node: n };
                    frontier.push(Reverse(cand));
                    beam.push(cand);
                    if beam.len() > ef {
                        beam.pop();
                    }
                }
            }
        }
        beam.into_sorted_vec()
    }

    fn reachable_from_entry(&self) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let Some(entry) = self.entry else {
            return seen;
        };
        let mut queue = VecDeque::from([entry]);
        seen[entry as usize] = true;
        while let Some(n) = queue.pop_front() {
            for &m in &self.links[n as usize][0] {
                if !seen[m as usize] {
                    seen[m as usize] = true;
                    queue.push_back(m);
                }
            }
        }
        seen
    }

    /// Restores layer-0 reachability from the entry point after pruning may
    /// have dropped every inbound edge of some node.
    fn repair_connectivity(&mut self) {
        let mut seen = self.reachable_from_entry();
        let cap = self.cap(0);
        while let Some(orphan) = seen.iter().position(|s| !s) {
            let orphan = orphan as u32;
            let q = self.vec(orphan).to_vec();
            let entry = self.entry.expect("non-empty index has an entry");
            let start = Cand {
                d: self.metric.surrogate(&q, self.vec(entry)),
                node: entry,
            };
            let mut evals = 0;
            let near = self.search_layer(&q, &[start], self.params.ef_construction, 0, &mut evals);
            let host = near
                .iter()
                .map(|c| c.node)
                .find(|&n| n != orphan && seen[n as usize] && self.links[n as usize][0].len() < cap)
                .or_else(|| {
                    (0..self.len() as u32)
                        .find(|&n| n != orphan && seen[n as usize] && self.links[n as usize][0].len() < cap)
                })
                .unwrap_or(near[0].node);
            if self.links[host as usize][0].len() >= cap {
                // Every reachable node is saturated: replace the farthest link.
                let list = &self.links[host as usize][0];
                let far = (0..list.len())
                    .max_by(|&a, &b| self.dist_nodes(host, list[a]).total_cmp(&self.dist_nodes(host, list[b])))
                    .unwrap();
                self.links[host as usize][0][far] = orphan;
                seen = self.reachable_from_entry();
            } else {
                self.links[host as usize][0].push(orphan);
                let mut queue = VecDeque::from([orphan]);
                seen[orphan as usize] = true;
                while let Some(n) = queue.pop_front() {
                    for &m in &self.links[n as usize][0] {
                        if !seen[m as usize] {
                            seen[m as usize] = true;
                            queue.push_back(m);
                        }
                    }
                }
            }
            if self.links[orphan as usize][0].len() < cap && !self.links[orphan as usize][0].contains(&host) {
                self.links[orphan as usize][0].push(host);
            }
        }
    }

    /// Checks degree bounds, layer nesting and layer-0 reachability.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return if self.entry.is_none() {
                Ok(())
            } else {
                Err(Error::format("empty index with an entry point"))
            };
        }
        let entry = self.entry.ok_or_else(|| Error::format("missing entry point"))?;
        if entry as usize >= n {
            return Err(Error::format("entry point out of range"));
        }
        for (node, layers) in self.links.iter().enumerate() {
            if layers.is_empty() {
                return Err(Error::format(format!("node {node} has no layer 0")));
            }
            if layers.len() - 1 > self.level(entry) {
                return Err(Error::format(format!("node {node} above the entry point's level")));
            }
            for (layer, list) in layers.iter().enumerate() {
                if list.len() > self.cap(layer) {
                    return Err(Error::format(format!("node {node} exceeds degree at layer {layer}")));
                }
                for &m in list {
                    if m as usize >= n {
                        return Err(Error::format(format!("node {node} links to missing node {m}")));
                    }
                    if self.links[m as usize].len() <= layer {
                        return Err(Error::format(format!("link {node}->{m} at layer {layer} breaks nesting")));
                    }
                }
            }
        }
        if let Some(orphan) = self.reachable_from_entry().iter().position(|r| !r) {
            return Err(Error::format(format!("node {orphan} unreachable from the entry point")));
        }
        Ok(())
    }

    /// Unfiltered top-k, ascending by exact distance.
    pub fn search(&self, q: &[f32], k: usize, params: &SearchParams) -> Vec<Neighbor> {
        if self.is_empty() || k == 0 || q.len() != self.dim {
            return Vec::new();
        }
        if k >= self.len() {
            let mut all: Vec<Neighbor> = (0..self.len() as u32)
                .map(|n| Neighbor {
                    id: self.ids[n as usize],
                    distance: self.metric.distance(q, self.vec(n)),
                })
                .collect();
            sort_neighbors(&mut all);
            return all;
        }
        let mut evals = 0;
        let ep = self.descend(q, &mut evals);
        let ef = params.ef_search.max(k);
        let found = self.search_layer(q, &[ep], ef, 0, &mut evals);
        self.finish(q, found.into_iter().map(|c| c.node), k)
    }

    /// Index-first hybrid scan: the predicate is evaluated on every node
    /// visited at layer 0 and never steers the traversal.
    pub fn filtered_search<F>(&self, q: &[f32], k: usize, params: &SearchParams, mut predicate: F) -> FilteredResult
    where
        F: FnMut(u64) -> bool,
    {
        let limit = params.max_scan_tuples.unwrap_or(usize::MAX);
        let mut out = FilteredResult {
            results: Vec::new(),
            scanned_count: 0,
            converged: false,
            distance_evals: 0,
        };
        if self.is_empty() || k == 0 || q.len() != self.dim || limit == 0 {
            out.converged = k == 0;
            return out;
        }
        let ef = params.ef_search.max(k);
        let ep = self.descend(q, &mut out.distance_evals);

        let mut visited = Visited::new(self.len());
        let mut frontier: BinaryHeap<Reverse<Cand>> = BinaryHeap::new();
        let mut beam: BinaryHeap<Cand> = BinaryHeap::new();
        let mut deferred: Vec<Cand> = Vec::new();
        let mut qualifying: Vec<Cand> = Vec::new();
        // k best qualifying surrogate distances (max-heap), for Strict.
        let mut best_k: BinaryHeap<Cand> = BinaryHeap::new();
        let mut scanned = 0usize;
        let mut budget_hit = false;

        let mut visit = |c: Cand, scanned: &mut usize, qualifying: &mut Vec<Cand>, best_k: &mut BinaryHeap<Cand>| {
            *scanned += 1;
            if predicate(self.ids[c.node as usize]) {
                qualifying.push(c);
                best_k.push(c);
                if best_k.len() > k {
                    best_k.pop();
                }
            }
        };

        visited.insert(ep.node);
        visit(ep, &mut scanned, &mut qualifying, &mut best_k);
        frontier.push(Reverse(ep));
        beam.push(ep);

        // One beam pass of width ef.
        'beam: while let Some(Reverse(c)) = frontier.pop() {
            if beam.len() >= ef && c.d > beam.peek().unwrap().d {
                deferred.push(c);
                break;
            }
            for &n in &self.links[c.node as usize][0] {
                if scanned >= limit {
                    budget_hit = true;
                    break 'beam;
                }
                if !visited.insert(n) {
                    continue;
                }
                out.distance_evals += 1;
                let cand = Cand {
                    d: self.metric.surrogate(q, self.vec(n)),
                    node: n,
                };
                visit(cand, &mut scanned, &mut qualifying, &mut best_k);
                if beam.len() < ef || cand.d < beam.peek().unwrap().d {
                    frontier.push(Reverse(cand));
                    beam.push(cand);
                    if beam.len() > ef {
                        beam.pop();
                    }
                } else {
                    deferred.push(cand);
                }
            }
        }

        if params.iterative_scan != IterativeScan::Off && !budget_hit {
            frontier.extend(deferred.into_iter().map(Reverse));
            loop {
                let need_more = match params.iterative_scan {
                    IterativeScan::Relaxed => qualifying.len() < k,
                    _ => {
                        best_k.len() < k
                            || frontier.peek().is_some_and(|Reverse(c)| c.d < best_k.peek().unwrap().d)
                    }
                };
                if !need_more {
                    break;
                }
                let Some(Reverse(c)) = frontier.pop() else {
                    break;
                };
                for &n in &self.links[c.node as usize][0] {
                    if scanned >= limit {
                        budget_hit = true;
                        break;
                    }
                    if !visited.insert(n) {
                        continue;
                    }
                    out.distance_evals += 1;
                    let cand = Cand {
                        d: self.metric.surrogate(q, self.vec(n)),
                        node: n,
                    };
                    visit(cand, &mut scanned, &mut qualifying, &mut best_k);
                    frontier.push(Reverse(cand));
                }
                if budget_hit {
                    break;
                }
            }
        }

        out.scanned_count = scanned;
        out.results = self.finish(q, qualifying.into_iter().map(|c| c.node), k);
        out.converged = out.results.len() >= k;
        out
    }

    fn descend(&self, q: &[f32], evals: &mut usize) -> Cand {
        let entry = self.entry.expect("non-empty index has an entry");
        *evals += 1;
        let mut ep = Cand {
            d: self.metric.surrogate(q, self.vec(entry)),
            node: entry,
        };
        for layer in (1..=self.level(entry)).rev() {
            ep = self.greedy_closest(q, ep, layer, evals);
        }
        ep
    }

    fn finish(&self, q: &[f32], nodes: impl Iterator<Item = u32>, k: usize) -> Vec<Neighbor> {
        let mut res: Vec<Neighbor> = nodes
            .map(|n| Neighbor {
                id: self.ids[n as usize],
                distance: self.metric.distance(q, self.vec(n)),
            })
            .collect();
        sort_neighbors(&mut res);
        res.truncate(k);
        res
    }
}

pub(crate) fn sort_neighbors(v: &mut [Neighbor]) {
    v.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
}

#[cfg(test)]
mod tests;
