//! Embedded graphs: vertices in `R^n`, undirected weighted edges with a mean
//! per edge, plus the geometric checks and search utilities used by the
//! solvers.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, Orthotope};
use crate::means::MeanSpec;

/// An undirected edge stored once. A flow value `J` on the edge means
/// `J(u, v) = J` and `J(v, u) = -J`; the mean is evaluated as `θ(m(u), m(v))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub sigma: f64,
    pub mean: MeanSpec,
}

impl Edge {
    pub fn new(u: usize, v: usize, sigma: f64, mean: MeanSpec) -> Self {
        Edge { u, v, sigma, mean }
    }

    pub fn other(&self, x: usize) -> usize {
        if x == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedGraph {
    n: usize,
    r: f64,
    scale: f64,
    ids: Vec<u64>,
    base: Vec<f64>,
    factor: f64,
    pos: Vec<f64>,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, usize)>>,
    generator: Option<serde_json::Value>,
}

impl EmbeddedGraph {
    /// Builds a graph from positions and edges given by vertex index.
    pub fn new(n: usize, r: f64, positions: Vec<Vec<f64>>, edges: Vec<Edge>) -> Result<Self> {
        let ids = (0..positions.len() as u64).collect();
        Self::with_ids(n, r, ids, positions, edges)
    }

    pub fn with_ids(
        n: usize,
        r: f64,
        ids: Vec<u64>,
        positions: Vec<Vec<f64>>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("dimension must be positive".into()));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidGraph(format!("geometry constant must be positive, got {r}")));
        }
        if ids.len() != positions.len() {
            return Err(Error::InvalidGraph("ids and positions differ in length".into()));
        }
        let mut base = Vec::with_capacity(n * positions.len());
        for (i, p) in positions.iter().enumerate() {
            if p.len() != n {
                return Err(Error::InvalidGraph(format!("vertex {} has dimension {}", ids[i], p.len())));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidGraph(format!("vertex {} has a non-finite coordinate", ids[i])));
            }
            base.extend_from_slice(p);
        }
        let nv = positions.len();
        let mut adj = vec![Vec::new(); nv];
        let mut seen = HashMap::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            if e.u >= nv || e.v >= nv {
                return Err(Error::InvalidGraph(format!("edge {k} references a missing vertex")));
            }
            if e.u == e.v {
                return Err(Error::InvalidGraph(format!("edge {k} is a self-loop")));
            }
            if !(e.sigma > 0.0 && e.sigma.is_finite()) {
                return Err(Error::InvalidGraph(format!("edge {k} has weight {}", e.sigma)));
            }
            e.mean.validate()?;
            let key = (e.u.min(e.v), e.u.max(e.v));
            if seen.insert(key, k).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge {}-{}", ids[e.u], ids[e.v])));
            }
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }
        let mut uniq = ids.clone();
        uniq.sort_unstable();
        if uniq.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGraph("duplicate vertex id".into()));
        }
        let pos = base.clone();
        let g = EmbeddedGraph { n, r, scale: 1.0, ids, base, factor: 1.0, pos, edges, adj, generator: None };
        if g.edges.iter().any(|e| g.pos(e.u) == g.pos(e.v)) {
            return Err(Error::DegenerateEdge);
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Geometry constant of this (possibly rescaled) graph.
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Cumulative rescaling factor applied since construction or loading.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Geometry constant of the unscaled graph, `R = r / scale`.
    pub fn r_unscaled(&self) -> f64 {
        self.r / self.scale
    }

    pub fn num_vertices(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn id(&self, i: usize) -> u64 {
        self.ids[i]
    }

    pub fn pos(&self, i: usize) -> &[f64] {
        &self.pos[i * self.n..(i + 1) * self.n]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    /// `(neighbour, edge index)` pairs.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_length(&self, k: usize) -> f64 {
        let e = &self.edges[k];
        dist(self.pos(e.u), self.pos(e.v))
    }

    pub fn max_edge_length(&self) -> f64 {
        (0..self.num_edges()).map(|k| self.edge_length(k)).fold(0.0, f64::max)
    }

    /// Edge index joining `a` and `b`, if any.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        self.adj[a].iter().find(|(y, _)| *y == b).map(|&(_, k)| k)
    }

    pub fn generator(&self) -> Option<&serde_json::Value> {
        self.generator.as_ref()
    }

    pub fn set_generator(&mut self, spec: serde_json::Value) {
        self.generator = Some(spec);
    }

    /// Replaces edge weights, keeping topology.
    pub fn with_sigmas(mut self, sigmas: &[f64]) -> Result<Self> {
        if sigmas.len() != self.edges.len() {
            return Err(Error::GraphMismatch { expected: self.edges.len(), got: sigmas.len() });
        }
        for (e, &s) in self.edges.iter_mut().zip(sigmas) {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidGraph(format!("weight {s}")));
            }
            e.sigma = s;
        }
        Ok(self)
    }

    pub fn with_mean(mut self, mean: MeanSpec) -> Result<Self> {
        mean.validate()?;
        for e in &mut self.edges {
            e.mean = mean;
        }
        Ok(self)
    }

    /// Multiplies coordinates and the geometry constant by `eps`.
    /// Repeated rescaling composes exactly: `rescale(rescale(g, a), b)` has
    /// the same coordinates as `rescale(g, a * b)`.
    pub fn rescale(&self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::NonpositiveEps(eps));
        }
        let mut g = self.clone();
        g.factor = self.factor * eps;
        g.scale = self.scale * eps;
        g.r = self.r * eps;
        g.pos = g.base.iter().map(|x| x * g.factor).collect();
        Ok(g)
    }

    /// Subgraph induced by `keep`, with vertex `i` of the result being
    /// `keep[i]`; also returns the original index of every kept edge.
    pub fn induced_subgraph(&self, keep: &[usize]) -> (EmbeddedGraph, Vec<usize>) {
        let mut new_of = vec![usize::MAX; self.num_vertices()];
        for (i, &x) in keep.iter().enumerate() {
            new_of[x] = i;
        }
        let mut edges = Vec::new();
        let mut edge_map = Vec::new();
        for (k, e) in self.edges.iter().enumerate() {
            let (a, b) = (new_of[e.u], new_of[e.v]);
            if a != usize::MAX && b != usize::MAX {
                edges.push(Edge { u: a, v: b, ..*e });
                edge_map.push(k);
            }
        }
        let n = self.n;
        let take = |v: &[f64]| keep.iter().flat_map(|&x| v[x * n..(x + 1) * n].to_vec()).collect::<Vec<f64>>();
        let mut adj = vec![Vec::new(); keep.len()];
        for (k, e) in edges.iter().enumerate() {
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }
        let g = EmbeddedGraph {
            n,
            r: self.r,
            scale: self.scale,
            ids: keep.iter().map(|&x| self.ids[x]).collect(),
            base: take(&self.base),
            factor: self.factor,
            pos: take(&self.pos),
            edges,
            adj,
            generator: None,
        };
        (g, edge_map)
    }

    /// Indices of the vertices in the closed box.
    pub fn vertices_in(&self, b: &Orthotope) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&i| b.contains_closed(self.pos(i))).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphFile::from(self)).expect("graph serialisation cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: GraphFile = serde_json::from_str(s).map_err(|e| Error::InvalidGraph(e.to_string()))?;
        f.into_graph()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Euclidean shortest-path distances from `src` restricted to vertices
    /// accepted by `allowed`. Returns distances and predecessors.
    pub fn dijkstra<F: Fn(usize) -> bool>(
        &self,
        src: usize,
        target: Option<usize>,
        allowed: F,
    ) -> (Vec<f64>, Vec<usize>) {
        let nv = self.num_vertices();
        let mut d = vec![f64::INFINITY; nv];
        let mut pred = vec![usize::MAX; nv];
        let mut heap = BinaryHeap::new();
        d[src] = 0.0;
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(du, u)) = heap.pop() {
            if du > d[u] {
                continue;
            }
            if Some(u) == target {
                break;
            }
            for &(w, k) in &self.adj[u] {
                if !allowed(w) {
                    continue;
                }
                let nd = du + self.edge_length(k);
                if nd < d[w] || (nd == d[w] && u < pred[w]) {
                    d[w] = nd;
                    pred[w] = u;
                    heap.push(HeapItem(nd, w));
                }
            }
        }
        (d, pred)
    }

    /// Euclidean-shortest path `src -> dst` through allowed vertices.
    pub fn shortest_path<F: Fn(usize) -> bool>(
        &self,
        src: usize,
        dst: usize,
        allowed: F,
    ) -> Option<(f64, Vec<usize>)> {
        if src == dst {
            return Some((0.0, vec![src]));
        }
        let (d, pred) = self.dijkstra(src, Some(dst), allowed);
        if !d[dst].is_finite() {
            return None;
        }
        let mut path = vec![dst];
        let mut x = dst;
        while x != src {
            x = pred[x];
            path.push(x);
        }
        path.reverse();
        Some((d[dst], path))
    }

    /// Connected-component label per vertex.
    pub fn components(&self) -> Vec<usize> {
        let nv = self.num_vertices();
        let mut label = vec![usize::MAX; nv];
        let mut c = 0;
        for s in 0..nv {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = c;
            while let Some(x) = stack.pop() {
                for &(y, _) in &self.adj[x] {
                    if label[y] == usize::MAX {
                        label[y] = c;
                        stack.push(y);
                    }
                }
            }
            c += 1;
        }
        label
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Serialize, Deserialize)]
struct VertexEntry {
    id: u64,
    x: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    u: u64,
    v: u64,
    sigma: f64,
    mean: MeanSpec,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    #[serde(rename = "R")]
    r: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    scale: f64,
    vertices: Vec<VertexEntry>,
    edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<serde_json::Value>,
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

impl From<&EmbeddedGraph> for GraphFile {
    fn from(g: &EmbeddedGraph) -> Self {
        GraphFile {
            n: g.n,
            r: g.r,
            scale: g.scale,
            vertices: (0..g.num_vertices())
                .map(|i| VertexEntry { id: g.ids[i], x: g.pos(i).to_vec() })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeEntry { u: g.ids[e.u], v: g.ids[e.v], sigma: e.sigma, mean: e.mean })
                .collect(),
            generator: g.generator.clone(),
        }
    }
}

impl GraphFile {
    fn into_graph(self) -> Result<EmbeddedGraph> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidGraph(format!("scale {}", self.scale)));
        }
        let index: HashMap<u64, usize> =
            self.vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        let look = |id: u64| {
            index.get(&id).copied().ok_or_else(|| Error::InvalidGraph(format!("unknown vertex id {id}")))
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            edges.push(Edge::new(look(e.u)?, look(e.v)?, e.sigma, e.mean));
        }
        let ids = self.vertices.iter().map(|v| v.id).collect();
        let positions = self.vertices.into_iter().map(|v| v.x).collect();
        let mut g = EmbeddedGraph::with_ids(self.n, self.r, ids, positions, edges)?;
        g.scale = self.scale;
        g.generator = self.generator;
        Ok(g)
    }
}

/// Uniform hash grid over vertex positions.
pub struct VertexGrid<'a> {
    graph: &'a EmbeddedGraph,
    cell: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> VertexGrid<'a> {
    pub fn new(graph: &'a EmbeddedGraph, cell: f64) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for i in 0..graph.num_vertices() {
            cells.entry(key(graph.pos(i), cell)).or_default().push(i);
        }
        VertexGrid { graph, cell, cells }
    }

    /// Calls `f` on every vertex within distance `r` of `p`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, p: &[f64], r: f64, mut f: F) {
        let n = p.len();
        let lo: Vec<i64> = p.iter().map(|x| ((x - r) / self.cell).floor() as i64).collect();
        let hi: Vec<i64> = p.iter().map(|x| ((x + r) / self.cell).floor() as i64).collect();
        let mut cur = lo.clone();
        loop {
            if let Some(vs) = self.cells.get(&cur) {
                for &i in vs {
                    let d = dist(p, self.graph.pos(i));
                    if d <= r {
                        f(i, d);
                    }
                }
            }
            let mut k = 0;
            while k < n {
                if cur[k] < hi[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = lo[k];
                k += 1;
            }
            if k == n {
                break;
            }
        }
    }

    /// Nearest vertex within `r`, ties broken by the smallest id.
    pub fn nearest_within(&self, p: &[f64], r: f64) -> Option<usize> {
        let mut best: Option<(f64, u64, usize)> = None;
        self.for_each_within(p, r, |i, d| {
            let cand = (d, self.graph.id(i), i);
            if best.is_none_or(|b| (cand.0, cand.1) < (b.0, b.1)) {
                best = Some(cand);
            }
        });
        best.map(|b| b.2)
    }

    pub fn any_within(&self, p: &[f64], r: f64) -> bool {
        let mut hit = false;
        self.for_each_within(p, r, |_, _| hit = true);
        hit
    }
}

fn key(p: &[f64], cell: f64) -> Vec<i64> {
    p.iter().map(|x| (x / cell).floor() as i64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeometryReport {
    pub max_edge_length: f64,
    pub max_degree: usize,
    pub covering_radius_ok: bool,
    pub path_stretch_ok: bool,
    pub violations: Vec<String>,
}

impl GeometryReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the standing geometric assumptions of `graph` inside `b`: bounded
/// path stretch on sampled pairs, covering radius on a probe grid, edge
/// lengths at most `R`, and the maximal degree.
pub fn validate_geometry(
    graph: &EmbeddedGraph,
    b: &Orthotope,
    probe_spacing: f64,
    pair_samples: usize,
) -> Result<GeometryReport> {
    if !(probe_spacing > 0.0) {
        return Err(Error::InvalidParams(format!("probe spacing {probe_spacing}")));
    }
    let inside = graph.vertices_in(b);
    if inside.is_empty() {
        return Err(Error::EmptyGraphInBox);
    }
    let r = graph.r();
    let mut violations = Vec::new();

    let mut max_len: f64 = 0.0;
    let mut max_deg = 0;
    let mut worst_edge = None;
    for &i in &inside {
        max_deg = max_deg.max(graph.degree(i));
        for &(_, k) in graph.neighbors(i) {
            let l = graph.edge_length(k);
            if l > max_len {
                max_len = l;
                worst_edge = Some(k);
            }
        }
    }
    if max_len > r * (1.0 + 1e-12) {
        let e = graph.edge(worst_edge.unwrap());
        violations.push(format!(
            "edge {}-{} has length {max_len} > R = {r}",
            graph.id(e.u),
            graph.id(e.v)
        ));
    }

    // covering radius
    let grid = VertexGrid::new(graph, r.max(1e-300));
    let mut covering_ok = true;
    let n = graph.dim();
    let counts: Vec<usize> = (0..n).map(|i| (b.side(i) / probe_spacing).floor() as usize + 1).collect();
    let total: usize = counts.iter().product();
    let frame_t = |y: &[f64]| -> Vec<f64> {
        match &b.frame {
            None => y.to_vec(),
            Some(f) => (0..n).map(|j| (0..n).map(|i| f[i][j] * y[i]).sum()).collect(),
        }
    };
    for flat in 0..total {
        let mut rem = flat;
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] = (b.lower[i] + (rem % counts[i]) as f64 * probe_spacing).min(b.upper[i]);
            rem /= counts[i];
        }
        let p = frame_t(&y);
        if !grid.any_within(&p, r) {
            covering_ok = false;
            violations.push(format!("probe point {p:?} has no vertex within R = {r}"));
            break;
        }
    }

    // path stretch: connectivity inside the box, then sampled pairs
    let mut stretch_ok = true;
    let comp = graph.components();
    let c0 = comp[inside[0]];
    if let Some(&bad) = inside.iter().find(|&&i| comp[i] != c0) {
        stretch_ok = false;
        violations.push(format!(
            "vertices {} and {} are not connected by any path",
            graph.id(inside[0]),
            graph.id(bad)
        ));
    }
    if stretch_ok && inside.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut by_source: HashMap<usize, Vec<usize>> = HashMap::new();
        for _ in 0..pair_samples {
            let a = inside[rng.random_range(0..inside.len())];
            let c = inside[rng.random_range(0..inside.len())];
            by_source.entry(a).or_default().push(c);
        }
        let mut sources: Vec<_> = by_source.into_iter().collect();
        sources.sort_unstable_by_key(|(s, _)| *s);
        'outer: for (s, targets) in sources {
            let (d, _) = graph.dijkstra(s, None, |_| true);
            for t in targets {
                let bound = r * (dist(graph.pos(s), graph.pos(t)) + 1.0);
                if d[t] > bound * (1.0 + 1e-12) {
                    stretch_ok = false;
                    violations.push(format!(
                        "path {}-{} has length {} > R(|x-y|+1) = {bound}",
                        graph.id(s),
                        graph.id(t),
                        d[t]
                    ));
                    break 'outer;
                }
            }
        }
    }

    Ok(GeometryReport {
        max_edge_length: max_len,
        max_degree: max_deg,
        covering_radius_ok: covering_ok,
        path_stretch_ok: stretch_ok,
        violations,
    })
}

pub fn rescale_graph(graph: &EmbeddedGraph, eps: f64) -> Result<EmbeddedGraph> {
    graph.rescale(eps)
}

/// Edges whose segment lies within `R * eps` of the complement of `q`, with
/// `R` the unscaled geometry constant. Sorted by edge index.
pub fn boundary_edge_set(graph: &EmbeddedGraph, q: &Orthotope, eps: f64) -> Vec<usize> {
    let band = graph.r_unscaled() * eps;
    (0..graph.num_edges())
        .filter(|&k| {
            let e = graph.edge(k);
            q.segment_dist_to_complement(graph.pos(e.u), graph.pos(e.v)) <= band
        })
        .collect()
}
