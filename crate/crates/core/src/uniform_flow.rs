//! Lattice homomorphisms into a graph, path flows and pushforwards, uniform
//! representatives of constant vectors, and the divergence corrector.

use std::collections::HashMap;

use crate::energy::{divergence, FlowField};
use crate::error::{Error, Result};
use crate::geometry::{dist, Orthotope};
use crate::graph::{EmbeddedGraph, VertexGrid};
use crate::wasserstein::{optimal_plan, Atoms};

/// Ordered vertex list `r_0, …, r_N`.
pub type PathFlow = Vec<usize>;

/// Nearest-neighbour edge `(a, a + ε e_dir)` of the lattice, by point index.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeEdge {
    pub a: usize,
    pub b: usize,
    pub dir: usize,
    pub path: PathFlow,
    pub length: f64,
}

/// `φ : εZ^n ∩ box → X` together with paths for neighbouring lattice pairs.
#[derive(Debug, Clone)]
pub struct LatticeMap {
    pub eps: f64,
    pub dim: usize,
    /// Integer coordinates `z` of the lattice points `ε z` in the box.
    pub points: Vec<Vec<i64>>,
    pub vertex: Vec<usize>,
    pub edges: Vec<LatticeEdge>,
    /// Largest `|φ(z) - εz|`.
    pub max_offset: f64,
    /// Largest distance from `εz` to a vertex on a path leaving `z`.
    pub max_deviation: f64,
    /// Largest path length.
    pub max_path_length: f64,
    index: HashMap<Vec<i64>, usize>,
}

impl LatticeMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points[i].iter().map(|&c| c as f64 * self.eps).collect()
    }

    pub fn index_of(&self, z: &[i64]) -> Option<usize> {
        self.index.get(z).copied()
    }

    /// Lattice edge index for `(z, z + e_dir)`.
    pub fn edge_index(&self) -> HashMap<(usize, usize), usize> {
        self.edges.iter().enumerate().map(|(k, e)| ((e.a, e.dir), k)).collect()
    }
}

/// Builds `φ` on `εZ^n ∩ box` (closed box, axis-aligned): each lattice point
/// goes to its nearest vertex within `Rε` (smallest id on ties), each
/// neighbouring pair to a Euclidean-shortest path of length at most
/// `2R(R+1)ε`. Here `Rε` is the geometry constant of the rescaled graph.
pub fn build_lattice_map(g: &EmbeddedGraph, eps: f64, b: &Orthotope) -> Result<LatticeMap> {
    if !(eps > 0.0) {
        return Err(Error::NonpositiveEps(eps));
    }
    let n = g.dim();
    let r_eps = g.r_unscaled() * eps;
    let bound = 2.0 * g.r_unscaled() * (g.r_unscaled() + 1.0) * eps;
    let lo: Vec<i64> = b.lower.iter().map(|x| (x / eps - 1e-9).ceil() as i64).collect();
    let hi: Vec<i64> = b.upper.iter().map(|x| (x / eps + 1e-9).floor() as i64).collect();
    let counts: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1).max(0) as usize).collect();
    let total: usize = counts.iter().product();
    let grid = VertexGrid::new(g, r_eps);
    let mut points = Vec::with_capacity(total);
    let mut vertex = Vec::with_capacity(total);
    let mut index = HashMap::with_capacity(total);
    let mut max_offset: f64 = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let z: Vec<i64> = (0..n)
            .map(|i| {
                let c = lo[i] + (rem % counts[i]) as i64;
                rem /= counts[i];
                c
            })
            .collect();
        let p: Vec<f64> = z.iter().map(|&c| c as f64 * eps).collect();
        let x = grid.nearest_within(&p, r_eps).ok_or_else(|| Error::NoVertexInBall { point: p.clone(), radius: r_eps })?;
        max_offset = max_offset.max(dist(&p, g.pos(x)));
        index.insert(z.clone(), points.len());
        points.push(z);
        vertex.push(x);
    }
    let mut edges = Vec::new();
    let mut max_dev: f64 = 0.0;
    let mut max_len: f64 = 0.0;
    for a in 0..points.len() {
        for dir in 0..n {
            let mut z2 = points[a].clone();
            z2[dir] += 1;
            let Some(&bidx) = index.get(&z2) else { continue };
            let (xa, xb) = (vertex[a], vertex[bidx]);
            let centre = g.pos(xa).to_vec();
            let (length, path) = if xa == xb {
                (0.0, vec![xa])
            } else {
                g.shortest_path(xa, xb, |w| dist(g.pos(w), &centre) <= bound)
                    .ok_or(Error::PathTooLong { length: f64::INFINITY, bound })?
            };
            if length > bound * (1.0 + 1e-12) {
                return Err(Error::PathTooLong { length, bound });
            }
            let za: Vec<f64> = points[a].iter().map(|&c| c as f64 * eps).collect();
            for &w in &path {
                max_dev = max_dev.max(dist(&za, g.pos(w)));
            }
            max_len = max_len.max(length);
            edges.push(LatticeEdge { a, b: bidx, dir, path, length });
        }
    }
    Ok(LatticeMap {
        eps,
        dim: n,
        points,
        vertex,
        edges,
        max_offset,
        max_deviation: max_dev,
        max_path_length: max_len,
        index,
    })
}

/// `J_P = Σ_k δ_(r_k, r_{k+1}) - δ_(r_{k+1}, r_k)`. With the outflow
/// convention `div J_P = δ_{r_0} - δ_{r_N}`.
pub fn path_unit_flow(g: &EmbeddedGraph, path: &[usize]) -> Result<FlowField> {
    let mut j = FlowField::zeros(g.num_edges());
    add_path(g, path, 1.0, &mut j)?;
    Ok(j)
}

/// Adds `w · J_P` to `j`.
pub fn add_path(g: &EmbeddedGraph, path: &[usize], w: f64, j: &mut FlowField) -> Result<()> {
    for s in path.windows(2) {
        let k = g.find_edge(s[0], s[1]).ok_or(Error::NonadjacentStep(s[0], s[1]))?;
        j.add_oriented(g, k, s[0], w);
    }
    Ok(())
}

/// `φ^# v` for a lattice flow given per lattice edge in the map's order,
/// oriented along `+e_dir`.
pub fn pushforward_flow(g: &EmbeddedGraph, map: &LatticeMap, lattice_flow: &[f64]) -> Result<FlowField> {
    if lattice_flow.len() != map.edges.len() {
        return Err(Error::UnmappedPair);
    }
    let mut j = FlowField::zeros(g.num_edges());
    for (e, &v) in map.edges.iter().zip(lattice_flow) {
        if v != 0.0 {
            add_path(g, &e.path, v, &mut j)?;
        }
    }
    Ok(j)
}

/// Lattice flow `v_ε(z, z + εe_i) = ε^{n-1} v_i` on the map's edges.
pub fn uniform_lattice_flow(map: &LatticeMap, v: &[f64]) -> Vec<f64> {
    let w = map.eps.powi(map.dim as i32 - 1);
    map.edges.iter().map(|e| w * v[e.dir]).collect()
}

/// `𝒥^v_ε = φ^#(v_ε)`.
pub fn uniform_representative(g: &EmbeddedGraph, map: &LatticeMap, v: &[f64]) -> Result<FlowField> {
    if v.len() != map.dim {
        return Err(Error::InvalidParams(format!("vector has dimension {}, lattice {}", v.len(), map.dim)));
    }
    pushforward_flow(g, map, &uniform_lattice_flow(map, v))
}

/// Diagnostics of a divergence repair.
#[derive(Debug, Clone, Default)]
pub struct RepairReport {
    /// W₁ cost of the coupling between the two signed parts.
    pub coupling_cost: f64,
    /// `Σ |K| · length` of the corrector.
    pub total_variation: f64,
    /// Largest `|div K + target|`.
    pub residual: f64,
    pub tube_doublings: usize,
}

/// Flow `K` with `div K = -target`: the positive and negative parts of
/// `-target` are coupled by a W₁-optimal plan and each coupled pair is
/// joined by a shortest path inside a tube of radius `3Rε` around the
/// segment (doubled once on failure).
pub fn divergence_repair(
    g: &EmbeddedGraph,
    target: &[f64],
    support_box: &Orthotope,
    eps: f64,
) -> Result<(FlowField, RepairReport)> {
    if target.len() != g.num_vertices() {
        return Err(Error::GraphMismatch { expected: g.num_vertices(), got: target.len() });
    }
    let l1: f64 = target.iter().map(|x| x.abs()).sum();
    let sum: f64 = target.iter().sum();
    if sum.abs() > 1e-10 * l1.max(1.0) {
        return Err(Error::UnbalancedDivergence(sum));
    }
    let mut src = Atoms::default();
    let mut dst = Atoms::default();
    for (x, &t) in target.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        if !support_box.contains_closed(g.pos(x)) {
            return Err(Error::InvalidParams(format!("divergence at vertex {} lies outside the support box", g.id(x))));
        }
        // outflow -t at x
        if t < 0.0 {
            src.push(g.pos(x).to_vec(), -t, x);
        } else {
            dst.push(g.pos(x).to_vec(), t, x);
        }
    }
    let mut k = FlowField::zeros(g.num_edges());
    let mut report = RepairReport::default();
    if src.is_empty() {
        return Ok((k, report));
    }
    let plan = optimal_plan(&src, &dst)?;
    report.coupling_cost = plan.cost;
    let r_eps = g.r_unscaled() * eps;
    for &(s, t, w) in &plan.entries {
        let (a, b) = (src.labels[s], dst.labels[t]);
        let (pa, pb) = (g.pos(a).to_vec(), g.pos(b).to_vec());
        let mut radius = 3.0 * r_eps;
        let mut found = None;
        for attempt in 0..2 {
            found = g.shortest_path(a, b, |x| point_segment_dist(g.pos(x), &pa, &pb) <= radius);
            if found.is_some() {
                report.tube_doublings += attempt;
                break;
            }
            radius *= 2.0;
        }
        let (_, path) = found.ok_or(Error::NoTubePath(g.id(a) as usize, g.id(b) as usize))?;
        add_path(g, &path, w, &mut k)?;
    }
    let d = divergence(g, &k);
    report.residual = d.iter().zip(target).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    report.total_variation = k.values().iter().enumerate().map(|(e, v)| v.abs() * g.edge_length(e)).sum();
    Ok((k, report))
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn point_segment_dist(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut t = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        t += (p[i] - a[i]) * d;
    }
    let t = if ab2 > 0.0 { (t / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut s = 0.0;
    for i in 0..p.len() {
        let q = a[i] + t * (b[i] - a[i]) - p[i];
        s += q * q;
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::means::MeanSpec;
    use crate::random_graphs::gen_lattice_nn;

    fn quarter_lattice() -> EmbeddedGraph {
        gen_lattice_nn(2, &Orthotope::cube(2, -2.0, 6.0).unwrap(), 1.0, MeanSpec::default())
            .unwrap()
            .rescale(0.25)
            .unwrap()
    }

    #[test]
    fn identity_map_on_lattice() {
        let g = quarter_lattice();
        let m = build_lattice_map(&g, 0.25, &Orthotope::cube(2, 0.0, 1.0).unwrap()).unwrap();
        assert_eq!(m.len(), 25);
        assert_eq!(m.max_offset, 0.0);
        assert!(m.edges.iter().all(|e| e.path.len() == 2));
    }

    #[test]
    fn uniform_representative_on_lattice() {
        let g = quarter_lattice();
        let m = build_lattice_map(&g, 0.25, &Orthotope::cube(2, 0.0, 1.0).unwrap()).unwrap();
        let j = uniform_representative(&g, &m, &[1.0, 0.0]).unwrap();
        for (k, e) in g.edges().iter().enumerate() {
            let (x, y) = (g.pos(e.u), g.pos(e.v));
            let horizontal_inside = x[1] == y[1] && (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&y[0])
                && (0.0..=1.0).contains(&x[1]);
            let want = if horizontal_inside { 0.25 } else { 0.0 };
            assert_eq!(j.values()[k], want);
        }
        let zero = uniform_representative(&g, &m, &[0.0, 0.0]).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_box_gives_empty_map() {
        let g = quarter_lattice();
        let b = Orthotope::new(vec![0.3, 0.3], vec![0.4, 0.4]).unwrap();
        assert!(build_lattice_map(&g, 0.25, &b).unwrap().is_empty());
    }

    #[test]
    fn path_flows() {
        let g = quarter_lattice();
        let a = (0..g.num_vertices()).find(|&i| g.pos(i) == [0.0, 0.0]).unwrap();
        let (_, nb) = g.neighbors(a)[0];
        let j = path_unit_flow(&g, &[a, g.edge(nb).other(a)]).unwrap();
        assert_eq!(j.values().iter().filter(|v| **v != 0.0).count(), 1);
        let b = g.edge(nb).other(a);
        let twice = path_unit_flow(&g, &[a, b, a, b]).unwrap();
        assert_eq!(twice.values()[nb].abs(), 1.0);
        let closed = path_unit_flow(&g, &[a, b, a]).unwrap();
        assert!(divergence(&g, &closed).iter().all(|&d| d == 0.0));
        let far = g.num_vertices() - 1;
        assert_eq!(path_unit_flow(&g, &[a, far]), Err(Error::NonadjacentStep(a, far)));
    }

    #[test]
    fn repair_adjacent_pair() {
        let g = quarter_lattice();
        let e = g.edge(0);
        let mut t = vec![0.0; g.num_vertices()];
        t[e.v] = 1.0;
        t[e.u] = -1.0;
        let b = Orthotope::cube(2, -1.0, 2.0).unwrap();
        let (k, rep) = divergence_repair(&g, &t, &b, 0.25).unwrap();
        assert_eq!(k.values()[0], 1.0);
        assert!(rep.residual < 1e-14);
        let (z, _) = divergence_repair(&g, &vec![0.0; g.num_vertices()], &b, 0.25).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }
}
