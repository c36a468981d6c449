//! Masses, flows and the discrete kinetic energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{edge_cut_fraction, gauss_legendre, Orthotope};
use crate::graph::EmbeddedGraph;

/// Nonnegative vertex function, indexed like the graph's vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MassDistribution(Vec<f64>);

impl MassDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::NegativeDensity(bad));
        }
        Ok(MassDistribution(values))
    }

    pub fn zeros(n: usize) -> Self {
        MassDistribution(vec![0.0; n])
    }

    /// Unit mass at vertex `i`.
    pub fn dirac(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        MassDistribution(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total() - 1.0).abs() <= 1e-10
    }

    fn check(&self, g: &EmbeddedGraph) -> Result<()> {
        check_len(g.num_vertices(), self.0.len())
    }
}

/// Antisymmetric edge function stored once per undirected edge in the
/// graph's orientation: entry `k` is `J(u_k, v_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowField(Vec<f64>);

impl FlowField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("flow values must be finite".into()));
        }
        Ok(FlowField(values))
    }

    pub fn zeros(num_edges: usize) -> Self {
        FlowField(vec![0.0; num_edges])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `J(x, y)` for the edge `k` read from `x`.
    pub fn oriented(&self, g: &EmbeddedGraph, k: usize, x: usize) -> f64 {
        if g.edge(k).u == x {
            self.0[k]
        } else {
            -self.0[k]
        }
    }

    /// Adds `a` to `J(x, y)` (and hence `-a` to `J(y, x)`).
    pub fn add_oriented(&mut self, g: &EmbeddedGraph, k: usize, x: usize, a: f64) {
        if g.edge(k).u == x {
            self.0[k] += a;
        } else {
            self.0[k] -= a;
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        FlowField(self.0.iter().map(|x| c * x).collect())
    }

    pub fn axpy(&mut self, a: f64, other: &FlowField) {
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += a * y;
        }
    }

    fn check(&self, g: &EmbeddedGraph) -> Result<()> {
        check_len(g.num_edges(), self.0.len())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::GraphMismatch { expected, got });
    }
    Ok(())
}

/// `J² / θ` with the convention `0/0 = 0` and `a/0 = +∞`.
pub fn perspective(j: f64, theta: f64) -> f64 {
    if j == 0.0 {
        0.0
    } else if theta <= 0.0 {
        f64::INFINITY
    } else {
        j * j / theta
    }
}

/// Energy contribution of edge `k`: `σ |x - y|² J² / θ(m(x), m(y))`.
pub fn edge_energy(g: &EmbeddedGraph, k: usize, m: &[f64], j: f64) -> f64 {
    let e = g.edge(k);
    let l = g.edge_length(k);
    e.sigma * l * l * perspective(j, e.mean.value(m[e.u], m[e.v]))
}

/// `F(m, J)`, each undirected edge counted once.
pub fn energy(g: &EmbeddedGraph, m: &MassDistribution, j: &FlowField) -> Result<f64> {
    m.check(g)?;
    j.check(g)?;
    Ok((0..g.num_edges()).map(|k| edge_energy(g, k, m.values(), j.values()[k])).sum())
}

/// `F(m, J, A)` for a union of pairwise disjoint boxes.
pub fn localized_energy(
    g: &EmbeddedGraph,
    m: &MassDistribution,
    j: &FlowField,
    boxes: &[Orthotope],
) -> Result<f64> {
    m.check(g)?;
    j.check(g)?;
    let mut total = 0.0;
    for k in 0..g.num_edges() {
        let jk = j.values()[k];
        if jk == 0.0 {
            continue;
        }
        let frac = union_fraction(g, k, boxes)?;
        if frac > 0.0 {
            total += frac * edge_energy(g, k, m.values(), jk);
        }
    }
    Ok(total)
}

fn union_fraction(g: &EmbeddedGraph, k: usize, boxes: &[Orthotope]) -> Result<f64> {
    let e = g.edge(k);
    let mut f = 0.0;
    for b in boxes {
        f += edge_cut_fraction(g.pos(e.u), g.pos(e.v), b)?;
    }
    Ok(f.min(1.0))
}

/// `G(m, J)`: the energy with the mean taken of `m(x) / deg(x)`.
pub fn degree_normalized_energy(g: &EmbeddedGraph, m: &MassDistribution, j: &FlowField) -> Result<f64> {
    m.check(g)?;
    j.check(g)?;
    let mut total = 0.0;
    for (k, e) in g.edges().iter().enumerate() {
        let jk = j.values()[k];
        if jk == 0.0 {
            continue;
        }
        let (du, dv) = (g.degree(e.u) as f64, g.degree(e.v) as f64);
        let l = g.edge_length(k);
        let th = e.mean.value(m.values()[e.u] / du, m.values()[e.v] / dv);
        total += e.sigma * l * l * perspective(jk, th);
    }
    Ok(total)
}

/// `div J(x) = Σ_{y ~ x} J(x, y)`, the outflow at `x`.
pub fn divergence(g: &EmbeddedGraph, j: &FlowField) -> Vec<f64> {
    let mut d = vec![0.0; g.num_vertices()];
    for (k, e) in g.edges().iter().enumerate() {
        let v = j.values()[k];
        d[e.u] += v;
        d[e.v] -= v;
    }
    d
}

/// `(η ⋆ J)(x, y) = (η(x) + η(y)) / 2 · J(x, y)`.
pub fn pentagram_product(g: &EmbeddedGraph, eta: &[f64], j: &FlowField) -> Result<FlowField> {
    check_len(g.num_vertices(), eta.len())?;
    j.check(g)?;
    Ok(FlowField(
        g.edges()
            .iter()
            .zip(j.values())
            .map(|(e, &v)| if v == 0.0 { 0.0 } else { 0.5 * (eta[e.u] + eta[e.v]) * v })
            .collect(),
    ))
}

/// `⟨ιJ, φ⟩` with an order-8 Gauss-Legendre rule on each segment.
pub fn embed_flow_pairing<F: Fn(&[f64]) -> Vec<f64>>(g: &EmbeddedGraph, j: &FlowField, phi: F) -> f64 {
    let (nodes, weights) = gauss_legendre(8);
    let n = g.dim();
    let mut total = 0.0;
    let mut p = vec![0.0; n];
    for (k, e) in g.edges().iter().enumerate() {
        let jk = j.values()[k];
        if jk == 0.0 {
            continue;
        }
        let (x, y) = (g.pos(e.u), g.pos(e.v));
        // ∫ φ · (y - x)/|y - x| dH¹ = ½ Σ w_i φ(p_i) · (y - x)
        let mut s = 0.0;
        for (t, w) in nodes.iter().zip(weights) {
            for i in 0..n {
                p[i] = 0.5 * (x[i] + y[i]) + 0.5 * t * (y[i] - x[i]);
            }
            let f = phi(&p);
            s += w * (0..n).map(|i| f[i] * (y[i] - x[i])).sum::<f64>();
        }
        total += jk * 0.5 * s;
    }
    total
}

/// `|ιJ|(A)`: `Σ |J| · H¹([x, y] ∩ A)` over undirected edges.
pub fn flow_tv_on_box(g: &EmbeddedGraph, j: &FlowField, a: &Orthotope) -> f64 {
    let mut total = 0.0;
    for (k, e) in g.edges().iter().enumerate() {
        let jk = j.values()[k];
        if jk == 0.0 {
            continue;
        }
        if let Some((t0, t1)) = a.clip_segment(g.pos(e.u), g.pos(e.v)) {
            total += jk.abs() * (t1 - t0) * g.edge_length(k);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::means::{MeanKind, MeanSpec};

    fn pair() -> EmbeddedGraph {
        EmbeddedGraph::new(
            2,
            2.0,
            vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            vec![Edge::new(0, 1, 1.0, MeanSpec::new(MeanKind::Arithmetic))],
        )
        .unwrap()
    }

    #[test]
    fn single_term_energy() {
        let g = pair();
        let m = MassDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(energy(&g, &m, &FlowField::new(vec![1.0]).unwrap()).unwrap(), 2.0);
        assert_eq!(energy(&g, &m, &FlowField::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn zero_mass_conventions() {
        let g = pair().with_mean(MeanSpec::new(MeanKind::Geometric)).unwrap();
        let m = MassDistribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(energy(&g, &m, &FlowField::zeros(1)).unwrap(), 0.0);
        assert_eq!(energy(&g, &m, &FlowField::new(vec![0.1]).unwrap()).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mismatch_detected() {
        let g = pair();
        let m = MassDistribution::new(vec![1.0]).unwrap();
        assert_eq!(
            energy(&g, &m, &FlowField::zeros(1)),
            Err(Error::GraphMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn localized_half_edge() {
        let g = pair();
        let m = MassDistribution::new(vec![0.5, 0.5]).unwrap();
        let j = FlowField::new(vec![1.0]).unwrap();
        let a = Orthotope::new(vec![0.5, -1.0], vec![2.0, 1.0]).unwrap();
        assert!((localized_energy(&g, &m, &j, &[a]).unwrap() - 1.0).abs() < 1e-15);
        let far = Orthotope::cube(2, 5.0, 6.0).unwrap();
        assert_eq!(localized_energy(&g, &m, &j, &[far]).unwrap(), 0.0);
    }

    #[test]
    fn pairing_and_tv_on_unit_edge() {
        let g = pair();
        let j = FlowField::new(vec![1.0]).unwrap();
        assert!((embed_flow_pairing(&g, &j, |_| vec![1.0, 0.0]) - 1.0).abs() < 1e-14);
        let a = Orthotope::cube(2, -1.0, 2.0).unwrap();
        assert!((flow_tv_on_box(&g, &j, &a) - 1.0).abs() < 1e-15);
        assert_eq!(flow_tv_on_box(&g, &j, &Orthotope::cube(2, 5.0, 6.0).unwrap()), 0.0);
    }

    #[test]
    fn unit_flow_divergence_is_outflow() {
        let g = pair();
        let d = divergence(&g, &FlowField::new(vec![1.0]).unwrap());
        assert_eq!(d, vec![1.0, -1.0]);
    }

    #[test]
    fn pentagram_identity_and_zero() {
        let g = pair();
        let j = FlowField::new(vec![0.7]).unwrap();
        assert_eq!(pentagram_product(&g, &[1.0, 1.0], &j).unwrap(), j);
        assert_eq!(pentagram_product(&g, &[0.0, 0.0], &j).unwrap().values(), &[0.0]);
    }

    #[test]
    fn flow_serialisation_keeps_antisymmetry() {
        let g = pair();
        let j = FlowField::new(vec![-0.25]).unwrap();
        let back: FlowField = serde_json::from_str(&serde_json::to_string(&j).unwrap()).unwrap();
        assert_eq!(back.oriented(&g, 0, 1), -back.oriented(&g, 0, 0));
        assert_eq!(back, j);
    }
}
