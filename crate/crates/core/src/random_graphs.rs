//! Seeded generators for lattice, random-conductance, perturbed-Voronoi and
//! cul-de-sac graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::geometry::Orthotope;
use crate::graph::{Edge, EmbeddedGraph};
use crate::means::MeanSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GraphKind {
    LatticeNN,
    RandomConductance,
    PerturbedVoronoi,
    CulDeSac,
}

/// Full description of a generated graph. `eps` rescales the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeneratorSpec {
    pub kind: GraphKind,
    #[serde(default = "two")]
    pub n: usize,
    #[serde(default)]
    pub lower: Vec<f64>,
    #[serde(default)]
    pub upper: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one", rename = "lambda")]
    pub lambda: f64,
    #[serde(default = "one", rename = "Lambda")]
    pub big_lambda: f64,
    #[serde(default)]
    pub shift_bound: f64,
    #[serde(default = "two", rename = "N")]
    pub clique_size: usize,
    #[serde(default = "two")]
    pub length: usize,
    #[serde(default = "one")]
    pub eps: f64,
    #[serde(default)]
    pub mean: MeanSpec,
    #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}

impl GeneratorSpec {
    pub fn lattice(n: usize, lower: f64, upper: f64) -> Self {
        GeneratorSpec {
            kind: GraphKind::LatticeNN,
            n,
            lower: vec![lower; n],
            upper: vec![upper; n],
            seed: 0,
            lambda: 1.0,
            big_lambda: 1.0,
            shift_bound: 0.0,
            clique_size: 2,
            length: 2,
            eps: 1.0,
            mean: MeanSpec::default(),
            r: None,
        }
    }

    pub fn random_conductance(n: usize, lower: f64, upper: f64, lambda: f64, big_lambda: f64, seed: u64) -> Self {
        GeneratorSpec { kind: GraphKind::RandomConductance, lambda, big_lambda, seed, ..Self::lattice(n, lower, upper) }
    }

    pub fn perturbed_voronoi(lower: f64, upper: f64, shift_bound: f64, seed: u64) -> Self {
        GeneratorSpec { kind: GraphKind::PerturbedVoronoi, shift_bound, seed, ..Self::lattice(2, lower, upper) }
    }

    pub fn culdesac(length: usize, clique_size: usize, eps: f64) -> Self {
        GeneratorSpec { kind: GraphKind::CulDeSac, length, clique_size, eps, ..Self::lattice(2, 0.0, 1.0) }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mean(mut self, mean: MeanSpec) -> Self {
        self.mean = mean;
        self
    }

    /// Interaction radius `R` of the generated graph before rescaling.
    pub fn radius(&self) -> f64 {
        self.r.unwrap_or(match self.kind {
            GraphKind::LatticeNN | GraphKind::RandomConductance => default_r(self.n),
            GraphKind::PerturbedVoronoi => 4.0,
            GraphKind::CulDeSac => 2.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        self.mean.validate().map_err(|e| Error::InvalidSpec(e.to_string()))?;
        if let Some(r) = self.r {
            if !(r > 0.0) {
                return bad(format!("R must be positive, got {r}"));
            }
        }
        if self.kind == GraphKind::CulDeSac {
            if self.length < 2 {
                return bad("cul-de-sac length must be at least 2".into());
            }
            if self.clique_size < 2 {
                return bad("clique size N must be at least 2".into());
            }
            return Ok(());
        }
        if self.n == 0 || self.lower.len() != self.n || self.upper.len() != self.n {
            return bad("box corners must have dimension n".into());
        }
        Orthotope::new(self.lower.clone(), self.upper.clone()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        match self.kind {
            GraphKind::RandomConductance => {
                if !(self.lambda > 0.0 && self.lambda <= self.big_lambda && self.big_lambda.is_finite()) {
                    return bad(format!("need 0 < lambda <= Lambda, got {} and {}", self.lambda, self.big_lambda));
                }
            }
            GraphKind::PerturbedVoronoi => {
                if self.n != 2 {
                    return bad("the Voronoi generator is two-dimensional".into());
                }
                if !(0.0..0.5).contains(&self.shift_bound) {
                    return bad(format!("shiftBound must lie in [0, 1/2), got {}", self.shift_bound));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<EmbeddedGraph> {
        self.validate()?;
        let bx = || Orthotope::new(self.lower.clone(), self.upper.clone());
        let mut g = match self.kind {
            GraphKind::LatticeNN => gen_lattice_nn(self.n, &bx()?, 1.0, self.mean)?,
            GraphKind::RandomConductance => {
                gen_random_conductance(self.n, &bx()?, self.lambda, self.big_lambda, self.seed, self.mean)?
            }
            GraphKind::PerturbedVoronoi => gen_perturbed_voronoi(&bx()?, self.shift_bound, self.seed, self.mean)?,
            GraphKind::CulDeSac => gen_culdesac(self.length, self.clique_size, 1.0, self.mean)?,
        };
        if let Some(r) = self.r {
            g = g.rebuild_with_r(r)?;
        }
        if self.eps != 1.0 {
            g = g.rescale(self.eps)?;
        }
        g.set_generator(serde_json::to_value(self)?);
        Ok(g)
    }
}

impl EmbeddedGraph {
    fn rebuild_with_r(&self, r: f64) -> Result<EmbeddedGraph> {
        let pos = (0..self.num_vertices()).map(|i| self.pos(i).to_vec()).collect();
        let ids = (0..self.num_vertices()).map(|i| self.id(i)).collect();
        EmbeddedGraph::with_ids(self.dim(), r, ids, pos, self.edges().to_vec())
    }
}

/// Integer points of the closed box in lexicographic order (first
/// coordinate fastest) together with their nearest-neighbour edges, each
/// oriented along `+e_i`. Returns positions, integer coordinates, and
/// `(u, v, direction)` triples.
fn lattice_points(n: usize, b: &Orthotope) -> (Vec<Vec<f64>>, Vec<Vec<i64>>, Vec<(usize, usize, usize)>) {
    let lo: Vec<i64> = b.lower.iter().map(|x| x.ceil() as i64).collect();
    let hi: Vec<i64> = b.upper.iter().map(|x| x.floor() as i64).collect();
    let counts: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1).max(0) as usize).collect();
    let total: usize = counts.iter().product();
    let mut coords = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let z: Vec<i64> = (0..n)
            .map(|i| {
                let c = lo[i] + (rem % counts[i]) as i64;
                rem /= counts[i];
                c
            })
            .collect();
        coords.push(z);
    }
    let mut stride = vec![1usize; n];
    for i in 1..n {
        stride[i] = stride[i - 1] * counts[i - 1];
    }
    let mut edges = Vec::new();
    for (idx, z) in coords.iter().enumerate() {
        for i in 0..n {
            if z[i] < hi[i] {
                edges.push((idx, idx + stride[i], i));
            }
        }
    }
    let pos = coords.iter().map(|z| z.iter().map(|&c| c as f64).collect()).collect();
    (pos, coords, edges)
}

fn default_r(n: usize) -> f64 {
    (n as f64).sqrt() + 1.0
}

/// `(Z^n ∩ box, n.n.)` with constant weight.
pub fn gen_lattice_nn(n: usize, b: &Orthotope, sigma: f64, mean: MeanSpec) -> Result<EmbeddedGraph> {
    let (pos, _, raw) = lattice_points(n, b);
    let edges = raw.into_iter().map(|(u, v, _)| Edge::new(u, v, sigma, mean)).collect();
    EmbeddedGraph::new(n, default_r(n), pos, edges)
}

/// Stream id of the lattice edge `(z, z + e_dir)`: zigzag-encoded
/// coordinates packed with the direction.
fn edge_stream(z: &[i64], dir: usize) -> u64 {
    let n = z.len() as u64;
    let bits = (62 / n).min(40);
    let mut id: u64 = dir as u64;
    for &c in z {
        let zig = ((c << 1) ^ (c >> 63)) as u64;
        id = (id << bits) ^ (zig & ((1u64 << bits) - 1));
    }
    id
}

/// Lattice with i.i.d. `Uniform[λ, Λ]` weights. Each weight is a pure
/// function of `(seed, edge)`, so overlapping boxes agree on shared edges.
pub fn gen_random_conductance(
    n: usize,
    b: &Orthotope,
    lambda: f64,
    big_lambda: f64,
    seed: u64,
    mean: MeanSpec,
) -> Result<EmbeddedGraph> {
    if !(lambda > 0.0 && lambda <= big_lambda) {
        return Err(Error::InvalidSpec(format!("need 0 < lambda <= Lambda, got {lambda}, {big_lambda}")));
    }
    let (pos, coords, raw) = lattice_points(n, b);
    let edges = raw
        .into_iter()
        .map(|(u, v, dir)| {
            let sigma = if lambda == big_lambda {
                lambda
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(edge_stream(&coords[u], dir));
                lambda + (big_lambda - lambda) * rng.random::<f64>()
            };
            Edge::new(u, v, sigma, mean)
        })
        .collect();
    EmbeddedGraph::new(n, default_r(n), pos, edges)
}

/// Delaunay graph of `z + ξ(z)` for lattice sites `z`, with `ξ` uniform in
/// the disc of radius `shift_bound`. Sites are generated on the box padded
/// by 3 and the vertices kept are those whose site lies in the box padded
/// by 1, so hull effects never reach them.
pub fn gen_perturbed_voronoi(b: &Orthotope, shift_bound: f64, seed: u64, mean: MeanSpec) -> Result<EmbeddedGraph> {
    if b.dim() != 2 {
        return Err(Error::InvalidSpec("the Voronoi generator is two-dimensional".into()));
    }
    if !(0.0..0.5).contains(&shift_bound) {
        return Err(Error::InvalidSpec(format!("shiftBound must lie in [0, 1/2), got {shift_bound}")));
    }
    let mut g = if shift_bound == 0.0 {
        gen_lattice_nn(2, b, 1.0, mean)?
    } else {
        match voronoi_attempt(b, shift_bound, seed, mean) {
            Err(Error::DegenerateTriangulation) => {
                voronoi_attempt(b, shift_bound, seed ^ 0x9e37_79b9_7f4a_7c15, mean)?
            }
            other => other?,
        }
    };
    g = g.rebuild_with_r(4.0)?;
    Ok(g)
}

fn voronoi_attempt(b: &Orthotope, shift_bound: f64, seed: u64, mean: MeanSpec) -> Result<EmbeddedGraph> {
    let padded = b.inflate(3.0)?;
    let keep = b.inflate(1.0)?;
    let (_, coords, _) = lattice_points(2, &padded);
    let mut pts = Vec::with_capacity(coords.len());
    for z in &coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(edge_stream(z, 3));
        // uniform in the disc
        let rad = shift_bound * rng.random::<f64>().sqrt();
        let ang = std::f64::consts::TAU * rng.random::<f64>();
        pts.push([z[0] as f64 + rad * ang.cos(), z[1] as f64 + rad * ang.sin()]);
    }
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handle_to_site = Vec::with_capacity(pts.len());
    for p in &pts {
        let h = tri.insert(Point2::new(p[0], p[1])).map_err(|_| Error::DegenerateTriangulation)?;
        if h.index() != handle_to_site.len() {
            return Err(Error::DegenerateTriangulation);
        }
        handle_to_site.push(handle_to_site.len());
    }
    if tri.num_vertices() != pts.len() {
        return Err(Error::DegenerateTriangulation);
    }
    let inside: Vec<bool> =
        coords.iter().map(|z| keep.contains_closed(&[z[0] as f64, z[1] as f64])).collect();
    let mut new_index = vec![usize::MAX; pts.len()];
    let mut pos = Vec::new();
    for (i, &k) in inside.iter().enumerate() {
        if k {
            new_index[i] = pos.len();
            pos.push(pts[i].to_vec());
        }
    }
    let mut pairs: Vec<(usize, usize)> = tri
        .undirected_edges()
        .map(|e| {
            let [a, c] = e.vertices();
            let (a, c) = (handle_to_site[a.fix().index()], handle_to_site[c.fix().index()]);
            (a.min(c), a.max(c))
        })
        .filter(|&(a, c)| inside[a] && inside[c])
        .map(|(a, c)| (new_index[a], new_index[c]))
        .collect();
    pairs.sort_unstable();
    let edges = pairs.into_iter().map(|(u, v)| Edge::new(u, v, 1.0, mean)).collect();
    EmbeddedGraph::new(2, 4.0, pos, edges)
}

/// Base path `Z ∩ [0, L]` on the first axis; each base vertex gets its own
/// complete graph on `N` vertices placed on a circle of radius 1/8 centred
/// 5/8 above it, fully joined to the base vertex. Vertices are numbered
/// base first, then clique by clique.
pub fn gen_culdesac(length: usize, clique_size: usize, eps: f64, mean: MeanSpec) -> Result<EmbeddedGraph> {
    if length < 2 || clique_size < 2 {
        return Err(Error::InvalidSpec("cul-de-sac needs L >= 2 and N >= 2".into()));
    }
    let nb = length + 1;
    let mut pos: Vec<Vec<f64>> = (0..nb).map(|k| vec![k as f64, 0.0]).collect();
    let mut edges: Vec<Edge> = (0..length).map(|k| Edge::new(k, k + 1, 1.0, mean)).collect();
    for k in 0..nb {
        let first = pos.len();
        for a in 0..clique_size {
            let ang = std::f64::consts::TAU * a as f64 / clique_size as f64;
            pos.push(vec![k as f64 + 0.125 * ang.cos(), 0.625 + 0.125 * ang.sin()]);
        }
        for a in 0..clique_size {
            edges.push(Edge::new(k, first + a, 1.0, mean));
            for c in a + 1..clique_size {
                edges.push(Edge::new(first + a, first + c, 1.0, mean));
            }
        }
    }
    let g = EmbeddedGraph::new(2, 2.0, pos, edges)?;
    if eps == 1.0 {
        Ok(g)
    } else {
        g.rescale(eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_geometry;

    fn sq(lo: f64, hi: f64) -> Orthotope {
        Orthotope::cube(2, lo, hi).unwrap()
    }

    #[test]
    fn lattice_counts() {
        let g = gen_lattice_nn(2, &sq(0.0, 3.0), 1.0, MeanSpec::default()).unwrap();
        assert_eq!((g.num_vertices(), g.num_edges()), (16, 24));
        let p = gen_lattice_nn(1, &Orthotope::cube(1, 0.0, 2.0).unwrap(), 1.0, MeanSpec::default()).unwrap();
        assert_eq!((p.num_vertices(), p.num_edges()), (3, 2));
        let w = gen_lattice_nn(2, &sq(0.0, 2.0), 2.0, MeanSpec::default()).unwrap();
        assert!(w.edges().iter().all(|e| e.sigma == 2.0));
    }

    #[test]
    fn conductance_degenerate_range_is_lattice() {
        let a = gen_random_conductance(2, &sq(0.0, 4.0), 1.0, 1.0, 9, MeanSpec::default()).unwrap();
        let b = gen_lattice_nn(2, &sq(0.0, 4.0), 1.0, MeanSpec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conductance_range_and_seed_dependence() {
        let a = gen_random_conductance(2, &sq(0.0, 6.0), 1.0, 4.0, 1, MeanSpec::default()).unwrap();
        let b = gen_random_conductance(2, &sq(0.0, 6.0), 1.0, 4.0, 2, MeanSpec::default()).unwrap();
        assert!(a.edges().iter().all(|e| (1.0..=4.0).contains(&e.sigma)));
        let first = |g: &EmbeddedGraph| g.edges()[..10].iter().map(|e| e.sigma).collect::<Vec<_>>();
        assert_ne!(first(&a), first(&b));
    }

    #[test]
    fn conductance_is_local_in_the_box() {
        // a shared edge gets the same weight whichever box generated it
        let a = gen_random_conductance(2, &sq(0.0, 4.0), 1.0, 4.0, 3, MeanSpec::default()).unwrap();
        let b = gen_random_conductance(2, &sq(-2.0, 4.0), 1.0, 4.0, 3, MeanSpec::default()).unwrap();
        let find = |g: &EmbeddedGraph, x: [f64; 2], y: [f64; 2]| {
            g.edges().iter().find(|e| g.pos(e.u) == x && g.pos(e.v) == y).unwrap().sigma
        };
        assert_eq!(find(&a, [1.0, 1.0], [2.0, 1.0]), find(&b, [1.0, 1.0], [2.0, 1.0]));
    }

    #[test]
    fn voronoi_zero_shift_is_lattice() {
        let v = gen_perturbed_voronoi(&sq(0.0, 3.0), 0.0, 1, MeanSpec::default()).unwrap();
        assert_eq!((v.num_vertices(), v.num_edges()), (16, 24));
    }

    #[test]
    fn voronoi_geometry() {
        let b = sq(0.0, 8.0);
        let g = gen_perturbed_voronoi(&b, 0.3, 5, MeanSpec::default()).unwrap();
        assert!(g.max_edge_length() <= 1.0 + 2.0 * 0.3 + 1.0);
        let rep = validate_geometry(&g, &b, 0.25, 200).unwrap();
        assert!(rep.passed(), "{:?}", rep.violations);
        for i in g.vertices_in(&b) {
            assert!(g.degree(i) >= 3);
        }
        assert!(g.num_edges() <= 3 * g.num_vertices() - 6);
    }

    #[test]
    fn voronoi_rejects_large_shift() {
        let s = GeneratorSpec::perturbed_voronoi(0.0, 4.0, 0.6, 0);
        assert!(matches!(s.generate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn culdesac_counts() {
        let g = gen_culdesac(2, 2, 1.0, MeanSpec::default()).unwrap();
        assert_eq!(g.num_vertices(), 9);
        assert_eq!(g.degree(1), 4);
        let h = gen_culdesac(4, 8, 0.5, MeanSpec::default()).unwrap();
        assert_eq!(h.num_vertices(), 5 * 9);
        assert_eq!(h.max_degree(), 10);
        assert!(h.max_edge_length() <= 0.5 + 1e-12);
    }

    #[test]
    fn spec_round_trip_is_deterministic() {
        let s = GeneratorSpec::random_conductance(2, 0.0, 4.0, 1.0, 2.0, 7);
        let a = s.generate().unwrap().to_json();
        let s2: GeneratorSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(a, s2.generate().unwrap().to_json());
    }
}
