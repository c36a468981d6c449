//! Recovery sequences: given a smooth curve `(ρ, j)`, a discrete curve on a
//! graph of scale `ε` whose action approximates the homogenized action.
//!
//! `[0, T]` is cut into intervals of length `h`, each a flow phase of length
//! `(1 - η) h` followed by a maintenance phase of length `η h`; space is cut
//! into cubes of side `δ`. In a flow phase the flow is constant: a lattice
//! backbone pushed into the graph and replaced by cell microstructure on
//! shrunken cubes, while depot masses absorb the backbone divergence. The
//! maintenance phases are bridged cube by cube by discrete geodesics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{assemble_cell_problem, solve_cell_with, CellOptions};
use crate::curve::DiscreteCurve;
use crate::density::{eval_homogenized_action, family_graph, DensityModel, GridSpec};
use crate::energy::{edge_energy, MassDistribution};
use crate::error::{Error, Result};
use crate::geodesic::{solve_geodesic, GeodesicProblem};
use crate::geometry::{norm, Orthotope};
use crate::graph::EmbeddedGraph;
use crate::linalg::Laplacian;
use crate::random_graphs::{GeneratorSpec, GraphKind};
use crate::uniform_flow::{build_lattice_map, pushforward_flow, LatticeMap};
use crate::wasserstein::w_infinity_distance;

const GL4_NODES: [f64; 4] = [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
const GL4_WEIGHTS: [f64; 4] = [0.347_854_845_137_453_8, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_8];

/// Closed-form smooth curves. The bump is `φ(x) = C (1 - |x|²/r²)³₊` with
/// `C` chosen so that `∫ φ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Profile {
    /// `ρ(t, x) = φ(x - c - t v)`, `j = v ρ`.
    TranslatingBump { center: Vec<f64>, velocity: Vec<f64>, radius: f64 },
    /// `ρ(t, x) = φ(x - c)`, `j = 0`.
    Static { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SmoothCurveSpec {
    pub profile: Profile,
    pub total_time: f64,
    /// The support lies in `[-M/2, M/2]^n` with `M/2 = half_width`.
    pub half_width: f64,
}

/// Checks of a smooth curve on a sampling grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CurveCheck {
    /// Largest `|∂_t ρ + div j|` by central differences, relative to the
    /// largest `|∂_t ρ| + |div j|` seen.
    pub ce_residual: f64,
    pub initial_mass: f64,
}

/// `Γ(x)` for integer and half-integer `x ≥ 1/2`.
fn gamma_half(x: f64) -> f64 {
    let mut acc = 1.0;
    let mut y = x;
    while y > 1.0 + 1e-12 {
        y -= 1.0;
        acc *= y;
    }
    if (y - 0.5).abs() < 1e-12 {
        acc * std::f64::consts::PI.sqrt()
    } else {
        acc
    }
}

impl SmoothCurveSpec {
    pub fn translating_bump(center: Vec<f64>, velocity: Vec<f64>, radius: f64, total_time: f64, half_width: f64) -> Self {
        SmoothCurveSpec { profile: Profile::TranslatingBump { center, velocity, radius }, total_time, half_width }
    }

    pub fn stationary_bump(center: Vec<f64>, radius: f64, total_time: f64, half_width: f64) -> Self {
        SmoothCurveSpec { profile: Profile::Static { center, radius }, total_time, half_width }
    }

    pub fn dim(&self) -> usize {
        self.center().len()
    }

    fn center(&self) -> &[f64] {
        match &self.profile {
            Profile::TranslatingBump { center, .. } | Profile::Static { center, .. } => center,
        }
    }

    fn radius(&self) -> f64 {
        match &self.profile {
            Profile::TranslatingBump { radius, .. } | Profile::Static { radius, .. } => *radius,
        }
    }

    pub fn velocity(&self) -> Vec<f64> {
        match &self.profile {
            Profile::TranslatingBump { velocity, .. } => velocity.clone(),
            Profile::Static { center, .. } => vec![0.0; center.len()],
        }
    }

    fn bump_constant(&self) -> f64 {
        let n = self.dim() as f64;
        gamma_half(n / 2.0 + 4.0) / (std::f64::consts::PI.powf(n / 2.0) * 6.0 * self.radius().powf(n))
    }

    pub fn support_box(&self) -> Result<Orthotope> {
        Orthotope::cube(self.dim(), -self.half_width, self.half_width)
    }

    pub fn rho(&self, t: f64, x: &[f64]) -> f64 {
        let v = self.velocity();
        let r = self.radius();
        let s2: f64 = x.iter().zip(self.center()).zip(&v).map(|((xi, c), vi)| (xi - c - t * vi).powi(2)).sum::<f64>() / (r * r);
        if s2 >= 1.0 {
            0.0
        } else {
            self.bump_constant() * (1.0 - s2).powi(3)
        }
    }

    pub fn flux(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let p = self.rho(t, x);
        self.velocity().iter().map(|v| v * p).collect()
    }

    /// `sup |j|`.
    pub fn flux_sup(&self) -> f64 {
        norm(&self.velocity()) * self.bump_constant()
    }

    /// Lipschitz constant of `j`: `|v| · sup |∇φ|`, where the sup of
    /// `6 s (1 - s²)² / r` is attained at `s = 1/√5`.
    pub fn lip_flux(&self) -> f64 {
        let s = 1.0 / 5f64.sqrt();
        norm(&self.velocity()) * self.bump_constant() * 6.0 * s * (1.0 - s * s).powi(2) / self.radius()
    }

    pub fn validate(&self) -> Result<CurveCheck> {
        let n = self.dim();
        let bad = |m: String| Err(Error::InvalidParams(m));
        if n == 0 || self.velocity().len() != n {
            return bad("curve centre and velocity must share a positive dimension".into());
        }
        if !(self.radius() > 0.0 && self.total_time > 0.0 && self.half_width > 0.0) {
            return bad("radius, total time and half width must be positive".into());
        }
        let v = self.velocity();
        for t in [0.0, self.total_time] {
            for i in 0..n {
                let c = self.center()[i] + t * v[i];
                if (c.abs() + self.radius()) > self.half_width {
                    return bad(format!("support leaves [-{0}, {0}]^{n} at time {t}", self.half_width));
                }
            }
        }
        let sub = 32;
        let b = self.support_box()?;
        let mass: f64 = tensor_nodes(&b.lower, &b.upper, sub).iter().map(|(x, w)| w * self.rho(0.0, x)).sum();
        if (mass - 1.0).abs() > 1e-6 {
            return bad(format!("initial density integrates to {mass}"));
        }
        let d = 1e-4 * self.radius();
        let pts = 12usize;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for ti in 1..4 {
            let t = self.total_time * ti as f64 / 4.0;
            for flat in 0..pts.pow(n as u32) {
                let mut rem = flat;
                let x: Vec<f64> = (0..n)
                    .map(|_| {
                        let c = rem % pts;
                        rem /= pts;
                        -self.half_width + (c as f64 + 0.5) * 2.0 * self.half_width / pts as f64
                    })
                    .collect();
                let dt = (self.rho(t + d, &x) - self.rho(t - d, &x)) / (2.0 * d);
                let mut div = 0.0;
                for i in 0..n {
                    let (mut a, mut c) = (x.clone(), x.clone());
                    a[i] += d;
                    c[i] -= d;
                    div += (self.flux(t, &a)[i] - self.flux(t, &c)[i]) / (2.0 * d);
                }
                worst = worst.max((dt + div).abs());
                scale = scale.max(dt.abs() + div.abs());
            }
        }
        let ce_residual = if scale > 0.0 { worst / scale } else { worst };
        if ce_residual > 1e-4 {
            return bad(format!("curve violates the continuity equation: relative residual {ce_residual:e}"));
        }
        Ok(CurveCheck { ce_residual, initial_mass: mass })
    }
}

/// Composite tensor Gauss-Legendre rule of order 4 with `sub` panels per
/// axis; axes with `lo == hi` are collapsed to a single unit-weight node.
fn tensor_nodes(lo: &[f64], hi: &[f64], sub: usize) -> Vec<(Vec<f64>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for (a, b) in lo.iter().zip(hi) {
        let axis: Vec<(f64, f64)> = if a == b {
            vec![(*a, 1.0)]
        } else {
            let w = (b - a) / sub as f64;
            (0..sub)
                .flat_map(|p| {
                    let c = a + (p as f64 + 0.5) * w;
                    GL4_NODES.iter().zip(&GL4_WEIGHTS).map(move |(x, wt)| (c + 0.5 * w * x, 0.5 * w * wt))
                })
                .collect()
        };
        out = out
            .into_iter()
            .flat_map(|(p, w)| {
                axis.iter().map(move |&(x, wx)| {
                    let mut q = p.clone();
                    q.push(x);
                    (q, w * wx)
                })
            })
            .collect();
    }
    out
}

fn near_integer(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() <= 1e-9 * r.abs().max(1.0) && r >= 1.0).then_some(r as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecoveryParams {
    pub h: f64,
    pub delta: f64,
    pub eta: f64,
    pub eps: f64,
    pub alpha: f64,
    #[serde(default = "four")]
    pub flow_substeps: usize,
    #[serde(default = "four")]
    pub gap_steps: usize,
    #[serde(default = "four")]
    pub quadrature_panels: usize,
    #[serde(default = "tol8")]
    pub cell_tol: f64,
    #[serde(default = "tol8")]
    pub geodesic_tol: f64,
}

fn four() -> usize {
    4
}
fn tol8() -> f64 {
    1e-8
}

/// Derived sizes and the smallness ratios of a parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamsCheck {
    pub intervals: usize,
    pub cubes_per_side: usize,
    pub points_per_cube_side: usize,
    pub alpha_min: f64,
    /// `δ² / (η h)`.
    pub smallness_ratio: f64,
    pub smallness_ok: bool,
    /// Side `δ - 3Rε` of the shrunken cubes.
    pub inner_side: f64,
    /// Whether `δ - 3Rε ≥ ε`, so that cell problems fit in the shrunken cubes.
    pub microstructure: bool,
}

impl RecoveryParams {
    pub fn new(h: f64, delta: f64, eta: f64, eps: f64, alpha: f64) -> Self {
        RecoveryParams {
            h,
            delta,
            eta,
            eps,
            alpha,
            flow_substeps: 4,
            gap_steps: 4,
            quadrature_panels: 4,
            cell_tol: 1e-8,
            geodesic_tol: 1e-8,
        }
    }

    /// `h (n/2) Lip(j)`.
    pub fn minimal_alpha(h: f64, spec: &SmoothCurveSpec) -> f64 {
        h * spec.dim() as f64 / 2.0 * spec.lip_flux()
    }

    /// `r` is the unscaled geometry constant of the graph family.
    pub fn validate(&self, spec: &SmoothCurveSpec, r: f64) -> Result<ParamsCheck> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.h > 0.0 && self.delta > 0.0 && self.eps > 0.0) {
            return bad("h, delta and eps must be positive".into());
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if self.flow_substeps == 0 || self.gap_steps == 0 || self.quadrature_panels == 0 {
            return bad("substep and panel counts must be positive".into());
        }
        let Some(intervals) = near_integer(spec.total_time / self.h) else {
            return bad(format!("T/h = {} is not an integer", spec.total_time / self.h));
        };
        let Some(cubes) = near_integer(2.0 * spec.half_width / self.delta) else {
            return bad(format!("M/delta = {} is not an integer", 2.0 * spec.half_width / self.delta));
        };
        let Some(points) = near_integer(self.delta / self.eps) else {
            return bad(format!("delta/eps = {} is not an integer", self.delta / self.eps));
        };
        if near_integer(spec.half_width / self.delta).is_none() {
            return bad("the cube grid must contain the origin as a corner".into());
        }
        let alpha_min = Self::minimal_alpha(self.h, spec);
        if self.alpha < alpha_min * (1.0 - 1e-12) {
            return bad(format!("alpha = {} is below h (n/2) Lip(j) = {alpha_min}", self.alpha));
        }
        let smallness_ratio = self.delta * self.delta / (self.eta * self.h);
        let inner_side = self.delta - 3.0 * r * self.eps;
        Ok(ParamsCheck {
            intervals,
            cubes_per_side: cubes,
            points_per_cube_side: points,
            alpha_min,
            smallness_ratio,
            smallness_ok: smallness_ratio <= 0.1,
            inner_side,
            microstructure: inner_side >= self.eps * (1.0 - 1e-12),
        })
    }
}

/// Cubes `Q(z, δ) = z + [0, δ)^n` tiling an axis-aligned box.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CubeGrid {
    pub lower: Vec<f64>,
    pub delta: f64,
    pub counts: Vec<usize>,
}

impl CubeGrid {
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, mut i: usize) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&c| {
                let r = i % c;
                i /= c;
                r
            })
            .collect()
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.counts).rev().fold(0, |acc, (&ci, &n)| acc * n + ci)
    }

    pub fn corner(&self, i: usize) -> Vec<f64> {
        self.coords(i).iter().zip(&self.lower).map(|(&c, l)| l + c as f64 * self.delta).collect()
    }

    pub fn cube(&self, i: usize) -> Result<Orthotope> {
        let lo = self.corner(i);
        let hi = lo.iter().map(|x| x + self.delta).collect();
        Orthotope::new(lo, hi)
    }

    /// Cube containing `p`, if any (half-open).
    pub fn cube_of(&self, p: &[f64]) -> Option<usize> {
        let mut c = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let x = ((p[i] - self.lower[i]) / self.delta + 1e-9).floor();
            if x < 0.0 || x >= self.counts[i] as f64 {
                return None;
            }
            c.push(x as usize);
        }
        Some(self.index(&c))
    }
}

/// Face between cube `from` and cube `to = from + e_dir`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub from: usize,
    pub to: usize,
    pub dir: usize,
}

/// Cube masses `ρ^z_{t_k}` and face fluxes `j^{z,z'}_{t_k,t_{k+1}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CellData {
    pub grid: CubeGrid,
    pub faces: Vec<Face>,
    pub h: f64,
    /// `rho[k][z]`, `k = 0..=K`.
    pub rho: Vec<Vec<f64>>,
    /// `flux[k][f]`, from `faces[f].from` to `faces[f].to`.
    pub flux: Vec<Vec<f64>>,
    /// Largest `|Σ_z ρ^z_{t_k} - 1|` removed by renormalisation.
    pub mass_renormalisation: f64,
    pub pre_residual: f64,
    /// Largest face correction applied by balancing.
    pub correction: f64,
    pub residual: f64,
}

impl CellData {
    pub fn intervals(&self) -> usize {
        self.flux.len()
    }

    /// `Σ_{z'} j^{z,z'}` over interval `k`.
    pub fn net_outflow(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (f, &j) in self.faces.iter().zip(&self.flux[k]) {
            out[f.from] += j;
            out[f.to] -= j;
        }
        out
    }

    /// `j^z_i = ½ (j^{z,z+δe_i} + j^{z-δe_i,z})`; faces leaving the grid
    /// carry no flux.
    pub fn cube_vectors(&self, k: usize) -> Vec<Vec<f64>> {
        let mut v = vec![vec![0.0; self.grid.dim()]; self.grid.len()];
        for (f, &j) in self.faces.iter().zip(&self.flux[k]) {
            v[f.from][f.dir] += 0.5 * j;
            v[f.to][f.dir] += 0.5 * j;
        }
        v
    }

    fn residuals(&self) -> Vec<Vec<f64>> {
        (0..self.intervals())
            .map(|k| {
                let out = self.net_outflow(k);
                (0..self.grid.len()).map(|z| (self.rho[k + 1][z] - self.rho[k][z]) / self.h + out[z]).collect()
            })
            .collect()
    }
}

/// Cube masses by quadrature at the grid times, face fluxes by space-time
/// quadrature, then a weighted least-squares correction of the fluxes that
/// makes the discrete continuity equation exact.
pub fn discretize_continuity(spec: &SmoothCurveSpec, h: f64, delta: f64, panels: usize) -> Result<CellData> {
    let n = spec.dim();
    let Some(steps) = near_integer(spec.total_time / h) else {
        return Err(Error::InvalidParams("T/h is not an integer".into()));
    };
    let Some(cps) = near_integer(2.0 * spec.half_width / delta) else {
        return Err(Error::InvalidParams("box side / delta is not an integer".into()));
    };
    let grid = CubeGrid { lower: vec![-spec.half_width; n], delta, counts: vec![cps; n] };
    let mut faces = Vec::new();
    for z in 0..grid.len() {
        let c = grid.coords(z);
        for dir in 0..n {
            if c[dir] + 1 < cps {
                let mut c2 = c.clone();
                c2[dir] += 1;
                faces.push(Face { from: z, to: grid.index(&c2), dir });
            }
        }
    }
    let rho_raw: Vec<Vec<f64>> = (0..=steps)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * h;
            (0..grid.len())
                .map(|z| {
                    let lo = grid.corner(z);
                    let hi: Vec<f64> = lo.iter().map(|x| x + delta).collect();
                    tensor_nodes(&lo, &hi, panels).iter().map(|(x, w)| w * spec.rho(t, x)).sum()
                })
                .collect()
        })
        .collect();
    let mut renorm: f64 = 0.0;
    let rho: Vec<Vec<f64>> = rho_raw
        .into_iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            renorm = renorm.max((s - 1.0).abs());
            r.iter().map(|x| x / s).collect()
        })
        .collect();
    let times: Vec<Vec<(Vec<f64>, f64)>> =
        (0..steps).map(|k| tensor_nodes(&[k as f64 * h], &[(k + 1) as f64 * h], panels)).collect();
    let flux: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|k| {
            faces
                .iter()
                .map(|f| {
                    let mut lo = grid.corner(f.from);
                    lo[f.dir] += delta;
                    let mut hi: Vec<f64> = lo.iter().map(|x| x + delta).collect();
                    hi[f.dir] = lo[f.dir];
                    let nodes = tensor_nodes(&lo, &hi, panels);
                    let mut acc = 0.0;
                    for (t, wt) in &times[k] {
                        for (x, w) in &nodes {
                            acc += wt * w * spec.flux(t[0], x)[f.dir];
                        }
                    }
                    acc / h
                })
                .collect()
        })
        .collect();
    let mut data = CellData {
        grid,
        faces,
        h,
        rho,
        flux,
        mass_renormalisation: renorm,
        pre_residual: 0.0,
        correction: 0.0,
        residual: 0.0,
    };
    let res = data.residuals();
    data.pre_residual = res.iter().flatten().fold(0.0, |a: f64, b| a.max(b.abs()));
    if data.pre_residual > 1e-3 {
        return Err(Error::CEResidualTooLarge(data.pre_residual));
    }
    for k in 0..steps {
        if res[k].iter().all(|&r| r == 0.0) {
            continue;
        }
        let fmax = data.flux[k].iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let weights: Vec<f64> =
            data.flux[k].iter().map(|j| if fmax > 0.0 { j.abs() + 1e-12 * fmax } else { 1.0 }).collect();
        let edges: Vec<(usize, usize, f64)> =
            data.faces.iter().zip(&weights).map(|(f, &w)| (f.from, f.to, w)).collect();
        let lap = Laplacian::new(data.grid.len(), &edges);
        let rhs: Vec<f64> = res[k].iter().map(|r| -r).collect();
        let sol = lap.solve(&rhs, None, 1e-15, 20_000);
        for (i, f) in data.faces.iter().enumerate() {
            let c = weights[i] * (sol.potential[f.from] - sol.potential[f.to]);
            data.correction = data.correction.max(c.abs());
            data.flux[k][i] += c;
        }
    }
    data.residual = data.residuals().iter().flatten().fold(0.0, |a: f64, b| a.max(b.abs()));
    if data.residual > 1e-8 {
        return Err(Error::CEResidualTooLarge(data.residual));
    }
    Ok(data)
}

/// Backbone flows `J̃_k = φ^# v_k / (1 - η)` and the data for the depots.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub map: LatticeMap,
    /// Cube of each lattice point (`None` on the upper faces of the box).
    pub point_cube: Vec<Option<usize>>,
    /// `v^ε_{t_k,t_{k+1}}` on the map's edges.
    pub lattice_flows: Vec<Vec<f64>>,
    /// `J̃` on the graph's edges, per interval.
    pub flows: Vec<Vec<f64>>,
    /// `div v^ε` per interval and lattice point.
    pub divergence: Vec<Vec<f64>>,
    /// Lattice points carrying a depot: `div v^ε ≠ 0` in some interval.
    pub depot_support: Vec<bool>,
    /// `α δ ε^{n-1}`.
    pub depot_level: f64,
    pub eta: f64,
    pub h: f64,
    pub max_divergence: f64,
    /// `(n/2) Lip(j) δ ε^{n-1}`.
    pub divergence_bound: f64,
    pub min_depot: f64,
    /// Largest `|Σ_{a ∈ Q(z)} div v - Σ_{z'} j^{z,z'}|`.
    pub aggregate_residual: f64,
    /// Largest deviation from `Σ (depot(t_{k+1} - ηh) - depot(t_k)) = ρ^z_{k+1} - ρ^z_k`.
    pub books_residual: f64,
}

impl Backbone {
    /// Depot of cube `z` (all cubes when `None`) at time `t_k + s`,
    /// `0 ≤ s ≤ (1 - η) h`, as a vertex vector. `k` may equal the number of
    /// intervals, giving the level `α δ ε^{n-1}` on the support.
    pub fn depot(&self, nv: usize, k: usize, s: f64, z: Option<usize>) -> Vec<f64> {
        let mut m = vec![0.0; nv];
        let last = self.divergence.len() - 1;
        let (div, s) = if k > last { (&self.divergence[last], 0.0) } else { (&self.divergence[k], s) };
        for (a, &d) in div.iter().enumerate() {
            if !self.depot_support[a] || (z.is_some() && self.point_cube[a] != z) {
                continue;
            }
            m[self.map.vertex[a]] += self.depot_level - s / (1.0 - self.eta) * d;
        }
        m
    }
}

pub fn backbone_and_depots(
    data: &CellData,
    g: &EmbeddedGraph,
    spec: &SmoothCurveSpec,
    params: &RecoveryParams,
) -> Result<Backbone> {
    let n = data.grid.dim();
    let eps = params.eps;
    let hi: Vec<f64> = data.grid.lower.iter().zip(&data.grid.counts).map(|(l, &c)| l + c as f64 * data.grid.delta).collect();
    let map = build_lattice_map(g, eps, &Orthotope::new(data.grid.lower.clone(), hi)?)?;
    let point_cube: Vec<Option<usize>> = (0..map.len()).map(|a| data.grid.cube_of(&map.point(a))).collect();
    let scale = (eps / data.grid.delta).powi(n as i32 - 1);
    let face_of: std::collections::HashMap<(usize, usize), usize> =
        data.faces.iter().enumerate().map(|(i, f)| ((f.from, f.dir), i)).collect();
    let mut lattice_flows = Vec::new();
    let mut flows = Vec::new();
    let mut divergence = Vec::new();
    for k in 0..data.intervals() {
        let vecs = data.cube_vectors(k);
        let v: Vec<f64> = map
            .edges
            .iter()
            .map(|e| match (point_cube[e.a], point_cube[e.b]) {
                (Some(za), Some(zb)) if za == zb => scale * vecs[za][e.dir],
                (Some(za), Some(_)) => face_of.get(&(za, e.dir)).map_or(0.0, |&f| scale * data.flux[k][f]),
                _ => 0.0,
            })
            .collect();
        let mut div = vec![0.0; map.len()];
        for (e, &x) in map.edges.iter().zip(&v) {
            div[e.a] += x;
            div[e.b] -= x;
        }
        let pushed = pushforward_flow(g, &map, &v)?;
        flows.push(pushed.values().iter().map(|x| x / (1.0 - params.eta)).collect());
        lattice_flows.push(v);
        divergence.push(div);
    }
    let depot_support: Vec<bool> = (0..map.len()).map(|a| divergence.iter().any(|d| d[a] != 0.0)).collect();
    let depot_level = params.alpha * data.grid.delta * eps.powi(n as i32 - 1);
    let max_divergence = divergence.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut min_depot = f64::INFINITY;
    let mut aggregate_residual: f64 = 0.0;
    let mut books_residual: f64 = 0.0;
    for k in 0..data.intervals() {
        let out = data.net_outflow(k);
        let mut agg = vec![0.0; data.grid.len()];
        for (a, &d) in divergence[k].iter().enumerate() {
            if let Some(z) = point_cube[a] {
                agg[z] += d;
            }
            if depot_support[a] {
                min_depot = min_depot.min(depot_level - params.h * d);
            }
        }
        for z in 0..data.grid.len() {
            aggregate_residual = aggregate_residual.max((agg[z] - out[z]).abs());
            // the depot of z changes by -h Σ div v over the flow phase
            let change = -params.h * agg[z];
            books_residual = books_residual.max((change - (data.rho[k + 1][z] - data.rho[k][z])).abs());
        }
    }
    if !min_depot.is_finite() {
        min_depot = 0.0;
    }
    if min_depot < -1e-12 * depot_level.max(f64::MIN_POSITIVE) {
        return Err(Error::NegativeDepot(min_depot));
    }
    Ok(Backbone {
        map,
        point_cube,
        lattice_flows,
        flows,
        divergence,
        depot_support,
        depot_level,
        eta: params.eta,
        h: params.h,
        max_divergence,
        divergence_bound: n as f64 / 2.0 * spec.lip_flux() * data.grid.delta * eps.powi(n as i32 - 1),
        min_depot,
        aggregate_residual,
        books_residual,
    })
}

/// Sparse vertex masses of one cube.
pub type Layout = Vec<(usize, f64)>;

/// Flow-phase data after replacing the backbone by cell microstructure.
#[derive(Debug, Clone)]
pub struct Microstructure {
    /// Glued flow per interval.
    pub flows: Vec<Vec<f64>>,
    /// `layouts[k][z]`: mass `ρ^z_{t_k}` of cube `z` during interval `k`;
    /// `k` runs to the number of intervals inclusive.
    pub layouts: Vec<Vec<Layout>>,
    /// Whether a cell solution was used for `(k, z)`.
    pub active: Vec<Vec<bool>>,
    pub path_mass: Vec<f64>,
    /// `Σ_z F(m_z, J_z, q_z)` per interval.
    pub cell_energy: Vec<f64>,
    pub cell_solves: usize,
    pub cells_converged: bool,
    pub max_seam_mismatch: f64,
    /// Edges meeting an active shrunken cube, per interval.
    pub covered_edges: Vec<Vec<bool>>,
}

impl Microstructure {
    /// Sum of the cube layouts of interval `k`.
    pub fn cube_mass(&self, nv: usize, k: usize) -> Vec<f64> {
        let mut m = vec![0.0; nv];
        for l in &self.layouts[k] {
            for &(x, w) in l {
                m[x] += w;
            }
        }
        m
    }
}

/// Shrunken cube `q_z = Q(z, δ - 3Rε)`, concentric with `Q(z, δ)`.
fn inner_cube(grid: &CubeGrid, z: usize, side: f64) -> Result<Orthotope> {
    let lo: Vec<f64> = grid.corner(z).iter().map(|c| c + 0.5 * (grid.delta - side)).collect();
    let hi = lo.iter().map(|x| x + side).collect();
    Orthotope::new(lo, hi)
}

pub fn glue_microstructure(
    data: &CellData,
    backbone: &Backbone,
    g: &EmbeddedGraph,
    spec: &SmoothCurveSpec,
    params: &RecoveryParams,
) -> Result<Microstructure> {
    let n = data.grid.dim();
    let nz = data.grid.len();
    let kk = data.intervals();
    let nv = g.num_vertices();
    let side = params.delta - 3.0 * g.r_unscaled() * params.eps;
    let micro = side >= params.eps * (1.0 - 1e-12);
    let mut cube_points: Vec<Vec<usize>> = vec![Vec::new(); nz];
    for (a, c) in backbone.point_cube.iter().enumerate() {
        if let Some(z) = c {
            cube_points[*z].push(backbone.map.vertex[a]);
        }
    }
    let uniform = |z: usize, mass: f64| -> Layout {
        let w = mass / cube_points[z].len() as f64;
        cube_points[z].iter().map(|&x| (x, w)).collect()
    };
    let jobs: Vec<(usize, usize)> = if micro {
        (0..kk).flat_map(|k| (0..nz).map(move |z| (k, z))).filter(|&(k, z)| data.rho[k][z] > 0.0).collect()
    } else {
        Vec::new()
    };
    let opts = CellOptions { tol: params.cell_tol, ..CellOptions::default() };
    let solved: Vec<(usize, usize, Layout, Vec<(usize, f64)>, f64, f64, bool)> = jobs
        .par_iter()
        .map(|&(k, z)| {
            let vecs = data.cube_vectors(k);
            let w: Vec<f64> =
                vecs[z].iter().map(|x| x / ((1.0 - params.eta) * params.delta.powi(n as i32 - 1))).collect();
            let q = inner_cube(&data.grid, z, side)?;
            let p = assemble_cell_problem(g, &q, &w, params.eps)?;
            let sol = solve_cell_with(&p, opts)?;
            let mut seam: f64 = 0.0;
            let mut flow = Vec::with_capacity(p.energy_edges.len());
            for &e in &p.energy_edges {
                if p.pinned[e] {
                    let b = p.boundary_flow.values()[e];
                    seam = seam.max((b - backbone.flows[k][e]).abs());
                    flow.push((e, b));
                } else {
                    flow.push((e, sol.flow[e]));
                }
            }
            let total: f64 = p.var_vertex.iter().map(|&x| sol.masses[x]).sum();
            let rho = data.rho[k][z];
            let layout: Layout = p.var_vertex.iter().map(|&x| (x, rho * sol.masses[x] / total)).collect();
            Ok((k, z, layout, flow, sol.energy / rho, seam, sol.converged))
        })
        .collect::<Result<_>>()?;

    let mut flows = backbone.flows.clone();
    let mut layouts: Vec<Vec<Layout>> =
        (0..=kk).map(|k| (0..nz).map(|z| uniform(z, data.rho[k][z])).collect()).collect();
    let mut active = vec![vec![false; nz]; kk];
    let mut cell_energy = vec![0.0; kk];
    let mut covered_edges = vec![vec![false; g.num_edges()]; kk];
    let mut covered_vertex = vec![vec![false; nv]; kk];
    let mut max_seam: f64 = 0.0;
    let mut all_converged = true;
    for (k, z, layout, flow, energy, seam, conv) in solved {
        max_seam = max_seam.max(seam);
        all_converged &= conv;
        for &(e, j) in &flow {
            flows[k][e] = j;
            covered_edges[k][e] = true;
        }
        for &(x, _) in &layout {
            covered_vertex[k][x] = true;
        }
        layouts[k][z] = layout;
        active[k][z] = true;
        cell_energy[k] += energy;
    }
    if max_seam > 1e-10 {
        return Err(Error::SeamMismatch(max_seam));
    }
    // the final layout keeps the shape of the last interval
    for z in 0..nz {
        let (prev, next) = (data.rho[kk - 1][z], data.rho[kk][z]);
        if prev > 0.0 {
            layouts[kk][z] = layouts[kk - 1][z].iter().map(|&(x, w)| (x, w * next / prev)).collect();
        }
    }
    let jmax = spec.flux_sup();
    let mut path_mass = vec![0.0; nv];
    if jmax > 0.0 {
        for (x, pm) in path_mass.iter_mut().enumerate() {
            for &(y, e) in g.neighbors(x) {
                let l = crate::geometry::dist(g.pos(x), g.pos(y));
                let j = (0..kk).filter(|&k| !covered_vertex[k][x]).map(|k| flows[k][e].abs()).fold(0.0, f64::max);
                *pm += l * j / jmax;
            }
        }
    }
    Ok(Microstructure {
        flows,
        layouts,
        active,
        path_mass,
        cell_energy,
        cell_solves: jobs.len(),
        cells_converged: all_converged,
        max_seam_mismatch: max_seam,
        covered_edges,
    })
}

/// One per-cube transport in a maintenance phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GapReport {
    pub interval: usize,
    pub cube: usize,
    pub mass: f64,
    pub w_infinity: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct GapFill {
    /// Curve on `[t_{k+1} - ηh, t_{k+1}]` per interval, on the whole graph.
    pub curves: Vec<DiscreteCurve>,
    pub reports: Vec<GapReport>,
    pub total_cost: f64,
    /// Largest per-cube mass difference across a gap.
    pub books_residual: f64,
    pub max_w_infinity: f64,
    /// `√n δ + 2 · max |φ(a) - a|`.
    pub w_infinity_bound: f64,
    /// Largest `cost · ηh / (mass · (√n δ + ε)²)`.
    pub cost_constant: f64,
}

fn gap_transport(
    g: &EmbeddedGraph,
    box_q: &Orthotope,
    a: &[f64],
    b: &[f64],
    params: &RecoveryParams,
) -> Result<(Vec<usize>, Vec<usize>, crate::geodesic::GeodesicSolution, f64)> {
    let nv = g.num_vertices();
    let support: Vec<usize> = (0..nv).filter(|&x| a[x] > 0.0 || b[x] > 0.0).collect();
    let mut radius = g.r();
    for _ in 0..5 {
        let region = box_q.inflate(radius)?;
        let mut keep = g.vertices_in(&region);
        for &x in &support {
            if !region.contains_closed(g.pos(x)) {
                keep.push(x);
            }
        }
        let (sub, edge_map) = g.induced_subgraph(&keep);
        let (ca, cb): (f64, f64) = (keep.iter().map(|&x| a[x]).sum(), keep.iter().map(|&x| b[x]).sum());
        let ma = MassDistribution::new(keep.iter().map(|&x| a[x] / ca).collect())?;
        let mb = MassDistribution::new(keep.iter().map(|&x| b[x] / cb).collect())?;
        let w_inf = w_infinity_distance(&sub, &ma, &mb)?;
        let problem = GeodesicProblem::new(ma, mb, params.gap_steps)?
            .with_total_time(params.eta * params.h)
            .with_tol(params.geodesic_tol);
        match solve_geodesic(&sub, &problem) {
            Ok(sol) => return Ok((keep, edge_map, sol, w_inf)),
            Err(Error::DisconnectedSupports) => radius *= 2.0,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GapInfeasible(format!("no connected region around {:?}", box_q.lower)))
}

pub fn fill_gaps(
    data: &CellData,
    backbone: &Backbone,
    micro: &Microstructure,
    g: &EmbeddedGraph,
    params: &RecoveryParams,
) -> Result<GapFill> {
    let n = data.grid.dim();
    let nz = data.grid.len();
    let nv = g.num_vertices();
    let ne = g.num_edges();
    let kk = data.intervals();
    let steps = params.gap_steps;
    let tau = params.eta * params.h / steps as f64;
    let endpoints = |k: usize, z: usize| -> (Vec<f64>, Vec<f64>) {
        let mut a = backbone.depot(nv, k, (1.0 - params.eta) * params.h, Some(z));
        let mut b = backbone.depot(nv, k + 1, 0.0, Some(z));
        for &(x, w) in &micro.layouts[k][z] {
            a[x] += w;
        }
        for &(x, w) in &micro.layouts[k + 1][z] {
            b[x] += w;
        }
        (a, b)
    };
    let jobs: Vec<(usize, usize)> = (0..kk).flat_map(|k| (0..nz).map(move |z| (k, z))).collect();
    type Piece = (usize, usize, f64, Option<(Vec<usize>, Vec<usize>, DiscreteCurve)>, Option<GapReport>);
    let pieces: Vec<Piece> = jobs
        .par_iter()
        .map(|&(k, z)| -> Result<Piece> {
            let (a, b) = endpoints(k, z);
            let (ca, cb): (f64, f64) = (a.iter().sum(), b.iter().sum());
            let books = (ca - cb).abs();
            let scale = a.iter().chain(&b).fold(0.0f64, |m, x| m.max(x.abs()));
            if ca <= 0.0 || a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-15 * scale) {
                return Ok((k, z, books, None, None));
            }
            let (keep, edge_map, sol, w_inf) = gap_transport(g, &data.grid.cube(z)?, &a, &b, params)?;
            let c = 0.5 * (ca + cb);
            let mut curve = sol.curve;
            for m in curve.masses.iter_mut() {
                for x in m.iter_mut() {
                    *x *= c;
                }
            }
            for j in curve.flows.iter_mut() {
                for x in j.iter_mut() {
                    *x *= c;
                }
            }
            // pin the endpoints to the exact books
            curve.masses[0] = keep.iter().map(|&x| a[x]).collect();
            curve.masses[steps] = keep.iter().map(|&x| b[x]).collect();
            let report = GapReport {
                interval: k,
                cube: z,
                mass: c,
                w_infinity: w_inf,
                cost: c * sol.report.action,
                iterations: sol.report.iterations,
                converged: sol.report.converged,
            };
            Ok((k, z, books, Some((keep, edge_map, curve)), Some(report)))
        })
        .collect::<Result<_>>()?;

    let mut curves = Vec::with_capacity(kk);
    for k in 0..kk {
        let t0 = (k + 1) as f64 * params.h - params.eta * params.h;
        let times: Vec<f64> = (0..=steps).map(|s| t0 + s as f64 * tau).collect();
        let mut masses = vec![micro.path_mass.clone(); steps + 1];
        let mut flows = vec![vec![0.0; ne]; steps];
        for z in 0..nz {
            let (a, _) = endpoints(k, z);
            let piece = pieces.iter().find(|p| p.0 == k && p.1 == z).and_then(|p| p.3.as_ref());
            match piece {
                None => {
                    for m in masses.iter_mut() {
                        for (x, w) in m.iter_mut().zip(&a) {
                            *x += w;
                        }
                    }
                }
                Some((keep, edge_map, curve)) => {
                    for (s, m) in masses.iter_mut().enumerate() {
                        for (i, &x) in keep.iter().enumerate() {
                            m[x] += curve.masses[s][i];
                        }
                    }
                    for (s, j) in flows.iter_mut().enumerate() {
                        for (i, &e) in edge_map.iter().enumerate() {
                            j[e] += curve.flows[s][i];
                        }
                    }
                }
            }
        }
        curves.push(DiscreteCurve::new(times, masses, flows)?);
    }
    let reports: Vec<GapReport> = pieces.iter().filter_map(|p| p.4.clone()).collect();
    let books_residual = pieces.iter().map(|p| p.2).fold(0.0, f64::max);
    let max_w_infinity = reports.iter().map(|r| r.w_infinity).fold(0.0, f64::max);
    let base = (n as f64).sqrt() * params.delta + params.eps;
    let cost_constant = reports
        .iter()
        .filter(|r| r.mass > 0.0)
        .map(|r| r.cost * params.eta * params.h / (r.mass * base * base))
        .fold(0.0, f64::max);
    Ok(GapFill {
        curves,
        total_cost: reports.iter().map(|r| r.cost).sum(),
        reports,
        books_residual,
        max_w_infinity,
        w_infinity_bound: (n as f64).sqrt() * params.delta + 2.0 * backbone.map.max_offset,
        cost_constant,
    })
}

/// Every quantity checked or bounded along the construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecoveryAudit {
    pub params: ParamsCheck,
    pub curve: CurveCheck,
    pub ce_pre_residual: f64,
    pub ce_correction: f64,
    pub ce_residual: f64,
    pub mass_renormalisation: f64,
    pub min_depot: f64,
    pub max_backbone_divergence: f64,
    pub backbone_divergence_bound: f64,
    pub aggregate_divergence_residual: f64,
    pub depot_books_residual: f64,
    pub max_depot_total: f64,
    /// `n α (2M)^n`.
    pub depot_total_bound: f64,
    pub path_mass_total: f64,
    pub cell_solves: usize,
    pub cells_converged: bool,
    pub max_seam_mismatch: f64,
    pub gap_books_residual: f64,
    pub max_w_infinity: f64,
    pub w_infinity_bound: f64,
    pub gap_cost_constant: f64,
    pub gaps_converged: bool,
    pub max_gap_iterations: usize,
    pub flow_phase_residual: f64,
    pub continuity_residual: f64,
    pub flow_phase_action: f64,
    pub gap_action: f64,
    pub cell_energy_total: f64,
    pub backbone_remainder: f64,
    /// `backbone_remainder / (ε ‖j‖²_∞ Mⁿ T)`.
    pub remainder_constant: f64,
    pub action: f64,
    pub homogenized_action: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub graph: EmbeddedGraph,
    pub curve: DiscreteCurve,
    pub audit: RecoveryAudit,
}

/// `∫∫ f(j/ρ) ρ` by the midpoint rule on `(8 per δ)^n × (16 per h)` cells.
pub fn homogenized_action(spec: &SmoothCurveSpec, model: &DensityModel, params: &RecoveryParams) -> Result<f64> {
    let n = spec.dim();
    let nx = ((2.0 * spec.half_width / params.delta).round() as usize * 8).max(8);
    let nt = ((spec.total_time / params.h).round() as usize * 16).max(16);
    let dx = 2.0 * spec.half_width / nx as f64;
    let dt = spec.total_time / nt as f64;
    let mut rho = Vec::new();
    let mut j = Vec::new();
    for it in 0..nt {
        let t = (it as f64 + 0.5) * dt;
        for flat in 0..nx.pow(n as u32) {
            let mut rem = flat;
            let x: Vec<f64> = (0..n)
                .map(|_| {
                    let c = rem % nx;
                    rem /= nx;
                    -spec.half_width + (c as f64 + 0.5) * dx
                })
                .collect();
            let r = spec.rho(t, &x);
            if r > 0.0 {
                rho.push(r);
                j.push(spec.flux(t, &x));
            }
        }
    }
    eval_homogenized_action(model, &rho, &j, &GridSpec { dt, dx: vec![dx; n] })
}

/// Runs the whole construction on the family at scale `params.eps`.
pub fn assemble_recovery(
    spec: &SmoothCurveSpec,
    params: &RecoveryParams,
    family: &GeneratorSpec,
    model: &DensityModel,
) -> Result<Recovery> {
    if !matches!(family.kind, GraphKind::LatticeNN | GraphKind::RandomConductance) {
        return Err(Error::InvalidParams("recovery needs a lattice-type graph family".into()));
    }
    let curve_check = spec.validate()?;
    let pcheck = params.validate(spec, family.radius())?;
    let n = spec.dim();
    let g = family_graph(family, &spec.support_box()?, params.eps, family.seed)?;
    let nv = g.num_vertices();
    let data = discretize_continuity(spec, params.h, params.delta, params.quadrature_panels)?;
    let bb = backbone_and_depots(&data, &g, spec, params)?;
    let micro = glue_microstructure(&data, &bb, &g, spec, params)?;
    let gaps = fill_gaps(&data, &bb, &micro, &g, params)?;

    let kk = data.intervals();
    let flow_len = (1.0 - params.eta) * params.h;
    let sub = params.flow_substeps;
    let mut times = Vec::new();
    let mut masses = Vec::new();
    let mut flows = Vec::new();
    let mut flow_step = Vec::new();
    let mut max_depot_total: f64 = 0.0;
    for k in 0..kk {
        let cube = micro.cube_mass(nv, k);
        let t0 = k as f64 * params.h;
        for s in 0..=sub {
            let el = s as f64 * flow_len / sub as f64;
            let depot = bb.depot(nv, k, el, None);
            max_depot_total = max_depot_total.max(depot.iter().sum());
            let m: Vec<f64> = (0..nv).map(|x| cube[x] + depot[x] + micro.path_mass[x]).collect();
            if s == 0 && k > 0 {
                // coincides with the end of the previous gap up to rounding
                *masses.last_mut().unwrap() = m;
            } else {
                times.push(t0 + el);
                masses.push(m);
            }
            if s < sub {
                flows.push(micro.flows[k].clone());
                flow_step.push(true);
            }
        }
        let gc = &gaps.curves[k];
        for s in 1..gc.times.len() {
            times.push(gc.times[s]);
            masses.push(gc.masses[s].clone());
            flows.push(gc.flows[s - 1].clone());
            flow_step.push(false);
        }
    }
    let curve = DiscreteCurve::new(times, masses, flows)?;
    let continuity_residual = curve.continuity_residual(&g)?;
    let energies = curve.step_energies(&g)?;
    let mut flow_phase_action = 0.0;
    let mut gap_action = 0.0;
    let mut flow_phase_residual: f64 = 0.0;
    for (i, e) in energies.iter().enumerate() {
        let tau = curve.times[i + 1] - curve.times[i];
        if flow_step[i] {
            flow_phase_action += tau * e;
            let single = DiscreteCurve::new(
                vec![curve.times[i], curve.times[i + 1]],
                vec![curve.masses[i].clone(), curve.masses[i + 1].clone()],
                vec![curve.flows[i].clone()],
            )?;
            flow_phase_residual = flow_phase_residual.max(single.continuity_residual(&g)?);
        } else {
            gap_action += tau * e;
        }
    }
    let action = flow_phase_action + gap_action;

    let mut remainder = 0.0;
    for k in 0..kk {
        let e: f64 = (0..g.num_edges())
            .filter(|&e| !micro.covered_edges[k][e] && micro.flows[k][e] != 0.0)
            .map(|e| edge_energy(&g, e, &micro.path_mass, micro.flows[k][e]))
            .sum();
        remainder += flow_len * e;
    }
    let big_m = 2.0 * spec.half_width;
    let jmax = spec.flux_sup();
    let denom = params.eps * jmax * jmax * big_m.powi(n as i32) * spec.total_time;
    let homogenized = homogenized_action(spec, model, params)?;
    let relative_gap = if homogenized > 0.0 { (action - homogenized) / homogenized } else { action };
    let audit = RecoveryAudit {
        params: pcheck,
        curve: curve_check,
        ce_pre_residual: data.pre_residual,
        ce_correction: data.correction,
        ce_residual: data.residual,
        mass_renormalisation: data.mass_renormalisation,
        min_depot: bb.min_depot,
        max_backbone_divergence: bb.max_divergence,
        backbone_divergence_bound: bb.divergence_bound,
        aggregate_divergence_residual: bb.aggregate_residual,
        depot_books_residual: bb.books_residual,
        max_depot_total,
        depot_total_bound: n as f64 * params.alpha * (2.0 * big_m).powi(n as i32),
        path_mass_total: micro.path_mass.iter().sum(),
        cell_solves: micro.cell_solves,
        cells_converged: micro.cells_converged,
        max_seam_mismatch: micro.max_seam_mismatch,
        gap_books_residual: gaps.books_residual,
        max_w_infinity: gaps.max_w_infinity,
        w_infinity_bound: gaps.w_infinity_bound,
        gap_cost_constant: gaps.cost_constant,
        gaps_converged: gaps.reports.iter().all(|r| r.converged),
        max_gap_iterations: gaps.reports.iter().map(|r| r.iterations).max().unwrap_or(0),
        flow_phase_residual,
        continuity_residual,
        flow_phase_action,
        gap_action,
        cell_energy_total: micro.cell_energy.iter().sum::<f64>() * flow_len,
        backbone_remainder: remainder,
        remainder_constant: if denom > 0.0 { remainder / denom } else { 0.0 },
        action,
        homogenized_action: homogenized,
        relative_gap,
    };
    Ok(Recovery { graph: g, curve, audit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_half_integers() {
        assert!((gamma_half(4.5) - 11.631_728_396_567_45).abs() < 1e-12);
        assert_eq!(gamma_half(5.0), 24.0);
    }

    #[test]
    fn bump_has_unit_mass() {
        for n in 1..=3 {
            let spec = SmoothCurveSpec::stationary_bump(vec![0.1; n], 0.6, 1.0, 1.0);
            let b = spec.support_box().unwrap();
            let m: f64 = tensor_nodes(&b.lower, &b.upper, 32).iter().map(|(x, w)| w * spec.rho(0.0, x)).sum();
            assert!((m - 1.0).abs() < 1e-6, "n = {n}: {m}");
        }
    }

    #[test]
    fn cube_grid_round_trip() {
        let g = CubeGrid { lower: vec![-1.0, -1.0], delta: 0.25, counts: vec![8, 8] };
        for z in 0..g.len() {
            assert_eq!(g.index(&g.coords(z)), z);
            let c = g.corner(z);
            assert_eq!(g.cube_of(&c), Some(z));
        }
        assert_eq!(g.cube_of(&[1.0, 0.0]), None);
    }

    #[test]
    fn static_curve_has_zero_fluxes() {
        let spec = SmoothCurveSpec::stationary_bump(vec![0.0, 0.0], 0.5, 1.0, 1.0);
        let d = discretize_continuity(&spec, 0.25, 0.25, 4).unwrap();
        assert!(d.flux.iter().flatten().all(|&j| j == 0.0));
        assert_eq!(d.residual, 0.0);
    }
}
