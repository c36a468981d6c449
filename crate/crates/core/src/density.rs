//! Homogenized energy density: cell values across scales and seeds, a
//! sampled 2-homogeneous density model, and the homogenized action of
//! piecewise-constant space-time data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{assemble_cell_problem, cell_support_box, solve_cell_with, CellOptions, CellSolution};
use crate::error::{Error, Result};
use crate::geometry::{norm, Orthotope};
use crate::graph::EmbeddedGraph;
use crate::random_graphs::{GeneratorSpec, GraphKind};

/// Graph of `family` at scale `eps` covering what a cell problem on `q`
/// needs. The family's box is replaced; its seed is replaced by `seed`.
pub fn family_graph(family: &GeneratorSpec, q: &Orthotope, eps: f64, seed: u64) -> Result<EmbeddedGraph> {
    let sup = cell_support_box(q, family.radius(), eps)?;
    let mut spec = family.clone();
    spec.n = q.dim();
    spec.lower = sup.lower.iter().map(|x| (x / eps).floor()).collect();
    spec.upper = sup.upper.iter().map(|x| (x / eps).ceil()).collect();
    spec.seed = seed;
    spec.eps = eps;
    spec.generate()
}

/// Solves the cell problem for one member of the family.
pub fn cell_value(
    family: &GeneratorSpec,
    q: &Orthotope,
    v: &[f64],
    eps: f64,
    seed: u64,
    opts: CellOptions,
) -> Result<CellSolution> {
    let g = family_graph(family, q, eps, seed)?;
    let p = assemble_cell_problem(&g, q, v, eps)?;
    solve_cell_with(&p, opts)
}

fn is_lattice_family(family: &GeneratorSpec) -> bool {
    matches!(family.kind, GraphKind::LatticeNN | GraphKind::RandomConductance)
}

/// Cell values at one scale, one entry per seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScaleSummary {
    pub eps: f64,
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub competitor_values: Vec<f64>,
    pub duality_gaps: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (zero for a single seed).
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DensityEstimate {
    pub v: Vec<f64>,
    pub scales: Vec<ScaleSummary>,
    /// Intercept of the least-squares fit `f_ε = f + a ε`.
    pub extrapolated: f64,
    pub slope: f64,
    /// Root-mean-square residual of the fit.
    pub fit_residual: f64,
}

/// Least-squares line through `(x, y)`: returns intercept, slope and RMS
/// residual. A single point gives slope zero.
pub fn fit_linear(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    (intercept, slope, (rss / n).sqrt())
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Solves the cell problem for every `(eps, seed)` and extrapolates the
/// per-scale means linearly in `eps`.
pub fn estimate_density(
    family: &GeneratorSpec,
    v: &[f64],
    q: &Orthotope,
    eps_list: &[f64],
    seeds: &[u64],
    opts: CellOptions,
) -> Result<DensityEstimate> {
    if eps_list.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParams("need at least one eps and one seed".into()));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParams("eps list must be decreasing".into()));
    }
    if is_lattice_family(family) {
        for &eps in eps_list {
            for i in 0..q.dim() {
                let k = q.side(i) / eps;
                if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                    return Err(Error::InvalidParams(format!("box side {} is not a multiple of eps = {eps}", q.side(i))));
                }
            }
        }
    }
    let jobs: Vec<(usize, u64)> = (0..eps_list.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let sols: Vec<CellSolution> = jobs
        .par_iter()
        .map(|&(i, s)| cell_value(family, q, v, eps_list[i], s, opts))
        .collect::<Result<_>>()?;
    let mut scales = Vec::with_capacity(eps_list.len());
    for (i, &eps) in eps_list.iter().enumerate() {
        let block = &sols[i * seeds.len()..(i + 1) * seeds.len()];
        let values: Vec<f64> = block.iter().map(|s| s.value).collect();
        let (mean, std) = mean_std(&values);
        scales.push(ScaleSummary {
            eps,
            seeds: seeds.to_vec(),
            competitor_values: block.iter().map(|s| s.competitor_value).collect(),
            duality_gaps: block.iter().map(|s| s.duality_gap).collect(),
            values,
            mean,
            std,
        });
    }
    let xs: Vec<f64> = scales.iter().map(|s| s.eps).collect();
    let ys: Vec<f64> = scales.iter().map(|s| s.mean).collect();
    let (extrapolated, slope, fit_residual) = fit_linear(&xs, &ys);
    Ok(DensityEstimate { v: v.to_vec(), scales, extrapolated, slope, fit_residual })
}

/// Sampled density on unit directions, extended 2-homogeneously.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DensityModel {
    pub dim: usize,
    pub directions: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Largest fit residual among the samples; slack of the convexity audit.
    pub fit_residual: f64,
    pub convexity_certified: bool,
    /// Worst `f((u+w)/2) - (f(u)+f(w))/2` found by the audit.
    pub convexity_excess: f64,
}

/// Sample directions: for `n = 2`, `2M` equally spaced angles (so each
/// direction comes with its negative); otherwise `±e_i` followed by seeded
/// Gaussian directions and their negatives up to `2M` in total.
pub fn sample_directions(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if n == 2 {
        return (0..2 * m)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut out = Vec::with_capacity(2 * m);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        out.push(e.clone());
        e[i] = -1.0;
        out.push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < 2 * m {
        let g: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
        let r = norm(&g);
        if r < 1e-12 {
            continue;
        }
        let u: Vec<f64> = g.iter().map(|x| x / r).collect();
        out.push(u.iter().map(|x| -x).collect());
        out.push(u);
    }
    out
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl DensityModel {
    pub fn new(dim: usize, directions: Vec<Vec<f64>>, values: Vec<f64>, fit_residual: f64) -> Result<Self> {
        if directions.len() != values.len() || directions.is_empty() {
            return Err(Error::InvalidParams("directions and values must be nonempty and of equal length".into()));
        }
        if directions.iter().any(|d| d.len() != dim || (norm(d) - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidParams("directions must be unit vectors of the model dimension".into()));
        }
        if let Some(&bad) = values.iter().find(|&&f| !(f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidParams(format!("density samples must be positive, got {bad}")));
        }
        Ok(DensityModel {
            dim,
            directions,
            values,
            fit_residual,
            convexity_certified: false,
            convexity_excess: 0.0,
        })
    }

    /// `f(v) = |v|²` sampled on `2M` directions.
    pub fn isotropic(dim: usize, m: usize) -> Self {
        let directions = sample_directions(dim, m, 0);
        let values = vec![1.0; directions.len()];
        let mut model = DensityModel::new(dim, directions, values, 0.0).expect("unit directions");
        model.audit_convexity(200, 0, 0.0);
        model
    }

    /// Density on the unit sphere: piecewise linear in the angle for
    /// `n = 2`, inverse-angle weighting of the `n` nearest samples otherwise.
    pub fn eval_unit(&self, u: &[f64]) -> f64 {
        if self.dim == 2 {
            let tau = std::f64::consts::TAU;
            let mut s: Vec<(f64, f64)> =
                self.directions.iter().zip(&self.values).map(|(d, &f)| (d[1].atan2(d[0]), f)).collect();
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            s.push((s[0].0 + tau, s[0].1));
            let a = u[1].atan2(u[0]);
            let x = if a < s[0].0 { a + tau } else { a };
            for w in s.windows(2) {
                if x <= w[1].0 {
                    let span = w[1].0 - w[0].0;
                    let t = if span > 0.0 { (x - w[0].0) / span } else { 0.0 };
                    return (1.0 - t) * w[0].1 + t * w[1].1;
                }
            }
            return s[0].1;
        }
        let mut d: Vec<(f64, usize)> = self
            .directions
            .iter()
            .enumerate()
            .map(|(i, w)| (u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0).acos(), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        if d[0].0 < 1e-12 {
            return self.values[d[0].1];
        }
        let near = &d[..self.dim.min(d.len())];
        let wsum: f64 = near.iter().map(|(a, _)| 1.0 / a).sum();
        near.iter().map(|(a, i)| self.values[*i] / a).sum::<f64>() / wsum
    }

    /// `f(v) = |v|² f(v/|v|)`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        let r = norm(v);
        if r == 0.0 {
            return 0.0;
        }
        let u: Vec<f64> = v.iter().map(|x| x / r).collect();
        r * r * self.eval_unit(&u)
    }

    /// Midpoint convexity on `pairs` random pairs of unit directions with
    /// slack `3 · fit_residual + slack`; sets the certificate.
    pub fn audit_convexity(&mut self, pairs: usize, seed: u64, slack: f64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..pairs {
            let mut draw = || -> Vec<f64> {
                loop {
                    let g: Vec<f64> = (0..self.dim).map(|_| gaussian(&mut rng)).collect();
                    let r = norm(&g);
                    if r > 1e-12 {
                        return g.iter().map(|x| x / r).collect();
                    }
                }
            };
            let u = draw();
            let w = draw();
            let mid: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
            let excess = self.eval(&mid) - 0.5 * (self.eval(&u) + self.eval(&w));
            worst = worst.max(excess);
        }
        self.convexity_excess = worst;
        self.convexity_certified = worst <= 3.0 * self.fit_residual + slack;
        self.convexity_certified
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DensityModel = serde_json::from_str(s)?;
        DensityModel::new(m.dim, m.directions.clone(), m.values.clone(), m.fit_residual)?;
        Ok(m)
    }
}

/// Estimates `f` on `2M` directions (each with its negative) and builds the
/// interpolating model, auditing midpoint convexity on 100 random pairs.
pub fn build_density_model(
    family: &GeneratorSpec,
    m: usize,
    q: &Orthotope,
    eps_list: &[f64],
    seeds: &[u64],
    opts: CellOptions,
) -> Result<DensityModel> {
    let n = q.dim();
    if m < n {
        return Err(Error::InvalidParams(format!("need at least {n} direction pairs, got {m}")));
    }
    let directions = sample_directions(n, m, family.seed);
    let estimates: Vec<DensityEstimate> = directions
        .par_iter()
        .map(|u| estimate_density(family, u, q, eps_list, seeds, opts))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = estimates.iter().map(|e| e.extrapolated).collect();
    let fit_residual = estimates.iter().map(|e| e.fit_residual).fold(0.0, f64::max);
    let scale = values.iter().copied().fold(0.0, f64::max);
    let mut model = DensityModel::new(n, directions, values, fit_residual)?;
    model.audit_convexity(100, family.seed ^ 0xc0ffee, 2.0 * opts.tol * scale);
    Ok(model)
}

/// Uniform space-time grid of cells, each of volume `dt · Π dx_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSpec {
    pub dt: f64,
    pub dx: Vec<f64>,
}

impl GridSpec {
    pub fn cell_volume(&self) -> f64 {
        self.dt * self.dx.iter().product::<f64>()
    }
}

/// `Σ_cells vol · f(j/ρ) ρ` for piecewise-constant `(ρ, j)`, with `0/0 = 0`
/// and `+∞` where `ρ = 0` but `j ≠ 0`.
pub fn eval_homogenized_action(model: &DensityModel, rho: &[f64], j: &[Vec<f64>], grid: &GridSpec) -> Result<f64> {
    if rho.len() != j.len() {
        return Err(Error::InvalidParams("density and flux grids differ in size".into()));
    }
    let vol = grid.cell_volume();
    let mut total = 0.0;
    for (&r, jc) in rho.iter().zip(j) {
        if r < 0.0 {
            return Err(Error::NegativeDensity(r));
        }
        let fj = model.eval(jc);
        if fj == 0.0 {
            continue;
        }
        if r == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += vol * fj / r;
    }
    Ok(total)
}
