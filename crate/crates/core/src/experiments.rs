//! Reproducible experiments: each one runs solvers on a fixed configuration,
//! collects sorted result rows and evaluates its pass/fail assertions.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cell::{assemble_cell_problem, solve_cell_with, CellOptions};
use crate::density::{build_density_model, cell_value, family_graph, mean_std};
use crate::energy::{degree_normalized_energy, energy, FlowField, MassDistribution};
use crate::error::{Error, Result};
use crate::geodesic::{audit_apriori_bound, solve_geodesic, GeodesicProblem};
use crate::geometry::{norm, Orthotope};
use crate::random_graphs::{gen_culdesac, GeneratorSpec};
use crate::recovery::{assemble_recovery, RecoveryParams, SmoothCurveSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    ZnExact,
    Homogeneity,
    Convexity,
    Sandwich,
    ErgodicVariance,
    ScalingLaw,
    GeodesicConverge,
    RecoveryAudit,
    OrthotopeInvariance,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 9] = [
        ExperimentName::ZnExact,
        ExperimentName::Homogeneity,
        ExperimentName::Convexity,
        ExperimentName::Sandwich,
        ExperimentName::ErgodicVariance,
        ExperimentName::ScalingLaw,
        ExperimentName::GeodesicConverge,
        ExperimentName::RecoveryAudit,
        ExperimentName::OrthotopeInvariance,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::ZnExact => "zn-exact",
            ExperimentName::Homogeneity => "homogeneity",
            ExperimentName::Convexity => "convexity",
            ExperimentName::Sandwich => "sandwich",
            ExperimentName::ErgodicVariance => "ergodic-variance",
            ExperimentName::ScalingLaw => "scaling-law",
            ExperimentName::GeodesicConverge => "geodesic-converge",
            ExperimentName::RecoveryAudit => "recovery-audit",
            ExperimentName::OrthotopeInvariance => "orthotope-invariance",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Experiment configuration. Unset grids fall back to per-experiment
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Box sides, clique sizes or step counts, depending on the experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_tol() -> f64 {
    1e-8
}

impl ExperimentConfig {
    pub fn new(name: ExperimentName) -> Self {
        ExperimentConfig { name, family: None, eps_list: None, seeds: None, sizes: None, tol: default_tol(), seed: 0, output: None }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        if let Some(f) = &self.family {
            f.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(e) = &self.eps_list {
            if e.is_empty() || e.iter().any(|x| !(*x > 0.0)) {
                return bad("epsList must be a nonempty list of positive numbers");
            }
        }
        if matches!(&self.seeds, Some(s) if s.is_empty()) {
            return bad("seeds must not be empty");
        }
        if let Some(s) = &self.sizes {
            if s.is_empty() || s.contains(&0) {
                return bad("sizes must be a nonempty list of positive integers");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, output path excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    fn opts(&self) -> CellOptions {
        CellOptions { tol: self.tol, ..CellOptions::default() }
    }

    fn conductance_family(&self) -> GeneratorSpec {
        self.family.clone().unwrap_or_else(|| GeneratorSpec::random_conductance(2, 0.0, 1.0, 1.0, 4.0, self.seed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
}

impl Value {
    fn cmp_key(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Int(a), Int(b)) => a.cmp(b),
            (Real(a), Real(b)) => a.total_cmp(b),
            (Int(a), Real(b)) => (*a as f64).total_cmp(b),
            (Real(a), Int(b)) => a.total_cmp(&(*b as f64)),
            (Bool(a), Bool(b)) => a.cmp(b),
            _ => self.to_string().cmp(&other.to_string()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:e}"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Text(v) => f.write_str(v),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Assertion { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: ExperimentName,
    pub config_hash: String,
    pub seed: u64,
    pub tol: f64,
    pub columns: Vec<String>,
    /// Sorted by the leading columns.
    pub rows: Vec<Vec<Value>>,
    pub assertions: Vec<Assertion>,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    /// CSV with a timestamp comment line, then a header and one record per
    /// row led by the config hash, seed and tolerance.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(out, "# otthom experiment {} generated_at_unix={stamp}", self.name)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["config_hash".to_string(), "seed".into(), "tol".into()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![self.config_hash.clone(), self.seed.to_string(), format!("{:e}", self.tol)];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
    assertions: Vec<Assertion>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), assertions: Vec::new() }
    }

    fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion::new(name, passed, detail));
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn unit_square() -> Orthotope {
    Orthotope::cube(2, 0.0, 1.0).expect("unit square")
}

/// Runs the experiment and, when `output` is set, writes the CSV there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let t = match config.name {
        ExperimentName::ZnExact => zn_exact(config)?,
        ExperimentName::Homogeneity => homogeneity(config)?,
        ExperimentName::Convexity => convexity(config)?,
        ExperimentName::Sandwich => sandwich(config)?,
        ExperimentName::ErgodicVariance => ergodic_variance(config)?,
        ExperimentName::ScalingLaw => scaling_law(config)?,
        ExperimentName::GeodesicConverge => geodesic_converge(config)?,
        ExperimentName::RecoveryAudit => recovery_audit(config)?,
        ExperimentName::OrthotopeInvariance => orthotope_invariance(config)?,
    };
    let mut rows = t.rows;
    rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.cmp_key(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal));
    let res = ExperimentResult {
        name: config.name,
        config_hash: config.hash(),
        seed: config.seed,
        tol: config.tol,
        columns: t.columns,
        rows,
        assertions: t.assertions,
    };
    if let Some(path) = &config.output {
        res.save_csv(path)?;
    }
    Ok(res)
}

fn zn_exact(c: &ExperimentConfig) -> Result<Table> {
    let family = c.family.clone().unwrap_or_else(|| GeneratorSpec::lattice(2, 0.0, 1.0));
    let eps_list = c.eps_list.clone().unwrap_or_else(|| vec![0.25, 0.125, 0.0625]);
    let dirs = [vec![1.0, 0.0], vec![1.0, 1.0]];
    let q = unit_square();
    let jobs: Vec<(f64, usize)> = eps_list.iter().flat_map(|&e| (0..dirs.len()).map(move |d| (e, d))).collect();
    let sols = jobs
        .par_iter()
        .map(|&(e, d)| cell_value(&family, &q, &dirs[d], e, family.seed, c.opts()))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(&["eps", "v1", "v2", "value", "expected", "rel_err", "duality_gap"]);
    for ((e, d), s) in jobs.iter().zip(&sols) {
        let v = &dirs[*d];
        let expected = norm(v).powi(2);
        let r = rel(s.value, expected);
        t.push(vec![(*e).into(), v[0].into(), v[1].into(), s.value.into(), expected.into(), r.into(), s.duality_gap.into()]);
        t.check(format!("f({:?}) at eps={e}", v), r <= 1e-3, format!("value {} vs {expected}", s.value));
    }
    Ok(t)
}

fn homogeneity(c: &ExperimentConfig) -> Result<Table> {
    let family = c.conductance_family();
    let eps = c.eps_list.as_ref().map_or(0.125, |e| e[0]);
    let q = unit_square();
    let dirs = [vec![1.0, 0.0], vec![0.6, 0.8], vec![-0.28, 0.96]];
    let scales = [1.0, 0.5, 2.0];
    let jobs: Vec<(usize, f64)> = (0..dirs.len()).flat_map(|d| scales.iter().map(move |&s| (d, s))).collect();
    let vals = jobs
        .par_iter()
        .map(|&(d, s)| {
            let v: Vec<f64> = dirs[d].iter().map(|x| s * x).collect();
            cell_value(&family, &q, &v, eps, family.seed, c.opts()).map(|r| r.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut t = Table::new(&["direction", "lambda", "value", "lambda2_times_base", "rel_err"]);
    for (d, block) in vals.chunks(scales.len()).enumerate() {
        let base = block[0];
        for (&s, &v) in scales.iter().zip(block) {
            let pred = s * s * base;
            let r = rel(v, pred);
            t.push(vec![d.into(), s.into(), v.into(), pred.into(), r.into()]);
            if s != 1.0 {
                t.check(format!("f({s} v{d}) = {s}^2 f(v{d})"), r <= 1e-2, format!("{v} vs {pred}"));
            }
        }
    }
    Ok(t)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..2).map(|_| StandardNormal.sample(rng)).collect();
        let r = norm(&g);
        if r > 1e-9 {
            return g.iter().map(|x| x / r).collect();
        }
    }
}

fn convexity(c: &ExperimentConfig) -> Result<Table> {
    let family = c.conductance_family();
    let eps = c.eps_list.as_ref().map_or(0.125, |e| e[0]);
    let pairs = c.sizes.as_ref().map_or(20, |s| s[0]);
    let q = unit_square();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let triples: Vec<[Vec<f64>; 3]> = (0..pairs)
        .map(|_| {
            let u = random_unit(&mut rng);
            let w = random_unit(&mut rng);
            let mid = u.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
            [u, w, mid]
        })
        .collect();
    let vals = triples
        .par_iter()
        .flat_map(|tr| tr.par_iter().map(|v| cell_value(&family, &q, v, eps, family.seed, c.opts()).map(|r| r.value)))
        .collect::<Result<Vec<f64>>>()?;
    let scale = vals.iter().copied().fold(0.0, f64::max);
    let slack = 2.0 * c.tol * scale;
    let mut t = Table::new(&["pair", "f_u", "f_w", "f_mid", "excess"]);
    for (i, v) in vals.chunks(3).enumerate() {
        let excess = v[2] - 0.5 * (v[0] + v[1]);
        t.push(vec![i.into(), v[0].into(), v[1].into(), v[2].into(), excess.into()]);
        t.check(format!("midpoint convexity pair {i}"), excess <= slack, format!("excess {excess:e}, slack {slack:e}"));
    }
    Ok(t)
}

fn sandwich(c: &ExperimentConfig) -> Result<Table> {
    let family = c.conductance_family();
    let eps = c.eps_list.as_ref().map_or(0.125, |e| e[0]);
    let q = unit_square();
    let g = family_graph(&family, &q, eps, family.seed)?;
    let dirs: Vec<Vec<f64>> = (0..8)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_4 * k as f64;
            vec![a.cos(), a.sin()]
        })
        .collect();
    let sols = dirs
        .par_iter()
        .map(|v| assemble_cell_problem(&g, &q, v, eps).and_then(|p| solve_cell_with(&p, c.opts())))
        .collect::<Result<Vec<_>>>()?;
    let lower_c = family.lambda / (2.0 * g.max_degree() as f64);
    let mut t = Table::new(&["angle_index", "lower", "value", "upper"]);
    for (k, (v, s)) in dirs.iter().zip(&sols).enumerate() {
        let lower = lower_c * norm(v).powi(2);
        let upper = s.competitor_value;
        t.push(vec![k.into(), lower.into(), s.value.into(), upper.into()]);
        let ok = lower - c.tol <= s.value && s.value <= upper * (1.0 + c.tol);
        t.check(format!("sandwich direction {k}"), ok, format!("{lower} <= {} <= {upper}", s.value));
    }
    Ok(t)
}

fn ergodic_variance(c: &ExperimentConfig) -> Result<Table> {
    let family = c.conductance_family();
    let eps = c.eps_list.as_ref().map_or(1.0, |e| e[0]);
    let sizes = c.sizes.clone().unwrap_or_else(|| vec![4, 8]);
    let seeds = c.seeds.clone().unwrap_or_else(|| (1..=10).map(|s| s + c.seed).collect());
    let jobs: Vec<(usize, u64)> = sizes.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let vals = jobs
        .par_iter()
        .map(|&(l, s)| {
            let q = Orthotope::cube(2, 0.0, l as f64)?;
            cell_value(&family, &q, &[1.0, 0.0], eps, s, c.opts()).map(|r| r.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut t = Table::new(&["side", "sample_seed", "value"]);
    for (&(l, s), &v) in jobs.iter().zip(&vals) {
        t.push(vec![l.into(), s.into(), v.into()]);
    }
    let stds: Vec<f64> = vals.chunks(seeds.len()).map(|b| mean_std(b).1).collect();
    for (w, l) in stds.windows(2).zip(sizes.windows(2)) {
        t.check(
            format!("std at L={} <= std at L={}", l[1], l[0]),
            w[1] <= w[0],
            format!("{:e} vs {:e}", w[1], w[0]),
        );
    }
    Ok(t)
}

/// Unit flux along the base path and mass `1/(L+1)` on every base vertex,
/// nothing in the cliques; returns `(F, G)`.
pub fn culdesac_profile_energies(length: usize, clique_size: usize, family: &GeneratorSpec) -> Result<(f64, f64)> {
    let eps = 1.0 / length as f64;
    let g = gen_culdesac(length, clique_size, eps, family.mean)?;
    let mut m = vec![0.0; g.num_vertices()];
    m[..=length].fill(1.0 / (length + 1) as f64);
    let mut j = vec![0.0; g.num_edges()];
    j[..length].fill(1.0);
    let m = MassDistribution::new(m)?;
    let j = FlowField::new(j)?;
    Ok((energy(&g, &m, &j)?, degree_normalized_energy(&g, &m, &j)?))
}

fn scaling_law(c: &ExperimentConfig) -> Result<Table> {
    let family = c.family.clone().unwrap_or_else(|| GeneratorSpec::culdesac(16, 2, 1.0));
    let sizes = c.sizes.clone().unwrap_or_else(|| vec![2, 4, 8]);
    let mut t = Table::new(&["clique_size", "length", "F", "G", "G_over_F"]);
    let mut fs = Vec::new();
    let mut ratios = Vec::new();
    for &n in &sizes {
        let (f, g) = culdesac_profile_energies(family.length, n, &family)?;
        t.push(vec![n.into(), family.length.into(), f.into(), g.into(), (g / f).into()]);
        fs.push(f);
        ratios.push(g / f);
    }
    let fmin = fs.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = fs.iter().copied().fold(0.0, f64::max);
    t.check("F varies by less than 50%", fmax / fmin - 1.0 < 0.5, format!("F in [{fmin}, {fmax}]"));
    for (w, n) in ratios.windows(2).zip(sizes.windows(2)) {
        let growth = w[1] / w[0];
        let per_doubling = growth.powf(1.0 / (n[1] as f64 / n[0] as f64).log2());
        t.check(
            format!("G/F growth from N={} to N={}", n[0], n[1]),
            (1.5..=2.5).contains(&per_doubling),
            format!("factor per doubling {per_doubling}"),
        );
    }
    Ok(t)
}

/// `cos²` bump of half-width `r` centred at `c`, sampled on the lattice
/// `εZ ∩ [0, 1]` and normalised.
pub fn lattice_bump(eps: f64, c: f64, r: f64) -> Result<MassDistribution> {
    let k = (1.0 / eps).round() as usize;
    let w: Vec<f64> = (0..=k)
        .map(|i| {
            let s = (i as f64 * eps - c) / r;
            if s.abs() < 1.0 {
                (std::f64::consts::FRAC_PI_2 * s).cos().powi(2)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    MassDistribution::new(w.into_iter().map(|x| x / total).collect())
}

fn geodesic_converge(c: &ExperimentConfig) -> Result<Table> {
    let eps = c.eps_list.as_ref().map_or(1.0 / 32.0, |e| e[0]);
    let steps = c.sizes.clone().unwrap_or_else(|| vec![16]);
    let k = (1.0 / eps).round();
    let mut family = c.family.clone().unwrap_or_else(|| GeneratorSpec::lattice(1, 0.0, k));
    family.n = 1;
    family.lower = vec![0.0];
    family.upper = vec![k];
    family.eps = eps;
    let g = family.generate()?;
    let m0 = lattice_bump(eps, 0.25, 0.125)?;
    let m1 = lattice_bump(eps, 0.75, 0.125)?;
    let target = 0.25;
    let mut t = Table::new(&["steps", "action", "rel_err", "converged", "continuity_residual", "apriori_max_ratio"]);
    for &kk in &steps {
        let sol = solve_geodesic(&g, &GeodesicProblem::new(m0.clone(), m1.clone(), kk)?.with_tol(c.tol))?;
        let ap = audit_apriori_bound(&g, &sol.curve)?;
        let r = rel(sol.report.action, target);
        t.push(vec![
            kk.into(),
            sol.report.action.into(),
            r.into(),
            sol.report.converged.into(),
            sol.report.continuity_residual.into(),
            ap.max_ratio.into(),
        ]);
        t.check(format!("K={kk} solver converged"), sol.report.converged, format!("gap {:e}", sol.report.duality_gap));
        t.check(format!("K={kk} action within 10% of {target}"), r <= 0.1, format!("action {}", sol.report.action));
        t.check(format!("K={kk} a-priori bound"), ap.holds, format!("max ratio {}", ap.max_ratio));
    }
    Ok(t)
}

fn recovery_audit(c: &ExperimentConfig) -> Result<Table> {
    let family = c.family.clone().unwrap_or_else(|| GeneratorSpec::lattice(2, 0.0, 1.0).with_seed(c.seed));
    let eps = c.eps_list.as_ref().map_or(1.0 / 16.0, |e| e[0]);
    let spec = SmoothCurveSpec::translating_bump(vec![-0.25, 0.0], vec![0.5, 0.0], 0.5, 1.0, 1.0);
    let h = 0.25;
    let params = RecoveryParams::new(h, 0.25, 0.25, eps, RecoveryParams::minimal_alpha(h, &spec));
    let model = build_density_model(&family, 4, &unit_square(), &[0.25], &[family.seed], c.opts())?;
    let rec = assemble_recovery(&spec, &params, &family, &model)?;
    let a = &rec.audit;
    let mut t = Table::new(&["quantity", "value"]);
    let fields: [(&str, f64); 12] = [
        ("continuity_residual", a.continuity_residual),
        ("min_depot", a.min_depot),
        ("depot_books_residual", a.depot_books_residual),
        ("gap_books_residual", a.gap_books_residual),
        ("max_seam_mismatch", a.max_seam_mismatch),
        ("flow_phase_action", a.flow_phase_action),
        ("gap_action", a.gap_action),
        ("path_mass_total", a.path_mass_total),
        ("max_depot_total", a.max_depot_total),
        ("action", a.action),
        ("homogenized_action", a.homogenized_action),
        ("relative_gap", a.relative_gap),
    ];
    for (k, v) in fields {
        t.push(vec![k.into(), v.into()]);
    }
    t.check("continuity residual <= 1e-8", a.continuity_residual <= 1e-8, format!("{:e}", a.continuity_residual));
    t.check("depot masses nonnegative", a.min_depot >= 0.0, format!("min depot {:e}", a.min_depot));
    let books = a.depot_books_residual.max(a.gap_books_residual);
    t.check("per-cube books balance to 1e-8", books <= 1e-8, format!("{books:e}"));
    let r = rel(a.action, a.homogenized_action);
    t.check(
        "action within 25% of homogenized action",
        r <= 0.25,
        format!("{} vs {} (relative {r})", a.action, a.homogenized_action),
    );
    Ok(t)
}

fn orthotope_invariance(c: &ExperimentConfig) -> Result<Table> {
    let family = c.conductance_family();
    let eps = c.eps_list.as_ref().map_or(0.125, |e| e[0]);
    let boxes = [unit_square(), Orthotope::new(vec![0.0, 0.0], vec![1.0, 2.0])?];
    let vals = boxes
        .par_iter()
        .map(|q| cell_value(&family, q, &[1.0, 0.0], eps, family.seed, c.opts()).map(|r| r.value))
        .collect::<Result<Vec<f64>>>()?;
    let mut t = Table::new(&["height", "value"]);
    for (q, &v) in boxes.iter().zip(&vals) {
        t.push(vec![q.side(1).into(), v.into()]);
    }
    let r = rel(vals[1], vals[0]);
    t.check("f on [0,1]x[0,2] within 10% of f on [0,1]^2", r <= 0.1, format!("{} vs {} (relative {r})", vals[1], vals[0]));
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.as_str().parse::<ExperimentName>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.as_str()));
        }
        assert!(matches!("zn".parse::<ExperimentName>(), Err(Error::Config(_))));
    }

    #[test]
    fn config_parsing_and_hash() {
        let c = ExperimentConfig::from_json(r#"{"name":"scaling-law","sizes":[2,4]}"#).unwrap();
        assert_eq!(c.sizes, Some(vec![2, 4]));
        assert_eq!(c.tol, 1e-8);
        let mut d = c.clone();
        d.output = Some("/tmp/x.csv".into());
        assert_eq!(c.hash(), d.hash());
        d.seed = 3;
        assert_ne!(c.hash(), d.hash());
        assert!(ExperimentConfig::from_json(r#"{"name":"scaling-law","bogus":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"name":"zn-exact","tol":0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"name":"zn-exact","sizes":[]}"#).is_err());
    }

    #[test]
    fn culdesac_profile_matches_closed_form() {
        // F = L ε² (L+1) and G = Σ ε² / θ(m/deg) with arithmetic θ
        let fam = GeneratorSpec::culdesac(8, 3, 1.0);
        let (f, g) = culdesac_profile_energies(8, 3, &fam).unwrap();
        let (l, m) = (8.0, 1.0 / 9.0);
        assert!((f - l * (1.0 / 64.0) / m).abs() < 1e-12);
        let inner = 5.0 / m;
        let end = 1.0 / (0.5 * (m / 4.0 + m / 5.0));
        assert!((g - (6.0 * inner + 2.0 * end) / 64.0).abs() < 1e-12);
    }

    #[test]
    fn bump_is_normalised() {
        let b = lattice_bump(1.0 / 32.0, 0.25, 0.125).unwrap();
        assert!((b.total() - 1.0).abs() < 1e-14);
        assert_eq!(b.values().iter().filter(|&&x| x > 0.0).count(), 7);
    }

    #[test]
    fn scaling_law_rows_are_sorted_and_written() {
        let mut c = ExperimentConfig::new(ExperimentName::ScalingLaw);
        c.sizes = Some(vec![8, 2, 4]);
        let r = run_experiment(&c).unwrap();
        let ns: Vec<_> = r.column("clique_size").unwrap().into_iter().cloned().collect();
        assert_eq!(ns, vec![Value::Int(2), Value::Int(4), Value::Int(8)]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# otthom experiment scaling-law"));
        assert!(lines[1].starts_with("config_hash,seed,tol,clique_size"));
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with(&r.config_hash));
    }
}
