//! Time-discrete curves `(m_k, J_{k+1/2})` and their action.

use serde::{Deserialize, Serialize};

use crate::energy::{divergence, edge_energy, FlowField};
use crate::error::{Error, Result};
use crate::graph::EmbeddedGraph;

pub const DEFAULT_CURVE_TOLERANCE: f64 = 1e-8;

/// Masses at `times[k]` and flows on `[times[k], times[k+1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCurve {
    pub times: Vec<f64>,
    pub masses: Vec<Vec<f64>>,
    pub flows: Vec<Vec<f64>>,
    #[serde(default = "default_tol", skip_serializing)]
    pub tolerance: f64,
}

fn default_tol() -> f64 {
    DEFAULT_CURVE_TOLERANCE
}

impl DiscreteCurve {
    pub fn new(times: Vec<f64>, masses: Vec<Vec<f64>>, flows: Vec<Vec<f64>>) -> Result<Self> {
        let c = DiscreteCurve { times, masses, flows, tolerance: DEFAULT_CURVE_TOLERANCE };
        c.check_shape()?;
        Ok(c)
    }

    /// Constant curve at `m` on `[0, t]` with a single step.
    pub fn stationary(m: Vec<f64>, num_edges: usize, t: f64) -> Self {
        DiscreteCurve {
            times: vec![0.0, t],
            masses: vec![m.clone(), m],
            flows: vec![vec![0.0; num_edges]],
            tolerance: DEFAULT_CURVE_TOLERANCE,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn steps(&self) -> usize {
        self.flows.len()
    }

    fn check_shape(&self) -> Result<()> {
        if self.times.len() < 2 || self.masses.len() != self.times.len() || self.flows.len() + 1 != self.times.len() {
            return Err(Error::InvalidParams("curve needs K+1 times and masses and K flows".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("curve times must increase strictly".into()));
        }
        if self.masses.iter().flatten().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::InvalidParams("curve masses must be nonnegative and finite".into()));
        }
        Ok(())
    }

    fn check_graph(&self, g: &EmbeddedGraph) -> Result<()> {
        for m in &self.masses {
            if m.len() != g.num_vertices() {
                return Err(Error::GraphMismatch { expected: g.num_vertices(), got: m.len() });
            }
        }
        for j in &self.flows {
            if j.len() != g.num_edges() {
                return Err(Error::GraphMismatch { expected: g.num_edges(), got: j.len() });
            }
        }
        Ok(())
    }

    /// Appends `other`, whose first mass must coincide with this curve's
    /// last; `other`'s times are shifted to start where this curve ends.
    pub fn append(&mut self, other: &DiscreteCurve) {
        let shift = self.times.last().copied().unwrap_or(0.0) - other.times[0];
        for k in 0..other.steps() {
            self.times.push(other.times[k + 1] + shift);
            self.masses.push(other.masses[k + 1].clone());
            self.flows.push(other.flows[k].clone());
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("curve serialisation cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: DiscreteCurve = serde_json::from_str(s)?;
        c.check_shape()?;
        Ok(c)
    }

    /// Largest `|(m_{k+1} - m_k) / τ_k + div J_{k+1/2}|` over steps and
    /// vertices.
    pub fn continuity_residual(&self, g: &EmbeddedGraph) -> Result<f64> {
        self.check_shape()?;
        self.check_graph(g)?;
        let mut worst: f64 = 0.0;
        for k in 0..self.steps() {
            let tau = self.times[k + 1] - self.times[k];
            let d = divergence(g, &FlowField::new(self.flows[k].clone())?);
            for x in 0..g.num_vertices() {
                let r = (self.masses[k + 1][x] - self.masses[k][x]) / tau + d[x];
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }

    /// Energy of each step evaluated at the midpoint mass.
    pub fn step_energies(&self, g: &EmbeddedGraph) -> Result<Vec<f64>> {
        self.check_shape()?;
        self.check_graph(g)?;
        Ok((0..self.steps())
            .map(|k| {
                let mid: Vec<f64> =
                    self.masses[k].iter().zip(&self.masses[k + 1]).map(|(a, b)| 0.5 * (a + b)).collect();
                (0..g.num_edges()).map(|e| edge_energy(g, e, &mid, self.flows[k][e])).sum()
            })
            .collect())
    }

    /// `Σ_k τ_k F(m̄_k, J_{k+1/2})` with `m̄_k` the time-midpoint mass.
    pub fn action(&self, g: &EmbeddedGraph) -> Result<f64> {
        let res = self.continuity_residual(g)?;
        if res > self.tolerance {
            return Err(Error::ContinuityViolation { residual: res, tolerance: self.tolerance });
        }
        Ok(self
            .step_energies(g)?
            .iter()
            .enumerate()
            .map(|(k, e)| (self.times[k + 1] - self.times[k]) * e)
            .sum())
    }
}

pub fn continuity_residual(g: &EmbeddedGraph, curve: &DiscreteCurve) -> Result<f64> {
    curve.continuity_residual(g)
}

pub fn curve_action(g: &EmbeddedGraph, curve: &DiscreteCurve) -> Result<f64> {
    curve.action(g)
}
