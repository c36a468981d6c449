//! Minimal-action curves between two probability measures on a graph: the
//! time-discrete dynamical transport problem with midpoint masses.
//!
//! Flows are eliminated exactly: for fixed masses each step's flow solves a
//! weighted Laplacian system with right-hand side `-(m_{k+1} - m_k)/τ`, so
//! every iterate satisfies the continuity equation. The reduced objective
//! over interior masses is minimised by a log-barrier path-following Newton
//! method with the exact Hessian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curve::DiscreteCurve;
use crate::energy::MassDistribution;
use crate::error::{Error, Result};
use crate::graph::EmbeddedGraph;
use crate::linalg::{simplex_newton_direction, Laplacian};
use crate::wasserstein::earth_mover_w1;

/// Endpoints, number of steps `K` and horizon `T` (step `τ = T/K`).
#[derive(Debug, Clone)]
pub struct GeodesicProblem {
    pub m0: MassDistribution,
    pub m1: MassDistribution,
    pub steps: usize,
    pub total_time: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Newton steps are used while `(K-1)·|vertices|` stays below this.
    pub newton_max_vars: usize,
}

impl GeodesicProblem {
    pub fn new(m0: MassDistribution, m1: MassDistribution, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidParams("need at least one time step".into()));
        }
        if m0.len() != m1.len() {
            return Err(Error::GraphMismatch { expected: m0.len(), got: m1.len() });
        }
        for m in [&m0, &m1] {
            if (m.total() - 1.0).abs() > 1e-9 {
                return Err(Error::MassMismatch(m.total(), 1.0));
            }
        }
        Ok(GeodesicProblem { m0, m1, steps, total_time: 1.0, tol: 1e-9, max_iter: 500, newton_max_vars: 2500 })
    }

    pub fn with_total_time(mut self, t: f64) -> Self {
        self.total_time = t;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeodesicReport {
    pub action: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Bound `N μ + λ²/2` on the suboptimality of the returned action.
    pub duality_gap: f64,
    pub continuity_residual: f64,
    /// Largest `|Σ_x m_k(x) - 1|`.
    pub mass_defect: f64,
    /// Reduced objective at the start and at the end of every barrier stage.
    pub energy_trace: Vec<f64>,
    /// Uniform mass fraction mixed into the initial guess.
    pub initial_perturbation: f64,
}

#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub curve: DiscreteCurve,
    pub report: GeodesicReport,
}

struct StepSolve {
    phi: f64,
    flow: Vec<f64>,
    potential: Vec<f64>,
}

struct Reduced<'a> {
    g: &'a EmbeddedGraph,
    m0: &'a [f64],
    m1: &'a [f64],
    steps: usize,
    tau: f64,
    coef: Vec<f64>,
}

impl<'a> Reduced<'a> {
    fn slice<'b>(&'b self, x: &'b [f64], k: usize) -> &'b [f64] {
        let n = self.g.num_vertices();
        if k == 0 {
            self.m0
        } else if k == self.steps {
            self.m1
        } else {
            &x[(k - 1) * n..k * n]
        }
    }

    fn midpoint(&self, x: &[f64], k: usize) -> Vec<f64> {
        self.slice(x, k).iter().zip(self.slice(x, k + 1)).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn laplacian(&self, mu: &[f64]) -> Laplacian {
        let edges: Vec<(usize, usize, f64)> = self
            .g
            .edges()
            .iter()
            .zip(&self.coef)
            .map(|(e, &a)| {
                let th = e.mean.value(mu[e.u], mu[e.v]);
                (e.u, e.v, if th > 0.0 { th / (2.0 * a) } else { 0.0 })
            })
            .collect();
        Laplacian::new(self.g.num_vertices(), &edges)
    }

    fn solve_step(&self, x: &[f64], k: usize, warm: Option<&[f64]>) -> StepSolve {
        let g = self.g;
        let n = g.num_vertices();
        let mu = self.midpoint(x, k);
        let (a, b) = (self.slice(x, k), self.slice(x, k + 1));
        let d: Vec<f64> = (0..n).map(|i| -(b[i] - a[i]) / self.tau).collect();
        let scale = d.iter().map(|v| v.abs()).sum::<f64>();
        let lap = self.laplacian(&mu);
        let sol = lap.solve(&d, warm, 1e-14, 20 * n + 200);
        if sol.imbalance > 1e-10 * scale.max(1.0) {
            return StepSolve { phi: f64::INFINITY, flow: vec![0.0; g.num_edges()], potential: sol.potential };
        }
        let mut flow = vec![0.0; g.num_edges()];
        let mut phi = 0.0;
        for (i, e) in g.edges().iter().enumerate() {
            let th = e.mean.value(mu[e.u], mu[e.v]);
            if th > 0.0 {
                let c = th / (2.0 * self.coef[i]);
                flow[i] = c * (sol.potential[e.u] - sol.potential[e.v]);
                phi += self.coef[i] * flow[i] * flow[i] / th;
            }
        }
        StepSolve { phi: self.tau * phi, flow, potential: sol.potential }
    }

    fn solve_all(&self, x: &[f64], warm: Option<&[StepSolve]>) -> (f64, Vec<StepSolve>) {
        let steps: Vec<StepSolve> =
            (0..self.steps).map(|k| self.solve_step(x, k, warm.map(|w| w[k].potential.as_slice()))).collect();
        (steps.iter().map(|s| s.phi).sum(), steps)
    }

    /// `τ g(m̄)` per step, where `g(x) = -Σ σ l² J² ∂θ / θ²`.
    fn mass_gradient(&self, x: &[f64], k: usize, flow: &[f64]) -> Vec<f64> {
        let mu = self.midpoint(x, k);
        let mut out = vec![0.0; self.g.num_vertices()];
        for (i, e) in self.g.edges().iter().enumerate() {
            let j = flow[i];
            if j == 0.0 {
                continue;
            }
            let th = e.mean.value(mu[e.u], mu[e.v]);
            let (dr, ds) = e.mean.grad(mu[e.u], mu[e.v]);
            let w = -self.coef[i] * j * j / (th * th);
            out[e.u] += self.tau * w * dr;
            out[e.v] += self.tau * w * ds;
        }
        out
    }

    fn gradient(&self, x: &[f64], steps: &[StepSolve]) -> Vec<f64> {
        let n = self.g.num_vertices();
        let gm: Vec<Vec<f64>> = (0..self.steps).map(|k| self.mass_gradient(x, k, &steps[k].flow)).collect();
        let mut grad = vec![0.0; x.len()];
        for k in 1..self.steps {
            for i in 0..n {
                grad[(k - 1) * n + i] = 0.5 * (gm[k][i] + gm[k - 1][i]) + steps[k].potential[i] - steps[k - 1].potential[i];
            }
        }
        grad
    }

    /// Exact Hessian of the reduced objective, dense row-major.
    fn hessian(&self, x: &[f64], steps: &[StepSolve]) -> Option<Vec<f64>> {
        let g = self.g;
        let n = g.num_vertices();
        let nvar = x.len();
        let mut h = vec![0.0; nvar * nvar];
        for k in 0..self.steps {
            let mu = self.midpoint(x, k);
            let flow = &steps[k].flow;
            // Ψ(μ, d) = ½ dᵀ L(μ)⁺ d; blocks in (μ, d)
            let lap = self.laplacian(&mu);
            let lp = pseudo_inverse(&lap, n)?;
            let mut w = DMatrix::<f64>::zeros(n, n);
            let mut dmm = DMatrix::<f64>::zeros(n, n);
            for (i, e) in g.edges().iter().enumerate() {
                let j = flow[i];
                if j == 0.0 {
                    continue;
                }
                let (r, s) = (mu[e.u], mu[e.v]);
                let th = e.mean.value(r, s);
                let (dr, ds) = e.mean.grad(r, s);
                let kap = e.mean.curvature(r, s);
                if !(th > 0.0 && dr.is_finite() && ds.is_finite() && kap.is_finite()) {
                    return None;
                }
                let f = j / th;
                w[(e.u, e.u)] += dr * f;
                w[(e.v, e.u)] -= dr * f;
                w[(e.u, e.v)] += ds * f;
                w[(e.v, e.v)] -= ds * f;
                let c2 = -self.coef[i] * j * j * kap / (th * th);
                dmm[(e.u, e.u)] += c2 * s * s;
                dmm[(e.v, e.v)] += c2 * r * r;
                dmm[(e.u, e.v)] -= c2 * r * s;
                dmm[(e.v, e.u)] -= c2 * r * s;
            }
            let lw = &lp * &w;
            let hmm = w.transpose() * &lw + dmm;
            let hmd = -lw.transpose();
            let t = self.tau;
            // μ = (m_k + m_{k+1})/2, d = (m_k - m_{k+1})/τ
            let coeffs = [(k, 0.5, 1.0 / t), (k + 1, 0.5, -1.0 / t)];
            for &(ka, am, ad) in &coeffs {
                if ka == 0 || ka == self.steps {
                    continue;
                }
                for &(kb, bm, bd) in &coeffs {
                    if kb == 0 || kb == self.steps {
                        continue;
                    }
                    let (oa, ob) = ((ka - 1) * n, (kb - 1) * n);
                    for i in 0..n {
                        for jj in 0..n {
                            let v = am * bm * hmm[(i, jj)]
                                + am * bd * hmd[(i, jj)]
                                + ad * bm * hmd[(jj, i)]
                                + ad * bd * lp[(i, jj)];
                            h[(oa + i) * nvar + ob + jj] += t * v;
                        }
                    }
                }
            }
        }
        Some(h)
    }
}

/// Dense Moore-Penrose inverse of a graph Laplacian, via
/// `L⁺ = (L + P)⁻¹ - P` with `P` the projection onto component constants.
fn pseudo_inverse(lap: &Laplacian, n: usize) -> Option<DMatrix<f64>> {
    let (label, nc) = lap.components();
    let mut size = vec![0usize; nc];
    for &c in &label {
        size[c] += 1;
    }
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        lap.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if label[i] == label[j] {
                p[(i, j)] = 1.0 / size[label[i]] as f64;
            }
        }
    }
    let inv = (m + &p).cholesky()?.inverse();
    Some(inv - p)
}

fn check_supports(g: &EmbeddedGraph, m0: &[f64], m1: &[f64]) -> Result<()> {
    let label = g.components();
    let nc = label.iter().copied().max().map_or(0, |c| c + 1);
    let mut diff = vec![0.0; nc];
    for x in 0..g.num_vertices() {
        diff[label[x]] += m0[x] - m1[x];
    }
    if diff.iter().any(|d| d.abs() > 1e-9) {
        return Err(Error::DisconnectedSupports);
    }
    Ok(())
}

fn barrier(phi: f64, x: &[f64], mu: f64) -> f64 {
    phi - mu * x.iter().map(|v| v.ln()).sum::<f64>()
}

/// Minimises `Σ_k τ F(m̄_k, J_{k+1/2})` subject to the discrete continuity
/// equation with the given endpoints, by Newton steps on the log-barrier
/// problems `Φ(m) - μ Σ log m` along a decreasing sequence of `μ`. The
/// suboptimality of the returned curve is at most `N μ + λ²/2`, with `N`
/// the number of interior mass values and `λ` the final Newton decrement.
/// Iteration stops once that bound is below `tol · Φ`, or below `1e-12`
/// times the objective at the starting curve when the optimum is so small
/// that rounding dominates.
pub fn solve_geodesic(g: &EmbeddedGraph, problem: &GeodesicProblem) -> Result<GeodesicSolution> {
    let n = g.num_vertices();
    if problem.m0.len() != n {
        return Err(Error::GraphMismatch { expected: n, got: problem.m0.len() });
    }
    let (m0, m1) = (problem.m0.values(), problem.m1.values());
    check_supports(g, m0, m1)?;
    let k_steps = problem.steps;
    let tau = problem.total_time / k_steps as f64;
    let coef: Vec<f64> = (0..g.num_edges())
        .map(|i| {
            let l = g.edge_length(i);
            g.edge(i).sigma * l * l
        })
        .collect();
    let red = Reduced { g, m0, m1, steps: k_steps, tau, coef };
    let blocks: Vec<std::ops::Range<usize>> = (1..k_steps).map(|k| (k - 1) * n..k * n).collect();
    let nvar = (k_steps - 1) * n;

    // strictly positive start: linear interpolation mixed with uniform mass
    let spread = 0.1;
    let mut x: Vec<f64> = Vec::with_capacity(nvar);
    for k in 1..k_steps {
        let s = k as f64 / k_steps as f64;
        x.extend(m0.iter().zip(m1).map(|(a, b)| (1.0 - spread) * ((1.0 - s) * a + s * b) + spread / n as f64));
    }
    let (mut phi, mut cur) = red.solve_all(&x, None);
    if !phi.is_finite() {
        return Err(Error::DisconnectedSupports);
    }
    let phi0 = phi;
    let mut trace = vec![phi];
    let mut iters = 0;
    let mut converged = nvar == 0 || phi == 0.0;
    let mut gap = 0.0;
    let mut mu = 0.1 * phi / nvar.max(1) as f64;
    let use_newton = nvar <= problem.newton_max_vars;
    while !converged && iters < problem.max_iter {
        iters += 1;
        let grad = red.gradient(&x, &cur);
        let gb: Vec<f64> = grad.iter().zip(&x).map(|(g, m)| g - mu / m).collect();
        let mut d = None;
        if use_newton {
            if let Some(mut h) = red.hessian(&x, &cur) {
                for (i, m) in x.iter().enumerate() {
                    h[i * nvar + i] += mu / (m * m);
                }
                d = simplex_newton_direction(&x, &gb, &h, &blocks, -1.0);
            }
        }
        let d = d.unwrap_or_else(|| {
            // diagonally scaled gradient, balanced per slice
            let mut d: Vec<f64> = gb.iter().zip(&x).map(|(g, m)| -g * m * m / mu).collect();
            for b in &blocks {
                let w: f64 = x[b.clone()].iter().map(|m| m * m).sum();
                let s: f64 = d[b.clone()].iter().sum();
                for i in b.clone() {
                    d[i] -= s * x[i] * x[i] / w;
                }
            }
            d
        });
        let decrement: f64 = -gb.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        if !(decrement > 0.0) || 0.5 * decrement <= 1e-3 * nvar as f64 * mu {
            // centred: tighten the barrier or stop
            gap = nvar as f64 * mu + 0.5 * decrement.max(0.0);
            trace.push(phi);
            if gap <= problem.tol * phi || gap <= 1e-12 * phi0 {
                converged = true;
                break;
            }
            mu *= 0.2;
            continue;
        }
        let mut t = 1.0f64;
        for (xi, di) in x.iter().zip(&d) {
            if *di < 0.0 {
                t = t.min(0.995 * -xi / di);
            }
        }
        let base = barrier(phi, &x, mu);
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if cand.iter().all(|&v| v > 0.0) {
                let (p, s) = red.solve_all(&cand, Some(&cur));
                if p.is_finite() && barrier(p, &cand, mu) <= base - 1e-4 * t * decrement {
                    accepted = Some((cand, p, s));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((x_new, phi_new, s_new)) = accepted else {
            gap = nvar as f64 * mu + 0.5 * decrement;
            converged = gap <= 1e3 * problem.tol * phi || gap <= 1e-12 * phi0;
            break;
        };
        x = x_new;
        phi = phi_new;
        cur = s_new;
    }
    // rescale slices to unit mass exactly; the flows are unaffected up to
    // the rounding this removes
    for b in &blocks {
        let s: f64 = x[b.clone()].iter().sum();
        for i in b.clone() {
            x[i] /= s;
        }
    }
    let (_, fin) = red.solve_all(&x, Some(&cur));

    let mut masses = Vec::with_capacity(k_steps + 1);
    masses.push(m0.to_vec());
    for k in 1..k_steps {
        masses.push(red.slice(&x, k).to_vec());
    }
    masses.push(m1.to_vec());
    let times: Vec<f64> = (0..=k_steps).map(|k| k as f64 * tau).collect();
    let flows: Vec<Vec<f64>> = fin.into_iter().map(|s| s.flow).collect();
    let curve = DiscreteCurve::new(times, masses, flows)?;
    let continuity_residual = curve.continuity_residual(g)?;
    let mass_defect = curve.masses.iter().map(|m| (m.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let action = curve.clone().with_tolerance(f64::INFINITY).action(g)?;
    Ok(GeodesicSolution {
        curve,
        report: GeodesicReport {
            action,
            iterations: iters,
            converged,
            duality_gap: gap,
            continuity_residual,
            mass_defect,
            energy_trace: trace,
            initial_perturbation: spread,
        },
    })
}

/// Outcome of the a-priori check `W₁(m_t, m_0) ≤ C √t √𝒜(0, t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AprioriReport {
    /// `C = √(2 · maxDegree / min σ)`.
    pub constant: f64,
    pub times: Vec<f64>,
    pub w1: Vec<f64>,
    pub bounds: Vec<f64>,
    /// Largest `W₁ / bound` (zero where both vanish).
    pub max_ratio: f64,
    pub holds: bool,
}

/// Checks the a-priori Wasserstein estimate at every grid time, with the
/// action accumulated from time 0.
pub fn audit_apriori_bound(g: &EmbeddedGraph, curve: &DiscreteCurve) -> Result<AprioriReport> {
    let sigma_min = g.edges().iter().map(|e| e.sigma).fold(f64::INFINITY, f64::min);
    let constant = (2.0 * g.max_degree() as f64 / sigma_min).sqrt();
    let energies = curve.step_energies(g)?;
    let m0 = MassDistribution::new(curve.masses[0].clone())?;
    let mut partial = 0.0;
    let (mut times, mut w1s, mut bounds) = (vec![], vec![], vec![]);
    let mut max_ratio: f64 = 0.0;
    for k in 1..curve.times.len() {
        partial += (curve.times[k] - curve.times[k - 1]) * energies[k - 1];
        let t = curve.times[k] - curve.times[0];
        let w1 = earth_mover_w1(g, &MassDistribution::new(curve.masses[k].clone())?, &m0)?;
        let bound = constant * t.sqrt() * partial.sqrt();
        let ratio = if w1 <= 1e-12 { 0.0 } else { w1 / bound };
        max_ratio = max_ratio.max(ratio);
        times.push(t);
        w1s.push(w1);
        bounds.push(bound);
    }
    Ok(AprioriReport { constant, times, w1: w1s, bounds, max_ratio, holds: max_ratio <= 1.0 + 1e-9 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Orthotope;
    use crate::graph::Edge;
    use crate::means::MeanSpec;
    use crate::random_graphs::gen_lattice_nn;

    fn two_point() -> EmbeddedGraph {
        EmbeddedGraph::new(1, 2.0, vec![vec![0.0], vec![1.0]], vec![Edge::new(0, 1, 1.0, MeanSpec::default())]).unwrap()
    }

    #[test]
    fn equal_endpoints_give_zero_action() {
        let g = gen_lattice_nn(2, &Orthotope::cube(2, 0.0, 3.0).unwrap(), 1.0, MeanSpec::default()).unwrap();
        let m = MassDistribution::new(vec![1.0 / 16.0; 16]).unwrap();
        let s = solve_geodesic(&g, &GeodesicProblem::new(m.clone(), m, 4).unwrap()).unwrap();
        assert_eq!(s.report.action, 0.0);
        assert!(s.curve.flows.iter().flatten().all(|&j| j == 0.0));
    }

    #[test]
    fn single_step_matches_closed_form() {
        // one step: J = a - b on the edge, θ = arithmetic midpoint mean = 1/2
        let g = two_point();
        let m0 = MassDistribution::new(vec![0.7, 0.3]).unwrap();
        let m1 = MassDistribution::new(vec![0.4, 0.6]).unwrap();
        let s = solve_geodesic(&g, &GeodesicProblem::new(m0, m1, 1).unwrap()).unwrap();
        let j: f64 = 0.3;
        assert!((s.report.action - j * j / 0.5).abs() < 1e-12);
        assert!(s.report.continuity_residual < 1e-12);
    }

    #[test]
    fn two_point_transfer_refines_consistently() {
        let g = two_point();
        let a = 1.0 - 1e-6;
        let m0 = MassDistribution::new(vec![a, 1.0 - a]).unwrap();
        let m1 = MassDistribution::new(vec![1.0 - a, a]).unwrap();
        let s8 = solve_geodesic(&g, &GeodesicProblem::new(m0.clone(), m1.clone(), 8).unwrap()).unwrap();
        let s16 = solve_geodesic(&g, &GeodesicProblem::new(m0, m1, 16).unwrap()).unwrap();
        assert!(s8.report.converged && s16.report.converged);
        let rel = (s8.report.action - s16.report.action).abs() / s16.report.action;
        assert!(rel < 0.05, "{} vs {}", s8.report.action, s16.report.action);
        assert!(s16.report.continuity_residual < 1e-9 && s16.report.mass_defect < 1e-9);
        assert!(s16.report.energy_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn disconnected_supports_rejected() {
        let g = EmbeddedGraph::new(1, 2.0, vec![vec![0.0], vec![1.0], vec![5.0]], vec![Edge::new(0, 1, 1.0, MeanSpec::default())])
            .unwrap();
        let m0 = MassDistribution::dirac(3, 0);
        let m1 = MassDistribution::dirac(3, 2);
        assert_eq!(
            solve_geodesic(&g, &GeodesicProblem::new(m0, m1, 4).unwrap()).unwrap_err(),
            Error::DisconnectedSupports
        );
    }

    #[test]
    fn apriori_bound_on_transfer() {
        let g = two_point();
        let m0 = MassDistribution::new(vec![0.9, 0.1]).unwrap();
        let m1 = MassDistribution::new(vec![0.2, 0.8]).unwrap();
        let s = solve_geodesic(&g, &GeodesicProblem::new(m0, m1, 6).unwrap()).unwrap();
        let rep = audit_apriori_bound(&g, &s.curve).unwrap();
        assert!(rep.holds, "{}", rep.max_ratio);
        assert!(rep.max_ratio > 0.0);
        let still = DiscreteCurve::stationary(vec![0.5, 0.5], 1, 1.0);
        assert_eq!(audit_apriori_bound(&g, &still).unwrap().max_ratio, 0.0);
    }
}
