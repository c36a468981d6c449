//! Mean functions used to average vertex masses across an edge.
//!
//! Every mean here is continuous on `[0, ∞)²`, positively 1-homogeneous,
//! jointly concave, nondecreasing in each argument and satisfies
//! `θ(1, 1) = 1`. `mean_property_audit` checks those axioms numerically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum MeanKind {
    Arithmetic,
    Geometric,
    Harmonic,
    Logarithmic,
    Minimum,
    WeightedArithmetic,
}

/// A mean function together with its weight (weighted arithmetic only).
///
/// The mean of an undirected edge `(u, v)` is always evaluated as
/// `θ(m(u), m(v))` in the stored orientation, which realises
/// `θ_uv(r, s) = θ_vu(s, r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSpec {
    pub kind: MeanKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Default for MeanSpec {
    fn default() -> Self {
        MeanSpec::new(MeanKind::Arithmetic)
    }
}

// Logarithmic mean switches to its Taylor expansion when |s - r| / r is below
// this threshold; the remainder there is below 1e-19 relative.
const LOG_SERIES_THRESHOLD: f64 = 1e-3;

impl MeanSpec {
    pub const fn new(kind: MeanKind) -> Self {
        MeanSpec { kind, lambda: None }
    }

    pub fn weighted(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidParams(format!("mean weight {lambda} outside [0,1]")));
        }
        Ok(MeanSpec { kind: MeanKind::WeightedArithmetic, lambda: Some(lambda) })
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.lambda) {
            (MeanKind::WeightedArithmetic, Some(l)) if (0.0..=1.0).contains(&l) => Ok(()),
            (MeanKind::WeightedArithmetic, _) => {
                Err(Error::InvalidParams("weightedArithmetic needs lambda in [0,1]".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.kind != MeanKind::WeightedArithmetic
    }

    fn weight(&self) -> f64 {
        self.lambda.unwrap_or(0.5)
    }

    /// `θ(r, s)`, rejecting negative arguments.
    pub fn eval(&self, r: f64, s: f64) -> Result<f64> {
        if r < 0.0 || s < 0.0 || r.is_nan() || s.is_nan() {
            return Err(Error::NegativeInput(r, s));
        }
        Ok(self.value(r, s))
    }

    /// `θ(r, s)` for arguments already known to be nonnegative.
    pub fn value(&self, r: f64, s: f64) -> f64 {
        match self.kind {
            MeanKind::Arithmetic => 0.5 * (r + s),
            MeanKind::WeightedArithmetic => {
                let l = self.weight();
                l * r + (1.0 - l) * s
            }
            MeanKind::Geometric => (r * s).sqrt(),
            MeanKind::Harmonic => {
                if r == 0.0 || s == 0.0 {
                    0.0
                } else {
                    2.0 * r * s / (r + s)
                }
            }
            MeanKind::Minimum => r.min(s),
            MeanKind::Logarithmic => log_mean(r, s),
        }
    }

    /// Partial derivatives `(∂θ/∂r, ∂θ/∂s)`. Infinite where the mean has a
    /// vertical tangent (e.g. geometric mean at a zero argument); at the kink
    /// of the minimum each side receives one half.
    pub fn grad(&self, r: f64, s: f64) -> (f64, f64) {
        match self.kind {
            MeanKind::Arithmetic => (0.5, 0.5),
            MeanKind::WeightedArithmetic => {
                let l = self.weight();
                (l, 1.0 - l)
            }
            MeanKind::Geometric => {
                let gr = if r == 0.0 { f64::INFINITY } else { 0.5 * (s / r).sqrt() };
                let gs = if s == 0.0 { f64::INFINITY } else { 0.5 * (r / s).sqrt() };
                (gr, gs)
            }
            MeanKind::Harmonic => {
                let t = r + s;
                if t == 0.0 {
                    (f64::INFINITY, f64::INFINITY)
                } else {
                    (2.0 * s * s / (t * t), 2.0 * r * r / (t * t))
                }
            }
            MeanKind::Minimum => {
                if r < s {
                    (1.0, 0.0)
                } else if s < r {
                    (0.0, 1.0)
                } else {
                    (0.5, 0.5)
                }
            }
            MeanKind::Logarithmic => log_mean_grad(r, s),
        }
    }

    /// Scalar `κ` with `∇²θ(r, s) = κ [[s², -rs], [-rs, r²]]`, which holds for
    /// every 1-homogeneous mean. Zero for the linear means; the minimum is
    /// treated as linear away from its kink.
    pub fn curvature(&self, r: f64, s: f64) -> f64 {
        match self.kind {
            MeanKind::Arithmetic | MeanKind::WeightedArithmetic | MeanKind::Minimum => 0.0,
            MeanKind::Geometric => -0.25 / (r * s).powf(1.5),
            MeanKind::Harmonic => -4.0 / (r + s).powi(3),
            MeanKind::Logarithmic => {
                if r == 0.0 || s == 0.0 {
                    return f64::NEG_INFINITY;
                }
                // ∂_s θ(r, s) = g'(s/r) with θ = r g(s/r), so θ_ss = g''(w)/r = κ r²
                let h = 1e-4 * s;
                let d = (log_mean_grad(r, s + h).1 - log_mean_grad(r, s - h).1) / (2.0 * h);
                d / (r * r)
            }
        }
    }
}

/// Series of `u / ln(1 + u)` (Gregory coefficients) through `u^5`.
fn log_series(u: f64) -> f64 {
    1.0 + u * (0.5 + u * (-1.0 / 12.0 + u * (1.0 / 24.0 + u * (-19.0 / 720.0 + u * 3.0 / 160.0))))
}

fn log_series_deriv(u: f64) -> f64 {
    0.5 + u * (-1.0 / 6.0 + u * (1.0 / 8.0 + u * (-19.0 / 180.0 + u * 3.0 / 32.0)))
}

fn log_mean(r: f64, s: f64) -> f64 {
    if r == 0.0 || s == 0.0 {
        return 0.0;
    }
    let (hi, lo) = if r >= s { (r, s) } else { (s, r) };
    let u = (hi - lo) / lo;
    if u <= LOG_SERIES_THRESHOLD {
        return lo * log_series(u);
    }
    let l = if u < 1.0 { u.ln_1p() } else { (hi / lo).ln() };
    (hi - lo) / l
}

fn log_mean_grad(r: f64, s: f64) -> (f64, f64) {
    if r == 0.0 || s == 0.0 {
        // θ(r, 0) = 0 and the slope in the zero argument is unbounded
        return match (r == 0.0, s == 0.0) {
            (true, true) => (f64::INFINITY, f64::INFINITY),
            (true, false) => (f64::INFINITY, 0.0),
            _ => (0.0, f64::INFINITY),
        };
    }
    // θ(r, s) = r g(s / r), so ∂_s θ = g'(s/r) and Euler gives ∂_r θ.
    let w = s / r;
    let u = w - 1.0;
    let th = log_mean(r, s);
    let ds = if u.abs() <= LOG_SERIES_THRESHOLD {
        log_series_deriv(u)
    } else {
        // g(w) = (w - 1) / ln w, g'(w) = g (1 - g / w) / (w - 1)
        let g = th / r;
        g * (1.0 - g / w) / (w - 1.0)
    };
    let dr = (th - s * ds) / r;
    (dr, ds)
}

/// A property violation found by the audit, with its witness.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanViolation {
    pub property: &'static str,
    pub witness: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct MeanAudit {
    pub samples: usize,
    pub violations: Vec<MeanViolation>,
}

impl MeanAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Randomised check of the mean axioms for a listed mean.
pub fn mean_property_audit(spec: &MeanSpec, samples: usize, seed: u64) -> MeanAudit {
    let s = *spec;
    audit_mean_fn(move |a, b| s.value(a, b), samples, seed)
}

/// Audits an arbitrary two-argument function against the mean axioms.
pub fn audit_mean_fn<F: Fn(f64, f64) -> f64>(theta: F, samples: usize, seed: u64) -> MeanAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MeanAudit { samples, violations: Vec::new() };
    let mut flag = |property: &'static str, witness: Vec<f64>, detail: String| {
        out.violations.push(MeanViolation { property, witness, detail });
    };
    let n11 = theta(1.0, 1.0);
    if (n11 - 1.0).abs() > 1e-12 {
        flag("normalization", vec![1.0, 1.0], format!("theta(1,1) = {n11}"));
    }
    for _ in 0..samples {
        let r = sample_arg(&mut rng);
        let s = sample_arg(&mut rng);
        let c: f64 = rng.random_range(0.0..10.0);
        let t = theta(r, s);
        let lhs = theta(c * r, c * s);
        if (lhs - c * t).abs() > 1e-12 * (c * t).abs().max(1e-300) + 1e-300 {
            flag("homogeneity", vec![r, s, c], format!("theta(cr,cs) = {lhs}, c theta = {}", c * t));
        }
        let dr: f64 = rng.random_range(0.0..1.0);
        let ds: f64 = rng.random_range(0.0..1.0);
        if theta(r + dr, s) < t - 1e-12 * t.max(1.0) || theta(r, s + ds) < t - 1e-12 * t.max(1.0) {
            flag("monotonicity", vec![r, s, dr, ds], "decreasing direction".into());
        }
        let r2 = sample_arg(&mut rng);
        let s2 = sample_arg(&mut rng);
        let mid = theta(0.5 * (r + r2), 0.5 * (s + s2));
        let avg = 0.5 * (t + theta(r2, s2));
        if mid < avg - 1e-12 * avg.max(1.0) {
            flag("concavity", vec![r, s, r2, s2], format!("midpoint {mid} < average {avg}"));
        }
    }
    out
}

fn sample_arg(rng: &mut ChaCha8Rng) -> f64 {
    // mix of exact zeros, near-ties and spread values
    match rng.random_range(0..10u32) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..10.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MeanKind::*;

    const ALL: [MeanKind; 5] = [Arithmetic, Geometric, Harmonic, Logarithmic, Minimum];

    #[test]
    fn listed_values() {
        assert_eq!(MeanSpec::new(Arithmetic).eval(2.0, 4.0).unwrap(), 3.0);
        assert_eq!(MeanSpec::new(Logarithmic).eval(1.0, 1.0).unwrap(), 1.0);
        // 2 * 1 * 3 / (1 + 3)
        assert!((MeanSpec::new(Harmonic).eval(1.0, 3.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn curvature_matches_gradient_differences() {
        for kind in [Arithmetic, Geometric, Harmonic, Logarithmic] {
            let m = MeanSpec::new(kind);
            for &(r, s) in &[(1.0, 2.0), (0.3, 0.7), (5.0, 0.2), (1.0, 1.0005)] {
                let h = 1e-6;
                let fd = (m.grad(r + h, s).0 - m.grad(r - h, s).0) / (2.0 * h);
                let k = m.curvature(r, s);
                assert!((k * s * s - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{kind:?} {r} {s}: {} vs {fd}", k * s * s);
            }
        }
    }

    #[test]
    fn negative_input_rejected() {
        assert_eq!(MeanSpec::new(Geometric).eval(-1.0, 1.0), Err(Error::NegativeInput(-1.0, 1.0)));
    }

    #[test]
    fn zero_conventions() {
        for k in [Geometric, Harmonic, Logarithmic, Minimum] {
            assert_eq!(MeanSpec::new(k).value(0.0, 2.0), 0.0, "{k:?}");
        }
    }

    #[test]
    fn logarithmic_series_matches_direct_formula() {
        let m = MeanSpec::new(Logarithmic);
        for &(r, s) in &[(1.0, 1.0005), (2.0, 2.002), (3.0, 2.9995)] {
            let direct: f64 = (r - s) / (f64::ln(r) - f64::ln(s));
            assert!((m.value(r, s) - direct).abs() < 1e-9 * direct);
        }
        // series and closed form agree at the switch
        let u = LOG_SERIES_THRESHOLD;
        assert!((log_series(u) - u / u.ln_1p()).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for k in [Arithmetic, Geometric, Harmonic, Logarithmic] {
            let m = MeanSpec::new(k);
            for &(r, s) in &[(0.7, 2.3), (1.0, 1.0002), (5.0, 0.4)] {
                let (gr, gs) = m.grad(r, s);
                let fr = (m.value(r + h, s) - m.value(r - h, s)) / (2.0 * h);
                let fs = (m.value(r, s + h) - m.value(r, s - h)) / (2.0 * h);
                assert!((gr - fr).abs() < 1e-6, "{k:?} d/dr at ({r},{s}): {gr} vs {fr}");
                assert!((gs - fs).abs() < 1e-6, "{k:?} d/ds at ({r},{s}): {gs} vs {fs}");
            }
        }
    }

    #[test]
    fn audit_passes_for_listed_means() {
        for k in ALL {
            let a = mean_property_audit(&MeanSpec::new(k), 1000, 11);
            assert!(a.passed(), "{k:?}: {:?}", a.violations.first());
        }
        let a = mean_property_audit(&MeanSpec::weighted(0.3).unwrap(), 1000, 11);
        assert!(a.passed(), "{:?}", a.violations.first());
    }

    #[test]
    fn audit_catches_corrupted_mean() {
        let a = audit_mean_fn(|r, s| r * r + s * s, 200, 3);
        assert!(a.violations.iter().any(|v| v.property == "homogeneity"));
    }

    #[test]
    fn bounded_by_sum_and_between_min_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let r = sample_arg(&mut rng);
            let s = sample_arg(&mut rng);
            for k in ALL {
                let m = MeanSpec::new(k);
                let t = m.value(r, s);
                assert!(t <= r + s + 1e-12, "{k:?}");
                assert!(t >= r.min(s) - 1e-12 && t <= r.max(s) + 1e-12, "{k:?} {r} {s} {t}");
                assert!((t - m.value(s, r)).abs() <= 1e-12 * t.max(1.0), "{k:?} symmetry");
            }
            let w = MeanSpec::weighted(0.3).unwrap().value(r, s);
            assert!(w <= r + s + 1e-12);
        }
    }

    #[test]
    fn serde_shape() {
        let m: MeanSpec = serde_json::from_str(r#"{"kind":"logarithmic"}"#).unwrap();
        assert_eq!(m, MeanSpec::new(Logarithmic));
        let w: MeanSpec = serde_json::from_str(r#"{"kind":"weightedArithmetic","lambda":0.25}"#).unwrap();
        assert_eq!(w.lambda, Some(0.25));
    }
}
