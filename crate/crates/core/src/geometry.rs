//! Boxes, segment clipping and small vector helpers.
//!
//! Boxes are half-open, `lower <= y < upper` in their local frame, so a
//! family of boxes that tiles space partitions every segment exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Axis-aligned box, optionally expressed in a rotated orthonormal frame.
///
/// With a frame `F` (rows are the local axes) a point `p` has local
/// coordinates `F p`, and the box is `lower <= F p < upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orthotope {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<Vec<Vec<f64>>>,
}

impl Orthotope {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidParams("box corners have mismatched dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "box requires lower < upper componentwise: {lower:?} {upper:?}"
            )));
        }
        Ok(Orthotope { lower, upper, frame: None })
    }

    /// The cube `[lo, hi)^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// Attaches a rotated frame. Rows must be orthonormal within 1e-12.
    pub fn with_frame(mut self, frame: Vec<Vec<f64>>) -> Result<Self> {
        let n = self.dim();
        if frame.len() != n || frame.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParams("frame must be n x n".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(&frame[i], &frame[j]) - want).abs() > 1e-12 {
                    return Err(Error::InvalidParams("frame is not orthonormal".into()));
                }
            }
        }
        self.frame = Some(frame);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn side(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn min_side(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).fold(f64::INFINITY, f64::min)
    }

    /// Local coordinates of a point.
    pub fn local(&self, p: &[f64]) -> Vec<f64> {
        match &self.frame {
            None => p.to_vec(),
            Some(f) => f.iter().map(|row| dot(row, p)).collect(),
        }
    }

    /// Half-open membership.
    pub fn contains(&self, p: &[f64]) -> bool {
        let y = self.local(p);
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v < *u)
    }

    /// Closed-box membership, used by the geometry validator.
    pub fn contains_closed(&self, p: &[f64]) -> bool {
        let y = self.local(p);
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Signed depth: distance to the complement for interior points,
    /// minus the (box-metric) excess for exterior ones.
    pub fn depth(&self, p: &[f64]) -> f64 {
        let y = self.local(p);
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l).min(u - v))
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance from the segment `[x, y]` to the complement of the
    /// box. The depth is concave on the box, so the minimum over a segment
    /// sits at an endpoint; a segment leaving the box has distance zero.
    pub fn segment_dist_to_complement(&self, x: &[f64], y: &[f64]) -> f64 {
        self.depth(x).min(self.depth(y)).max(0.0)
    }

    /// Grows (or shrinks, for negative `r`) the box by `r` on every side.
    pub fn inflate(&self, r: f64) -> Result<Self> {
        let mut b = Orthotope::new(
            self.lower.iter().map(|l| l - r).collect(),
            self.upper.iter().map(|u| u + r).collect(),
        )?;
        b.frame = self.frame.clone();
        Ok(b)
    }

    /// Parameter interval `[t0, t1]` of the segment `x + t (y - x)` inside
    /// the box, or `None` when the intersection has zero length.
    pub fn clip_segment(&self, x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
        let a = self.local(x);
        let b = self.local(y);
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for i in 0..a.len() {
            let d = b[i] - a[i];
            let (l, u) = (self.lower[i], self.upper[i]);
            if d == 0.0 {
                // Segment parallel to this slab: it is either inside the
                // half-open slab or contributes nothing.
                if a[i] < l || a[i] >= u {
                    return None;
                }
                continue;
            }
            let (mut s0, mut s1) = ((l - a[i]) / d, (u - a[i]) / d);
            if s0 > s1 {
                std::mem::swap(&mut s0, &mut s1);
            }
            t0 = t0.max(s0);
            t1 = t1.min(s1);
            if t0 >= t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Fraction of the segment `[x, y]` inside `a`, i.e. `H^1([x,y] ∩ A) / |x - y|`.
pub fn edge_cut_fraction(x: &[f64], y: &[f64], a: &Orthotope) -> Result<f64> {
    if x == y {
        return Err(Error::DegenerateEdge);
    }
    Ok(a.clip_segment(x, y).map_or(0.0, |(t0, t1)| (t1 - t0).clamp(0.0, 1.0)))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (&'static [f64], &'static [f64]) {
    const N4: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const W4: [f64; 4] = [
        0.347_854_845_137_453_85,
        0.652_145_154_862_546_2,
        0.652_145_154_862_546_2,
        0.347_854_845_137_453_85,
    ];
    const N8: [f64; 8] = [
        -0.960_289_856_497_536_3,
        -0.796_666_477_413_626_7,
        -0.525_532_409_916_329_0,
        -0.183_434_642_495_649_8,
        0.183_434_642_495_649_8,
        0.525_532_409_916_329_0,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W8: [f64; 8] = [
        0.101_228_536_290_376_26,
        0.222_381_034_453_374_47,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362,
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_47,
        0.101_228_536_290_376_26,
    ];
    match order {
        4 => (&N4, &W4),
        8 => (&N8, &W8),
        _ => panic!("unsupported Gauss-Legendre order {order}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Orthotope {
        Orthotope::cube(2, 0.0, 1.0).unwrap()
    }

    #[test]
    fn cut_fraction_contained() {
        assert_eq!(edge_cut_fraction(&[0.0, 0.0], &[1.0, 0.0], &unit()).unwrap(), 1.0);
    }

    #[test]
    fn cut_fraction_half_inside() {
        let f = edge_cut_fraction(&[-0.5, 0.0], &[0.5, 0.0], &unit()).unwrap();
        assert!((f - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cut_fraction_outside() {
        assert_eq!(edge_cut_fraction(&[2.0, 2.0], &[3.0, 2.0], &unit()).unwrap(), 0.0);
    }

    #[test]
    fn cut_fraction_on_upper_face_is_excluded() {
        // lies in the face y = 1, which belongs to the neighbouring box
        assert_eq!(edge_cut_fraction(&[0.0, 1.0], &[1.0, 1.0], &unit()).unwrap(), 0.0);
        assert_eq!(edge_cut_fraction(&[0.0, 0.0], &[0.0, 1.0], &unit()).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_edge_rejected() {
        assert_eq!(
            edge_cut_fraction(&[0.3, 0.3], &[0.3, 0.3], &unit()),
            Err(Error::DegenerateEdge)
        );
    }

    #[test]
    fn rotated_box_clips_diagonal() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let b = Orthotope::new(vec![0.0, -0.1], vec![1.0, 0.1])
            .unwrap()
            .with_frame(vec![vec![s, s], vec![-s, s]])
            .unwrap();
        // diagonal segment of length 2 along the first local axis
        let f = edge_cut_fraction(&[0.0, 0.0], &[2.0 * s, 2.0 * s], &b).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn segment_distance_uses_endpoints() {
        let q = Orthotope::cube(2, 0.0, 4.0).unwrap();
        assert!((q.segment_dist_to_complement(&[1.0, 2.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(q.segment_dist_to_complement(&[3.5, 2.0], &[4.5, 2.0]), 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_degree_seven() {
        let (x, w) = gauss_legendre(4);
        let s: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((s - 2.0 / 7.0).abs() < 1e-14);
    }
}
