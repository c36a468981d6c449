//! Weighted graph Laplacians solved by preconditioned conjugate gradients,
//! Euclidean projection onto scaled simplices, and projected Newton
//! directions on products of simplices.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

/// Systems up to this size are solved by dense Cholesky factorisation.
const DENSE_MAX: usize = 500;

/// `L = Σ_e c_e (δ_a - δ_b)(δ_a - δ_b)^T` on `n` local nodes.
#[derive(Debug, Clone)]
pub struct Laplacian {
    n: usize,
    adj: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

/// Outcome of a Laplacian solve.
#[derive(Debug, Clone)]
pub struct LaplaceSolution {
    pub potential: Vec<f64>,
    pub iterations: usize,
    /// Largest per-component imbalance `|Σ d|` removed before solving.
    pub imbalance: f64,
    pub residual: f64,
}

impl Laplacian {
    /// Edges with nonpositive conductance are dropped.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        let mut diag = vec![0.0; n];
        for &(a, b, c) in edges {
            if c > 0.0 && c.is_finite() {
                adj[a].push((b, c));
                adj[b].push((a, c));
                diag[a] += c;
                diag[b] += c;
            }
        }
        Laplacian { n, adj, diag }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = self.diag[i] * x[i];
            for &(j, c) in &self.adj[i] {
                s -= c * x[j];
            }
            y[i] = s;
        }
    }

    /// Connected components of the positive-conductance graph.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.n];
        let mut c = 0;
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = c;
            let mut stack = vec![s];
            while let Some(x) = stack.pop() {
                for &(y, _) in &self.adj[x] {
                    if label[y] == usize::MAX {
                        label[y] = c;
                        stack.push(y);
                    }
                }
            }
            c += 1;
        }
        (label, c)
    }

    /// Solves `L p = d` with one node per component pinned at zero. The
    /// right-hand side is first projected onto the range of `L`; the size
    /// of that correction is reported so callers can reject inconsistent
    /// data.
    pub fn solve(&self, d: &[f64], warm: Option<&[f64]>, rtol: f64, max_iter: usize) -> LaplaceSolution {
        let (label, nc) = self.components();
        let mut sum = vec![0.0; nc];
        let mut cnt = vec![0usize; nc];
        let mut scale = vec![0.0f64; nc];
        for i in 0..self.n {
            sum[label[i]] += d[i];
            cnt[label[i]] += 1;
            scale[label[i]] += d[i].abs();
        }
        let imbalance = sum.iter().map(|s| s.abs()).fold(0.0, f64::max);
        let rhs: Vec<f64> = (0..self.n).map(|i| d[i] - sum[label[i]] / cnt[label[i]] as f64).collect();
        let mut pinned = vec![false; self.n];
        let mut seen = vec![false; nc];
        for i in 0..self.n {
            if !seen[label[i]] {
                seen[label[i]] = true;
                pinned[i] = true;
            }
        }
        if self.n <= DENSE_MAX {
            if let Some(x) = self.solve_dense(&rhs, &pinned) {
                let mut ax = vec![0.0; self.n];
                self.apply(&x, &mut ax);
                let residual = (0..self.n).map(|i| (rhs[i] - ax[i]).abs()).fold(0.0, f64::max);
                return LaplaceSolution { potential: x, iterations: 0, imbalance, residual };
            }
        }
        let mut x: Vec<f64> = match warm {
            Some(w) if w.len() == self.n => w.to_vec(),
            _ => vec![0.0; self.n],
        };
        // shift the warm start so pinned nodes sit at zero
        let mut base = vec![0.0; nc];
        for i in 0..self.n {
            if pinned[i] {
                base[label[i]] = x[i];
            }
        }
        for i in 0..self.n {
            x[i] -= base[label[i]];
        }
        let mask = |v: &mut [f64]| {
            for i in 0..v.len() {
                if pinned[i] {
                    v[i] = 0.0;
                }
            }
        };
        let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut ax = vec![0.0; self.n];
        self.apply(&x, &mut ax);
        let mut r: Vec<f64> = (0..self.n).map(|i| rhs[i] - ax[i]).collect();
        mask(&mut r);
        let inv: Vec<f64> = self.diag.iter().map(|&dg| if dg > 0.0 { 1.0 / dg } else { 0.0 }).collect();
        let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut it = 0;
        let target = rtol * bnorm.max(1e-300);
        let mut rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        while rnorm > target && it < max_iter {
            self.apply(&p, &mut ax);
            mask(&mut ax);
            let pap: f64 = p.iter().zip(&ax).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..self.n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ax[i];
            }
            for i in 0..self.n {
                z[i] = r[i] * inv[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..self.n {
                p[i] = z[i] + beta * p[i];
            }
            rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            it += 1;
        }
        // true residual on the full system
        self.apply(&x, &mut ax);
        let residual = (0..self.n).map(|i| (rhs[i] - ax[i]).abs()).fold(0.0, f64::max);
        LaplaceSolution { potential: x, iterations: it, imbalance, residual }
    }

    /// Cholesky solve of the system with pinned nodes removed.
    fn solve_dense(&self, rhs: &[f64], pinned: &[bool]) -> Option<Vec<f64>> {
        let free: Vec<usize> = (0..self.n).filter(|&i| !pinned[i]).collect();
        let mut idx = vec![usize::MAX; self.n];
        for (k, &i) in free.iter().enumerate() {
            idx[i] = k;
        }
        let nf = free.len();
        let mut a = DMatrix::<f64>::zeros(nf, nf);
        let mut b = DVector::<f64>::zeros(nf);
        for (k, &i) in free.iter().enumerate() {
            a[(k, k)] = self.diag[i];
            for &(j, c) in &self.adj[i] {
                if idx[j] != usize::MAX {
                    a[(k, idx[j])] -= c;
                }
            }
            b[k] = rhs[i];
        }
        let sol = a.cholesky()?.solve(&b);
        let mut x = vec![0.0; self.n];
        for (k, &i) in free.iter().enumerate() {
            x[i] = sol[k];
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Euclidean projection of `y` onto `{x >= 0, Σ x = total}`.
pub fn project_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut s: Vec<f64> = y.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &v) in s.iter().enumerate() {
        cum += v;
        let t = (cum - total) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// Projection of each block of `y` onto the simplex with the block's total.
pub fn project_blocks(y: &[f64], blocks: &[Range<usize>], totals: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (b, &t) in blocks.iter().zip(totals) {
        out[b.clone()].copy_from_slice(&project_simplex(&y[b.clone()], t));
    }
    out
}

/// Projected Newton direction for minimising a function with gradient
/// `grad` and dense row-major Hessian `h` over a product of simplices, one
/// per block. In each block, variables within `eps_active` of zero whose
/// gradient exceeds the block's multiplier estimate `⟨m, g⟩_B / Σ_B m` are
/// sent to zero; the rest solve the equality-constrained Newton system.
pub fn simplex_newton_direction(
    m: &[f64],
    grad: &[f64],
    h: &[f64],
    blocks: &[Range<usize>],
    eps_active: f64,
) -> Option<Vec<f64>> {
    let n = m.len();
    let mut active = vec![false; n];
    let mut block_of = vec![usize::MAX; n];
    for (bi, b) in blocks.iter().enumerate() {
        let mass: f64 = m[b.clone()].iter().sum();
        let lambda: f64 = if mass > 0.0 {
            b.clone().map(|a| m[a] * grad[a]).sum::<f64>() / mass
        } else {
            b.clone().map(|a| grad[a]).fold(f64::INFINITY, f64::min)
        };
        for a in b.clone() {
            block_of[a] = bi;
            active[a] = m[a] <= eps_active && grad[a] > lambda;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&a| !active[a]).collect();
    let nf = free.len();
    let nb = blocks.len();
    if nf == 0 {
        return None;
    }
    let mut released = vec![0.0; nb];
    for a in 0..n {
        if active[a] {
            released[block_of[a]] += m[a];
        }
    }
    let diag_max = free.iter().map(|&a| h[a * n + a].abs()).fold(0.0, f64::max);
    let mu = 1e-12 * diag_max.max(1e-300);
    let mut kkt = DMatrix::<f64>::zeros(nf + nb, nf + nb);
    let mut rhs = DVector::<f64>::zeros(nf + nb);
    for (i, &a) in free.iter().enumerate() {
        let mut r = -grad[a];
        for b in 0..n {
            if active[b] {
                r += h[a * n + b] * m[b];
            }
        }
        for (j, &b) in free.iter().enumerate() {
            kkt[(i, j)] = h[a * n + b];
        }
        kkt[(i, i)] += mu;
        kkt[(i, nf + block_of[a])] = 1.0;
        kkt[(nf + block_of[a], i)] = 1.0;
        rhs[i] = r;
    }
    for bi in 0..nb {
        rhs[nf + bi] = released[bi];
        if kkt[(nf + bi, nf + bi)] == 0.0 && !free.iter().any(|&a| block_of[a] == bi) {
            // every variable of the block is active
            kkt[(nf + bi, nf + bi)] = 1.0;
        }
    }
    let sol = kkt.lu().solve(&rhs)?;
    let mut d: Vec<f64> = (0..n).map(|a| if active[a] { -m[a] } else { 0.0 }).collect();
    for (i, &a) in free.iter().enumerate() {
        d[a] = sol[i];
    }
    d.iter().all(|x| x.is_finite()).then_some(d)
}
