//! Transport distances between finitely supported measures.

use std::collections::VecDeque;

use crate::energy::MassDistribution;
use crate::error::{Error, Result};
use crate::geometry::dist;
use crate::graph::EmbeddedGraph;

/// A weighted point cloud.
#[derive(Debug, Clone, Default)]
pub struct Atoms {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Caller-side label of each atom (e.g. a vertex index).
    pub labels: Vec<usize>,
}

impl Atoms {
    /// Support of `m` on the graph, with vertex indices as labels.
    pub fn from_graph(g: &EmbeddedGraph, m: &[f64]) -> Self {
        let mut a = Atoms::default();
        for (i, &w) in m.iter().enumerate() {
            if w > 0.0 {
                a.push(g.pos(i).to_vec(), w, i);
            }
        }
        a
    }

    pub fn push(&mut self, p: Vec<f64>, w: f64, label: usize) {
        self.points.push(p);
        self.weights.push(w);
        self.labels.push(label);
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Optimal coupling: `(source atom, target atom, mass)` triples.
#[derive(Debug, Clone, Default)]
pub struct TransportPlan {
    pub cost: f64,
    pub entries: Vec<(usize, usize, f64)>,
}

fn check_totals(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-10 * a.abs().max(b.abs()).max(1.0) {
        return Err(Error::MassMismatch(a, b));
    }
    Ok(())
}

/// Euclidean W₁ between two atom sets by successive shortest paths on the
/// complete bipartite graph, with Johnson potentials and dense Dijkstra.
pub fn optimal_plan(src: &Atoms, dst: &Atoms) -> Result<TransportPlan> {
    check_totals(src.total(), dst.total())?;
    let (ns, nt) = (src.len(), dst.len());
    if ns == 0 || nt == 0 {
        return Ok(TransportPlan::default());
    }
    let cost: Vec<Vec<f64>> = src
        .points
        .iter()
        .map(|p| dst.points.iter().map(|q| dist(p, q)).collect())
        .collect();
    let scale = src.total().max(dst.total());
    let tiny = 1e-14 * scale;
    let mut supply = src.weights.clone();
    let mut demand = dst.weights.clone();
    // rescale the smaller side so both totals agree exactly
    let (ts, td) = (src.total(), dst.total());
    if ts > 0.0 && td > 0.0 {
        for d in &mut demand {
            *d *= ts / td;
        }
    }
    let mut flow = vec![vec![0.0; nt]; ns];
    let mut pot_s = vec![0.0; ns];
    let mut pot_t = vec![0.0; nt];
    let nn = ns + nt;
    loop {
        let remaining: f64 = supply.iter().filter(|&&x| x > tiny).sum();
        if remaining <= tiny {
            break;
        }
        // Dijkstra over nodes 0..ns (sources) and ns..ns+nt (targets)
        let mut d = vec![f64::INFINITY; nn];
        let mut pred = vec![usize::MAX; nn];
        let mut done = vec![false; nn];
        for i in 0..ns {
            if supply[i] > tiny {
                d[i] = 0.0;
            }
        }
        let mut reached = None;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nn {
                if !done[v] && d[v] < best {
                    best = d[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= ns && demand[u - ns] > tiny {
                reached = Some(u);
                break;
            }
            if u < ns {
                for t in 0..nt {
                    let v = ns + t;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[u][t] + pot_s[u] - pot_t[t]).max(0.0);
                    if d[u] + rc < d[v] {
                        d[v] = d[u] + rc;
                        pred[v] = u;
                    }
                }
            } else {
                let t = u - ns;
                for s in 0..ns {
                    if done[s] || flow[s][t] <= tiny {
                        continue;
                    }
                    let rc = (-cost[s][t] + pot_t[t] - pot_s[s]).max(0.0);
                    if d[u] + rc < d[s] {
                        d[s] = d[u] + rc;
                        pred[s] = u;
                    }
                }
            }
        }
        let end = match reached {
            Some(e) => e,
            None => return Err(Error::Infeasible("transport residual graph disconnected".into())),
        };
        let dend = d[end];
        for i in 0..ns {
            pot_s[i] += d[i].min(dend);
        }
        for t in 0..nt {
            pot_t[t] += d[ns + t].min(dend);
        }
        // bottleneck along the path
        let mut amount = demand[end - ns];
        let mut v = end;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u >= ns {
                amount = amount.min(flow[v][u - ns]);
            }
            v = u;
        }
        amount = amount.min(supply[v]);
        let start = v;
        let mut v = end;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u < ns {
                flow[u][v - ns] += amount;
            } else {
                flow[v][u - ns] -= amount;
                if flow[v][u - ns] < tiny {
                    flow[v][u - ns] = 0.0;
                }
            }
            v = u;
        }
        supply[start] -= amount;
        demand[end - ns] -= amount;
    }
    let mut plan = TransportPlan::default();
    for (s, row) in flow.iter().enumerate() {
        for (t, &f) in row.iter().enumerate() {
            if f > tiny {
                plan.cost += f * cost[s][t];
                plan.entries.push((s, t, f));
            }
        }
    }
    Ok(plan)
}

/// W₁ between two vertex measures with the Euclidean ground cost of the
/// embedding.
pub fn earth_mover_w1(g: &EmbeddedGraph, mu: &MassDistribution, nu: &MassDistribution) -> Result<f64> {
    check_totals(mu.total(), nu.total())?;
    Ok(optimal_plan(&Atoms::from_graph(g, mu.values()), &Atoms::from_graph(g, nu.values()))?.cost)
}

/// W∞ between two vertex measures.
pub fn w_infinity_distance(g: &EmbeddedGraph, mu: &MassDistribution, nu: &MassDistribution) -> Result<f64> {
    w_infinity_atoms(&Atoms::from_graph(g, mu.values()), &Atoms::from_graph(g, nu.values()))
}

/// Smallest `L` admitting a coupling supported on `{|x - y| <= L}`. The
/// optimum is one of the pairwise distances, so the search runs over that
/// sorted list with a max-flow feasibility test.
pub fn w_infinity_atoms(a: &Atoms, b: &Atoms) -> Result<f64> {
    check_totals(a.total(), b.total())?;
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let mut cands: Vec<f64> = a
        .points
        .iter()
        .flat_map(|p| b.points.iter().map(move |q| dist(p, q)))
        .collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let total = a.total();
    let feasible = |l: f64| {
        let mut net = Dinic::new(a.len() + b.len() + 2);
        let (s, t) = (a.len() + b.len(), a.len() + b.len() + 1);
        for (i, &w) in a.weights.iter().enumerate() {
            net.add(s, i, w);
        }
        for (j, &w) in b.weights.iter().enumerate() {
            net.add(a.len() + j, t, w * total / b.total());
        }
        for (i, p) in a.points.iter().enumerate() {
            for (j, q) in b.points.iter().enumerate() {
                if dist(p, q) <= l {
                    net.add(i, a.len() + j, f64::INFINITY);
                }
            }
        }
        net.max_flow(s, t) >= total * (1.0 - 1e-12)
    };
    let (mut lo, mut hi) = (0, cands.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(cands[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(cands[lo])
}

struct Dinic {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic { head: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new() }
    }

    fn add(&mut self, u: usize, v: usize, c: f64) {
        self.head[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(c);
        self.head[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0.0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.head.len();
        let eps = 1e-15;
        let mut total = 0.0;
        loop {
            let mut level = vec![usize::MAX; n];
            level[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &e in &self.head[u] {
                    if self.cap[e] > eps && level[self.to[e]] == usize::MAX {
                        level[self.to[e]] = level[u] + 1;
                        q.push_back(self.to[e]);
                    }
                }
            }
            if level[t] == usize::MAX {
                return total;
            }
            let mut it = vec![0; n];
            loop {
                let f = self.push(s, t, f64::INFINITY, &level, &mut it, eps);
                if f <= eps {
                    break;
                }
                total += f;
            }
        }
    }

    fn push(&mut self, u: usize, t: usize, f: f64, level: &[usize], it: &mut [usize], eps: f64) -> f64 {
        if u == t {
            return f;
        }
        while it[u] < self.head[u].len() {
            let e = self.head[u][it[u]];
            let v = self.to[e];
            if self.cap[e] > eps && level[v] == level[u] + 1 {
                let d = self.push(v, t, f.min(self.cap[e]), level, it, eps);
                if d > eps {
                    self.cap[e] -= d;
                    self.cap[e ^ 1] += d;
                    return d;
                }
            }
            it[u] += 1;
        }
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atoms(pts: &[[f64; 2]], w: &[f64]) -> Atoms {
        let mut a = Atoms::default();
        for (i, (p, &w)) in pts.iter().zip(w).enumerate() {
            a.push(p.to_vec(), w, i);
        }
        a
    }

    #[test]
    fn diracs() {
        let a = atoms(&[[0.0, 0.0]], &[1.0]);
        let b = atoms(&[[3.0, 4.0]], &[1.0]);
        assert!((optimal_plan(&a, &b).unwrap().cost - 5.0).abs() < 1e-12);
        assert_eq!(w_infinity_atoms(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn two_atom_square() {
        let a = atoms(&[[0.0, 0.0], [1.0, 0.0]], &[0.5, 0.5]);
        let b = atoms(&[[0.0, 1.0], [1.0, 1.0]], &[0.5, 0.5]);
        assert!((optimal_plan(&a, &b).unwrap().cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mismatch_rejected() {
        let a = atoms(&[[0.0, 0.0]], &[1.0]);
        let b = atoms(&[[0.0, 0.0]], &[0.5]);
        assert!(matches!(optimal_plan(&a, &b), Err(Error::MassMismatch(..))));
    }

    #[test]
    fn plan_marginals_match() {
        let a = atoms(&[[0.0, 0.0], [2.0, 0.0], [5.0, 1.0]], &[0.2, 0.5, 0.3]);
        let b = atoms(&[[1.0, 0.0], [4.0, 4.0]], &[0.6, 0.4]);
        let p = optimal_plan(&a, &b).unwrap();
        let mut rows = [0.0; 3];
        let mut cols = [0.0; 2];
        for &(s, t, f) in &p.entries {
            rows[s] += f;
            cols[t] += f;
        }
        for (r, w) in rows.iter().zip(&a.weights) {
            assert!((r - w).abs() < 1e-12);
        }
        for (c, w) in cols.iter().zip(&b.weights) {
            assert!((c - w).abs() < 1e-12);
        }
    }
}
