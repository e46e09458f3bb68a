//! Dense brute-force oracles and random instance generators.
//!
//! Nothing here calls into the library's solvers; matrices are rebuilt from
//! plain edge lists and solved with dense linear algebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A random sparse instance: edge list with positive weights plus
/// positive value added and final demand per node.
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub value_added: Vec<f64>,
    pub final_demand: Vec<f64>,
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Random loop-free digraph in which every node has at least one supplier
/// and one customer, with log-uniform weights over four decades.
pub fn random_instance(r: &mut ChaCha20Rng, n: usize, mean_degree: f64) -> Instance {
    let p = (mean_degree / (n as f64 - 1.0)).min(1.0);
    let mut adj = vec![vec![false; n]; n];
    for (i, row) in adj.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = i != j && r.random::<f64>() < p;
        }
    }
    for i in 0..n {
        let j = (i + 1 + r.random_range(0..n - 1)) % n;
        adj[i][j] = true;
        let k = (i + 1 + r.random_range(0..n - 1)) % n;
        adj[k][i] = true;
    }
    let mut edges = Vec::new();
    for (i, row) in adj.iter().enumerate() {
        for (j, &on) in row.iter().enumerate() {
            if on {
                edges.push((i, j, 10f64.powf(r.random_range(-2.0..2.0))));
            }
        }
    }
    let value_added = (0..n).map(|_| 10f64.powf(r.random_range(-1.0..1.5))).collect();
    let final_demand = (0..n).map(|_| 10f64.powf(r.random_range(-1.0..1.5))).collect();
    Instance { n, edges, value_added, final_demand }
}

pub fn dense(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(i, j, w) in edges {
        m[(i, j)] = w;
    }
    m
}

pub fn row_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m.row(i).sum()).collect()
}

pub fn col_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).sum()).collect()
}

/// Alternating row and column scaling of a dense matrix until both
/// marginals hold to `tol` in max relative error.
pub fn dense_ipf(mut m: DMatrix<f64>, s_out: &[f64], s_in: &[f64], tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    for _ in 0..1_000_000 {
        for i in 0..n {
            let r: f64 = m.row(i).sum();
            if r > 0.0 {
                let c = s_out[i] / r;
                m.row_mut(i).scale_mut(c);
            }
        }
        for j in 0..n {
            let c: f64 = m.column(j).sum();
            if c > 0.0 {
                let k = s_in[j] / c;
                m.column_mut(j).scale_mut(k);
            }
        }
        let worst = row_sums(&m)
            .iter()
            .zip(s_out)
            .chain(col_sums(&m).iter().zip(s_in))
            .map(|(a, b)| if *b > 0.0 { (a - b).abs() / b } else { a.abs() })
            .fold(0.0, f64::max);
        if worst <= tol {
            return m;
        }
    }
    panic!("dense IPF oracle did not converge");
}

/// Technical coefficients `W_ij / (col_j + y_j)` as a dense matrix.
pub fn dense_technical(inst: &Instance) -> DMatrix<f64> {
    let w = dense(inst.n, &inst.edges);
    let cols = col_sums(&w);
    DMatrix::from_fn(inst.n, inst.n, |i, j| w[(i, j)] / (cols[j] + inst.value_added[j]))
}

/// `(I - T^T)^-1 1` by LU.
pub fn dense_multipliers(t: &DMatrix<f64>) -> Vec<f64> {
    let n = t.nrows();
    let a = DMatrix::identity(n, n) - t.transpose();
    let o = a.lu().solve(&DVector::from_element(n, 1.0)).expect("nonsingular");
    o.iter().copied().collect()
}

/// Column-normalized inputs `W_ij / col_j`.
pub fn dense_shares(inst: &Instance) -> DMatrix<f64> {
    let w = dense(inst.n, &inst.edges);
    let cols = col_sums(&w);
    DMatrix::from_fn(inst.n, inst.n, |i, j| if cols[j] > 0.0 { w[(i, j)] / cols[j] } else { 0.0 })
}

/// `(alpha/N) [I - (1 - alpha) Omega]^-1 1` by LU.
pub fn dense_influence(omega: &DMatrix<f64>, alpha: f64) -> Vec<f64> {
    let n = omega.nrows();
    let a = DMatrix::identity(n, n) - omega * (1.0 - alpha);
    let v = a.lu().solve(&DVector::from_element(n, alpha / n as f64)).expect("nonsingular");
    v.iter().copied().collect()
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

/// Per-edge deletion probabilities when `k` edges are removed one at a time,
/// each step picking among the survivors with probability proportional to
/// `1 / w`. Enumerates every ordered sequence.
pub fn successive_deletion_probs(weights: &[f64], k: usize) -> Vec<f64> {
    fn go(p: &[f64], alive: &mut Vec<bool>, depth: usize, k: usize, prob: f64, acc: &mut [f64]) {
        if depth == k {
            return;
        }
        let total: f64 = p.iter().zip(alive.iter()).filter(|(_, &a)| a).map(|(x, _)| x).sum();
        for e in 0..p.len() {
            if alive[e] {
                let q = prob * p[e] / total;
                acc[e] += q;
                alive[e] = false;
                go(p, alive, depth + 1, k, q, acc);
                alive[e] = true;
            }
        }
    }
    let p: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let mut acc = vec![0.0; weights.len()];
    go(&p, &mut vec![true; weights.len()], 0, k, 1.0, &mut acc);
    acc
}
