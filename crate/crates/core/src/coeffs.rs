//! Input-output coefficients, output multipliers and the influence vector.
//!
//! All matrices share the sparsity of the network they come from. Both
//! linear systems are solved by fixed-point iteration over the edge list.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{NetError, NodeAccounts, Topology, WeightedNetwork};

/// Stopping threshold on the max-norm residual of the multiplier solve, relative to `max O`.
pub const MULTIPLIER_TOL: f64 = 1e-10;
/// Stopping threshold on the L1 residual of the influence solve.
pub const INFLUENCE_TOL: f64 = 1e-14;
/// Default labour share.
pub const DEFAULT_ALPHA: f64 = 0.333;

const STALL_LIMIT: usize = 200;
const MAX_ITER: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoeffError {
    #[error("node {0} buys inputs but has zero total cost")]
    ZeroTotalCost(usize),
    #[error("node {0} sells inputs but has zero total sales")]
    ZeroTotalSales(usize),
    #[error("series diverges (residual {residual} after {iterations} iterations)")]
    DivergentSeries { residual: f64, iterations: usize },
    #[error("column {node} of the input shares sums to {sum}")]
    NonStochasticColumns { node: usize, sum: f64 },
    #[error("labour share {0} outside (0, 1]")]
    InvalidLabourShare(f64),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKind {
    Technical,
    Allocation,
    InputShare,
}

/// Sparse coefficient matrix on a network's topology.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub topology: Arc<Topology>,
    pub values: Vec<f64>,
    pub kind: CoefficientKind,
}

impl CoefficientMatrix {
    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.topology.find_edge(i, j).map_or(0.0, |e| self.values[e])
    }

    /// Column sums `sum_i M_ij`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        for (e, &v) in self.values.iter().enumerate() {
            out[self.topology.dst(e)] += v;
        }
        out
    }

    /// Row sums `sum_j M_ij`.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes()];
        for (e, &v) in self.values.iter().enumerate() {
            out[self.topology.src(e)] += v;
        }
        out
    }

    /// The same matrix with row and column `node` removed; later nodes shift down by one.
    pub fn without_node(&self, node: usize) -> CoefficientMatrix {
        let t = &self.topology;
        let shift = |k: usize| if k > node { k - 1 } else { k };
        let (pairs, values): (Vec<_>, Vec<_>) = t
            .edges()
            .zip(&self.values)
            .filter(|((s, d), _)| *s != node && *d != node)
            .map(|((s, d), &v)| ((shift(s), shift(d)), v))
            .unzip();
        let proxy = t.proxy().filter(|p| p.index() != node);
        let reduced = Topology::from_sorted_unchecked(t.n_nodes() - 1, &pairs, proxy);
        CoefficientMatrix { topology: Arc::new(reduced), values, kind: self.kind }
    }
}

fn check_accounts(net: &WeightedNetwork, acc: &NodeAccounts) -> Result<(), CoeffError> {
    if acc.len() != net.n_nodes() {
        return Err(NetError::SizeMismatch { expected: net.n_nodes(), found: acc.len() }.into());
    }
    Ok(())
}

/// `T_ij = W_ij / (sum_k W_kj + y_j)`.
pub fn technical_coefficients(net: &WeightedNetwork, acc: &NodeAccounts) -> Result<CoefficientMatrix, CoeffError> {
    check_accounts(net, acc)?;
    let t = net.topology();
    let (s_in, _) = net.strengths();
    let cost: Vec<f64> = s_in.iter().zip(&acc.value_added).map(|(s, y)| s + y).collect();
    let mut values = Vec::with_capacity(net.n_edges());
    for (e, &w) in net.weights().iter().enumerate() {
        let j = t.dst(e);
        if !(cost[j] > 0.0) {
            return Err(CoeffError::ZeroTotalCost(j));
        }
        values.push(w / cost[j]);
    }
    Ok(CoefficientMatrix { topology: net.shared_topology(), values, kind: CoefficientKind::Technical })
}

/// `B_ij = W_ij / (sum_k W_ik + f_i)`.
pub fn allocation_coefficients(net: &WeightedNetwork, acc: &NodeAccounts) -> Result<CoefficientMatrix, CoeffError> {
    check_accounts(net, acc)?;
    let t = net.topology();
    let (_, s_out) = net.strengths();
    let sales: Vec<f64> = s_out.iter().zip(&acc.final_demand).map(|(s, f)| s + f).collect();
    let mut values = Vec::with_capacity(net.n_edges());
    for (e, &w) in net.weights().iter().enumerate() {
        let i = t.src(e);
        if !(sales[i] > 0.0) {
            return Err(CoeffError::ZeroTotalSales(i));
        }
        values.push(w / sales[i]);
    }
    Ok(CoefficientMatrix { topology: net.shared_topology(), values, kind: CoefficientKind::Allocation })
}

/// Input shares `W_ij / s_in_j` with `s_in` taken from `acc`, which must
/// agree with the network's column sums.
pub fn input_shares(net: &WeightedNetwork, acc: &NodeAccounts) -> Result<CoefficientMatrix, CoeffError> {
    check_accounts(net, acc)?;
    let t = net.topology();
    let (col, _) = net.strengths();
    for (j, (&c, &s)) in col.iter().zip(&acc.s_in).enumerate() {
        if c > 0.0 && (s <= 0.0 || (c - s).abs() > 1e-9 * s) {
            let sum = if s > 0.0 { c / s } else { f64::INFINITY };
            return Err(CoeffError::NonStochasticColumns { node: j, sum });
        }
    }
    let values = net.weights().iter().enumerate().map(|(e, &w)| w / acc.s_in[t.dst(e)]).collect();
    Ok(CoefficientMatrix { topology: net.shared_topology(), values, kind: CoefficientKind::InputShare })
}

/// Input shares with every supplier of `j` weighted `1 / k_in_j`.
pub fn uniform_shares(t: Arc<Topology>) -> CoefficientMatrix {
    let (k_in, _) = t.degrees();
    let values = (0..t.n_edges()).map(|e| 1.0 / k_in[t.dst(e)] as f64).collect();
    CoefficientMatrix { topology: t, values, kind: CoefficientKind::InputShare }
}

/// Solves `(I - T^T) O = 1`, i.e. `O_j = 1 + sum_i T_ij O_i`.
pub fn output_multipliers(tech: &CoefficientMatrix) -> Result<Vec<f64>, CoeffError> {
    let t = &tech.topology;
    let n = t.n_nodes();
    let mut o = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for iter in 1..=MAX_ITER {
        for j in 0..n {
            next[j] = 1.0 + t.in_edges(j).iter().map(|&e| tech.values[e] * o[t.src(e)]).sum::<f64>();
        }
        let residual = o.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().copied().fold(1.0, f64::max);
        std::mem::swap(&mut o, &mut next);
        if !residual.is_finite() {
            return Err(CoeffError::DivergentSeries { residual, iterations: iter });
        }
        if residual <= MULTIPLIER_TOL * scale {
            return Ok(o);
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                return Err(CoeffError::DivergentSeries { residual, iterations: iter });
            }
        }
    }
    Err(CoeffError::DivergentSeries { residual: best, iterations: MAX_ITER })
}

fn check_alpha(alpha: f64) -> Result<(), CoeffError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(CoeffError::InvalidLabourShare(alpha))
    }
}

/// Solves `v = (1 - alpha) Omega v + (alpha / N) 1` for column-(sub)stochastic `Omega`.
pub fn influence_from_shares(omega: &CoefficientMatrix, alpha: f64) -> Result<Vec<f64>, CoeffError> {
    check_alpha(alpha)?;
    for (j, sum) in omega.column_sums().into_iter().enumerate() {
        if sum > 1.0 + 1e-9 {
            return Err(CoeffError::NonStochasticColumns { node: j, sum });
        }
    }
    let t = &omega.topology;
    let n = t.n_nodes();
    if n == 0 {
        return Ok(Vec::new());
    }
    let base = alpha / n as f64;
    let damp = 1.0 - alpha;
    let mut v = vec![base; n];
    let mut next = vec![0.0; n];
    for iter in 1..=MAX_ITER {
        for i in 0..n {
            next[i] = base + damp * t.out_edges(i).map(|e| omega.values[e] * v[t.dst(e)]).sum::<f64>();
        }
        let residual: f64 = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut v, &mut next);
        if residual <= INFLUENCE_TOL {
            return Ok(v);
        }
        if !residual.is_finite() {
            return Err(CoeffError::DivergentSeries { residual, iterations: iter });
        }
    }
    Err(CoeffError::DivergentSeries { residual: f64::NAN, iterations: MAX_ITER })
}

/// Influence vector `(alpha/N) [I - (1 - alpha) Omega]^-1 1` of a network.
pub fn influence_vector(net: &WeightedNetwork, acc: &NodeAccounts, alpha: f64) -> Result<Vec<f64>, CoeffError> {
    check_alpha(alpha)?;
    influence_from_shares(&input_shares(net, acc)?, alpha)
}

/// Influence vector under equal input shares across each firm's suppliers.
pub fn uniform_influence(t: Arc<Topology>, alpha: f64) -> Result<Vec<f64>, CoeffError> {
    influence_from_shares(&uniform_shares(t), alpha)
}
