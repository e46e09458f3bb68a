//! Two-step conditional maximum-entropy reconstruction.
//!
//! Step one spreads each node's strengths over the known edges with the
//! gravity prescription `s_out_i s_in_j / W_tot` and rebalances it by
//! iterative proportional fitting (RAS) until both marginals hold. Step two
//! reads the balanced weights as the means of independent exponential edge
//! weights, which gives the rates and confidence bands.

use std::sync::Arc;

use rand::distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{strengths_of, NetError, Topology, WeightedNetwork};
use crate::rng::{mix_seed, phase_rng, Phase};

const E_INV: f64 = 0.367_879_441_171_442_33;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("strength totals differ: out {out_total} vs in {in_total}")]
    UnbalancedTotals { out_total: f64, in_total: f64 },
    #[error("node {node} needs positive {side}-strength but has no usable edge")]
    InfeasibleSupport { node: usize, side: &'static str },
    #[error("IPF stopped after {} iterations at relative L1 {}", .0.iterations, .0.rel_l1)]
    NonConvergence(Box<IpfOutcome>),
    #[error("invalid confidence levels q- = {q_low}, q+ = {q_high}")]
    InvalidConfidenceLevel { q_low: f64, q_high: f64 },
    #[error("rate {0} must be positive and finite")]
    InvalidRate(f64),
    #[error("invalid strength or initial weight {0}")]
    InvalidInput(f64),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn check_totals(s_out: &[f64], s_in: &[f64]) -> Result<f64, ReconError> {
    for &v in s_out.iter().chain(s_in) {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ReconError::InvalidInput(v));
        }
    }
    let out_total: f64 = s_out.iter().sum();
    let in_total: f64 = s_in.iter().sum();
    if (out_total - in_total).abs() > 1e-9 * out_total.max(in_total) {
        return Err(ReconError::UnbalancedTotals { out_total, in_total });
    }
    Ok(out_total)
}

/// Gravity prescription, evaluated per pair on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEnt {
    s_out: Vec<f64>,
    s_in: Vec<f64>,
    total: f64,
}

impl MaxEnt {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            self.s_out[i] * self.s_in[j] / self.total
        }
    }

    /// Closed-form exponential rate `W_tot / (s_out_i s_in_j)`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.total / (self.s_out[i] * self.s_in[j])
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Prescription restricted to the edges of `t`.
    pub fn on_topology(&self, t: &Topology) -> Vec<f64> {
        t.edges().map(|(i, j)| self.weight(i, j)).collect()
    }
}

pub fn maxent_prescription(s_out: &[f64], s_in: &[f64]) -> Result<MaxEnt, ReconError> {
    if s_out.len() != s_in.len() {
        return Err(NetError::SizeMismatch { expected: s_out.len(), found: s_in.len() }.into());
    }
    let total = check_totals(s_out, s_in)?;
    Ok(MaxEnt { s_out: s_out.to_vec(), s_in: s_in.to_vec(), total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfOptions {
    /// Stop once `(sum|s_in - s_in*| + sum|s_out - s_out*|) / W_tot` is at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpfOptions {
    fn default() -> Self {
        IpfOptions { tol: 1e-8, max_iter: 10_000 }
    }
}

/// Balanced weights on the edges of the input topology.
#[derive(Debug, Clone, PartialEq)]
pub struct IpfOutcome {
    pub weights: Vec<f64>,
    /// Absolute L1 constraint error.
    pub l1: f64,
    /// `l1 / W_tot`.
    pub rel_l1: f64,
    /// Full (row then column) sweeps performed.
    pub iterations: usize,
    pub converged: bool,
}

fn l1_against(t: &Topology, w: &[f64], s_out: &[f64], s_in: &[f64]) -> f64 {
    let (cin, cout) = strengths_of(t, w);
    let a: f64 = cin.iter().zip(s_in).map(|(a, b)| (a - b).abs()).sum();
    let b: f64 = cout.iter().zip(s_out).map(|(a, b)| (a - b).abs()).sum();
    a + b
}

/// Rescales `init` on the support of `t` until row sums match `s_out` and
/// column sums match `s_in`.
///
/// Edges touching a node whose required marginal is zero are set to zero.
/// When the budget runs out, the best iterate is returned inside
/// [`ReconError::NonConvergence`].
pub fn ipf_balance(
    t: &Topology,
    s_out: &[f64],
    s_in: &[f64],
    init: &[f64],
    opts: IpfOptions,
) -> Result<IpfOutcome, ReconError> {
    let n = t.n_nodes();
    for len in [s_out.len(), s_in.len()] {
        if len != n {
            return Err(NetError::SizeMismatch { expected: n, found: len }.into());
        }
    }
    if init.len() != t.n_edges() {
        return Err(NetError::SizeMismatch { expected: t.n_edges(), found: init.len() }.into());
    }
    let total = check_totals(s_out, s_in)?;

    let mut w: Vec<f64> = Vec::with_capacity(init.len());
    for (e, &x) in init.iter().enumerate() {
        if !(x > 0.0 && x.is_finite()) {
            return Err(ReconError::InvalidInput(x));
        }
        let usable = s_out[t.src(e)] > 0.0 && s_in[t.dst(e)] > 0.0;
        w.push(if usable { x } else { 0.0 });
    }
    for i in 0..n {
        if s_out[i] > 0.0 && t.out_edges(i).all(|e| w[e] == 0.0) {
            return Err(ReconError::InfeasibleSupport { node: i, side: "out" });
        }
        if s_in[i] > 0.0 && t.in_edges(i).iter().all(|&e| w[e] == 0.0) {
            return Err(ReconError::InfeasibleSupport { node: i, side: "in" });
        }
    }
    if total == 0.0 {
        return Ok(IpfOutcome { weights: w, l1: 0.0, rel_l1: 0.0, iterations: 0, converged: true });
    }

    let mut best_w = w.clone();
    let (mut best_l1, mut best_rel) = (f64::NAN, f64::INFINITY);
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        for i in 0..n {
            let range = t.out_edges(i);
            let row: f64 = w[range.clone()].iter().sum();
            if row > 0.0 {
                let c = s_out[i] / row;
                w[range].iter_mut().for_each(|x| *x *= c);
            }
        }
        for j in 0..n {
            let col = t.in_edges(j);
            let sum: f64 = col.iter().map(|&e| w[e]).sum();
            if sum > 0.0 {
                let c = s_in[j] / sum;
                col.iter().for_each(|&e| w[e] *= c);
            }
        }
        let l1 = l1_against(t, &w, s_out, s_in);
        let rel = l1 / total;
        if rel <= opts.tol {
            return Ok(IpfOutcome { weights: w, l1, rel_l1: rel, iterations: iter, converged: true });
        }
        if rel < best_rel {
            best_w.copy_from_slice(&w);
            best_rel = rel;
            best_l1 = l1;
        }
    }
    if best_rel.is_infinite() {
        best_l1 = l1_against(t, &best_w, s_out, s_in);
        best_rel = best_l1 / total;
    }
    Err(ReconError::NonConvergence(Box::new(IpfOutcome {
        weights: best_w,
        l1: best_l1,
        rel_l1: best_rel,
        iterations,
        converged: false,
    })))
}

/// Which rate the confidence bands are evaluated at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSource {
    /// `1 / <W_ij>` of the balanced weights.
    #[default]
    Balanced,
    /// Closed-form `W_tot / (s_out_i s_in_j)`.
    MaxEnt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CremOptions {
    pub ipf: IpfOptions,
    pub q_low: f64,
    pub q_high: f64,
    pub lambda_source: LambdaSource,
}

impl Default for CremOptions {
    fn default() -> Self {
        CremOptions { ipf: IpfOptions::default(), q_low: 0.25, q_high: 0.25, lambda_source: LambdaSource::Balanced }
    }
}

/// Fitted exponential ensemble on a fixed topology.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Edges with positive expected weight.
    pub topology: Arc<Topology>,
    pub expected: Vec<f64>,
    pub lambda: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub l1: f64,
    pub rel_l1: f64,
    pub iterations: usize,
}

impl ReconstructionResult {
    /// Network of expected weights.
    pub fn expected_network(&self) -> WeightedNetwork {
        WeightedNetwork::from_topology(Arc::clone(&self.topology), self.expected.clone())
            .expect("expected weights are positive on the stored topology")
    }

    pub fn n_edges(&self) -> usize {
        self.expected.len()
    }
}

/// MaxEnt start, IPF balancing, then rates and confidence bands per edge.
pub fn fit_crem(t: &Topology, s_out: &[f64], s_in: &[f64], opts: CremOptions) -> Result<ReconstructionResult, ReconError> {
    weight_confidence_interval(1.0, opts.q_low, opts.q_high)?;
    let me = maxent_prescription(s_out, s_in)?;
    if t.n_nodes() != s_out.len() {
        return Err(NetError::SizeMismatch { expected: t.n_nodes(), found: s_out.len() }.into());
    }
    let init: Vec<f64> = t
        .edges()
        .map(|(i, j)| {
            let w = me.weight(i, j);
            if w > 0.0 {
                w
            } else {
                1.0
            }
        })
        .collect();
    let outcome = ipf_balance(t, s_out, s_in, &init, opts.ipf)?;

    let pairs: Vec<(usize, usize)> =
        t.edges().zip(&outcome.weights).filter(|(_, &w)| w > 0.0).map(|(p, _)| p).collect();
    let expected: Vec<f64> = outcome.weights.iter().copied().filter(|&w| w > 0.0).collect();
    let topology = Arc::new(Topology::from_sorted_unchecked(t.n_nodes(), &pairs, t.proxy()));

    let lambda: Vec<f64> = expected.iter().map(|w| 1.0 / w).collect();
    let ci_rate: Vec<f64> = match opts.lambda_source {
        LambdaSource::Balanced => lambda.clone(),
        LambdaSource::MaxEnt => pairs.iter().map(|&(i, j)| me.rate(i, j)).collect(),
    };
    let mut ci_low = Vec::with_capacity(expected.len());
    let mut ci_high = Vec::with_capacity(expected.len());
    for &rate in &ci_rate {
        let (lo, hi) = weight_confidence_interval(rate, opts.q_low, opts.q_high)?;
        ci_low.push(lo);
        ci_high.push(hi);
    }
    Ok(ReconstructionResult {
        topology,
        expected,
        lambda,
        ci_low,
        ci_high,
        l1: outcome.l1,
        rel_l1: outcome.rel_l1,
        iterations: outcome.iterations,
    })
}

/// Bounds `(w-, w+)` with `P(w- <= W <= w+) = q- + q+` for `W ~ Exp(lambda)`,
/// placed around the mean `1/lambda` (the mass below the mean is `1 - 1/e`).
pub fn weight_confidence_interval(lambda: f64, q_low: f64, q_high: f64) -> Result<(f64, f64), ReconError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ReconError::InvalidRate(lambda));
    }
    let valid = (0.0..=1.0 - E_INV).contains(&q_low) && (0.0..E_INV).contains(&q_high);
    if !valid {
        return Err(ReconError::InvalidConfidenceLevel { q_low, q_high });
    }
    Ok((-(E_INV + q_low).ln() / lambda, -(E_INV - q_high).ln() / lambda))
}

/// Edge weights of ensemble draw `index`: independent `Exp(lambda_ij)`.
pub fn sample_weights(r: &ReconstructionResult, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = phase_rng(mix_seed(seed, index), Phase::Ensemble);
    r.lambda
        .iter()
        .map(|&l| {
            let u: f64 = Open01.sample(&mut rng);
            -u.ln() / l
        })
        .collect()
}

/// `n_samples` independent networks drawn from the fitted ensemble.
pub fn sample_ensemble(r: &ReconstructionResult, n_samples: usize, seed: u64) -> Vec<WeightedNetwork> {
    (0..n_samples as u64)
        .map(|s| {
            WeightedNetwork::from_topology(Arc::clone(&r.topology), sample_weights(r, seed, s))
                .expect("exponential draws are positive")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxent_formula() {
        let me = maxent_prescription(&[2.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((me.weight(0, 1) - 4.0 / 3.0).abs() < 1e-15);
        let me = maxent_prescription(&[3.0; 4], &[3.0; 4]).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((me.weight(i, j) - 3.0 / 4.0).abs() < 1e-15);
            }
        }
        let me = maxent_prescription(&[2.0, 5.0, 1.0], &[4.0, 0.0, 4.0]).unwrap();
        for (i, s) in [2.0, 5.0, 1.0].iter().enumerate() {
            let row: f64 = (0..3).map(|j| me.weight(i, j)).sum();
            assert!((row - s).abs() < 1e-14);
        }
        assert!(matches!(maxent_prescription(&[1.0], &[2.0]), Err(ReconError::UnbalancedTotals { .. })));
    }

    #[test]
    fn forced_chain() {
        let t = Topology::new(2, &[(0, 1)], None).unwrap();
        let out = ipf_balance(&t, &[5.0, 0.0], &[0.0, 5.0], &[1.0], IpfOptions::default()).unwrap();
        assert_eq!(out.weights, vec![5.0]);
        assert!(out.converged);
    }

    #[test]
    fn complete_topology_is_maxent_after_one_sweep() {
        let n = 4;
        let t = Topology::complete(n);
        let s_out = [4.0, 1.0, 3.0, 2.0];
        let s_in = [2.0, 2.0, 5.0, 1.0];
        let me = maxent_prescription(&s_out, &s_in).unwrap();
        let r = fit_crem(&t, &s_out, &s_in, CremOptions::default()).unwrap();
        assert_eq!(r.iterations, 1);
        for (e, (i, j)) in r.topology.edges().enumerate() {
            assert!((r.expected[e] - me.weight(i, j)).abs() <= 1e-12 * me.weight(i, j));
        }
    }

    #[test]
    fn single_edge_rate() {
        let t = Topology::new(2, &[(0, 1)], None).unwrap();
        let r = fit_crem(&t, &[7.0, 0.0], &[0.0, 7.0], CremOptions::default()).unwrap();
        assert_eq!(r.expected, vec![7.0]);
        assert!((r.lambda[0] - 1.0 / 7.0).abs() < 1e-16);
    }

    #[test]
    fn infeasible_support() {
        let t = Topology::new(3, &[(0, 1)], None).unwrap();
        assert_eq!(
            ipf_balance(&t, &[1.0, 0.0, 1.0], &[0.0, 2.0, 0.0], &[1.0], IpfOptions::default()),
            Err(ReconError::InfeasibleSupport { node: 2, side: "out" })
        );
    }

    #[test]
    fn zero_marginal_edges_are_dropped() {
        let t = Topology::new(3, &[(0, 1), (0, 2), (2, 1)], None).unwrap();
        // node 2 neither buys nor sells
        let r = fit_crem(&t, &[3.0, 0.0, 0.0], &[0.0, 3.0, 0.0], CremOptions::default()).unwrap();
        assert_eq!(r.topology.edges().collect::<Vec<_>>(), vec![(0, 1)]);
        assert_eq!(r.expected, vec![3.0]);
    }

    #[test]
    fn non_convergence_reports_best_iterate() {
        // 0 sells only to 1 and 1 buys only from 0, so they must match; here they cannot.
        let t = Topology::new(4, &[(0, 1), (2, 1), (2, 3)], None).unwrap();
        let err = ipf_balance(&t, &[2.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 0.0, 2.0], &[1.0; 3], IpfOptions { tol: 1e-12, max_iter: 50 })
            .unwrap_err();
        match err {
            ReconError::NonConvergence(best) => {
                assert!(!best.converged);
                assert_eq!(best.weights.len(), 3);
                assert!(best.rel_l1 > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn confidence_interval_closed_form() {
        let (lo, hi) = weight_confidence_interval(1.0, 0.25, 0.25).unwrap();
        assert!((lo - 0.481_461_919_565_442_6).abs() < 1e-14, "{lo}");
        assert!((hi - 2.138_092_861_780_121).abs() < 1e-13, "{hi}");
        assert!(((-lo).exp() - (-hi).exp() - 0.5).abs() < 1e-15);
        let (lo2, hi2) = weight_confidence_interval(2.0, 0.25, 0.25).unwrap();
        assert_eq!((lo2, hi2), (lo / 2.0, hi / 2.0));
        assert!(lo < 1.0 && 1.0 < hi);
    }

    #[test]
    fn confidence_interval_rejects_bad_levels() {
        for (a, b) in [(-0.1, 0.25), (0.7, 0.25), (0.25, 0.37), (0.25, -1.0)] {
            assert!(matches!(
                weight_confidence_interval(1.0, a, b),
                Err(ReconError::InvalidConfidenceLevel { .. })
            ));
        }
        assert!(matches!(weight_confidence_interval(0.0, 0.25, 0.25), Err(ReconError::InvalidRate(_))));
    }

    #[test]
    fn maxent_lambda_source_changes_only_bounds() {
        let t = Topology::new(3, &[(0, 1), (1, 2), (2, 0), (0, 2)], None).unwrap();
        let s_out = [3.0, 1.0, 2.0];
        let s_in = [2.0, 1.0, 3.0];
        let a = fit_crem(&t, &s_out, &s_in, CremOptions::default()).unwrap();
        let b = fit_crem(&t, &s_out, &s_in, CremOptions { lambda_source: LambdaSource::MaxEnt, ..Default::default() })
            .unwrap();
        assert_eq!(a.expected, b.expected);
        assert_eq!(a.lambda, b.lambda);
        let me = maxent_prescription(&s_out, &s_in).unwrap();
        let (lo, _) = weight_confidence_interval(me.rate(0, 1), 0.25, 0.25).unwrap();
        assert_eq!(b.ci_low[0], lo);
    }

    #[test]
    fn ensemble_is_seeded() {
        let t = Topology::new(2, &[(0, 1), (1, 0)], None).unwrap();
        let r = fit_crem(&t, &[1.0, 2.0], &[2.0, 1.0], CremOptions::default()).unwrap();
        let a = sample_ensemble(&r, 3, 5);
        assert_eq!(a, sample_ensemble(&r, 3, 5));
        assert_ne!(a, sample_ensemble(&r, 3, 6));
        assert_ne!(a[0], a[1]);
    }
}
