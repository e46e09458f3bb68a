//! Statistical indicators for comparing a reconstruction with the network
//! it was built from, plus CCDFs and continuous power-law tail fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::Topology;

/// Minimum tail size for a reported power-law fit.
pub const MIN_TAIL: usize = 50;
/// Upper bound on the number of candidate `xmin` values examined by the KS scan.
pub const MAX_XMIN_CANDIDATES: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("empirical values span no range")]
    DegenerateRange,
    #[error("zero vector")]
    ZeroVector,
    #[error("edge sets differ: {0} weights against {1} bounds")]
    EdgeSetMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("tail has {0} points, fewer than {MIN_TAIL}")]
    InsufficientTail(usize),
    #[error("invalid xmin {0}")]
    InvalidXmin(f64),
}

fn same_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricsError::SizeMismatch { expected: a, found: b })
    }
}

/// `sum |s_in - s_in*| + sum |s_out - s_out*|`.
pub fn l1_error(s_in: &[f64], s_out: &[f64], s_in_target: &[f64], s_out_target: &[f64]) -> Result<f64, MetricsError> {
    same_len(s_in_target.len(), s_in.len())?;
    same_len(s_out_target.len(), s_out.len())?;
    let a: f64 = s_in.iter().zip(s_in_target).map(|(x, y)| (x - y).abs()).sum();
    let b: f64 = s_out.iter().zip(s_out_target).map(|(x, y)| (x - y).abs()).sum();
    Ok(a + b)
}

/// RMSE, MAE and MedAE divided by the range `phi` of the empirical values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedErrors {
    pub rmse: f64,
    pub mae: f64,
    pub medae: f64,
    pub phi: f64,
}

/// Exact median; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `max - min` over the nonzero entries.
pub fn nonzero_range(values: &[f64]) -> Option<f64> {
    let mut it = values.iter().copied().filter(|&v| v != 0.0);
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Some(hi - lo)
}

/// Errors of `x` against empirical `x_star`. Without an override, `phi` is
/// the range of the nonzero empirical values.
pub fn normalized_errors(x: &[f64], x_star: &[f64], phi: Option<f64>) -> Result<NormalizedErrors, MetricsError> {
    same_len(x_star.len(), x.len())?;
    if x.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let phi = match phi {
        Some(p) => p,
        None => nonzero_range(x_star).ok_or(MetricsError::DegenerateRange)?,
    };
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(MetricsError::DegenerateRange);
    }
    let abs: Vec<f64> = x.iter().zip(x_star).map(|(a, b)| (a - b).abs()).collect();
    let m = abs.len() as f64;
    let rmse = (abs.iter().map(|d| d * d).sum::<f64>() / m).sqrt() / phi;
    let mae = abs.iter().sum::<f64>() / m / phi;
    let medae = median(&abs).expect("nonempty") / phi;
    Ok(NormalizedErrors { rmse, mae, medae, phi })
}

pub fn cosine_similarity(x: &[f64], x_star: &[f64]) -> Result<f64, MetricsError> {
    same_len(x_star.len(), x.len())?;
    let dot: f64 = x.iter().zip(x_star).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = x_star.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok(dot / (nx * ny))
}

/// Fraction of empirical weights inside their `[low, high]` band.
pub fn ci_coverage(empirical: &[f64], low: &[f64], high: &[f64]) -> Result<f64, MetricsError> {
    if empirical.len() != low.len() || low.len() != high.len() {
        return Err(MetricsError::EdgeSetMismatch(empirical.len(), low.len().min(high.len())));
    }
    if empirical.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = empirical.iter().zip(low).zip(high).filter(|((w, lo), hi)| **lo <= **w && **w <= **hi).count();
    Ok(hits as f64 / empirical.len() as f64)
}

/// Values of two edge-indexed vectors aligned over the union of both edge
/// sets, in canonical `(src, dst)` order; absent entries read as zero.
/// With `skip_proxy`, edges touching either topology's proxy are left out.
pub fn align_edge_values(ta: &Topology, va: &[f64], tb: &Topology, vb: &[f64], skip_proxy: bool) -> (Vec<f64>, Vec<f64>) {
    let skip = |s: usize, d: usize| skip_proxy && (ta.is_proxy(s) || ta.is_proxy(d) || tb.is_proxy(s) || tb.is_proxy(d));
    let ea: Vec<(usize, usize)> = ta.edges().collect();
    let eb: Vec<(usize, usize)> = tb.edges().collect();
    let (mut i, mut j) = (0, 0);
    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    while i < ea.len() || j < eb.len() {
        let (key, a, b) = match (ea.get(i), eb.get(j)) {
            (Some(&p), Some(&q)) if p == q => {
                i += 1;
                j += 1;
                (p, va[i - 1], vb[j - 1])
            }
            (Some(&p), Some(&q)) if p < q => {
                i += 1;
                (p, va[i - 1], 0.0)
            }
            (Some(_), Some(&q)) => {
                j += 1;
                (q, 0.0, vb[j - 1])
            }
            (Some(&p), None) => {
                i += 1;
                (p, va[i - 1], 0.0)
            }
            (None, Some(&q)) => {
                j += 1;
                (q, 0.0, vb[j - 1])
            }
            (None, None) => unreachable!(),
        };
        if !skip(key.0, key.1) {
            xa.push(a);
            xb.push(b);
        }
    }
    (xa, xb)
}

/// `(x, P(X >= x))` at each distinct sample value, ascending in `x`.
pub fn ccdf(samples: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut v = samples.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out = Vec::new();
    for (k, &x) in v.iter().enumerate() {
        if k == 0 || x != v[k - 1] {
            out.push((x, (v.len() - k) as f64 / n));
        }
    }
    Ok(out)
}

/// Continuous power-law fit of the upper tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    /// Density exponent: `p(x) ~ x^-gamma`.
    pub gamma: f64,
    pub xmin: f64,
    pub n_tail: usize,
    pub ks_distance: f64,
}

impl PowerLawFit {
    /// Exponent of the complementary CDF, `gamma - 1`.
    pub fn tail_index(&self) -> f64 {
        self.gamma - 1.0
    }
}

/// Closed-form estimator `1 + n / sum ln(x_i / xmin)` over the samples `>= xmin`.
pub fn pareto_mle(samples: &[f64], xmin: f64) -> Option<f64> {
    let (n, s) = samples
        .iter()
        .filter(|&&x| x >= xmin)
        .fold((0usize, 0.0), |(n, s), &x| (n + 1, s + (x / xmin).ln()));
    (n > 0 && s > 0.0).then(|| 1.0 + n as f64 / s)
}

/// Fit on the sorted tail `tail` (ascending, all `>= xmin`). The KS scan
/// stops once the distance reaches `ks_bound`, since such a fit cannot win.
fn fit_tail(tail: &[f64], xmin: f64, ks_bound: f64) -> Option<PowerLawFit> {
    let n = tail.len();
    let s: f64 = tail.iter().map(|&x| (x / xmin).ln()).sum();
    if !(s > 0.0) {
        return None;
    }
    let gamma = 1.0 + n as f64 / s;
    let a = gamma - 1.0;
    let nf = n as f64;
    let mut ks: f64 = 0.0;
    for (k, &x) in tail.iter().enumerate() {
        let model = 1.0 - (x / xmin).powf(-a);
        ks = ks.max((model - k as f64 / nf).abs()).max(((k + 1) as f64 / nf - model).abs());
        if ks >= ks_bound {
            break;
        }
    }
    Some(PowerLawFit { gamma, xmin, n_tail: n, ks_distance: ks })
}

/// Continuous maximum-likelihood power-law fit.
///
/// Without `xmin`, candidates are the distinct positive sample values up to
/// the 95th percentile that leave at least [`MIN_TAIL`] points in the tail;
/// the one whose fit has the smallest KS distance wins (ties: smaller
/// `xmin`). Beyond [`MAX_XMIN_CANDIDATES`] candidates, an evenly spaced
/// subset in rank order is scanned.
pub fn powerlaw_fit(samples: &[f64], xmin: Option<f64>) -> Result<PowerLawFit, MetricsError> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
    if v.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    v.sort_unstable_by(f64::total_cmp);

    if let Some(xm) = xmin {
        if !(xm > 0.0 && xm.is_finite()) {
            return Err(MetricsError::InvalidXmin(xm));
        }
        let start = v.partition_point(|&x| x < xm);
        let n_tail = v.len() - start;
        if n_tail < MIN_TAIL {
            return Err(MetricsError::InsufficientTail(n_tail));
        }
        return fit_tail(&v[start..], xm, f64::INFINITY).ok_or(MetricsError::InsufficientTail(0));
    }

    let cap = v[((v.len() - 1) as f64 * 0.95).floor() as usize];
    let mut starts: Vec<usize> = (0..v.len())
        .filter(|&k| (k == 0 || v[k] != v[k - 1]) && v[k] <= cap && v.len() - k >= MIN_TAIL)
        .collect();
    if starts.is_empty() {
        return Err(MetricsError::InsufficientTail(v.len()));
    }
    if starts.len() > MAX_XMIN_CANDIDATES {
        let step = starts.len() as f64 / MAX_XMIN_CANDIDATES as f64;
        starts = (0..MAX_XMIN_CANDIDATES).map(|k| starts[(k as f64 * step) as usize]).collect();
    }
    let mut best: Option<PowerLawFit> = None;
    for k in starts {
        let bound = best.map_or(f64::INFINITY, |b| b.ks_distance);
        if let Some(fit) = fit_tail(&v[k..], v[k], bound) {
            if best.is_none_or(|b| fit.ks_distance < b.ks_distance) {
                best = Some(fit);
            }
        }
    }
    best.ok_or(MetricsError::InsufficientTail(0))
}

/// Cosine and, optionally, range-normalized errors for one quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cosine: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub errors: Option<NormalizedErrors>,
}

impl Comparison {
    pub fn new(x: &[f64], x_star: &[f64], with_errors: bool) -> Result<Self, MetricsError> {
        let cosine = cosine_similarity(x, x_star)?;
        let errors = if with_errors { Some(normalized_errors(x, x_star, None)?) } else { None };
        Ok(Comparison { cosine, errors })
    }
}

/// Aggregate volatility of the empirical and reconstructed economies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolatilityReport {
    pub empirical_vol: f64,
    pub recon_vol_with_proxy: f64,
    pub recon_vol_no_proxy: f64,
    pub benchmark_vol_with_proxy: f64,
    pub benchmark_vol_no_proxy: f64,
    /// Variance shares `[firms, proxy]` of the reconstruction.
    pub shares: [f64; 2],
}

/// Every indicator for one empirical/reconstructed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub replicate: usize,
    pub seed: u64,
    pub unknown_fraction: Option<f64>,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub mean_degree: f64,
    pub l1: f64,
    pub rel_l1: f64,
    pub ipf_iterations: usize,
    pub weights: Comparison,
    pub technical: Comparison,
    pub allocation: Comparison,
    pub output_multipliers: Comparison,
    pub influence: Comparison,
    pub ci_coverage: f64,
    pub proxy_expenditure_share: f64,
    pub proxy_sales_share: f64,
    pub powerlaw_empirical: Option<PowerLawFit>,
    pub powerlaw_reconstructed: Option<PowerLawFit>,
    pub volatility: VolatilityReport,
}

impl MetricsReport {
    /// Checks the value ranges every report must satisfy.
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && (lo - 1e-12..=hi + 1e-12).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} = {v} outside [{lo}, {hi}]"))
            }
        };
        let nonneg = |name: &str, v: f64| unit(name, v, 0.0, f64::MAX);
        nonneg("l1", self.l1)?;
        nonneg("rel_l1", self.rel_l1)?;
        for (name, c) in [
            ("weights", &self.weights),
            ("technical", &self.technical),
            ("allocation", &self.allocation),
            ("output_multipliers", &self.output_multipliers),
            ("influence", &self.influence),
        ] {
            unit(&format!("{name}.cosine"), c.cosine, -1.0, 1.0)?;
            if let Some(e) = c.errors {
                nonneg(&format!("{name}.rmse"), e.rmse)?;
                nonneg(&format!("{name}.mae"), e.mae)?;
                nonneg(&format!("{name}.medae"), e.medae)?;
                nonneg(&format!("{name}.phi"), e.phi)?;
            }
        }
        unit("ci_coverage", self.ci_coverage, 0.0, 1.0)?;
        unit("proxy_expenditure_share", self.proxy_expenditure_share, 0.0, 1.0)?;
        unit("proxy_sales_share", self.proxy_sales_share, 0.0, 1.0)?;
        for fit in [self.powerlaw_empirical, self.powerlaw_reconstructed].into_iter().flatten() {
            if !(fit.gamma > 1.0 && fit.gamma.is_finite()) {
                return Err(format!("power-law exponent {} must exceed 1", fit.gamma));
            }
        }
        let v = &self.volatility;
        for (name, x) in [
            ("empirical_vol", v.empirical_vol),
            ("recon_vol_with_proxy", v.recon_vol_with_proxy),
            ("recon_vol_no_proxy", v.recon_vol_no_proxy),
            ("benchmark_vol_with_proxy", v.benchmark_vol_with_proxy),
            ("benchmark_vol_no_proxy", v.benchmark_vol_no_proxy),
        ] {
            nonneg(name, x)?;
        }
        unit("shares[0]", v.shares[0], 0.0, 1.0)?;
        unit("shares[1]", v.shares[1], 0.0, 1.0)?;
        if (v.shares[0] + v.shares[1] - 1.0).abs() > 1e-9 {
            return Err(format!("variance shares sum to {}", v.shares[0] + v.shares[1]));
        }
        Ok(())
    }
}
