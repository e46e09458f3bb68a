//! Simulated productivity shocks and the aggregate volatility they induce
//! through the influence vector.
//!
//! Shocks and volatilities share one unit: with the default `sigma = 6`
//! meaning six percent, volatilities come out in percent as well.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{phase_rng, Phase};

pub const DEFAULT_SIGMA: f64 = 6.0;
pub const DEFAULT_PERIODS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShockError {
    #[error("standard deviation {0} must be positive and finite")]
    InvalidSigma(f64),
    #[error("at least two periods are needed, got {0}")]
    TooFewPeriods(usize),
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("node {0} appears in more than one part")]
    OverlappingPartition(usize),
    #[error("node {0} is not covered by the partition")]
    IncompletePartition(usize),
    #[error("node index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("the excluded panel is empty")]
    EmptyExcludedPanel,
}

/// How the proxy's shock series is formed from the excluded firms' panel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProxyShockRule {
    /// Series of the excluded firm whose sample variance is the median one.
    #[default]
    MedianVarianceFirm,
    /// Cross-sectional median of the excluded firms in each period.
    CrossSectionMedian,
}

/// Growth-rate shocks, one series per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockPanel {
    n_nodes: usize,
    n_periods: usize,
    data: Vec<f64>,
    proxy: Option<usize>,
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl ShockPanel {
    /// Panel from explicit series (all of the same length, at least two).
    pub fn from_series(series: &[Vec<f64>], proxy: Option<usize>) -> Result<Self, ShockError> {
        let n_periods = series.first().map_or(0, Vec::len);
        if n_periods < 2 {
            return Err(ShockError::TooFewPeriods(n_periods));
        }
        for s in series {
            if s.len() != n_periods {
                return Err(ShockError::SizeMismatch { expected: n_periods, found: s.len() });
            }
        }
        if let Some(p) = proxy {
            if p >= series.len() {
                return Err(ShockError::IndexOutOfRange(p));
            }
        }
        Ok(ShockPanel { n_nodes: series.len(), n_periods, data: series.concat(), proxy })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn proxy(&self) -> Option<usize> {
        self.proxy
    }

    pub fn series(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_periods..(i + 1) * self.n_periods]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Sample variance (n - 1 denominator) of node `i`'s series.
    pub fn variance(&self, i: usize) -> f64 {
        sample_variance(self.series(i))
    }

    pub fn variances(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.variance(i)).collect()
    }

    /// Series of the listed nodes, in order. The result has no proxy.
    pub fn subset(&self, ids: &[usize]) -> Result<ShockPanel, ShockError> {
        let mut data = Vec::with_capacity(ids.len() * self.n_periods);
        for &i in ids {
            if i >= self.n_nodes {
                return Err(ShockError::IndexOutOfRange(i));
            }
            data.extend_from_slice(self.series(i));
        }
        Ok(ShockPanel { n_nodes: ids.len(), n_periods: self.n_periods, data, proxy: None })
    }

    /// This panel with a proxy series built from `excluded` appended last.
    pub fn with_proxy(&self, excluded: &ShockPanel, rule: ProxyShockRule) -> Result<ShockPanel, ShockError> {
        if excluded.n_periods != self.n_periods {
            return Err(ShockError::SizeMismatch { expected: self.n_periods, found: excluded.n_periods });
        }
        if excluded.n_nodes == 0 {
            return Err(ShockError::EmptyExcludedPanel);
        }
        let series: Vec<f64> = match rule {
            ProxyShockRule::CrossSectionMedian => (0..self.n_periods)
                .map(|t| {
                    let mut col: Vec<f64> = (0..excluded.n_nodes).map(|i| excluded.series(i)[t]).collect();
                    median(&mut col)
                })
                .collect(),
            ProxyShockRule::MedianVarianceFirm => {
                let mut by_var: Vec<(f64, usize)> =
                    (0..excluded.n_nodes).map(|i| (excluded.variance(i), i)).collect();
                by_var.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let (_, pick) = by_var[(by_var.len() - 1) / 2];
                excluded.series(pick).to_vec()
            }
        };
        let mut data = self.data.clone();
        data.extend(series);
        Ok(ShockPanel { n_nodes: self.n_nodes + 1, n_periods: self.n_periods, data, proxy: Some(self.n_nodes) })
    }
}

/// I.i.d. `N(0, sigma^2)` shocks for `n_firms` firms over `n_periods` periods.
///
/// When `excluded` is given, a proxy series built from that panel is
/// appended as the last node.
pub fn simulate_tfp(
    n_firms: usize,
    n_periods: usize,
    sigma: f64,
    seed: u64,
    excluded: Option<(&ShockPanel, ProxyShockRule)>,
) -> Result<ShockPanel, ShockError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ShockError::InvalidSigma(sigma));
    }
    if n_periods < 2 {
        return Err(ShockError::TooFewPeriods(n_periods));
    }
    let normal = Normal::new(0.0, sigma).map_err(|_| ShockError::InvalidSigma(sigma))?;
    let mut rng = phase_rng(seed, Phase::Shocks);
    let data: Vec<f64> = (0..n_firms * n_periods).map(|_| normal.sample(&mut rng)).collect();
    let panel = ShockPanel { n_nodes: n_firms, n_periods, data, proxy: None };
    match excluded {
        Some((ex, rule)) => panel.with_proxy(ex, rule),
        None => Ok(panel),
    }
}

/// `sqrt(sum_i Var_i v_i^2)`, skipping the proxy unless `include_proxy`.
pub fn aggregate_volatility(panel: &ShockPanel, v: &[f64], include_proxy: bool) -> Result<f64, ShockError> {
    if v.len() != panel.n_nodes {
        return Err(ShockError::SizeMismatch { expected: panel.n_nodes, found: v.len() });
    }
    let total: f64 = (0..panel.n_nodes)
        .filter(|&i| include_proxy || panel.proxy != Some(i))
        .map(|i| panel.variance(i) * v[i] * v[i])
        .sum();
    Ok(total.sqrt())
}

/// Share of `sum Var_i v_i^2` carried by each part of a partition of all nodes.
pub fn variance_shares(panel: &ShockPanel, v: &[f64], partition: &[Vec<usize>]) -> Result<Vec<f64>, ShockError> {
    let n = panel.n_nodes;
    if v.len() != n {
        return Err(ShockError::SizeMismatch { expected: n, found: v.len() });
    }
    let mut seen = vec![false; n];
    for &i in partition.iter().flatten() {
        if i >= n {
            return Err(ShockError::IndexOutOfRange(i));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(ShockError::OverlappingPartition(i));
        }
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(ShockError::IncompletePartition(i));
    }
    let contrib: Vec<f64> = (0..n).map(|i| panel.variance(i) * v[i] * v[i]).collect();
    let total: f64 = contrib.iter().sum();
    Ok(partition.iter().map(|part| part.iter().map(|&i| contrib[i]).sum::<f64>() / total).collect())
}
