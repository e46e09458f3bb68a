//! Synthetic ground-truth economies.
//!
//! Out-degrees follow a discrete Pareto law rescaled to the requested mean
//! degree. Customers are attached without replacement with probability
//! proportional to a fitness `k_out^coupling`, so large suppliers also tend
//! to be large buyers. Edge weights are Pareto draws scaled by
//! `(k_i k_j / <k>^2)^weight_size_coupling`, and node accounts are
//! completed from drawn value-added and final-demand ratios so that both
//! accounting identities hold by construction.
//!
//! Tail exponents here are tail indices `a` of `P(X >= x) ~ x^-a`. The
//! density exponent estimated by [`crate::metrics::powerlaw_fit`] is `a + 1`.

use std::collections::HashSet;

use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{NetError, NodeAccounts, WeightedNetwork};
use crate::rng::{phase_rng, Phase};

/// Sector index of a firm.
pub type SectorId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
    #[error("node {0} has no sector label")]
    UnlabeledNode(usize),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_firms: usize,
    pub n_sectors: usize,
    pub target_mean_degree: f64,
    /// Tail index of the edge-weight distribution.
    pub weight_tail_exponent: f64,
    /// Tail index of the out-degree distribution.
    pub degree_tail_exponent: f64,
    pub value_added_ratio_range: (f64, f64),
    pub final_demand_ratio_range: (f64, f64),
    /// Exponent linking a firm's out-degree to its attractiveness as a customer.
    pub fitness_coupling: f64,
    /// Exponent of the `(k_i k_j / <k>^2)` factor scaling the weight of `i -> j`.
    pub weight_size_coupling: f64,
    /// Smallest edge weight.
    pub weight_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_firms: 85_000,
            n_sectors: 20,
            target_mean_degree: 40.5,
            weight_tail_exponent: 1.2,
            degree_tail_exponent: 1.5,
            value_added_ratio_range: (0.2, 0.6),
            final_demand_ratio_range: (0.1, 0.6),
            fitness_coupling: 1.0,
            weight_size_coupling: 1.0,
            weight_scale: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InfeasibleConfig(msg));
        if self.n_firms < 2 {
            return bad(format!("n_firms = {} < 2", self.n_firms));
        }
        if self.n_sectors == 0 {
            return bad("n_sectors must be positive".into());
        }
        if !(self.target_mean_degree > 0.0 && self.target_mean_degree < (self.n_firms - 1) as f64) {
            return bad(format!(
                "target mean degree {} must lie in (0, n_firms - 1 = {})",
                self.target_mean_degree,
                self.n_firms - 1
            ));
        }
        for (name, a) in [("weight", self.weight_tail_exponent), ("degree", self.degree_tail_exponent)] {
            if !(a > 1.0 && a.is_finite()) {
                return bad(format!("{name} tail exponent {a} must exceed 1"));
            }
        }
        for (name, (lo, hi)) in [
            ("value_added_ratio_range", self.value_added_ratio_range),
            ("final_demand_ratio_range", self.final_demand_ratio_range),
        ] {
            if !(0.0 < lo && lo <= hi && hi < 1.0) {
                return bad(format!("{name} ({lo}, {hi}) must lie inside (0, 1)"));
            }
        }
        if !(self.fitness_coupling >= 0.0 && self.fitness_coupling.is_finite()) {
            return bad(format!("fitness_coupling {} must be non-negative", self.fitness_coupling));
        }
        if !(self.weight_size_coupling >= 0.0 && self.weight_size_coupling.is_finite()) {
            return bad(format!("weight_size_coupling {} must be non-negative", self.weight_size_coupling));
        }
        if !(self.weight_scale > 0.0 && self.weight_scale.is_finite()) {
            return bad(format!("weight_scale {} must be positive", self.weight_scale));
        }
        Ok(())
    }
}

/// A generated economy.
#[derive(Debug, Clone, PartialEq)]
pub struct Economy {
    pub network: WeightedNetwork,
    pub accounts: NodeAccounts,
    pub sectors: Vec<SectorId>,
}

fn open01(rng: &mut ChaCha8Rng) -> f64 {
    Open01.sample(rng)
}

fn draw_out_degrees(cfg: &SynthConfig) -> Vec<usize> {
    let n = cfg.n_firms;
    let cap = (n - 1) as f64;
    let mut rng = phase_rng(cfg.seed, Phase::Degrees);
    let base: Vec<f64> = (0..n).map(|_| open01(&mut rng).powf(-1.0 / cfg.degree_tail_exponent)).collect();
    let degree_at = |scale: f64, b: f64| (scale * b).floor().clamp(1.0, cap);
    let total = |scale: f64| base.iter().map(|&b| degree_at(scale, b)).sum::<f64>();
    let target = (cfg.target_mean_degree * n as f64).round().max(n as f64);

    let (mut lo, mut hi) = (0.0, 1.0);
    while total(hi) < target && hi < 1e18 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut k: Vec<usize> = base.iter().map(|&b| degree_at(hi, b) as usize).collect();

    // Bisection leaves a small excess from ties at the floor boundary; remove it
    // from randomly chosen nodes so the edge count is exact.
    let target = target as usize;
    let mut excess = k.iter().sum::<usize>().saturating_sub(target);
    while excess > 0 {
        let i = rng.random_range(0..n);
        if k[i] > 1 {
            k[i] -= 1;
            excess -= 1;
        }
    }
    k
}

fn attach_customers(
    node: usize,
    k: usize,
    fitness: &[f64],
    alias: &WeightedAliasIndex<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = fitness.len();
    if k == n - 1 {
        return (0..n).filter(|&j| j != node).collect();
    }
    if k <= n / 4 {
        let mut chosen = HashSet::with_capacity(2 * k);
        let mut out = Vec::with_capacity(k);
        let mut attempts = 0usize;
        let budget = 8 * k + 64;
        while out.len() < k && attempts < budget {
            attempts += 1;
            let j = alias.sample(rng);
            if j != node && chosen.insert(j) {
                out.push(j);
            }
        }
        if out.len() == k {
            return out;
        }
    }
    // Weighted sampling without replacement through exponential keys.
    let mut keyed: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != node)
        .map(|j| (-open01(rng).ln() / fitness[j], j))
        .collect();
    keyed.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.truncate(k);
    keyed.into_iter().map(|(_, j)| j).collect()
}

/// Draws a ground-truth economy from `cfg`.
pub fn generate_ground_truth(cfg: &SynthConfig) -> Result<Economy, SynthError> {
    cfg.validate()?;
    let n = cfg.n_firms;
    let k_out = draw_out_degrees(cfg);

    let fitness: Vec<f64> = k_out.iter().map(|&k| (k as f64).powf(cfg.fitness_coupling)).collect();
    let alias = WeightedAliasIndex::new(fitness.clone())
        .map_err(|e| SynthError::InfeasibleConfig(format!("fitness table: {e}")))?;
    let mut rng = phase_rng(cfg.seed, Phase::Attachments);
    let mut pairs = Vec::with_capacity(k_out.iter().sum());
    for (i, &k) in k_out.iter().enumerate() {
        let mut customers = attach_customers(i, k, &fitness, &alias, &mut rng);
        customers.sort_unstable();
        pairs.extend(customers.into_iter().map(|j| (i, j)));
    }

    let mut rng = phase_rng(cfg.seed, Phase::Weights);
    let inv = -1.0 / cfg.weight_tail_exponent;
    let mean_k = k_out.iter().sum::<usize>() as f64 / n as f64;
    let size = |i: usize| k_out[i] as f64 / mean_k;
    let edges: Vec<(usize, usize, f64)> = pairs
        .into_iter()
        .map(|(i, j)| {
            let w = cfg.weight_scale * open01(&mut rng).powf(inv);
            (i, j, w * (size(i) * size(j)).powf(cfg.weight_size_coupling))
        })
        .collect();
    let network = WeightedNetwork::new(n, &edges, None)?;

    let mut rng = phase_rng(cfg.seed, Phase::Sectors);
    let sectors: Vec<SectorId> = (0..n).map(|_| rng.random_range(0..cfg.n_sectors as SectorId)).collect();

    let mut rng = phase_rng(cfg.seed, Phase::Ratios);
    let mut centre = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..cfg.n_sectors).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
    };
    let va_centre = centre(cfg.value_added_ratio_range);
    let fd_centre = centre(cfg.final_demand_ratio_range);
    let jitter = |rng: &mut ChaCha8Rng, c: f64, (lo, hi): (f64, f64)| {
        (c + 0.2 * (hi - lo) * (rng.random::<f64>() - 0.5)).clamp(lo, hi)
    };

    let (s_in, s_out) = network.strengths();
    let mut value_added = Vec::with_capacity(n);
    let mut final_demand = Vec::with_capacity(n);
    for i in 0..n {
        let s = sectors[i] as usize;
        let vr = jitter(&mut rng, va_centre[s], cfg.value_added_ratio_range);
        let fr = jitter(&mut rng, fd_centre[s], cfg.final_demand_ratio_range);
        let q = (s_in[i] / (1.0 - vr)).max(s_out[i] / (1.0 - fr));
        value_added.push(q - s_in[i]);
        final_demand.push(q - s_out[i]);
    }
    let accounts = NodeAccounts::new(s_in, s_out, value_added, final_demand)?;
    Ok(Economy { network, accounts, sectors })
}

/// Aggregates of one sector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SectorAggregates {
    /// Gross output (sales).
    pub q: f64,
    /// Intermediate expenditure.
    pub x: f64,
    /// Intermediate sales.
    pub d: f64,
    /// Value added.
    pub y: f64,
    /// Final demand.
    pub f: f64,
}

impl SectorAggregates {
    /// Value added per unit of intermediate expenditure.
    pub fn value_added_ratio(&self) -> Option<f64> {
        (self.x > 0.0).then(|| self.y / self.x)
    }

    /// Final demand per unit of gross output.
    pub fn final_demand_share(&self) -> Option<f64> {
        (self.q > 0.0).then(|| self.f / self.q)
    }
}

/// Sector aggregates indexed by [`SectorId`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SectorTable {
    pub rows: Vec<SectorAggregates>,
}

impl SectorTable {
    pub fn get(&self, s: SectorId) -> Option<&SectorAggregates> {
        self.rows.get(s as usize)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Sums member-firm quantities per sector. The proxy node, if any, is skipped.
pub fn derive_sector_table(
    net: &WeightedNetwork,
    acc: &NodeAccounts,
    labels: &[SectorId],
) -> Result<SectorTable, SynthError> {
    let n_firms = net.topology().n_firms();
    if acc.len() != net.n_nodes() {
        return Err(NetError::SizeMismatch { expected: net.n_nodes(), found: acc.len() }.into());
    }
    if labels.len() < n_firms {
        return Err(SynthError::UnlabeledNode(labels.len()));
    }
    let n_sectors = labels[..n_firms].iter().map(|&s| s as usize + 1).max().unwrap_or(0);
    let mut rows = vec![SectorAggregates::default(); n_sectors];
    for i in 0..n_firms {
        let row = &mut rows[labels[i] as usize];
        row.x += acc.s_in[i];
        row.d += acc.s_out[i];
        row.y += acc.value_added[i];
        row.f += acc.final_demand[i];
    }
    for row in &mut rows {
        row.q = row.d + row.f;
    }
    Ok(SectorTable { rows })
}
