//! Construction of test networks from a ground-truth economy: top-firm
//! selection, weight-biased link deletion, aggregation of everything left
//! out into a proxy node, and imputation of value added and final demand
//! from sector ratios.

use std::sync::Arc;

use rand::distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{FirmId, NetError, NodeAccounts, Topology, WeightedNetwork};
use crate::rng::{mix_seed, phase_rng, Phase};
use crate::synth::{SectorId, SectorTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("selection is empty")]
    EmptySelection,
    #[error("target of {target} edges exceeds the {available} available")]
    TargetExceedsEdges { target: usize, available: usize },
    #[error("sector {sector} has a zero {what} denominator")]
    ZeroSectorDenominator { sector: SectorId, what: &'static str },
    #[error("sector {0} missing from the sector table")]
    UnknownSector(SectorId),
    #[error("kept edge {src} -> {dst} is not an edge between kept firms")]
    InvalidKeptEdge { src: usize, dst: usize },
    #[error("node {0} has no sector label")]
    UnlabeledNode(usize),
    #[error("invalid fraction {0}")]
    InvalidFraction(f64),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Replication plan for building trimmed test networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPlan {
    pub n_keep: usize,
    pub target_mean_degree: f64,
    pub n_replicates: usize,
    pub seed: u64,
}

impl Default for TrimPlan {
    fn default() -> Self {
        TrimPlan { n_keep: 5_440, target_mean_degree: 2.9, n_replicates: 50, seed: 0 }
    }
}

impl TrimPlan {
    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        mix_seed(self.seed, replicate as u64)
    }
}

/// Ids of the `n_keep` largest firms by out-strength (ties by ascending id),
/// minus those without suppliers inside the selection. Sorted ascending.
pub fn select_top_firms(net: &WeightedNetwork, acc: &NodeAccounts, n_keep: usize) -> Result<Vec<usize>, SamplingError> {
    let n_firms = net.topology().n_firms();
    if acc.len() != net.n_nodes() {
        return Err(NetError::SizeMismatch { expected: net.n_nodes(), found: acc.len() }.into());
    }
    let mut order: Vec<usize> = (0..n_firms).collect();
    order.sort_by(|&a, &b| acc.s_out[b].total_cmp(&acc.s_out[a]).then(a.cmp(&b)));
    order.truncate(n_keep.min(n_firms));

    let mut selected = vec![false; net.n_nodes()];
    for &i in &order {
        selected[i] = true;
    }
    let t = net.topology();
    let w = net.weights();
    let mut kept: Vec<usize> = order
        .into_iter()
        .filter(|&j| t.in_edges(j).iter().any(|&e| selected[t.src(e)] && w[e] > 0.0))
        .collect();
    if kept.is_empty() {
        return Err(SamplingError::EmptySelection);
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Subnetwork induced by `kept` (sorted, unique), relabelled `0..kept.len()`.
pub fn induced_subnetwork(net: &WeightedNetwork, kept: &[usize]) -> Result<WeightedNetwork, SamplingError> {
    let map = relabel(net.n_nodes(), kept)?;
    let edges: Vec<(usize, usize, f64)> = net
        .edge_list()
        .into_iter()
        .filter_map(|(s, d, w)| Some((map[s]?, map[d]?, w)))
        .collect();
    Ok(WeightedNetwork::new(kept.len(), &edges, None)?)
}

fn relabel(n_nodes: usize, kept: &[usize]) -> Result<Vec<Option<usize>>, SamplingError> {
    let mut map = vec![None; n_nodes];
    for (new, &old) in kept.iter().enumerate() {
        if old >= n_nodes {
            return Err(NetError::IndexOutOfRange { index: old, n_nodes }.into());
        }
        map[old] = Some(new);
    }
    Ok(map)
}

/// Outcome of a link deletion on a subnetwork.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimResult {
    /// Surviving topology, in the subnetwork's labels.
    pub kept: Arc<Topology>,
    /// Indices of the deleted edges in the subnetwork's canonical edge order.
    pub deleted: Vec<usize>,
}

/// Deletes edges until `round(target_mean_degree * N)` remain.
///
/// Deletions are drawn without replacement with probability proportional to
/// `1/W_ij`, using exponential keys `Exp(1) * W_ij`: the smallest keys go.
pub fn trim_links(subnet: &WeightedNetwork, target_mean_degree: f64, seed: u64) -> Result<TrimResult, SamplingError> {
    let m = subnet.n_edges();
    let target = (target_mean_degree * subnet.n_nodes() as f64).round();
    if !(target >= 0.0) || target > m as f64 {
        return Err(SamplingError::TargetExceedsEdges { target: target.max(0.0) as usize, available: m });
    }
    delete_edges(subnet, m - target as usize, seed)
}

/// Deletes `round(fraction * m)` edges with the same law as [`trim_links`].
pub fn trim_fraction(subnet: &WeightedNetwork, fraction: f64, seed: u64) -> Result<TrimResult, SamplingError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SamplingError::InvalidFraction(fraction));
    }
    let n_delete = (fraction * subnet.n_edges() as f64).round() as usize;
    delete_edges(subnet, n_delete, seed)
}

fn delete_edges(subnet: &WeightedNetwork, n_delete: usize, seed: u64) -> Result<TrimResult, SamplingError> {
    let t = subnet.topology();
    let m = t.n_edges();
    let mut deleted: Vec<usize> = if n_delete == 0 {
        Vec::new()
    } else {
        let mut rng = phase_rng(seed, Phase::Trim);
        let mut keyed: Vec<(f64, usize)> = subnet
            .weights()
            .iter()
            .enumerate()
            .map(|(e, &w)| {
                let u: f64 = Open01.sample(&mut rng);
                (-u.ln() * w, e)
            })
            .collect();
        if n_delete < m {
            keyed.select_nth_unstable_by(n_delete - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.truncate(n_delete);
        }
        keyed.into_iter().map(|(_, e)| e).collect()
    };
    deleted.sort_unstable();

    let mut is_deleted = vec![false; m];
    for &e in &deleted {
        is_deleted[e] = true;
    }
    let pairs: Vec<(usize, usize)> = t.edges().zip(&is_deleted).filter(|(_, &d)| !d).map(|(p, _)| p).collect();
    let kept = Topology::from_sorted_unchecked(t.n_nodes(), &pairs, t.proxy());
    Ok(TrimResult { kept: Arc::new(kept), deleted })
}

/// A kept-firm network with the rest of the economy folded into a proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxiedNetwork {
    pub network: WeightedNetwork,
    pub accounts: NodeAccounts,
    /// Original id of each non-proxy node.
    pub firm_ids: Vec<usize>,
}

impl ProxiedNetwork {
    pub fn proxy_index(&self) -> usize {
        self.firm_ids.len()
    }

    /// Proxy share of total intermediate expenditure and of total intermediate sales.
    pub fn proxy_shares(&self) -> (f64, f64) {
        let p = self.proxy_index();
        let (s_in, s_out) = self.network.strengths();
        let tot_in: f64 = s_in.iter().sum();
        let tot_out: f64 = s_out.iter().sum();
        (s_in[p] / tot_in, s_out[p] / tot_out)
    }
}

/// Routes every flow not covered by `kept_edges` through a proxy node
/// appended at index `kept.len()`.
///
/// `kept` holds sorted original ids; `kept_edges` is labelled like `kept`.
/// A deleted edge between kept firms `i -> j` adds its weight to both
/// `i -> proxy` and `proxy -> j`, flows to or from excluded firms become
/// proxy flows, and flows among excluded firms sit on the proxy self-loop.
/// The proxy's value added and final demand are the excluded firms' totals.
pub fn aggregate_proxy(
    full: &WeightedNetwork,
    acc: &NodeAccounts,
    kept: &[usize],
    kept_edges: &Topology,
) -> Result<ProxiedNetwork, SamplingError> {
    if acc.len() != full.n_nodes() {
        return Err(NetError::SizeMismatch { expected: full.n_nodes(), found: acc.len() }.into());
    }
    let k = kept.len();
    if k == 0 {
        return Err(SamplingError::EmptySelection);
    }
    let map = relabel(full.n_nodes(), kept)?;
    let p = k;

    let mut kept_w = vec![0.0; kept_edges.n_edges()];
    let mut matched = vec![false; kept_edges.n_edges()];
    let mut to_proxy = vec![0.0; k];
    let mut from_proxy = vec![0.0; k];
    let mut self_loop = 0.0;
    for (s, d, w) in full.edge_list() {
        match (map[s], map[d]) {
            (Some(i), Some(j)) => match kept_edges.find_edge(i, j) {
                Some(e) => {
                    kept_w[e] = w;
                    matched[e] = true;
                }
                None => {
                    to_proxy[i] += w;
                    from_proxy[j] += w;
                }
            },
            (Some(i), None) => to_proxy[i] += w,
            (None, Some(j)) => from_proxy[j] += w,
            (None, None) => self_loop += w,
        }
    }
    if let Some(e) = matched.iter().position(|&m| !m) {
        return Err(SamplingError::InvalidKeptEdge { src: kept_edges.src(e), dst: kept_edges.dst(e) });
    }

    let mut edges: Vec<(usize, usize, f64)> =
        kept_edges.edges().zip(kept_w).map(|((i, j), w)| (i, j, w)).collect();
    edges.extend((0..k).filter(|&i| to_proxy[i] > 0.0).map(|i| (i, p, to_proxy[i])));
    edges.extend((0..k).filter(|&j| from_proxy[j] > 0.0).map(|j| (p, j, from_proxy[j])));
    if self_loop > 0.0 {
        edges.push((p, p, self_loop));
    }
    let network = WeightedNetwork::new(k + 1, &edges, Some(FirmId::new(p)))?;

    let mut y: Vec<f64> = kept.iter().map(|&i| acc.value_added[i]).collect();
    let mut f: Vec<f64> = kept.iter().map(|&i| acc.final_demand[i]).collect();
    let (mut y_p, mut f_p) = (0.0, 0.0);
    for i in (0..full.n_nodes()).filter(|&i| map[i].is_none()) {
        y_p += acc.value_added[i];
        f_p += acc.final_demand[i];
    }
    y.push(y_p);
    f.push(f_p);
    let accounts = NodeAccounts::from_network(&network, y, f)?;
    Ok(ProxiedNetwork { network, accounts, firm_ids: kept.to_vec() })
}

/// Replaces value added and final demand of labelled nodes with sector-ratio
/// imputations: `y_i = (y_s/x_s) s_in_i` and `f_i = (f_s/d_s) s_out_i`, the
/// latter being `f_i = q_i f_s/q_s` solved for `f_i`.
///
/// Node `i` is labelled when `i < labels.len()`; later nodes (the proxy)
/// keep their values.
pub fn impute_from_sectors(
    acc: &NodeAccounts,
    table: &SectorTable,
    labels: &[SectorId],
) -> Result<NodeAccounts, SamplingError> {
    if labels.len() > acc.len() {
        return Err(NetError::SizeMismatch { expected: acc.len(), found: labels.len() }.into());
    }
    let mut out = acc.clone();
    for (i, &s) in labels.iter().enumerate() {
        let row = table.get(s).ok_or(SamplingError::UnknownSector(s))?;
        if row.x <= 0.0 {
            return Err(SamplingError::ZeroSectorDenominator { sector: s, what: "intermediate expenditure" });
        }
        if row.d <= 0.0 {
            return Err(SamplingError::ZeroSectorDenominator { sector: s, what: "intermediate sales" });
        }
        out.value_added[i] = row.y / row.x * acc.s_in[i];
        out.final_demand[i] = row.f / row.d * acc.s_out[i];
    }
    Ok(out)
}
