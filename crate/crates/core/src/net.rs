//! Sparse weighted directed production networks and per-firm accounts.
//!
//! Edges are stored once in row-major order (sorted by `(src, dst)`), with a
//! column index that points back into that order. Row and column passes are
//! therefore both linear in the number of edges, which is what the balancing
//! and coefficient code relies on.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while constructing or checking networks and accounts.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("duplicate edge {src} -> {dst}")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("self-loop on node {node}, which is not the proxy")]
    SelfLoopOnNonProxy { node: usize },
    #[error("node index {index} out of range for {n_nodes} nodes")]
    IndexOutOfRange { index: usize, n_nodes: usize },
    #[error("edge {src} -> {dst} has non-positive or non-finite weight {weight}")]
    NonPositiveWeight { src: usize, dst: usize, weight: f64 },
    #[error("proxy node must be the last node ({expected}), got {found}")]
    MisplacedProxy { expected: usize, found: usize },
    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },
}

/// Dense index of a firm within one network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FirmId(pub u32);

impl FirmId {
    pub fn new(index: usize) -> Self {
        FirmId(u32::try_from(index).expect("firm index exceeds u32"))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for FirmId {
    fn from(index: usize) -> Self {
        FirmId::new(index)
    }
}

impl fmt::Display for FirmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binary directed topology with row and column access.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_nodes: usize,
    proxy: Option<FirmId>,
    row_ptr: Vec<usize>,
    src: Vec<u32>,
    dst: Vec<u32>,
    col_ptr: Vec<usize>,
    col_edges: Vec<usize>,
}

fn check_proxy(n_nodes: usize, proxy: Option<FirmId>) -> Result<(), NetError> {
    if let Some(p) = proxy {
        if p.index() >= n_nodes {
            return Err(NetError::IndexOutOfRange { index: p.index(), n_nodes });
        }
        if p.index() != n_nodes - 1 {
            return Err(NetError::MisplacedProxy { expected: n_nodes - 1, found: p.index() });
        }
    }
    Ok(())
}

fn check_pair(n_nodes: usize, proxy: Option<FirmId>, src: usize, dst: usize) -> Result<(), NetError> {
    for index in [src, dst] {
        if index >= n_nodes {
            return Err(NetError::IndexOutOfRange { index, n_nodes });
        }
    }
    if src == dst && proxy.map(FirmId::index) != Some(src) {
        return Err(NetError::SelfLoopOnNonProxy { node: src });
    }
    Ok(())
}

impl Topology {
    /// Builds a topology from an edge list in any order.
    pub fn new(n_nodes: usize, edges: &[(usize, usize)], proxy: Option<FirmId>) -> Result<Self, NetError> {
        check_proxy(n_nodes, proxy)?;
        for &(s, d) in edges {
            check_pair(n_nodes, proxy, s, d)?;
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_unstable_by_key(|&e| edges[e]);
        for w in order.windows(2) {
            if edges[w[0]] == edges[w[1]] {
                let (src, dst) = edges[w[0]];
                return Err(NetError::DuplicateEdge { src, dst });
            }
        }
        let sorted: Vec<(usize, usize)> = order.iter().map(|&e| edges[e]).collect();
        Ok(Self::from_sorted_unchecked(n_nodes, &sorted, proxy))
    }

    /// Caller guarantees edges are valid, unique and sorted by `(src, dst)`.
    pub(crate) fn from_sorted_unchecked(n_nodes: usize, edges: &[(usize, usize)], proxy: Option<FirmId>) -> Self {
        let m = edges.len();
        let mut row_ptr = vec![0usize; n_nodes + 1];
        let mut col_ptr = vec![0usize; n_nodes + 1];
        let mut src = Vec::with_capacity(m);
        let mut dst = Vec::with_capacity(m);
        for &(s, d) in edges {
            row_ptr[s + 1] += 1;
            col_ptr[d + 1] += 1;
            src.push(s as u32);
            dst.push(d as u32);
        }
        for i in 0..n_nodes {
            row_ptr[i + 1] += row_ptr[i];
            col_ptr[i + 1] += col_ptr[i];
        }
        // Edges are visited in (src, dst) order, so each column ends up sorted by src.
        let mut fill = col_ptr.clone();
        let mut col_edges = vec![0usize; m];
        for (e, &(_, d)) in edges.iter().enumerate() {
            col_edges[fill[d]] = e;
            fill[d] += 1;
        }
        Topology { n_nodes, proxy, row_ptr, src, dst, col_ptr, col_edges }
    }

    /// Every ordered pair, self-pairs included. This support is only meant
    /// for reconstruction; it bypasses the self-loop rule.
    pub fn complete(n_nodes: usize) -> Self {
        let edges: Vec<(usize, usize)> = (0..n_nodes).flat_map(|i| (0..n_nodes).map(move |j| (i, j))).collect();
        Self::from_sorted_unchecked(n_nodes, &edges, None)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn proxy(&self) -> Option<FirmId> {
        self.proxy
    }

    pub fn is_proxy(&self, node: usize) -> bool {
        self.proxy.map(FirmId::index) == Some(node)
    }

    /// Number of non-proxy nodes.
    pub fn n_firms(&self) -> usize {
        self.n_nodes - usize::from(self.proxy.is_some())
    }

    #[inline]
    pub fn src(&self, edge: usize) -> usize {
        self.src[edge] as usize
    }

    #[inline]
    pub fn dst(&self, edge: usize) -> usize {
        self.dst[edge] as usize
    }

    /// Edge indices leaving `node`, ordered by destination.
    #[inline]
    pub fn out_edges(&self, node: usize) -> Range<usize> {
        self.row_ptr[node]..self.row_ptr[node + 1]
    }

    /// Edge indices entering `node`, ordered by source.
    #[inline]
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.col_edges[self.col_ptr[node]..self.col_ptr[node + 1]]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src.iter().zip(&self.dst).map(|(&s, &d)| (s as usize, d as usize))
    }

    pub fn find_edge(&self, src: usize, dst: usize) -> Option<usize> {
        let range = self.out_edges(src);
        let start = range.start;
        self.dst[range].binary_search(&(dst as u32)).ok().map(|k| start + k)
    }

    /// `(k_in, k_out)` per node.
    pub fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let k_out = (0..self.n_nodes).map(|i| self.row_ptr[i + 1] - self.row_ptr[i]).collect();
        let k_in = (0..self.n_nodes).map(|j| self.col_ptr[j + 1] - self.col_ptr[j]).collect();
        (k_in, k_out)
    }

    /// `|E| / N`.
    pub fn mean_degree(&self) -> f64 {
        if self.n_nodes == 0 {
            0.0
        } else {
            self.n_edges() as f64 / self.n_nodes as f64
        }
    }

    /// True when the edge touches the proxy node.
    pub fn touches_proxy(&self, edge: usize) -> bool {
        self.is_proxy(self.src(edge)) || self.is_proxy(self.dst(edge))
    }
}

/// Free function form of [`Topology::degrees`].
pub fn degrees(t: &Topology) -> (Vec<usize>, Vec<usize>) {
    t.degrees()
}

/// Directed network of strictly positive monetary flows.
///
/// `weights[e]` is the flow on edge `e` of the shared topology, i.e. the
/// amount the destination firm spends on inputs from the source firm.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedNetwork {
    topology: Arc<Topology>,
    weights: Vec<f64>,
}

impl WeightedNetwork {
    /// Validates and builds a network from `(src, dst, weight)` triples.
    pub fn new(n_nodes: usize, edges: &[(usize, usize, f64)], proxy: Option<FirmId>) -> Result<Self, NetError> {
        check_proxy(n_nodes, proxy)?;
        for &(s, d, w) in edges {
            check_pair(n_nodes, proxy, s, d)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(NetError::NonPositiveWeight { src: s, dst: d, weight: w });
            }
        }
        let mut sorted = edges.to_vec();
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in sorted.windows(2) {
            if (w[0].0, w[0].1) == (w[1].0, w[1].1) {
                return Err(NetError::DuplicateEdge { src: w[0].0, dst: w[0].1 });
            }
        }
        let pairs: Vec<(usize, usize)> = sorted.iter().map(|&(s, d, _)| (s, d)).collect();
        let topology = Topology::from_sorted_unchecked(n_nodes, &pairs, proxy);
        let weights = sorted.into_iter().map(|(_, _, w)| w).collect();
        Ok(WeightedNetwork { topology: Arc::new(topology), weights })
    }

    /// Attaches weights to an existing topology. Zero weights are dropped.
    pub fn from_topology(topology: Arc<Topology>, weights: Vec<f64>) -> Result<Self, NetError> {
        if weights.len() != topology.n_edges() {
            return Err(NetError::SizeMismatch { expected: topology.n_edges(), found: weights.len() });
        }
        for (e, &w) in weights.iter().enumerate() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(NetError::NonPositiveWeight { src: topology.src(e), dst: topology.dst(e), weight: w });
            }
        }
        if weights.iter().all(|&w| w > 0.0) {
            return Ok(WeightedNetwork { topology, weights });
        }
        let (pairs, kept): (Vec<_>, Vec<_>) =
            topology.edges().zip(&weights).filter(|(_, &w)| w > 0.0).map(|(p, &w)| (p, w)).unzip();
        let reduced = Topology::from_sorted_unchecked(topology.n_nodes(), &pairs, topology.proxy());
        Ok(WeightedNetwork { topology: Arc::new(reduced), weights: kept })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn shared_topology(&self) -> Arc<Topology> {
        Arc::clone(&self.topology)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_nodes(&self) -> usize {
        self.topology.n_nodes()
    }

    pub fn n_edges(&self) -> usize {
        self.topology.n_edges()
    }

    pub fn proxy(&self) -> Option<FirmId> {
        self.topology.proxy()
    }

    /// Canonical `(src, dst, weight)` list sorted by `(src, dst)`.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        self.topology.edges().zip(&self.weights).map(|((s, d), &w)| (s, d, w)).collect()
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        self.topology.find_edge(src, dst).map(|e| self.weights[e])
    }

    /// Sum of all weights, accumulated in canonical edge order.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `(s_in, s_out)`: column and row sums.
    pub fn strengths(&self) -> (Vec<f64>, Vec<f64>) {
        strengths_of(&self.topology, &self.weights)
    }
}

/// Column sums (`s_in`) and row sums (`s_out`) of weights laid out on `t`.
pub fn strengths_of(t: &Topology, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = t.n_nodes();
    let mut s_in = vec![0.0; n];
    let mut s_out = vec![0.0; n];
    for (e, &w) in weights.iter().enumerate() {
        s_out[t.src(e)] += w;
        s_in[t.dst(e)] += w;
    }
    (s_in, s_out)
}

/// Free function form of [`WeightedNetwork::strengths`].
pub fn strengths(net: &WeightedNetwork) -> (Vec<f64>, Vec<f64>) {
    net.strengths()
}

/// Per-node aggregates.
///
/// Total sales are `s_out + final_demand`; total costs are `s_in + value_added`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAccounts {
    pub s_in: Vec<f64>,
    pub s_out: Vec<f64>,
    pub value_added: Vec<f64>,
    pub final_demand: Vec<f64>,
}

impl NodeAccounts {
    pub fn new(s_in: Vec<f64>, s_out: Vec<f64>, value_added: Vec<f64>, final_demand: Vec<f64>) -> Result<Self, NetError> {
        let n = s_in.len();
        for len in [s_out.len(), value_added.len(), final_demand.len()] {
            if len != n {
                return Err(NetError::SizeMismatch { expected: n, found: len });
            }
        }
        Ok(NodeAccounts { s_in, s_out, value_added, final_demand })
    }

    /// Strengths read off `net`, with the given value-added and final demand.
    pub fn from_network(net: &WeightedNetwork, value_added: Vec<f64>, final_demand: Vec<f64>) -> Result<Self, NetError> {
        let (s_in, s_out) = net.strengths();
        Self::new(s_in, s_out, value_added, final_demand)
    }

    pub fn len(&self) -> usize {
        self.s_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_in.is_empty()
    }

    pub fn total_sales(&self, i: usize) -> f64 {
        self.s_out[i] + self.final_demand[i]
    }

    pub fn total_cost(&self, i: usize) -> f64 {
        self.s_in[i] + self.value_added[i]
    }
}

fn rel_gap(a: f64, b: f64, scale: f64) -> f64 {
    let denom = scale.max(a.abs()).max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Returns the nodes whose accounts disagree with `net` or violate the
/// balance `s_out + f = s_in + y` by more than `tol` (relative).
pub fn validate_accounts(acc: &NodeAccounts, net: &WeightedNetwork, tol: f64) -> Result<Vec<usize>, NetError> {
    if acc.len() != net.n_nodes() {
        return Err(NetError::SizeMismatch { expected: net.n_nodes(), found: acc.len() });
    }
    let (s_in, s_out) = net.strengths();
    let violating = (0..acc.len())
        .filter(|&i| {
            let sales = acc.total_sales(i);
            let cost = acc.total_cost(i);
            rel_gap(acc.s_in[i], s_in[i], cost) > tol
                || rel_gap(acc.s_out[i], s_out[i], sales) > tol
                || rel_gap(sales, cost, 0.0) > tol
        })
        .collect();
    Ok(violating)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_network() {
        let net = WeightedNetwork::new(2, &[(0, 1, 3.0)], None).unwrap();
        assert_eq!(net.n_edges(), 1);
        assert_eq!(net.weight(0, 1), Some(3.0));
        assert_eq!(net.weight(1, 0), None);
    }

    #[test]
    fn rejects_invalid_edges() {
        assert_eq!(
            WeightedNetwork::new(2, &[(0, 0, 1.0)], None),
            Err(NetError::SelfLoopOnNonProxy { node: 0 })
        );
        assert_eq!(
            WeightedNetwork::new(3, &[(0, 1, 1.0), (0, 1, 2.0)], None),
            Err(NetError::DuplicateEdge { src: 0, dst: 1 })
        );
        assert_eq!(
            WeightedNetwork::new(2, &[(0, 2, 1.0)], None),
            Err(NetError::IndexOutOfRange { index: 2, n_nodes: 2 })
        );
        assert!(matches!(
            WeightedNetwork::new(2, &[(0, 1, 0.0)], None),
            Err(NetError::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            WeightedNetwork::new(2, &[(0, 1, f64::NAN)], None),
            Err(NetError::NonPositiveWeight { .. })
        ));
        assert_eq!(
            WeightedNetwork::new(3, &[], Some(FirmId(0))),
            Err(NetError::MisplacedProxy { expected: 2, found: 0 })
        );
    }

    #[test]
    fn proxy_self_loop_is_allowed() {
        let net = WeightedNetwork::new(3, &[(2, 2, 4.0), (0, 2, 1.0)], Some(FirmId(2))).unwrap();
        assert_eq!(net.weight(2, 2), Some(4.0));
        assert_eq!(net.topology().n_firms(), 2);
    }

    #[test]
    fn strengths_by_hand() {
        let net = WeightedNetwork::new(2, &[(0, 1, 2.0), (1, 0, 1.0)], None).unwrap();
        let (s_in, s_out) = net.strengths();
        assert_eq!(s_out, vec![2.0, 1.0]);
        assert_eq!(s_in, vec![1.0, 2.0]);

        let empty = WeightedNetwork::new(3, &[], None).unwrap();
        assert_eq!(empty.strengths(), (vec![0.0; 3], vec![0.0; 3]));
    }

    #[test]
    fn single_edge_degrees() {
        let t = Topology::new(2, &[(0, 1)], None).unwrap();
        assert_eq!(degrees(&t), (vec![0, 1], vec![1, 0]));
    }

    fn ring_topology(n: usize, m: usize) -> Topology {
        let edges: Vec<(usize, usize)> = (0..m).map(|e| (e % n, (e % n + 1 + e / n) % n)).collect();
        Topology::new(n, &edges, None).unwrap()
    }

    #[test]
    fn mean_degree_matches_table_sizes() {
        let trimmed = ring_topology(5_440, 15_776);
        assert_eq!(format!("{:.1}", trimmed.mean_degree()), "2.9");
        let test = ring_topology(5_440, 432_910);
        assert_eq!(format!("{:.1}", test.mean_degree()), "79.6");
    }

    #[test]
    fn row_and_column_iteration() {
        let net = WeightedNetwork::new(3, &[(2, 0, 1.0), (0, 1, 2.0), (0, 2, 3.0), (1, 2, 4.0)], None).unwrap();
        let t = net.topology();
        let outs: Vec<usize> = t.out_edges(0).map(|e| t.dst(e)).collect();
        assert_eq!(outs, vec![1, 2]);
        let ins: Vec<usize> = t.in_edges(2).iter().map(|&e| t.src(e)).collect();
        assert_eq!(ins, vec![0, 1]);
        assert_eq!(t.find_edge(1, 2), Some(2));
    }

    #[test]
    fn from_topology_drops_zero_weights() {
        let t = Arc::new(Topology::new(3, &[(0, 1), (1, 2), (2, 0)], None).unwrap());
        let net = WeightedNetwork::from_topology(t, vec![1.0, 0.0, 2.0]).unwrap();
        assert_eq!(net.edge_list(), vec![(0, 1, 1.0), (2, 0, 2.0)]);
    }

    fn consistent() -> (WeightedNetwork, NodeAccounts) {
        let net = WeightedNetwork::new(3, &[(0, 1, 5.0), (1, 2, 3.0), (2, 0, 2.0)], None).unwrap();
        let (s_in, s_out) = net.strengths();
        // q = 10 for every firm
        let y: Vec<f64> = s_in.iter().map(|s| 10.0 - s).collect();
        let f: Vec<f64> = s_out.iter().map(|s| 10.0 - s).collect();
        let acc = NodeAccounts::new(s_in, s_out, y, f).unwrap();
        (net, acc)
    }

    #[test]
    fn validate_consistent_accounts() {
        let (net, acc) = consistent();
        assert!(validate_accounts(&acc, &net, 1e-12).unwrap().is_empty());
    }

    #[test]
    fn validate_flags_perturbed_value_added() {
        let (net, mut acc) = consistent();
        acc.value_added[1] *= 1.1;
        assert_eq!(validate_accounts(&acc, &net, 1e-6).unwrap(), vec![1]);
        assert!(validate_accounts(&acc, &net, 0.2).unwrap().is_empty());
    }

    #[test]
    fn validate_size_mismatch() {
        let (net, _) = consistent();
        let acc = NodeAccounts::new(vec![0.0], vec![0.0], vec![1.0], vec![1.0]).unwrap();
        assert_eq!(
            validate_accounts(&acc, &net, 1e-6),
            Err(NetError::SizeMismatch { expected: 3, found: 1 })
        );
    }
}
