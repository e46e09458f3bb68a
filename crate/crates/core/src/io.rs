//! CSV readers and writers for networks, accounts and intermediate artifacts.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonize::FirmFinancials;
use crate::net::{FirmId, NetError, NodeAccounts, Topology, WeightedNetwork};
use crate::recon::ReconstructionResult;
use crate::synth::{SectorAggregates, SectorId, SectorTable};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Open { path: path.display().to_string(), source })
}

fn create(path: &Path) -> Result<File, IoError> {
    File::create(path).map_err(|source| IoError::Open { path: path.display().to_string(), source })
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<T>, IoError> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(IoError::from)).collect()
}

fn write_rows<T: Serialize, W: Write>(w: W, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    let mut wr = csv::Writer::from_writer(w);
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush().map_err(|e| IoError::Csv(e.into()))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeRow {
    src: usize,
    dst: usize,
    weight: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRow {
    id: usize,
    sector: Option<SectorId>,
    value_added: f64,
    final_demand: f64,
    is_proxy: bool,
}

/// A network with its node attributes as stored in edge and node CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkData {
    pub network: WeightedNetwork,
    pub accounts: NodeAccounts,
    /// Sector of each non-proxy node.
    pub sectors: Vec<SectorId>,
}

pub fn write_network<W1: Write, W2: Write>(
    edges: W1,
    nodes: W2,
    net: &WeightedNetwork,
    acc: &NodeAccounts,
    sectors: &[SectorId],
) -> Result<(), IoError> {
    write_rows(edges, net.edge_list().into_iter().map(|(src, dst, weight)| EdgeRow { src, dst, weight }))?;
    let t = net.topology();
    write_rows(
        nodes,
        (0..net.n_nodes()).map(|i| NodeRow {
            id: i,
            sector: sectors.get(i).copied().filter(|_| !t.is_proxy(i)),
            value_added: acc.value_added[i],
            final_demand: acc.final_demand[i],
            is_proxy: t.is_proxy(i),
        }),
    )
}

pub fn read_network<R1: Read, R2: Read>(edges: R1, nodes: R2) -> Result<NetworkData, IoError> {
    let nodes: Vec<NodeRow> = read_rows(nodes)?;
    let n = nodes.len();
    let mut y = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut sectors = vec![None; n];
    let mut proxy = None;
    for row in &nodes {
        if row.id >= n {
            return Err(IoError::Invalid(format!("node id {} with {} nodes", row.id, n)));
        }
        y[row.id] = row.value_added;
        f[row.id] = row.final_demand;
        sectors[row.id] = row.sector;
        if row.is_proxy {
            if proxy.is_some() {
                return Err(IoError::Invalid("more than one proxy node".into()));
            }
            proxy = Some(FirmId::new(row.id));
        }
    }
    let edges: Vec<EdgeRow> = read_rows(edges)?;
    let edges: Vec<(usize, usize, f64)> = edges.into_iter().map(|e| (e.src, e.dst, e.weight)).collect();
    let network = WeightedNetwork::new(n, &edges, proxy)?;
    let accounts = NodeAccounts::from_network(&network, y, f)?;
    let n_firms = network.topology().n_firms();
    let sectors = sectors[..n_firms]
        .iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| IoError::Invalid(format!("node {i} has no sector"))))
        .collect::<Result<_, _>>()?;
    Ok(NetworkData { network, accounts, sectors })
}

pub fn save_network(dir: &Path, net: &WeightedNetwork, acc: &NodeAccounts, sectors: &[SectorId]) -> Result<(), IoError> {
    write_network(create(&dir.join("edges.csv"))?, create(&dir.join("nodes.csv"))?, net, acc, sectors)
}

pub fn load_network(edges: &Path, nodes: &Path) -> Result<NetworkData, IoError> {
    read_network(open(edges)?, open(nodes)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SectorRow {
    sector: SectorId,
    q: f64,
    x: f64,
    d: f64,
    y: f64,
    f: f64,
}

pub fn write_sectors<W: Write>(w: W, table: &SectorTable) -> Result<(), IoError> {
    write_rows(
        w,
        table.rows.iter().enumerate().map(|(s, r)| SectorRow { sector: s as SectorId, q: r.q, x: r.x, d: r.d, y: r.y, f: r.f }),
    )
}

pub fn read_sectors<R: Read>(r: R) -> Result<SectorTable, IoError> {
    let rows: Vec<SectorRow> = read_rows(r)?;
    let n = rows.iter().map(|r| r.sector as usize + 1).max().unwrap_or(0);
    let mut table = SectorTable { rows: vec![SectorAggregates::default(); n] };
    for r in rows {
        table.rows[r.sector as usize] = SectorAggregates { q: r.q, x: r.x, d: r.d, y: r.y, f: r.f };
    }
    Ok(table)
}

pub fn save_sectors(path: &Path, table: &SectorTable) -> Result<(), IoError> {
    write_sectors(create(path)?, table)
}

pub fn load_sectors(path: &Path) -> Result<SectorTable, IoError> {
    read_sectors(open(path)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyRow {
    src: usize,
    dst: usize,
}

pub fn write_topology<W: Write>(w: W, t: &Topology) -> Result<(), IoError> {
    write_rows(w, t.edges().map(|(src, dst)| TopologyRow { src, dst }))
}

/// Reads `src,dst` pairs; the node count and proxy come from the accounts.
pub fn read_topology<R: Read>(r: R, n_nodes: usize, proxy: Option<FirmId>) -> Result<Topology, IoError> {
    let rows: Vec<TopologyRow> = read_rows(r)?;
    let pairs: Vec<(usize, usize)> = rows.into_iter().map(|r| (r.src, r.dst)).collect();
    Ok(Topology::new(n_nodes, &pairs, proxy)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct AccountRow {
    id: usize,
    firm: Option<usize>,
    s_in: f64,
    s_out: f64,
    value_added: f64,
    final_demand: f64,
    is_proxy: bool,
}

/// Node accounts of a proxied network, keyed by local and original ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountsData {
    pub accounts: NodeAccounts,
    pub firm_ids: Vec<usize>,
    pub proxy: Option<FirmId>,
}

pub fn write_accounts<W: Write>(w: W, acc: &NodeAccounts, firm_ids: &[usize], proxy: Option<FirmId>) -> Result<(), IoError> {
    let p = proxy.map(FirmId::index);
    write_rows(
        w,
        (0..acc.len()).map(|i| AccountRow {
            id: i,
            firm: firm_ids.get(i).copied().filter(|_| Some(i) != p),
            s_in: acc.s_in[i],
            s_out: acc.s_out[i],
            value_added: acc.value_added[i],
            final_demand: acc.final_demand[i],
            is_proxy: Some(i) == p,
        }),
    )
}

pub fn read_accounts<R: Read>(r: R) -> Result<AccountsData, IoError> {
    let mut rows: Vec<AccountRow> = read_rows(r)?;
    rows.sort_by_key(|r| r.id);
    if rows.iter().enumerate().any(|(i, r)| r.id != i) {
        return Err(IoError::Invalid("account ids must be 0..n without gaps".into()));
    }
    let proxy = rows.iter().position(|r| r.is_proxy).map(FirmId::new);
    let firm_ids = rows.iter().filter(|r| !r.is_proxy).map(|r| r.firm.unwrap_or(r.id)).collect();
    let accounts = NodeAccounts::new(
        rows.iter().map(|r| r.s_in).collect(),
        rows.iter().map(|r| r.s_out).collect(),
        rows.iter().map(|r| r.value_added).collect(),
        rows.iter().map(|r| r.final_demand).collect(),
    )?;
    Ok(AccountsData { accounts, firm_ids, proxy })
}

pub fn write_edges<W: Write>(w: W, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<(), IoError> {
    write_rows(w, edges.into_iter().map(|(src, dst, weight)| EdgeRow { src, dst, weight }))
}

#[derive(Debug, Serialize, Deserialize)]
struct ReconRow {
    src: usize,
    dst: usize,
    expected: f64,
    lambda: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn write_reconstruction<W: Write>(w: W, r: &ReconstructionResult) -> Result<(), IoError> {
    write_rows(
        w,
        r.topology.edges().enumerate().map(|(e, (src, dst))| ReconRow {
            src,
            dst,
            expected: r.expected[e],
            lambda: r.lambda[e],
            ci_low: r.ci_low[e],
            ci_high: r.ci_high[e],
        }),
    )
}

/// Reads expected weights back as a network on `n_nodes` nodes.
pub fn read_reconstruction<R: Read>(r: R, n_nodes: usize, proxy: Option<FirmId>) -> Result<WeightedNetwork, IoError> {
    let rows: Vec<ReconRow> = read_rows(r)?;
    let pairs: Vec<(usize, usize)> = rows.iter().map(|r| (r.src, r.dst)).collect();
    let t = Topology::new(n_nodes, &pairs, proxy)?;
    let mut w = vec![0.0; rows.len()];
    for r in &rows {
        let e = t.find_edge(r.src, r.dst).expect("edge just inserted");
        w[e] = r.expected;
    }
    Ok(WeightedNetwork::from_topology(Arc::new(t), w)?)
}

/// Reads every column of a reconstruction back. The fit diagnostics
/// (`l1`, `rel_l1`, `iterations`) are not stored and come back as zero.
pub fn read_reconstruction_result<R: Read>(
    r: R,
    n_nodes: usize,
    proxy: Option<FirmId>,
) -> Result<ReconstructionResult, IoError> {
    let rows: Vec<ReconRow> = read_rows(r)?;
    let pairs: Vec<(usize, usize)> = rows.iter().map(|r| (r.src, r.dst)).collect();
    let t = Topology::new(n_nodes, &pairs, proxy)?;
    let m = rows.len();
    let (mut expected, mut lambda, mut ci_low, mut ci_high) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for r in &rows {
        let e = t.find_edge(r.src, r.dst).expect("edge just inserted");
        if !(r.expected > 0.0 && r.expected.is_finite()) {
            return Err(IoError::Invalid(format!("edge {}->{} has expected weight {}", r.src, r.dst, r.expected)));
        }
        expected[e] = r.expected;
        lambda[e] = r.lambda;
        ci_low[e] = r.ci_low;
        ci_high[e] = r.ci_high;
    }
    Ok(ReconstructionResult {
        topology: Arc::new(t),
        expected,
        lambda,
        ci_low,
        ci_high,
        l1: 0.0,
        rel_l1: 0.0,
        iterations: 0,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueRow {
    node: usize,
    value: f64,
}

pub fn write_node_values<W: Write>(w: W, values: impl IntoIterator<Item = (usize, f64)>) -> Result<(), IoError> {
    write_rows(w, values.into_iter().map(|(node, value)| ValueRow { node, value }))
}

#[derive(Debug, Serialize, Deserialize)]
struct FinancialsRow {
    firm: String,
    year: i32,
    sector: String,
    revenue: f64,
    cogs: f64,
    labour: Option<f64>,
    ebit: f64,
    depamort: f64,
}

pub fn read_financials<R: Read>(r: R) -> Result<Vec<FirmFinancials>, IoError> {
    let rows: Vec<FinancialsRow> = read_rows(r)?;
    Ok(rows
        .into_iter()
        .map(|r| FirmFinancials {
            firm: r.firm,
            year: r.year,
            sector: r.sector,
            revenue: r.revenue,
            cogs: r.cogs,
            labour: r.labour,
            ebit: r.ebit,
            depamort: r.depamort,
            labour_in_cogs: false,
            labour_hat: None,
        })
        .collect())
}

pub fn write_financials<W: Write>(w: W, rows: &[FirmFinancials]) -> Result<(), IoError> {
    write_rows(
        w,
        rows.iter().map(|r| FinancialsRow {
            firm: r.firm.clone(),
            year: r.year,
            sector: r.sector.clone(),
            revenue: r.revenue,
            cogs: r.cogs,
            labour: r.labour,
            ebit: r.ebit,
            depamort: r.depamort,
        }),
    )
}

/// One harmonized firm-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizedRow {
    pub firm: String,
    pub year: i32,
    pub sector: String,
    pub revenue: f64,
    pub cogs: f64,
    pub labour: Option<f64>,
    pub ebit: f64,
    pub depamort: f64,
    pub labour_hat: f64,
    pub intermediate_hat: f64,
    pub value_added: f64,
    pub final_demand: Option<f64>,
    pub gfcf: Option<f64>,
    pub flag: String,
}

pub fn write_harmonized<W: Write>(w: W, rows: &[HarmonizedRow]) -> Result<(), IoError> {
    write_rows(w, rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct RatioRow {
    sector: String,
    final_demand_share: f64,
    gfcf_share: f64,
}

/// Sector shares of gross output going to final demand and capital formation.
pub fn read_sector_ratios<R: Read>(r: R) -> Result<Vec<(String, f64, f64)>, IoError> {
    let rows: Vec<RatioRow> = read_rows(r)?;
    Ok(rows.into_iter().map(|r| (r.sector, r.final_demand_share, r.gfcf_share)).collect())
}

pub fn open_file(path: &Path) -> Result<File, IoError> {
    open(path)
}

pub fn create_file(path: &Path) -> Result<File, IoError> {
    create(path)
}
