//! Subcommands and their argument definitions.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use prodnet::coeffs::{influence_from_shares, input_shares, output_multipliers, technical_coefficients};
use prodnet::harmonize::{
    clean_accounting, estimate_labour, fit_labour_share, impute_demand_and_gfcf, select_method, LabourShareMethod,
    MethodScore,
};
use prodnet::io::{self, HarmonizedRow, IoError};
use prodnet::metrics::l1_error;
use prodnet::sampling::{aggregate_proxy, impute_from_sectors, ProxiedNetwork};
use prodnet::synth::derive_sector_table;
use prodnet::{FirmId, NodeAccounts, Topology, WeightedNetwork};
use serde::Serialize;
use thiserror::Error;

use crate::config::{parse_config, ConfigError, RunConfig, SweepPoint};
use crate::pipeline::{self, GroundTruth, PipelineError, ReplicateMeta};

#[derive(Debug, Parser)]
#[command(name = "prodnet", version, about = "Reconstruct sparse production networks and evaluate them")]
pub struct Cli {
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, or output file for single-file commands (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic ground-truth economy.
    Gen(GenArgs),
    /// Keep the largest firms, delete links and fold the rest into a proxy.
    Trim(TrimArgs),
    /// Fit the exponential ensemble on a known topology.
    Reconstruct(ReconstructArgs),
    /// Output multipliers or influence vector of a reconstruction.
    Multipliers(MultipliersArgs),
    /// Aggregate volatility under simulated TFP shocks.
    Shock(ShockArgs),
    /// Compare one reconstruction with the ground truth.
    Eval(EvalArgs),
    /// Full protocol over every sweep point and replicate.
    Run(RunArgs),
    /// Rebuild the summary from the reports under --out.
    Report,
    /// Split labour out of cost of goods sold in firm financials.
    Harmonize(HarmonizeArgs),
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// Ground-truth edge CSV (`src,dst,weight`).
    #[arg(long)]
    pub edges: PathBuf,
    /// Ground-truth node CSV (`id,sector,value_added,final_demand,is_proxy`).
    #[arg(long)]
    pub nodes: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n_firms: Option<usize>,
    #[arg(long)]
    pub mean_degree: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrimArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Sector table CSV used for imputation; derived from the network when absent.
    #[arg(long)]
    pub sectors: Option<PathBuf>,
    /// Delete this fraction of kept-firm links (default: every configured sweep point).
    #[arg(long, conflicts_with = "match_degree")]
    pub fraction: Option<f64>,
    /// Delete links down to the configured mean degree.
    #[arg(long)]
    pub match_degree: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n_keep: Option<usize>,
    /// Impute kept firms' value added and final demand from sector ratios.
    #[arg(long)]
    pub impute: bool,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub topology: PathBuf,
    #[arg(long)]
    pub accounts: PathBuf,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Output,
    Influence,
}

#[derive(Debug, Args)]
pub struct MultipliersArgs {
    /// Reconstruction CSV (`src,dst,expected,...`).
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub accounts: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Drop the proxy node before solving.
    #[arg(long)]
    pub exclude_proxy: bool,
}

#[derive(Debug, Args)]
pub struct ShockArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    #[arg(long)]
    pub recon: PathBuf,
    #[arg(long)]
    pub accounts: PathBuf,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub network: NetworkArgs,
    /// Replicate directory written by `trim`.
    #[arg(long)]
    pub replicate: PathBuf,
    /// Reconstruction CSV; defaults to `recon.csv` in the replicate directory.
    #[arg(long)]
    pub recon: Option<PathBuf>,
    /// Also report RMSE/MAE/MedAE for edge weights.
    #[arg(long)]
    pub weight_errors: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    /// Firm financials CSV (`firm,year,sector,revenue,cogs,labour,ebit,depamort`).
    #[arg(long)]
    pub input: PathBuf,
    /// `1`, `2a`, `2b`, `3` or `auto` (held-out selection).
    #[arg(long, default_value = "auto")]
    pub method: String,
    /// Sector shares of gross output to final demand and capital formation.
    #[arg(long)]
    pub sector_ratios: Option<PathBuf>,
    /// Fraction of disclosing firms held out by `auto`.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input unreadable: {0}")]
    Input(String),
    #[error("{0} replicate(s) failed; see errors.log")]
    Failures(usize),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Unreadable { .. }) => 3,
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Failures(_) | CliError::Pipeline(_) => 1,
        }
    }

    fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Pipeline(e.into())
    }
}

/// Config file (or defaults) with the command-line seed applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn run_cli(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Gen(a) => gen(&cfg, a, &out_dir),
        Command::Trim(a) => trim(&cfg, a, &out_dir),
        Command::Reconstruct(a) => reconstruct(&cfg, a, cli.out.as_deref()),
        Command::Multipliers(a) => multipliers(&cfg, a, cli.out.as_deref()),
        Command::Shock(a) => shock(&cfg, a, cli.out.as_deref()),
        Command::Eval(a) => eval(&cfg, a, cli.out.as_deref()),
        Command::Run(a) => run(cfg, a, &out_dir, cli.jobs),
        Command::Report => report(&out_dir),
        Command::Harmonize(a) => harmonize(&cfg, a, &out_dir),
    }
}

fn emit(out: Option<&Path>, bytes: Vec<u8>) -> Result<(), CliError> {
    match out {
        Some(p) => pipeline::write_file(p, bytes)?,
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(&bytes)
                .and_then(|_| so.flush())
                .map_err(|source| PipelineError::Write { path: "stdout".into(), source })?;
        }
    }
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), IoError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<(), IoError>) -> Result<(), CliError> {
    Ok(pipeline::write_file(path, csv_bytes(f)?)?)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(v).expect("records serialize") + "\n").into_bytes()
}

fn load_input(a: &NetworkArgs) -> Result<io::NetworkData, CliError> {
    io::load_network(&a.edges, &a.nodes).map_err(CliError::input)
}

fn load_accounts(path: &Path) -> Result<io::AccountsData, CliError> {
    io::read_accounts(io::open_file(path).map_err(CliError::input)?).map_err(CliError::input)
}

fn gen(cfg: &RunConfig, a: &GenArgs, out: &Path) -> Result<(), CliError> {
    let mut synth = prodnet::synth::SynthConfig { seed: cfg.seed, ..cfg.synth.clone() };
    if let Some(n) = a.n_firms {
        synth.n_firms = n;
    }
    if let Some(d) = a.mean_degree {
        synth.target_mean_degree = d;
    }
    synth.validate().map_err(|e| ConfigError::RangeError(e.to_string()))?;
    let eco = prodnet::synth::generate_ground_truth(&synth).map_err(PipelineError::from)?;
    let table = derive_sector_table(&eco.network, &eco.accounts, &eco.sectors).map_err(PipelineError::from)?;
    write_csv(&out.join("edges.csv"), |w| {
        io::write_network(w, &mut Vec::new(), &eco.network, &eco.accounts, &eco.sectors)
    })?;
    write_csv(&out.join("nodes.csv"), |w| {
        io::write_network(&mut Vec::new(), w, &eco.network, &eco.accounts, &eco.sectors)
    })?;
    write_csv(&out.join("sectors.csv"), |w| io::write_sectors(w, &table))?;
    info!("generated {} firms and {} links", eco.network.n_nodes(), eco.network.n_edges());
    Ok(())
}

fn trim(cfg: &RunConfig, a: &TrimArgs, out: &Path) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(k) = a.n_keep {
        cfg.n_keep = k;
    }
    let points = match (a.fraction, a.match_degree) {
        (Some(f), _) => vec![SweepPoint::Fraction(f)],
        (None, true) => vec![SweepPoint::MatchDegree],
        (None, false) => cfg.sweep.clone(),
    };
    cfg.sweep = points;
    let cfg = cfg.validate()?;

    let data = load_input(&a.network)?;
    let table = match &a.sectors {
        Some(p) => io::load_sectors(p).map_err(CliError::input)?,
        None => derive_sector_table(&data.network, &data.accounts, &data.sectors).map_err(PipelineError::from)?,
    };
    let kept = prodnet::sampling::select_top_firms(&data.network, &data.accounts, cfg.n_keep)
        .map_err(PipelineError::from)?;
    let subnet = prodnet::sampling::induced_subnetwork(&data.network, &kept).map_err(PipelineError::from)?;
    for &point in &cfg.sweep {
        for r in 0..cfg.replicates {
            let seed = pipeline::replicate_seed(&cfg, r);
            let t = match point {
                SweepPoint::Fraction(f) => prodnet::sampling::trim_fraction(&subnet, f, seed),
                SweepPoint::MatchDegree => prodnet::sampling::trim_links(&subnet, cfg.target_mean_degree, seed),
            }
            .map_err(PipelineError::from)?;
            let px = aggregate_proxy(&data.network, &data.accounts, &kept, &t.kept).map_err(PipelineError::from)?;
            let acc = if a.impute || cfg.impute_accounts {
                let labels: Vec<_> = px.firm_ids.iter().map(|&i| data.sectors[i]).collect();
                impute_from_sectors(&px.accounts, &table, &labels).map_err(PipelineError::from)?
            } else {
                px.accounts.clone()
            };
            let dir = pipeline::replicate_dir(out, point, r);
            let proxy = px.network.proxy();
            write_csv(&dir.join("topology.csv"), |w| io::write_topology(w, px.network.topology()))?;
            write_csv(&dir.join("accounts.csv"), |w| io::write_accounts(w, &acc, &px.firm_ids, proxy))?;
            let sub_t = subnet.topology();
            let deleted = t.deleted.iter().map(|&e| (kept[sub_t.src(e)], kept[sub_t.dst(e)], subnet.weights()[e]));
            write_csv(&dir.join("deleted.csv"), |w| io::write_edges(w, deleted))?;
        }
    }
    info!("wrote {} replicate(s) at {} sweep point(s)", cfg.replicates, cfg.sweep.len());
    Ok(())
}

fn reconstruct(cfg: &RunConfig, a: &ReconstructArgs, out: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    if let Some(m) = a.max_iter {
        cfg.max_iter = m;
    }
    let cfg = cfg.validate()?;
    let acc = load_accounts(&a.accounts)?;
    let t = io::read_topology(io::open_file(&a.topology).map_err(CliError::input)?, acc.accounts.len(), acc.proxy)
        .map_err(CliError::input)?;
    let res = prodnet::recon::fit_crem(&t, &acc.accounts.s_out, &acc.accounts.s_in, pipeline::crem_options(&cfg))
        .map_err(PipelineError::from)?;
    info!("balanced {} links in {} sweeps, relative L1 {:e}", res.n_edges(), res.iterations, res.rel_l1);
    emit(out, csv_bytes(|w| io::write_reconstruction(w, &res))?)
}

/// Expected-weight network of a reconstruction with its accounts.
fn load_reconstruction(recon: &Path, accounts: &Path) -> Result<(WeightedNetwork, NodeAccounts, io::AccountsData), CliError> {
    let acc = load_accounts(accounts)?;
    let net = io::read_reconstruction(io::open_file(recon).map_err(CliError::input)?, acc.accounts.len(), acc.proxy)
        .map_err(CliError::input)?;
    let rec_acc = NodeAccounts::from_network(&net, acc.accounts.value_added.clone(), acc.accounts.final_demand.clone())
        .map_err(PipelineError::from)?;
    Ok((net, rec_acc, acc))
}

fn multipliers(cfg: &RunConfig, a: &MultipliersArgs, out: Option<&Path>) -> Result<(), CliError> {
    let alpha = a.alpha.unwrap_or(cfg.alpha);
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ConfigError::RangeError(format!("alpha = {alpha} outside (0, 1]")).into());
    }
    let (net, acc, _) = load_reconstruction(&a.recon, &a.accounts)?;
    let proxy = if a.exclude_proxy { net.proxy().map(FirmId::index) } else { None };
    let values = match a.kind {
        Kind::Output => {
            let t = technical_coefficients(&net, &acc).map_err(PipelineError::from)?;
            let t = match proxy {
                Some(p) => t.without_node(p),
                None => t,
            };
            output_multipliers(&t).map_err(PipelineError::from)?
        }
        Kind::Influence => {
            let s = input_shares(&net, &acc).map_err(PipelineError::from)?;
            let s = match proxy {
                Some(p) => s.without_node(p),
                None => s,
            };
            influence_from_shares(&s, alpha).map_err(PipelineError::from)?
        }
    };
    // the proxy is last, so dropping it leaves the firm labels unchanged
    emit(out, csv_bytes(|w| io::write_node_values(w, values.into_iter().enumerate()))?)
}

fn shock(cfg: &RunConfig, a: &ShockArgs, out: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    if let Some(p) = a.periods {
        cfg.periods = p;
    }
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    if let Some(al) = a.alpha {
        cfg.alpha = al;
    }
    let cfg = cfg.validate()?;
    let data = load_input(&a.network)?;
    let (net, acc, ad) = load_reconstruction(&a.recon, &a.accounts)?;
    let truth = GroundTruth::build(data, &cfg, Some(ad.firm_ids))?;
    let (report, _) = pipeline::volatility(&truth, net.shared_topology(), &net, &acc, cfg.alpha)?;
    emit(out, json_bytes(&report))
}

/// Replicate index and sweep point encoded in a `trim` output path.
fn replicate_meta_from_path(dir: &Path) -> (usize, Option<f64>) {
    let name = |p: Option<&Path>| p.and_then(|p| p.file_name()).and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let canon = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    let r = name(Some(&canon)).strip_prefix("replicate-").and_then(|r| r.parse().ok()).unwrap_or(0);
    let frac = name(canon.parent()).strip_prefix("frac-").and_then(|f| f.parse().ok());
    (r, frac)
}

fn eval(cfg: &RunConfig, a: &EvalArgs, out: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    cfg.weight_errors |= a.weight_errors;
    let data = load_input(&a.network)?;
    let acc = load_accounts(&a.replicate.join("accounts.csv"))?;
    let n = acc.accounts.len();
    let topo = io::read_topology(io::open_file(&a.replicate.join("topology.csv")).map_err(CliError::input)?, n, acc.proxy)
        .map_err(CliError::input)?;
    let recon_path = a.recon.clone().unwrap_or_else(|| a.replicate.join("recon.csv"));
    let mut res = io::read_reconstruction_result(io::open_file(&recon_path).map_err(CliError::input)?, n, acc.proxy)
        .map_err(CliError::input)?;

    let k = acc.firm_ids.len();
    let firm_pairs: Vec<(usize, usize)> = topo.edges().filter(|&(s, d)| s < k && d < k).collect();
    let kept_topology = Topology::new(k, &firm_pairs, None).map_err(PipelineError::from)?;
    let truth = GroundTruth::build(data, &cfg, Some(acc.firm_ids.clone()))?;
    let px: ProxiedNetwork = aggregate_proxy(&truth.data.network, &truth.data.accounts, &truth.kept, &kept_topology)
        .map_err(PipelineError::from)?;

    let (s_in, s_out) = res.expected_network().strengths();
    res.l1 = l1_error(&s_in, &s_out, &acc.accounts.s_in, &acc.accounts.s_out).map_err(PipelineError::from)?;
    res.rel_l1 = res.l1 / acc.accounts.s_out.iter().sum::<f64>();

    let (replicate, unknown_fraction) = replicate_meta_from_path(&a.replicate);
    let meta = ReplicateMeta { replicate, seed: pipeline::replicate_seed(&cfg, replicate), unknown_fraction };
    let report = pipeline::evaluate(&truth, &px, &acc.accounts, &res, &cfg, meta)?;
    emit(out, json_bytes(&report))
}

fn run(mut cfg: RunConfig, a: &RunArgs, out: &Path, jobs: usize) -> Result<(), CliError> {
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    let cfg = cfg.validate()?;
    if jobs == 0 {
        return Err(ConfigError::RangeError("--jobs must be at least 1".into()).into());
    }
    let data = match &cfg.input {
        Some(p) => io::load_network(&p.edges, &p.nodes).map_err(CliError::input)?,
        None => pipeline::load_or_generate(&cfg)?,
    };
    let truth = GroundTruth::build(data, &cfg, None)?;
    let outcome = pipeline::run_on_truth(&truth, &cfg, out, jobs)?;
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failures(outcome.failures.len()))
    }
}

fn report(out: &Path) -> Result<(), CliError> {
    if !out.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", out.display())));
    }
    let summary = pipeline::summarize_dir(out)?;
    pipeline::write_summary(out, &summary)?;
    let failed: usize = summary.points.iter().map(|p| p.n_failed).sum();
    if failed > 0 {
        return Err(CliError::Failures(failed));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct HarmonizeSummary {
    method: LabourShareMethod,
    scores: Vec<MethodScore>,
    n_rows: usize,
    n_cleaned: usize,
    dropped: Vec<(String, i32)>,
    corrections: Vec<(String, i32)>,
    dropped_fraction: f64,
}

fn harmonize(cfg: &RunConfig, a: &HarmonizeArgs, out: &Path) -> Result<(), CliError> {
    let rows = io::read_financials(io::open_file(&a.input).map_err(CliError::input)?).map_err(CliError::input)?;
    let ratios: HashMap<String, (f64, f64)> = match &a.sector_ratios {
        Some(p) => io::read_sector_ratios(io::open_file(p).map_err(CliError::input)?)
            .map_err(CliError::input)?
            .into_iter()
            .map(|(s, f, k)| (s, (f, k)))
            .collect(),
        None => HashMap::new(),
    };
    let cleaning = clean_accounting(&rows);
    let scores = if a.method == "auto" {
        select_method(&cleaning.cleaned, a.holdout, cfg.seed).map_err(PipelineError::from)?
    } else {
        Vec::new()
    };
    let method = if a.method == "auto" {
        scores
            .iter()
            .min_by(|x, y| x.labour_rmse.total_cmp(&y.labour_rmse))
            .map(|s| s.method)
            .ok_or_else(|| PipelineError::Invalid("no method could be scored".into()))?
    } else {
        a.method.parse().map_err(|e: prodnet::harmonize::HarmonizeError| ConfigError::RangeError(e.to_string()))?
    };
    let model = fit_labour_share(method, &cleaning.cleaned).map_err(PipelineError::from)?;
    let estimated = estimate_labour(&cleaning.cleaned, &model).map_err(PipelineError::from)?;

    let mut out_rows = Vec::with_capacity(estimated.len());
    for r in &estimated {
        let (final_demand, gfcf) = match ratios.get(&r.sector) {
            Some(&(f, k)) => {
                let (f, k, _) = impute_demand_and_gfcf(r.revenue, f, k).map_err(PipelineError::from)?;
                (Some(f), Some(k))
            }
            None => (None, None),
        };
        let flag = if r.labour.is_none() {
            "estimated"
        } else if r.labour_in_cogs {
            "labour-in-cogs"
        } else {
            "disclosed"
        };
        out_rows.push(HarmonizedRow {
            firm: r.firm.clone(),
            year: r.year,
            sector: r.sector.clone(),
            revenue: r.revenue,
            cogs: r.cogs,
            labour: r.labour,
            ebit: r.ebit,
            depamort: r.depamort,
            labour_hat: r.labour_value(),
            intermediate_hat: r.intermediate(),
            value_added: r.value_added(),
            final_demand,
            gfcf,
            flag: flag.to_string(),
        });
    }
    write_csv(&out.join("harmonized.csv"), |w| io::write_harmonized(w, &out_rows))?;
    let summary = HarmonizeSummary {
        method,
        scores,
        n_rows: rows.len(),
        n_cleaned: cleaning.cleaned.len(),
        dropped_fraction: cleaning.dropped_fraction(),
        dropped: cleaning.dropped,
        corrections: cleaning.corrections,
    };
    pipeline::write_file(&out.join("harmonize_summary.json"), json_bytes(&summary))?;
    info!("harmonized {} rows with method {method}", out_rows.len());
    Ok(())
}
