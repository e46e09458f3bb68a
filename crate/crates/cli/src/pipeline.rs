//! The experimental protocol: ground truth, trimmed replicates,
//! reconstruction and evaluation, and the summary across replicates.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};
use prodnet::coeffs::{
    allocation_coefficients, influence_vector, output_multipliers, technical_coefficients, uniform_influence,
    CoeffError,
};
use prodnet::harmonize::HarmonizeError;
use prodnet::io::{IoError, NetworkData};
use prodnet::metrics::{
    align_edge_values, ci_coverage, powerlaw_fit, Comparison, MetricsError, MetricsReport, VolatilityReport,
};
use prodnet::recon::{fit_crem, CremOptions, IpfOptions, ReconError, ReconstructionResult};
use prodnet::rng::mix_seed;
use prodnet::sampling::{
    aggregate_proxy, impute_from_sectors, induced_subnetwork, select_top_firms, trim_fraction, trim_links,
    ProxiedNetwork, SamplingError, TrimResult,
};
use prodnet::shocks::{aggregate_volatility, simulate_tfp, variance_shares, ShockError, ShockPanel};
use prodnet::synth::{derive_sector_table, generate_ground_truth, SectorTable, SynthError};
use prodnet::{NetError, NodeAccounts, Topology, WeightedNetwork};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{RunConfig, SweepPoint};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error(transparent)]
    Shock(#[from] ShockError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Harmonize(#[from] HarmonizeError),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Write { path: dir.display().to_string(), source })?;
    }
    fs::write(path, contents).map_err(|source| PipelineError::Write { path: path.display().to_string(), source })
}

/// Ground-truth network, or a generated one seeded by the run seed.
pub fn load_or_generate(cfg: &RunConfig) -> Result<NetworkData, PipelineError> {
    match &cfg.input {
        Some(paths) => Ok(prodnet::io::load_network(&paths.edges, &paths.nodes)?),
        None => {
            let synth = prodnet::synth::SynthConfig { seed: cfg.seed, ..cfg.synth.clone() };
            let eco = generate_ground_truth(&synth)?;
            Ok(NetworkData { network: eco.network, accounts: eco.accounts, sectors: eco.sectors })
        }
    }
}

/// Everything computed once per run from the full network.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub data: NetworkData,
    pub table: SectorTable,
    /// Original ids of the kept firms, ascending.
    pub kept: Vec<usize>,
    /// Network induced by the kept firms.
    pub subnet: WeightedNetwork,
    /// Output multipliers of every firm in the full network.
    pub multipliers: Vec<f64>,
    /// Influence vector of the full network.
    pub influence: Vec<f64>,
    /// Shocks of the kept firms with the proxy series appended.
    pub panel: ShockPanel,
    pub empirical_vol: f64,
}

impl GroundTruth {
    /// `kept` defaults to the top `cfg.n_keep` firms.
    pub fn build(data: NetworkData, cfg: &RunConfig, kept: Option<Vec<usize>>) -> Result<Self, PipelineError> {
        if data.network.proxy().is_some() {
            return Err(PipelineError::Invalid("the ground-truth network must not contain a proxy node".into()));
        }
        let table = derive_sector_table(&data.network, &data.accounts, &data.sectors)?;
        let kept = match kept {
            Some(k) => k,
            None => select_top_firms(&data.network, &data.accounts, cfg.n_keep)?,
        };
        let subnet = induced_subnetwork(&data.network, &kept)?;
        let multipliers = output_multipliers(&technical_coefficients(&data.network, &data.accounts)?)?;
        let influence = influence_vector(&data.network, &data.accounts, cfg.alpha)?;

        let n = data.network.n_nodes();
        let full_panel = simulate_tfp(n, cfg.periods, cfg.sigma, cfg.seed, None)?;
        let empirical_vol = aggregate_volatility(&full_panel, &influence, true)?;
        let mut is_kept = vec![false; n];
        for &i in &kept {
            is_kept[i] = true;
        }
        let excluded: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();
        if excluded.is_empty() {
            return Err(PipelineError::Invalid("every firm is kept; nothing to fold into the proxy".into()));
        }
        let panel = full_panel.subset(&kept)?.with_proxy(&full_panel.subset(&excluded)?, cfg.proxy_shock_rule)?;
        Ok(GroundTruth { data, table, kept, subnet, multipliers, influence, panel, empirical_vol })
    }
}

/// Seed of replicate `r`, shared by every sweep point.
pub fn replicate_seed(cfg: &RunConfig, replicate: usize) -> u64 {
    mix_seed(cfg.seed, replicate as u64)
}

/// Trims the kept-firm network and folds the rest into the proxy.
pub fn build_replicate(
    truth: &GroundTruth,
    cfg: &RunConfig,
    point: SweepPoint,
    replicate: usize,
) -> Result<(ProxiedNetwork, TrimResult), PipelineError> {
    let seed = replicate_seed(cfg, replicate);
    let trim = match point {
        SweepPoint::Fraction(f) => trim_fraction(&truth.subnet, f, seed)?,
        SweepPoint::MatchDegree => trim_links(&truth.subnet, cfg.target_mean_degree, seed)?,
    };
    let px = aggregate_proxy(&truth.data.network, &truth.data.accounts, &truth.kept, &trim.kept)?;
    Ok((px, trim))
}

/// Accounts handed to the reconstruction: true ones, or with sector-ratio
/// value added and final demand for the kept firms.
pub fn reconstruction_accounts(
    truth: &GroundTruth,
    px: &ProxiedNetwork,
    cfg: &RunConfig,
) -> Result<NodeAccounts, PipelineError> {
    if !cfg.impute_accounts {
        return Ok(px.accounts.clone());
    }
    let labels: Vec<_> = px.firm_ids.iter().map(|&i| truth.data.sectors[i]).collect();
    Ok(impute_from_sectors(&px.accounts, &truth.table, &labels)?)
}

pub fn crem_options(cfg: &RunConfig) -> CremOptions {
    CremOptions {
        ipf: IpfOptions { tol: cfg.tol, max_iter: cfg.max_iter },
        q_low: cfg.q_low,
        q_high: cfg.q_high,
        lambda_source: cfg.lambda_source,
    }
}

pub fn reconstruct(px_net: &WeightedNetwork, acc: &NodeAccounts, cfg: &RunConfig) -> Result<ReconstructionResult, PipelineError> {
    Ok(fit_crem(px_net.topology(), &acc.s_out, &acc.s_in, crem_options(cfg))?)
}

/// Identifies one evaluated replicate in its report.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateMeta {
    pub replicate: usize,
    pub seed: u64,
    pub unknown_fraction: Option<f64>,
}

fn firm_values(px: &ProxiedNetwork, values: &[f64]) -> Vec<f64> {
    values[..px.firm_ids.len()].to_vec()
}

/// Volatility of the reconstruction and of the equal-shares benchmark.
/// `bench_topology` carries the equal-shares benchmark; its last node is the proxy.
pub fn volatility(
    truth: &GroundTruth,
    bench_topology: Arc<Topology>,
    rec_net: &WeightedNetwork,
    rec_acc: &NodeAccounts,
    alpha: f64,
) -> Result<(VolatilityReport, Vec<f64>), PipelineError> {
    let v = influence_vector(rec_net, rec_acc, alpha)?;
    let bench = uniform_influence(bench_topology, alpha)?;
    let k = truth.kept.len();
    let shares = variance_shares(&truth.panel, &v, &[(0..k).collect(), vec![k]])?;
    let report = VolatilityReport {
        empirical_vol: truth.empirical_vol,
        recon_vol_with_proxy: aggregate_volatility(&truth.panel, &v, true)?,
        recon_vol_no_proxy: aggregate_volatility(&truth.panel, &v, false)?,
        benchmark_vol_with_proxy: aggregate_volatility(&truth.panel, &bench, true)?,
        benchmark_vol_no_proxy: aggregate_volatility(&truth.panel, &bench, false)?,
        shares: [shares[0], shares[1]],
    };
    Ok((report, v))
}

/// Compares a reconstruction with the trimmed network it was built from
/// and with the full ground truth.
pub fn evaluate(
    truth: &GroundTruth,
    px: &ProxiedNetwork,
    recon_acc: &NodeAccounts,
    res: &ReconstructionResult,
    cfg: &RunConfig,
    meta: ReplicateMeta,
) -> Result<MetricsReport, PipelineError> {
    let rec_net = res.expected_network();
    let rec_acc = NodeAccounts::from_network(&rec_net, recon_acc.value_added.clone(), recon_acc.final_demand.clone())?;
    let emp_net = &px.network;
    let emp_t = emp_net.topology();
    let rec_t = rec_net.topology();

    let (w_rec, w_emp) = align_edge_values(rec_t, rec_net.weights(), emp_t, emp_net.weights(), true);
    let weights = Comparison::new(&w_rec, &w_emp, cfg.weight_errors)?;

    let t_emp = technical_coefficients(emp_net, &px.accounts)?;
    let t_rec = technical_coefficients(&rec_net, &rec_acc)?;
    let (a, b) = align_edge_values(&t_rec.topology, &t_rec.values, &t_emp.topology, &t_emp.values, true);
    let technical = Comparison::new(&a, &b, true)?;

    let b_emp = allocation_coefficients(emp_net, &px.accounts)?;
    let b_rec = allocation_coefficients(&rec_net, &rec_acc)?;
    let (a, b) = align_edge_values(&b_rec.topology, &b_rec.values, &b_emp.topology, &b_emp.values, true);
    let allocation = Comparison::new(&a, &b, true)?;

    let o_rec = output_multipliers(&t_rec)?;
    let o_emp: Vec<f64> = px.firm_ids.iter().map(|&i| truth.multipliers[i]).collect();
    let output_multipliers = Comparison::new(&firm_values(px, &o_rec), &o_emp, true)?;

    let (vol, v_rec) = volatility(truth, px.network.shared_topology(), &rec_net, &rec_acc, cfg.alpha)?;
    let v_emp: Vec<f64> = px.firm_ids.iter().map(|&i| truth.influence[i]).collect();
    let influence = Comparison::new(&firm_values(px, &v_rec), &v_emp, true)?;

    // empirical firm-to-firm weights against the bands of the same edges
    let (mut w, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
    for (e, (s, d)) in emp_t.edges().enumerate() {
        if emp_t.touches_proxy(e) {
            continue;
        }
        w.push(emp_net.weights()[e]);
        match res.topology.find_edge(s, d) {
            Some(r) => {
                lo.push(res.ci_low[r]);
                hi.push(res.ci_high[r]);
            }
            None => {
                lo.push(0.0);
                hi.push(0.0);
            }
        }
    }
    let coverage = ci_coverage(&w, &lo, &hi)?;
    let (proxy_expenditure_share, proxy_sales_share) = px.proxy_shares();

    let firm_weights = |net: &WeightedNetwork| -> Vec<f64> {
        let t = net.topology();
        net.weights().iter().enumerate().filter(|(e, _)| !t.touches_proxy(*e)).map(|(_, &x)| x).collect()
    };

    let report = MetricsReport {
        replicate: meta.replicate,
        seed: meta.seed,
        unknown_fraction: meta.unknown_fraction,
        n_nodes: px.firm_ids.len(),
        n_edges: w.len(),
        mean_degree: w.len() as f64 / px.firm_ids.len() as f64,
        l1: res.l1,
        rel_l1: res.rel_l1,
        ipf_iterations: res.iterations,
        weights,
        technical,
        allocation,
        output_multipliers,
        influence,
        ci_coverage: coverage,
        proxy_expenditure_share,
        proxy_sales_share,
        powerlaw_empirical: powerlaw_fit(&firm_weights(emp_net), None).ok(),
        powerlaw_reconstructed: powerlaw_fit(&firm_weights(&rec_net), None).ok(),
        volatility: vol,
    };
    report.validate().map_err(PipelineError::Invalid)?;
    Ok(report)
}

/// Trim, reconstruct and evaluate one replicate at one sweep point.
pub fn run_replicate(
    truth: &GroundTruth,
    cfg: &RunConfig,
    point: SweepPoint,
    replicate: usize,
) -> Result<MetricsReport, PipelineError> {
    let start = Instant::now();
    let (px, _) = build_replicate(truth, cfg, point, replicate)?;
    let acc = reconstruction_accounts(truth, &px, cfg)?;
    let trimmed = start.elapsed();
    let res = reconstruct(&px.network, &acc, cfg)?;
    let fitted = start.elapsed();
    let meta = ReplicateMeta { replicate, seed: replicate_seed(cfg, replicate), unknown_fraction: point.fraction() };
    let report = evaluate(truth, &px, &acc, &res, cfg, meta)?;
    debug!(
        "{} replicate {replicate}: trim {:.2?}, reconstruct {:.2?} ({} sweeps), evaluate {:.2?}",
        point.label(),
        trimmed,
        fitted - trimmed,
        res.iterations,
        start.elapsed() - fitted
    );
    Ok(report)
}

/// Mean and sample standard deviation of every numeric report field at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub point: String,
    pub unknown_fraction: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean: BTreeMap<String, f64>,
    pub sd: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub points: Vec<PointSummary>,
}

impl Summary {
    pub fn point(&self, label: &str) -> Option<&PointSummary> {
        self.points.iter().find(|p| p.point == label)
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, f64>) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                out.insert(prefix.to_string(), x);
            }
        }
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        serde_json::Value::Array(a) => {
            for (k, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}.{k}"), x, out);
            }
        }
        _ => {}
    }
}

/// Numeric leaves of a report keyed by dotted path, without identifiers.
pub fn flatten_report(r: &MetricsReport) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    flatten("", &serde_json::to_value(r).expect("reports serialize"), &mut out);
    out.remove("replicate");
    out.remove("seed");
    out.remove("unknown_fraction");
    out
}

pub fn summarize_point(point: SweepPoint, reports: &[MetricsReport], n_failed: usize) -> PointSummary {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in flatten_report(r) {
            columns.entry(k).or_default().push(v);
        }
    }
    let mut mean = BTreeMap::new();
    let mut sd = BTreeMap::new();
    for (k, xs) in columns {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        mean.insert(k.clone(), m);
        sd.insert(k, var.sqrt());
    }
    PointSummary {
        point: point.label(),
        unknown_fraction: point.fraction(),
        n_ok: reports.len(),
        n_failed,
        mean,
        sd,
    }
}

/// Wide CSV: one row per sweep point, `<metric>_mean` and `<metric>_sd` columns.
pub fn sweep_csv(summary: &Summary) -> String {
    let keys: std::collections::BTreeSet<&String> = summary.points.iter().flat_map(|p| p.mean.keys()).collect();
    let mut out = String::from("point,unknown_fraction,n_ok,n_failed");
    for k in &keys {
        out.push_str(&format!(",{k}_mean,{k}_sd"));
    }
    out.push('\n');
    for p in &summary.points {
        let frac = p.unknown_fraction.map(|f| f.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}", p.point, frac, p.n_ok, p.n_failed));
        for k in &keys {
            let cell = |m: &BTreeMap<String, f64>| m.get(*k).map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(",{},{}", cell(&p.mean), cell(&p.sd)));
        }
        out.push('\n');
    }
    out
}

pub fn replicate_dir(out: &Path, point: SweepPoint, replicate: usize) -> PathBuf {
    out.join(point.label()).join(format!("replicate-{replicate:03}"))
}

/// Writes `report_summary.json` and `sweep.csv` into `out`.
pub fn write_summary(out: &Path, summary: &Summary) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(summary).expect("summaries serialize");
    write_file(&out.join("report_summary.json"), json + "\n")?;
    write_file(&out.join("sweep.csv"), sweep_csv(summary))
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    /// `(point, replicate, error)` for every failed replicate.
    pub failures: Vec<(String, usize, String)>,
}

/// Full protocol into `out`: one `report.json` per replicate and sweep
/// point, then the summary. Failed replicates are logged and skipped.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunOutcome, PipelineError> {
    let data = load_or_generate(cfg)?;
    info!("ground truth: {} firms, {} links", data.network.n_nodes(), data.network.n_edges());
    let truth = GroundTruth::build(data, cfg, None)?;
    info!("kept {} firms, {} links among them", truth.kept.len(), truth.subnet.n_edges());
    run_on_truth(&truth, cfg, out, jobs)
}

pub fn run_on_truth(truth: &GroundTruth, cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunOutcome, PipelineError> {
    let tasks: Vec<(SweepPoint, usize)> =
        cfg.sweep.iter().flat_map(|&p| (0..cfg.replicates).map(move |r| (p, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<MetricsReport, String>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(p, r)| {
                let result = run_replicate(truth, cfg, p, r).map_err(|e| e.to_string());
                let dir = replicate_dir(out, p, r);
                let written = match &result {
                    Ok(report) => write_file(
                        &dir.join("report.json"),
                        serde_json::to_string_pretty(report).expect("reports serialize") + "\n",
                    ),
                    Err(e) => write_file(&dir.join("error.txt"), format!("{e}\n")),
                };
                match (result, written) {
                    (Ok(report), Ok(())) => Ok(report),
                    (Err(e), _) => Err(e),
                    (Ok(_), Err(e)) => Err(e.to_string()),
                }
            })
            .collect()
    });

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (k, &point) in cfg.sweep.iter().enumerate() {
        let chunk = &results[k * cfg.replicates..(k + 1) * cfg.replicates];
        let mut ok = Vec::new();
        for (r, res) in chunk.iter().enumerate() {
            match res {
                Ok(rep) => ok.push(rep.clone()),
                Err(e) => {
                    warn!("{point} replicate {r}: {e}");
                    failures.push((point.label(), r, e.clone()));
                }
            }
        }
        points.push(summarize_point(point, &ok, chunk.len() - ok.len()));
    }
    let summary = Summary { points };
    write_summary(out, &summary)?;
    if !failures.is_empty() {
        let log: String = failures.iter().map(|(p, r, e)| format!("{p}\t{r}\t{e}\n")).collect();
        write_file(&out.join("errors.log"), log)?;
    }
    Ok(RunOutcome { summary, failures })
}

/// Rebuilds the summary from the `report.json` and `error.txt` files under `out`.
pub fn summarize_dir(out: &Path) -> Result<Summary, PipelineError> {
    let read_dir = |p: &Path| {
        fs::read_dir(p).map_err(|source| IoError::Open { path: p.display().to_string(), source })
    };
    let mut groups: Vec<(SweepPoint, Vec<MetricsReport>, usize)> = Vec::new();
    let mut entries: Vec<PathBuf> = read_dir(out)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    entries.sort();
    for dir in entries {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let point = if name == "match-degree" {
            SweepPoint::MatchDegree
        } else if let Some(f) = name.strip_prefix("frac-").and_then(|f| f.parse().ok()) {
            SweepPoint::Fraction(f)
        } else {
            continue;
        };
        let mut reps: Vec<PathBuf> = read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        reps.sort();
        let mut reports = Vec::new();
        let mut failed = 0;
        for rep in reps {
            let path = rep.join("report.json");
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|source| IoError::Open { path: path.display().to_string(), source })?;
                let report: MetricsReport = serde_json::from_str(&text)
                    .map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
                report.validate().map_err(|e| PipelineError::Invalid(format!("{}: {e}", path.display())))?;
                reports.push(report);
            } else if rep.join("error.txt").exists() {
                failed += 1;
            }
        }
        groups.push((point, reports, failed));
    }
    groups.sort_by(|a, b| match (a.0, b.0) {
        (SweepPoint::Fraction(x), SweepPoint::Fraction(y)) => x.total_cmp(&y),
        (SweepPoint::Fraction(_), SweepPoint::MatchDegree) => std::cmp::Ordering::Less,
        (SweepPoint::MatchDegree, SweepPoint::Fraction(_)) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Equal,
    });
    Ok(Summary { points: groups.iter().map(|(p, r, f)| summarize_point(*p, r, *f)).collect() })
}
