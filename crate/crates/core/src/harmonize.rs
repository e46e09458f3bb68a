//! Firm financial statements to input-output accounts.
//!
//! Labour costs are missing for firms that lump them into the cost of goods
//! sold. A sector-year labour share, estimated from disclosing firms over a
//! three-year rolling window, splits those cost pools into labour and
//! intermediate inputs. Value added, final demand and capital formation
//! follow, and an accounting check repairs or drops inconsistent firms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::distr::{Distribution, Open01};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::median;
use crate::rng::{phase_rng, Phase};

pub const WINDOW: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarmonizeError {
    #[error("labour plus cost of goods sold is zero")]
    ZeroDenominator,
    #[error("sector {0} has no disclosing firm in any window")]
    EmptySectorWindow(String),
    #[error("no labour share for sector {sector} in {year}")]
    UncoveredSectorYear { sector: String, year: i32 },
    #[error("sector ratio {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("unknown labour-share method {0:?}")]
    UnknownMethod(String),
    #[error("hold-out fraction {0} must lie in (0, 1)")]
    InvalidHoldout(f64),
    #[error("empty panel")]
    EmptyPanel,
}

/// One firm-year of financial statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmFinancials {
    pub firm: String,
    pub year: i32,
    pub sector: String,
    /// Revenues `q`.
    pub revenue: f64,
    /// Cost of goods sold `g`, net of depreciation and amortisation.
    pub cogs: f64,
    /// Disclosed labour expenses `w`; `None` when not disclosed.
    pub labour: Option<f64>,
    pub ebit: f64,
    pub depamort: f64,
    /// Disclosed labour is also inside `cogs`.
    #[serde(default)]
    pub labour_in_cogs: bool,
    /// Estimated labour for non-disclosing rows.
    #[serde(default)]
    pub labour_hat: Option<f64>,
}

impl FirmFinancials {
    /// Labour share of this row's cost pool, when labour is disclosed.
    pub fn share(&self) -> Option<f64> {
        let w = self.labour?;
        if self.labour_in_cogs {
            (self.cogs > 0.0).then(|| w / self.cogs)
        } else {
            cogs_labour_share(w, self.cogs).ok()
        }
    }

    /// Labour plus intermediate costs.
    pub fn cost_pool(&self) -> f64 {
        match self.labour {
            Some(w) if !self.labour_in_cogs => self.cogs + w,
            _ => self.cogs,
        }
    }

    /// Disclosed or estimated labour (zero when neither is known).
    pub fn labour_value(&self) -> f64 {
        self.labour.or(self.labour_hat).unwrap_or(0.0)
    }

    pub fn intermediate(&self) -> f64 {
        match (self.labour, self.labour_hat) {
            (Some(w), _) if self.labour_in_cogs => self.cogs - w,
            (Some(_), _) => self.cogs,
            (None, Some(w_hat)) => self.cogs - w_hat,
            (None, None) => self.cogs,
        }
    }

    pub fn value_added(&self) -> f64 {
        firm_value_added(self.labour_value(), self.ebit, self.depamort)
    }

    /// `q - x - y`: costs not accounted for; negative means inconsistent.
    pub fn residual(&self) -> f64 {
        self.revenue - self.intermediate() - self.value_added()
    }
}

/// `w / (g + w)`.
pub fn cogs_labour_share(w: f64, g: f64) -> Result<f64, HarmonizeError> {
    if w + g > 0.0 {
        Ok(w / (g + w))
    } else {
        Err(HarmonizeError::ZeroDenominator)
    }
}

/// `y = w + EBIT + da`.
pub fn firm_value_added(w: f64, ebit: f64, da: f64) -> f64 {
    w + ebit + da
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabourShareMethod {
    /// Sector mean of firm window means.
    #[serde(rename = "1")]
    FirmMean,
    /// Window mean of sector means.
    #[serde(rename = "2a")]
    SectorMean,
    /// Window mean of sector ratio-of-sums.
    #[serde(rename = "2b")]
    RatioOfSums,
    /// Cost-weighted window average of sector means.
    #[serde(rename = "3")]
    Weighted,
}

impl LabourShareMethod {
    pub const ALL: [LabourShareMethod; 4] = [Self::FirmMean, Self::SectorMean, Self::RatioOfSums, Self::Weighted];
}

impl fmt::Display for LabourShareMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FirmMean => "1",
            Self::SectorMean => "2a",
            Self::RatioOfSums => "2b",
            Self::Weighted => "3",
        })
    }
}

impl FromStr for LabourShareMethod {
    type Err = HarmonizeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Self::FirmMean),
            "2a" => Ok(Self::SectorMean),
            "2b" => Ok(Self::RatioOfSums),
            "3" => Ok(Self::Weighted),
            other => Err(HarmonizeError::UnknownMethod(other.to_string())),
        }
    }
}

/// Forward-fill past the last point, back-fill before the first, and
/// interpolate linearly in between.
pub fn fill_gaps(points: &BTreeMap<i32, f64>, year: i32) -> Option<f64> {
    if let Some(&v) = points.get(&year) {
        return Some(v);
    }
    let before = points.range(..year).next_back();
    let after = points.range(year + 1..).next();
    match (before, after) {
        (Some((_, &v)), None) | (None, Some((_, &v))) => Some(v),
        (Some((&t0, &v0)), Some((&t1, &v1))) => Some(v0 + (v1 - v0) * f64::from(year - t0) / f64::from(t1 - t0)),
        (None, None) => None,
    }
}

/// Sector-year labour shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabourShareModel {
    pub method: LabourShareMethod,
    pub window: i32,
    pub shares: BTreeMap<String, BTreeMap<i32, f64>>,
}

impl LabourShareModel {
    /// Share for a sector-year, gap-filled when the year itself has no estimate.
    pub fn share(&self, sector: &str, year: i32) -> Result<f64, HarmonizeError> {
        self.shares
            .get(sector)
            .and_then(|s| fill_gaps(s, year))
            .ok_or_else(|| HarmonizeError::UncoveredSectorYear { sector: sector.to_string(), year })
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (n, s) = xs.into_iter().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

/// Fits sector-year labour shares from the disclosing rows of `panel`.
///
/// Estimates exist for years `t >= first_year + 2` whose window
/// `{t-2, t-1, t}` has at least one disclosing firm in the sector.
pub fn fit_labour_share(method: LabourShareMethod, panel: &[FirmFinancials]) -> Result<LabourShareModel, HarmonizeError> {
    let first = panel.iter().map(|r| r.year).min().ok_or(HarmonizeError::EmptyPanel)?;
    let last = panel.iter().map(|r| r.year).max().unwrap_or(first);
    let sectors: BTreeSet<&str> = panel.iter().map(|r| r.sector.as_str()).collect();

    // (sector, year) -> disclosing (firm, share, w, pool)
    let mut by_sy: HashMap<(&str, i32), Vec<(&str, f64, f64, f64)>> = HashMap::new();
    for r in panel {
        if let (Some(a), Some(w)) = (r.share(), r.labour) {
            by_sy.entry((&r.sector, r.year)).or_default().push((&r.firm, a, w, r.cost_pool()));
        }
    }

    let mut shares = BTreeMap::new();
    for sector in sectors {
        let mut series = BTreeMap::new();
        for t in (first + WINDOW - 1)..=last {
            let window: Vec<(i32, &Vec<(&str, f64, f64, f64)>)> =
                (t - WINDOW + 1..=t).filter_map(|y| by_sy.get(&(sector, y)).map(|v| (y, v))).collect();
            if window.is_empty() {
                continue;
            }
            let value = match method {
                LabourShareMethod::FirmMean => {
                    let mut per_firm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                    for (_, rows) in &window {
                        for &(firm, a, _, _) in rows.iter() {
                            per_firm.entry(firm).or_default().push(a);
                        }
                    }
                    mean(per_firm.values().filter_map(|v| mean(v.iter().copied())))
                }
                LabourShareMethod::SectorMean => mean(window.iter().filter_map(|(_, rows)| mean(rows.iter().map(|r| r.1)))),
                LabourShareMethod::RatioOfSums => mean(window.iter().filter_map(|(_, rows)| {
                    let w: f64 = rows.iter().map(|r| r.2).sum();
                    let pool: f64 = rows.iter().map(|r| r.3).sum();
                    (pool > 0.0).then(|| w / pool)
                })),
                LabourShareMethod::Weighted => {
                    let pools: Vec<f64> = window.iter().map(|(_, rows)| rows.iter().map(|r| r.3).sum()).collect();
                    let total: f64 = pools.iter().sum();
                    (total > 0.0).then(|| {
                        window
                            .iter()
                            .zip(&pools)
                            .map(|((_, rows), p)| p / total * mean(rows.iter().map(|r| r.1)).unwrap_or(0.0))
                            .sum()
                    })
                }
            };
            if let Some(v) = value {
                series.insert(t, v.clamp(0.0, 1.0));
            }
        }
        if series.is_empty() {
            return Err(HarmonizeError::EmptySectorWindow(sector.to_string()));
        }
        shares.insert(sector.to_string(), series);
    }
    Ok(LabourShareModel { method, window: WINDOW, shares })
}

/// `(w_hat, x_hat) = (share * g, (1 - share) * g)` for the row's cost pool,
/// with the share taken from `model`.
pub fn split_cogs(row: &FirmFinancials, model: &LabourShareModel) -> Result<(f64, f64), HarmonizeError> {
    let a = model.share(&row.sector, row.year)?;
    Ok(split_pool(row.cogs, a))
}

/// Splits a cost pool so that the two parts add back to it exactly.
///
/// The larger part is formed first; the smaller one is then an exact
/// difference, so `w + x == pool` in floating point.
pub fn split_pool(pool: f64, share: f64) -> (f64, f64) {
    if share <= 0.5 {
        let x = pool - share * pool;
        (pool - x, x)
    } else {
        let w = pool - (1.0 - share) * pool;
        (w, pool - w)
    }
}

/// Fills `labour_hat` on rows without disclosed labour.
///
/// Firms that disclose in other years use their own gap-filled share;
/// the rest use the sector model.
pub fn estimate_labour(panel: &[FirmFinancials], model: &LabourShareModel) -> Result<Vec<FirmFinancials>, HarmonizeError> {
    let mut own: HashMap<&str, BTreeMap<i32, f64>> = HashMap::new();
    for r in panel {
        if let Some(a) = r.share() {
            own.entry(&r.firm).or_default().insert(r.year, a);
        }
    }
    panel
        .iter()
        .map(|r| {
            let mut out = r.clone();
            if r.labour.is_none() {
                let a = match own.get(r.firm.as_str()).and_then(|s| fill_gaps(s, r.year)) {
                    Some(a) => a,
                    None => model.share(&r.sector, r.year)?,
                };
                out.labour_hat = Some(split_pool(r.cogs, a).0);
            } else {
                out.labour_hat = None;
            }
            Ok(out)
        })
        .collect()
}

/// Final demand, capital formation and intermediate sales of a firm with
/// sales `q`, from its sector's shares of gross output.
pub fn impute_demand_and_gfcf(q: f64, final_share: f64, gfcf_share: f64) -> Result<(f64, f64, f64), HarmonizeError> {
    let clamp = |r: f64, what: &str| {
        if r < 0.0 {
            warn!("negative sector {what} ratio {r} clamped to zero");
            0.0
        } else {
            r
        }
    };
    let f_r = clamp(final_share, "final-demand");
    let k_r = clamp(gfcf_share, "capital-formation");
    for r in [f_r, k_r, f_r + k_r] {
        if !(r <= 1.0) {
            return Err(HarmonizeError::RatioOutOfRange(r));
        }
    }
    let f = q * f_r;
    let k = q * k_r;
    Ok((f, k, q - f - k))
}

/// Outcome of [`clean_accounting`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleaningReport {
    pub cleaned: Vec<FirmFinancials>,
    /// `(firm, year)` of removed rows.
    pub dropped: Vec<(String, i32)>,
    /// `(firm, year)` of rows whose labour was taken out of intermediate costs.
    pub corrections: Vec<(String, i32)>,
}

impl CleaningReport {
    pub fn dropped_fraction(&self) -> f64 {
        let total = self.cleaned.len() + self.dropped.len();
        if total == 0 {
            0.0
        } else {
            self.dropped.len() as f64 / total as f64
        }
    }
}

/// Repairs suspected double counting of disclosed labour, then drops rows
/// that still violate `q >= x + y` or have non-positive value added or
/// negative intermediate costs.
pub fn clean_accounting(rows: &[FirmFinancials]) -> CleaningReport {
    let mut report = CleaningReport { cleaned: Vec::new(), dropped: Vec::new(), corrections: Vec::new() };
    for r in rows {
        let mut r = r.clone();
        if r.residual() < 0.0 && r.labour.is_some() && !r.labour_in_cogs {
            r.labour_in_cogs = true;
            report.corrections.push((r.firm.clone(), r.year));
        }
        if r.residual() < 0.0 || r.value_added() <= 0.0 || r.intermediate() < 0.0 {
            report.dropped.push((r.firm.clone(), r.year));
        } else {
            report.cleaned.push(r);
        }
    }
    report
}

/// Synthetic panel with labour shares that fall with firm size, so that
/// size-weighted sector shares predict labour costs of large firms best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelConfig {
    pub n_firms: usize,
    pub n_sectors: usize,
    pub first_year: i32,
    pub n_years: i32,
    /// Fraction of firms that disclose labour.
    pub disclosure_rate: f64,
    /// Fraction of disclosing firms that also keep labour inside COGS.
    pub double_count_rate: f64,
    /// Tail index of the firm-size distribution.
    pub size_tail: f64,
    /// Drop in labour share per unit of log size.
    pub size_slope: f64,
    pub seed: u64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        PanelConfig {
            n_firms: 3_000,
            n_sectors: 8,
            first_year: 2011,
            n_years: 6,
            disclosure_rate: 0.6,
            double_count_rate: 0.05,
            size_tail: 1.1,
            size_slope: 0.05,
            seed: 0,
        }
    }
}

pub fn synthetic_panel(cfg: &PanelConfig) -> Vec<FirmFinancials> {
    let mut rng = phase_rng(cfg.seed, Phase::Panel);
    let base: Vec<f64> = (0..cfg.n_sectors).map(|_| rng.random_range(0.15..0.45)).collect();
    let mut rows = Vec::with_capacity(cfg.n_firms * cfg.n_years.max(0) as usize);
    for i in 0..cfg.n_firms {
        let sector = i % cfg.n_sectors;
        let u: f64 = Open01.sample(&mut rng);
        let size = 10.0 * u.powf(-1.0 / cfg.size_tail);
        let alpha = (base[sector] - cfg.size_slope * (size / 10.0).ln() + rng.random_range(-0.05..0.05)).clamp(0.02, 0.9);
        let discloses = rng.random::<f64>() < cfg.disclosure_rate;
        let double = discloses && rng.random::<f64>() < cfg.double_count_rate;
        let margin = rng.random_range(0.05..0.2);
        let da_rate = rng.random_range(0.01..0.05);
        for y in 0..cfg.n_years {
            let pool = size * (1.0 + rng.random_range(-0.05..0.05));
            let w = alpha * pool;
            let g = pool - w;
            let da = da_rate * pool;
            let ebit = margin * pool;
            let revenue = pool + da + ebit + rng.random_range(0.0..0.05) * pool;
            rows.push(FirmFinancials {
                firm: format!("f{i:05}"),
                year: cfg.first_year + y,
                sector: format!("s{sector:02}"),
                revenue,
                cogs: if double { g + w } else { g },
                labour: discloses.then_some(w),
                ebit,
                depamort: da,
                labour_in_cogs: false,
                labour_hat: None,
            });
        }
    }
    rows
}

/// Errors of one method on the held-out firms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: LabourShareMethod,
    pub share_rmse: f64,
    pub share_mae: f64,
    pub share_medae: f64,
    pub labour_rmse: f64,
    pub labour_mae: f64,
    pub labour_medae: f64,
}

/// Fits every method on the disclosing firms outside a random hold-out set
/// and scores its predictions on the held-out firms' labour.
pub fn select_method(panel: &[FirmFinancials], holdout: f64, seed: u64) -> Result<Vec<MethodScore>, HarmonizeError> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(HarmonizeError::InvalidHoldout(holdout));
    }
    let mut firms: Vec<&str> = panel.iter().filter(|r| r.labour.is_some()).map(|r| r.firm.as_str()).collect();
    firms.sort_unstable();
    firms.dedup();
    let mut rng = phase_rng(seed, Phase::Panel);
    firms.shuffle(&mut rng);
    let n_hold = ((holdout * firms.len() as f64).round() as usize).clamp(1, firms.len().saturating_sub(1).max(1));
    let held: BTreeSet<&str> = firms[..n_hold.min(firms.len())].iter().copied().collect();

    let train: Vec<FirmFinancials> = panel
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if held.contains(r.firm.as_str()) {
                r.labour = None;
            }
            r
        })
        .collect();
    let test: Vec<&FirmFinancials> = panel
        .iter()
        .filter(|r| held.contains(r.firm.as_str()) && r.share().is_some())
        .collect();

    let first = panel.iter().map(|r| r.year).min().ok_or(HarmonizeError::EmptyPanel)?;
    LabourShareMethod::ALL
        .iter()
        .map(|&method| {
            let model = fit_labour_share(method, &train)?;
            let mut share_err = Vec::new();
            let mut labour_err = Vec::new();
            for r in test.iter().filter(|r| r.year >= first + WINDOW - 1) {
                let a_hat = model.share(&r.sector, r.year)?;
                let a = r.share().expect("filtered on disclosure");
                share_err.push((a_hat - a).abs());
                labour_err.push((a_hat * r.cost_pool() - r.labour.expect("disclosed")).abs());
            }
            let rmse = |e: &[f64]| mean(e.iter().map(|x| x * x)).unwrap_or(f64::NAN).sqrt();
            let mae = |e: &[f64]| mean(e.iter().copied()).unwrap_or(f64::NAN);
            let med = |e: &[f64]| median(e).unwrap_or(f64::NAN);
            Ok(MethodScore {
                method,
                share_rmse: rmse(&share_err),
                share_mae: mae(&share_err),
                share_medae: med(&share_err),
                labour_rmse: rmse(&labour_err),
                labour_mae: mae(&labour_err),
                labour_medae: med(&labour_err),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(firm: &str, year: i32, sector: &str, g: f64, w: Option<f64>) -> FirmFinancials {
        FirmFinancials {
            firm: firm.into(),
            year,
            sector: sector.into(),
            revenue: 2.0 * (g + w.unwrap_or(0.0)),
            cogs: g,
            labour: w,
            ebit: 0.1 * g,
            depamort: 0.05 * g,
            labour_in_cogs: false,
            labour_hat: None,
        }
    }

    #[test]
    fn share_by_hand() {
        assert_eq!(cogs_labour_share(10.0, 90.0).unwrap(), 0.1);
        assert_eq!(cogs_labour_share(0.0, 90.0).unwrap(), 0.0);
        assert_eq!(cogs_labour_share(5.0, 5.0).unwrap(), 0.5);
        assert_eq!(cogs_labour_share(0.0, 0.0), Err(HarmonizeError::ZeroDenominator));
    }

    #[test]
    fn constant_single_firm_agrees_across_methods() {
        let panel: Vec<_> = (2011..2015).map(|y| row("a", y, "s", 80.0, Some(20.0))).collect();
        for m in LabourShareMethod::ALL {
            let model = fit_labour_share(m, &panel).unwrap();
            for y in 2013..2015 {
                assert!((model.share("s", y).unwrap() - 0.2).abs() < 1e-15, "{m} {y}");
            }
        }
    }

    #[test]
    fn ratio_of_sums_by_hand() {
        let panel: Vec<_> = (2011..2014)
            .flat_map(|y| [row("a", y, "s", 90.0, Some(10.0)), row("b", y, "s", 180.0, Some(20.0))])
            .collect();
        let model = fit_labour_share(LabourShareMethod::RatioOfSums, &panel).unwrap();
        assert!((model.share("s", 2013).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_sector_window() {
        let panel = vec![row("a", 2011, "s", 1.0, None), row("b", 2013, "t", 1.0, Some(1.0))];
        assert_eq!(
            fit_labour_share(LabourShareMethod::SectorMean, &panel),
            Err(HarmonizeError::EmptySectorWindow("s".into()))
        );
    }

    #[test]
    fn gap_filling_order() {
        let pts: BTreeMap<i32, f64> = [(2013, 0.2), (2016, 0.5)].into_iter().collect();
        assert_eq!(fill_gaps(&pts, 2011), Some(0.2));
        assert_eq!(fill_gaps(&pts, 2018), Some(0.5));
        assert!((fill_gaps(&pts, 2014).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(fill_gaps(&BTreeMap::new(), 2014), None);
    }

    #[test]
    fn split_by_hand() {
        assert_eq!(split_pool(100.0, 0.25), (25.0, 75.0));
        assert_eq!(split_pool(100.0, 0.0), (0.0, 100.0));
        let model = LabourShareModel {
            method: LabourShareMethod::RatioOfSums,
            window: 3,
            shares: [("s".to_string(), [(2013, 0.25)].into_iter().collect())].into_iter().collect(),
        };
        assert_eq!(split_cogs(&row("a", 2014, "s", 100.0, None), &model).unwrap(), (25.0, 75.0));
        assert_eq!(
            split_cogs(&row("a", 2014, "t", 100.0, None), &model),
            Err(HarmonizeError::UncoveredSectorYear { sector: "t".into(), year: 2014 })
        );
    }

    #[test]
    fn value_added_by_hand() {
        assert_eq!(firm_value_added(10.0, 5.0, 2.0), 17.0);
        assert_eq!(firm_value_added(0.0, 0.0, 0.0), 0.0);
        assert_eq!(firm_value_added(10.0, -12.0, 4.0), 2.0);
    }

    #[test]
    fn demand_and_gfcf() {
        assert_eq!(impute_demand_and_gfcf(100.0, 0.2, 0.1).unwrap(), (20.0, 10.0, 70.0));
        assert_eq!(impute_demand_and_gfcf(100.0, 0.0, 0.0).unwrap(), (0.0, 0.0, 100.0));
        assert_eq!(impute_demand_and_gfcf(100.0, 0.2, -0.1).unwrap(), (20.0, 0.0, 80.0));
        assert_eq!(impute_demand_and_gfcf(100.0, 0.8, 0.3), Err(HarmonizeError::RatioOutOfRange(1.1)));
    }

    #[test]
    fn cleaning_repairs_double_count() {
        let consistent = row("ok", 2014, "s", 50.0, Some(10.0));
        // labour inside cogs and in value added: q < x + y
        let mut double = row("dc", 2014, "s", 60.0, Some(30.0));
        double.revenue = 95.0;
        assert!(double.residual() < 0.0);
        let mut hopeless = row("bad", 2014, "s", 60.0, None);
        hopeless.revenue = 10.0;

        let report = clean_accounting(&[consistent.clone(), double, hopeless]);
        assert_eq!(report.cleaned[0], consistent);
        assert_eq!(report.corrections, vec![("dc".to_string(), 2014)]);
        assert!(report.cleaned[1].labour_in_cogs);
        assert!(report.cleaned[1].residual() >= 0.0);
        assert_eq!(report.dropped, vec![("bad".to_string(), 2014)]);
        assert!(report.cleaned.iter().all(|r| r.value_added() > 0.0));

        let again = clean_accounting(&report.cleaned);
        assert_eq!(again.cleaned, report.cleaned);
        assert!(again.corrections.is_empty() && again.dropped.is_empty());
    }

    #[test]
    fn own_history_beats_sector_share() {
        let panel = vec![
            row("a", 2011, "s", 90.0, Some(10.0)),
            row("a", 2012, "s", 90.0, None),
            row("b", 2012, "s", 50.0, Some(50.0)),
            row("c", 2013, "s", 100.0, None),
        ];
        let model = fit_labour_share(LabourShareMethod::SectorMean, &panel).unwrap();
        let est = estimate_labour(&panel, &model).unwrap();
        assert!((est[1].labour_hat.unwrap() - 9.0).abs() < 1e-12);
        let a = model.share("s", 2013).unwrap();
        assert!((est[3].labour_hat.unwrap() - 100.0 * a).abs() < 1e-12);
        assert_eq!(est[0].labour_hat, None);
    }

    #[test]
    fn method_names_round_trip() {
        for m in LabourShareMethod::ALL {
            assert_eq!(m.to_string().parse::<LabourShareMethod>().unwrap(), m);
        }
        assert!("4".parse::<LabourShareMethod>().is_err());
    }

    #[test]
    fn ratio_of_sums_wins_on_size_dependent_panel() {
        let panel = synthetic_panel(&PanelConfig::default());
        let cleaned = clean_accounting(&panel);
        assert!(!cleaned.corrections.is_empty());
        let scores = select_method(&cleaned.cleaned, 0.2, 7).unwrap();
        let best = scores.iter().min_by(|a, b| a.labour_rmse.total_cmp(&b.labour_rmse)).unwrap();
        assert_eq!(best.method, LabourShareMethod::RatioOfSums, "{scores:#?}");
    }
}
