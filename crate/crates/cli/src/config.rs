//! Run configuration: JSON with defaults for every key.

use std::fmt;
use std::path::{Path, PathBuf};

use prodnet::recon::LambdaSource;
use prodnet::shocks::ProxyShockRule;
use prodnet::synth::SynthConfig;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("config type error: {0}")]
    TypeError(String),
    #[error("config value out of range: {0}")]
    RangeError(String),
}

/// One level of link knowledge in the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPoint {
    /// Delete this fraction of the links among kept firms.
    Fraction(f64),
    /// Delete links until the configured mean degree is reached.
    MatchDegree,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        match self {
            SweepPoint::Fraction(f) => format!("frac-{f:.2}"),
            SweepPoint::MatchDegree => "match-degree".to_string(),
        }
    }

    pub fn fraction(&self) -> Option<f64> {
        match self {
            SweepPoint::Fraction(f) => Some(*f),
            SweepPoint::MatchDegree => None,
        }
    }
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for SweepPoint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SweepPoint::Fraction(f) => s.serialize_f64(*f),
            SweepPoint::MatchDegree => s.serialize_str("match-degree"),
        }
    }
}

impl<'de> Deserialize<'de> for SweepPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(f) => Ok(SweepPoint::Fraction(f)),
            Raw::Str(s) if s == "match-degree" => Ok(SweepPoint::MatchDegree),
            Raw::Str(s) => Err(de::Error::invalid_value(de::Unexpected::Str(&s), &"a fraction or \"match-degree\"")),
        }
    }
}

/// An existing network to use instead of a generated one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub edges: PathBuf,
    pub nodes: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub replicates: usize,
    pub n_keep: usize,
    pub target_mean_degree: f64,
    pub sweep: Vec<SweepPoint>,
    pub tol: f64,
    pub max_iter: usize,
    pub q_low: f64,
    pub q_high: f64,
    pub lambda_source: LambdaSource,
    pub alpha: f64,
    pub sigma: f64,
    pub periods: usize,
    pub proxy_shock_rule: ProxyShockRule,
    /// Replace kept firms' value added and final demand with sector-ratio imputations.
    pub impute_accounts: bool,
    /// Also report RMSE/MAE/MedAE for edge weights.
    pub weight_errors: bool,
    pub synth: SynthConfig,
    pub input: Option<InputPaths>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut sweep: Vec<SweepPoint> = (0..10).map(|k| SweepPoint::Fraction(f64::from(k) / 10.0)).collect();
        sweep.push(SweepPoint::MatchDegree);
        RunConfig {
            seed: 0,
            replicates: 50,
            n_keep: 5_440,
            target_mean_degree: 2.9,
            sweep,
            tol: 1e-8,
            max_iter: 10_000,
            q_low: 0.25,
            q_high: 0.25,
            lambda_source: LambdaSource::Balanced,
            alpha: 0.333,
            sigma: 6.0,
            periods: 10,
            proxy_shock_rule: ProxyShockRule::MedianVarianceFirm,
            impute_accounts: false,
            weight_errors: false,
            synth: SynthConfig::default(),
            input: None,
        }
    }
}

impl RunConfig {
    /// Range checks, then sorts and deduplicates the sweep (fractions
    /// ascending, `match-degree` last).
    pub fn validate(mut self) -> Result<Self, ConfigError> {
        let range = |ok: bool, msg: String| if ok { Ok(()) } else { Err(ConfigError::RangeError(msg)) };
        range(self.replicates >= 1, format!("replicates = {} must be at least 1", self.replicates))?;
        range(self.n_keep >= 1, "n_keep must be at least 1".into())?;
        range(
            self.target_mean_degree > 0.0 && self.target_mean_degree.is_finite(),
            format!("target_mean_degree = {}", self.target_mean_degree),
        )?;
        for p in &self.sweep {
            if let SweepPoint::Fraction(f) = p {
                range((0.0..1.0).contains(f), format!("sweep fraction {f} outside [0, 1)"))?;
            }
        }
        range(!self.sweep.is_empty(), "sweep is empty".into())?;
        range(self.tol > 0.0 && self.tol.is_finite(), format!("tol = {}", self.tol))?;
        range(self.max_iter >= 1, "max_iter must be at least 1".into())?;
        range(self.alpha > 0.0 && self.alpha <= 1.0, format!("alpha = {} outside (0, 1]", self.alpha))?;
        range(self.sigma > 0.0 && self.sigma.is_finite(), format!("sigma = {}", self.sigma))?;
        range(self.periods >= 2, format!("periods = {} must be at least 2", self.periods))?;
        prodnet::recon::weight_confidence_interval(1.0, self.q_low, self.q_high)
            .map_err(|e| ConfigError::RangeError(e.to_string()))?;
        self.synth.validate().map_err(|e| ConfigError::RangeError(e.to_string()))?;

        let mut fractions: Vec<f64> = self.sweep.iter().filter_map(SweepPoint::fraction).collect();
        fractions.sort_by(f64::total_cmp);
        fractions.dedup();
        let has_match = self.sweep.contains(&SweepPoint::MatchDegree);
        self.sweep = fractions.into_iter().map(SweepPoint::Fraction).collect();
        if has_match {
            self.sweep.push(SweepPoint::MatchDegree);
        }
        Ok(self)
    }
}

/// Parses a JSON config; an empty document yields the defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let text = if text.trim().is_empty() { "{}" } else { text };
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("unknown field ") {
            Some(rest) => ConfigError::UnknownKey(rest.split(',').next().unwrap_or(rest).trim_matches('`').to_string()),
            None => ConfigError::TypeError(msg),
        }
    })?;
    cfg.validate()
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Unreadable { path: path.display().to_string(), source })?;
    parse_config_str(&text)
}
