//! Experiment configuration in TOML.
//!
//! Every field except `m`, `horizon`, `replications`, `thresholds` and
//! `generator` has a default; unknown keys are rejected. The resolved form
//! (all defaults filled in) is what [`ExperimentConfig::to_toml`] writes, and
//! parsing it back yields the same configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generator::SignalGenerator;
use crate::error::{Error, Result};
use crate::estimator::SlopeWindow;
use crate::kernel::{NoiseModel, ThresholdSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Regressor dimension.
    pub m: usize,
    /// Number of outputs; each output column is estimated separately.
    #[serde(default = "one")]
    pub p: usize,
    pub horizon: usize,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one_f")]
    pub sigma: f64,
    /// Parameter bound `D`: `|theta_j| <= D`, estimates projected onto `2D`.
    #[serde(default = "two_f")]
    pub d_bound: f64,
    /// Snapshot density of the curve grid.
    #[serde(default = "default_ppd")]
    pub points_per_decade: usize,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    pub thresholds: ThresholdSchedule,
    pub generator: SignalGenerator,
    #[serde(default)]
    pub theta: TrueParameter,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub nls: NlsConfig,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn two_f() -> f64 {
    2.0
}
fn default_ppd() -> usize {
    20
}
fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::Step1Only]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// The preliminary estimate run on its own.
    Step1Only,
    /// Batch conditional-mean least squares refitted at every grid point.
    Nls,
}

/// How the true parameter matrix `Theta` (`m x p`, column `j` = `theta_j`) is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum TrueParameter {
    /// Entries i.i.d. uniform on `[-half_width, half_width]`, each column
    /// rescaled onto `|theta_j| <= D` if it falls outside.
    ///
    /// For the feedback generator a draw is rejected and redrawn when a
    /// pilot run leaves some state coordinate strictly inside `(l, u)` on
    /// fewer than `min_interior_fraction` of its steps: such a coordinate is
    /// stuck at a threshold and the matching parameter entries are not
    /// identifiable. Set it to 0 to accept every draw.
    Uniform {
        #[serde(default = "one_f")]
        half_width: f64,
        #[serde(default = "default_interior")]
        min_interior_fraction: f64,
    },
    /// Explicit columns `theta_j`.
    Fixed { columns: Vec<Vec<f64>> },
}

fn default_interior() -> f64 {
    0.02
}

impl Default for TrueParameter {
    fn default() -> Self {
        TrueParameter::Uniform {
            half_width: 1.0,
            min_interior_fraction: default_interior(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSettings {
    #[serde(default = "default_p0")]
    pub p0_scale: f64,
    #[serde(default = "default_window")]
    pub slope_window: SlopeWindow,
    #[serde(default = "default_mu_floor")]
    pub mu_floor: f64,
}

fn default_p0() -> f64 {
    100.0
}
fn default_window() -> SlopeWindow {
    SlopeWindow::default()
}
fn default_mu_floor() -> f64 {
    0.5
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            p0_scale: default_p0(),
            slope_window: default_window(),
            mu_floor: default_mu_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlsConfig {
    #[serde(default = "default_nls_iter")]
    pub max_iterations: usize,
    #[serde(default = "default_nls_tol")]
    pub tolerance: f64,
}

fn default_nls_iter() -> usize {
    200
}
fn default_nls_tol() -> f64 {
    1e-6
}

impl Default for NlsConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_nls_iter(),
            tolerance: default_nls_tol(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.p == 0 {
            return bad(format!("m and p must be at least 1 (got m = {}, p = {})", self.m, self.p));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.points_per_decade == 0 {
            return bad("points_per_decade must be at least 1".into());
        }
        NoiseModel::new(self.sigma).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.d_bound.is_finite() && self.d_bound > 0.0) {
            return bad(format!("d_bound must be positive, got {}", self.d_bound));
        }
        self.thresholds.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.generator.validate(self.m, self.p, &self.thresholds)?;
        match &self.theta {
            TrueParameter::Uniform {
                half_width,
                min_interior_fraction,
            } => {
                if !(half_width.is_finite() && *half_width > 0.0) {
                    return bad(format!("theta.half_width must be positive, got {half_width}"));
                }
                if !(0.0..1.0).contains(min_interior_fraction) {
                    return bad(format!("theta.min_interior_fraction must lie in [0, 1), got {min_interior_fraction}"));
                }
            }
            TrueParameter::Fixed { columns } => {
                if columns.len() != self.p || columns.iter().any(|c| c.len() != self.m) {
                    return bad(format!("theta.columns must hold p = {} columns of length m = {}", self.p, self.m));
                }
                for (j, c) in columns.iter().enumerate() {
                    let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(n <= self.d_bound) {
                        return bad(format!("theta column {j} has norm {n}, above d_bound = {}", self.d_bound));
                    }
                }
            }
        }
        let e = &self.estimator;
        if !(e.p0_scale.is_finite() && e.p0_scale > 0.0) {
            return bad(format!("estimator.p0_scale must be positive, got {}", e.p0_scale));
        }
        if !(0.0..=1.0).contains(&e.mu_floor) {
            return bad(format!("estimator.mu_floor must lie in [0, 1], got {}", e.mu_floor));
        }
        if let SlopeWindow::Local { sigmas } = e.slope_window {
            if !(sigmas.is_finite() && sigmas > 0.0) {
                return bad(format!("estimator.slope_window.sigmas must be positive, got {sigmas}"));
            }
        }
        if !(self.nls.tolerance > 0.0) || self.nls.max_iterations == 0 {
            return bad("nls.tolerance and nls.max_iterations must be positive".into());
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::new(self.sigma).expect("validated")
    }

    pub fn has_baseline(&self, b: Baseline) -> bool {
        self.baselines.contains(&b)
    }

    /// Resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment configs always serialize")
    }

    /// Hex SHA-256 of the resolved configuration with the seed zeroed, so
    /// runs differing only in seed share the prefix.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Experiment directory name: 16 hex digits of the hash plus the seed.
    pub fn dir_name(&self) -> String {
        format!("{}-seed{}", &self.hash()[..16], self.seed)
    }
}

/// Parses TOML text, applies `key=value` overrides (dotted keys, TOML
/// values; bare words are taken as strings) and validates.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| located(text, &e))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, overrides).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn located(text: &str, e: &toml::de::Error) -> Error {
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            Error::Config(format!("line {line}, column {col}: {}", e.message()))
        }
        None => Error::Config(e.message().to_string()),
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{ov}` has an empty key")));
    }
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for part in path {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
