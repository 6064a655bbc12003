//! Experiment configuration: TOML with defaults, unknown keys rejected.

use std::fmt;
use std::path::Path;

use cascade_core::hormander::{depth_cap, DEFAULT_RANK_TOL, MAX_TRUNCATION};
use cascade_core::{ShellParams, StepScheme};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "CASCADE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    SweepNu,
    Spectrum,
    Hormander,
    Malliavin,
    ControlDemo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::SweepNu => "sweep_nu",
            Self::Spectrum => "spectrum",
            Self::Hormander => "hormander",
            Self::Malliavin => "malliavin",
            Self::ControlDemo => "control_demo",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub nu: f64,
    pub c: f64,
    pub sigma: f64,
    pub n_shells: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self {
            nu: 1e-4,
            c: 1.0,
            sigma: 1.0,
            n_shells: 19,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub dt: f64,
    pub scheme: StepScheme,
    pub horizon: f64,
    /// Omitted: `min(10/ν, horizon/2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Steps between recorded samples.
    pub sample_stride: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Samples per batch for batch-means errors.
    pub batch_len: usize,
    /// Omitted: the zero state.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            scheme: StepScheme::default(),
            horizon: 200.0,
            burn_in: None,
            sample_stride: 1000,
            n_trajectories: 16,
            seed: 0,
            batch_len: 100,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub nu: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            nu: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumBlock {
    pub j_min: usize,
    pub j_max: usize,
}

impl Default for SpectrumBlock {
    fn default() -> Self {
        Self { j_min: 3, j_max: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HormanderBlock {
    pub n_target: usize,
    /// Omitted: `n_target + 2`, capped at the symbolic limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_trunc: Option<usize>,
    /// Omitted: the cascade depth cap for `n_target`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_m: Option<usize>,
    pub tol: f64,
}

impl Default for HormanderBlock {
    fn default() -> Self {
        Self {
            n_target: 5,
            n_trunc: None,
            max_m: None,
            tol: DEFAULT_RANK_TOL,
        }
    }
}

impl HormanderBlock {
    pub fn n_trunc(&self) -> usize {
        self.n_trunc.unwrap_or((self.n_target + 2).min(MAX_TRUNCATION))
    }
    pub fn max_m(&self) -> usize {
        self.max_m.unwrap_or_else(|| depth_cap(self.n_target))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalliavinBlock {
    pub n_paths: usize,
    pub n_quad: usize,
    pub n_low: usize,
    pub alpha: f64,
    /// Time integrated from the initial state before each Gram interval.
    pub spinup: f64,
    pub n_cuts: Vec<usize>,
    pub fp_paths: usize,
}

impl Default for MalliavinBlock {
    fn default() -> Self {
        Self {
            n_paths: 100,
            n_quad: 64,
            n_low: 4,
            alpha: 0.5,
            spinup: 10.0,
            n_cuts: vec![4, 8, 12],
            fp_paths: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlBlock {
    pub beta: f64,
    pub n_cycles: usize,
    pub n_quad: usize,
    pub spinup: f64,
    /// Omitted: the normalized all-ones vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

impl Default for ControlBlock {
    fn default() -> Self {
        Self {
            beta: 1e-4,
            n_cycles: 10,
            n_quad: 64,
            spinup: 10.0,
            xi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    pub model: ModelBlock,
    pub run: RunBlock,
    pub sweep: SweepBlock,
    pub spectrum: SpectrumBlock,
    pub hormander: HormanderBlock,
    pub malliavin: MalliavinBlock,
    pub control: ControlBlock,
}

fn positive(name: &str, x: f64) -> std::result::Result<(), String> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {x}"))
    }
}

fn at_least_one(name: &str, x: usize) -> std::result::Result<(), String> {
    if x >= 1 {
        Ok(())
    } else {
        Err(format!("{name} must be at least 1"))
    }
}

impl ExperimentConfig {
    pub fn params(&self) -> Result<ShellParams> {
        let m = &self.model;
        Ok(ShellParams::new(m.nu, m.c, m.sigma, m.n_shells)?)
    }

    pub fn burn_in_for(&self, nu: f64) -> f64 {
        self.run
            .burn_in
            .unwrap_or_else(|| (10.0 / nu).min(0.5 * self.run.horizon))
    }

    /// Every constraint, reported with the offending key.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let m = &self.model;
        ShellParams::new(m.nu, m.c, m.sigma, m.n_shells).map_err(|e| format!("model: {e}"))?;
        let r = &self.run;
        positive("run.dt", r.dt)?;
        positive("run.horizon", r.horizon)?;
        if let Some(b) = r.burn_in {
            if !(b.is_finite() && b >= 0.0 && b < r.horizon) {
                return Err(format!("run.burn_in must lie in [0, horizon), got {b}"));
            }
        }
        at_least_one("run.sample_stride", r.sample_stride)?;
        at_least_one("run.n_trajectories", r.n_trajectories)?;
        at_least_one("run.batch_len", r.batch_len)?;
        if let Some(u) = &r.initial {
            if u.len() != m.n_shells {
                return Err(format!(
                    "run.initial has {} entries but model.n_shells = {}",
                    u.len(),
                    m.n_shells
                ));
            }
            if u.iter().skip(1).any(|&x| x < 0.0) || u.iter().any(|x| !x.is_finite()) {
                return Err("run.initial must be finite with nonnegative shells j >= 1".into());
            }
        }
        if let Some(kind) = self.kind {
            self.validate_kind(kind)?;
        }
        Ok(())
    }

    /// Constraints on the block used by `kind`.
    pub fn validate_kind(&self, kind: ExperimentKind) -> std::result::Result<(), String> {
        let m = &self.model;
        match kind {
            ExperimentKind::Simulate | ExperimentKind::Spectrum => {
                let s = &self.spectrum;
                if !(s.j_min < s.j_max && s.j_max < m.n_shells) {
                    return Err(format!(
                        "spectrum range [{}, {}] must satisfy j_min < j_max < n_shells = {}",
                        s.j_min, s.j_max, m.n_shells
                    ));
                }
            }
            ExperimentKind::SweepNu => {
                if self.sweep.nu.is_empty() {
                    return Err("sweep.nu must not be empty".into());
                }
                for &nu in &self.sweep.nu {
                    if !(nu.is_finite() && nu > 0.0) {
                        return Err(format!("sweep.nu entries must be positive, got {nu}"));
                    }
                }
            }
            ExperimentKind::Hormander => {
                let h = &self.hormander;
                if h.n_trunc() > MAX_TRUNCATION {
                    return Err(format!(
                        "hormander.n_trunc = {} exceeds the limit {MAX_TRUNCATION}",
                        h.n_trunc()
                    ));
                }
                if h.n_target > h.n_trunc() {
                    return Err(format!(
                        "hormander.n_target = {} exceeds hormander.n_trunc = {}",
                        h.n_target,
                        h.n_trunc()
                    ));
                }
                positive("hormander.tol", h.tol)?;
            }
            ExperimentKind::Malliavin => {
                let ml = &self.malliavin;
                at_least_one("malliavin.n_paths", ml.n_paths)?;
                at_least_one("malliavin.n_quad", ml.n_quad)?;
                at_least_one("malliavin.fp_paths", ml.fp_paths)?;
                if ml.n_low >= m.n_shells {
                    return Err(format!("malliavin.n_low = {} must be below n_shells", ml.n_low));
                }
                if !(ml.alpha > 0.0 && ml.alpha <= 1.0) {
                    return Err(format!("malliavin.alpha must lie in (0, 1], got {}", ml.alpha));
                }
                if !(ml.spinup.is_finite() && ml.spinup >= 0.0) {
                    return Err("malliavin.spinup must be nonnegative".into());
                }
                if let Some(&k) = ml.n_cuts.iter().find(|&&k| k >= m.n_shells) {
                    return Err(format!("malliavin.n_cuts entry {k} must be below n_shells"));
                }
            }
            ExperimentKind::ControlDemo => {
                let c = &self.control;
                positive("control.beta", c.beta)?;
                at_least_one("control.n_cycles", c.n_cycles)?;
                at_least_one("control.n_quad", c.n_quad)?;
                if !(c.spinup.is_finite() && c.spinup >= 0.0) {
                    return Err("control.spinup must be nonnegative".into());
                }
                if let Some(xi) = &c.xi {
                    if xi.len() != m.n_shells || xi.iter().all(|&x| x == 0.0) {
                        return Err("control.xi must be a nonzero vector of length n_shells".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Parse and validate TOML text; `origin` names the source in diagnostics.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::config(origin, e.to_string()))?;
        cfg.validate().map_err(|e| CliError::config(origin, e))?;
        Ok(cfg)
    }

    /// Canonical TOML echo with defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.run
            .initial
            .clone()
            .unwrap_or_else(|| vec![0.0; self.model.n_shells])
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentConfig::from_toml_str(&text, &path.display().to_string())
}

/// Flag, then `CASCADE_SEED`, then the config value.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::config(SEED_ENV, format!("expected a decimal u64, got {v:?}"))),
        None => Ok(config),
    }
}
