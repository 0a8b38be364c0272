//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initial::InitialSpec;
use crate::mesh::DomainSpec;
use crate::params::Params;
use crate::stepper::DEFAULT_DT_MAX;
use crate::stokes::STOKES_MAX_UNKNOWNS;

/// Logistic model parameters; the potential is `phi = -gravity * y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub r: f64,
    pub mu: f64,
    pub gamma: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub epsilon: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub gravity: f64,
}

fn one() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    0.2
}

impl ParamsSpec {
    pub fn build(&self, domain: DomainSpec) -> Result<Params> {
        Params::new(
            domain,
            self.r,
            self.mu,
            self.gamma,
            self.kappa,
            self.epsilon,
            self.sigma,
            self.gravity,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_end: f64,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    /// Records are taken at multiples of `record_every * dt_max`; steps are
    /// shortened to land on them.
    #[serde(default = "default_every")]
    pub record_every: usize,
    /// Every k-th step is kept for the weak-form residuals.
    #[serde(default = "default_every")]
    pub trajectory_every: usize,
    /// Extra exponents `p` for `integral n^p` columns.
    #[serde(default)]
    pub lp: Vec<f64>,
}

fn default_dt_max() -> f64 {
    DEFAULT_DT_MAX
}

fn default_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnSettings {
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_probes() -> usize {
    8
}

fn default_iters() -> usize {
    200
}

impl Default for GnSettings {
    fn default() -> Self {
        GnSettings {
            probes: default_probes(),
            iters: default_iters(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsFlags {
    /// Build the dense Stokes basis (fractional velocity norms, cross-checks).
    #[serde(default)]
    pub dense_stokes: bool,
    #[serde(default)]
    pub weak_residuals: bool,
    /// Requires `dense_stokes`.
    #[serde(default)]
    pub energy_check: bool,
    /// Gagliardo-Nirenberg constant for the energy check; estimated on the
    /// run grid with `gn` when absent.
    #[serde(default)]
    pub c_star: Option<f64>,
    #[serde(default)]
    pub gn: GnSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub params: ParamsSpec,
    pub initial: InitialSpec,
    pub run: RunSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsFlags,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn build_params(&self) -> Result<Params> {
        self.params.build(self.domain)
    }

    /// Every check that can be made without stepping.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| config_err(e.to_string());
        self.build_params().map_err(wrap)?;
        self.initial.preset().map_err(wrap)?;
        let run = &self.run;
        if !(run.t_end.is_finite() && run.t_end > 0.0) {
            return Err(config_err(format!("t_end must be positive, got {}", run.t_end)));
        }
        if !(run.dt_max.is_finite() && run.dt_max > 0.0) {
            return Err(config_err(format!("dt_max must be positive, got {}", run.dt_max)));
        }
        if run.record_every == 0 || run.trajectory_every == 0 {
            return Err(config_err("record_every and trajectory_every must be at least 1"));
        }
        if let Some(p) = run.lp.iter().find(|p| !(p.is_finite() && **p >= 1.0)) {
            return Err(config_err(format!("lp exponents must be >= 1, got {p}")));
        }
        let flags = &self.diagnostics;
        let unknowns = self.domain.velocity_unknowns();
        if flags.dense_stokes && unknowns > STOKES_MAX_UNKNOWNS {
            return Err(config_err(format!(
                "dense_stokes needs at most {STOKES_MAX_UNKNOWNS} velocity unknowns, grid has {unknowns}"
            )));
        }
        if flags.energy_check && !flags.dense_stokes {
            return Err(config_err("energy_check requires dense_stokes"));
        }
        if let Some(c) = flags.c_star {
            if !(c.is_finite() && c > 0.0) {
                return Err(config_err(format!("c_star must be positive, got {c}")));
            }
        }
        if flags.gn.probes == 0 {
            return Err(config_err("gn.probes must be at least 1"));
        }
        Ok(())
    }

    /// Spacing of the record times.
    pub fn record_interval(&self) -> f64 {
        self.run.record_every as f64 * self.run.dt_max
    }

    /// Record times `0, dT, 2 dT, ..., t_end` (the last one possibly closer).
    pub fn record_times(&self) -> Vec<f64> {
        let dt = self.record_interval();
        let t_end = self.run.t_end;
        let mut times = vec![0.0];
        let mut k = 1usize;
        loop {
            let t = k as f64 * dt;
            if t >= t_end * (1.0 - 1e-12) {
                times.push(t_end);
                break;
            }
            times.push(t);
            k += 1;
        }
        times
    }
}
