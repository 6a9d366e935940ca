//! Run configuration, read from TOML.
//!
//! Every section is optional and falls back to its defaults; unknown keys in
//! the sections defined here are rejected. `magcool recipes show <name>`
//! prints a complete file.

use std::path::{Path, PathBuf};

use magcool_core::baselines::default_sideband_grid;
use magcool_core::{from_periods, BipartiteParams, EnvConfig, SystemSpec, TripartiteParams};
use magcool_sac::{Hyperparams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[default]
    Bipartite,
    Tripartite,
}

/// Control bounds and reward shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlLimits {
    /// Bound on `|G|` for the bipartite system.
    pub g_max: f64,
    /// Bound on each of `Ω_S`, `Ω_P` for the tripartite system.
    pub omega_max: f64,
    /// Magnon-occupancy penalty weight in the tripartite reward.
    pub lambda: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            g_max: 5.0 * std::f64::consts::SQRT_2,
            omega_max: 10.0,
            lambda: 10.0,
        }
    }
}

/// Overrides of the environment's episode settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub steps_per_episode: Option<usize>,
    /// Control interval in phonon periods.
    pub dt_periods: Option<f64>,
    pub moment_scale: Option<f64>,
}

/// Open-loop schedule for `simulate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    #[default]
    Zero,
    /// One `[re, im]` pair per control slot, held for the whole episode.
    Constant { values: Vec<[f64; 2]> },
    /// Gaussian pulse pair on a two-slot system; times in periods.
    Gaussian {
        peak_s: f64,
        peak_p: f64,
        center_s_periods: f64,
        center_p_periods: f64,
        width_periods: f64,
    },
    /// A schedule table written by `evaluate` or by hand.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Constant couplings for the sideband sweep; the built-in grid if absent.
    pub couplings: Option<Vec<f64>>,
    pub horizon_periods: f64,
    pub target_quotient: f64,
    /// Pulse-search horizon as a multiple of the Raman time limit.
    pub stirap_horizon_factor: f64,
    pub restarts: usize,
    pub max_iters: u64,
    /// `[ω_m, Ω_S, Ω_P]` triples for the `limits` table.
    pub limits: Vec<[f64; 3]>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            couplings: None,
            horizon_periods: 200.0,
            target_quotient: 1e-4,
            stirap_horizon_factor: 2.0,
            restarts: 20,
            max_iters: 400,
            limits: vec![
                [1e3, 6.0, 6.0],
                [1e3, 8.0, 8.0],
                [1e3, 10.0, 10.0],
                [1e3, 15.0, 15.0],
                [1e5, 100.0, 100.0],
            ],
        }
    }
}

impl BaselineConfig {
    pub fn sideband_grid(&self) -> Vec<f64> {
        self.couplings.clone().unwrap_or_else(default_sideband_grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Quotient whose first crossing is reported as the cooling time.
    pub target_quotient: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 1,
            target_quotient: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemKind,
    pub bipartite: BipartiteParams,
    pub tripartite: TripartiteParams,
    pub control: ControlLimits,
    pub episode: EpisodeConfig,
    pub schedule: ScheduleConfig,
    pub agent: Hyperparams,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub evaluate: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config()?;
        self.agent.validate()?;
        let b = &self.baseline;
        if !(b.horizon_periods > 0.0 && b.target_quotient > 0.0 && b.stirap_horizon_factor > 0.0) {
            return Err(CliError::Invalid("baseline horizon, target and horizon factor must be > 0".into()));
        }
        if b.restarts == 0 || b.max_iters == 0 {
            return Err(CliError::Invalid("baseline restarts and max_iters must be >= 1".into()));
        }
        if self.evaluate.episodes == 0 || !(self.evaluate.target_quotient > 0.0) {
            return Err(CliError::Invalid("evaluate needs episodes >= 1 and target_quotient > 0".into()));
        }
        Ok(())
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        Ok(match self.system {
            SystemKind::Bipartite => self.bipartite.build()?,
            SystemKind::Tripartite => self.tripartite.build()?,
        })
    }

    /// The resolved environment. Its seed is left at zero: the environment is
    /// deterministic, and checkpoints hash this value.
    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut env = match self.system {
            SystemKind::Bipartite => EnvConfig::bipartite(&self.bipartite, self.control.g_max)?,
            SystemKind::Tripartite => {
                EnvConfig::tripartite(&self.tripartite, self.control.omega_max, self.control.lambda)?
            }
        };
        if let Some(n) = self.episode.steps_per_episode {
            env.steps_per_episode = n;
        }
        if let Some(dt) = self.episode.dt_periods {
            env.dt = from_periods(dt);
        }
        if let Some(s) = self.episode.moment_scale {
            env.moment_scale = s;
        }
        env.validate()?;
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_reported_with_location() {
        let err = RunConfig::from_toml("[control]\ng_mx = 1.0\n", Path::new("bad.toml")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad.toml") && msg.contains("g_mx") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let text = "system = \"tripartite\"\n[tripartite]\nmagnon_frequency = 1000.0\n[schedule]\nkind = \"gaussian\"\npeak_s = 6.0\npeak_p = 6.0\ncenter_s_periods = 1.0\ncenter_p_periods = 2.0\nwidth_periods = 0.5\n";
        let cfg = RunConfig::from_toml(text, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.tripartite.phonon_bath, 100.0);
        assert_eq!(cfg.env_config().unwrap().steps_per_episode, 150);
        assert!(matches!(cfg.schedule, ScheduleConfig::Gaussian { .. }));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("[control]\ng_max = -1.0\n", Path::new("x")).is_err());
        assert!(RunConfig::from_toml("[agent]\ngamma = 1.5\n", Path::new("x")).is_err());
    }
}
