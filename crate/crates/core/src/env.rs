//! Episodic control environment over the covariance simulator.
//!
//! Actions live in the canonical box `[-1, 1]^k` and are mapped to coupling
//! values by an [`ActionMap`]. Each step holds the controls for `dt`,
//! propagates exactly and scores the post-step state.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_generators, occupancy, thermal_covariance, CovarianceState, Propagator};
use crate::schedule::ControlSchedule;
use crate::system::{BipartiteParams, SystemSpec, TripartiteParams};
use crate::{CoreError, Result, OCCUPANCY_FLOOR, PERIOD};

/// Default control hold time: one tenth of a phonon period.
pub const DEFAULT_DT: f64 = 0.1 * PERIOD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// `r = 1/ñ_b`.
    InverseQuotient,
    /// `r = 1/ñ_b − λ⟨m†m⟩`, with `m` the mode labelled `magnon`.
    InverseQuotientMinusMagnon { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    /// Thermal reference occupancy of the target mode.
    pub n_thermal: f64,
}

impl RewardSpec {
    pub fn inverse_quotient(n_thermal: f64) -> Self {
        Self {
            kind: RewardKind::InverseQuotient,
            n_thermal,
        }
    }

    pub fn with_magnon_penalty(n_thermal: f64, lambda: f64) -> Self {
        Self {
            kind: RewardKind::InverseQuotientMinusMagnon { lambda },
            n_thermal,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.n_thermal.is_finite() && self.n_thermal > 0.0) {
            return Err(CoreError::InvalidInput("reward n_T must be > 0".into()));
        }
        if let RewardKind::InverseQuotientMinusMagnon { lambda } = self.kind {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(CoreError::InvalidInput("reward λ must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Reward from the target occupancy and the penalised mode's occupancy.
    pub fn evaluate(&self, target_occupancy: f64, penalty_occupancy: f64) -> f64 {
        let base = self.n_thermal / target_occupancy.max(OCCUPANCY_FLOOR);
        match self.kind {
            RewardKind::InverseQuotient => base,
            RewardKind::InverseQuotientMinusMagnon { lambda } => base - lambda * penalty_occupancy,
        }
    }
}

/// How a canonical action in `[-1, 1]^k` becomes control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionMap {
    /// Two actions give one complex coupling `G = (a₁ + i a₂)·G_max/√2`.
    ComplexCoupling { g_max: f64 },
    /// One action per real slot, `Ω_k = (a_k + 1)/2 · max_k`.
    NonNegative { maxima: Vec<f64> },
}

impl ActionMap {
    pub fn action_dim(&self) -> usize {
        match self {
            ActionMap::ComplexCoupling { .. } => 2,
            ActionMap::NonNegative { maxima } => maxima.len(),
        }
    }

    pub fn n_slots(&self) -> usize {
        match self {
            ActionMap::ComplexCoupling { .. } => 1,
            ActionMap::NonNegative { maxima } => maxima.len(),
        }
    }

    /// Maps an already-clipped action.
    pub fn controls(&self, action: &[f64]) -> Vec<Complex64> {
        match self {
            ActionMap::ComplexCoupling { g_max } => {
                let s = g_max / std::f64::consts::SQRT_2;
                vec![Complex64::new(action[0] * s, action[1] * s)]
            }
            ActionMap::NonNegative { maxima } => maxima
                .iter()
                .zip(action)
                .map(|(m, a)| Complex64::new(0.5 * (a + 1.0) * m, 0.0))
                .collect(),
        }
    }

    /// Controls scaled to O(1), flattened to reals.
    fn normalized_controls(&self, controls: &[Complex64]) -> Vec<f64> {
        match self {
            ActionMap::ComplexCoupling { g_max } => {
                controls.iter().flat_map(|c| [c.re / g_max, c.im / g_max]).collect()
            }
            ActionMap::NonNegative { maxima } => {
                controls.iter().zip(maxima).map(|(c, m)| c.re / m).collect()
            }
        }
    }

    fn control_obs_dim(&self) -> usize {
        self.action_dim()
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ActionMap::ComplexCoupling { g_max } => g_max.is_finite() && *g_max > 0.0,
            ActionMap::NonNegative { maxima } => {
                !maxima.is_empty() && maxima.iter().all(|m| m.is_finite() && *m > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidInput("control maxima must be finite and > 0".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub system: SystemSpec,
    pub steps_per_episode: usize,
    pub dt: f64,
    pub action_map: ActionMap,
    pub reward: RewardSpec,
    /// Divisor for covariance entries in observations.
    pub moment_scale: f64,
    pub seed: u64,
}

impl EnvConfig {
    /// Two-mode environment with `|G| ≤ g_max`.
    pub fn bipartite(params: &BipartiteParams, g_max: f64) -> Result<Self> {
        let cfg = Self {
            system: params.build()?,
            steps_per_episode: 50,
            dt: DEFAULT_DT,
            action_map: ActionMap::ComplexCoupling { g_max },
            reward: RewardSpec::inverse_quotient(params.phonon_bath),
            moment_scale: params.phonon_bath,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Three-mode environment with both rates in `[0, omega_max]` and the
    /// magnon-penalised reward.
    pub fn tripartite(params: &TripartiteParams, omega_max: f64, lambda: f64) -> Result<Self> {
        let cfg = Self {
            system: params.build()?,
            steps_per_episode: 150,
            dt: DEFAULT_DT,
            action_map: ActionMap::NonNegative {
                maxima: vec![omega_max, omega_max],
            },
            reward: RewardSpec::with_magnon_penalty(params.phonon_bath, lambda),
            moment_scale: params.phonon_bath,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.action_map.validate()?;
        self.reward.validate()?;
        if self.steps_per_episode == 0 {
            return Err(CoreError::InvalidInput("steps_per_episode must be >= 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CoreError::InvalidInput("dt must be > 0".into()));
        }
        if !(self.moment_scale.is_finite() && self.moment_scale > 0.0) {
            return Err(CoreError::InvalidInput("moment_scale must be > 0".into()));
        }
        if self.action_map.n_slots() != self.system.n_control_slots {
            return Err(CoreError::InvalidInput(format!(
                "action map drives {} slots, system has {}",
                self.action_map.n_slots(),
                self.system.n_control_slots
            )));
        }
        if let ActionMap::ComplexCoupling { .. } = self.action_map {
            if !self.system.slot_is_complex(0) {
                return Err(CoreError::InvalidInput("complex action map needs a complex slot".into()));
            }
        }
        if matches!(self.reward.kind, RewardKind::InverseQuotientMinusMagnon { .. })
            && self.system.mode_index("magnon").is_none()
        {
            return Err(CoreError::InvalidInput("magnon penalty needs a mode labelled 'magnon'".into()));
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        self.action_map.action_dim()
    }

    pub fn observation_dim(&self) -> usize {
        let n = self.system.phase_space_dim();
        n * (n + 1) / 2 + self.action_map.control_obs_dim()
    }
}

/// Flat observation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// End time of the step, in units of `1/ω_b`.
    pub time: f64,
    pub action: Vec<f64>,
    pub controls: Vec<Complex64>,
    pub occupancies: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub target_mode: usize,
    pub n_thermal: f64,
    pub clipped_actions: usize,
    /// Reason the episode stopped early, if it did.
    pub aborted: Option<String>,
}

impl EpisodeTrace {
    fn empty(target_mode: usize, n_thermal: f64) -> Self {
        Self {
            steps: Vec::new(),
            target_mode,
            n_thermal,
            clipped_actions: 0,
            aborted: None,
        }
    }

    /// Trace of an open-loop schedule, scored with the plain inverse quotient.
    pub fn from_schedule(
        system: &SystemSpec,
        schedule: &ControlSchedule,
        states: &[CovarianceState],
    ) -> Self {
        let n_t = system.target_bath_occupancy();
        let reward = RewardSpec::inverse_quotient(n_t);
        let mut trace = Self::empty(system.target_mode, n_t);
        trace.steps = states
            .iter()
            .zip(&schedule.values)
            .map(|(s, c)| {
                let occ = s.occupancies();
                StepRecord {
                    time: s.time,
                    action: Vec::new(),
                    controls: c.clone(),
                    reward: reward.evaluate(occ[system.target_mode], 0.0),
                    occupancies: occ,
                }
            })
            .collect();
        trace
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn net_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Target-mode quotient after every step.
    pub fn quotients(&self) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| s.occupancies[self.target_mode].max(OCCUPANCY_FLOOR) / self.n_thermal)
            .collect()
    }

    pub fn final_quotient(&self) -> Option<f64> {
        self.quotients().last().copied()
    }

    /// `(min quotient, time of min)`.
    pub fn min_quotient(&self) -> Option<(f64, f64)> {
        self.quotients()
            .into_iter()
            .zip(self.steps.iter().map(|s| s.time))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// First step-end time at which the quotient is at or below `target`.
    pub fn first_crossing(&self, target: f64) -> Option<f64> {
        self.quotients()
            .into_iter()
            .zip(&self.steps)
            .find(|(q, _)| *q <= target)
            .map(|(_, s)| s.time)
    }
}

/// One stateful episode runner. Not `Sync`; use one per worker.
#[derive(Debug, Clone)]
pub struct CoolingEnv {
    config: EnvConfig,
    state: CovarianceState,
    controls: Vec<Complex64>,
    step_index: usize,
    trace: EpisodeTrace,
    penalty_mode: Option<usize>,
    initial: CovarianceState,
}

impl CoolingEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let initial = thermal_covariance(&config.system);
        let penalty_mode = config.system.mode_index("magnon");
        let trace = EpisodeTrace::empty(config.system.target_mode, config.reward.n_thermal);
        Ok(Self {
            controls: vec![Complex64::new(0.0, 0.0); config.system.n_control_slots],
            state: initial.clone(),
            initial,
            step_index: 0,
            trace,
            penalty_mode,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &CovarianceState {
        &self.state
    }

    pub fn trace(&self) -> &EpisodeTrace {
        &self.trace
    }

    pub fn into_trace(self) -> EpisodeTrace {
        self.trace
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.config.steps_per_episode || self.trace.aborted.is_some()
    }

    pub fn reset(&mut self) -> Observation {
        self.state = self.initial.clone();
        self.controls.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        self.step_index = 0;
        self.trace = EpisodeTrace::empty(self.config.system.target_mode, self.config.reward.n_thermal);
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        let sigma = &self.state.sigma;
        let n = sigma.nrows();
        let scale = self.config.moment_scale;
        let mut v = Vec::with_capacity(self.config.observation_dim());
        for i in 0..n {
            for j in i..n {
                v.push(sigma[(i, j)] / scale);
            }
        }
        v.extend(self.config.action_map.normalized_controls(&self.controls));
        Observation(v)
    }

    /// Clips to `[-1, 1]` and maps to control values. Returns the clipped
    /// action, the controls and whether clipping happened.
    pub fn action_map(&self, action: &[f64]) -> Result<(Vec<f64>, Vec<Complex64>, bool)> {
        let dim = self.config.action_dim();
        if action.len() != dim {
            return Err(CoreError::InvalidInput(format!("expected {dim} actions, got {}", action.len())));
        }
        if let Some(k) = action.iter().position(|a| !a.is_finite()) {
            return Err(CoreError::EpisodeAborted(format!("action {k} is not finite")));
        }
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let was_clipped = clipped != action;
        let controls = self.config.action_map.controls(&clipped);
        Ok((clipped, controls, was_clipped))
    }

    /// Advances one control interval. Returns `(observation, reward, done)`.
    pub fn step(&mut self, action: &[f64]) -> Result<(Observation, f64, bool)> {
        if self.is_done() {
            return Err(CoreError::InvalidInput("episode is finished; call reset".into()));
        }
        let (clipped, controls, was_clipped) = match self.action_map(action) {
            Ok(v) => v,
            Err(e @ CoreError::EpisodeAborted(_)) => {
                self.trace.aborted = Some(e.to_string());
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        let next = build_generators(&self.config.system, &controls)
            .and_then(|gen| Propagator::new(&gen, self.config.dt))
            .and_then(|p| p.apply(&self.state));
        let next = match next {
            Ok(s) if s.sigma.iter().all(|v| v.is_finite()) => s,
            Ok(_) => return Err(self.abort("non-finite covariance".into())),
            Err(e) => return Err(self.abort(e.to_string())),
        };
        if was_clipped {
            self.trace.clipped_actions += 1;
        }
        self.state = next;
        self.controls = controls.clone();
        self.step_index += 1;
        let occ = self.state.occupancies();
        let target = occupancy(&self.state, self.config.system.target_mode);
        let penalty = self.penalty_mode.map_or(0.0, |m| occ[m]);
        let reward = self.config.reward.evaluate(target, penalty);
        self.trace.steps.push(StepRecord {
            time: self.state.time,
            action: clipped,
            controls,
            occupancies: occ,
            reward,
        });
        Ok((self.observe(), reward, self.is_done()))
    }

    fn abort(&mut self, reason: String) -> CoreError {
        self.trace.aborted = Some(reason.clone());
        CoreError::EpisodeAborted(reason)
    }

    /// Resets and runs a full episode under `policy`.
    pub fn run_episode<P>(&mut self, mut policy: P) -> Result<EpisodeTrace>
    where
        P: FnMut(&Observation) -> Vec<f64>,
    {
        let mut obs = self.reset();
        while !self.is_done() {
            let a = policy(&obs);
            obs = self.step(&a)?.0;
        }
        Ok(self.trace.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bipartite_reset_observation() {
        let mut env = CoolingEnv::new(EnvConfig::bipartite(&BipartiteParams::default(), 1.0).unwrap()).unwrap();
        let obs = env.reset();
        assert_eq!(obs.len(), 10 + 2);
        assert_eq!(obs.len(), env.config().observation_dim());
        // phonon x-x entry is (n_T + ½)/n_T
        let idx_xb = 4 + 3;
        assert!((obs.0[idx_xb] - 100.5 / 100.0).abs() < 1e-14);
        assert_eq!(&obs.0[10..], &[0.0, 0.0]);
        assert_eq!(env.reset(), obs);
    }

    #[test]
    fn action_map_examples() {
        let env = CoolingEnv::new(EnvConfig::bipartite(&BipartiteParams::default(), 5.0 * 2f64.sqrt()).unwrap()).unwrap();
        let (_, c, _) = env.action_map(&[1.0, 0.0]).unwrap();
        assert!((c[0] - Complex64::new(5.0, 0.0)).norm() < 1e-12);

        let tri = CoolingEnv::new(EnvConfig::tripartite(&TripartiteParams::default(), 100.0, 10.0).unwrap()).unwrap();
        let (_, c, _) = tri.action_map(&[-1.0, -1.0]).unwrap();
        assert_eq!(c, vec![Complex64::new(0.0, 0.0); 2]);
        let (_, c, _) = tri.action_map(&[1.0, 1.0]).unwrap();
        assert_eq!(c, vec![Complex64::new(100.0, 0.0); 2]);
        let (clip, _, was) = tri.action_map(&[1.5, -0.3]).unwrap();
        assert!(was);
        assert_eq!(clip, vec![1.0, -0.3]);
    }

    #[test]
    fn zero_action_reward_is_bare_decay() {
        let p = BipartiteParams::default();
        let mut env = CoolingEnv::new(EnvConfig::bipartite(&p, 1.0).unwrap()).unwrap();
        env.reset();
        let (_, r, done) = env.step(&[0.0, 0.0]).unwrap();
        assert!(!done);
        // ⟨b†b⟩ stays at n_T = 100 with zero-temperature magnon bath uncoupled
        assert!((r - 1.0).abs() < 1e-9, "{r}");
        let trace = env.run_episode(|_| vec![0.0, 0.0]).unwrap();
        assert_eq!(trace.len(), 50);
        assert!((trace.net_reward() - 50.0).abs() < 0.5);
        let times: Vec<f64> = trace.steps.iter().map(|s| s.time).collect();
        assert!(times.windows(2).all(|w| (w[1] - w[0] - DEFAULT_DT).abs() < 1e-9));
    }

    #[test]
    fn reward_arithmetic() {
        let r = RewardSpec::with_magnon_penalty(100.0, 10.0);
        assert!((r.evaluate(1.0, 0.05) - 99.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_action_aborts() {
        let mut env = CoolingEnv::new(EnvConfig::bipartite(&BipartiteParams::default(), 1.0).unwrap()).unwrap();
        env.reset();
        assert!(matches!(env.step(&[f64::NAN, 0.0]), Err(CoreError::EpisodeAborted(_))));
        assert!(env.trace().aborted.is_some());
        assert!(env.is_done());
    }

    #[test]
    fn done_after_last_step() {
        let mut cfg = EnvConfig::bipartite(&BipartiteParams::default(), 1.0).unwrap();
        cfg.steps_per_episode = 2;
        let mut env = CoolingEnv::new(cfg).unwrap();
        env.reset();
        assert!(!env.step(&[0.1, 0.1]).unwrap().2);
        assert!(env.step(&[0.1, 0.1]).unwrap().2);
        assert!(env.step(&[0.1, 0.1]).is_err());
    }
}
