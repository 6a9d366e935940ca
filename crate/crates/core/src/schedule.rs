//! Piecewise-constant control schedules and their exact propagation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_generators, CovarianceState, Propagator};
use crate::system::SystemSpec;
use crate::{CoreError, Result};

/// Control values held constant over consecutive intervals of length `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub step: f64,
    pub values: Vec<Vec<Complex64>>,
}

impl ControlSchedule {
    pub fn new(step: f64, values: Vec<Vec<Complex64>>) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(CoreError::InvalidInput(format!("schedule step must be > 0, got {step}")));
        }
        if let Some(width) = values.first().map(Vec::len) {
            if values.iter().any(|v| v.len() != width) {
                return Err(CoreError::InvalidInput("ragged control schedule".into()));
            }
        }
        Ok(Self { step, values })
    }

    pub fn zeros(n_steps: usize, n_slots: usize, step: f64) -> Result<Self> {
        Self::new(step, vec![vec![Complex64::new(0.0, 0.0); n_slots]; n_steps])
    }

    /// Constant controls over `n_steps` intervals.
    pub fn constant(controls: &[Complex64], n_steps: usize, step: f64) -> Result<Self> {
        Self::new(step, vec![controls.to_vec(); n_steps])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_slots(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn horizon(&self) -> f64 {
        self.step * self.values.len() as f64
    }

    /// End time of every interval.
    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        (1..=self.values.len()).map(move |k| k as f64 * self.step)
    }

    /// Controls active at time `t` (the last interval for `t ≥ horizon`).
    pub fn at(&self, t: f64) -> &[Complex64] {
        let k = ((t / self.step).floor().max(0.0) as usize).min(self.values.len().saturating_sub(1));
        &self.values[k]
    }
}

/// Propagates `initial` through every interval of `schedule`, returning the
/// state at each interval end.
pub fn simulate(
    system: &SystemSpec,
    schedule: &ControlSchedule,
    initial: &CovarianceState,
) -> Result<Vec<CovarianceState>> {
    if schedule.n_slots() != system.n_control_slots && !schedule.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "schedule has {} slots, system expects {}",
            schedule.n_slots(),
            system.n_control_slots
        )));
    }
    let mut out = Vec::with_capacity(schedule.len());
    let mut state = initial.clone();
    let mut cached: Option<(&[Complex64], Propagator)> = None;
    for controls in &schedule.values {
        let reuse = matches!(&cached, Some((c, _)) if *c == controls.as_slice());
        if !reuse {
            let gen = build_generators(system, controls)?;
            cached = Some((controls.as_slice(), Propagator::new(&gen, schedule.step)?));
        }
        let (_, prop) = cached.as_ref().expect("propagator cached above");
        state = prop.apply(&state)?;
        out.push(state.clone());
    }
    Ok(out)
}
