//! Reference protocols without learning: constant-coupling sideband cooling,
//! Raman transfer limits and counter-intuitive Gaussian pulse pairs.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_generators, thermal_covariance, Propagator};
use crate::env::{EpisodeTrace, DEFAULT_DT};
use crate::optim::{multistart, Bounds, SearchConfig};
use crate::schedule::{simulate, ControlSchedule};
use crate::system::SystemSpec;
use crate::{par, to_periods, CoreError, Result, OCCUPANCY_FLOOR};

/// Quotient above which a constant-coupling run is treated as diverged and
/// stopped early.
const DIVERGENCE_QUOTIENT: f64 = 1e8;

/// `n` logarithmically spaced points per decade covering `[lo, hi]`, both
/// ends included.
pub fn log_spaced(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && per_decade > 0);
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    (0..=n)
        .map(|k| lo * 10f64.powf(decades * k as f64 / n as f64))
        .collect()
}

/// Default coupling grid for the red-sideband sweep.
pub fn default_sideband_grid() -> Vec<f64> {
    log_spaced(0.02, 0.3, 15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandEntry {
    pub coupling: f64,
    pub min_quotient: f64,
    /// In phonon periods.
    pub time_to_min: f64,
    /// Settling time in periods: from here to the horizon the quotient stays
    /// at or below the sweep target.
    pub time_to_target: Option<f64>,
    /// First time (periods) the quotient touches the target.
    pub first_crossing: Option<f64>,
    pub diverged: bool,
    /// Quotient after every step.
    #[serde(skip)]
    pub curve: Vec<f64>,
    #[serde(skip)]
    pub step_periods: f64,
}

impl SidebandEntry {
    /// Settling time for an arbitrary target, in periods.
    pub fn settling_time(&self, target: f64) -> Option<f64> {
        if self.diverged || self.curve.last().is_none_or(|&q| q > target) {
            return None;
        }
        let start = self.curve.iter().rposition(|&q| q > target).map_or(0, |k| k + 1);
        Some((start + 1) as f64 * self.step_periods)
    }

    pub fn first_crossing_time(&self, target: f64) -> Option<f64> {
        self.curve
            .iter()
            .position(|&q| q <= target)
            .map(|k| (k + 1) as f64 * self.step_periods)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandSweepResult {
    /// Sorted by coupling.
    pub entries: Vec<SidebandEntry>,
    pub target_quotient: f64,
    /// In phonon periods.
    pub horizon: f64,
}

impl SidebandSweepResult {
    pub fn best_quotient(&self) -> Option<&SidebandEntry> {
        self.entries.iter().min_by(|a, b| a.min_quotient.total_cmp(&b.min_quotient))
    }
}

/// Constant real coupling on control slot 0 from the thermal state, for every
/// value in `couplings`. `horizon` is in units of `1/ω_b`.
pub fn sideband_sweep(
    system: &SystemSpec,
    couplings: &[f64],
    horizon: f64,
    target_quotient: f64,
) -> Result<SidebandSweepResult> {
    if system.n_control_slots != 1 {
        return Err(CoreError::InvalidInput("sideband sweep needs exactly one control slot".into()));
    }
    if !(horizon > 0.0 && target_quotient > 0.0) {
        return Err(CoreError::InvalidInput("horizon and target must be > 0".into()));
    }
    let n_t = system.target_bath_occupancy();
    if !(n_t > 0.0) {
        return Err(CoreError::InvalidInput("target mode needs a hot bath".into()));
    }
    let steps = (horizon / DEFAULT_DT).round().max(1.0) as usize;
    let mut sorted = couplings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let entries = par::map(&sorted, |&g| sideband_entry(system, g, steps, n_t, target_quotient))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SidebandSweepResult {
        entries,
        target_quotient,
        horizon: to_periods(steps as f64 * DEFAULT_DT),
    })
}

fn sideband_entry(system: &SystemSpec, g: f64, steps: usize, n_t: f64, target: f64) -> Result<SidebandEntry> {
    let prop = Propagator::new(&build_generators(system, &[Complex64::new(g, 0.0)])?, DEFAULT_DT)?;
    let mut state = thermal_covariance(system);
    let mut curve = Vec::with_capacity(steps);
    let mut diverged = false;
    for _ in 0..steps {
        state = match prop.apply(&state) {
            Ok(s) => s,
            Err(_) => {
                diverged = true;
                break;
            }
        };
        let q = crate::dynamics::raw_occupancy(&state, system.target_mode).max(OCCUPANCY_FLOOR) / n_t;
        curve.push(q);
        if q > DIVERGENCE_QUOTIENT {
            diverged = true;
            break;
        }
    }
    let (k_min, &min_quotient) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap_or((0, &f64::INFINITY));
    let step_periods = to_periods(DEFAULT_DT);
    let mut entry = SidebandEntry {
        coupling: g,
        min_quotient,
        time_to_min: (k_min + 1) as f64 * step_periods,
        time_to_target: None,
        first_crossing: None,
        diverged,
        curve,
        step_periods,
    };
    entry.time_to_target = entry.settling_time(target);
    entry.first_crossing = entry.first_crossing_time(target);
    Ok(entry)
}

/// Shortest settling time (periods) to `target` over all sweep entries.
pub fn sideband_time_limit(result: &SidebandSweepResult, target: f64) -> Result<f64> {
    result
        .entries
        .iter()
        .filter_map(|e| e.settling_time(target))
        .min_by(f64::total_cmp)
        .ok_or_else(|| CoreError::TargetUnreachable {
            target,
            best: result.best_quotient().map_or(f64::INFINITY, |e| e.min_quotient),
        })
}

/// Ideal Raman transfer time `π ω_m / (2 Ω_S Ω_P)` in units of `1/ω_b`.
pub fn raman_time_limit(magnon_frequency: f64, omega_s: f64, omega_p: f64) -> Result<f64> {
    if !(omega_s > 0.0 && omega_p > 0.0 && magnon_frequency > 0.0) {
        return Err(CoreError::InvalidInput(
            "Raman limit needs positive couplings and detuning".into(),
        ));
    }
    if magnon_frequency < 10.0 * omega_s.hypot(omega_p) {
        log::warn!(
            "ω_m = {magnon_frequency} is not large against √(Ω_S² + Ω_P²) = {:.3}; the Raman limit is unreliable",
            omega_s.hypot(omega_p)
        );
    }
    Ok(std::f64::consts::PI * magnon_frequency / (2.0 * omega_s * omega_p))
}

/// Effective two-mode detuning and coupling `(Δ_eff, Ω_eff)` after
/// eliminating the far-detuned magnon.
pub fn effective_two_mode(magnon_frequency: f64, omega_s: f64, omega_p: f64) -> (f64, f64) {
    (
        (omega_p * omega_p - omega_s * omega_s) / (2.0 * magnon_frequency),
        omega_s * omega_p / magnon_frequency,
    )
}

/// Two Gaussian envelopes for the Stokes (slot 0) and pump (slot 1) rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPulsePair {
    pub peak_s: f64,
    pub peak_p: f64,
    pub center_s: f64,
    pub center_p: f64,
    /// Standard deviation of both envelopes.
    pub width: f64,
    pub total_time: f64,
}

impl GaussianPulsePair {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.peak_s, self.peak_p, self.center_s, self.center_p, self.width, self.total_time]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.peak_s < 0.0 || self.peak_p < 0.0 || self.width <= 0.0 || self.total_time <= 0.0 {
            return Err(CoreError::InvalidInput(format!("invalid pulse pair {self:?}")));
        }
        Ok(())
    }

    /// Stokes pulse strictly before the pump pulse.
    pub fn is_counter_intuitive(&self) -> bool {
        self.center_s < self.center_p
    }

    pub fn amplitudes(&self, t: f64) -> (f64, f64) {
        let g = |c: f64| (-(t - c).powi(2) / (2.0 * self.width * self.width)).exp();
        (self.peak_s * g(self.center_s), self.peak_p * g(self.center_p))
    }

    /// Piecewise-constant samples at interval midpoints.
    pub fn schedule(&self, dt: f64) -> Result<ControlSchedule> {
        self.validate()?;
        let n = (self.total_time / dt).round().max(1.0) as usize;
        let values = (0..n)
            .map(|k| {
                let (s, p) = self.amplitudes((k as f64 + 0.5) * dt);
                vec![Complex64::new(s, 0.0), Complex64::new(p, 0.0)]
            })
            .collect();
        ControlSchedule::new(dt, values)
    }
}

/// Runs `pulses` from the thermal state on the standard control grid.
pub fn stirap_run(system: &SystemSpec, pulses: &GaussianPulsePair) -> Result<EpisodeTrace> {
    if system.n_control_slots != 2 {
        return Err(CoreError::InvalidInput("pulse pairs drive exactly two control slots".into()));
    }
    let schedule = pulses.schedule(DEFAULT_DT)?;
    let states = simulate(system, &schedule, &thermal_covariance(system))?;
    Ok(EpisodeTrace::from_schedule(system, &schedule, &states))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StirapOptimum {
    pub pulses: GaussianPulsePair,
    pub final_quotient: f64,
    /// False when the best restart hit the iteration cap.
    pub converged: bool,
    /// Final quotient of every restart, best first.
    pub restart_quotients: Vec<f64>,
}

/// Searches Stokes center, Stokes-to-pump delay and common width with both
/// peaks pinned at `omega_max`, minimising the final target quotient after
/// `horizon` (units of `1/ω_b`). The delay is kept positive by construction.
pub fn stirap_optimize(
    system: &SystemSpec,
    omega_max: f64,
    horizon: f64,
    cfg: &SearchConfig,
) -> Result<StirapOptimum> {
    if !(omega_max > 0.0 && horizon > 0.0) {
        return Err(CoreError::InvalidInput("omega_max and horizon must be > 0".into()));
    }
    let min_delay = 1e-3 * horizon;
    let bounds = Bounds::new(
        vec![0.0, min_delay, horizon / 40.0],
        vec![horizon, 0.5 * horizon, 0.5 * horizon],
    )?;
    let pulses_at = |x: &[f64]| GaussianPulsePair {
        peak_s: omega_max,
        peak_p: omega_max,
        center_s: x[0],
        center_p: x[0] + x[1],
        width: x[2],
        total_time: horizon,
    };
    let objective = |x: &[f64]| match stirap_run(system, &pulses_at(x)) {
        Ok(trace) => trace.final_quotient().map_or(f64::INFINITY, f64::log10),
        Err(_) => f64::INFINITY,
    };
    // Stokes first, separated by about one width.
    let first = [0.3 * horizon, 0.15 * horizon, 0.15 * horizon];
    let runs = multistart(&objective, &bounds, Some(&first), cfg)?;
    let best = &runs[0];
    let pulses = pulses_at(&best.x);
    debug_assert!(pulses.is_counter_intuitive());
    if !pulses.is_counter_intuitive() {
        return Err(CoreError::InvalidInput("optimizer returned a non-counter-intuitive pair".into()));
    }
    Ok(StirapOptimum {
        final_quotient: 10f64.powf(best.value),
        converged: best.iterations < cfg.max_iters,
        restart_quotients: runs.iter().map(|r| 10f64.powf(r.value)).collect(),
        pulses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{BipartiteParams, TripartiteParams};
    use crate::PERIOD;

    #[test]
    fn grid_spacing() {
        let g = log_spaced(0.01, 1.0, 15);
        assert_eq!(g.len(), 31);
        assert!((g[15] - 0.1).abs() < 1e-12);
        assert!((g[30] - 1.0).abs() < 1e-12);
        assert!(default_sideband_grid().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn zero_coupling_does_not_cool() {
        let sys = BipartiteParams::default().build().unwrap();
        let r = sideband_sweep(&sys, &[0.0], 20.0 * PERIOD, 1e-4).unwrap();
        assert!((r.entries[0].min_quotient - 1.0).abs() < 1e-6);
        assert!(r.entries[0].time_to_target.is_none());
        assert!(matches!(
            sideband_time_limit(&r, 1e-4),
            Err(CoreError::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn ultrastrong_constant_coupling_does_not_cool() {
        let sys = BipartiteParams::default().build().unwrap();
        let r = sideband_sweep(&sys, &[2.0], 200.0 * PERIOD, 1e-4).unwrap();
        assert!(r.entries[0].min_quotient > 1e-2, "{:?}", r.entries[0].min_quotient);
        assert!(r.entries[0].diverged);
    }

    #[test]
    fn time_limit_picks_fastest_entry() {
        let mk = |g: f64, curve: Vec<f64>| SidebandEntry {
            coupling: g,
            min_quotient: curve.iter().cloned().fold(f64::INFINITY, f64::min),
            time_to_min: 0.0,
            time_to_target: None,
            first_crossing: None,
            diverged: false,
            curve,
            step_periods: 10.0,
        };
        let r = SidebandSweepResult {
            entries: vec![
                mk(0.1, vec![1.0, 0.5, 0.0, 0.0, 0.0]),
                mk(0.2, vec![1.0, 0.5, 0.5, 0.5, 0.0]),
            ],
            target_quotient: 0.1,
            horizon: 50.0,
        };
        assert_eq!(sideband_time_limit(&r, 0.1).unwrap(), 30.0);
        assert_eq!(sideband_time_limit(&r, 0.6).unwrap(), 20.0);
    }

    #[test]
    fn raman_and_effective_model_agree() {
        let t = raman_time_limit(1e3, 10.0, 10.0).unwrap();
        assert!((t - 5.0 * std::f64::consts::PI).abs() < 1e-12);
        let (d, w) = effective_two_mode(1e3, 10.0, 10.0);
        assert_eq!(d, 0.0);
        assert!((w - 0.1).abs() < 1e-15);
        assert!((std::f64::consts::PI / (2.0 * w) - t).abs() < 1e-12);
        assert!(raman_time_limit(1e3, 0.0, 1.0).is_err());
        let (d, w) = effective_two_mode(1e3, 4.0, 0.0);
        assert_eq!((d, w), (-16.0 / 2e3, 0.0));
    }

    #[test]
    fn zero_peak_pulses_leave_state_thermal() {
        let sys = TripartiteParams::auxiliary().undamped().build().unwrap();
        let p = GaussianPulsePair {
            peak_s: 0.0,
            peak_p: 0.0,
            center_s: 1.0,
            center_p: 2.0,
            width: 1.0,
            total_time: 2.0 * PERIOD,
        };
        let trace = stirap_run(&sys, &p).unwrap();
        assert_eq!(trace.len(), 20);
        assert!(trace.quotients().iter().all(|q| (q - 1.0).abs() < 1e-12));
    }

    #[test]
    fn schedule_samples_midpoints() {
        let p = GaussianPulsePair {
            peak_s: 2.0,
            peak_p: 3.0,
            center_s: 0.25,
            center_p: 0.75,
            width: 0.1,
            total_time: 1.0,
        };
        let s = p.schedule(0.5).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.values[0][0].re - 2.0).abs() < 1e-15);
        assert!((s.values[1][1].re - 3.0).abs() < 1e-15);
    }
}
