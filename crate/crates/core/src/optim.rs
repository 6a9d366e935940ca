//! Derivative-free minimisation with seeded multi-start.
//!
//! The simplex search itself is argmin's Nelder–Mead; this module adds box
//! bounds (by clamping), a deterministic restart policy and parallel fan-out.

use argmin::core::{CostFunction, Error as ArgminError, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{par, CoreError, Result};

/// Closed interval per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(CoreError::InvalidInput("bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
            return Err(CoreError::InvalidInput("every bound needs finite lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.clamp(l, u))
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| rng.random_range(l..u))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    pub max_iters: u64,
    /// Stop when the simplex values' standard deviation drops below this.
    pub sd_tolerance: f64,
    /// Initial simplex edge as a fraction of each bound's width.
    pub simplex_scale: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 400,
            sd_tolerance: 1e-10,
            simplex_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: u64,
}

struct Clamped<'a, F> {
    f: &'a F,
    bounds: &'a Bounds,
}

impl<F: Fn(&[f64]) -> f64> CostFunction for Clamped<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, ArgminError> {
        let v = (self.f)(&self.bounds.clamp(p));
        // NaN would poison the simplex ordering
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

/// One Nelder–Mead run from `start`. Objective values are taken at the
/// clamped point, and the returned `x` is clamped too.
pub fn nelder_mead<F>(f: &F, start: &[f64], bounds: &Bounds, cfg: &SearchConfig) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64,
{
    if start.len() != bounds.dim() {
        return Err(CoreError::InvalidInput("start point and bounds disagree in dimension".into()));
    }
    let x0 = bounds.clamp(start);
    let mut simplex = vec![x0.clone()];
    for k in 0..x0.len() {
        let mut v = x0.clone();
        let step = cfg.simplex_scale * (bounds.upper[k] - bounds.lower[k]);
        // step inward if the vertex would land outside
        v[k] = if v[k] + step <= bounds.upper[k] { v[k] + step } else { v[k] - step };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(cfg.sd_tolerance)
        .map_err(|e| CoreError::InvalidInput(e.to_string()))?;
    let problem = Clamped { f, bounds };
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(cfg.max_iters))
        .timer(false)
        .run()
        .map_err(|e| CoreError::InvalidInput(format!("optimiser failed: {e}")))?;
    let state = res.state();
    let x = state
        .get_best_param()
        .map(|p| bounds.clamp(p))
        .unwrap_or(x0);
    Ok(Minimum {
        value: state.get_best_cost(),
        x,
        iterations: state.get_iter(),
    })
}

/// Runs `cfg.restarts` searches from seeded uniform starts (the first one at
/// `first_start` if given) and returns every result, best first.
pub fn multistart<F>(
    f: &F,
    bounds: &Bounds,
    first_start: Option<&[f64]>,
    cfg: &SearchConfig,
) -> Result<Vec<Minimum>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let restarts = cfg.restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|k| match (k, first_start) {
            (0, Some(s)) => s.to_vec(),
            _ => bounds.sample(&mut rng),
        })
        .collect();
    let mut runs = par::map(&starts, |s| nelder_mead(f, s, bounds, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let cfg = SearchConfig {
            restarts: 4,
            max_iters: 2000,
            ..Default::default()
        };
        let best = &multistart(&rosenbrock, &b, Some(&[-1.5, 1.5]), &cfg).unwrap()[0];
        assert!((best.x[0] - 1.0).abs() < 1e-3 && (best.x[1] - 1.0).abs() < 1e-3, "{best:?}");
    }

    #[test]
    fn respects_bounds() {
        let b = Bounds::new(vec![1.0], vec![3.0]).unwrap();
        let m = nelder_mead(&|x: &[f64]| x[0] * x[0], &[2.0], &b, &SearchConfig::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn seeded_restarts_are_reproducible() {
        let b = Bounds::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
        let f = |x: &[f64]| (x[0] * 3.0).sin() + (x[1] - 0.5).powi(2);
        let cfg = SearchConfig {
            restarts: 5,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(multistart(&f, &b, None, &cfg).unwrap(), multistart(&f, &b, None, &cfg).unwrap());
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }
}
