//! Adaptive Dormand–Prince 5(4) integrator over a flat complex state.

use num_complex::Complex64;

use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest step accepted before giving up.
    pub min_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            min_step: 1e-12,
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Reusable stage buffers plus the step-size controller state.
pub struct DormandPrince {
    k: [Vec<Complex64>; 7],
    tmp: Vec<Complex64>,
    next: Vec<Complex64>,
    pub tol: Tolerances,
    /// Step size carried across calls.
    pub step: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl DormandPrince {
    pub fn new(n: usize, tol: Tolerances) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n];
        Self {
            k: std::array::from_fn(|_| z.clone()),
            tmp: z.clone(),
            next: z,
            tol,
            step: 0.0,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Integrates `dy/dt = f(y)` from `t0` to `t1` in place.
    pub fn integrate<F>(&mut self, y: &mut [Complex64], t0: f64, t1: f64, f: F) -> Result<()>
    where
        F: Fn(&[Complex64], &mut [Complex64]),
    {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(());
        }
        if self.step <= 0.0 {
            self.step = (span * 1e-2).min(1e-2);
        }
        let mut t = t0;
        let mut h = self.step.min(span);
        f(y, &mut self.k[0]);
        while t < t1 {
            let last = t + h >= t1;
            if last {
                h = t1 - t;
            }
            let err = self.trial(y, h, &f);
            if err <= 1.0 {
                t = if last { t1 } else { t + h };
                y.copy_from_slice(&self.next);
                // first-same-as-last
                self.k.swap(0, 6);
                self.accepted += 1;
                let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    h *= grow;
                } else {
                    self.step = h * grow;
                }
            } else {
                self.rejected += 1;
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                if h < self.tol.min_step {
                    return Err(CoreError::StepSizeUnderflow { time: t, step: h });
                }
            }
        }
        Ok(())
    }

    /// One trial step of size `h`; writes the candidate to `self.next` and
    /// returns the scaled error norm.
    fn trial<F>(&mut self, y: &[Complex64], h: f64, f: &F) -> f64
    where
        F: Fn(&[Complex64], &mut [Complex64]),
    {
        let n = y.len();
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (h * A21);
        }
        f(tmp, k2);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
        }
        f(tmp, k3);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
        }
        f(tmp, k4);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
        }
        f(tmp, k5);
        for i in 0..n {
            tmp[i] = y[i] + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
        }
        f(tmp, k6);
        let next = &mut self.next;
        for i in 0..n {
            next[i] = y[i] + (k1[i] * B1 + k3[i] * B3 + k4[i] * B4 + k5[i] * B5 + k6[i] * B6) * h;
        }
        f(next, k7);
        let mut acc = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            let scale = self.tol.atol + self.tol.rtol * y[i].norm().max(next[i].norm());
            acc += e.norm_sqr() / (scale * scale);
        }
        (acc / n.max(1) as f64).sqrt()
    }
}
