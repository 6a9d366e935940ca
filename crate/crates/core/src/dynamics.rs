//! Second-moment dynamics of quadratic open bosonic systems.
//!
//! State: the symmetrised quadrature covariance `σ_ij = ½⟨{R_i, R_j}⟩` with
//! `R = (x₁, p₁, …, x_N, p_N)`, `x = (c + c†)/√2`, `p = −i(c − c†)/√2`, so the
//! vacuum is `I/2`. A quadratic Hamiltonian `H = ½ Rᵀ M R` together with
//! damping `κ_j` into baths of occupancy `n̄_j` gives
//!
//! ```text
//! dσ/dt = A σ + σ Aᵀ + D,   A = Ω M − ⊕ (κ_j/2) I₂,   D = ⊕ κ_j (n̄_j + ½) I₂.
//! ```

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, symplectic_form};
use crate::system::{CouplingKind, SystemSpec};
use crate::{CoreError, Result};

/// Default floor applied to occupancies before they are divided by.
pub const OCCUPANCY_FLOOR: f64 = 1e-12;

/// Drift `A` and diffusion `D` of the covariance equation.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorPair {
    pub drift: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceState {
    pub sigma: DMatrix<f64>,
    pub time: f64,
}

impl CovarianceState {
    pub fn n_modes(&self) -> usize {
        self.sigma.nrows() / 2
    }

    /// Occupancies of every mode, unfloored.
    pub fn occupancies(&self) -> Vec<f64> {
        (0..self.n_modes()).map(|k| raw_occupancy(self, k)).collect()
    }

    pub fn min_symplectic_eigenvalue(&self) -> f64 {
        linalg::min_symplectic_eigenvalue(&self.sigma)
    }

    /// `σ + (i/2)Ω ⪰ 0`, checked through the symplectic spectrum.
    pub fn is_physical(&self, tol: f64) -> bool {
        linalg::asymmetry(&self.sigma) <= tol * self.sigma.amax().max(1.0)
            && self.min_symplectic_eigenvalue() >= 0.5 - tol
    }
}

/// Assembles the Hamiltonian matrix `M` in `H = ½ Rᵀ M R` (constant terms
/// dropped) for the given instantaneous control values.
pub fn hamiltonian_matrix(system: &SystemSpec, controls: &[Complex64]) -> Result<DMatrix<f64>> {
    let amplitudes = system.resolve_amplitudes(controls)?;
    let dim = system.phase_space_dim();
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (k, mode) in system.modes.iter().enumerate() {
        // ω c†c = ω/2 (x² + p²) − ω/2
        m[(2 * k, 2 * k)] += mode.frequency;
        m[(2 * k + 1, 2 * k + 1)] += mode.frequency;
    }
    let mut add = |u: usize, v: usize, coeff: f64| {
        // a term coeff·R_u R_v with u ≠ v contributes symmetrically
        m[(u, v)] += coeff;
        m[(v, u)] += coeff;
    };
    for (coupling, g) in system.couplings.iter().zip(amplitudes) {
        let (i, j) = coupling.mode_pair;
        let (xi, pi, xj, pj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        match coupling.kind {
            // (G c_i + G* c_i†)(c_j + c_j†) = 2 (Re G x_i − Im G p_i) x_j
            CouplingKind::LinearizedComplex => {
                add(xi, xj, 2.0 * g.re);
                add(pi, xj, -2.0 * g.im);
            }
            // Ω (c_i + c_i†)(c_j + c_j†) = 2Ω x_i x_j
            CouplingKind::PositionPosition => add(xi, xj, 2.0 * g.re),
            // G (c_i c_j† + c_i† c_j) = G (x_i x_j + p_i p_j)
            CouplingKind::BeamSplitterRwa => {
                add(xi, xj, g.re);
                add(pi, pj, g.re);
            }
        }
    }
    Ok(m)
}

/// Builds `(A, D)` for the instantaneous controls.
pub fn build_generators(system: &SystemSpec, controls: &[Complex64]) -> Result<GeneratorPair> {
    let m = hamiltonian_matrix(system, controls)?;
    let n = system.n_modes();
    let mut drift = symplectic_form(n) * m;
    let mut diffusion = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for (k, mode) in system.modes.iter().enumerate() {
        for q in [2 * k, 2 * k + 1] {
            drift[(q, q)] -= 0.5 * mode.damping;
            diffusion[(q, q)] = mode.damping * (mode.bath_occupancy + 0.5);
        }
    }
    Ok(GeneratorPair { drift, diffusion })
}

/// Product state of every mode in equilibrium with its own bath.
pub fn thermal_covariance(system: &SystemSpec) -> CovarianceState {
    let dim = system.phase_space_dim();
    let mut sigma = DMatrix::<f64>::zeros(dim, dim);
    for (k, mode) in system.modes.iter().enumerate() {
        sigma[(2 * k, 2 * k)] = mode.bath_occupancy + 0.5;
        sigma[(2 * k + 1, 2 * k + 1)] = mode.bath_occupancy + 0.5;
    }
    CovarianceState { sigma, time: 0.0 }
}

/// Exact one-interval map `σ ↦ Φ σ Φᵀ + Q` for a fixed generator and step.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub transfer: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub dt: f64,
}

impl Propagator {
    /// Computes `Φ = e^{A dt}` and `Q = ∫₀^dt e^{As} D e^{Aᵀs} ds` from a single
    /// exponential of the block matrix `[[A, D], [0, −Aᵀ]]·dt`, whose
    /// blocks are `[[Φ, X], [0, Φ⁻ᵀ]]` with `Q = X Φᵀ`.
    pub fn new(gen: &GeneratorPair, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CoreError::InvalidInput(format!("time step must be > 0, got {dt}")));
        }
        let n = gen.drift.nrows();
        let mut block = DMatrix::<f64>::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(&(&gen.drift * dt));
        block.view_mut((0, n), (n, n)).copy_from(&(&gen.diffusion * dt));
        block
            .view_mut((n, n), (n, n))
            .copy_from(&(-gen.drift.transpose() * dt));
        let non_finite = || CoreError::NonFinitePropagator {
            drift_norm: gen.drift.lp_norm(1),
            dt,
            scaled_norm: gen.drift.lp_norm(1) * dt,
        };
        let e = linalg::expm(&block).ok_or_else(non_finite)?;
        let transfer = e.view((0, 0), (n, n)).into_owned();
        let mut noise = e.view((0, n), (n, n)) * transfer.transpose();
        linalg::symmetrize(&mut noise);
        Ok(Self { transfer, noise, dt })
    }

    pub fn apply(&self, state: &CovarianceState) -> Result<CovarianceState> {
        let mut sigma = &self.transfer * &state.sigma * self.transfer.transpose() + &self.noise;
        linalg::symmetrize(&mut sigma);
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinitePropagator {
                drift_norm: f64::NAN,
                dt: self.dt,
                scaled_norm: f64::NAN,
            });
        }
        Ok(CovarianceState {
            sigma,
            time: state.time + self.dt,
        })
    }
}

/// Advances the covariance by `dt` under a constant generator.
pub fn propagate(state: &CovarianceState, gen: &GeneratorPair, dt: f64) -> Result<CovarianceState> {
    Propagator::new(gen, dt)?.apply(state)
}

/// `⟨c†c⟩ = (σ_xx + σ_pp − 1)/2` without any floor.
pub fn raw_occupancy(state: &CovarianceState, mode: usize) -> f64 {
    0.5 * (state.sigma[(2 * mode, 2 * mode)] + state.sigma[(2 * mode + 1, 2 * mode + 1)] - 1.0)
}

/// Occupancy of `mode`, clamped below at [`OCCUPANCY_FLOOR`].
pub fn occupancy(state: &CovarianceState, mode: usize) -> f64 {
    occupancy_with_floor(state, mode, OCCUPANCY_FLOOR)
}

pub fn occupancy_with_floor(state: &CovarianceState, mode: usize, floor: f64) -> f64 {
    raw_occupancy(state, mode).max(floor)
}

/// Occupancy of `mode` relative to the thermal reference `n_T`.
pub fn cooling_quotient(state: &CovarianceState, mode: usize, n_thermal: f64) -> Result<f64> {
    if !(n_thermal > 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "thermal reference occupancy must be > 0, got {n_thermal}"
        )));
    }
    Ok(occupancy(state, mode) / n_thermal)
}

/// Stationary covariance, the solution of `Aσ + σAᵀ + D = 0`.
pub fn steady_state(gen: &GeneratorPair) -> Result<CovarianceState> {
    let abscissa = linalg::spectral_abscissa(&gen.drift);
    if !(abscissa < 0.0) {
        return Err(CoreError::NoSteadyState { abscissa });
    }
    let sigma = linalg::solve_lyapunov(&gen.drift, &gen.diffusion)?;
    Ok(CovarianceState {
        sigma,
        time: f64::INFINITY,
    })
}

/// Effective magnon detuning and damping after eliminating a lossy cavity:
/// `Δ = δ_m − |J|² δ_a/(δ_a² + κ_a²)`, `κ̃ = κ_m + |J|² κ_a/(δ_a² + κ_a²)`.
pub fn adiabatic_elimination(
    magnon_detuning: f64,
    cavity_detuning: f64,
    cavity_damping: f64,
    magnon_damping: f64,
    coupling: Complex64,
) -> Result<(f64, f64)> {
    let denom = cavity_detuning * cavity_detuning + cavity_damping * cavity_damping;
    if !(denom > 0.0) {
        return Err(CoreError::InvalidInput(
            "adiabatic elimination needs δ_a² + κ_a² > 0".into(),
        ));
    }
    let j2 = coupling.norm_sqr();
    Ok((
        magnon_detuning - j2 * cavity_detuning / denom,
        magnon_damping + j2 * cavity_damping / denom,
    ))
}

/// Bose–Einstein occupancy with `ħ = k_B = 1`.
pub fn bose_occupancy(frequency: f64, temperature: f64) -> Result<f64> {
    if !(frequency > 0.0) {
        return Err(CoreError::InvalidInput(format!("frequency must be > 0, got {frequency}")));
    }
    if !(temperature >= 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "temperature must be >= 0, got {temperature}"
        )));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 / (frequency / temperature).exp_m1())
}
