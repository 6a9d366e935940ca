//! Brute-force Lindblad master equation on a truncated Fock space.
//!
//! Used only to cross-check the moment method on small instances: every
//! operator is built from truncated ladder matrices and the density matrix is
//! stored densely.

pub mod integrator;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::CovarianceState;
use crate::schedule::ControlSchedule;
use crate::system::{CouplingKind, SystemSpec};
use crate::{CoreError, Result};
pub use integrator::{DormandPrince, Tolerances};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Default bound on the total Hilbert-space dimension.
pub const DEFAULT_MAX_DIM: usize = 4096;

/// Top-level population above which a run is flagged unreliable.
pub const TRUNCATION_WARNING: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockConfig {
    pub cutoffs: Vec<usize>,
    pub max_dim: usize,
}

impl FockConfig {
    pub fn new(cutoffs: Vec<usize>) -> Result<Self> {
        Self::with_limit(cutoffs, DEFAULT_MAX_DIM)
    }

    pub fn with_limit(cutoffs: Vec<usize>, max_dim: usize) -> Result<Self> {
        if let Some(bad) = cutoffs.iter().position(|&c| c < 2) {
            return Err(CoreError::InvalidInput(format!("cutoff of mode {bad} must be >= 2")));
        }
        let dim = cutoffs
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .unwrap_or(usize::MAX);
        if dim > max_dim {
            let bytes = (dim as f64).powi(2) * 16.0;
            return Err(CoreError::DimensionOverflow {
                dimension: dim,
                limit: max_dim,
                required_mib: bytes / (1024.0 * 1024.0),
            });
        }
        Ok(Self { cutoffs, max_dim })
    }

    /// Default cutoffs (photon, magnon, phonon) for three-mode checks.
    pub fn tripartite_default() -> Self {
        Self::new(vec![4, 4, 6]).expect("96-dimensional space fits the default limit")
    }

    pub fn dim(&self) -> usize {
        self.cutoffs.iter().product()
    }

    pub fn n_modes(&self) -> usize {
        self.cutoffs.len()
    }

    /// Stride of each mode in the flattened basis index (last mode fastest).
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.cutoffs.len()];
        for k in (0..self.cutoffs.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.cutoffs[k + 1];
        }
        s
    }

    /// Occupation numbers of every basis state, `table[state][mode]`.
    fn occupation_table(&self) -> Vec<Vec<usize>> {
        let strides = self.strides();
        (0..self.dim())
            .map(|i| {
                strides
                    .iter()
                    .zip(&self.cutoffs)
                    .map(|(&s, &c)| (i / s) % c)
                    .collect()
            })
            .collect()
    }

    fn check_system(&self, system: &SystemSpec) -> Result<()> {
        if system.n_modes() != self.n_modes() {
            return Err(CoreError::InvalidInput(format!(
                "Fock config has {} modes, system has {}",
                self.n_modes(),
                system.n_modes()
            )));
        }
        Ok(())
    }
}

/// Density matrix on the truncated space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: DMatrix<Complex64>,
    pub time: f64,
}

impl DensityMatrix {
    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.rho - self.rho.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Checks trace, Hermiticity and positivity to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(CoreError::InvalidInput(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > tol {
            return Err(CoreError::InvalidInput(format!("not Hermitian (error {herm:.3e})")));
        }
        let min = self.min_eigenvalue();
        if min < -tol {
            return Err(CoreError::InvalidInput(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }
}

/// Truncated, renormalised product of single-mode thermal states at each
/// mode's bath occupancy.
pub fn thermal_density(system: &SystemSpec, fock: &FockConfig) -> Result<DensityMatrix> {
    fock.check_system(system)?;
    let occ = fock.occupation_table();
    let mut diag: Vec<f64> = occ
        .iter()
        .map(|ns| {
            ns.iter()
                .zip(&system.modes)
                .map(|(&n, m)| {
                    let nb = m.bath_occupancy;
                    if nb == 0.0 {
                        if n == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        (nb / (nb + 1.0)).powi(n as i32) / (nb + 1.0)
                    }
                })
                .product()
        })
        .collect();
    let total: f64 = diag.iter().sum();
    diag.iter_mut().for_each(|p| *p /= total);
    let d = fock.dim();
    let mut rho = DMatrix::from_element(d, d, ZERO);
    for (i, p) in diag.into_iter().enumerate() {
        rho[(i, i)] = Complex64::new(p, 0.0);
    }
    Ok(DensityMatrix { rho, time: 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ladder {
    Lower,
    Raise,
}

/// Row-compressed sparse complex operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl SparseOperator {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Vec::new(); dim],
        }
    }

    fn add(&mut self, i: usize, j: usize, v: Complex64) {
        if v == ZERO {
            return;
        }
        match self.rows[i].iter_mut().find(|(c, _)| *c == j) {
            Some((_, x)) => *x += v,
            None => self.rows[i].push((j, v)),
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::from_element(self.dim, self.dim, ZERO);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let mut s = Self::zeros(m.nrows());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                s.add(i, j, m[(i, j)]);
            }
        }
        s
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Applies a ladder operator on `mode` to basis state `state`.
fn ladder(
    fock: &FockConfig,
    strides: &[usize],
    occ: &[Vec<usize>],
    state: usize,
    mode: usize,
    op: Ladder,
) -> Option<(usize, f64)> {
    let n = occ[state][mode];
    match op {
        Ladder::Lower => (n > 0).then(|| (state - strides[mode], (n as f64).sqrt())),
        Ladder::Raise => {
            (n + 1 < fock.cutoffs[mode]).then(|| (state + strides[mode], ((n + 1) as f64).sqrt()))
        }
    }
}

fn sparse_hamiltonian(
    system: &SystemSpec,
    controls: &[Complex64],
    fock: &FockConfig,
) -> Result<SparseOperator> {
    fock.check_system(system)?;
    let amplitudes = system.resolve_amplitudes(controls)?;
    let occ = fock.occupation_table();
    let strides = fock.strides();
    let d = fock.dim();
    let mut h = SparseOperator::zeros(d);
    for (i, ns) in occ.iter().enumerate() {
        let e: f64 = ns.iter().zip(&system.modes).map(|(&n, m)| n as f64 * m.frequency).sum();
        h.add(i, i, Complex64::new(e, 0.0));
    }
    use Ladder::{Lower as L, Raise as R};
    for (coupling, g) in system.couplings.iter().zip(amplitudes) {
        let (mi, mj) = coupling.mode_pair;
        let terms: Vec<(Complex64, Ladder, Ladder)> = match coupling.kind {
            CouplingKind::LinearizedComplex => {
                vec![(g, L, L), (g, L, R), (g.conj(), R, L), (g.conj(), R, R)]
            }
            CouplingKind::PositionPosition => vec![(g, L, L), (g, L, R), (g, R, L), (g, R, R)],
            CouplingKind::BeamSplitterRwa => vec![(g, L, R), (g, R, L)],
        };
        for col in 0..d {
            for &(coeff, op_i, op_j) in &terms {
                let Some((s1, a1)) = ladder(fock, &strides, &occ, col, mj, op_j) else {
                    continue;
                };
                let Some((row, a2)) = ladder(fock, &strides, &occ, s1, mi, op_i) else {
                    continue;
                };
                h.add(row, col, coeff * (a1 * a2));
            }
        }
    }
    Ok(h)
}

/// Hamiltonian matrix on the truncated space for the given controls.
pub fn build_hamiltonian(
    system: &SystemSpec,
    controls: &[Complex64],
    fock: &FockConfig,
) -> Result<DMatrix<Complex64>> {
    Ok(sparse_hamiltonian(system, controls, fock)?.to_dense())
}

/// Precomputed dissipator data for a system on a Fock space.
#[derive(Debug, Clone)]
struct Dissipator {
    /// `Σ_k γ_k c_k† c_k` on the diagonal.
    decay: Vec<f64>,
    /// (mode stride, mode, rate, lowering?) for each jump operator.
    jumps: Vec<(usize, usize, f64, Ladder)>,
    occ: Vec<Vec<usize>>,
}

impl Dissipator {
    fn new(system: &SystemSpec, fock: &FockConfig) -> Self {
        let occ = fock.occupation_table();
        let strides = fock.strides();
        let mut jumps = Vec::new();
        for (k, m) in system.modes.iter().enumerate() {
            let down = m.damping * (m.bath_occupancy + 1.0);
            let up = m.damping * m.bath_occupancy;
            if down > 0.0 {
                jumps.push((strides[k], k, down, Ladder::Lower));
            }
            if up > 0.0 {
                jumps.push((strides[k], k, up, Ladder::Raise));
            }
        }
        let decay = occ
            .iter()
            .map(|ns| {
                jumps
                    .iter()
                    .map(|&(_, k, rate, op)| {
                        let n = ns[k];
                        match op {
                            // a†a = n
                            Ladder::Lower => rate * n as f64,
                            // truncated a a† = n + 1 except on the top level
                            Ladder::Raise => {
                                if n + 1 < fock.cutoffs[k] {
                                    rate * (n + 1) as f64
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .sum()
            })
            .collect();
        Self { decay, jumps, occ }
    }
}

/// Lindblad generator for one fixed set of controls.
struct Liouvillian<'a> {
    h: SparseOperator,
    diss: &'a Dissipator,
    cutoffs: &'a [usize],
}

impl Liouvillian<'_> {
    /// `dρ = −i[H, ρ] + Σ γ (c ρ c† − ½{c†c, ρ})` on row-major flat storage.
    fn apply(&self, rho: &[Complex64], out: &mut [Complex64]) {
        let d = self.h.dim;
        let minus_i = Complex64::new(0.0, -1.0);
        for i in 0..d {
            let hrow = &self.h.rows[i];
            for j in 0..d {
                let mut comm = ZERO;
                // (Hρ)_ij = Σ_k H_ik ρ_kj
                for &(k, v) in hrow {
                    comm += v * rho[k * d + j];
                }
                // (ρH)_ij = Σ_k ρ_ik H_kj = Σ_k ρ_ik conj(H_jk)
                for &(k, v) in &self.h.rows[j] {
                    comm -= rho[i * d + k] * v.conj();
                }
                out[i * d + j] =
                    minus_i * comm - rho[i * d + j] * (0.5 * (self.diss.decay[i] + self.diss.decay[j]));
            }
        }
        let occ = &self.diss.occ;
        for &(stride, k, rate, op) in &self.diss.jumps {
            let top = self.cutoffs[k] - 1;
            for i in 0..d {
                let ni = occ[i][k];
                for j in 0..d {
                    let nj = occ[j][k];
                    match op {
                        Ladder::Lower if ni < top && nj < top => {
                            let amp = ((ni + 1) as f64 * (nj + 1) as f64).sqrt();
                            out[i * d + j] += rho[(i + stride) * d + j + stride] * (rate * amp);
                        }
                        Ladder::Raise if ni > 0 && nj > 0 => {
                            let amp = (ni as f64 * nj as f64).sqrt();
                            out[i * d + j] += rho[(i - stride) * d + j - stride] * (rate * amp);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
}

fn to_flat(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let d = m.nrows();
    let mut v = vec![ZERO; d * d];
    for i in 0..d {
        for j in 0..d {
            v[i * d + j] = m[(i, j)];
        }
    }
    v
}

fn from_flat(v: &[Complex64], d: usize) -> DMatrix<Complex64> {
    DMatrix::from_row_slice(d, d, v)
}

/// Right-hand side of the master equation for a dense Hamiltonian.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    hamiltonian: &DMatrix<Complex64>,
    system: &SystemSpec,
    fock: &FockConfig,
) -> Result<DMatrix<Complex64>> {
    fock.check_system(system)?;
    let d = fock.dim();
    if rho.rho.nrows() != d || hamiltonian.nrows() != d {
        return Err(CoreError::InvalidInput("density matrix / Hamiltonian dimension mismatch".into()));
    }
    let diss = Dissipator::new(system, fock);
    let l = Liouvillian {
        h: SparseOperator::from_dense(hamiltonian),
        diss: &diss,
        cutoffs: &fock.cutoffs,
    };
    let flat = to_flat(&rho.rho);
    let mut out = vec![ZERO; d * d];
    l.apply(&flat, &mut out);
    Ok(from_flat(&out, d))
}

/// Diagnostics accumulated over an oracle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleDiagnostics {
    pub max_trace_drift: f64,
    /// Largest population found on any mode's top Fock level.
    pub max_top_population: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl OracleDiagnostics {
    /// A run is trusted only if truncation stayed negligible.
    pub fn reliable(&self) -> bool {
        self.max_top_population < TRUNCATION_WARNING && self.max_trace_drift < 1e-6
    }
}

#[derive(Debug, Clone)]
pub struct QmeTrajectory {
    /// State at the end of every schedule interval.
    pub states: Vec<DensityMatrix>,
    pub diagnostics: OracleDiagnostics,
}

/// Population of the top Fock level of each mode.
pub fn top_level_populations(rho: &DensityMatrix, fock: &FockConfig) -> Vec<f64> {
    let occ = fock.occupation_table();
    let mut pops = vec![0.0; fock.n_modes()];
    for (i, ns) in occ.iter().enumerate() {
        for (k, &n) in ns.iter().enumerate() {
            if n + 1 == fock.cutoffs[k] {
                pops[k] += rho.rho[(i, i)].re;
            }
        }
    }
    pops
}

/// Integrates the master equation through `schedule` up to `t_end`
/// (clipped to the schedule horizon). Trace is not renormalised; its drift is
/// reported in the diagnostics.
pub fn evolve_qme(
    system: &SystemSpec,
    fock: &FockConfig,
    initial: &DensityMatrix,
    schedule: &ControlSchedule,
    t_end: f64,
    tol: Tolerances,
) -> Result<QmeTrajectory> {
    fock.check_system(system)?;
    let d = fock.dim();
    if initial.rho.nrows() != d {
        return Err(CoreError::InvalidInput("initial state dimension mismatch".into()));
    }
    if t_end > schedule.horizon() * (1.0 + 1e-12) {
        return Err(CoreError::InvalidInput(format!(
            "schedule covers {:.4} but t_end = {t_end:.4}",
            schedule.horizon()
        )));
    }
    let diss = Dissipator::new(system, fock);
    let mut y = to_flat(&initial.rho);
    let mut dp = DormandPrince::new(d * d, tol);
    let mut diag = OracleDiagnostics {
        max_trace_drift: 0.0,
        max_top_population: top_level_populations(initial, fock).into_iter().fold(0.0, f64::max),
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut states = Vec::new();
    let mut t = initial.time;
    let mut last_controls: Option<&[Complex64]> = None;
    let mut liou: Option<Liouvillian> = None;
    for (k, controls) in schedule.values.iter().enumerate() {
        let t_next = (initial.time + (k + 1) as f64 * schedule.step).min(initial.time + t_end);
        if t_next <= t {
            break;
        }
        if last_controls != Some(controls.as_slice()) {
            liou = Some(Liouvillian {
                h: sparse_hamiltonian(system, controls, fock)?,
                diss: &diss,
                cutoffs: &fock.cutoffs,
            });
            last_controls = Some(controls.as_slice());
        }
        let l = liou.as_ref().expect("Liouvillian built above");
        dp.integrate(&mut y, t, t_next, |r, out| l.apply(r, out))?;
        t = t_next;
        let state = DensityMatrix {
            rho: from_flat(&y, d),
            time: t,
        };
        diag.max_trace_drift = diag.max_trace_drift.max((state.trace() - 1.0).norm());
        let top = top_level_populations(&state, fock).into_iter().fold(0.0, f64::max);
        diag.max_top_population = diag.max_top_population.max(top);
        states.push(state);
    }
    diag.accepted_steps = dp.accepted;
    diag.rejected_steps = dp.rejected;
    Ok(QmeTrajectory {
        states,
        diagnostics: diag,
    })
}

/// Quadrature operators `(x₁, p₁, …)` as dense matrices on the truncated space.
fn quadrature_operators(fock: &FockConfig) -> Vec<DMatrix<Complex64>> {
    let occ = fock.occupation_table();
    let strides = fock.strides();
    let d = fock.dim();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut ops = Vec::with_capacity(2 * fock.n_modes());
    for k in 0..fock.n_modes() {
        let mut a = DMatrix::from_element(d, d, ZERO);
        for col in 0..d {
            if let Some((row, amp)) = ladder(fock, &strides, &occ, col, k, Ladder::Lower) {
                a[(row, col)] = Complex64::new(amp, 0.0);
            }
        }
        let ad = a.adjoint();
        ops.push((&a + &ad) * Complex64::new(s, 0.0));
        ops.push((&a - &ad) * Complex64::new(0.0, -s));
    }
    ops
}

/// Precomputed second-moment observables for repeated extraction.
pub struct MomentExtractor {
    quadratures: Vec<SparseOperator>,
    symmetric_products: Vec<Vec<SparseOperator>>,
    occ: Vec<Vec<usize>>,
    n_modes: usize,
}

impl MomentExtractor {
    pub fn new(fock: &FockConfig) -> Self {
        let q = quadrature_operators(fock);
        let n = q.len();
        let half = Complex64::new(0.5, 0.0);
        let symmetric_products = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| SparseOperator::from_dense(&((&q[i] * &q[j] + &q[j] * &q[i]) * half)))
                    .collect()
            })
            .collect();
        Self {
            quadratures: q.iter().map(SparseOperator::from_dense).collect(),
            symmetric_products,
            occ: fock.occupation_table(),
            n_modes: fock.n_modes(),
        }
    }

    fn expect(op: &SparseOperator, rho: &DMatrix<Complex64>) -> Complex64 {
        // Tr(ρ O) = Σ_ij O_ij ρ_ji
        let mut acc = ZERO;
        for (i, row) in op.rows.iter().enumerate() {
            for &(j, v) in row {
                acc += v * rho[(j, i)];
            }
        }
        acc
    }

    /// Covariance (about zero mean) and per-mode `⟨c†c⟩`.
    pub fn moments(&self, rho: &DensityMatrix) -> (CovarianceState, Vec<f64>) {
        let n = 2 * self.n_modes;
        let mut sigma = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = Self::expect(&self.symmetric_products[i][j], &rho.rho).re;
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        let mut occupancies = vec![0.0; self.n_modes];
        for (s, ns) in self.occ.iter().enumerate() {
            let p = rho.rho[(s, s)].re;
            for (k, &nk) in ns.iter().enumerate() {
                occupancies[k] += p * nk as f64;
            }
        }
        (
            CovarianceState {
                sigma,
                time: rho.time,
            },
            occupancies,
        )
    }

    /// `⟨x_k⟩, ⟨p_k⟩` in quadrature order.
    pub fn first_moments(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.quadratures.iter().map(|q| Self::expect(q, &rho.rho).re).collect()
    }
}

/// All quadrature second moments and occupancies of `rho`.
pub fn moments_from_density(
    rho: &DensityMatrix,
    system: &SystemSpec,
    fock: &FockConfig,
) -> Result<(CovarianceState, Vec<f64>)> {
    fock.check_system(system)?;
    Ok(MomentExtractor::new(fock).moments(rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Amplitude, BipartiteParams, CouplingSpec, ModeSpec};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn single_mode(kappa: f64, nbar: f64) -> SystemSpec {
        SystemSpec::new(vec![ModeSpec::new("b", 1.0, kappa, nbar)], vec![], 0, 0).unwrap()
    }

    #[test]
    fn fock_config_bounds() {
        assert!(FockConfig::new(vec![1, 4]).is_err());
        let err = FockConfig::new(vec![64, 65]).unwrap_err();
        assert!(matches!(err, CoreError::DimensionOverflow { dimension: 4160, .. }));
        let f = FockConfig::new(vec![3, 4, 5]).unwrap();
        assert_eq!(f.dim(), 60);
        assert_eq!(f.strides(), vec![20, 5, 1]);
    }

    #[test]
    fn single_mode_hamiltonian_is_number_operator() {
        let sys = single_mode(0.0, 0.0);
        let fock = FockConfig::new(vec![3]).unwrap();
        let h = build_hamiltonian(&sys, &[], &fock).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { i as f64 } else { 0.0 };
                assert_eq!(h[(i, j)], c(expected, 0.0));
            }
        }
    }

    #[test]
    fn zero_coupling_hamiltonian_is_diagonal() {
        let sys = BipartiteParams {
            magnon_detuning: 2.0,
            ..Default::default()
        }
        .build()
        .unwrap();
        let fock = FockConfig::new(vec![3, 4]).unwrap();
        let h = build_hamiltonian(&sys, &[c(0.0, 0.0)], &fock).unwrap();
        for i in 0..12 {
            let (nm, nb) = (i / 4, i % 4);
            assert_eq!(h[(i, i)].re, 2.0 * nm as f64 + nb as f64);
            for j in 0..12 {
                if i != j {
                    assert_eq!(h[(i, j)], c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn linearized_coupling_elements_follow_ladder_algebra() {
        let sys = BipartiteParams::default().build().unwrap();
        let fock = FockConfig::new(vec![4, 4]).unwrap();
        let g = c(0.3, -0.2);
        let h = build_hamiltonian(&sys, &[g], &fock).unwrap();
        let idx = |nm: usize, nb: usize| nm * 4 + nb;
        // ⟨0,2| G m b† |1,1⟩ = G·1·√2
        assert_relative_eq!((h[(idx(0, 2), idx(1, 1))] - g * 2f64.sqrt()).norm(), 0.0, epsilon = 1e-14);
        // ⟨2,0| G* m† b |1,1⟩ = G*·√2·1
        assert_relative_eq!((h[(idx(2, 0), idx(1, 1))] - g.conj() * 2f64.sqrt()).norm(), 0.0, epsilon = 1e-14);
        // ⟨0,0| G m b |1,1⟩ = G
        assert_relative_eq!((h[(idx(0, 0), idx(1, 1))] - g).norm(), 0.0, epsilon = 1e-14);
        // ⟨2,2| G* m† b† |1,1⟩ = G*·√2·√2
        assert_relative_eq!((h[(idx(2, 2), idx(1, 1))] - g.conj() * 2.0).norm(), 0.0, epsilon = 1e-14);
        // no same-mode-only transitions
        assert_eq!(h[(idx(1, 2), idx(1, 1))], c(0.0, 0.0));
        assert!((&h - h.adjoint()).camax() < 1e-14);
    }

    #[test]
    fn beam_splitter_conserves_number() {
        let sys = SystemSpec::new(
            vec![ModeSpec::new("m", 1.0, 0.0, 0.0), ModeSpec::new("b", 1.0, 0.0, 0.0)],
            vec![CouplingSpec {
                kind: CouplingKind::BeamSplitterRwa,
                mode_pair: (0, 1),
                amplitude: Amplitude::Fixed { re: 0.4, im: 0.0 },
            }],
            0,
            1,
        )
        .unwrap();
        let fock = FockConfig::new(vec![3, 3]).unwrap();
        let h = build_hamiltonian(&sys, &[], &fock).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if h[(i, j)].norm() > 0.0 {
                    assert_eq!(i / 3 + i % 3, j / 3 + j % 3);
                }
            }
        }
    }

    #[test]
    fn zero_generator_gives_zero_derivative() {
        let sys = single_mode(0.0, 0.0);
        let fock = FockConfig::new(vec![5]).unwrap();
        let h = DMatrix::from_element(5, 5, ZERO);
        let rho = thermal_density(&single_mode(0.0, 1.0), &fock).unwrap();
        let d = lindblad_rhs(&rho, &h, &sys, &fock).unwrap();
        assert_eq!(d.camax(), 0.0);
    }

    #[test]
    fn excited_state_decays_at_kappa() {
        let sys = single_mode(0.37, 0.0);
        let fock = FockConfig::new(vec![4]).unwrap();
        let h = build_hamiltonian(&sys, &[], &fock).unwrap();
        let mut rho = DMatrix::from_element(4, 4, ZERO);
        rho[(1, 1)] = c(1.0, 0.0);
        let drho = lindblad_rhs(&DensityMatrix { rho, time: 0.0 }, &h, &sys, &fock).unwrap();
        let dn: f64 = (0..4).map(|n| n as f64 * drho[(n, n)].re).sum();
        assert_relative_eq!(dn, -0.37, epsilon = 1e-14);
    }

    #[test]
    fn rhs_is_traceless_for_random_hermitian_inputs() {
        let sys = BipartiteParams {
            magnon_bath: 0.4,
            phonon_bath: 0.7,
            phonon_damping: 0.05,
            ..Default::default()
        }
        .build()
        .unwrap();
        let fock = FockConfig::new(vec![4, 5]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let g = c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let h = build_hamiltonian(&sys, &[g], &fock).unwrap();
            let d = fock.dim();
            let m = DMatrix::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let rho = DensityMatrix {
                rho: (&m + m.adjoint()) * c(0.5, 0.0),
                time: 0.0,
            };
            let dr = lindblad_rhs(&rho, &h, &sys, &fock).unwrap();
            assert!(dr.trace().norm() < 1e-12, "trace {}", dr.trace());
        }
    }

    #[test]
    fn vacuum_moments() {
        let sys = BipartiteParams {
            phonon_bath: 0.0,
            ..Default::default()
        }
        .build()
        .unwrap();
        let fock = FockConfig::new(vec![3, 3]).unwrap();
        let rho = thermal_density(&sys, &fock).unwrap();
        let (cov, occ) = moments_from_density(&rho, &sys, &fock).unwrap();
        assert!((cov.sigma - DMatrix::identity(4, 4) * 0.5).camax() < 1e-14);
        assert_eq!(occ, vec![0.0, 0.0]);
        let ext = MomentExtractor::new(&fock);
        assert!(ext.first_moments(&rho).iter().all(|m| m.abs() < 1e-10));
    }

    #[test]
    fn truncated_thermal_occupancy() {
        // geometric tail beyond cutoff 24 for n̄ = 1 is (1/2)^24 · 25 ≈ 1.5e-6
        let sys = single_mode(0.1, 1.0);
        let fock = FockConfig::new(vec![24]).unwrap();
        let rho = thermal_density(&sys, &fock).unwrap();
        let (_, occ) = moments_from_density(&rho, &sys, &fock).unwrap();
        assert!((occ[0] - 1.0).abs() < 2e-6, "{}", occ[0]);
        rho.validate(1e-12).unwrap();
    }

    #[test]
    fn thermal_product_state_is_stationary() {
        let sys = BipartiteParams {
            magnon_bath: 0.2,
            phonon_bath: 0.3,
            phonon_damping: 0.02,
            ..Default::default()
        }
        .build()
        .unwrap();
        let fock = FockConfig::new(vec![6, 6]).unwrap();
        let rho0 = thermal_density(&sys, &fock).unwrap();
        let sched = ControlSchedule::zeros(10, 1, crate::PERIOD).unwrap();
        let traj = evolve_qme(&sys, &fock, &rho0, &sched, sched.horizon(), Tolerances::default()).unwrap();
        let last = traj.states.last().unwrap();
        // truncation breaks exact detailed balance only at the top level
        let dev = (&last.rho - &rho0.rho).camax();
        assert!(dev < 1e-6, "deviation {dev:e}");
        assert!(traj.diagnostics.max_trace_drift < 1e-8);
    }

    #[test]
    fn decoupled_mode_relaxation_matches_closed_form() {
        let sys = single_mode(0.2, 0.3);
        let fock = FockConfig::new(vec![12]).unwrap();
        let mut rho = DMatrix::from_element(12, 12, ZERO);
        rho[(2, 2)] = c(1.0, 0.0);
        let rho0 = DensityMatrix { rho, time: 0.0 };
        let sched = ControlSchedule::zeros(20, 0, 0.5).unwrap();
        let traj = evolve_qme(&sys, &fock, &rho0, &sched, 10.0, Tolerances::default()).unwrap();
        let ext = MomentExtractor::new(&fock);
        for s in &traj.states {
            let (_, occ) = ext.moments(s);
            let exact = 0.3 + (2.0 - 0.3) * (-0.2 * s.time).exp();
            assert!((occ[0] - exact).abs() < 1e-4, "t={} {} vs {}", s.time, occ[0], exact);
        }
    }

    #[test]
    fn bipartite_moments_agree_with_covariance_method() {
        let sys = BipartiteParams {
            phonon_bath: 0.5,
            phonon_damping: 0.01,
            ..Default::default()
        }
        .build()
        .unwrap();
        let fock = FockConfig::new(vec![10, 10]).unwrap();
        let rho0 = thermal_density(&sys, &fock).unwrap();
        let ext = MomentExtractor::new(&fock);
        let (sigma0, _) = ext.moments(&rho0);
        let sched = ControlSchedule::constant(&[c(0.05, 0.0)], 50, 0.1 * crate::PERIOD).unwrap();
        let traj = evolve_qme(&sys, &fock, &rho0, &sched, sched.horizon(), Tolerances::default()).unwrap();
        let gauss = crate::schedule::simulate(&sys, &sched, &sigma0).unwrap();
        assert!(traj.diagnostics.reliable(), "{:?}", traj.diagnostics);
        for (q, g) in traj.states.iter().zip(&gauss) {
            let (_, occ) = ext.moments(q);
            let n_gauss = crate::dynamics::raw_occupancy(g, 1);
            let rel = (occ[1] - n_gauss).abs() / n_gauss;
            assert!(rel < 1e-3, "t={} oracle {} moments {}", q.time, occ[1], n_gauss);
        }
    }
}
