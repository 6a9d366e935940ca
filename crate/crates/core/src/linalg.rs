//! Small dense linear-algebra helpers for Gaussian covariance work.

use nalgebra::{DMatrix, DVector};

use crate::{CoreError, Result};

/// Standard symplectic form `⊕ [[0, 1], [-1, 0]]` for `n_modes` modes in
/// `(x₁, p₁, …, x_N, p_N)` ordering.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for k in 0..n_modes {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    omega
}

/// In-place `m ← (m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute asymmetry `max |m_ij − m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Matrix exponential, refusing non-finite inputs instead of panicking in the
/// Padé solve.
pub fn expm(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let e = m.exp();
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// Symplectic eigenvalues of a positive-definite covariance matrix, ascending.
///
/// Computed as the singular values of `σ^{1/2} Ω σ^{1/2}` (a real
/// antisymmetric matrix whose eigenvalues are `±iν_k`), each of which appears
/// twice. Returns `None` when `σ` is not positive definite.
pub fn symplectic_eigenvalues(sigma: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = sigma.nrows();
    if !n.is_multiple_of(2) || n != sigma.ncols() {
        return None;
    }
    let mut s = sigma.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let k = &root * symplectic_form(n / 2) * &root;
    let mut sv: Vec<f64> = k.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| a.total_cmp(b));
    Some(sv.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect())
}

/// Smallest symplectic eigenvalue, or `-∞` when `σ` is not positive definite.
pub fn min_symplectic_eigenvalue(sigma: &DMatrix<f64>) -> f64 {
    symplectic_eigenvalues(sigma)
        .and_then(|v| v.first().copied())
        .unwrap_or(f64::NEG_INFINITY)
}

/// Solves the continuous Lyapunov equation `A X + X Aᵀ + Q = 0` by
/// vectorisation, `(I ⊗ A + A ⊗ I) vec X = −vec Q`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let nn = n * n;
    let mut k = DMatrix::<f64>::zeros(nn, nn);
    // column-major vec: index(i, j) = i + n j
    for j in 0..n {
        for i in 0..n {
            let row = i + n * j;
            for l in 0..n {
                // (I ⊗ A): X_{lj} contributes a_il
                k[(row, l + n * j)] += a[(i, l)];
                // (A ⊗ I): X_{il} contributes a_jl
                k[(row, i + n * l)] += a[(j, l)];
            }
        }
    }
    let rhs = DVector::from_iterator(nn, q.iter().map(|v| -v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::Singular("Lyapunov operator is singular".into()))?;
    let mut x = DMatrix::from_column_slice(n, n, sol.as_slice());
    symmetrize(&mut x);
    Ok(x)
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}
