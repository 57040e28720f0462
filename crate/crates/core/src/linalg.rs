//! Small dense kernels shared by the analysis modules.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; matrices in scope are
//! tiny (a handful of rows), so the routines favour clarity over blocking.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Convergence threshold for the Schur iteration.
const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Relative asymmetry `max|m - m^T| / max(1, max|m|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Symmetric eigendecomposition with eigenvalues ascending and matching
/// eigenvector columns.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Scale-aware PSD tolerance `1e-9 * (1 + max|eig(m)|)`.
pub fn psd_tolerance(m: &DMatrix<f64>) -> f64 {
    let eig = sym_eigenvalues(m);
    let spread = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    1e-9 * (1.0 + spread)
}

/// Positive definiteness at relative threshold `lambda_min >= 1e-10 lambda_max`.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    let eig = sym_eigenvalues(m);
    match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => hi > 0.0 && lo >= 1e-10 * hi,
        _ => false,
    }
}

/// Replace every eigenvalue below `floor` by `floor`.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    if values.first().is_none_or(|&v| v >= floor) {
        return symmetrize(m);
    }
    let clipped = DVector::from_iterator(values.len(), values.iter().map(|&v| v.max(floor)));
    let scaled = &vectors * DMatrix::from_diagonal(&clipped);
    symmetrize(&(scaled * vectors.transpose()))
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur =
        nalgebra::linalg::Schur::try_new(a.clone(), SCHUR_EPS, SCHUR_MAX_ITER).ok_or(Error::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a complex square matrix via the complex Schur form.
pub fn complex_eigenvalues(a: &DMatrix<Complex<f64>>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur =
        nalgebra::linalg::Schur::try_new(a.clone(), SCHUR_EPS, SCHUR_MAX_ITER).ok_or(Error::EigenFailure)?;
    let values = schur.eigenvalues().ok_or(Error::EigenFailure)?;
    Ok(values.iter().copied().collect())
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 1 {
        return Ok(a[(0, 0)].abs());
    }
    Ok(eigenvalues(a)?.iter().fold(0.0f64, |acc, z| acc.max(z.norm())))
}

pub fn complex_spectral_radius(a: &DMatrix<Complex<f64>>) -> Result<f64> {
    match a.nrows() {
        1 => Ok(a[(0, 0)].norm()),
        2 => Ok(spectral_radius_2x2(a)),
        _ => Ok(complex_eigenvalues(a)?.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))),
    }
}

// Closed form from the characteristic polynomial; the torus sweep evaluates
// millions of 2x2 blocks.
fn spectral_radius_2x2(a: &DMatrix<Complex<f64>>) -> f64 {
    let (p, q, r, s) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
    let half_trace = (p + s) * 0.5;
    let det = p * s - q * r;
    let disc = (half_trace * half_trace - det).sqrt();
    (half_trace + disc).norm().max((half_trace - disc).norm())
}

/// Induced Euclidean norm `sqrt(lambda_max(A^T A))`.
pub fn induced_norm(a: &DMatrix<f64>) -> f64 {
    lambda_max(&(a.transpose() * a)).max(0.0).sqrt()
}

/// Orthonormal coordinates on the space of symmetric `n x n` matrices.
///
/// Basis element `(i, i)` is `e_i e_i^T`; `(i, j)` with `i < j` is
/// `(e_i e_j^T + e_j e_i^T) / sqrt(2)`. Euclidean length of the coordinate
/// vector equals the Frobenius norm of the matrix.
#[derive(Debug, Clone)]
pub struct SymBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymBasis {
    pub fn new(n: usize) -> Self {
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                pairs.push((i, j));
            }
        }
        Self { n, pairs }
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    pub fn element(&self, index: usize) -> DMatrix<f64> {
        let (i, j) = self.pairs[index];
        let mut e = DMatrix::zeros(self.n, self.n);
        if i == j {
            e[(i, i)] = 1.0;
        } else {
            let w = std::f64::consts::FRAC_1_SQRT_2;
            e[(i, j)] = w;
            e[(j, i)] = w;
        }
        e
    }

    pub fn coords(&self, m: &DMatrix<f64>) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&(i, j)| {
                if i == j {
                    m[(i, i)]
                } else {
                    std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
                }
            })
            .collect()
    }

    pub fn matrix(&self, coords: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        let w = std::f64::consts::FRAC_1_SQRT_2;
        for (&(i, j), &c) in self.pairs.iter().zip(coords) {
            if i == j {
                m[(i, i)] = c;
            } else {
                m[(i, j)] = c * w;
                m[(j, i)] = c * w;
            }
        }
        m
    }
}

/// Solve a small dense system with one step of iterative refinement.
pub fn solve_refined(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(b).ok_or(Error::SingularSystem)?;
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}
