//! Small dense linear-algebra helpers shared by the model and estimator code.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frobenius inner product `A:B = tr(AᵀB)`.
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "frobenius product of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

/// `a ⊗ b = a bᵀ`.
pub fn outer(a: &[f64], b: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
}

/// `out = A x` on raw slices. `A` is square with side `x.len()`.
#[inline]
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(a.nrows(), out.len());
    debug_assert_eq!(a.ncols(), n);
    let data = a.as_slice();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        let col = &data[j * a.nrows()..(j + 1) * a.nrows()];
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * xj;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖A Aᵀ − Aᵀ A‖_F`.
pub fn normality_residual(a: &DMatrix<f64>) -> f64 {
    (a * a.transpose() - a.transpose() * a).norm()
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `|Re λ|` over the eigenvalues of `a` (stiffness scale).
pub fn max_abs_real_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re.abs())
        .fold(0.0, f64::max)
}

/// Residual `‖A X + X Aᵀ + Q‖_F`.
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a * x + x * a.transpose() + q).norm()
}

/// Solves `A X + X Aᵀ + Q = 0` for symmetric `Q` by a dense solve over the
/// `n(n+1)/2` independent entries of the symmetric solution.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "lyapunov solve needs square A and Q of equal size, got {:?} and {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let idx = |i: usize, j: usize| {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        r * n - r * (r + 1) / 2 + c
    };
    let m = n * (n + 1) / 2;
    let mut lhs = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            // (A X)_ij = Σ_k A_ik X_kj ; (X Aᵀ)_ij = Σ_k X_ik A_jk
            for k in 0..n {
                lhs[(row, idx(k, j))] += a[(i, k)];
                lhs[(row, idx(i, k))] += a[(j, k)];
            }
            rhs[row] = -0.5 * (q[(i, j)] + q[(j, i)]);
        }
    }
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_fn(n, n, |i, j| sol[idx(i, j)]))
}

/// Matrix norm used by diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixNorm {
    Frobenius,
    /// Largest singular value.
    #[default]
    Spectral,
}

impl MatrixNorm {
    pub fn apply(self, m: &DMatrix<f64>) -> f64 {
        match self {
            MatrixNorm::Frobenius => m.norm(),
            MatrixNorm::Spectral => m
                .singular_values()
                .iter()
                .copied()
                .fold(0.0, f64::max),
        }
    }

    /// Gradient of the norm with respect to the matrix entries, used for
    /// delta-method standard errors. Zero at the zero matrix.
    pub fn gradient(self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let (r, c) = m.shape();
        match self {
            MatrixNorm::Frobenius => {
                let nrm = m.norm();
                if nrm == 0.0 {
                    DMatrix::zeros(r, c)
                } else {
                    m / nrm
                }
            }
            MatrixNorm::Spectral => {
                let svd = m.clone().svd(true, true);
                let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
                    return DMatrix::zeros(r, c);
                };
                let k = svd
                    .singular_values
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| {
                        if s > acc.1 {
                            (i, s)
                        } else {
                            acc
                        }
                    })
                    .0;
                u.column(k) * vt.row(k)
            }
        }
    }
}
