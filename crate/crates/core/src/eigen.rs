//! Cyclic Jacobi eigen-decomposition for small symmetric matrices.
//!
//! Used for the 3×3 plane and normal covariances, the 4×4 quaternion
//! outer-product sum and the 6×6 slippage covariance.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

/// Sweep budget for the cyclic Jacobi iteration.
pub const MAX_SWEEPS: usize = 50;

/// Eigenpairs of a symmetric matrix, sorted by ascending eigenvalue.
///
/// Column `i` of `vectors` is the unit eigenvector of `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen<const N: usize> {
    pub values: SVector<f64, N>,
    pub vectors: SMatrix<f64, N, N>,
}

impl<const N: usize> SymmetricEigen<N> {
    pub fn vector(&self, i: usize) -> SVector<f64, N> {
        self.vectors.column(i).into_owned()
    }

    pub fn reconstruct(&self) -> SMatrix<f64, N, N> {
        self.vectors * SMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

fn off_diagonal_norm<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        for j in (i + 1)..N {
            s += a[(i, j)] * a[(i, j)];
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi with the classical rotation formulas. Only the upper
/// triangle symmetric average is used, so mild asymmetry is tolerated.
pub fn symmetric_eigen<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<SymmetricEigen<N>> {
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = SMatrix::<f64, N, N>::identity();
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure { sweeps: 0 });
    }
    let scale = a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return Ok(SymmetricEigen {
            values: SVector::zeros(),
            vectors: v,
        });
    }

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= f64::EPSILON * 1e-2 * scale {
            converged = true;
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..N {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..N {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > 1e-12 * scale {
        return Err(Error::NumericalFailure { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let mut values = SVector::<f64, N>::zeros();
    let mut vectors = SMatrix::<f64, N, N>::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = a[(src, src)];
        let mut col = v.column(src).into_owned();
        // deterministic sign: largest-magnitude component positive
        let (imax, _) =
            col.iter().enumerate().fold(
                (0, 0.0_f64),
                |(bi, bv), (i, x)| if x.abs() > bv + 1e-12 { (i, x.abs()) } else { (bi, bv) },
            );
        if col[imax] < 0.0 {
            col = -col;
        }
        vectors.set_column(dst, &col);
    }
    Ok(SymmetricEigen { values, vectors })
}
