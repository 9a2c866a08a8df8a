//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! For a symmetric positive semidefinite input such as a key Gram matrix the
//! singular value decomposition and the eigendecomposition coincide
//! (`U Λ U^T` with `Λ ≥ 0`), so this routine doubles as the SVD used to find
//! the null space. Jacobi is slower than tridiagonal QR but gives small
//! eigenvalues with absolute error on the order of `eps * ||m||`, which is what
//! thresholding needs.

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with their orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DenseMatrix,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U Λ U^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim();
        let u = &self.eigenvectors;
        let scaled = DenseMatrix::from_fn(n, n, |i, j| u.get(i, j) * self.eigenvalues[j]);
        &scaled * &u.transpose()
    }

    /// Columns of the eigenvector matrix whose eigenvalue satisfies `keep`.
    pub fn select(&self, keep: impl Fn(f64) -> bool) -> DenseMatrix {
        let idx: Vec<usize> = (0..self.dim())
            .filter(|&i| keep(self.eigenvalues[i]))
            .collect();
        self.eigenvectors.select_columns(&idx)
    }
}

/// Eigendecomposition of a symmetric matrix.
///
/// The input must satisfy `||m - m^T||_F <= symmetry_tol * ||m||_F`; it is
/// symmetrized as `(m + m^T) / 2` before the rotations start.
pub fn eig_symmetric(m: &DenseMatrix, symmetry_tol: f64) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::dimension(
            "eig_symmetric",
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    if !m.all_finite() {
        return Err(Error::NonFinite {
            what: "eig_symmetric input",
        });
    }
    let norm = m.frobenius_norm();
    let deviation = m.asymmetry();
    let tolerance = symmetry_tol * norm;
    if deviation > tolerance {
        return Err(Error::Asymmetry {
            deviation,
            tolerance,
        });
    }

    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = DenseMatrix::identity(n);

    if n > 1 && norm > 0.0 {
        let stop = (f64::EPSILON * norm).powi(2);
        for _ in 0..MAX_SWEEPS {
            if off_diagonal_sq(&a) <= stop {
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original axis order among ties so identical
    // inputs always give identical bases.
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let eigenvalues = order.iter().map(|&i| a.get(i, i)).collect();
    let eigenvectors = v.select_columns(&order);
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_sq(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let x = a.get(i, j);
                acc += x * x;
            }
        }
    }
    acc
}

fn rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;
    let n = a.rows();

    // A <- A J (columns p, q)
    {
        let data = a.data_mut();
        for k in 0..n {
            let akp = data[p * n + k];
            let akq = data[q * n + k];
            data[p * n + k] = c * akp - s * akq;
            data[q * n + k] = s * akp + c * akq;
        }
        // A <- J^T A (rows p, q)
        for k in 0..n {
            let apk = data[k * n + p];
            let aqk = data[k * n + q];
            data[k * n + p] = c * apk - s * aqk;
            data[k * n + q] = s * apk + c * aqk;
        }
        data[q * n + p] = 0.0;
        data[p * n + q] = 0.0;
    }
    let vd = v.data_mut();
    for k in 0..n {
        let vkp = vd[p * n + k];
        let vkq = vd[q * n + k];
        vd[p * n + k] = c * vkp - s * vkq;
        vd[q * n + k] = s * vkp + c * vkq;
    }
}

/// Pseudoinverse of a symmetric PSD matrix together with its numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverse {
    pub matrix: DenseMatrix,
    pub rank: usize,
    /// `λ_max / λ_min` over the eigenvalues that were inverted.
    pub condition: f64,
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix.
///
/// Eigenvalues at or below `rel_cutoff * λ_max` are treated as zero.
pub fn pseudo_inverse_symmetric(m: &DenseMatrix, rel_cutoff: f64) -> Result<PseudoInverse> {
    let eig = eig_symmetric(m, 1e-10)?;
    let n = eig.dim();
    let lead = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let cut = rel_cutoff * lead;
    let u = &eig.eigenvectors;
    let mut scaled = DenseMatrix::zeros(n, n);
    let mut rank = 0;
    let mut smallest = f64::INFINITY;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut && lam > 0.0 {
            rank += 1;
            smallest = smallest.min(lam);
            for i in 0..n {
                scaled.set(i, j, u.get(i, j) / lam);
            }
        }
    }
    let condition = if rank == 0 { 1.0 } else { lead / smallest };
    Ok(PseudoInverse {
        matrix: &scaled * &u.transpose(),
        rank,
        condition,
    })
}
