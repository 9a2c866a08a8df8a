use super::matrix::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// Pivots smaller than this fraction of `||a||_F` are reported as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-12;

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    lu: DenseMatrix,
    perm: Vec<usize>,
    norm_one: f64,
}

impl LuFactors {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dimension(
                "lu",
                "square matrix",
                format!("{}x{}", a.rows(), a.cols()),
            ));
        }
        if !a.all_finite() {
            return Err(Error::NonFinite {
                what: "linear system",
            });
        }
        let n = a.rows();
        let threshold = SINGULAR_PIVOT_RATIO * a.frobenius_norm();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let d = lu.data_mut();

        for k in 0..n {
            let (piv, mag) =
                (k..n)
                    .map(|i| (i, d[k * n + i].abs()))
                    .fold(
                        (k, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if mag <= threshold {
                return Err(Error::Singular {
                    pivot: mag,
                    threshold,
                });
            }
            if piv != k {
                for j in 0..n {
                    d.swap(j * n + k, j * n + piv);
                }
                perm.swap(k, piv);
            }
            let pivot = d[k * n + k];
            for i in (k + 1)..n {
                d[k * n + i] /= pivot;
            }
            for j in (k + 1)..n {
                let ukj = d[j * n + k];
                if ukj == 0.0 {
                    continue;
                }
                for i in (k + 1)..n {
                    d[j * n + i] -= d[k * n + i] * ukj;
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            norm_one: a.norm_one(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest pivot magnitude in `U`.
    pub fn min_pivot(&self) -> f64 {
        (0..self.n)
            .map(|k| self.lu.get(k, k).abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let d = self.lu.as_col_major();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for k in 0..n {
            let xk = x[k];
            if xk != 0.0 {
                for i in (k + 1)..n {
                    x[i] -= d[k * n + i] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            x[k] /= d[k * n + k];
            let xk = x[k];
            if xk != 0.0 {
                for i in 0..k {
                    x[i] -= d[k * n + i] * xk;
                }
            }
        }
        x
    }

    fn solve_transpose_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let d = self.lu.as_col_major();
        // U^T y = b
        let mut y = b.to_vec();
        for k in 0..n {
            let col = &d[k * n..k * n + k];
            y[k] = (y[k] - dot(col, &y[..k])) / d[k * n + k];
        }
        // L^T z = y
        for k in (0..n).rev() {
            let col = &d[k * n + k + 1..(k + 1) * n];
            y[k] -= dot(col, &y[k + 1..]);
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_rhs(b)?;
        let cols: Vec<Vec<f64>> = (0..b.cols()).map(|j| self.solve_vec(b.column(j))).collect();
        finish(self.n, cols)
    }

    /// Solves `A^T X = B`.
    pub fn solve_transpose(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_rhs(b)?;
        let cols: Vec<Vec<f64>> = (0..b.cols())
            .map(|j| self.solve_transpose_vec(b.column(j)))
            .collect();
        finish(self.n, cols)
    }

    /// 1-norm condition number estimate `||A||_1 * est(||A^{-1}||_1)` using
    /// Hager's method; never forms the inverse.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for iter in 0..5 {
            let y = self.solve_vec(&x);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let sign: Vec<f64> = y
                .iter()
                .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let z = self.solve_transpose_vec(&sign);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, -1.0), |b, c| if c.1 > b.1 { c } else { b });
            if iter > 0 && (zmax <= dot(&z, &x) || j == last_j) {
                break;
            }
            last_j = j;
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        self.norm_one * est
    }

    fn check_rhs(&self, b: &DenseMatrix) -> Result<()> {
        if b.rows() != self.n {
            return Err(Error::dimension(
                "solve",
                format!("rhs with {} rows", self.n),
                format!("{}x{}", b.rows(), b.cols()),
            ));
        }
        if !b.all_finite() {
            return Err(Error::NonFinite {
                what: "right-hand side",
            });
        }
        Ok(())
    }
}

fn finish(n: usize, cols: Vec<Vec<f64>>) -> Result<DenseMatrix> {
    let m = DenseMatrix::from_columns(n, &cols);
    match m {
        Err(Error::NonFinite { .. }) => Err(Error::NonFinite { what: "solution" }),
        other => other,
    }
}

/// Solves `a x = b` for general square `a` by LU with partial pivoting.
pub fn solve_general(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows() != a.rows() {
        return Err(Error::dimension(
            "solve_general",
            format!("rhs with {} rows", a.rows()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    LuFactors::factor(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let b = DenseMatrix::from_rows(&[[1.0, -2.0], [3.5, 0.0], [7.0, 1e-3]]).unwrap();
        assert_eq!(solve_general(&DenseMatrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn diagonal_system() {
        let a = DenseMatrix::from_diagonal(&[2.0, 4.0]).unwrap();
        let b = DenseMatrix::from_rows(&[[2.0], [8.0]]).unwrap();
        let x = solve_general(&a, &b).unwrap();
        assert_eq!(x, DenseMatrix::from_rows(&[[1.0], [2.0]]).unwrap());
    }

    #[test]
    fn non_symmetric_and_transpose() {
        let a =
            DenseMatrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let lu = LuFactors::factor(&a).unwrap();
        let x = lu.solve(&b).unwrap();
        assert!((&(&a * &x) - &b).frobenius_norm() < 1e-14);
        let xt = lu.solve_transpose(&b).unwrap();
        assert!((&(&a.transpose() * &xt) - &b).frobenius_norm() < 1e-14);
    }

    #[test]
    fn singular_reports_pivot() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        match solve_general(&a, &DenseMatrix::identity(2)) {
            Err(Error::Singular { pivot, threshold }) => {
                assert!(pivot <= threshold);
                assert!(threshold > 0.0);
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(matches!(
            LuFactors::factor(&DenseMatrix::zeros(2, 2)),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(solve_general(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 1)).is_err());
        assert!(solve_general(&DenseMatrix::identity(2), &DenseMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let a = DenseMatrix::from_diagonal(&[1.0, 1e-3, 10.0]).unwrap();
        let c = LuFactors::factor(&a).unwrap().condition_estimate();
        assert!((c - 1e4).abs() < 1e-6, "{c}");
        let c1 = LuFactors::factor(&DenseMatrix::identity(5))
            .unwrap()
            .condition_estimate();
        assert!((c1 - 1.0).abs() < 1e-14);
    }
}
