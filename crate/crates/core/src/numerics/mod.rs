//! Dense linear-algebra kernel: matrices, symmetric eigendecomposition,
//! LU solves and pseudoinverses. Everything is `f64`.

mod eigen;
mod lu;
mod matrix;

pub use eigen::{eig_symmetric, pseudo_inverse_symmetric, EigenDecomposition, PseudoInverse};
pub use lu::{solve_general, LuFactors, SINGULAR_PIVOT_RATIO};
pub use matrix::{frobenius_norm, DenseMatrix};

/// `||a - b||_F / max(||b||_F, floor)`.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix, floor: f64) -> f64 {
    (a - b).frobenius_norm() / b.frobenius_norm().max(floor)
}

/// `num / den`, or `num` itself when `den` is zero.
pub(crate) fn ratio_or_abs(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}
