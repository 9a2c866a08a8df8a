//! Null-space projector of the preserved keys.
//!
//! `P = Û Ûᵀ` where `Û` holds the eigenvectors of `K₀K₀ᵀ` whose eigenvalue is
//! at or below the threshold. Right-multiplying a perturbation by `P` removes
//! its action on the preserved keys: `(Δ P) K₀ ≈ 0`.
//!
//! With an exactly rank-deficient `K₀` the annihilation holds to round-off.
//! With noisy keys the retained directions carry Gram eigenvalues up to the
//! threshold, so `||Δ P K₀||_F ≤ ||Δ||_F · sqrt(threshold · n)` instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{eig_symmetric, DenseMatrix};

/// Eigenvalue cutoff used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 1e-2;

/// How the threshold is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Eigenvalues `<= threshold` are kept.
    #[default]
    Absolute,
    /// Eigenvalues `<= threshold * λ_max` are kept.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceProjector {
    p: DenseMatrix,
    retained_basis: DenseMatrix,
    threshold: f64,
    mode: ThresholdMode,
    cutoff: f64,
    spectrum: Vec<f64>,
}

impl NullSpaceProjector {
    /// The projector of an empty preserved set: every direction is free.
    pub fn identity(dim: usize) -> Self {
        Self {
            p: DenseMatrix::identity(dim),
            retained_basis: DenseMatrix::identity(dim),
            threshold: DEFAULT_THRESHOLD,
            mode: ThresholdMode::Absolute,
            cutoff: DEFAULT_THRESHOLD,
            spectrum: vec![0.0; dim],
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.p
    }

    pub fn retained_basis(&self) -> &DenseMatrix {
        &self.retained_basis
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    /// The absolute eigenvalue cutoff actually applied.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn retained_dim(&self) -> usize {
        self.retained_basis.cols()
    }

    pub fn source_dim(&self) -> usize {
        self.p.rows()
    }

    /// Eigenvalues of `K₀K₀ᵀ`, descending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// `I - P`, the projector onto the preserved-key span.
    pub fn complement(&self) -> DenseMatrix {
        &DenseMatrix::identity(self.source_dim()) - &self.p
    }

    pub fn summary(&self) -> ProjectorSummary {
        ProjectorSummary {
            retained_dim: self.retained_dim(),
            source_dim: self.source_dim(),
            threshold: self.threshold,
            mode: self.mode,
            spectrum_quantiles: quantiles(&self.spectrum),
        }
    }
}

/// Diagnostic view of a projector for experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSummary {
    pub retained_dim: usize,
    pub source_dim: usize,
    pub threshold: f64,
    pub mode: ThresholdMode,
    /// Minimum, lower quartile, median, upper quartile, maximum.
    pub spectrum_quantiles: [f64; 5],
}

fn quantiles(values: &[f64]) -> [f64; 5] {
    if values.is_empty() {
        return [0.0; 5];
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    [v[0], at(0.25), at(0.5), at(0.75), v[v.len() - 1]]
}

/// Builds the projector with an absolute threshold.
pub fn build_projector(preserved_keys: &DenseMatrix, threshold: f64) -> Result<NullSpaceProjector> {
    build_projector_with(preserved_keys, threshold, ThresholdMode::Absolute)
}

pub fn build_projector_with(
    preserved_keys: &DenseMatrix,
    threshold: f64,
    mode: ThresholdMode,
) -> Result<NullSpaceProjector> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::config("threshold", "must be finite and positive"));
    }
    if !preserved_keys.all_finite() {
        return Err(Error::NonFinite {
            what: "preserved keys",
        });
    }
    let gram = preserved_keys.gram();
    let eig = eig_symmetric(&gram, 1e-10)?;
    let cutoff = match mode {
        ThresholdMode::Absolute => threshold,
        ThresholdMode::Relative => {
            threshold * eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0)
        }
    };
    // Ties at the cutoff are retained.
    let retained_basis = eig.select(|lam| lam <= cutoff);
    let p = &retained_basis * &retained_basis.transpose();
    Ok(NullSpaceProjector {
        p,
        retained_basis,
        threshold,
        mode,
        cutoff,
        spectrum: eig.eigenvalues,
    })
}

/// `Δ P`.
pub fn project_right(delta: &DenseMatrix, proj: &NullSpaceProjector) -> Result<DenseMatrix> {
    if delta.cols() != proj.source_dim() {
        return Err(Error::dimension(
            "project_right",
            format!("{} columns", proj.source_dim()),
            format!("{} columns", delta.cols()),
        ));
    }
    Ok(delta * &proj.p)
}
