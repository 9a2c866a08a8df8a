//! Closed-form edit solvers.
//!
//! Every solver returns the perturbation `Δ` to add to `W` together with the
//! Frobenius residual of the stationarity condition it solves and a
//! condition estimate of the linear system. Inverses never appear
//! explicitly: `X = B A⁻¹` is computed as the transposed solve `Aᵀ Xᵀ = Bᵀ`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{AssociativeMemory, EditHistory, KnowledgeSet};
use crate::numerics::{pseudo_inverse_symmetric, DenseMatrix, LuFactors};
use crate::projector::{NullSpaceProjector, ThresholdMode, DEFAULT_THRESHOLD};

/// Preserved-knowledge weight used for GPT2-XL in the reference experiments.
pub const PRESERVED_WEIGHT_GPT2_XL: f64 = 20_000.0;
/// Preserved-knowledge weight used for GPT-J and Llama3 (8B).
pub const PRESERVED_WEIGHT_GPT_J_LLAMA3: f64 = 15_000.0;

/// Relative ridge on the naive solver's Gram system.
const NAIVE_RIDGE: f64 = 1e-10;
/// Eigenvalue cutoff (relative to the largest) of the minimum-norm fallback.
const MIN_NORM_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "memit")]
    Memit,
    #[serde(rename = "alphaedit")]
    AlphaEdit,
    #[serde(rename = "projected-memit")]
    ProjectedMemit,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Naive,
        Method::Memit,
        Method::AlphaEdit,
        Method::ProjectedMemit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Memit => "memit",
            Method::AlphaEdit => "alphaedit",
            Method::ProjectedMemit => "projected-memit",
        }
    }

    /// Whether the delta is confined to the null space of the preserved keys.
    pub fn is_projected(self) -> bool {
        matches!(self, Method::AlphaEdit | Method::ProjectedMemit)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "methods",
                    format!("unknown method `{s}` (expected naive, memit, alphaedit or projected-memit)"),
                )
            })
    }
}

/// What `solve_memit` does when its system is numerically singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankDeficiency {
    /// Return the minimum-norm minimizer through a pseudoinverse.
    #[default]
    MinNorm,
    /// Surface the singularity error.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// `λ`, the weight on `K₀K₀ᵀ` in the MEMIT system.
    pub preserved_weight: f64,
    /// `α`, the ridge on the projected system.
    pub ridge_scale: f64,
    /// Eigenvalue threshold for the null-space projector.
    pub threshold: f64,
    pub threshold_mode: ThresholdMode,
    pub rank_deficiency: RankDeficiency,
    /// Mutation canary: negates the residual inside the AlphaEdit solve so
    /// verification can prove it notices a wrong answer.
    #[doc(hidden)]
    #[serde(skip)]
    pub sign_flip_canary: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            preserved_weight: 1.0,
            ridge_scale: 1.0,
            threshold: DEFAULT_THRESHOLD,
            threshold_mode: ThresholdMode::Absolute,
            rank_deficiency: RankDeficiency::MinNorm,
            sign_flip_canary: false,
        }
    }
}

impl SolverConfig {
    pub fn with_preserved_weight(mut self, lambda: f64) -> Self {
        self.preserved_weight = lambda;
        self
    }

    pub fn with_ridge_scale(mut self, alpha: f64) -> Self {
        self.ridge_scale = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.preserved_weight.is_finite() && self.preserved_weight > 0.0) {
            return Err(Error::config(
                "preserved_weight",
                "must be finite and positive",
            ));
        }
        if !(self.ridge_scale.is_finite() && self.ridge_scale > 0.0) {
            return Err(Error::config("ridge_scale", "must be finite and positive"));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::config("threshold", "must be finite and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSolution {
    pub delta: DenseMatrix,
    pub method: Method,
    pub normal_eq_residual: f64,
    pub system_condition_estimate: f64,
}

impl EditSolution {
    fn zero(memory: &AssociativeMemory, method: Method) -> Self {
        Self {
            delta: DenseMatrix::zeros(memory.d_out(), memory.d_in()),
            method,
            normal_eq_residual: 0.0,
            system_condition_estimate: 1.0,
        }
    }
}

/// Minimum-norm minimizer of `||(W + Δ) K₁ - V₁||²`, `Δ = R K₁⁺`.
///
/// The pseudoinverse is realized as `R (K₁ᵀK₁ + εI)⁻¹ K₁ᵀ` with
/// `ε = 1e-10 ||K₁ᵀK₁||_F`.
pub fn solve_naive(memory: &AssociativeMemory, batch: &KnowledgeSet) -> Result<EditSolution> {
    batch.check_against(memory)?;
    let k1 = batch.keys();
    if batch.is_empty() || k1.frobenius_norm() == 0.0 {
        return Ok(EditSolution::zero(memory, Method::Naive));
    }
    let r = memory.residual(batch)?;
    let mut small = k1.transpose_matmul(k1)?;
    let ridge = NAIVE_RIDGE * small.frobenius_norm();
    for i in 0..small.rows() {
        small.set(i, i, small.get(i, i) + ridge);
    }
    let lu = LuFactors::factor(&small)?;
    let y = lu.solve_transpose(&r.transpose())?.transpose();
    let delta = &y * &k1.transpose();
    let normal = &(&(&delta * k1) - &r) * &k1.transpose();
    Ok(EditSolution {
        delta,
        method: Method::Naive,
        normal_eq_residual: normal.frobenius_norm(),
        system_condition_estimate: lu.condition_estimate(),
    })
}

fn check_square(op: &'static str, m: &DenseMatrix, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::dimension(
            op,
            format!("{n}x{n}"),
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

fn check_history(memory: &AssociativeMemory, history: &EditHistory) -> Result<()> {
    if history.d_in() != memory.d_in() || history.d_out() != memory.d_out() {
        return Err(Error::dimension(
            "edit history",
            format!("d_in {}, d_out {}", memory.d_in(), memory.d_out()),
            format!("d_in {}, d_out {}", history.d_in(), history.d_out()),
        ));
    }
    Ok(())
}

/// Sequential MEMIT solution
/// `Δ = R K₁ᵀ (KₚKₚᵀ + K₁K₁ᵀ + λ K₀K₀ᵀ)⁻¹`.
///
/// With an empty history this is the single-edit normal-equation solution.
/// When the bracket is singular the minimum-norm minimizer is returned
/// unless the config asks for the error.
pub fn solve_memit(
    memory: &AssociativeMemory,
    batch: &KnowledgeSet,
    preserved_gram: &DenseMatrix,
    history: &EditHistory,
    config: &SolverConfig,
) -> Result<EditSolution> {
    config.validate()?;
    batch.check_against(memory)?;
    check_history(memory, history)?;
    let d0 = memory.d_in();
    check_square("preserved gram", preserved_gram, d0)?;
    let g0_norm = preserved_gram.frobenius_norm();
    let deviation = preserved_gram.asymmetry();
    if deviation > 1e-10 * g0_norm {
        return Err(Error::Asymmetry {
            deviation,
            tolerance: 1e-10 * g0_norm,
        });
    }
    if batch.is_empty() {
        return Ok(EditSolution::zero(memory, Method::Memit));
    }

    let k1 = batch.keys();
    let r = memory.residual(batch)?;
    let bracket = &(history.gram() + &k1.gram()) + &preserved_gram.scale(config.preserved_weight);
    let target = &r * &k1.transpose();

    let (delta, condition) = match LuFactors::factor(&bracket) {
        Ok(lu) => {
            let delta = lu.solve_transpose(&target.transpose())?.transpose();
            (delta, lu.condition_estimate())
        }
        Err(Error::Singular { .. }) if config.rank_deficiency == RankDeficiency::MinNorm => {
            let pinv = pseudo_inverse_symmetric(&bracket, MIN_NORM_CUTOFF)?;
            (&target * &pinv.matrix, pinv.condition)
        }
        Err(e) => return Err(e),
    };
    let normal = &(&delta * &bracket) - &target;
    Ok(EditSolution {
        delta,
        method: Method::Memit,
        normal_eq_residual: normal.frobenius_norm(),
        system_condition_estimate: condition,
    })
}

/// Null-space constrained solution
/// `Δ = R K₁ᵀ P (KₚKₚᵀ P + K₁K₁ᵀ P + α I)⁻¹`.
///
/// The bracket is not symmetric, so it is factored with pivoted LU. The
/// returned delta already lies in the null space: `Δ P = Δ`.
pub fn solve_alphaedit(
    memory: &AssociativeMemory,
    batch: &KnowledgeSet,
    proj: &NullSpaceProjector,
    history: &EditHistory,
    config: &SolverConfig,
) -> Result<EditSolution> {
    config.validate()?;
    batch.check_against(memory)?;
    check_history(memory, history)?;
    let d0 = memory.d_in();
    check_square("projector", proj.matrix(), d0)?;
    if batch.is_empty() {
        return Ok(EditSolution::zero(memory, Method::AlphaEdit));
    }

    let p = proj.matrix();
    let k1 = batch.keys();
    let r = memory.residual(batch)?;
    let r_used = if config.sign_flip_canary {
        r.scale(-1.0)
    } else {
        r.clone()
    };

    let gp_p = history.gram() * p;
    let mut bracket = &gp_p + &(&k1.gram() * p);
    for i in 0..d0 {
        bracket.set(i, i, bracket.get(i, i) + config.ridge_scale);
    }
    let target = &(&r_used * &k1.transpose()) * p;
    let lu = LuFactors::factor(&bracket)?;
    let delta = lu.solve_transpose(&target.transpose())?.transpose();

    let fit = &(&(&delta * k1) - &r) * &(&k1.transpose() * p);
    let normal = &(&fit + &delta.scale(config.ridge_scale)) + &(&delta * &gp_p);
    Ok(EditSolution {
        delta,
        method: Method::AlphaEdit,
        normal_eq_residual: normal.frobenius_norm(),
        system_condition_estimate: lu.condition_estimate(),
    })
}

/// MEMIT followed by the projection `Δ ← Δ P`.
pub fn solve_projected_baseline(
    memory: &AssociativeMemory,
    batch: &KnowledgeSet,
    proj: &NullSpaceProjector,
    preserved_gram: &DenseMatrix,
    history: &EditHistory,
    config: &SolverConfig,
) -> Result<EditSolution> {
    check_square("projector", proj.matrix(), memory.d_in())?;
    let base = solve_memit(memory, batch, preserved_gram, history, config)?;
    Ok(EditSolution {
        delta: &base.delta * proj.matrix(),
        method: Method::ProjectedMemit,
        ..base
    })
}

/// `W + Δ` as a new memory.
pub fn apply_edit(
    memory: &AssociativeMemory,
    solution: &EditSolution,
) -> Result<AssociativeMemory> {
    Ok(AssociativeMemory::new(
        memory.weights().try_add(&solution.delta)?,
    ))
}
