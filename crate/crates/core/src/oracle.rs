//! Brute-force verifier for the closed-form editors.
//!
//! Each editing objective is minimized by plain gradient descent on `Δ`
//! starting from zero. The gradients are derived by hand, evaluated from the
//! raw key matrices (no Gram shortcuts, no factorizations), and the descent
//! uses nothing from the editors module, so agreement between the two is an
//! independent check.
//!
//! For projected objectives only `Δ P` is identifiable: any component of `Δ`
//! in the preserved span is invisible to the objective. Compare `Δ P`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{AssociativeMemory, EditHistory, KnowledgeSet};
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// `||(W+Δ)K₁ − V₁||²`
    Naive,
    /// `||(W+Δ)K₁ − V₁||² + λ||(W+Δ)K₀ − V₀||² + ||ΔKₚ||²`
    Regularized,
    /// `||(W+ΔP)K₁ − V₁||² + α||ΔP||²`
    ProjectedSingle,
    /// `||(W+ΔP)K₁ − V₁||² + α||ΔP||² + ||ΔPKₚ||²`
    ProjectedSequential,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::Naive,
        ObjectiveKind::Regularized,
        ObjectiveKind::ProjectedSingle,
        ObjectiveKind::ProjectedSequential,
    ];

    pub fn is_projected(self) -> bool {
        matches!(
            self,
            ObjectiveKind::ProjectedSingle | ObjectiveKind::ProjectedSequential
        )
    }
}

/// An editing objective with the matrices it is evaluated on.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    kind: ObjectiveKind,
    weights: DenseMatrix,
    keys: DenseMatrix,
    values: DenseMatrix,
    preserved: Option<(DenseMatrix, DenseMatrix)>,
    preserved_weight: f64,
    projector: Option<DenseMatrix>,
    ridge_scale: f64,
    prior_keys: Option<DenseMatrix>,
}

impl ObjectiveSpec {
    pub fn naive(memory: &AssociativeMemory, batch: &KnowledgeSet) -> Result<Self> {
        batch.check_against(memory)?;
        Ok(Self {
            kind: ObjectiveKind::Naive,
            weights: memory.weights().clone(),
            keys: batch.keys().clone(),
            values: batch.values().clone(),
            preserved: None,
            preserved_weight: 0.0,
            projector: None,
            ridge_scale: 0.0,
            prior_keys: None,
        })
    }

    /// The objective MEMIT's sequential closed form minimizes. Pass an empty
    /// history for the single-edit case.
    pub fn regularized(
        memory: &AssociativeMemory,
        batch: &KnowledgeSet,
        preserved: &KnowledgeSet,
        preserved_weight: f64,
        history: &EditHistory,
    ) -> Result<Self> {
        preserved.check_against(memory)?;
        check_history(memory, history)?;
        let mut spec = Self::naive(memory, batch)?;
        spec.kind = ObjectiveKind::Regularized;
        spec.preserved = Some((preserved.keys().clone(), preserved.values().clone()));
        spec.preserved_weight = preserved_weight;
        spec.prior_keys = Some(history.prior_keys().clone());
        Ok(spec)
    }

    pub fn projected_single(
        memory: &AssociativeMemory,
        batch: &KnowledgeSet,
        projector: &DenseMatrix,
        ridge_scale: f64,
    ) -> Result<Self> {
        let d0 = memory.d_in();
        if projector.shape() != (d0, d0) {
            return Err(Error::dimension(
                "objective projector",
                format!("{d0}x{d0}"),
                format!("{}x{}", projector.rows(), projector.cols()),
            ));
        }
        let mut spec = Self::naive(memory, batch)?;
        spec.kind = ObjectiveKind::ProjectedSingle;
        spec.projector = Some(projector.clone());
        spec.ridge_scale = ridge_scale;
        Ok(spec)
    }

    pub fn projected_sequential(
        memory: &AssociativeMemory,
        batch: &KnowledgeSet,
        projector: &DenseMatrix,
        ridge_scale: f64,
        history: &EditHistory,
    ) -> Result<Self> {
        check_history(memory, history)?;
        let mut spec = Self::projected_single(memory, batch, projector, ridge_scale)?;
        spec.kind = ObjectiveKind::ProjectedSequential;
        spec.prior_keys = Some(history.prior_keys().clone());
        Ok(spec)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn delta_shape(&self) -> (usize, usize) {
        self.weights.shape()
    }

    pub fn projector(&self) -> Option<&DenseMatrix> {
        self.projector.as_ref()
    }

    /// `Δ P` for projected kinds, `Δ` otherwise.
    pub fn effective_delta(&self, delta: &DenseMatrix) -> DenseMatrix {
        match &self.projector {
            Some(p) => delta * p,
            None => delta.clone(),
        }
    }

    fn check_delta(&self, delta: &DenseMatrix) -> Result<()> {
        if delta.shape() != self.weights.shape() {
            return Err(Error::dimension(
                "objective delta",
                format!("{}x{}", self.weights.rows(), self.weights.cols()),
                format!("{}x{}", delta.rows(), delta.cols()),
            ));
        }
        Ok(())
    }

    /// Value error on the edited keys, `(W + D) K₁ − V₁`.
    fn update_error(&self, d: &DenseMatrix) -> DenseMatrix {
        &(&(&self.weights + d) * &self.keys) - &self.values
    }
}

fn check_history(memory: &AssociativeMemory, history: &EditHistory) -> Result<()> {
    if history.d_in() != memory.d_in() {
        return Err(Error::dimension(
            "objective history",
            format!("d_in {}", memory.d_in()),
            format!("d_in {}", history.d_in()),
        ));
    }
    Ok(())
}

fn sum_sq(m: &DenseMatrix) -> f64 {
    m.as_col_major().iter().map(|v| v * v).sum()
}

/// Exact sum-of-squares value of the objective at `delta`.
pub fn evaluate_objective(spec: &ObjectiveSpec, delta: &DenseMatrix) -> Result<f64> {
    spec.check_delta(delta)?;
    let d = spec.effective_delta(delta);
    let mut value = sum_sq(&spec.update_error(&d));
    if let Some((k0, v0)) = &spec.preserved {
        let e0 = &(&(&spec.weights + &d) * k0) - v0;
        value += spec.preserved_weight * sum_sq(&e0);
    }
    if spec.kind.is_projected() {
        value += spec.ridge_scale * sum_sq(&d);
    }
    if let Some(kp) = &spec.prior_keys {
        value += sum_sq(&(&d * kp));
    }
    Ok(value)
}

/// Pure quadratic part of the objective, `q(E) = J(Δ + E) − J(Δ) − ⟨∇J(Δ), E⟩`,
/// which does not depend on `Δ`.
fn curvature(spec: &ObjectiveSpec, e: &DenseMatrix) -> f64 {
    let d = spec.effective_delta(e);
    let mut q = sum_sq(&(&d * &spec.keys));
    if let Some((k0, _)) = &spec.preserved {
        q += spec.preserved_weight * sum_sq(&(&d * k0));
    }
    if spec.kind.is_projected() {
        q += spec.ridge_scale * sum_sq(&d);
    }
    if let Some(kp) = &spec.prior_keys {
        q += sum_sq(&(&d * kp));
    }
    q
}

/// Analytic gradient `∂J/∂Δ`.
///
/// With `D = Δ P` (or `D = Δ`) the inner gradient is
/// `2 E₁ K₁ᵀ + 2λ E₀ K₀ᵀ + 2α D + 2 D Kₚ Kₚᵀ` (terms present per kind), and
/// the chain rule through `D = Δ P` multiplies on the right by `Pᵀ`.
pub fn gradient(spec: &ObjectiveSpec, delta: &DenseMatrix) -> Result<DenseMatrix> {
    spec.check_delta(delta)?;
    let d = spec.effective_delta(delta);
    let mut g = &spec.update_error(&d) * &spec.keys.transpose();
    if let Some((k0, v0)) = &spec.preserved {
        let e0 = &(&(&spec.weights + &d) * k0) - v0;
        g = &g + &(&e0 * &k0.transpose()).scale(spec.preserved_weight);
    }
    if spec.kind.is_projected() {
        g = &g + &d.scale(spec.ridge_scale);
    }
    if let Some(kp) = &spec.prior_keys {
        g = &g + &(&(&d * kp) * &kp.transpose());
    }
    let g = g.scale(2.0);
    Ok(match &spec.projector {
        Some(p) => &g * &p.transpose(),
        None => g,
    })
}

/// Element-wise central finite differences of the objective.
pub fn central_difference_gradient(
    spec: &ObjectiveSpec,
    delta: &DenseMatrix,
    h: f64,
) -> Result<DenseMatrix> {
    spec.check_delta(delta)?;
    let (rows, cols) = delta.shape();
    let mut out = DenseMatrix::zeros(rows, cols);
    let mut probe = delta.clone();
    for j in 0..cols {
        for i in 0..rows {
            let orig = delta.get(i, j);
            probe.set(i, j, orig + h);
            let up = evaluate_objective(spec, &probe)?;
            probe.set(i, j, orig - h);
            let down = evaluate_objective(spec, &probe)?;
            probe.set(i, j, orig);
            out.set(i, j, (up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub delta: DenseMatrix,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
}

pub const DEFAULT_MAX_ITERS: usize = 50_000;
pub const DEFAULT_GRAD_TOL: f64 = 1e-10;

/// Default initial step, `1e-2 / ||K₁K₁ᵀ||_F`.
pub fn default_step(spec: &ObjectiveSpec) -> f64 {
    let scale = spec.keys.gram().frobenius_norm();
    if scale > 0.0 {
        1e-2 / scale
    } else {
        1e-2
    }
}

/// Gradient descent from `Δ = 0` with the default step, iteration cap and tolerance.
pub fn minimize_default(spec: &ObjectiveSpec) -> Result<OracleResult> {
    minimize(
        spec,
        default_step(spec),
        DEFAULT_MAX_ITERS,
        DEFAULT_GRAD_TOL,
    )
}

/// Gradient descent from `Δ = 0`.
///
/// A step that increases the objective is rejected and the step halved; an
/// accepted step grows the next one by 20%, so the iteration adapts to the
/// curvature while every accepted iterate lowers the objective. The reported
/// value is `J(0)` plus the exactly computed per-step decreases, floored at
/// zero. Converged means `||∇J||_F <= grad_tol * max(J(0), ||∇J(0)||_F)`.
pub fn minimize(
    spec: &ObjectiveSpec,
    step: f64,
    max_iters: usize,
    grad_tol: f64,
) -> Result<OracleResult> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Precondition(format!(
            "step must be positive, got {step}"
        )));
    }
    let (rows, cols) = spec.delta_shape();
    let mut delta = DenseMatrix::zeros(rows, cols);
    let mut value = evaluate_objective(spec, &delta)?;
    let mut grad = gradient(spec, &delta)?;
    let mut grad_norm = grad.frobenius_norm();
    let scale = value.max(grad_norm);
    let tol = grad_tol * scale;
    let mut step = step;
    let mut iterations = 0;
    let mut converged = grad_norm <= tol;

    while !converged && iterations < max_iters {
        // J is quadratic, so the change along -step·g is exactly
        // -step·||g||² + step²·q(g); evaluating it this way avoids the
        // cancellation in J(new) - J(old) that stalls descent near the optimum.
        let g2 = sum_sq(&grad);
        let q = curvature(spec, &grad);
        let mut accepted = false;
        for _ in 0..200 {
            let change = -step * g2 + step * step * q;
            if !change.is_finite() {
                return Err(Error::Divergence {
                    iteration: iterations,
                });
            }
            if change <= 0.0 {
                delta = &delta - &grad.scale(step);
                value += change;
                step *= 1.2;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No descent possible at working precision.
            break;
        }
        iterations += 1;
        grad = gradient(spec, &delta)?;
        grad_norm = grad.frobenius_norm();
        converged = grad_norm <= tol;
    }

    Ok(OracleResult {
        delta,
        // J is a sum of squares; the tracked value can only dip below zero by round-off.
        objective_value: value.max(0.0),
        iterations,
        converged,
        final_gradient_norm: grad_norm,
    })
}
