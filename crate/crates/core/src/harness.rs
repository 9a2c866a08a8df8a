//! Sequential editing: `T` batches of `u` edits applied one after another,
//! with per-step error metrics.
//!
//! Every method runs on its own copy of the same world and sees the same
//! batch stream, so runs are paired. The projector is built once from `K₀`
//! and reused for every step.
//!
//! Metrics are relative Frobenius errors:
//! - update: `||W_t K₁ − V₁|| / ||V₁||` for the batch just applied,
//! - preservation: `||W_t K₀ − V₀|| / ||V₀||`,
//! - retention: `||W_t Kₚ − Vₚ|| / ||Vₚ||` over earlier batches, where `Vₚ`
//!   holds the values those batches actually achieved right after they were
//!   applied, not the requested targets.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::editors::{
    apply_edit, solve_alphaedit, solve_memit, solve_naive, solve_projected_baseline, EditSolution,
    Method, SolverConfig,
};
use crate::error::{Error, Result};
use crate::knowledge::{
    generate_edit_batch, generate_world, AssociativeMemory, EditHistory, KnowledgeSet,
    SyntheticSpec,
};
use crate::numerics::{eig_symmetric, ratio_or_abs, DenseMatrix};
use crate::projector::{build_projector_with, NullSpaceProjector, ProjectorSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: SyntheticSpec,
    /// Number of sequential batches `T`.
    pub batches: usize,
    /// Edits per batch `u`.
    pub batch_size: usize,
    pub methods: Vec<Method>,
    pub solver: SolverConfig,
    /// Seed of the edit-batch stream; the world has its own seed.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: SyntheticSpec::default(),
            batches: 20,
            batch_size: 5,
            methods: Method::ALL.to_vec(),
            solver: SolverConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.solver.validate()?;
        if self.batches == 0 {
            return Err(Error::config("batches", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "must name at least one method"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based step index.
    pub step: usize,
    pub method: Method,
    pub update_error: f64,
    pub preservation_error: f64,
    pub retention_error: f64,
    pub delta_norm: f64,
    pub normal_eq_residual: f64,
    /// `||R (I − Π)|| / ||R||`: the share of the residual no edit confined
    /// to the method's reachable directions can close.
    pub capacity_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTrajectory {
    pub method: Method,
    pub steps: Vec<StepMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub config: ExperimentConfig,
    pub per_method: Vec<MethodTrajectory>,
    pub projector_summary: ProjectorSummary,
}

impl Trajectory {
    pub fn method(&self, method: Method) -> Option<&MethodTrajectory> {
        self.per_method.iter().find(|m| m.method == method)
    }

    /// All step records, methods in configured order, steps ascending.
    pub fn records(&self) -> impl Iterator<Item = &StepMetrics> {
        self.per_method.iter().flat_map(|m| m.steps.iter())
    }
}

/// Seed of batch `t` in the stream rooted at `seed` (splitmix64 mixing).
pub fn batch_seed(seed: u64, t: usize) -> u64 {
    let mut z = seed.wrapping_add((t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything that is shared, read-only, between the per-method runs.
pub struct ExperimentWorld {
    pub memory: AssociativeMemory,
    pub preserved: KnowledgeSet,
    pub preserved_gram: DenseMatrix,
    pub projector: NullSpaceProjector,
    pub batches: Vec<KnowledgeSet>,
}

impl ExperimentWorld {
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (memory, preserved) = generate_world(&config.world)?;
        let preserved_gram = preserved.keys().gram();
        let projector = build_projector_with(
            preserved.keys(),
            config.solver.threshold,
            config.solver.threshold_mode,
        )?;
        let batches = (0..config.batches)
            .map(|t| {
                generate_edit_batch(
                    &config.world,
                    &memory,
                    config.batch_size,
                    batch_seed(config.seed, t),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            memory,
            preserved,
            preserved_gram,
            projector,
            batches,
        })
    }
}

/// Dispatches to the solver for `method`.
pub fn solve_with(
    method: Method,
    memory: &AssociativeMemory,
    batch: &KnowledgeSet,
    world: &ExperimentWorld,
    history: &EditHistory,
    config: &SolverConfig,
) -> Result<EditSolution> {
    match method {
        Method::Naive => solve_naive(memory, batch),
        Method::Memit => solve_memit(memory, batch, &world.preserved_gram, history, config),
        Method::AlphaEdit => solve_alphaedit(memory, batch, &world.projector, history, config),
        Method::ProjectedMemit => solve_projected_baseline(
            memory,
            batch,
            &world.projector,
            &world.preserved_gram,
            history,
            config,
        ),
    }
}

fn relative_recall_error(memory: &AssociativeMemory, set: &KnowledgeSet) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let err = (&(memory.weights() * set.keys()) - set.values()).frobenius_norm();
    ratio_or_abs(err, set.values().frobenius_norm())
}

/// `||R (I − Π)|| / ||R||` where `Π` projects onto the row space of the
/// reachable keys (`P K₁` for projected methods, `K₁` otherwise).
pub fn capacity_floor(residual: &DenseMatrix, reachable_keys: &DenseMatrix) -> Result<f64> {
    let r_norm = residual.frobenius_norm();
    if r_norm == 0.0 || reachable_keys.cols() == 0 {
        return Ok(0.0);
    }
    let small = reachable_keys.transpose_matmul(reachable_keys)?;
    let eig = eig_symmetric(&small, 1e-10)?;
    let lead = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let basis = eig.select(|lam| lam > 1e-10 * lead && lam > 0.0);
    let reached = &(residual * &basis) * &basis.transpose();
    Ok((residual - &reached).frobenius_norm() / r_norm)
}

fn run_method(
    method: Method,
    world: &ExperimentWorld,
    config: &ExperimentConfig,
) -> Result<MethodTrajectory> {
    let mut memory = world.memory.clone();
    let mut history = EditHistory::empty(memory.d_in(), memory.d_out());
    let mut steps = Vec::with_capacity(world.batches.len());

    for (t, batch) in world.batches.iter().enumerate() {
        let step = t + 1;
        let annotate = |e: Error| Error::Solver {
            method: method.to_string(),
            step,
            source: Box::new(e),
        };
        let residual = memory.residual(batch).map_err(annotate)?;
        let solution = solve_with(method, &memory, batch, world, &history, &config.solver)
            .map_err(annotate)?;
        memory = apply_edit(&memory, &solution).map_err(annotate)?;

        let reachable = if method.is_projected() {
            world.projector.matrix() * batch.keys()
        } else {
            batch.keys().clone()
        };
        let metrics = StepMetrics {
            step,
            method,
            update_error: relative_recall_error(&memory, batch),
            preservation_error: relative_recall_error(&memory, &world.preserved),
            retention_error: relative_recall_error(&memory, &history.as_knowledge()),
            delta_norm: solution.delta.frobenius_norm(),
            normal_eq_residual: solution.normal_eq_residual,
            capacity_floor: capacity_floor(&residual, &reachable).map_err(annotate)?,
        };
        steps.push(metrics);

        let achieved = KnowledgeSet::new(batch.keys().clone(), memory.recall(batch.keys())?)?;
        history = history.extend(&achieved).map_err(annotate)?;
    }
    Ok(MethodTrajectory { method, steps })
}

/// Runs every configured method over the same world and batch stream.
///
/// Methods run on separate threads; each owns its memory copy, so results do
/// not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Trajectory> {
    let world = ExperimentWorld::generate(config)?;
    let results: Vec<Result<MethodTrajectory>> = thread::scope(|s| {
        let handles: Vec<_> = config
            .methods
            .iter()
            .map(|&m| {
                let world = &world;
                s.spawn(move || run_method(m, world, config))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("method run panicked"))
            .collect()
    });
    let per_method = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        config: config.clone(),
        per_method,
        projector_summary: world.projector.summary(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub final_preservation_error: f64,
    pub mean_update_error: f64,
    pub max_retention_error: f64,
    pub total_delta_norm: f64,
}

impl MethodSummary {
    fn from_steps(m: &MethodTrajectory) -> Self {
        let n = m.steps.len().max(1) as f64;
        Self {
            method: m.method,
            final_preservation_error: m.steps.last().map_or(0.0, |s| s.preservation_error),
            mean_update_error: m.steps.iter().map(|s| s.update_error).sum::<f64>() / n,
            max_retention_error: m
                .steps
                .iter()
                .map(|s| s.retention_error)
                .fold(0.0, f64::max),
            total_delta_norm: m.steps.iter().map(|s| s.delta_norm).sum(),
        }
    }

    fn values(&self) -> [f64; 4] {
        [
            self.final_preservation_error,
            self.mean_update_error,
            self.max_retention_error,
            self.total_delta_norm,
        ]
    }
}

/// Ratios `numerator / denominator` of each summary field between two
/// method runs, identified by their position in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRatio {
    pub numerator: usize,
    pub denominator: usize,
    pub numerator_method: Method,
    pub denominator_method: Method,
    pub final_preservation_error: f64,
    pub mean_update_error: f64,
    pub max_retention_error: f64,
    pub total_delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub methods: Vec<MethodSummary>,
    pub ratios: Vec<PairRatio>,
}

impl ComparisonSummary {
    pub fn ratio(&self, numerator: Method, denominator: Method) -> Option<&PairRatio> {
        self.ratios
            .iter()
            .find(|r| r.numerator_method == numerator && r.denominator_method == denominator)
    }
}

/// Per-method summaries without pairwise ratios; valid for any method count.
pub fn summarize(trajectory: &Trajectory) -> Vec<MethodSummary> {
    trajectory
        .per_method
        .iter()
        .map(MethodSummary::from_steps)
        .collect()
}

fn safe_ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

/// Per-method summaries plus every ordered pairwise ratio.
pub fn compare_methods(trajectory: &Trajectory) -> Result<ComparisonSummary> {
    if trajectory.per_method.len() < 2 {
        return Err(Error::Precondition(format!(
            "comparison needs at least two methods, trajectory has {}",
            trajectory.per_method.len()
        )));
    }
    let methods = summarize(trajectory);
    let mut ratios = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for (j, b) in methods.iter().enumerate() {
            if i == j {
                continue;
            }
            let (va, vb) = (a.values(), b.values());
            ratios.push(PairRatio {
                numerator: i,
                denominator: j,
                numerator_method: a.method,
                denominator_method: b.method,
                final_preservation_error: safe_ratio(va[0], vb[0]),
                mean_update_error: safe_ratio(va[1], vb[1]),
                max_retention_error: safe_ratio(va[2], vb[2]),
                total_delta_norm: safe_ratio(va[3], vb[3]),
            });
        }
    }
    Ok(ComparisonSummary { methods, ratios })
}
