//! Key-value view of a weight matrix and seeded synthetic knowledge.
//!
//! A memory `W` (d_out × d_in) stores an association `k -> v` when `W k = v`.
//! Preserved keys are drawn from a low-rank-plus-noise model
//! `k = B z + σ ε`, with `B` a random orthonormal `d_in × r` basis, so the
//! Gram matrix `K₀K₀ᵀ` has a controllable null space.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64`, so a given spec and
//! seed replay bit-identically on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// The editable weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociativeMemory {
    weights: DenseMatrix,
}

impl AssociativeMemory {
    pub fn new(weights: DenseMatrix) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn into_weights(self) -> DenseMatrix {
        self.weights
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    /// `W K`.
    pub fn recall(&self, keys: &DenseMatrix) -> Result<DenseMatrix> {
        self.weights.try_matmul(keys)
    }

    /// `V - W K`, the value error an edit has to close.
    pub fn residual(&self, set: &KnowledgeSet) -> Result<DenseMatrix> {
        set.check_against(self)?;
        Ok(&set.values - &(&self.weights * &set.keys))
    }
}

/// Column-paired keys (d_in × n) and values (d_out × n).
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSet {
    keys: DenseMatrix,
    values: DenseMatrix,
}

impl KnowledgeSet {
    pub fn new(keys: DenseMatrix, values: DenseMatrix) -> Result<Self> {
        if keys.cols() != values.cols() {
            return Err(Error::dimension(
                "KnowledgeSet",
                format!("{} value columns", keys.cols()),
                format!("{} value columns", values.cols()),
            ));
        }
        Ok(Self { keys, values })
    }

    pub fn empty(d_in: usize, d_out: usize) -> Self {
        Self {
            keys: DenseMatrix::zeros(d_in, 0),
            values: DenseMatrix::zeros(d_out, 0),
        }
    }

    pub fn keys(&self) -> &DenseMatrix {
        &self.keys
    }

    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.keys.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub(crate) fn check_against(&self, memory: &AssociativeMemory) -> Result<()> {
        if self.keys.rows() != memory.d_in() || self.values.rows() != memory.d_out() {
            return Err(Error::dimension(
                "knowledge set",
                format!("keys {}x_, values {}x_", memory.d_in(), memory.d_out()),
                format!(
                    "keys {}x{}, values {}x{}",
                    self.keys.rows(),
                    self.keys.cols(),
                    self.values.rows(),
                    self.values.cols()
                ),
            ));
        }
        Ok(())
    }
}

/// Keys and values of previously edited associations plus their running Gram
/// matrix `KₚKₚᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EditHistory {
    prior_keys: DenseMatrix,
    prior_values: DenseMatrix,
    gram: DenseMatrix,
}

impl EditHistory {
    pub fn empty(d_in: usize, d_out: usize) -> Self {
        Self {
            prior_keys: DenseMatrix::zeros(d_in, 0),
            prior_values: DenseMatrix::zeros(d_out, 0),
            gram: DenseMatrix::zeros(d_in, d_in),
        }
    }

    pub fn prior_keys(&self) -> &DenseMatrix {
        &self.prior_keys
    }

    pub fn prior_values(&self) -> &DenseMatrix {
        &self.prior_values
    }

    pub fn gram(&self) -> &DenseMatrix {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.prior_keys.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_in(&self) -> usize {
        self.prior_keys.rows()
    }

    pub fn d_out(&self) -> usize {
        self.prior_values.rows()
    }

    /// Appends a batch; the Gram matrix grows by `K₁K₁ᵀ`.
    pub fn extend(&self, batch: &KnowledgeSet) -> Result<EditHistory> {
        if batch.keys.rows() != self.d_in() || batch.values.rows() != self.d_out() {
            return Err(Error::dimension(
                "history_extend",
                format!("keys {} rows, values {} rows", self.d_in(), self.d_out()),
                format!(
                    "keys {} rows, values {} rows",
                    batch.keys.rows(),
                    batch.values.rows()
                ),
            ));
        }
        Ok(EditHistory {
            prior_keys: self.prior_keys.hcat(&batch.keys)?,
            prior_values: self.prior_values.hcat(&batch.values)?,
            gram: &self.gram + &batch.keys.gram(),
        })
    }

    pub fn as_knowledge(&self) -> KnowledgeSet {
        KnowledgeSet {
            keys: self.prior_keys.clone(),
            values: self.prior_values.clone(),
        }
    }
}

/// Parameters of the synthetic world generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d_in: usize,
    pub d_out: usize,
    /// Number of preserved associations `n`.
    pub preserved_count: usize,
    /// Dimension `r` of the key subspace.
    pub effective_rank: usize,
    /// Isotropic noise scale `σ` added to keys.
    pub key_noise: f64,
    /// Scale of an isotropic component added to edit keys only. Zero makes
    /// edit keys follow exactly the preserved-key distribution.
    pub edit_novelty: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d_in: 64,
            d_out: 32,
            preserved_count: 200,
            effective_rank: 40,
            key_noise: 0.0,
            edit_novelty: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 {
            return Err(Error::config("d_in", "must be at least 1"));
        }
        if self.d_out == 0 {
            return Err(Error::config("d_out", "must be at least 1"));
        }
        if self.effective_rank == 0 || self.effective_rank > self.d_in {
            return Err(Error::config(
                "effective_rank",
                format!("must lie in 1..={} (d_in)", self.d_in),
            ));
        }
        if self.preserved_count < self.effective_rank {
            return Err(Error::config(
                "preserved_count",
                format!("must be at least effective_rank ({})", self.effective_rank),
            ));
        }
        if !(self.key_noise.is_finite() && self.key_noise >= 0.0) {
            return Err(Error::config(
                "key_noise",
                "must be finite and non-negative",
            ));
        }
        if !(self.edit_novelty.is_finite() && self.edit_novelty >= 0.0) {
            return Err(Error::config(
                "edit_novelty",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Orthonormalizes the columns by modified Gram-Schmidt, run twice.
fn orthonormalize(m: &DenseMatrix) -> DenseMatrix {
    let (rows, cols) = m.shape();
    let mut q: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j).to_vec()).collect();
    for j in 0..cols {
        for _ in 0..2 {
            for k in 0..j {
                let proj: f64 = q[k].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = q.split_at_mut(j);
                for (x, y) in tail[0].iter_mut().zip(&head[k]) {
                    *x -= proj * y;
                }
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.0, "degenerate Gaussian draw");
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    DenseMatrix::from_columns(rows, &q).expect("finite orthonormal basis")
}

/// The random stream of a world: `W`, then `B`, then preserved draws.
struct WorldDraws {
    weights: DenseMatrix,
    basis: DenseMatrix,
    rng: ChaCha8Rng,
}

fn world_draws(spec: &SyntheticSpec) -> WorldDraws {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = gaussian(&mut rng, spec.d_out, spec.d_in).scale(1.0 / (spec.d_in as f64).sqrt());
    let basis = orthonormalize(&gaussian(&mut rng, spec.d_in, spec.effective_rank));
    WorldDraws {
        weights,
        basis,
        rng,
    }
}

/// The orthonormal `d_in × r` key basis `B` of a world.
pub fn key_basis(spec: &SyntheticSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    Ok(world_draws(spec).basis)
}

/// Generates the memory `W` and the preserved set `(K₀, V₀ = W K₀)`.
pub fn generate_world(spec: &SyntheticSpec) -> Result<(AssociativeMemory, KnowledgeSet)> {
    spec.validate()?;
    let WorldDraws {
        weights,
        basis,
        mut rng,
    } = world_draws(spec);
    let z = gaussian(&mut rng, spec.effective_rank, spec.preserved_count);
    let noise = gaussian(&mut rng, spec.d_in, spec.preserved_count);
    let mut keys = &basis * &z;
    if spec.key_noise > 0.0 {
        keys = &keys + &noise.scale(spec.key_noise);
    }
    let values = &weights * &keys;
    Ok((
        AssociativeMemory::new(weights),
        KnowledgeSet { keys, values },
    ))
}

/// Draws `batch_size` new associations to install.
///
/// Keys are `B z + σ ε + ν ξ` with `ν = spec.edit_novelty`; target values are
/// Gaussian directions rescaled to `||W k||`, so in general `V₁ ≠ W K₁`.
pub fn generate_edit_batch(
    spec: &SyntheticSpec,
    memory: &AssociativeMemory,
    batch_size: usize,
    seed: u64,
) -> Result<KnowledgeSet> {
    spec.validate()?;
    if memory.d_in() != spec.d_in || memory.d_out() != spec.d_out {
        return Err(Error::dimension(
            "generate_edit_batch",
            format!("{}x{} memory", spec.d_out, spec.d_in),
            format!("{}x{} memory", memory.d_out(), memory.d_in()),
        ));
    }
    if batch_size == 0 {
        return Ok(KnowledgeSet::empty(spec.d_in, spec.d_out));
    }
    let basis = world_draws(spec).basis;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian(&mut rng, spec.effective_rank, batch_size);
    let noise = gaussian(&mut rng, spec.d_in, batch_size);
    let novel = gaussian(&mut rng, spec.d_in, batch_size);
    let directions = gaussian(&mut rng, spec.d_out, batch_size);

    let mut keys = &basis * &z;
    if spec.key_noise > 0.0 {
        keys = &keys + &noise.scale(spec.key_noise);
    }
    if spec.edit_novelty > 0.0 {
        keys = &keys + &novel.scale(spec.edit_novelty);
    }
    let recalled = memory.recall(&keys)?;
    let mut values = DenseMatrix::zeros(spec.d_out, batch_size);
    for j in 0..batch_size {
        let target = norm(recalled.column(j));
        let dir = directions.column(j);
        let scale = target / norm(dir);
        for (i, d) in dir.iter().enumerate() {
            values.set(i, j, d * scale);
        }
    }
    Ok(KnowledgeSet { keys, values })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
