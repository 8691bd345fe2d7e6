//! Training loops: maximum-likelihood estimation of descriptor parameters
//! with Langevin-sampled negative examples.
//!
//! All five trainers share one update rule. Each iteration draws a mini-batch
//! of observed grids, produces synthesized grids by running the sampler from
//! a task-specific initialization (persistent chains, corrupted data,
//! block-upscaled low-res input, the next-coarser grid, or a generator), and
//! moves the parameters along the stochastic log-likelihood gradient
//!
//! ```text
//!   (1/n) Σ ∂f(Yᵢ;θ)/∂θ  −  (1/ñ) Σ ∂f(Ỹᵢ;θ)/∂θ .
//! ```
//!
//! The same expression is the derivative, at fixed samples, of the value
//! function `V = mean E(synthesized) − mean E(observed)`; every trainer
//! reports both energies and `V` per iteration so the identity can be checked
//! from the diagnostics stream alone.
//!
//! Determinism: every random stream (chain starts, Langevin noise, mini-batch
//! shuffles, corruption masks, generator latents) is derived from the master
//! seed plus a tag and the iteration counter, never from mutable RNG state.
//! A trainer resumed from a checkpoint therefore replays the exact bit
//! pattern of an uninterrupted run.

use serde::{Deserialize, Serialize};

use crate::data::VoxelBatch;
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::graph::GradMap;
use crate::langevin::LangevinConfig;
use crate::nn::{AdamConfig, ParamSet};
use crate::rng::derive_rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

mod coop;
mod mle;
mod multigrid;
mod recovery;
mod superres;

pub use coop::{CoopConfig, CoopTrainer};
pub use mle::MleTrainer;
pub use multigrid::{MultigridConfig, MultigridSampler, MultigridTrainer};
pub use recovery::{recover, MaskRefresh, RecoveryConfig, RecoveryTrainer};
pub use superres::{superres, SuperresConfig, SuperresTrainer};

/// How the synthesis chains are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainInit {
    /// Chains are drawn once from the `N(0, s²)` reference distribution and
    /// persist across iterations, each update continuing where the previous
    /// one stopped.
    #[serde(rename = "persistent-noise-init")]
    PersistentNoise,
    /// Chains restart from the current mini-batch every iteration
    /// (contrastive-divergence style; recovery and super-resolution start
    /// from the corrupted/upscaled form of the batch).
    #[serde(rename = "data-init")]
    Data,
    /// Chains start from generator output (cooperative training).
    #[serde(rename = "generator-init")]
    Generator,
    /// Chains start from the upscaled next-coarser grid (multi-grid).
    #[serde(rename = "coarser-grid-init")]
    CoarserGrid,
}

/// Gradient-ascent settings shared by every trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Number of parameter updates; one update consumes one mini-batch.
    pub iterations: u64,
    pub learning_rate: f32,
    /// Observed grids per update.
    pub batch_size: usize,
    /// Parallel synthesis chains ñ (ignored by trainers whose chain count is
    /// tied to the batch).
    pub chain_count: usize,
    /// Sampler settings; `steps` Langevin updates are run per iteration.
    pub langevin: LangevinConfig,
    /// Iteration index from which the Langevin noise term is dropped, turning
    /// the sampler into pure gradient descent on the energy. `None` keeps
    /// noise for the whole run.
    pub noise_disable_after: Option<u64>,
    pub chain_init: ChainInit,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            iterations: 3000,
            learning_rate: 1e-3,
            batch_size: 20,
            chain_count: 25,
            langevin: LangevinConfig::default(),
            noise_disable_after: Some(100),
            chain_init: ChainInit::PersistentNoise,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.langevin.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.chain_count == 0 {
            return Err(Error::Config("chain_count must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Learning rate at iteration `t`. Constant today; the hook exists so a
    /// schedule can be added without touching the trainers.
    pub fn learning_rate_at(&self, _t: u64) -> f32 {
        self.learning_rate
    }

    /// Whether the Langevin noise term is live at iteration `t`.
    pub fn noise_at(&self, t: u64) -> bool {
        self.langevin.noise_enabled && self.noise_disable_after.map_or(true, |cut| t < cut)
    }

    /// Sampler settings for iteration `t`, with the noise schedule applied.
    pub fn langevin_at(&self, t: u64) -> LangevinConfig {
        LangevinConfig {
            noise_enabled: self.noise_at(t),
            ..self.langevin.clone()
        }
    }
}

/// One iteration's scalar summary; trainers hand these to a sink which
/// typically writes one JSON object per line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: u64,
    /// Multi-grid level (1 = coarsest trained grid); absent elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Value function: mean synthesized energy minus mean observed energy.
    pub value: f64,
    pub energy_observed: f64,
    pub energy_synthesized: f64,
    /// l2 norm of the ascent gradient over all trainable parameters.
    pub grad_norm: f64,
    pub learning_rate: f32,
    pub noise_enabled: bool,
    /// Per-voxel generator reconstruction loss (cooperative training only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_loss: Option<f64>,
}

/// Callback receiving each iteration's diagnostics as it is produced.
pub type DiagnosticsSink<'a> = &'a mut dyn FnMut(&IterationDiagnostics) -> Result<()>;

/// Output of [`mle_grad`]: the ascent gradient plus the per-grid scores that
/// were computed along the way (callers turn them into energies for
/// diagnostics without a second forward pass).
pub struct MleGrad {
    /// `d log-likelihood / dθ` for every trainable parameter — the ascent
    /// direction. Negate before handing to the (descent-convention) optimizer.
    pub grads: GradMap,
    pub observed_scores: Vec<f32>,
    pub synthesized_scores: Vec<f32>,
}

/// Stochastic maximum-likelihood gradient
/// `(1/n) Σ ∂f(Yᵢ)/∂θ − (1/ñ) Σ ∂f(Ỹᵢ)/∂θ`.
///
/// Identical observed and synthesized batches yield an exactly zero gradient:
/// both terms come from the same forward/backward pass bit pattern.
pub fn mle_grad(
    model: &DescriptorModel,
    observed: &VoxelBatch,
    synthesized: &VoxelBatch,
) -> Result<MleGrad> {
    if observed.count() == 0 || synthesized.count() == 0 {
        return Err(Error::Data(
            "mle_grad needs at least one observed and one synthesized grid".into(),
        ));
    }
    let (observed_scores, mut obs_sum) = model.score_with_param_grads(observed)?;
    let (synthesized_scores, mut syn_sum) = model.score_with_param_grads(synthesized)?;
    let inv_n = 1.0 / observed.count() as f32;
    let inv_m = 1.0 / synthesized.count() as f32;
    let mut grads = GradMap::for_graph(model.graph());
    for entry in model.params.trainable() {
        let mut g = match obs_sum.take(entry.node) {
            Some(t) => t,
            None => Tensor::zeros(entry.tensor.shape()),
        };
        for v in g.data_mut() {
            *v *= inv_n;
        }
        if let Some(s) = syn_sum.take(entry.node) {
            for (gv, sv) in g.data_mut().iter_mut().zip(s.data()) {
                *gv -= inv_m * *sv;
            }
        }
        grads.insert(entry.node, g);
    }
    Ok(MleGrad {
        grads,
        observed_scores,
        synthesized_scores,
    })
}

/// Flip an ascent gradient into the descent direction the optimizer expects.
pub(crate) fn negate_grads(params: &ParamSet, grads: &mut GradMap) {
    for e in params.trainable() {
        if let Some(mut g) = grads.take(e.node) {
            for v in g.data_mut() {
                *v = -*v;
            }
            grads.insert(e.node, g);
        }
    }
}

/// Mean energies of the two batches and their difference, accumulated in f64.
pub(crate) struct EnergyPair {
    pub observed: f64,
    pub synthesized: f64,
    pub value: f64,
}

impl EnergyPair {
    pub(crate) fn new(
        model: &DescriptorModel,
        observed: &VoxelBatch,
        observed_scores: &[f32],
        synthesized: &VoxelBatch,
        synthesized_scores: &[f32],
    ) -> EnergyPair {
        let eo = mean_f64(&model.energy_from_scores(observed, observed_scores));
        let es = mean_f64(&model.energy_from_scores(synthesized, synthesized_scores));
        EnergyPair {
            observed: eo,
            synthesized: es,
            value: es - eo,
        }
    }
}

fn mean_f64(xs: &[f32]) -> f64 {
    xs.iter().map(|&v| v as f64).sum::<f64>() / xs.len() as f64
}

/// Mini-batches per epoch for a dataset of `len` grids.
pub(crate) fn batches_per_epoch(len: usize, batch_size: usize) -> u64 {
    (len as u64).div_ceil(batch_size as u64)
}

/// Epoch that iteration `t` falls into.
pub(crate) fn epoch_of(len: usize, batch_size: usize, t: u64) -> u64 {
    t / batches_per_epoch(len, batch_size)
}

/// Dataset indices of iteration `t`'s mini-batch.
///
/// Each epoch visits every element exactly once in a freshly shuffled order,
/// split into consecutive chunks of `batch_size` (the last chunk of an epoch
/// may be short). The schedule is a pure function of `(len, batch_size, seed,
/// t)` — no state — so a resumed run sees the same batches an uninterrupted
/// one would.
pub fn minibatch_indices(len: usize, batch_size: usize, seed: u64, iteration: u64) -> Vec<usize> {
    assert!(len > 0 && batch_size > 0, "empty dataset or zero batch size");
    let per_epoch = batches_per_epoch(len, batch_size);
    let epoch = iteration / per_epoch;
    let slot = (iteration % per_epoch) as usize;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut derive_rng(seed, "epoch-shuffle", epoch, 0));
    let start = slot * batch_size;
    let end = (start + batch_size).min(len);
    order[start..end].to_vec()
}

/// Rewrite a sampler divergence so the error carries the training iteration
/// instead of the Langevin step index.
pub(crate) fn tag_divergence(err: Error, iteration: u64) -> Error {
    match err {
        Error::Divergence { max_abs, .. } => Error::Divergence {
            step: iteration as usize,
            max_abs,
        },
        e => e,
    }
}
