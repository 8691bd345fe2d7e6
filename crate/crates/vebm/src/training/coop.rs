//! Cooperative training: a latent-variable generator and a descriptor teach
//! each other.
//!
//! Per iteration the generator proposes `ñ` grids from fresh latent draws,
//! `Ŷᵢ = g(Zᵢ; α) + ε`. The descriptor's Langevin dynamics revises them for
//! `K` steps into `Ỹᵢ` — its own negative-phase samples — and θ takes the
//! usual maximum-likelihood step. The generator then learns from the
//! revision: α descends on `(1/ñ) Σ ‖Ỹᵢ − g(Zᵢ; α)‖²`, i.e. it is trained
//! to output what the descriptor turned its proposals into. The revised
//! grids play the role the latent posterior would in EM: the generator
//! chases the descriptor, the descriptor leans on the generator for fast,
//! well-spread chain starts.
//!
//! Both forwards of an iteration reuse the same latents and the same α, so
//! with `K = 0` the reconstruction loss per voxel is exactly the injected
//! noise power σ².

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{Dataset, ValueConvention, VoxelBatch};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::generator::{sample_prior, GeneratorModel};
use crate::langevin::langevin_step;
use crate::nn::{adam_step, AdamState, LayerSpec};
use crate::rng::{chain_rng, derive_rng};
use rand_distr::StandardNormal;

use super::{
    minibatch_indices, mle_grad, negate_grads, tag_divergence, ChainInit, DiagnosticsSink,
    EnergyPair, IterationDiagnostics, MleGrad, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoopConfig {
    pub train: TrainConfig,
    /// Step size of the generator's optimizer (the descriptor uses
    /// `train.learning_rate`).
    pub generator_learning_rate: f32,
    /// Add `N(0, σ²)` noise to generated grids before Langevin revision,
    /// matching the generative story `Y = g(Z) + ε`. Disable for a
    /// deterministic proposal.
    pub generator_noise: bool,
}

impl Default for CoopConfig {
    fn default() -> CoopConfig {
        CoopConfig {
            train: TrainConfig {
                chain_init: ChainInit::Generator,
                ..TrainConfig::default()
            },
            generator_learning_rate: 1e-3,
            generator_noise: true,
        }
    }
}

impl CoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.generator_learning_rate.is_finite() || self.generator_learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "generator_learning_rate must be finite and non-negative, got {}",
                self.generator_learning_rate
            )));
        }
        if self.train.chain_init != ChainInit::Generator {
            return Err(Error::Config(
                "cooperative training requires generator-init chains".into(),
            ));
        }
        Ok(())
    }
}

pub struct CoopTrainer {
    descriptor: DescriptorModel,
    generator: GeneratorModel,
    dataset: Dataset,
    cfg: CoopConfig,
    seed: u64,
    iteration: u64,
    desc_adam: AdamState,
    gen_adam: AdamState,
}

impl CoopTrainer {
    /// `dataset` must be in the signed-unit convention: the generator's tanh
    /// output lives in `[-1, 1]`, and observed data has to share that range.
    pub fn new(
        descriptor: DescriptorModel,
        generator: GeneratorModel,
        dataset: Dataset,
        cfg: CoopConfig,
        seed: u64,
    ) -> Result<CoopTrainer> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        if dataset.convention != ValueConvention::SignedUnit {
            return Err(Error::Config(
                "cooperative training expects signed-unit data (tanh range)".into(),
            ));
        }
        if dataset.extents()? != descriptor.extents() {
            return Err(Error::Shape(format!(
                "dataset extents {:?} do not match descriptor extents {:?}",
                dataset.extents()?,
                descriptor.extents()
            )));
        }
        if generator.extents() != descriptor.extents() {
            return Err(Error::Shape(format!(
                "generator extents {:?} do not match descriptor extents {:?}",
                generator.extents(),
                descriptor.extents()
            )));
        }
        let has_bn = generator
            .spec()
            .layers
            .iter()
            .any(|l| matches!(l, LayerSpec::BatchNorm3d));
        if has_bn && cfg.train.chain_count < 2 {
            return Err(Error::Config(
                "the generator uses batch normalization; chain_count must be at least 2".into(),
            ));
        }
        let desc_adam = AdamState::for_params(&descriptor.params);
        let gen_adam = AdamState::for_params(&generator.params);
        Ok(CoopTrainer {
            descriptor,
            generator,
            dataset,
            cfg,
            seed,
            iteration: 0,
            desc_adam,
            gen_adam,
        })
    }

    pub fn descriptor(&self) -> &DescriptorModel {
        &self.descriptor
    }

    pub fn generator(&self) -> &GeneratorModel {
        &self.generator
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn step(&mut self) -> Result<IterationDiagnostics> {
        let t = self.iteration;
        let indices =
            minibatch_indices(self.dataset.len(), self.cfg.train.batch_size, self.seed, t);
        let observed = self.dataset.batch(&indices)?;

        // Fresh latent draws, one independent stream per chain.
        let latents: Vec<Vec<f32>> = (0..self.cfg.train.chain_count)
            .map(|i| sample_prior(self.generator.latent_dim(), &mut chain_rng(self.seed, "latent", t, i)))
            .collect();

        // First forward: the proposals. The target binding is a dummy — only
        // the generator output is consumed here.
        let dummy = VoxelBatch::zeros(self.cfg.train.chain_count, self.generator.extents());
        let proposal_values = self.generator.forward_train(&latents, &dummy)?;
        let mut chains = self.generator.output_batch(&proposal_values)?;
        let sigma = self.generator.spec().noise_std;
        if self.cfg.generator_noise && sigma > 0.0 {
            let mut rng = derive_rng(self.seed, "proposal-noise", t, 0);
            for v in chains.values_mut() {
                let z: f32 = rand::Rng::sample(&mut rng, StandardNormal);
                *v += sigma * z;
            }
        }

        // Langevin revision under the descriptor.
        let step_cfg = self.cfg.train.langevin_at(t);
        let mut rng = derive_rng(self.seed, "langevin-noise", t, 0);
        for _ in 0..step_cfg.steps {
            langevin_step(&self.descriptor, &mut chains, &step_cfg, &mut rng)
                .map_err(|e| tag_divergence(e, t))?;
        }

        // Descriptor update against the revised proposals.
        let MleGrad {
            mut grads,
            observed_scores,
            synthesized_scores,
        } = mle_grad(&self.descriptor, &observed, &chains)?;
        let grad_norm = self.descriptor.params.grad_norm(&grads);
        let energies = EnergyPair::new(
            &self.descriptor,
            &observed,
            &observed_scores,
            &chains,
            &synthesized_scores,
        );
        negate_grads(&self.descriptor.params, &mut grads);
        let lr = self.cfg.train.learning_rate_at(t);
        adam_step(
            &mut self.descriptor.params,
            &mut grads,
            &mut self.desc_adam,
            &self.cfg.train.adam,
            lr,
        )?;

        // Second forward: same latents, same α, revised grids as the target.
        // Its loss gradient already points downhill — no negation.
        let revision_values = self.generator.forward_train(&latents, &chains)?;
        let generator_loss = self.generator.loss_per_voxel(&revision_values) as f64;
        let mut gen_grads = self.generator.loss_grads(&revision_values)?;
        adam_step(
            &mut self.generator.params,
            &mut gen_grads,
            &mut self.gen_adam,
            &self.cfg.train.adam,
            self.cfg.generator_learning_rate,
        )?;
        self.generator.update_running_stats(&revision_values)?;

        self.iteration += 1;
        Ok(IterationDiagnostics {
            iteration: t,
            grid: None,
            value: energies.value,
            energy_observed: energies.observed,
            energy_synthesized: energies.synthesized,
            grad_norm,
            learning_rate: lr,
            noise_enabled: step_cfg.noise_enabled,
            generator_loss: Some(generator_loss),
        })
    }

    pub fn run(&mut self, count: u64, sink: DiagnosticsSink) -> Result<()> {
        for _ in 0..count {
            let d = self.step()?;
            sink(&d)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = CheckpointMeta::new("coop", self.seed);
        meta.iteration = self.iteration;
        meta.descriptor = Some(self.descriptor.spec().clone());
        meta.generator = Some(self.generator.spec().clone());
        meta.convention = Some(ValueConvention::SignedUnit);
        let mut ck = Checkpoint::new(meta);
        ck.insert_params("desc.", &self.descriptor.params)?;
        ck.insert_adam("desc.", &self.descriptor.params, &self.desc_adam)?;
        ck.insert_params("gen.", &self.generator.params)?;
        ck.insert_adam("gen.", &self.generator.params, &self.gen_adam)?;
        Ok(ck)
    }

    pub fn resume(ck: &Checkpoint, dataset: Dataset, cfg: CoopConfig) -> Result<CoopTrainer> {
        if ck.meta.kind != "coop" {
            return Err(Error::Format(format!(
                "expected a coop checkpoint, found kind {:?}",
                ck.meta.kind
            )));
        }
        let desc_spec = ck
            .meta
            .descriptor
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no descriptor spec".into()))?;
        let gen_spec = ck
            .meta
            .generator
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no generator spec".into()))?;
        let descriptor = DescriptorModel::new(desc_spec, ck.meta.seed)?;
        let generator = GeneratorModel::new(gen_spec, ck.meta.seed)?;
        let mut out = CoopTrainer::new(descriptor, generator, dataset, cfg, ck.meta.seed)?;
        ck.load_params("desc.", &mut out.descriptor.params)?;
        ck.load_adam("desc.", &out.descriptor.params, &mut out.desc_adam)?;
        ck.load_params("gen.", &mut out.generator.params)?;
        ck.load_adam("gen.", &out.generator.params, &mut out.gen_adam)?;
        out.iteration = ck.meta.iteration;
        Ok(out)
    }

    /// Rebuild just the generator from a cooperative checkpoint, for
    /// sampling and latent-space work without the training data.
    pub fn generator_from_checkpoint(ck: &Checkpoint) -> Result<GeneratorModel> {
        if ck.meta.kind != "coop" {
            return Err(Error::Format(format!(
                "expected a coop checkpoint, found kind {:?}",
                ck.meta.kind
            )));
        }
        let gen_spec = ck
            .meta
            .generator
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no generator spec".into()))?;
        let mut generator = GeneratorModel::new(gen_spec, ck.meta.seed)?;
        ck.load_params("gen.", &mut generator.params)?;
        Ok(generator)
    }

    /// Rebuild just the descriptor from a cooperative checkpoint.
    pub fn descriptor_from_checkpoint(ck: &Checkpoint) -> Result<DescriptorModel> {
        if ck.meta.kind != "coop" {
            return Err(Error::Format(format!(
                "expected a coop checkpoint, found kind {:?}",
                ck.meta.kind
            )));
        }
        let desc_spec = ck
            .meta
            .descriptor
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no descriptor spec".into()))?;
        let mut descriptor = DescriptorModel::new(desc_spec, ck.meta.seed)?;
        ck.load_params("desc.", &mut descriptor.params)?;
        Ok(descriptor)
    }
}
