//! Unconditional maximum-likelihood training with persistent Langevin chains.
//!
//! The synthesis chains are the negative-phase sample pool: each iteration
//! runs `K` Langevin steps on them under the current parameters, then nudges
//! the parameters so observed data scores higher than the chains. With
//! `persistent-noise-init` the chains are drawn from the reference
//! distribution once and then carried across iterations — iteration `t+1`
//! continues exactly where iteration `t` stopped. With `data-init` they
//! restart from the current mini-batch (contrastive divergence).

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{Dataset, VoxelBatch};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::langevin::langevin_step;
use crate::nn::{adam_step, AdamState};
use crate::rng::derive_rng;

use super::{
    minibatch_indices, mle_grad, negate_grads, tag_divergence, ChainInit, DiagnosticsSink,
    EnergyPair, IterationDiagnostics, MleGrad, TrainConfig,
};

pub struct MleTrainer {
    model: DescriptorModel,
    dataset: Dataset,
    cfg: TrainConfig,
    seed: u64,
    iteration: u64,
    chains: VoxelBatch,
    adam: AdamState,
}

impl MleTrainer {
    pub fn new(
        model: DescriptorModel,
        dataset: Dataset,
        cfg: TrainConfig,
        seed: u64,
    ) -> Result<MleTrainer> {
        cfg.validate()?;
        if dataset.is_empty() {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        if dataset.extents()? != model.extents() {
            return Err(Error::Shape(format!(
                "dataset extents {:?} do not match model extents {:?}",
                dataset.extents()?,
                model.extents()
            )));
        }
        let chains = match cfg.chain_init {
            ChainInit::PersistentNoise => VoxelBatch::randn(
                cfg.chain_count,
                model.extents(),
                model.ref_std(),
                &mut derive_rng(seed, "chain-init", 0, 0),
            ),
            // Replaced by the mini-batch at the top of every iteration.
            ChainInit::Data => VoxelBatch::zeros(0, model.extents()),
            other => {
                return Err(Error::Config(format!(
                    "synthesis training supports persistent-noise-init or data-init chains, not {:?}",
                    other
                )))
            }
        };
        let adam = AdamState::for_params(&model.params);
        Ok(MleTrainer {
            model,
            dataset,
            cfg,
            seed,
            iteration: 0,
            chains,
            adam,
        })
    }

    pub fn model(&self) -> &DescriptorModel {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// The current synthesis chain pool.
    pub fn chains(&self) -> &VoxelBatch {
        &self.chains
    }

    /// One parameter update; returns its diagnostics.
    pub fn step(&mut self) -> Result<IterationDiagnostics> {
        let t = self.iteration;
        let indices = minibatch_indices(self.dataset.len(), self.cfg.batch_size, self.seed, t);
        let observed = self.dataset.batch(&indices)?;
        if self.cfg.chain_init == ChainInit::Data {
            self.chains = observed.clone();
        }

        let step_cfg = self.cfg.langevin_at(t);
        let mut rng = derive_rng(self.seed, "langevin-noise", t, 0);
        for _ in 0..step_cfg.steps {
            langevin_step(&self.model, &mut self.chains, &step_cfg, &mut rng)
                .map_err(|e| tag_divergence(e, t))?;
        }

        let MleGrad {
            mut grads,
            observed_scores,
            synthesized_scores,
        } = mle_grad(&self.model, &observed, &self.chains)?;
        let grad_norm = self.model.params.grad_norm(&grads);
        let energies = EnergyPair::new(
            &self.model,
            &observed,
            &observed_scores,
            &self.chains,
            &synthesized_scores,
        );
        negate_grads(&self.model.params, &mut grads);
        let lr = self.cfg.learning_rate_at(t);
        adam_step(
            &mut self.model.params,
            &mut grads,
            &mut self.adam,
            &self.cfg.adam,
            lr,
        )?;
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
            generator_loss: None,
        })
    }

    /// Run `count` iterations, feeding each record to `sink`.
    pub fn run(&mut self, count: u64, sink: DiagnosticsSink) -> Result<()> {
        for _ in 0..count {
            let d = self.step()?;
            sink(&d)?;
        }
        Ok(())
    }

    /// Snapshot everything needed to continue this run bit-identically.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = CheckpointMeta::new("synthesis", self.seed);
        meta.iteration = self.iteration;
        meta.descriptor = Some(self.model.spec().clone());
        meta.convention = Some(self.dataset.convention);
        meta.data_mean = Some(self.dataset.mean as f64);
        let mut ck = Checkpoint::new(meta);
        ck.insert_params("", &self.model.params)?;
        ck.insert_adam("", &self.model.params, &self.adam)?;
        if self.cfg.chain_init == ChainInit::PersistentNoise {
            ck.insert("chains", self.chains.to_tensor())?;
        }
        Ok(ck)
    }

    /// Rebuild a trainer from [`MleTrainer::checkpoint`] output. The dataset
    /// and config must be the ones the original run used; continuing then
    /// reproduces the uninterrupted run bit for bit.
    pub fn resume(ck: &Checkpoint, dataset: Dataset, cfg: TrainConfig) -> Result<MleTrainer> {
        if ck.meta.kind != "synthesis" {
            return Err(Error::Format(format!(
                "expected a synthesis checkpoint, found kind {:?}",
                ck.meta.kind
            )));
        }
        let spec = ck
            .meta
            .descriptor
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no descriptor spec".into()))?;
        let model = DescriptorModel::new(spec, ck.meta.seed)?;
        let mut out = MleTrainer::new(model, dataset, cfg, ck.meta.seed)?;
        ck.load_params("", &mut out.model.params)?;
        ck.load_adam("", &out.model.params, &mut out.adam)?;
        out.iteration = ck.meta.iteration;
        if out.cfg.chain_init == ChainInit::PersistentNoise {
            let t = ck
                .tensor("chains")
                .ok_or_else(|| Error::Format("checkpoint carries no chain pool".into()))?;
            out.chains = VoxelBatch::from_tensor(t)?;
        }
        if let Some(m) = ck.meta.data_mean {
            if (m - out.dataset.mean as f64).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "dataset mean {} does not match the checkpoint's {}",
                    out.dataset.mean, m
                )));
            }
        }
        Ok(out)
    }
}
