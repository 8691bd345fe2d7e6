//! Super-resolution training, and the upscaling operation itself.
//!
//! The model lives at the high resolution. Conditioning on a low-res input
//! `Y_low` means sampling inside the affine subspace
//! `{ Y : downscale(Y) = Y_low }`: chains start from the block-replicated
//! upscale and every Langevin update is projected so its block means vanish.
//! The constraint is therefore exact by construction, not a soft penalty —
//! `downscale(output)` reproduces the input to float precision no matter how
//! long the chain runs.
//!
//! During training the low-res input of each example is manufactured from
//! the example itself: chains start at `upscale(downscale(Y))`.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{Dataset, VoxelBatch, VoxelGrid};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::grid::GridScaler;
use crate::langevin::{projected_step, LangevinConfig};
use crate::nn::{adam_step, AdamState};
use crate::rng::derive_rng;

use super::{
    minibatch_indices, mle_grad, negate_grads, tag_divergence, ChainInit, DiagnosticsSink,
    EnergyPair, IterationDiagnostics, MleGrad, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperresConfig {
    pub train: TrainConfig,
    /// Linear upscale factor `d`; each low-res voxel becomes a `d³` block.
    pub factor: usize,
}

impl Default for SuperresConfig {
    fn default() -> SuperresConfig {
        SuperresConfig {
            train: TrainConfig {
                chain_init: ChainInit::Data,
                langevin: LangevinConfig {
                    step_size: 1e-4,
                    steps: 90,
                    ..LangevinConfig::default()
                },
                ..TrainConfig::default()
            },
            factor: 2,
        }
    }
}

impl SuperresConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.factor == 0 {
            return Err(Error::Config("upscale factor must be at least 1".into()));
        }
        if self.train.chain_init != ChainInit::Data {
            return Err(Error::Config(
                "super-resolution training requires data-init chains \
                 (they start from the re-upscaled batch)"
                    .into(),
            ));
        }
        Ok(())
    }
}

pub struct SuperresTrainer {
    model: DescriptorModel,
    dataset: Dataset,
    cfg: SuperresConfig,
    scaler: GridScaler,
    seed: u64,
    iteration: u64,
    adam: AdamState,
}

impl SuperresTrainer {
    /// `dataset` holds high-resolution grids at the model's extents; the
    /// low-resolution conditioning is derived from them on the fly.
    pub fn new(
        model: DescriptorModel,
        dataset: Dataset,
        cfg: SuperresConfig,
        seed: u64,
    ) -> Result<SuperresTrainer> {
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
        let scaler = GridScaler::new(cfg.factor)?;
        for e in model.extents() {
            if e % cfg.factor != 0 {
                return Err(Error::Shape(format!(
                    "extents {:?} are not divisible by the upscale factor {}",
                    model.extents(),
                    cfg.factor
                )));
            }
        }
        let adam = AdamState::for_params(&model.params);
        Ok(SuperresTrainer {
            model,
            dataset,
            cfg,
            scaler,
            seed,
            iteration: 0,
            adam,
        })
    }

    pub fn model(&self) -> &DescriptorModel {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn step(&mut self) -> Result<IterationDiagnostics> {
        let t = self.iteration;
        let indices =
            minibatch_indices(self.dataset.len(), self.cfg.train.batch_size, self.seed, t);
        let observed = self.dataset.batch(&indices)?;

        // Start each chain on the constraint subspace of its own example.
        let mut chains = self
            .scaler
            .upscale_batch(&self.scaler.downscale_batch(&observed)?);

        let step_cfg = self.cfg.train.langevin_at(t);
        let mut rng = derive_rng(self.seed, "langevin-noise", t, 0);
        for _ in 0..step_cfg.steps {
            projected_step(&self.model, &mut chains, &self.scaler, &step_cfg, &mut rng)
                .map_err(|e| tag_divergence(e, t))?;
        }

        let MleGrad {
            mut grads,
            observed_scores,
            synthesized_scores,
        } = mle_grad(&self.model, &observed, &chains)?;
        let grad_norm = self.model.params.grad_norm(&grads);
        let energies = EnergyPair::new(
            &self.model,
            &observed,
            &observed_scores,
            &chains,
            &synthesized_scores,
        );
        negate_grads(&self.model.params, &mut grads);
        let lr = self.cfg.train.learning_rate_at(t);
        adam_step(
            &mut self.model.params,
            &mut grads,
            &mut self.adam,
            &self.cfg.train.adam,
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

    pub fn run(&mut self, count: u64, sink: DiagnosticsSink) -> Result<()> {
        for _ in 0..count {
            let d = self.step()?;
            sink(&d)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = CheckpointMeta::new("superres", self.seed);
        meta.iteration = self.iteration;
        meta.descriptor = Some(self.model.spec().clone());
        meta.convention = Some(self.dataset.convention);
        meta.data_mean = Some(self.dataset.mean as f64);
        meta.factors = vec![self.cfg.factor];
        let mut ck = Checkpoint::new(meta);
        ck.insert_params("", &self.model.params)?;
        ck.insert_adam("", &self.model.params, &self.adam)?;
        Ok(ck)
    }

    pub fn resume(ck: &Checkpoint, dataset: Dataset, cfg: SuperresConfig) -> Result<SuperresTrainer> {
        if ck.meta.kind != "superres" {
            return Err(Error::Format(format!(
                "expected a superres checkpoint, found kind {:?}",
                ck.meta.kind
            )));
        }
        let spec = ck
            .meta
            .descriptor
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no descriptor spec".into()))?;
        let model = DescriptorModel::new(spec, ck.meta.seed)?;
        let mut out = SuperresTrainer::new(model, dataset, cfg, ck.meta.seed)?;
        ck.load_params("", &mut out.model.params)?;
        ck.load_adam("", &out.model.params, &mut out.adam)?;
        out.iteration = ck.meta.iteration;
        Ok(out)
    }
}

/// Upscale one low-resolution grid by `factor` under a trained model:
/// block-replicate, then run `cfg.steps` projected Langevin updates. The
/// output's block means equal the input to float precision; with `factor`
/// = 1 the projection removes every update and the input comes back exactly.
pub fn superres(
    model: &DescriptorModel,
    low: &VoxelGrid,
    factor: usize,
    cfg: &LangevinConfig,
) -> Result<VoxelGrid> {
    cfg.validate()?;
    let scaler = GridScaler::new(factor)?;
    let high = scaler.upscale(low);
    if high.extents() != model.extents() {
        return Err(Error::Shape(format!(
            "low-res extents {:?} × factor {} give {:?}, but the model wants {:?}",
            low.extents(),
            factor,
            high.extents(),
            model.extents()
        )));
    }
    let mut batch = VoxelBatch::from_grids(&[high])?;
    let mut rng = derive_rng(cfg.rng_seed, "superres", 0, 0);
    for _ in 0..cfg.steps {
        projected_step(model, &mut batch, &scaler, cfg, &mut rng)?;
    }
    Ok(batch.grid(0))
}
