//! Training on deliberately corrupted data, and the recovery operation
//! itself.
//!
//! Each training example is damaged by overwriting a fraction `rho` of its
//! voxels with Gaussian noise. The sampler then runs *conditionally*: the
//! intact voxels are clamped to their observed values and only the corrupted
//! ones evolve, so the model learns to explain missing structure from
//! context. The parameter update is the usual maximum-likelihood rule with
//! the conditionally recovered grids as the synthesized batch.
//!
//! Masks are derived from `(seed, epoch, example)` — not stored — so a
//! resumed run corrupts exactly the same voxels an uninterrupted one would.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::{corrupt, CorruptionMask, Dataset, VoxelBatch, VoxelGrid};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::langevin::{conditional_step, LangevinConfig};
use crate::nn::{adam_step, AdamState};
use crate::rng::derive_rng;

use super::{
    epoch_of, minibatch_indices, mle_grad, negate_grads, tag_divergence, ChainInit,
    DiagnosticsSink, EnergyPair, IterationDiagnostics, MleGrad, TrainConfig,
};

/// When each example's corruption mask is redrawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRefresh {
    /// New masks every epoch (the default): the model sees each shape damaged
    /// in many different ways over a run.
    PerEpoch,
    /// One fixed mask per example for the whole run.
    Once,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    pub train: TrainConfig,
    /// Fraction of voxels corrupted in each training example.
    pub rho: f32,
    /// Standard deviation of the Gaussian noise written into corrupted
    /// voxels (model-space values).
    pub fill_std: f32,
    pub mask_refresh: MaskRefresh,
}

impl Default for RecoveryConfig {
    fn default() -> RecoveryConfig {
        RecoveryConfig {
            train: TrainConfig {
                chain_init: ChainInit::Data,
                ..TrainConfig::default()
            },
            rho: 0.7,
            fill_std: 0.5,
            mask_refresh: MaskRefresh::PerEpoch,
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.rho) || !self.rho.is_finite() {
            return Err(Error::Config(format!(
                "corruption fraction rho must be in [0, 1], got {}",
                self.rho
            )));
        }
        if !self.fill_std.is_finite() || self.fill_std < 0.0 {
            return Err(Error::Config(format!(
                "fill_std must be finite and non-negative, got {}",
                self.fill_std
            )));
        }
        if self.train.chain_init != ChainInit::Data {
            return Err(Error::Config(
                "recovery training requires data-init chains (they start from the corrupted batch)"
                    .into(),
            ));
        }
        Ok(())
    }
}

pub struct RecoveryTrainer {
    model: DescriptorModel,
    dataset: Dataset,
    cfg: RecoveryConfig,
    seed: u64,
    iteration: u64,
    adam: AdamState,
}

impl RecoveryTrainer {
    pub fn new(
        model: DescriptorModel,
        dataset: Dataset,
        cfg: RecoveryConfig,
        seed: u64,
    ) -> Result<RecoveryTrainer> {
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
        let adam = AdamState::for_params(&model.params);
        Ok(RecoveryTrainer {
            model,
            dataset,
            cfg,
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

    /// The corrupted form of dataset example `index` as iteration `t` sees
    /// it. Pure in all arguments, which is what makes resuming exact.
    fn corrupted_example(&self, index: usize, t: u64) -> Result<(VoxelGrid, CorruptionMask)> {
        let epoch = match self.cfg.mask_refresh {
            MaskRefresh::PerEpoch => epoch_of(self.dataset.len(), self.cfg.train.batch_size, t),
            MaskRefresh::Once => 0,
        };
        corrupt(
            &self.dataset.grids[index],
            self.cfg.rho,
            self.cfg.fill_std,
            &mut derive_rng(self.seed, "corrupt", epoch, index as u64),
        )
    }

    pub fn step(&mut self) -> Result<IterationDiagnostics> {
        let t = self.iteration;
        let indices =
            minibatch_indices(self.dataset.len(), self.cfg.train.batch_size, self.seed, t);
        let observed = self.dataset.batch(&indices)?;

        let mut corrupted = Vec::with_capacity(indices.len());
        let mut masks = Vec::with_capacity(indices.len());
        for &i in &indices {
            let (g, m) = self.corrupted_example(i, t)?;
            corrupted.push(g);
            masks.push(m);
        }
        let mut chains = VoxelBatch::from_grids(&corrupted)?;

        let step_cfg = self.cfg.train.langevin_at(t);
        let mut rng = derive_rng(self.seed, "langevin-noise", t, 0);
        for _ in 0..step_cfg.steps {
            conditional_step(&self.model, &mut chains, &masks, &step_cfg, &mut rng)
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
        let mut meta = CheckpointMeta::new("recovery", self.seed);
        meta.iteration = self.iteration;
        meta.descriptor = Some(self.model.spec().clone());
        meta.convention = Some(self.dataset.convention);
        meta.data_mean = Some(self.dataset.mean as f64);
        let mut ck = Checkpoint::new(meta);
        ck.insert_params("", &self.model.params)?;
        ck.insert_adam("", &self.model.params, &self.adam)?;
        Ok(ck)
    }

    pub fn resume(ck: &Checkpoint, dataset: Dataset, cfg: RecoveryConfig) -> Result<RecoveryTrainer> {
        if ck.meta.kind != "recovery" {
            return Err(Error::Format(format!(
                "expected a recovery checkpoint, found kind {:?}",
                ck.meta.kind
            )));
        }
        let spec = ck
            .meta
            .descriptor
            .clone()
            .ok_or_else(|| Error::Format("checkpoint carries no descriptor spec".into()))?;
        let model = DescriptorModel::new(spec, ck.meta.seed)?;
        let mut out = RecoveryTrainer::new(model, dataset, cfg, ck.meta.seed)?;
        ck.load_params("", &mut out.model.params)?;
        ck.load_adam("", &out.model.params, &mut out.adam)?;
        out.iteration = ck.meta.iteration;
        Ok(out)
    }
}

/// Fill in the masked voxels of one corrupted grid by running `cfg.steps`
/// conditional Langevin updates under a trained model. Voxels outside the
/// mask are returned bit-identical to the input; an all-false mask therefore
/// returns the input unchanged.
pub fn recover(
    model: &DescriptorModel,
    corrupted: &VoxelGrid,
    mask: &CorruptionMask,
    cfg: &LangevinConfig,
) -> Result<VoxelGrid> {
    cfg.validate()?;
    let mut batch = VoxelBatch::from_grids(std::slice::from_ref(corrupted))?;
    let masks = [mask.clone()];
    let mut rng = derive_rng(cfg.rng_seed, "recover", 0, 0);
    for _ in 0..cfg.steps {
        conditional_step(model, &mut batch, &masks, cfg, &mut rng)?;
    }
    Ok(batch.grid(0))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{cross_dataset, cross_grid, tiny_model_8};
    use super::*;

    fn desk_cfg() -> RecoveryConfig {
        RecoveryConfig {
            train: TrainConfig {
                batch_size: 4,
                chain_count: 4,
                chain_init: ChainInit::Data,
                langevin: LangevinConfig {
                    steps: 10,
                    ..LangevinConfig::default()
                },
                ..TrainConfig::default()
            },
            rho: 0.5,
            ..RecoveryConfig::default()
        }
    }

    fn param_bits(model: &DescriptorModel) -> Vec<u32> {
        model
            .params
            .entries()
            .iter()
            .flat_map(|e| e.tensor.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn zero_corruption_freezes_chains_and_parameters() {
        // rho = 0 corrupts nothing: the conditional sampler clamps every
        // voxel, the synthesized batch equals the observed batch, and the
        // maximum-likelihood gradient vanishes identically.
        let model = tiny_model_8(1);
        let fresh = param_bits(&model);
        let mut cfg = desk_cfg();
        cfg.rho = 0.0;
        let mut tr = RecoveryTrainer::new(model, cross_dataset([8, 8, 8], 4), cfg, 3).unwrap();
        let mut records = Vec::new();
        tr.run(3, &mut |d| {
            records.push(d.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(param_bits(tr.model()), fresh);
        for d in &records {
            assert_eq!(d.grad_norm, 0.0);
            assert!(d.value.abs() < 1e-12);
        }
    }

    #[test]
    fn full_corruption_masks_every_voxel() {
        let mut tr = RecoveryTrainer::new(
            tiny_model_8(2),
            cross_dataset([8, 8, 8], 4),
            RecoveryConfig {
                rho: 1.0,
                ..desk_cfg()
            },
            5,
        )
        .unwrap();
        let (_, mask) = tr.corrupted_example(0, 0).unwrap();
        assert_eq!(mask.corrupted_count(), 512);
        tr.step().unwrap();
    }

    #[test]
    fn masks_refresh_per_epoch_but_not_within_one() {
        let tr = RecoveryTrainer::new(
            tiny_model_8(3),
            cross_dataset([8, 8, 8], 8),
            desk_cfg(),
            7,
        )
        .unwrap();
        // batch 4, dataset 8 -> 2 iterations per epoch.
        let (g0, m0) = tr.corrupted_example(5, 0).unwrap();
        let (g1, m1) = tr.corrupted_example(5, 1).unwrap();
        assert_eq!(g0.values(), g1.values());
        assert_eq!(m0.as_slice(), m1.as_slice());
        let (_, m2) = tr.corrupted_example(5, 2).unwrap();
        assert_ne!(m0.as_slice(), m2.as_slice(), "epoch 1 should redraw the mask");

        let once = RecoveryTrainer::new(
            tiny_model_8(3),
            cross_dataset([8, 8, 8], 8),
            RecoveryConfig {
                mask_refresh: MaskRefresh::Once,
                ..desk_cfg()
            },
            7,
        )
        .unwrap();
        let (_, a) = once.corrupted_example(5, 0).unwrap();
        let (_, b) = once.corrupted_example(5, 1000).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn recover_preserves_unmasked_voxels_and_improves_masked_ones() {
        // Train briefly on the cross, then damage it and recover. The clamped
        // voxels must come back bit-identical; the free ones should move
        // toward the data (lower voxel error than the corrupted input).
        let mut tr = RecoveryTrainer::new(
            tiny_model_8(4),
            cross_dataset([8, 8, 8], 6),
            desk_cfg(),
            11,
        )
        .unwrap();
        tr.run(60, &mut |_| Ok(())).unwrap();

        let clean = cross_grid([8, 8, 8]);
        let (damaged, mask) =
            corrupt(&clean, 0.5, 0.5, &mut derive_rng(123, "test-corrupt", 0, 0)).unwrap();
        let cfg = LangevinConfig {
            steps: 60,
            noise_enabled: false,
            rng_seed: 9,
            ..LangevinConfig::default()
        };
        let restored = recover(tr.model(), &damaged, &mask, &cfg).unwrap();

        let err = |g: &VoxelGrid| -> f64 {
            g.values()
                .iter()
                .zip(clean.values())
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
        };
        for (i, &m) in mask.as_slice().iter().enumerate() {
            if !m {
                assert_eq!(
                    restored.values()[i].to_bits(),
                    damaged.values()[i].to_bits(),
                    "clamped voxel {i} moved"
                );
            }
        }
        assert!(
            err(&restored) < err(&damaged),
            "recovery error {} not below corrupted input's {}",
            err(&restored),
            err(&damaged)
        );
    }

    #[test]
    fn recover_with_empty_mask_returns_input_unchanged() {
        let model = tiny_model_8(5);
        let g = cross_grid([8, 8, 8]);
        let mask = CorruptionMask::new([8, 8, 8], vec![false; 512]).unwrap();
        let out = recover(&model, &g, &mask, &LangevinConfig::default()).unwrap();
        let bits = |v: &VoxelGrid| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out), bits(&g));
    }

    #[test]
    fn recover_with_zero_steps_returns_input_unchanged() {
        let model = tiny_model_8(6);
        let g = cross_grid([8, 8, 8]);
        let mask = CorruptionMask::new([8, 8, 8], vec![true; 512]).unwrap();
        let cfg = LangevinConfig {
            steps: 0,
            ..LangevinConfig::default()
        };
        let out = recover(&model, &g, &mask, &cfg).unwrap();
        let bits = |v: &VoxelGrid| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&out), bits(&g));
    }

    #[test]
    fn resume_reproduces_uninterrupted_run_bit_for_bit() {
        let cfg = desk_cfg();
        let data = cross_dataset([8, 8, 8], 4);

        let mut full =
            RecoveryTrainer::new(tiny_model_8(7), data.clone(), cfg.clone(), 19).unwrap();
        let mut full_records = Vec::new();
        full.run(6, &mut |d| {
            full_records.push(d.clone());
            Ok(())
        })
        .unwrap();

        let mut head =
            RecoveryTrainer::new(tiny_model_8(7), data.clone(), cfg.clone(), 19).unwrap();
        head.run(3, &mut |_| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.vebm");
        head.checkpoint().unwrap().save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let mut tail = RecoveryTrainer::resume(&ck, data, cfg).unwrap();
        assert_eq!(tail.iteration(), 3);
        let mut tail_records = Vec::new();
        tail.run(3, &mut |d| {
            tail_records.push(d.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(param_bits(full.model()), param_bits(tail.model()));
        assert_eq!(&full_records[3..], &tail_records[..]);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = RecoveryConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.rho = 1.5;
        assert!(cfg.validate().is_err());
        cfg = RecoveryConfig::default();
        cfg.fill_std = -1.0;
        assert!(cfg.validate().is_err());
        cfg = RecoveryConfig::default();
        cfg.train.chain_init = ChainInit::PersistentNoise;
        assert!(cfg.validate().is_err());
    }
}
