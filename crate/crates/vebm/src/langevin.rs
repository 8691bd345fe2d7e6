//! Langevin samplers over voxel batches.
//!
//! One step moves each chain downhill on the energy
//! `E(Y) = ‖Y‖²/(2s²) − f(Y; θ)` and, when enabled, injects Gaussian noise:
//!
//! ```text
//! Y ← Y − (Δτ/2) · [Y/s² − ∂f/∂Y] + √Δτ · ε,    ε ~ N(0, I)
//! ```
//!
//! Three variants share that update. [`langevin_step`] applies it as-is.
//! [`conditional_step`] restores observed voxels afterwards, so the chain
//! explores only the corrupted region. [`projected_step`] removes the
//! component of the update visible to a block-mean downscaler, so the chain
//! moves in the null space of the coarsening operator and the low-resolution
//! content of the state never changes.
//!
//! Chains that blow up are reported as [`Error::Divergence`] with the step
//! index at which the bound was first exceeded, rather than letting further
//! arithmetic turn the state into NaNs.

use crate::data::{CorruptionMask, VoxelBatch};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::grid::GridScaler;
use crate::rng::derive_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A chain whose largest absolute voxel value exceeds this diverged.
pub const MAX_ABS: f32 = 1e3;

/// Step size, step count, and noise switch for one Langevin run.
///
/// `rng_seed` feeds [`run_chain`]; the single-step entry points take an
/// explicit generator instead so callers with persistent chains can keep one
/// noise stream across training iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LangevinConfig {
    /// Δτ in squared-voxel-value units. Must be positive and finite.
    pub step_size: f32,
    /// Number of update applications K. Zero is allowed and is the identity.
    pub steps: usize,
    /// Draw ε ~ N(0, I) when true; pure gradient descent when false.
    pub noise_enabled: bool,
    pub rng_seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> LangevinConfig {
        LangevinConfig {
            step_size: 0.01,
            steps: 20,
            noise_enabled: true,
            rng_seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "langevin step_size must be positive and finite, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// −(Δτ/2)·[Y/s² − ∂f/∂Y] + √Δτ·ε for the whole batch.
///
/// Noise is drawn voxel-by-voxel in storage order from `rng`, so a fixed seed
/// fixes the trajectory regardless of thread count.
fn raw_update<R: Rng>(
    model: &DescriptorModel,
    y: &VoxelBatch,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<VoxelBatch> {
    cfg.validate()?;
    let mut delta = model.hopfield_residual(y)?;
    let half = -0.5 * cfg.step_size;
    let sigma = cfg.step_size.sqrt();
    for d in delta.values_mut() {
        *d *= half;
        if cfg.noise_enabled {
            let eps: f32 = rng.sample(StandardNormal);
            *d += sigma * eps;
        }
    }
    Ok(delta)
}

/// Errors out if any voxel is non-finite or larger than [`MAX_ABS`] in
/// magnitude. `step` only labels the diagnostic.
fn check_divergence(y: &VoxelBatch, step: usize) -> Result<()> {
    let mut max_abs = 0.0f32;
    let mut finite = true;
    for &v in y.values() {
        if v.is_finite() {
            max_abs = max_abs.max(v.abs());
        } else {
            finite = false;
        }
    }
    if !finite {
        return Err(Error::Divergence {
            step,
            max_abs: f32::INFINITY,
        });
    }
    if max_abs > MAX_ABS {
        return Err(Error::Divergence { step, max_abs });
    }
    Ok(())
}

/// One unconditional Langevin update of every chain in `y`, in place.
///
/// A divergence detected here is reported with step index 0; loop drivers
/// such as [`run_chain`] rewrite the index to the failing iteration.
pub fn langevin_step<R: Rng>(
    model: &DescriptorModel,
    y: &mut VoxelBatch,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<()> {
    let delta = raw_update(model, y, cfg, rng)?;
    for (v, d) in y.values_mut().iter_mut().zip(delta.values()) {
        *v += d;
    }
    check_divergence(y, 0)
}

/// Runs `cfg.steps` sequential [`langevin_step`] applications, with the noise
/// stream derived from `cfg.rng_seed`. The final state stays in `y` so
/// persistent-chain callers can hand it back next iteration.
pub fn run_chain(model: &DescriptorModel, y: &mut VoxelBatch, cfg: &LangevinConfig) -> Result<()> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.rng_seed, "langevin-run", 0, 0);
    for k in 0..cfg.steps {
        langevin_step(model, y, cfg, &mut rng).map_err(|e| match e {
            Error::Divergence { max_abs, .. } => Error::Divergence { step: k, max_abs },
            other => other,
        })?;
    }
    Ok(())
}

/// One Langevin update with observed voxels pinned.
///
/// Each chain `i` carries its own mask; voxels where `masks[i]` is `false`
/// are restored to their entry values after the update, so the step samples
/// the corrupted region conditional on the rest. An all-`false` mask leaves
/// the chain untouched; an all-`true` mask reproduces [`langevin_step`]
/// bit for bit under the same seed.
pub fn conditional_step<R: Rng>(
    model: &DescriptorModel,
    y: &mut VoxelBatch,
    masks: &[CorruptionMask],
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<()> {
    if masks.len() != y.count() {
        return Err(Error::Shape(format!(
            "conditional step needs one mask per chain: {} masks for {} chains",
            masks.len(),
            y.count()
        )));
    }
    for m in masks {
        if m.extents() != y.extents() {
            return Err(Error::Shape(format!(
                "mask extents {:?} do not match chain extents {:?}",
                m.extents(),
                y.extents()
            )));
        }
    }
    let observed = y.clone();
    let delta = raw_update(model, y, cfg, rng)?;
    let per = y.per_grid();
    for (i, mask) in masks.iter().enumerate() {
        let src = &observed.values()[i * per..(i + 1) * per];
        let dst = &mut y.values_mut()[i * per..(i + 1) * per];
        let upd = &delta.values()[i * per..(i + 1) * per];
        for ((v, &d), (&o, &free)) in dst
            .iter_mut()
            .zip(upd)
            .zip(src.iter().zip(mask.as_slice()))
        {
            if free {
                *v += d;
            } else {
                *v = o;
            }
        }
    }
    check_divergence(y, 0)
}

/// Replaces `delta` with its component invisible to `scaler`'s block means:
/// `delta − upscale(downscale(delta))`.
pub(crate) fn project_out_low_res(delta: &mut VoxelBatch, scaler: &GridScaler) -> Result<()> {
    let coarse = scaler.downscale_batch(delta)?;
    let back = scaler.upscale_batch(&coarse);
    for (d, b) in delta.values_mut().iter_mut().zip(back.values()) {
        *d -= b;
    }
    Ok(())
}

/// One Langevin update restricted to the null space of the downscaler.
///
/// The raw update (noise included) is projected before being applied, so the
/// block means of the state are preserved: `downscale(Y')` equals
/// `downscale(Y)` up to rounding. With factor 1 the projection removes
/// everything and the state never moves.
pub fn projected_step<R: Rng>(
    model: &DescriptorModel,
    y: &mut VoxelBatch,
    scaler: &GridScaler,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<()> {
    let mut delta = raw_update(model, y, cfg, rng)?;
    project_out_low_res(&mut delta, scaler)?;
    for (v, d) in y.values_mut().iter_mut().zip(delta.values()) {
        *v += d;
    }
    check_divergence(y, 0)
}
