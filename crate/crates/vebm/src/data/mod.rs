//! Voxel grids, datasets, and corruption.
//!
//! A [`VoxelGrid`] is a dense `[depth, height, width]` block of f32 values,
//! x fastest, z pointing "up" by the conventions of the procedural shapes. A
//! [`VoxelBatch`] is a stack of same-extent grids, convertible to the
//! `[batch, 1, d, h, w]` tensors the models consume.
//!
//! Datasets move between three value conventions:
//! - `Binary01` — raw occupancy, exactly 0.0 or 1.0 (what files store);
//! - `MeanSubtracted` — the scalar dataset mean removed, the space the
//!   descriptor models operate in;
//! - `SignedUnit` — rescaled to [-1, 1] for cooperative training, matching
//!   the generator's tanh output range.
//!
//! [`postprocess`] maps model-space values back to binary occupancy; ties at
//! the 0.5 threshold count as occupied.

mod io;
mod mesh;
mod procedural;

pub use io::{export_obj, load_dataset, load_grid, save_dataset, save_grid, write_obj, ObjStats};
pub use mesh::{load_mesh_obj, normalize_mesh, voxelize_mesh, Triangle, VoxelizeReport};
pub use procedural::{gen_procedural, gen_procedural_mixed, ProcCategory};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueConvention {
    Binary01,
    MeanSubtracted,
    SignedUnit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    extents: [usize; 3],
    values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(extents: [usize; 3]) -> VoxelGrid {
        VoxelGrid {
            extents,
            values: vec![0.0; extents[0] * extents[1] * extents[2]],
        }
    }

    pub fn from_values(extents: [usize; 3], values: Vec<f32>) -> Result<VoxelGrid> {
        if values.len() != extents[0] * extents[1] * extents[2] {
            return Err(Error::Shape(format!(
                "grid extents {:?} want {} values, got {}",
                extents,
                extents[0] * extents[1] * extents[2],
                values.len()
            )));
        }
        Ok(VoxelGrid { extents, values })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.extents[1] + y) * self.extents[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.values[self.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let i = self.index(z, y, x);
        self.values[i] = v;
    }

    /// Fill the axis-aligned box `[z0, z1) × [y0, y1) × [x0, x1)`, clamped to
    /// the grid.
    pub fn fill_box(&mut self, z: (usize, usize), y: (usize, usize), x: (usize, usize), v: f32) {
        let [d, h, w] = self.extents;
        for zz in z.0.min(d)..z.1.min(d) {
            for yy in y.0.min(h)..y.1.min(h) {
                for xx in x.0.min(w)..x.1.min(w) {
                    let i = self.index(zz, yy, xx);
                    self.values[i] = v;
                }
            }
        }
    }

    /// Mean voxel value (occupancy fraction for binary grids).
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> VoxelGrid {
        VoxelGrid {
            extents: self.extents,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A stack of same-extent grids; the chain pool, a mini-batch, a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelBatch {
    count: usize,
    extents: [usize; 3],
    values: Vec<f32>,
}

impl VoxelBatch {
    pub fn zeros(count: usize, extents: [usize; 3]) -> VoxelBatch {
        VoxelBatch {
            count,
            extents,
            values: vec![0.0; count * extents[0] * extents[1] * extents[2]],
        }
    }

    pub fn from_grids(grids: &[VoxelGrid]) -> Result<VoxelBatch> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Data("empty grid list".into()))?;
        let extents = first.extents();
        let mut values = Vec::with_capacity(grids.len() * first.numel());
        for g in grids {
            if g.extents() != extents {
                return Err(Error::Shape(format!(
                    "mixed extents in batch: {:?} vs {:?}",
                    g.extents(),
                    extents
                )));
            }
            values.extend_from_slice(g.values());
        }
        Ok(VoxelBatch {
            count: grids.len(),
            extents,
            values,
        })
    }

    /// Gaussian-noise batch, the reference-distribution initialization for
    /// sampling chains.
    pub fn randn<R: Rng>(count: usize, extents: [usize; 3], std: f32, rng: &mut R) -> VoxelBatch {
        let n = count * extents[0] * extents[1] * extents[2];
        VoxelBatch {
            count,
            extents,
            values: (0..n)
                .map(|_| {
                    let z: f32 = rng.sample(StandardNormal);
                    z * std
                })
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn per_grid(&self) -> usize {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn grid_values(&self, i: usize) -> &[f32] {
        let n = self.per_grid();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn grid(&self, i: usize) -> VoxelGrid {
        VoxelGrid {
            extents: self.extents,
            values: self.grid_values(i).to_vec(),
        }
    }

    pub fn grids(&self) -> Vec<VoxelGrid> {
        (0..self.count).map(|i| self.grid(i)).collect()
    }

    /// View as the `[batch, 1, d, h, w]` tensor the models take.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.extents;
        Tensor::from_vec(&[self.count, 1, d, h, w], self.values.clone())
            .expect("batch layout matches tensor shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<VoxelBatch> {
        let s = t.shape();
        if s.len() != 5 || s[1] != 1 {
            return Err(Error::Shape(format!(
                "voxel batch tensor must be [n, 1, d, h, w], got {s:?}"
            )));
        }
        Ok(VoxelBatch {
            count: s[0],
            extents: [s[2], s[3], s[4]],
            values: t.data().to_vec(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> VoxelBatch {
        VoxelBatch {
            count: self.count,
            extents: self.extents,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Voxels marked `true` are corrupted: unknown to the model and free to evolve
/// during conditional sampling.
#[derive(Clone, Debug)]
pub struct CorruptionMask {
    extents: [usize; 3],
    mask: Vec<bool>,
}

impl CorruptionMask {
    pub fn new(extents: [usize; 3], mask: Vec<bool>) -> Result<CorruptionMask> {
        if mask.len() != extents[0] * extents[1] * extents[2] {
            return Err(Error::Shape("mask length does not match extents".into()));
        }
        Ok(CorruptionMask { extents, mask })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn corrupted_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Replace exactly `round(rho * numel)` uniformly chosen voxels with i.i.d.
/// `N(0, fill_std²)` noise (model-space values). Returns the corrupted grid
/// and the mask of replaced voxels; unmasked voxels are bit-identical to the
/// input.
pub fn corrupt<R: Rng>(
    grid: &VoxelGrid,
    rho: f32,
    fill_std: f32,
    rng: &mut R,
) -> Result<(VoxelGrid, CorruptionMask)> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Data(format!(
            "corruption fraction must be in [0, 1], got {rho}"
        )));
    }
    let n = grid.numel();
    let k = ((rho as f64) * n as f64).round() as usize;
    // Partial Fisher-Yates: the first k slots end up holding a uniform
    // k-subset of indices.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut out = grid.clone();
    let mut mask = vec![false; n];
    for &i in &idx[..k.min(n)] {
        let z: f32 = rng.sample(StandardNormal);
        out.values_mut()[i] = z * fill_std;
        mask[i] = true;
    }
    Ok((out, CorruptionMask::new(grid.extents(), mask)?))
}

/// A labeled set of grids in one value convention.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub grids: Vec<VoxelGrid>,
    /// Index into `categories` per grid.
    pub labels: Vec<usize>,
    pub categories: Vec<String>,
    pub convention: ValueConvention,
    /// Scalar mean removed by preprocessing (0 until then).
    pub mean: f32,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn extents(&self) -> Result<[usize; 3]> {
        self.grids
            .first()
            .map(|g| g.extents())
            .ok_or_else(|| Error::Data("empty dataset".into()))
    }

    /// Subtract the scalar dataset mean, moving binary data into the space the
    /// descriptor models. The mean is computed over every voxel of every grid.
    pub fn preprocess(&self) -> Result<Dataset> {
        if self.convention != ValueConvention::Binary01 {
            return Err(Error::Data(format!(
                "preprocess expects binary data, got {:?}",
                self.convention
            )));
        }
        if self.is_empty() {
            return Err(Error::Data("preprocess on empty dataset".into()));
        }
        let total: f64 = self.grids.iter().map(|g| g.mean() * g.numel() as f64).sum();
        let count: usize = self.grids.iter().map(|g| g.numel()).sum();
        let mean = (total / count as f64) as f32;
        Ok(Dataset {
            grids: self.grids.iter().map(|g| g.map(|v| v - mean)).collect(),
            labels: self.labels.clone(),
            categories: self.categories.clone(),
            convention: ValueConvention::MeanSubtracted,
            mean,
        })
    }

    /// Rescale binary data to [-1, 1] for cooperative training.
    pub fn to_signed_unit(&self) -> Result<Dataset> {
        if self.convention != ValueConvention::Binary01 {
            return Err(Error::Data(format!(
                "to_signed_unit expects binary data, got {:?}",
                self.convention
            )));
        }
        Ok(Dataset {
            grids: self.grids.iter().map(|g| g.map(|v| 2.0 * v - 1.0)).collect(),
            labels: self.labels.clone(),
            categories: self.categories.clone(),
            convention: ValueConvention::SignedUnit,
            mean: 0.0,
        })
    }

    /// Batch of the grids at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<VoxelBatch> {
        let grids: Vec<VoxelGrid> = indices.iter().map(|&i| self.grids[i].clone()).collect();
        VoxelBatch::from_grids(&grids)
    }
}

/// Map a model-space grid back to binary occupancy: undo the convention's
/// shift, then threshold at 0.5 with ties counting as occupied.
pub fn postprocess(grid: &VoxelGrid, convention: ValueConvention, mean: f32) -> VoxelGrid {
    grid.map(|v| {
        let raw = match convention {
            ValueConvention::Binary01 => v,
            ValueConvention::MeanSubtracted => v + mean,
            ValueConvention::SignedUnit => (v + 1.0) * 0.5,
        };
        if raw >= 0.5 {
            1.0
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use proptest::prelude::*;

    #[test]
    fn postprocess_threshold_ties_go_to_one() {
        let g = VoxelGrid::from_values([1, 1, 3], vec![0.49, 0.5, 0.51]).unwrap();
        let b = postprocess(&g, ValueConvention::Binary01, 0.0);
        assert_eq!(b.values(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn postprocess_mean_subtracted_round_trip() {
        // Binary grid -> subtract mean -> postprocess restores it exactly.
        let g = VoxelGrid::from_values([1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mean = 0.5;
        let model_space = g.map(|v| v - mean);
        let back = postprocess(&model_space, ValueConvention::MeanSubtracted, mean);
        assert_eq!(back.values(), g.values());
    }

    #[test]
    fn preprocess_sets_mean_and_centers() {
        let ds = Dataset {
            grids: vec![
                VoxelGrid::from_values([1, 1, 2], vec![1.0, 0.0]).unwrap(),
                VoxelGrid::from_values([1, 1, 2], vec![1.0, 1.0]).unwrap(),
            ],
            labels: vec![0, 0],
            categories: vec!["a".into()],
            convention: ValueConvention::Binary01,
            mean: 0.0,
        };
        let p = ds.preprocess().unwrap();
        assert!((p.mean - 0.75).abs() < 1e-7);
        assert!((p.grids[0].values()[0] - 0.25).abs() < 1e-7);
        assert_eq!(p.convention, ValueConvention::MeanSubtracted);
        // Double preprocessing is rejected.
        assert!(p.preprocess().is_err());
    }

    #[test]
    fn corrupt_zero_fraction_is_identity() {
        let g = VoxelGrid::from_values([2, 2, 2], vec![1.0; 8]).unwrap();
        let (c, m) = corrupt(&g, 0.0, 0.5, &mut derive_rng(3, "c", 0, 0)).unwrap();
        assert_eq!(c, g);
        assert_eq!(m.corrupted_count(), 0);
    }

    #[test]
    fn corrupt_full_fraction_touches_everything() {
        let g = VoxelGrid::from_values([2, 2, 2], vec![1.0; 8]).unwrap();
        let (_, m) = corrupt(&g, 1.0, 0.5, &mut derive_rng(3, "c", 0, 0)).unwrap();
        assert_eq!(m.corrupted_count(), 8);
    }

    proptest! {
        #[test]
        fn corrupt_count_and_untouched_voxels(rho in 0.0f32..=1.0, seed in 0u64..1000) {
            let g = VoxelGrid::from_values([4, 4, 4], (0..64).map(|i| (i % 2) as f32).collect()).unwrap();
            let (c, m) = corrupt(&g, rho, 0.5, &mut derive_rng(seed, "c", 0, 0)).unwrap();
            let expect = ((rho as f64) * 64.0).round() as usize;
            prop_assert_eq!(m.corrupted_count(), expect);
            for (i, &masked) in m.as_slice().iter().enumerate() {
                if !masked {
                    prop_assert_eq!(c.values()[i].to_bits(), g.values()[i].to_bits());
                }
            }
        }
    }

    #[test]
    fn batch_tensor_round_trip() {
        let a = VoxelGrid::from_values([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = VoxelGrid::from_values([1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let batch = VoxelBatch::from_grids(&[a.clone(), b]).unwrap();
        let t = batch.to_tensor();
        assert_eq!(t.shape(), &[2, 1, 1, 2, 2]);
        let back = VoxelBatch::from_tensor(&t).unwrap();
        assert_eq!(back, batch);
        assert_eq!(back.grid(0), a);
    }

    #[test]
    fn mixed_extents_rejected() {
        let a = VoxelGrid::zeros([2, 2, 2]);
        let b = VoxelGrid::zeros([2, 2, 3]);
        assert!(VoxelBatch::from_grids(&[a, b]).is_err());
    }
}
