//! Resolution changes: block-mean downscaling, nearest upscaling, pyramids.
//!
//! [`GridScaler`] pairs the two maps used everywhere resolution changes
//! hands: `downscale` averages each `k³` block to one voxel, `upscale`
//! replicates each voxel into a `k³` block. They are adjoint up to a constant
//! and satisfy `downscale(upscale(x)) == x` bit-exactly (block means run in
//! f64, so averaging `k³` copies of a value returns it unchanged). That
//! identity is what makes the super-resolution projection and the pyramid
//! consistency checks exact rather than approximate.
//!
//! [`HistogramModel`] is the scalar density used for the 1×1×1 root of a
//! pyramid, where a network has nothing to convolve over.

use crate::data::{VoxelBatch, VoxelGrid};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug)]
pub struct GridScaler {
    factor: usize,
}

impl GridScaler {
    pub fn new(factor: usize) -> Result<GridScaler> {
        if factor == 0 {
            return Err(Error::Data("scale factor must be positive".into()));
        }
        Ok(GridScaler { factor })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    fn check_divisible(&self, extents: [usize; 3]) -> Result<[usize; 3]> {
        let k = self.factor;
        if extents.iter().any(|&e| e % k != 0 || e == 0) {
            return Err(Error::Shape(format!(
                "extents {extents:?} not divisible by scale factor {k}"
            )));
        }
        Ok([extents[0] / k, extents[1] / k, extents[2] / k])
    }

    /// Average each `k³` block down to one voxel.
    pub fn downscale(&self, grid: &VoxelGrid) -> Result<VoxelGrid> {
        let out_ext = self.check_divisible(grid.extents())?;
        let mut out = VoxelGrid::zeros(out_ext);
        self.downscale_into(grid.values(), grid.extents(), out.values_mut());
        Ok(out)
    }

    /// Replicate each voxel into a `k³` block.
    pub fn upscale(&self, grid: &VoxelGrid) -> VoxelGrid {
        let [d, h, w] = grid.extents();
        let k = self.factor;
        let mut out = VoxelGrid::zeros([d * k, h * k, w * k]);
        self.upscale_into(grid.values(), grid.extents(), out.values_mut());
        out
    }

    pub fn downscale_batch(&self, batch: &VoxelBatch) -> Result<VoxelBatch> {
        let out_ext = self.check_divisible(batch.extents())?;
        let mut out = VoxelBatch::zeros(batch.count(), out_ext);
        let per_in = batch.per_grid();
        let per_out = out.per_grid();
        for i in 0..batch.count() {
            let src = &batch.values()[i * per_in..(i + 1) * per_in];
            let dst = &mut out.values_mut()[i * per_out..(i + 1) * per_out];
            self.downscale_into(src, batch.extents(), dst);
        }
        Ok(out)
    }

    pub fn upscale_batch(&self, batch: &VoxelBatch) -> VoxelBatch {
        let [d, h, w] = batch.extents();
        let k = self.factor;
        let mut out = VoxelBatch::zeros(batch.count(), [d * k, h * k, w * k]);
        let per_in = batch.per_grid();
        let per_out = out.per_grid();
        for i in 0..batch.count() {
            let src = &batch.values()[i * per_in..(i + 1) * per_in];
            let dst = &mut out.values_mut()[i * per_out..(i + 1) * per_out];
            self.upscale_into(src, batch.extents(), dst);
        }
        out
    }

    fn downscale_into(&self, src: &[f32], src_ext: [usize; 3], dst: &mut [f32]) {
        let [d, h, w] = src_ext;
        let k = self.factor;
        let (od, oh, ow) = (d / k, h / k, w / k);
        let inv = 1.0 / (k * k * k) as f64;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for dz in 0..k {
                        for dy in 0..k {
                            for dx in 0..k {
                                let z = oz * k + dz;
                                let y = oy * k + dy;
                                let x = ox * k + dx;
                                acc += src[(z * h + y) * w + x] as f64;
                            }
                        }
                    }
                    dst[(oz * oh + oy) * ow + ox] = (acc * inv) as f32;
                }
            }
        }
    }

    fn upscale_into(&self, src: &[f32], src_ext: [usize; 3], dst: &mut [f32]) {
        let [d, h, w] = src_ext;
        let k = self.factor;
        let (oh, ow) = (h * k, w * k);
        for z in 0..d * k {
            for y in 0..oh {
                for x in 0..ow {
                    dst[(z * oh + y) * ow + x] = src[((z / k) * h + y / k) * w + x / k];
                }
            }
        }
    }
}

/// Repeatedly block-average the finest grid down to 1×1×1, coarse first in
/// the result. `factors[s]` is the upscale factor from level `s` to `s + 1`,
/// so their product must equal the (cubic) finest extent.
pub fn build_pyramid(finest: &VoxelGrid, factors: &[usize]) -> Result<Vec<VoxelGrid>> {
    let [d, h, w] = finest.extents();
    if d != h || h != w {
        return Err(Error::Shape(format!(
            "pyramid needs a cubic grid, got {:?}",
            finest.extents()
        )));
    }
    let product: usize = factors.iter().product();
    if product != d || factors.is_empty() {
        return Err(Error::Shape(format!(
            "scale factors {factors:?} multiply to {product}, but the grid edge is {d}; \
             the pyramid must bottom out at 1x1x1"
        )));
    }
    let mut levels = vec![finest.clone()];
    for &f in factors.iter().rev() {
        let coarser = GridScaler::new(f)?.downscale(levels.last().unwrap())?;
        levels.push(coarser);
    }
    levels.reverse();
    Ok(levels)
}

/// Uniform-bin histogram density over scalars, with CDF-inverse sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramModel {
    /// `bins + 1` ascending bin edges.
    pub edges: Vec<f32>,
    /// Probability mass per bin, summing to 1.
    pub probs: Vec<f32>,
}

impl HistogramModel {
    /// Fit `bins` uniform bins spanning the value range. A degenerate range
    /// (all values equal) widens to ±0.5 around the common value so the model
    /// stays samplable.
    pub fn fit(values: &[f32], bins: usize) -> Result<HistogramModel> {
        if values.is_empty() {
            return Err(Error::Data("histogram fit on no values".into()));
        }
        if bins == 0 {
            return Err(Error::Data("histogram needs at least one bin".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("histogram fit on non-finite values".into()));
        }
        let mut lo = values.iter().copied().fold(f32::INFINITY, f32::min);
        let mut hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f32;
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let edges = (0..=bins).map(|i| lo + i as f32 * width).collect();
        let n = values.len() as f32;
        Ok(HistogramModel {
            edges,
            probs: counts.iter().map(|&c| c as f32 / n).collect(),
        })
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    /// Draw a bin by mass, then a uniform point inside it.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f32 {
        let u: f32 = rng.gen();
        let mut cum = 0.0f32;
        let mut bin = self.bins() - 1;
        for (i, &p) in self.probs.iter().enumerate() {
            cum += p;
            if u < cum {
                bin = i;
                break;
            }
        }
        let lo = self.edges[bin];
        let hi = self.edges[bin + 1];
        lo + rng.gen::<f32>() * (hi - lo)
    }

    /// Density at `v` (zero outside the fitted range).
    pub fn density(&self, v: f32) -> f32 {
        let (lo, hi) = (self.edges[0], *self.edges.last().unwrap());
        if v < lo || v > hi {
            return 0.0;
        }
        let width = (hi - lo) / self.bins() as f32;
        let b = (((v - lo) / width) as usize).min(self.bins() - 1);
        self.probs[b] / width
    }
}
