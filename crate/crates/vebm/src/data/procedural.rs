//! Seeded procedural furniture shapes for smoke tests and demos.
//!
//! Three block-built categories — table, chair, sofa — assembled from
//! axis-aligned cuboids with seeded size and position jitter. Proportions are
//! fractions of the grid edge, so the same category reads correctly at 8³ or
//! 64³. Grid axes are `[z, y, x]` with z up; every generated shape stands on
//! the z = 0 floor.

use super::{Dataset, ValueConvention, VoxelGrid};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcCategory {
    BlockTable,
    BlockChair,
    BlockSofa,
}

impl ProcCategory {
    pub fn name(self) -> &'static str {
        match self {
            ProcCategory::BlockTable => "block-table",
            ProcCategory::BlockChair => "block-chair",
            ProcCategory::BlockSofa => "block-sofa",
        }
    }

    pub fn parse(s: &str) -> Result<ProcCategory> {
        match s {
            "block-table" => Ok(ProcCategory::BlockTable),
            "block-chair" => Ok(ProcCategory::BlockChair),
            "block-sofa" => Ok(ProcCategory::BlockSofa),
            _ => Err(Error::Data(format!(
                "unknown procedural category {s:?} (want block-table, block-chair, or block-sofa)"
            ))),
        }
    }
}

/// `count` binary grids of one category. Grid `i` depends only on
/// `(seed, category, i)`, so extending a dataset never reshuffles the shapes
/// already in it.
pub fn gen_procedural(
    category: ProcCategory,
    count: usize,
    extents: [usize; 3],
    seed: u64,
) -> Result<Vec<VoxelGrid>> {
    let min = extents.iter().copied().min().unwrap_or(0);
    if min < 8 {
        return Err(Error::Data(format!(
            "procedural shapes need extents of at least 8, got {extents:?}"
        )));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = derive_rng(seed, category.name(), i as u64, 0);
            match category {
                ProcCategory::BlockTable => table(extents, &mut rng),
                ProcCategory::BlockChair => chair(extents, &mut rng),
                ProcCategory::BlockSofa => sofa(extents, &mut rng),
            }
        })
        .collect())
}

/// A labeled dataset with `per_category` grids of each listed category.
pub fn gen_procedural_mixed(
    categories: &[ProcCategory],
    per_category: usize,
    extents: [usize; 3],
    seed: u64,
) -> Result<Dataset> {
    let mut grids = Vec::new();
    let mut labels = Vec::new();
    for (li, &cat) in categories.iter().enumerate() {
        for g in gen_procedural(cat, per_category, extents, seed)? {
            grids.push(g);
            labels.push(li);
        }
    }
    Ok(Dataset {
        grids,
        labels,
        categories: categories.iter().map(|c| c.name().to_string()).collect(),
        convention: ValueConvention::Binary01,
        mean: 0.0,
    })
}

/// Round a fraction of the edge length to voxels, at least 1.
fn frac(edge: usize, f: f32) -> usize {
    ((edge as f32 * f).round() as usize).max(1)
}

fn table(extents: [usize; 3], rng: &mut impl Rng) -> VoxelGrid {
    let [d, h, w] = extents;
    let mut g = VoxelGrid::zeros(extents);

    // Footprint: 70-95% of the floor, centered with jitter.
    let fw = frac(w, rng.gen_range(0.70..0.95)).min(w);
    let fh = frac(h, rng.gen_range(0.70..0.95)).min(h);
    let x0 = rng.gen_range(0..=(w - fw));
    let y0 = rng.gen_range(0..=(h - fh));
    let x1 = x0 + fw;
    let y1 = y0 + fh;

    // Legs up to 55-75% of the height, then a thin top slab.
    let leg_top = frac(d, rng.gen_range(0.55..0.75));
    let top_thick = frac(d, rng.gen_range(0.08..0.16));
    let leg = frac(w.min(h), rng.gen_range(0.08..0.15));

    for (ly, lx) in [(y0, x0), (y0, x1 - leg), (y1 - leg, x0), (y1 - leg, x1 - leg)] {
        g.fill_box((0, leg_top), (ly, ly + leg), (lx, lx + leg), 1.0);
    }
    g.fill_box((leg_top, (leg_top + top_thick).min(d)), (y0, y1), (x0, x1), 1.0);
    g
}

fn chair(extents: [usize; 3], rng: &mut impl Rng) -> VoxelGrid {
    let [d, h, w] = extents;
    let mut g = VoxelGrid::zeros(extents);

    // Narrower footprint than a table; seat at mid height, backrest behind.
    let fw = frac(w, rng.gen_range(0.40..0.60));
    let fh = frac(h, rng.gen_range(0.40..0.60));
    let x0 = (w - fw) / 2;
    let y0 = (h - fh) / 2;
    let x1 = x0 + fw;
    let y1 = y0 + fh;

    let seat_z = frac(d, rng.gen_range(0.35..0.50));
    let seat_thick = frac(d, rng.gen_range(0.08..0.15));
    let back_top = frac(d, rng.gen_range(0.80..0.98));
    let back_thick = frac(h, rng.gen_range(0.08..0.15));
    let leg = frac(w.min(h), rng.gen_range(0.08..0.16));

    for (ly, lx) in [(y0, x0), (y0, x1 - leg), (y1 - leg, x0), (y1 - leg, x1 - leg)] {
        g.fill_box((0, seat_z), (ly, ly + leg), (lx, lx + leg), 1.0);
    }
    g.fill_box((seat_z, (seat_z + seat_thick).min(d)), (y0, y1), (x0, x1), 1.0);
    // Backrest rises along the y0 edge.
    g.fill_box((seat_z, back_top), (y0, (y0 + back_thick).min(y1)), (x0, x1), 1.0);
    g
}

fn sofa(extents: [usize; 3], rng: &mut impl Rng) -> VoxelGrid {
    let [d, h, w] = extents;
    let mut g = VoxelGrid::zeros(extents);

    // Wide solid base: sofas are the densest category by construction.
    let fw = frac(w, rng.gen_range(0.80..0.98)).min(w);
    let fh = frac(h, rng.gen_range(0.55..0.75)).min(h);
    let x0 = (w - fw) / 2;
    let y0 = (h - fh) / 2;
    let x1 = x0 + fw;
    let y1 = y0 + fh;

    let base_top = frac(d, rng.gen_range(0.35..0.50));
    let back_top = frac(d, rng.gen_range(0.65..0.85));
    let back_thick = frac(h, rng.gen_range(0.20..0.35));
    let arm_top = frac(d, rng.gen_range(0.50..0.65));
    let arm_thick = frac(w, rng.gen_range(0.10..0.18));

    g.fill_box((0, base_top), (y0, y1), (x0, x1), 1.0);
    g.fill_box((base_top, back_top), (y0, (y0 + back_thick).min(y1)), (x0, x1), 1.0);
    g.fill_box((base_top, arm_top), (y0, y1), (x0, (x0 + arm_thick).min(x1)), 1.0);
    g.fill_box((base_top, arm_top), (y0, y1), (x1.saturating_sub(arm_thick), x1), 1.0);
    g
}
