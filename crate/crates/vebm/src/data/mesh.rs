//! Triangle-mesh import and voxelization.
//!
//! [`load_mesh_obj`] reads the vertex/face subset of Wavefront OBJ (fan-
//! triangulating polygons); [`normalize_mesh`] fits a mesh into the unit cube
//! the voxelizer samples; [`voxelize_mesh`] rasterizes a watertight mesh to
//! binary occupancy by ray-crossing parity.
//!
//! Parity is computed independently along all three axes and combined by
//! majority vote, which papers over single-axis artifacts from imperfect
//! meshes. Rays that graze a triangle edge or vertex (a barycentric
//! coordinate within 1e-9 of the boundary) are retried with small
//! deterministic offsets until the hit pattern is unambiguous; rays still
//! degenerate after the retry budget are counted in the report and treated
//! as empty.

use super::VoxelGrid;
use crate::error::{Error, Result};
use std::path::Path;

/// Triangle vertices in `(x, y, z)` order, f64 for robust intersection math.
pub type Triangle = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VoxelizeReport {
    /// Voxels where the three axis votes were not unanimous.
    pub disagreements: usize,
    /// Rays that needed at least one perturbation retry.
    pub retried_rays: usize,
    /// Rays still degenerate after all retries (treated as all-outside).
    pub unresolved_rays: usize,
}

pub fn load_mesh_obj(path: impl AsRef<Path>) -> Result<Vec<Triangle>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut tris: Vec<Triangle> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        let ctx = |msg: String| Error::Format(format!("{}:{}: {msg}", path.display(), lineno + 1));
        match tok.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    *c = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| ctx("malformed vertex".into()))?;
                }
                verts.push(v);
            }
            Some("f") => {
                let idx: Vec<usize> = tok
                    .map(|t| {
                        // `f v`, `f v/vt`, `f v/vt/vn`, `f v//vn` all start
                        // with the vertex index; negatives count from the end.
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| ctx(format!("bad face index {t:?}")))?;
                        let resolved = if i < 0 {
                            verts.len() as i64 + i
                        } else {
                            i - 1
                        };
                        if resolved < 0 || resolved as usize >= verts.len() {
                            return Err(ctx(format!("face index {i} out of range")));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(ctx("face with fewer than 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    tris.push([verts[idx[0]], verts[idx[k]], verts[idx[k + 1]]]);
                }
            }
            _ => {} // comments, normals, groups, materials
        }
    }
    if tris.is_empty() {
        return Err(Error::Data(format!("{}: no faces found", path.display())));
    }
    Ok(tris)
}

/// Uniformly scale and translate the mesh so its bounding box fits centered
/// in `[margin, 1 - margin]³`.
pub fn normalize_mesh(tris: &mut [Triangle], margin: f64) -> Result<()> {
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::Data(format!("margin must be in [0, 0.5), got {margin}")));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for t in tris.iter() {
        for v in t {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
    }
    let span = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
    if !span.is_finite() || span <= 0.0 {
        return Err(Error::Data("degenerate mesh bounding box".into()));
    }
    let scale = (1.0 - 2.0 * margin) / span;
    for t in tris.iter_mut() {
        for v in t.iter_mut() {
            for a in 0..3 {
                let center = 0.5 * (lo[a] + hi[a]);
                v[a] = 0.5 + (v[a] - center) * scale;
            }
        }
    }
    Ok(())
}

const BARY_EPS: f64 = 1e-9;
const DET_EPS: f64 = 1e-12;
const MAX_RETRIES: usize = 6;

/// Hit of an axis-aligned ray against one triangle: the coordinate along the
/// ray axis, or a degeneracy flag when the hit grazes the triangle boundary.
enum Hit {
    None,
    At(f64),
    Degenerate,
}

/// Intersect the ray through `(u, v)` in the cross-axis plane, travelling
/// along `axis`, with a triangle. Möller-Trumbore specialised to unit axis
/// directions.
fn ray_hit(tri: &Triangle, axis: usize, u: f64, v: f64) -> Hit {
    let (au, av) = cross_axes(axis);
    let mut origin = [0.0; 3];
    origin[axis] = -1.0;
    origin[au] = u;
    origin[av] = v;
    let mut dir = [0.0; 3];
    dir[axis] = 1.0;

    let e1 = sub(tri[1], tri[0]);
    let e2 = sub(tri[2], tri[0]);
    let p = cross(dir, e2);
    let det = dot(e1, p);
    if det.abs() < DET_EPS {
        return Hit::None; // parallel; adjacent triangles own the boundary
    }
    let inv = 1.0 / det;
    let s = sub(origin, tri[0]);
    let bu = dot(s, p) * inv;
    let q = cross(s, e1);
    let bv = dot(dir, q) * inv;
    if bu < -BARY_EPS || bv < -BARY_EPS || bu + bv > 1.0 + BARY_EPS {
        return Hit::None;
    }
    if bu < BARY_EPS || bv < BARY_EPS || bu + bv > 1.0 - BARY_EPS {
        return Hit::Degenerate; // edge or vertex graze
    }
    let t = dot(e2, q) * inv;
    Hit::At(origin[axis] + t * dir[axis])
}

fn cross_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// All crossings of one ray, or `None` while any hit is degenerate.
fn ray_crossings(tris: &[Triangle], axis: usize, u: f64, v: f64) -> Option<Vec<f64>> {
    let mut ts = Vec::new();
    for tri in tris {
        match ray_hit(tri, axis, u, v) {
            Hit::None => {}
            Hit::At(t) => ts.push(t),
            Hit::Degenerate => return None,
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(ts)
}

/// Rasterize triangles living in `[0, 1]³` to an `r³` binary grid.
pub fn voxelize_mesh(tris: &[Triangle], resolution: usize) -> Result<(VoxelGrid, VoxelizeReport)> {
    if resolution == 0 {
        return Err(Error::Data("voxelize resolution must be positive".into()));
    }
    if tris.is_empty() {
        return Err(Error::Data("voxelize on empty mesh".into()));
    }
    let r = resolution;
    let center = |i: usize| (i as f64 + 0.5) / r as f64;
    let mut report = VoxelizeReport::default();

    // votes[axis] is a z-major grid of per-axis parity results.
    let mut votes = vec![vec![false; r * r * r]; 3];
    for (axis, vote) in votes.iter_mut().enumerate() {
        let (au, av) = cross_axes(axis);
        // Cross-axis index pair (iu, iv) addresses one ray.
        for iu in 0..r {
            for iv in 0..r {
                let mut found = None;
                for attempt in 0..=MAX_RETRIES {
                    // Deterministic, attempt-scaled offsets break ties with
                    // edges without meaningfully moving the ray.
                    let du = attempt as f64 * 7e-5;
                    let dv = attempt as f64 * 1.3e-4;
                    if let Some(ts) = ray_crossings(tris, axis, center(iu) + du, center(iv) + dv) {
                        if attempt > 0 {
                            report.retried_rays += 1;
                        }
                        found = Some(ts);
                        break;
                    }
                }
                let Some(ts) = found else {
                    report.unresolved_rays += 1;
                    continue;
                };
                for i in 0..r {
                    let c = center(i);
                    let crossings = ts.iter().filter(|&&t| t < c).count();
                    if crossings % 2 == 1 {
                        let mut idx = [0usize; 3];
                        // Map (ray axis position, cross axes) back to (x,y,z).
                        idx[axis] = i;
                        idx[au] = iu;
                        idx[av] = iv;
                        let (x, y, z) = (idx[0], idx[1], idx[2]);
                        vote[(z * r + y) * r + x] = true;
                    }
                }
            }
        }
    }

    let mut grid = VoxelGrid::zeros([r, r, r]);
    for i in 0..r * r * r {
        let n = votes.iter().filter(|v| v[i]).count();
        if n >= 2 {
            grid.values_mut()[i] = 1.0;
        }
        if n == 1 || n == 2 {
            report.disagreements += 1;
        }
    }
    Ok((grid, report))
}
