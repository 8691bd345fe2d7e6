//! Grid and dataset files.
//!
//! `.vgrid` is the single-grid container: a fixed 24-byte header (magic
//! `VGRD`, format version, extents, element dtype) followed by the raw little-
//! endian f32 payload, x fastest. A dataset directory holds one `.vgrid` per
//! grid plus a `labels.json` manifest recording categories, per-grid labels,
//! and the value convention the files are stored in.
//!
//! [`export_obj`] writes a blocky Wavefront OBJ mesh: one cube (12 triangles)
//! per voxel at or above the threshold, with shared corner vertices emitted
//! once.

use super::{Dataset, ValueConvention, VoxelGrid};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"VGRD";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
/// magic + version + three extents + dtype + reserved padding.
const HEADER_LEN: usize = 4 + 4 + 12 + 1 + 3;

pub fn save_grid(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let [d, h, wd] = grid.extents();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&(h as u32).to_le_bytes())?;
    w.write_all(&(wd as u32).to_le_bytes())?;
    w.write_all(&[DTYPE_F32, 0, 0, 0])?;
    for &v in grid.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, not a voxel grid file",
            path.display(),
            &header[0..4]
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let extents = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    if header[20] != DTYPE_F32 {
        return Err(Error::Format(format!(
            "{}: unsupported dtype {}",
            path.display(),
            header[20]
        )));
    }
    let numel = extents[0] * extents[1] * extents[2];
    let mut payload = vec![0u8; numel * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format(format!("{}: truncated payload", path.display())))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format(format!(
            "{}: trailing bytes after payload",
            path.display()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    VoxelGrid::from_values(extents, values)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    categories: Vec<String>,
    convention: ValueConvention,
    mean: f32,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    label: usize,
}

/// Write every grid as `grid_NNNN.vgrid` plus a `labels.json` manifest.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ds.len());
    for (i, grid) in ds.grids.iter().enumerate() {
        let file = format!("grid_{i:04}.vgrid");
        save_grid(grid, dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            label: ds.labels[i],
        });
    }
    let manifest = Manifest {
        categories: ds.categories.clone(),
        convention: ds.convention,
        mean: ds.mean,
        entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("labels.json: {e}")))?;
    std::fs::write(dir.join("labels.json"), json)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("labels.json");
    let json = std::fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    let mut grids = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        if entry.label >= manifest.categories.len() {
            return Err(Error::Data(format!(
                "{}: label {} out of range for {} categories",
                entry.file,
                entry.label,
                manifest.categories.len()
            )));
        }
        let grid = load_grid(dir.join(&entry.file))?;
        if let Some(first) = grids.first() {
            let f: &VoxelGrid = first;
            if f.extents() != grid.extents() {
                return Err(Error::Data(format!(
                    "{}: extents {:?} differ from the rest of the dataset {:?}",
                    entry.file,
                    grid.extents(),
                    f.extents()
                )));
            }
        }
        grids.push(grid);
        labels.push(entry.label);
    }
    Ok(Dataset {
        grids,
        labels,
        categories: manifest.categories,
        convention: manifest.convention,
        mean: manifest.mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObjStats {
    pub vertices: usize,
    pub triangles: usize,
}

/// Blocky mesh of all voxels with `value >= threshold`; shared cube corners
/// are written once. Grid coordinates map to OBJ as `v x y z`.
pub fn write_obj(grid: &VoxelGrid, threshold: f32, out: &mut impl Write) -> Result<ObjStats> {
    let [d, h, w] = grid.extents();
    let mut corner_ids: HashMap<(u32, u32, u32), u32> = HashMap::new();
    let mut corners: Vec<(u32, u32, u32)> = Vec::new();
    let mut tris: Vec<[u32; 3]> = Vec::new();

    // Cube corner offsets in (x, y, z) bit order, and the 12 outward-facing
    // triangles over them.
    const OFFS: [(u32, u32, u32); 8] = [
        (0, 0, 0),
        (1, 0, 0),
        (1, 1, 0),
        (0, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (1, 1, 1),
        (0, 1, 1),
    ];
    const FACES: [[usize; 3]; 12] = [
        [0, 3, 2],
        [0, 2, 1], // bottom
        [4, 5, 6],
        [4, 6, 7], // top
        [0, 1, 5],
        [0, 5, 4], // front
        [2, 3, 7],
        [2, 7, 6], // back
        [0, 4, 7],
        [0, 7, 3], // left
        [1, 2, 6],
        [1, 6, 5], // right
    ];

    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if grid.get(z, y, x) < threshold {
                    continue;
                }
                let mut ids = [0u32; 8];
                for (i, &(ox, oy, oz)) in OFFS.iter().enumerate() {
                    let key = (x as u32 + ox, y as u32 + oy, z as u32 + oz);
                    ids[i] = *corner_ids.entry(key).or_insert_with(|| {
                        corners.push(key);
                        corners.len() as u32 - 1
                    });
                }
                for f in FACES {
                    tris.push([ids[f[0]], ids[f[1]], ids[f[2]]]);
                }
            }
        }
    }

    for &(x, y, z) in &corners {
        writeln!(out, "v {x} {y} {z}")?;
    }
    for t in &tris {
        // OBJ face indices are 1-based.
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(ObjStats {
        vertices: corners.len(),
        triangles: tris.len(),
    })
}

pub fn export_obj(grid: &VoxelGrid, threshold: f32, path: impl AsRef<Path>) -> Result<ObjStats> {
    let mut w = BufWriter::new(File::create(path)?);
    let stats = write_obj(grid, threshold, &mut w)?;
    w.flush()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_procedural_mixed;
    use crate::data::ProcCategory;

    #[test]
    fn vgrid_file_size_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.vgrid");
        let values: Vec<f32> = (0..4096).map(|i| (i as f32).sin()).collect();
        let g = VoxelGrid::from_values([16, 16, 16], values).unwrap();
        save_grid(&g, &path).unwrap();
        // 24-byte header + 4096 little-endian f32.
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16408);
        let back = load_grid(&path).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn vgrid_rejects_bad_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.vgrid");
        let g = VoxelGrid::from_values([2, 2, 2], vec![0.5; 8]).unwrap();
        save_grid(&g, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_grid(&path), Err(Error::Format(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_grid(&path), Err(Error::Format(_))));

        std::fs::write(&path, &good[..good.len() - 2]).unwrap();
        assert!(matches!(load_grid(&path), Err(Error::Format(_))));

        let mut long = good.clone();
        long.push(0);
        std::fs::write(&path, &long).unwrap();
        assert!(matches!(load_grid(&path), Err(Error::Format(_))));
    }

    #[test]
    fn nonbinary_values_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.vgrid");
        let g = VoxelGrid::from_values([1, 1, 4], vec![-0.31, 0.0, 0.69, 1.5]).unwrap();
        save_grid(&g, &path).unwrap();
        let back = load_grid(&path).unwrap();
        for (a, b) in back.values().iter().zip(g.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dataset_round_trip_preserves_labels_and_convention() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_procedural_mixed(
            &[ProcCategory::BlockTable, ProcCategory::BlockChair],
            2,
            [8, 8, 8],
            4,
        )
        .unwrap();
        let pre = ds.preprocess().unwrap();
        save_dataset(&pre, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.labels, pre.labels);
        assert_eq!(back.categories, pre.categories);
        assert_eq!(back.convention, ValueConvention::MeanSubtracted);
        assert!((back.mean - pre.mean).abs() < 1e-7);
        assert_eq!(back.grids[3], pre.grids[3]);
    }

    #[test]
    fn obj_counts_single_and_adjacent_voxels() {
        // One voxel: 8 corners, 12 triangles.
        let mut g = VoxelGrid::zeros([2, 2, 2]);
        g.set(0, 0, 0, 1.0);
        let mut buf = Vec::new();
        let s = write_obj(&g, 0.5, &mut buf).unwrap();
        assert_eq!(s, ObjStats { vertices: 8, triangles: 12 });

        // Two x-adjacent voxels share 4 corners: 12 vertices, 24 triangles.
        g.set(0, 0, 1, 1.0);
        let mut buf = Vec::new();
        let s = write_obj(&g, 0.5, &mut buf).unwrap();
        assert_eq!(s, ObjStats { vertices: 12, triangles: 24 });

        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 12);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 24);
    }

    #[test]
    fn obj_threshold_is_inclusive() {
        let mut g = VoxelGrid::zeros([1, 1, 2]);
        g.set(0, 0, 0, 0.5);
        g.set(0, 0, 1, 0.4999);
        let mut buf = Vec::new();
        let s = write_obj(&g, 0.5, &mut buf).unwrap();
        assert_eq!(s.triangles, 12);
    }
}
