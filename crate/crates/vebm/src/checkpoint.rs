//! Self-describing training checkpoints.
//!
//! Layout: magic `VEBM`, a `u32` format version, one length-prefixed UTF-8
//! JSON metadata document, then named little-endian `f32` tensor records with
//! explicit shape headers. Everything a trainer needs to resume bit-identically
//! lives here: parameters, optimizer moments, persistent chains, and counters.
//! RNG state needs no blob of its own — every stream is re-derived from
//! `(seed, tag, iteration, chain)`, so the seed and iteration in the metadata
//! pin it exactly.
//!
//! The container is deliberately dumb: sections are just name prefixes
//! (`param.`, `adam.m.`, `g2.param.`, `gen.` …) chosen by the trainers, and
//! the [`ParamSet`]/[`AdamState`] helpers move whole groups in one call.

use crate::data::ValueConvention;
use crate::descriptor::DescriptorSpec;
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::grid::HistogramModel;
use crate::nn::{AdamState, ParamSet};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"VEBM";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
/// Upper bound on serialized name/metadata lengths, to keep a corrupt header
/// from requesting an absurd allocation.
const MAX_NAME_LEN: usize = 4096;
const MAX_META_LEN: usize = 64 << 20;

/// Everything about a run that is not a tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Which trainer wrote this: "synthesis", "recovery", "superres",
    /// "multigrid", or "coop".
    pub kind: String,
    /// Completed training iterations.
    pub iteration: u64,
    /// Master seed all RNG streams derive from.
    pub seed: u64,
    /// Snapshot of the run configuration, kept opaque at this layer.
    #[serde(default)]
    pub config: serde_json::Value,
    /// Training-data mean subtracted during preprocessing, if any.
    #[serde(default)]
    pub data_mean: Option<f64>,
    /// Adam step counters, one per optimizer section prefix.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub adam_step: BTreeMap<String, u64>,
    /// Grid-0 value histogram of a multi-grid run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramModel>,
    /// Descriptor architecture, for single-net trainers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<DescriptorSpec>,
    /// Generator architecture, for cooperative training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    /// Per-grid descriptor architectures of a multi-grid run, coarse to fine.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grids: Vec<DescriptorSpec>,
    /// Upscale factor between consecutive grids of a multi-grid run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub factors: Vec<usize>,
    /// Value convention the training data was preprocessed into; samples from
    /// this model must be post-processed accordingly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<ValueConvention>,
}

impl CheckpointMeta {
    pub fn new(kind: &str, seed: u64) -> CheckpointMeta {
        CheckpointMeta {
            kind: kind.to_string(),
            iteration: 0,
            seed,
            config: serde_json::Value::Null,
            data_mean: None,
            adam_step: BTreeMap::new(),
            histogram: None,
            descriptor: None,
            generator: None,
            grids: Vec::new(),
            factors: Vec::new(),
            convention: None,
        }
    }
}

/// An ordered bag of named tensors plus metadata.
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    /// Adds one tensor; names must be unique within a file.
    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if name.is_empty() || name.len() > MAX_NAME_LEN {
            return Err(Error::Format(format!(
                "bad tensor name length {}",
                name.len()
            )));
        }
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::Format(format!("duplicate tensor name '{name}'")));
        }
        self.tensors.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Stores every entry of a parameter set (state tensors included) under
    /// `{prefix}{entry name}`.
    pub fn insert_params(&mut self, prefix: &str, params: &ParamSet) -> Result<()> {
        for e in params.entries().iter() {
            self.insert(&format!("{prefix}{}", e.name), e.tensor.clone())?;
        }
        Ok(())
    }

    /// Restores every entry of a parameter set from `{prefix}{entry name}`,
    /// shape-checked; errors on any missing tensor.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> Result<()> {
        let names: Vec<String> = params.entries().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let full = format!("{prefix}{name}");
            let t = self
                .tensor(&full)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor '{full}'")))?;
            params.assign(&name, t.clone())?;
        }
        Ok(())
    }

    /// Stores Adam moments as `{prefix}adam.m.{param}` / `{prefix}adam.v.{param}`
    /// and the step counter in the metadata under `prefix`.
    pub fn insert_adam(&mut self, prefix: &str, params: &ParamSet, state: &AdamState) -> Result<()> {
        let trainable: Vec<&str> = params.trainable().map(|e| e.name.as_str()).collect();
        if trainable.len() != state.m.len() || trainable.len() != state.v.len() {
            return Err(Error::Format(format!(
                "optimizer state covers {} tensors, parameter set has {} trainable",
                state.m.len(),
                trainable.len()
            )));
        }
        for (name, t) in trainable.iter().zip(&state.m) {
            self.insert(&format!("{prefix}adam.m.{name}"), t.clone())?;
        }
        for (name, t) in trainable.iter().zip(&state.v) {
            self.insert(&format!("{prefix}adam.v.{name}"), t.clone())?;
        }
        self.meta.adam_step.insert(prefix.to_string(), state.step);
        Ok(())
    }

    /// Inverse of [`Checkpoint::insert_adam`].
    pub fn load_adam(&self, prefix: &str, params: &ParamSet, state: &mut AdamState) -> Result<()> {
        let trainable: Vec<&str> = params.trainable().map(|e| e.name.as_str()).collect();
        if trainable.len() != state.m.len() {
            return Err(Error::Format(
                "optimizer state shape does not match parameter set".into(),
            ));
        }
        for (i, name) in trainable.iter().enumerate() {
            for (kind, dst) in [("m", &mut state.m), ("v", &mut state.v)] {
                let full = format!("{prefix}adam.{kind}.{name}");
                let t = self
                    .tensor(&full)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor '{full}'")))?;
                if t.shape() != dst[i].shape() {
                    return Err(Error::Format(format!(
                        "'{full}' has shape {:?}, expected {:?}",
                        t.shape(),
                        dst[i].shape()
                    )));
                }
                dst[i] = t.clone();
            }
        }
        state.step = *self.meta.adam_step.get(prefix).ok_or_else(|| {
            Error::Format(format!("checkpoint lacks adam step counter for '{prefix}'"))
        })?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::Format(format!("metadata serialization failed: {e}")))?;
        if meta.len() > MAX_META_LEN {
            return Err(Error::Format("metadata too large".into()));
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.shape().len() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&[DTYPE_F32])?;
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        let mut c = Cursor { bytes: &bytes, at: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let meta_len = c.u32()? as usize;
        if meta_len > MAX_META_LEN {
            return Err(Error::Format("metadata length out of range".into()));
        }
        let meta_bytes = c.take(meta_len)?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::Format(format!("bad checkpoint metadata: {e}")))?;
        let count = c.u32()? as usize;
        let mut out = Checkpoint::new(meta);
        for _ in 0..count {
            let name_len = c.u32()? as usize;
            if name_len == 0 || name_len > MAX_NAME_LEN {
                return Err(Error::Format(format!("bad tensor name length {name_len}")));
            }
            let name = std::str::from_utf8(c.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = c.u8()? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Format(format!("tensor '{name}' has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = c.u32()? as usize;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| Error::Format(format!("tensor '{name}' shape overflows")))?;
                shape.push(d);
            }
            let dtype = c.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Format(format!(
                    "tensor '{name}' has unsupported dtype {dtype}"
                )));
            }
            let raw = c.take(numel.checked_mul(4).ok_or_else(|| {
                Error::Format(format!("tensor '{name}' data length overflows"))
            })?)?;
            let mut data = Vec::with_capacity(numel);
            for ch in raw.chunks_exact(4) {
                let v = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]);
                if !v.is_finite() {
                    return Err(Error::Format(format!(
                        "tensor '{name}' contains a non-finite value"
                    )));
                }
                data.push(v);
            }
            out.insert(&name, Tensor::from_vec(&shape, data)?)?;
        }
        if c.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                bytes.len() - c.at
            )));
        }
        Ok(out)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("checkpoint file is truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}
