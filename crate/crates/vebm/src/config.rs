//! Run configuration: one JSON document drives a whole run.
//!
//! A config names the task, the data source, the network architecture
//! (preset name or explicit layer stack), and the task's training recipe.
//! Named presets carry every hyperparameter of the reference experiments
//! (`paper-*`) and of fast single-core runs (`desk-*`); a config file may
//! start from one with `{"preset": "desk-synthesis", ...}` and override
//! individual keys, which are merged field-by-field.
//!
//! Validation happens before any compute and rejects unknown keys (serde
//! names the offending key), physically meaningless values (step size ≤ 0,
//! corruption fraction outside [0, 1], upscale factor < 1), sections that
//! belong to a different task, and architecture/data extent mismatches.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_procedural_mixed, load_dataset, Dataset, ProcCategory, ValueConvention,
};
use crate::descriptor::DescriptorSpec;
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::training::{
    CoopConfig, MultigridConfig, RecoveryConfig, SuperresConfig, TrainConfig,
};

/// What a run trains (and what its checkpoint can later sample or answer).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Synthesis,
    Recovery,
    Superres,
    Multigrid,
    Coop,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Synthesis => "synthesis",
            Task::Recovery => "recovery",
            Task::Superres => "superres",
            Task::Multigrid => "multigrid",
            Task::Coop => "coop",
        }
    }
}

/// Where the training grids come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum DataConfig {
    /// Procedural block furniture, generated on the fly.
    Procedural {
        categories: Vec<String>,
        per_category: usize,
        extents: [usize; 3],
        seed: u64,
    },
    /// A directory of `.vgrid` files with a `labels.json` manifest.
    Directory { path: PathBuf },
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DataConfig::Procedural {
                categories,
                per_category,
                extents,
                ..
            } => {
                if categories.is_empty() {
                    return Err(Error::Config("data.categories is empty".into()));
                }
                for c in categories {
                    ProcCategory::parse(c)?;
                }
                if *per_category == 0 {
                    return Err(Error::Config("data.per_category must be at least 1".into()));
                }
                if extents.iter().any(|&e| e < 8) {
                    return Err(Error::Config(format!(
                        "procedural data needs extents of at least 8, got {extents:?}"
                    )));
                }
                Ok(())
            }
            DataConfig::Directory { path } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config("data.path is empty".into()));
                }
                Ok(())
            }
        }
    }

    /// Grid extents this source will produce, when knowable without IO.
    pub fn extents_hint(&self) -> Option<[usize; 3]> {
        match self {
            DataConfig::Procedural { extents, .. } => Some(*extents),
            DataConfig::Directory { .. } => None,
        }
    }

    /// Load (or generate) the raw binary dataset.
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataConfig::Procedural {
                categories,
                per_category,
                extents,
                seed,
            } => {
                let cats: Vec<ProcCategory> = categories
                    .iter()
                    .map(|c| ProcCategory::parse(c))
                    .collect::<Result<_>>()?;
                gen_procedural_mixed(&cats, *per_category, *extents, *seed)
            }
            DataConfig::Directory { path } => load_dataset(path),
        }
    }
}

/// Descriptor architecture: a named preset or an explicit spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum ModelConfig {
    Preset(String),
    Explicit(DescriptorSpec),
}

impl ModelConfig {
    pub fn resolve(&self) -> Result<DescriptorSpec> {
        match self {
            ModelConfig::Preset(name) => descriptor_preset(name),
            ModelConfig::Explicit(spec) => Ok(spec.clone()),
        }
    }
}

/// Generator architecture: a named preset or an explicit spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum GeneratorConfig {
    Preset(String),
    Explicit(GeneratorSpec),
}

impl GeneratorConfig {
    pub fn resolve(&self) -> Result<GeneratorSpec> {
        match self {
            GeneratorConfig::Preset(name) => generator_preset(name),
            GeneratorConfig::Explicit(spec) => Ok(spec.clone()),
        }
    }
}

/// The per-grid descriptor ladder of a multi-grid run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum LadderConfig {
    Preset(String),
    Explicit(Vec<DescriptorSpec>),
}

impl LadderConfig {
    pub fn resolve(&self) -> Result<Vec<DescriptorSpec>> {
        match self {
            LadderConfig::Preset(name) => ladder_preset(name),
            LadderConfig::Explicit(specs) => Ok(specs.clone()),
        }
    }
}

pub fn descriptor_preset(name: &str) -> Result<DescriptorSpec> {
    match name {
        "synthesis-32" => Ok(DescriptorSpec::synthesis_32()),
        "recovery-32" => Ok(DescriptorSpec::recovery_32()),
        "superres-32" => Ok(DescriptorSpec::superres_32()),
        "cooperative-32" => Ok(DescriptorSpec::cooperative_32()),
        "desk-16" => Ok(DescriptorSpec::desk_16()),
        other => Err(Error::Config(format!(
            "unknown descriptor preset {other:?}; available: synthesis-32, \
             recovery-32, superres-32, cooperative-32, desk-16"
        ))),
    }
}

pub fn generator_preset(name: &str) -> Result<GeneratorSpec> {
    match name {
        "paper-32" => Ok(GeneratorSpec::paper_32()),
        "desk-16" => Ok(GeneratorSpec::desk_16()),
        other => Err(Error::Config(format!(
            "unknown generator preset {other:?}; available: paper-32, desk-16"
        ))),
    }
}

pub fn ladder_preset(name: &str) -> Result<Vec<DescriptorSpec>> {
    match name {
        "ladder-128" => Ok(DescriptorSpec::ladder_128()),
        "desk-ladder" => Ok(DescriptorSpec::desk_ladder()),
        other => Err(Error::Config(format!(
            "unknown grid ladder preset {other:?}; available: ladder-128, desk-ladder"
        ))),
    }
}

/// How `sample` draws from a finished checkpoint: chains started from the
/// reference distribution and run for `steps` Langevin updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub count: usize,
    pub steps: usize,
}

impl Default for SampleConfig {
    fn default() -> SampleConfig {
        SampleConfig {
            count: 8,
            steps: 600,
        }
    }
}

/// Everything one run needs, in a single validated document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct RunConfig {
    pub task: Task,
    /// Master seed; every random stream of the run derives from it.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` defers to the command line / environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grids: Option<LadderConfig>,
    /// Training recipe of a `synthesis` run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superres: Option<SuperresConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multigrid: Option<MultigridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coop: Option<CoopConfig>,
    #[serde(default)]
    pub sample: SampleConfig,
}

impl RunConfig {
    /// Parse a config document. An object with a `"preset"` key starts from
    /// that named preset and overrides the remaining keys field-by-field.
    pub fn from_json_str(s: &str) -> Result<RunConfig> {
        let mut v: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("config: {e}")))?;
        if let Some(obj) = v.as_object_mut() {
            if let Some(name) = obj.remove("preset") {
                let name = name.as_str().ok_or_else(|| {
                    Error::Config("config key \"preset\" must be a string".into())
                })?;
                let base = serde_json::to_value(RunConfig::preset(name)?)
                    .map_err(|e| Error::Config(format!("preset serialization: {e}")))?;
                v = deep_merge(base, v);
            }
        }
        serde_json::from_value(v).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "paper-synthesis-32",
            "paper-recovery",
            "paper-superres",
            "paper-coop",
            "paper-multigrid-128",
            "desk-synthesis",
            "desk-recovery",
            "desk-superres",
            "desk-coop",
            "desk-multigrid",
        ]
    }

    /// A complete named configuration. `paper-*` presets reproduce the
    /// reference experiments; `desk-*` presets finish in seconds to minutes
    /// on one core.
    pub fn preset(name: &str) -> Result<RunConfig> {
        let paper_data = |extents: [usize; 3]| DataConfig::Procedural {
            categories: vec!["block-table".into()],
            per_category: 100,
            extents,
            seed: 7,
        };
        let desk_data = DataConfig::Procedural {
            categories: vec!["block-table".into()],
            per_category: 60,
            extents: [16; 3],
            seed: 7,
        };
        let base = |task: Task, data: DataConfig| RunConfig {
            task,
            seed: 0,
            threads: None,
            data,
            descriptor: None,
            generator: None,
            grids: None,
            train: None,
            recovery: None,
            superres: None,
            multigrid: None,
            coop: None,
            sample: SampleConfig::default(),
        };
        match name {
            "paper-synthesis-32" => {
                let mut c = base(Task::Synthesis, paper_data([32; 3]));
                c.descriptor = Some(ModelConfig::Preset("synthesis-32".into()));
                c.train = Some(TrainConfig::default());
                Ok(c)
            }
            "paper-recovery" => {
                let mut c = base(Task::Recovery, paper_data([32; 3]));
                c.descriptor = Some(ModelConfig::Preset("recovery-32".into()));
                let mut r = RecoveryConfig::default();
                r.train.iterations = 1000;
                r.train.batch_size = 50;
                r.train.langevin.step_size = 0.0049;
                r.train.langevin.steps = 90;
                c.recovery = Some(r);
                Ok(c)
            }
            "paper-superres" => {
                let mut c = base(Task::Superres, paper_data([32; 3]));
                c.descriptor = Some(ModelConfig::Preset("superres-32".into()));
                c.superres = Some(SuperresConfig::default());
                Ok(c)
            }
            "paper-coop" => {
                let mut c = base(Task::Coop, paper_data([32; 3]));
                c.descriptor = Some(ModelConfig::Preset("cooperative-32".into()));
                c.generator = Some(GeneratorConfig::Preset("paper-32".into()));
                c.coop = Some(CoopConfig::default());
                Ok(c)
            }
            "paper-multigrid-128" => {
                let mut c = base(Task::Multigrid, paper_data([128; 3]));
                c.grids = Some(LadderConfig::Preset("ladder-128".into()));
                c.multigrid = Some(MultigridConfig::default());
                Ok(c)
            }
            "desk-synthesis" => {
                let mut c = base(Task::Synthesis, desk_data);
                c.descriptor = Some(ModelConfig::Preset("desk-16".into()));
                c.train = Some(TrainConfig {
                    iterations: 300,
                    chain_count: 20,
                    ..TrainConfig::default()
                });
                c.sample = SampleConfig {
                    count: 8,
                    steps: 300,
                };
                Ok(c)
            }
            "desk-recovery" => {
                let mut c = base(Task::Recovery, desk_data);
                c.descriptor = Some(ModelConfig::Preset("desk-16".into()));
                let mut r = RecoveryConfig::default();
                r.train.iterations = 150;
                r.train.batch_size = 10;
                r.train.langevin.step_size = 0.005;
                r.train.langevin.steps = 30;
                r.rho = 0.5;
                c.recovery = Some(r);
                Ok(c)
            }
            "desk-superres" => {
                let mut c = base(Task::Superres, desk_data);
                c.descriptor = Some(ModelConfig::Preset("desk-16".into()));
                let mut s = SuperresConfig::default();
                s.train.iterations = 100;
                s.train.batch_size = 10;
                c.superres = Some(s);
                Ok(c)
            }
            "desk-coop" => {
                let mut c = base(Task::Coop, desk_data);
                c.descriptor = Some(ModelConfig::Preset("desk-16".into()));
                c.generator = Some(GeneratorConfig::Preset("desk-16".into()));
                let mut k = CoopConfig::default();
                k.train.iterations = 200;
                k.train.batch_size = 16;
                k.train.chain_count = 16;
                k.train.langevin.steps = 15;
                c.coop = Some(k);
                Ok(c)
            }
            "desk-multigrid" => {
                let mut c = base(Task::Multigrid, desk_data);
                c.grids = Some(LadderConfig::Preset("desk-ladder".into()));
                let mut m = MultigridConfig::default();
                m.train.iterations = 200;
                m.train.batch_size = 20;
                m.factors = vec![4, 2, 2];
                c.multigrid = Some(m);
                Ok(c)
            }
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                RunConfig::preset_names().join(", ")
            ))),
        }
    }

    /// The training recipe of the active task (defaults where omitted).
    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }

    pub fn recovery_config(&self) -> RecoveryConfig {
        self.recovery.clone().unwrap_or_default()
    }

    pub fn superres_config(&self) -> SuperresConfig {
        self.superres.clone().unwrap_or_default()
    }

    pub fn multigrid_config(&self) -> MultigridConfig {
        self.multigrid.clone().unwrap_or_default()
    }

    pub fn coop_config(&self) -> CoopConfig {
        self.coop.clone().unwrap_or_default()
    }

    /// Check the whole document before any compute: data source, section/
    /// task agreement, architecture presence and extents, and the active
    /// task's own numeric constraints.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }

        // Sections must match the task.
        let stray: &[(&str, bool)] = &[
            ("train", self.train.is_some() && self.task != Task::Synthesis),
            ("recovery", self.recovery.is_some() && self.task != Task::Recovery),
            ("superres", self.superres.is_some() && self.task != Task::Superres),
            ("multigrid", self.multigrid.is_some() && self.task != Task::Multigrid),
            ("coop", self.coop.is_some() && self.task != Task::Coop),
        ];
        for (name, bad) in stray {
            if *bad {
                return Err(Error::Config(format!(
                    "a {} run does not take a `{name}` section",
                    self.task.name()
                )));
            }
        }

        // Architecture sections per task.
        let needs_descriptor = !matches!(self.task, Task::Multigrid);
        if needs_descriptor && self.descriptor.is_none() {
            return Err(Error::Config(format!(
                "a {} run needs a `descriptor` section",
                self.task.name()
            )));
        }
        if self.task == Task::Coop && self.generator.is_none() {
            return Err(Error::Config("a coop run needs a `generator` section".into()));
        }
        if self.task == Task::Multigrid && self.grids.is_none() {
            return Err(Error::Config("a multigrid run needs a `grids` section".into()));
        }
        if self.task != Task::Coop && self.generator.is_some() {
            return Err(Error::Config(format!(
                "a {} run does not take a `generator` section",
                self.task.name()
            )));
        }
        if self.task != Task::Multigrid {
            if self.grids.is_some() {
                return Err(Error::Config(format!(
                    "a {} run does not take a `grids` section",
                    self.task.name()
                )));
            }
        } else if self.descriptor.is_some() {
            return Err(Error::Config(
                "a multigrid run takes `grids`, not a single `descriptor`".into(),
            ));
        }

        // Extent agreement, where the data extents are knowable up front.
        let data_extents = self.data.extents_hint();
        let check_extents = |what: &str, got: [usize; 3]| -> Result<()> {
            if let Some(want) = data_extents {
                if got != want {
                    return Err(Error::Config(format!(
                        "{what} works on {got:?} grids but the data is {want:?}"
                    )));
                }
            }
            Ok(())
        };

        match self.task {
            Task::Synthesis => {
                let spec = self.descriptor.as_ref().unwrap().resolve()?;
                check_extents("the descriptor", spec.extents)?;
                self.train_config().validate()?;
            }
            Task::Recovery => {
                let spec = self.descriptor.as_ref().unwrap().resolve()?;
                check_extents("the descriptor", spec.extents)?;
                self.recovery_config().validate()?;
            }
            Task::Superres => {
                let spec = self.descriptor.as_ref().unwrap().resolve()?;
                check_extents("the descriptor", spec.extents)?;
                self.superres_config().validate()?;
            }
            Task::Multigrid => {
                let cfg = self.multigrid_config();
                cfg.validate()?;
                let specs = self.grids.as_ref().unwrap().resolve()?;
                if specs.len() != cfg.factors.len() {
                    return Err(Error::Config(format!(
                        "{} grid networks for {} upscale factors",
                        specs.len(),
                        cfg.factors.len()
                    )));
                }
                let mut edge = 1usize;
                for (i, (spec, &f)) in specs.iter().zip(&cfg.factors).enumerate() {
                    edge *= f;
                    if spec.extents != [edge; 3] {
                        return Err(Error::Config(format!(
                            "grid network {i} works on {:?} but level {i} is {edge}³",
                            spec.extents
                        )));
                    }
                }
                check_extents("the finest grid network", [edge; 3])?;
            }
            Task::Coop => {
                let d = self.descriptor.as_ref().unwrap().resolve()?;
                let g = self.generator.as_ref().unwrap().resolve()?;
                check_extents("the descriptor", d.extents)?;
                if g.extents != d.extents {
                    return Err(Error::Config(format!(
                        "generator produces {:?} grids but the descriptor reads {:?}",
                        g.extents, d.extents
                    )));
                }
                self.coop_config().validate()?;
            }
        }
        Ok(())
    }

    /// Load the data and put it in the value convention the task trains on:
    /// mean-subtracted for the single-grid descriptors, raw binary for the
    /// multi-grid cascade, [−1, 1] for cooperative training (tanh output).
    pub fn load_data(&self) -> Result<Dataset> {
        let raw = self.data.load()?;
        match self.task {
            Task::Synthesis | Task::Recovery | Task::Superres => raw.preprocess(),
            Task::Multigrid => {
                if raw.convention != ValueConvention::Binary01 {
                    return Err(Error::Data(format!(
                        "multigrid training expects binary data, got {:?}",
                        raw.convention
                    )));
                }
                Ok(raw)
            }
            Task::Coop => raw.to_signed_unit(),
        }
    }
}

/// Field-by-field JSON merge: objects merge recursively, anything else in
/// `over` replaces the base value.
fn deep_merge(base: serde_json::Value, over: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match (base, over) {
        (Value::Object(mut b), Value::Object(o)) => {
            for (k, ov) in o {
                let merged = match b.remove(&k) {
                    Some(bv) => deep_merge(bv, ov),
                    None => ov,
                };
                b.insert(k, merged);
            }
            Value::Object(b)
        }
        (_, o) => o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates_and_round_trips() {
        for name in RunConfig::preset_names() {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let json = cfg.to_json_pretty().unwrap();
            let back = RunConfig::from_json_str(&json).unwrap();
            assert_eq!(back, cfg, "{name} drifted through JSON");
        }
        assert!(RunConfig::preset("desk-everything").is_err());
    }

    #[test]
    fn preset_reference_merges_overrides_field_by_field() {
        let cfg = RunConfig::from_json_str(
            r#"{"preset": "desk-synthesis", "seed": 99, "train": {"iterations": 7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        let train = cfg.train.clone().unwrap();
        assert_eq!(train.iterations, 7);
        // Untouched keys keep the preset's values, nested ones included.
        assert_eq!(train.batch_size, 20);
        assert_eq!(train.chain_count, 20);
        assert_eq!(
            cfg.descriptor,
            Some(ModelConfig::Preset("desk-16".into()))
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::from_json_str(r#"{"preset": "desk-synthesis", "trian": {}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("trian"), "message was: {err}");
        let err = RunConfig::from_json_str(
            r#"{"preset": "desk-synthesis", "train": {"learning_rte": 0.1}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("learning_rte"), "message was: {err}");
    }

    #[test]
    fn sections_for_other_tasks_are_rejected() {
        let cfg = RunConfig::from_json_str(
            r#"{"preset": "desk-synthesis", "recovery": {"rho": 0.5}}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("recovery"), "message was: {err}");
    }

    #[test]
    fn physically_invalid_values_fail_validation() {
        let bad_step = RunConfig::from_json_str(
            r#"{"preset": "desk-synthesis", "train": {"langevin": {"step_size": -0.01}}}"#,
        )
        .unwrap();
        assert!(bad_step.validate().is_err());

        let bad_rho = RunConfig::from_json_str(
            r#"{"preset": "desk-recovery", "recovery": {"rho": 1.5}}"#,
        )
        .unwrap();
        assert!(bad_rho.validate().is_err());

        let bad_factor = RunConfig::from_json_str(
            r#"{"preset": "desk-superres", "superres": {"factor": 0}}"#,
        )
        .unwrap();
        assert!(bad_factor.validate().is_err());
    }

    #[test]
    fn extent_mismatches_are_caught_before_compute() {
        let cfg = RunConfig::from_json_str(
            r#"{"preset": "desk-synthesis", "data": {"procedural": {
                "categories": ["block-table"], "per_category": 4,
                "extents": [32, 32, 32], "seed": 7}}}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("[32, 32, 32]"), "message was: {err}");
    }

    #[test]
    fn data_loading_applies_the_task_convention() {
        let mut cfg = RunConfig::preset("desk-synthesis").unwrap();
        // Shrink the dataset so the test stays fast.
        cfg.data = DataConfig::Procedural {
            categories: vec!["block-table".into()],
            per_category: 4,
            extents: [16; 3],
            seed: 7,
        };
        let ds = cfg.load_data().unwrap();
        assert_eq!(ds.convention, ValueConvention::MeanSubtracted);
        assert!(ds.mean > 0.0);

        let mut coop = RunConfig::preset("desk-coop").unwrap();
        coop.data = cfg.data.clone();
        assert_eq!(
            coop.load_data().unwrap().convention,
            ValueConvention::SignedUnit
        );

        let mut mg = RunConfig::preset("desk-multigrid").unwrap();
        mg.data = cfg.data.clone();
        assert_eq!(
            mg.load_data().unwrap().convention,
            ValueConvention::Binary01
        );
    }

    #[test]
    fn procedural_data_is_deterministic_per_seed() {
        let d = DataConfig::Procedural {
            categories: vec!["block-chair".into()],
            per_category: 3,
            extents: [16; 3],
            seed: 11,
        };
        let a = d.load().unwrap();
        let b = d.load().unwrap();
        for (x, y) in a.grids.iter().zip(&b.grids) {
            assert_eq!(x.values(), y.values());
        }
        assert_eq!(a.labels, b.labels);
    }
}
