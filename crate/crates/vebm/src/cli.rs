//! Command-line front end over the library: training, sampling, recovery,
//! super-resolution, the multi-grid cascade, cooperative training, metrics,
//! and dataset tooling.
//!
//! One command is one process. Every artifact lands in the `--out` directory,
//! which is guarded by a `.vebm.lock` file for the duration of the run so two
//! commands never interleave writes. Training appends one JSON object per
//! iteration to `diagnostics.jsonl`; stdout carries short human-readable
//! summaries only. All randomness derives from the run seed, so any command
//! rerun with the same inputs reproduces its artifacts byte for byte.
//!
//! Exit codes: 0 success, 2 configuration, 3 I/O or file format, 4 sampler
//! divergence, 1 anything else.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, Task};
use crate::data::{
    corrupt, export_obj, gen_procedural_mixed, load_grid, load_mesh_obj, normalize_mesh,
    postprocess, save_dataset, save_grid, voxelize_mesh, Dataset, ProcCategory, ValueConvention,
    VoxelBatch, VoxelGrid,
};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::eval::{
    classification_error, extract_features, fid, inception_score, recovery_error,
    softmax_class_prob, train_classifier, ClassifierConfig, FeatureSpec, MetricsReport,
};
use crate::generator::sample_prior;
use crate::grid::GridScaler;
use crate::langevin::{run_chain, LangevinConfig};
use crate::rng::{chain_rng, derive_rng};
use crate::training::{
    recover, superres, CoopTrainer, IterationDiagnostics, MleTrainer, MultigridSampler,
    MultigridTrainer, RecoveryTrainer, SuperresTrainer,
};

/// Lock file created in every output directory for the duration of a command.
pub const LOCK_FILE: &str = ".vebm.lock";

#[derive(Parser)]
#[command(
    name = "vebm",
    version,
    about = "Energy-based generative modeling of 3-D voxel grids"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a synthesis model and sample from it
    Train(RunArgs),
    /// Sample grids from a finished checkpoint
    Sample(SampleArgs),
    /// Train a recovery model and repair corrupted grids
    Recover(RunArgs),
    /// Train a super-resolution model and upscale low-res grids
    Superres(RunArgs),
    /// Train the multi-grid cascade and sample pyramids
    Multigrid(RunArgs),
    /// Train a descriptor and generator cooperatively
    Coop(RunArgs),
    /// Compute sample-quality metrics for a checkpoint
    Eval(EvalArgs),
    /// Generate a procedural dataset directory
    Dataset(DatasetArgs),
    /// Voxelize a watertight OBJ mesh into a grid file
    Voxelize(VoxelizeArgs),
    /// Export a grid file as an OBJ mesh
    Export(ExportArgs),
}

/// Flags shared by the five training commands.
#[derive(Args)]
pub struct RunArgs {
    /// Run configuration (JSON; may reference a preset)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Resume from this checkpoint
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// How many demonstration grids to write after training
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    /// Worker threads (falls back to VEBM_THREADS, then the config)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct SampleArgs {
    /// Checkpoint to sample from
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Sampling seed
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of grids (default: the checkpoint config's sample count)
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    /// Worker threads (falls back to VEBM_THREADS, then the config)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Config naming the evaluation dataset (default: the checkpoint's)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Evaluation seed
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Synthesized-sample count (default: the config's sample count)
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    /// Worker threads (falls back to VEBM_THREADS, then the config)
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Metrics to compute: inception_score, fid, recovery_error,
    /// softmax_prob, classification_error (default: all that apply)
    #[arg(value_name = "METRIC")]
    pub metrics: Vec<String>,
}

#[derive(Args)]
pub struct DatasetArgs {
    /// Destination directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Shapes per category
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub count: usize,
    /// Generation seed
    #[arg(long, value_name = "U64", default_value_t = 0)]
    pub seed: u64,
    /// Cubic grid resolution
    #[arg(long, value_name = "N", default_value_t = 16)]
    pub resolution: usize,
    /// Categories (repeatable): block-table, block-chair, block-sofa
    #[arg(long = "category", value_name = "NAME")]
    pub categories: Vec<String>,
}

#[derive(Args)]
pub struct VoxelizeArgs {
    /// Watertight OBJ mesh
    #[arg(value_name = "MESH")]
    pub mesh: PathBuf,
    /// Cubic grid resolution
    #[arg(long, value_name = "N", default_value_t = 16)]
    pub resolution: usize,
    /// Margin left empty around the normalized mesh (fraction of the cube)
    #[arg(long, value_name = "F", default_value_t = 0.05)]
    pub margin: f64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExportArgs {
    /// Grid file to export
    #[arg(value_name = "GRID")]
    pub grid: PathBuf,
    /// Occupancy threshold
    #[arg(long, value_name = "F", default_value_t = 0.5)]
    pub threshold: f32,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train_like(Task::Synthesis, a),
        Command::Recover(a) => cmd_train_like(Task::Recovery, a),
        Command::Superres(a) => cmd_train_like(Task::Superres, a),
        Command::Multigrid(a) => cmd_train_like(Task::Multigrid, a),
        Command::Coop(a) => cmd_train_like(Task::Coop, a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Voxelize(a) => cmd_voxelize(a),
        Command::Export(a) => cmd_export(a),
    }
}

// ── shared plumbing ─────────────────────────────────────────────────────

/// Holds `.vebm.lock` inside an output directory; removed on drop.
#[derive(Debug)]
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(dir: &Path) -> Result<LockGuard> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = write!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "{} exists; another command is writing to {} (delete the lock if it is stale)",
                        path.display(),
                        dir.display()
                    ),
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn resolve_threads(flag: Option<usize>, cfg: Option<usize>) -> Option<usize> {
    flag.or_else(|| {
        std::env::var("VEBM_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .or(cfg)
}

/// The run config from `--config`, or failing that from the checkpoint's
/// embedded snapshot.
fn load_config(config: &Option<PathBuf>, ck: Option<&Checkpoint>) -> Result<RunConfig> {
    if let Some(path) = config {
        return RunConfig::from_json_str(&fs::read_to_string(path)?);
    }
    match ck {
        Some(c) if !c.meta.config.is_null() => serde_json::from_value(c.meta.config.clone())
            .map_err(|e| Error::Format(format!("checkpoint config snapshot: {e}"))),
        Some(_) => Err(Error::Config(
            "this checkpoint carries no config snapshot; pass --config".into(),
        )),
        None => Err(Error::Config("pass --config or --checkpoint".into())),
    }
}

/// Map a binary grid into the value convention a model was trained on.
fn to_model_space(grid: &VoxelGrid, convention: ValueConvention, mean: f32) -> VoxelGrid {
    match convention {
        ValueConvention::Binary01 => grid.clone(),
        ValueConvention::MeanSubtracted => grid.map(|v| v - mean),
        ValueConvention::SignedUnit => grid.map(|v| 2.0 * v - 1.0),
    }
}

/// Rebuild the descriptor stored under `prefix` in a checkpoint.
fn descriptor_at(ck: &Checkpoint, spec: crate::descriptor::DescriptorSpec, prefix: &str) -> Result<DescriptorModel> {
    let mut model = DescriptorModel::new(spec, 0)?;
    ck.load_params(prefix, &mut model.params)?;
    Ok(model)
}

/// Langevin settings for drawing from a finished model: the training step
/// size, noise as the schedule left it at the final iteration, `steps`
/// updates.
fn sampling_dynamics(cfg: &RunConfig, steps: usize, seed: u64) -> LangevinConfig {
    let train = match cfg.task {
        Task::Synthesis => cfg.train_config(),
        Task::Recovery => cfg.recovery_config().train,
        Task::Superres => cfg.superres_config().train,
        Task::Multigrid => cfg.multigrid_config().train,
        Task::Coop => cfg.coop_config().train,
    };
    LangevinConfig {
        steps,
        noise_enabled: train.noise_at(train.iterations.saturating_sub(1)),
        rng_seed: seed,
        ..train.langevin
    }
}

/// Draw `count` binary grids from a sampling-capable checkpoint (synthesis,
/// multigrid, or coop). Deterministic in `seed`.
fn synthesize_from_checkpoint(
    ck: &Checkpoint,
    cfg: &RunConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<VoxelGrid>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let mean = ck.meta.data_mean.unwrap_or(0.0) as f32;
    let convention = ck.meta.convention.unwrap_or(ValueConvention::Binary01);
    match ck.meta.kind.as_str() {
        "synthesis" => {
            let spec = ck
                .meta
                .descriptor
                .clone()
                .ok_or_else(|| Error::Format("checkpoint lists no descriptor".into()))?;
            let model = descriptor_at(ck, spec, "")?;
            let dynamics = sampling_dynamics(cfg, cfg.sample.steps, seed);
            let mut y = VoxelBatch::randn(
                count,
                model.extents(),
                model.ref_std(),
                &mut derive_rng(seed, "sample-init", 0, 0),
            );
            run_chain(&model, &mut y, &dynamics)?;
            Ok(y.grids()
                .iter()
                .map(|g| postprocess(g, convention, mean))
                .collect())
        }
        "multigrid" => {
            let sampler = MultigridSampler::from_checkpoint(ck)?;
            let dynamics = sampling_dynamics(cfg, cfg.multigrid_config().train.langevin.steps, seed);
            let pyramids = sampler.sample(count, &dynamics, seed)?;
            Ok(pyramids
                .iter()
                .map(|py| {
                    let finest = py.last().expect("pyramids are never empty");
                    postprocess(finest, ValueConvention::Binary01, 0.0)
                })
                .collect())
        }
        "coop" => {
            let generator = CoopTrainer::generator_from_checkpoint(ck)?;
            let descriptor = CoopTrainer::descriptor_from_checkpoint(ck)?;
            let latents: Vec<Vec<f32>> = (0..count)
                .map(|i| sample_prior(generator.latent_dim(), &mut chain_rng(seed, "latent", 0, i)))
                .collect();
            let mut noise_rng = derive_rng(seed, "proposal-noise", 0, 0);
            let mut y = generator.generate_batch(&latents, false, &mut noise_rng)?;
            let dynamics = sampling_dynamics(cfg, cfg.coop_config().train.langevin.steps, seed);
            run_chain(&descriptor, &mut y, &dynamics)?;
            Ok(y.grids()
                .iter()
                .map(|g| postprocess(g, convention, mean))
                .collect())
        }
        other => Err(Error::Config(format!(
            "a {other} checkpoint repairs given inputs rather than sampling freely; \
             use the matching command instead of `sample`"
        ))),
    }
}

fn write_samples(out: &Path, grids: &[VoxelGrid]) -> Result<()> {
    for (i, g) in grids.iter().enumerate() {
        save_grid(g, out.join(format!("sample_{i:04}.vgrid")))?;
    }
    Ok(())
}

// ── training commands ───────────────────────────────────────────────────

fn cmd_train_like(want: Task, args: RunArgs) -> Result<()> {
    let ck = args
        .checkpoint
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?;
    let mut cfg = load_config(&args.config, ck.as_ref())?;
    if cfg.task != want {
        return Err(Error::Config(format!(
            "the config is for a {} run, but this is the {} command",
            cfg.task.name(),
            want.name()
        )));
    }
    if let Some(seed) = args.seed {
        if let Some(c) = &ck {
            if c.meta.seed != seed {
                return Err(Error::Config(format!(
                    "--seed {seed} conflicts with the checkpoint's seed {}; \
                     resuming must keep the original stream",
                    c.meta.seed
                )));
            }
        }
        cfg.seed = seed;
    }
    if let Some(c) = &ck {
        cfg.seed = c.meta.seed;
    }
    if let Some(n) = args.count {
        cfg.sample.count = n;
    }
    cfg.validate()?;
    crate::init_threads(resolve_threads(args.threads, cfg.threads));

    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("vebm-{}", want.name())));
    let _lock = LockGuard::acquire(&out)?;
    fs::write(out.join("config.json"), cfg.to_json_pretty()?)?;

    let dataset = cfg.load_data()?;
    let extents = dataset.extents()?;
    println!(
        "{}: {} grids of {}x{}x{}, seed {}",
        want.name(),
        dataset.len(),
        extents[0],
        extents[1],
        extents[2],
        cfg.seed
    );

    // A handful of training grids for the post-training demonstrations.
    let demo_count = cfg.sample.count.min(dataset.len());
    let demo: Vec<VoxelGrid> = dataset.grids[..demo_count].to_vec();
    let convention = dataset.convention;
    let mean = dataset.mean;

    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(ck.is_some())
        .truncate(ck.is_none())
        .write(true)
        .open(out.join("diagnostics.jsonl"))?;

    let total = match want {
        Task::Synthesis => cfg.train_config().iterations,
        Task::Recovery => cfg.recovery_config().train.iterations,
        Task::Superres => cfg.superres_config().train.iterations,
        Task::Multigrid => cfg.multigrid_config().train.iterations,
        Task::Coop => cfg.coop_config().train.iterations,
    };
    let progress_every = (total / 5).max(1);
    let mut sink = |d: &IterationDiagnostics| -> Result<()> {
        let line = serde_json::to_string(d)
            .map_err(|e| Error::Format(format!("diagnostics: {e}")))?;
        writeln!(log, "{line}")?;
        if (d.iteration + 1) % progress_every == 0 || d.iteration + 1 == total {
            println!(
                "iter {}/{total}  value {:+.4}  energy obs {:.3} syn {:.3}",
                d.iteration + 1,
                d.value,
                d.energy_observed,
                d.energy_synthesized
            );
        }
        Ok(())
    };

    let seed = cfg.seed;
    let mut checkpoint = match want {
        Task::Synthesis => {
            let tc = cfg.train_config();
            let mut t = match &ck {
                Some(c) => MleTrainer::resume(c, dataset, tc.clone())?,
                None => {
                    let spec = cfg.descriptor.as_ref().unwrap().resolve()?;
                    MleTrainer::new(DescriptorModel::new(spec, seed)?, dataset, tc.clone(), seed)?
                }
            };
            t.run(tc.iterations.saturating_sub(t.iteration()), &mut sink)?;
            t.checkpoint()?
        }
        Task::Recovery => {
            let rc = cfg.recovery_config();
            let mut t = match &ck {
                Some(c) => RecoveryTrainer::resume(c, dataset, rc.clone())?,
                None => {
                    let spec = cfg.descriptor.as_ref().unwrap().resolve()?;
                    RecoveryTrainer::new(
                        DescriptorModel::new(spec, seed)?,
                        dataset,
                        rc.clone(),
                        seed,
                    )?
                }
            };
            t.run(rc.train.iterations.saturating_sub(t.iteration()), &mut sink)?;
            // Repair freshly corrupted copies of a few training grids.
            let dynamics = sampling_dynamics(&cfg, rc.train.langevin.steps, seed);
            for (i, clean) in demo.iter().enumerate() {
                let (bad, mask) = corrupt(
                    clean,
                    rc.rho,
                    rc.fill_std,
                    &mut derive_rng(seed, "demo-corrupt", 0, i as u64),
                )?;
                let fixed = recover(t.model(), &bad, &mask, &dynamics)?;
                save_grid(
                    &postprocess(clean, convention, mean),
                    out.join(format!("original_{i:02}.vgrid")),
                )?;
                save_grid(
                    &postprocess(&bad, convention, mean),
                    out.join(format!("corrupted_{i:02}.vgrid")),
                )?;
                save_grid(
                    &postprocess(&fixed, convention, mean),
                    out.join(format!("recovered_{i:02}.vgrid")),
                )?;
            }
            t.checkpoint()?
        }
        Task::Superres => {
            let sc = cfg.superres_config();
            let mut t = match &ck {
                Some(c) => SuperresTrainer::resume(c, dataset, sc.clone())?,
                None => {
                    let spec = cfg.descriptor.as_ref().unwrap().resolve()?;
                    SuperresTrainer::new(
                        DescriptorModel::new(spec, seed)?,
                        dataset,
                        sc.clone(),
                        seed,
                    )?
                }
            };
            t.run(sc.train.iterations.saturating_sub(t.iteration()), &mut sink)?;
            let scaler = GridScaler::new(sc.factor)?;
            let dynamics = sampling_dynamics(&cfg, sc.train.langevin.steps, seed);
            for (i, high) in demo.iter().enumerate() {
                let low = scaler.downscale(high)?;
                let up = superres(t.model(), &low, sc.factor, &dynamics)?;
                save_grid(
                    &postprocess(&low, convention, mean),
                    out.join(format!("low_{i:02}.vgrid")),
                )?;
                save_grid(
                    &postprocess(&up, convention, mean),
                    out.join(format!("super_{i:02}.vgrid")),
                )?;
            }
            t.checkpoint()?
        }
        Task::Multigrid => {
            let mc = cfg.multigrid_config();
            let mut t = match &ck {
                Some(c) => MultigridTrainer::resume(c, &dataset, mc.clone())?,
                None => {
                    let specs = cfg.grids.as_ref().unwrap().resolve()?;
                    MultigridTrainer::new(specs, &dataset, mc.clone(), seed)?
                }
            };
            t.run(mc.train.iterations.saturating_sub(t.iteration()), &mut sink)?;
            let dynamics = sampling_dynamics(&cfg, mc.train.langevin.steps, seed);
            let pyramids = t.sampler().sample(demo_count, &dynamics, seed)?;
            for (i, py) in pyramids.iter().enumerate() {
                for (s, g) in py.iter().enumerate() {
                    save_grid(
                        &postprocess(g, ValueConvention::Binary01, 0.0),
                        out.join(format!("sample_{i:02}_grid{s}.vgrid")),
                    )?;
                }
            }
            t.checkpoint()?
        }
        Task::Coop => {
            let cc = cfg.coop_config();
            let mut t = match &ck {
                Some(c) => CoopTrainer::resume(c, dataset, cc.clone())?,
                None => {
                    let dspec = cfg.descriptor.as_ref().unwrap().resolve()?;
                    let gspec = cfg.generator.as_ref().unwrap().resolve()?;
                    CoopTrainer::new(
                        DescriptorModel::new(dspec, seed)?,
                        crate::generator::GeneratorModel::new(gspec, seed.wrapping_add(1))?,
                        dataset,
                        cc.clone(),
                        seed,
                    )?
                }
            };
            t.run(cc.train.iterations.saturating_sub(t.iteration()), &mut sink)?;
            t.checkpoint()?
        }
    };

    checkpoint.meta.config = serde_json::to_value(&cfg)
        .map_err(|e| Error::Format(format!("config snapshot: {e}")))?;
    if matches!(want, Task::Synthesis | Task::Coop) {
        let grids = synthesize_from_checkpoint(&checkpoint, &cfg, demo_count, seed)?;
        write_samples(&out, &grids)?;
    }
    checkpoint.save(&out.join("checkpoint.vebm"))?;
    println!("wrote {}", out.join("checkpoint.vebm").display());
    Ok(())
}

// ── sample ──────────────────────────────────────────────────────────────

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = load_config(&None, Some(&ck))?;
    crate::init_threads(resolve_threads(args.threads, cfg.threads));
    let count = args.count.unwrap_or(cfg.sample.count);
    let out = args.out.unwrap_or_else(|| PathBuf::from("vebm-samples"));
    let _lock = LockGuard::acquire(&out)?;
    let grids = synthesize_from_checkpoint(&ck, &cfg, count, args.seed)?;
    write_samples(&out, &grids)?;
    println!(
        "wrote {count} sample grid{} to {}",
        if count == 1 { "" } else { "s" },
        out.display()
    );
    Ok(())
}

// ── eval ────────────────────────────────────────────────────────────────

const METRIC_NAMES: [&str; 5] = [
    "inception_score",
    "fid",
    "recovery_error",
    "softmax_prob",
    "classification_error",
];

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let cfg = load_config(&args.config, Some(&ck))?;
    crate::init_threads(resolve_threads(args.threads, cfg.threads));
    let out = args.out.unwrap_or_else(|| PathBuf::from("vebm-eval"));
    let _lock = LockGuard::acquire(&out)?;
    let seed = args.seed;
    let count = args.count.unwrap_or(cfg.sample.count).max(1);

    for m in &args.metrics {
        if !METRIC_NAMES.contains(&m.as_str()) {
            return Err(Error::Config(format!(
                "unknown metric {m:?}; available: {}",
                METRIC_NAMES.join(", ")
            )));
        }
    }

    let dataset = cfg.load_data()?;
    let classes = dataset.categories.len();
    let kind = ck.meta.kind.clone();
    let can_sample = matches!(kind.as_str(), "synthesis" | "multigrid" | "coop");

    let requested: Vec<String> = if args.metrics.is_empty() {
        let mut m = Vec::new();
        if can_sample {
            m.push("fid".to_string());
            if classes >= 2 {
                m.extend(
                    ["inception_score", "softmax_prob", "classification_error"]
                        .map(String::from),
                );
            }
        }
        if kind == "recovery" {
            m.push("recovery_error".to_string());
        }
        if m.is_empty() {
            return Err(Error::Config(format!(
                "no metrics apply to a {kind} checkpoint; request them explicitly"
            )));
        }
        m
    } else {
        args.metrics.clone()
    };
    let wants = |name: &str| requested.iter().any(|m| m == name);

    let needs_synthesis = wants("fid")
        || wants("inception_score")
        || wants("softmax_prob")
        || wants("classification_error");
    if needs_synthesis && !can_sample {
        return Err(Error::Config(format!(
            "sample-based metrics need a synthesis, multigrid, or coop checkpoint, not {kind}"
        )));
    }
    if wants("recovery_error") && kind != "recovery" {
        return Err(Error::Config(format!(
            "recovery_error needs a recovery checkpoint, not {kind}"
        )));
    }
    if (wants("inception_score") || wants("softmax_prob") || wants("classification_error"))
        && classes < 2
    {
        return Err(Error::Config(
            "classifier metrics need at least 2 categories in the evaluation data".into(),
        ));
    }

    let mut report = MetricsReport::default();

    if needs_synthesis {
        // Feature extractor: the descriptor this checkpoint trained (the
        // finest grid network of a cascade).
        let (spec, prefix) = match kind.as_str() {
            "coop" => (
                ck.meta
                    .descriptor
                    .clone()
                    .ok_or_else(|| Error::Format("checkpoint lists no descriptor".into()))?,
                "desc.".to_string(),
            ),
            "multigrid" => {
                let s = ck.meta.grids.len().checked_sub(1).ok_or_else(|| {
                    Error::Format("multigrid checkpoint lists no grid networks".into())
                })?;
                (ck.meta.grids[s].clone(), format!("grid{s}."))
            }
            _ => (
                ck.meta
                    .descriptor
                    .clone()
                    .ok_or_else(|| Error::Format("checkpoint lists no descriptor".into()))?,
                String::new(),
            ),
        };
        let feature_net = descriptor_at(&ck, spec, &prefix)?;
        let spec = FeatureSpec::default();

        // Both feature clouds live in the space the network trained on. A
        // cascade's finest network saw mean-subtracted values, which the
        // binary eval dataset doesn't record, so shift by the stored mean.
        let model_mean = ck.meta.data_mean.unwrap_or(0.0) as f32;
        let to_model = |g: &VoxelGrid| -> VoxelGrid {
            if kind == "multigrid" {
                g.map(|v| v - model_mean)
            } else {
                to_model_space(g, dataset.convention, dataset.mean)
            }
        };

        let real_grids: Vec<VoxelGrid> = dataset
            .grids
            .iter()
            .map(|g| to_model(&postprocess(g, dataset.convention, dataset.mean)))
            .collect();
        let real = extract_features(&feature_net, &VoxelBatch::from_grids(&real_grids)?, &spec)?;
        let syn_grids: Vec<VoxelGrid> = synthesize_from_checkpoint(&ck, &cfg, count, seed)?
            .iter()
            .map(&to_model)
            .collect();
        let syn = extract_features(&feature_net, &VoxelBatch::from_grids(&syn_grids)?, &spec)?;

        if wants("fid") {
            report.fid = Some(fid(&real, &syn)?);
        }
        if wants("inception_score") || wants("softmax_prob") || wants("classification_error") {
            let classifier =
                train_classifier(&real, &dataset.labels, classes, &ClassifierConfig::default())?;
            let target = target_class(&ck, &dataset);
            if wants("inception_score") {
                let rows: Vec<Vec<f32>> = syn
                    .iter()
                    .map(|f| crate::eval::classify(&classifier, f).map(|(_, p)| p))
                    .collect::<Result<_>>()?;
                report.inception_score = Some(inception_score(&rows)?);
            }
            if wants("softmax_prob") {
                report.softmax_prob = Some(softmax_class_prob(&classifier, &syn, target)?);
            }
            if wants("classification_error") {
                report.classification_error =
                    Some(classification_error(&classifier, &syn, target)?);
            }
        }
    }

    if wants("recovery_error") {
        let rc = cfg.recovery_config();
        let spec = ck
            .meta
            .descriptor
            .clone()
            .ok_or_else(|| Error::Format("checkpoint lists no descriptor".into()))?;
        let model = descriptor_at(&ck, spec, "")?;
        let dynamics = sampling_dynamics(&cfg, rc.train.langevin.steps, seed);
        let n = count.min(dataset.len());
        let mut acc = 0.0;
        for i in 0..n {
            let clean = &dataset.grids[i];
            let (bad, mask) = corrupt(
                clean,
                rc.rho,
                rc.fill_std,
                &mut derive_rng(seed, "eval-corrupt", 0, i as u64),
            )?;
            let fixed = recover(&model, &bad, &mask, &dynamics)?;
            let orig = postprocess(clean, dataset.convention, dataset.mean);
            let rec = postprocess(&fixed, dataset.convention, dataset.mean);
            acc += recovery_error(&orig, &rec, &mask)?;
        }
        report.recovery_error = Some(acc / n as f64);
    }

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("metrics report: {e}")))?;
    fs::write(out.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

/// The class index evaluation scores against: the first category named by
/// the training config, located in the evaluation dataset's category list.
fn target_class(ck: &Checkpoint, dataset: &Dataset) -> usize {
    let snapshot: Option<RunConfig> = serde_json::from_value(ck.meta.config.clone()).ok();
    let trained_on = snapshot.and_then(|c| match c.data {
        crate::config::DataConfig::Procedural { categories, .. } => categories.into_iter().next(),
        _ => None,
    });
    trained_on
        .and_then(|name| dataset.categories.iter().position(|c| *c == name))
        .unwrap_or(0)
}

// ── dataset / voxelize / export ─────────────────────────────────────────

fn cmd_dataset(args: DatasetArgs) -> Result<()> {
    let names = if args.categories.is_empty() {
        vec!["block-table".to_string()]
    } else {
        args.categories.clone()
    };
    let cats: Vec<ProcCategory> = names
        .iter()
        .map(|c| ProcCategory::parse(c))
        .collect::<Result<_>>()?;
    let _lock = LockGuard::acquire(&args.out)?;
    let ds = gen_procedural_mixed(
        &cats,
        args.count,
        [args.resolution; 3],
        args.seed,
    )?;
    save_dataset(&ds, &args.out)?;
    println!(
        "wrote {} grids ({} categories) to {}",
        ds.len(),
        cats.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_voxelize(args: VoxelizeArgs) -> Result<()> {
    let mut tris = load_mesh_obj(&args.mesh)?;
    normalize_mesh(&mut tris, args.margin)?;
    let (grid, rep) = voxelize_mesh(&tris, args.resolution)?;
    if rep.disagreements > 0 || rep.unresolved_rays > 0 {
        eprintln!(
            "warning: parity votes disagreed on {} voxels, {} rays stayed degenerate \
             (is the mesh watertight?)",
            rep.disagreements, rep.unresolved_rays
        );
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("."));
    let _lock = LockGuard::acquire(&out)?;
    let stem = args
        .mesh
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "mesh".into());
    let path = out.join(format!("{stem}.vgrid"));
    save_grid(&grid, &path)?;
    println!(
        "voxelized {} at {}³ (occupancy {:.1}%), wrote {}",
        args.mesh.display(),
        args.resolution,
        100.0 * grid.mean(),
        path.display()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let grid = load_grid(&args.grid)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from("."));
    let _lock = LockGuard::acquire(&out)?;
    let stem = args
        .grid
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "grid".into());
    let path = out.join(format!("{stem}.obj"));
    let stats = export_obj(&grid, args.threshold, &path)?;
    println!(
        "wrote {} ({} vertices, {} triangles)",
        path.display(),
        stats.vertices,
        stats.triangles
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    /// 8³ synthesis run small enough for a unit test: two-conv descriptor
    /// (so the default feature taps resolve), four iterations, two demo
    /// samples.
    fn tiny_synthesis_config(iterations: u64) -> String {
        format!(
            r#"{{
              "task": "synthesis",
              "seed": 11,
              "data": {{"procedural": {{"categories": ["block-table"], "per_category": 6,
                        "extents": [8, 8, 8], "seed": 3}}}},
              "descriptor": {{"explicit": {{
                "extents": [8, 8, 8],
                "layers": [
                  {{"kind": "conv3d", "out_channels": 4, "kernel": 4, "stride": 2}},
                  {{"kind": "relu"}},
                  {{"kind": "conv3d", "out_channels": 6, "kernel": 3, "stride": 1}},
                  {{"kind": "relu"}},
                  {{"kind": "fully-connected", "out_features": 1}}
                ],
                "ref_std": 0.5
              }}}},
              "train": {{"iterations": {iterations}, "batch_size": 3, "chain_count": 2,
                        "langevin": {{"steps": 3}}}},
              "sample": {{"count": 2, "steps": 4}}
            }}"#
        )
    }

    fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, body).unwrap();
        path
    }

    fn train_args(config: &Path, checkpoint: Option<&Path>, out: &Path) -> RunArgs {
        RunArgs {
            config: Some(config.to_path_buf()),
            checkpoint: checkpoint.map(Path::to_path_buf),
            seed: None,
            out: Some(out.to_path_buf()),
            count: None,
            threads: None,
        }
    }

    fn read(path: &Path) -> Vec<u8> {
        fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
    }

    #[test]
    fn lock_guard_excludes_second_writer_and_releases_on_drop() {
        let dir = TempDir::new().unwrap();
        let first = LockGuard::acquire(dir.path()).unwrap();
        let second = LockGuard::acquire(dir.path());
        assert!(matches!(second, Err(Error::Io(_))));
        assert!(second.unwrap_err().to_string().contains(LOCK_FILE));
        drop(first);
        assert!(!dir.path().join(LOCK_FILE).exists());
        LockGuard::acquire(dir.path()).unwrap();
    }

    #[test]
    fn thread_count_prefers_flag_then_env_then_config() {
        assert_eq!(resolve_threads(Some(3), Some(8)), Some(3));
        std::env::set_var("VEBM_THREADS", "5");
        assert_eq!(resolve_threads(None, Some(8)), Some(5));
        assert_eq!(resolve_threads(Some(3), Some(8)), Some(3));
        std::env::remove_var("VEBM_THREADS");
        assert_eq!(resolve_threads(None, Some(8)), Some(8));
        assert_eq!(resolve_threads(None, None), None);
    }

    #[test]
    fn command_line_parses_flags_and_positional_metrics() {
        let cli = Cli::try_parse_from([
            "vebm", "train", "--config", "run.json", "--seed", "7", "--count", "4",
        ])
        .unwrap();
        match cli.command {
            Command::Train(a) => {
                assert_eq!(a.seed, Some(7));
                assert_eq!(a.count, Some(4));
                assert_eq!(a.config.as_deref(), Some(Path::new("run.json")));
            }
            _ => panic!("parsed into the wrong subcommand"),
        }
        let cli = Cli::try_parse_from([
            "vebm", "eval", "--checkpoint", "c.vebm", "fid", "inception_score",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(a) => assert_eq!(a.metrics, ["fid", "inception_score"]),
            _ => panic!("parsed into the wrong subcommand"),
        }
    }

    #[test]
    fn config_for_another_task_is_rejected_by_name() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_synthesis_config(1));
        let err = cmd_train_like(Task::Recovery, train_args(&cfg, None, &dir.path().join("out")))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("synthesis") && msg.contains("recovery"), "{msg}");
    }

    #[test]
    fn unknown_config_key_is_named_in_the_error() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(
            dir.path(),
            "run.json",
            r#"{"task": "synthesis", "sample_count": 9}"#,
        );
        let err = cmd_train_like(Task::Synthesis, train_args(&cfg, None, &dir.path().join("out")))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("sample_count"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rerunning_a_training_command_reproduces_every_artifact() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_synthesis_config(4));
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        cmd_train_like(Task::Synthesis, train_args(&cfg, None, &a)).unwrap();
        cmd_train_like(Task::Synthesis, train_args(&cfg, None, &b)).unwrap();
        for name in [
            "checkpoint.vebm",
            "diagnostics.jsonl",
            "config.json",
            "sample_0000.vgrid",
            "sample_0001.vgrid",
        ] {
            assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs");
        }
    }

    #[test]
    fn resuming_matches_the_uninterrupted_run_byte_for_byte() {
        let dir = TempDir::new().unwrap();
        let full = write_config(dir.path(), "full.json", &tiny_synthesis_config(4));
        let half = write_config(dir.path(), "half.json", &tiny_synthesis_config(2));
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        cmd_train_like(Task::Synthesis, train_args(&full, None, &a)).unwrap();
        cmd_train_like(Task::Synthesis, train_args(&half, None, &b)).unwrap();
        let ck = b.join("checkpoint.vebm");
        cmd_train_like(Task::Synthesis, train_args(&full, Some(&ck), &b)).unwrap();
        for name in ["checkpoint.vebm", "diagnostics.jsonl", "sample_0000.vgrid"] {
            assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs");
        }
    }

    #[test]
    fn resuming_under_a_different_seed_is_refused() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_synthesis_config(1));
        let out = dir.path().join("out");
        cmd_train_like(Task::Synthesis, train_args(&cfg, None, &out)).unwrap();
        let mut args = train_args(&cfg, Some(&out.join("checkpoint.vebm")), &out);
        args.seed = Some(99);
        let err = cmd_train_like(Task::Synthesis, args).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn sampling_zero_grids_succeeds_and_writes_nothing() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_synthesis_config(1));
        let out = dir.path().join("out");
        cmd_train_like(Task::Synthesis, train_args(&cfg, None, &out)).unwrap();
        let samples = dir.path().join("samples");
        cmd_sample(SampleArgs {
            checkpoint: out.join("checkpoint.vebm"),
            seed: 0,
            out: Some(samples.clone()),
            count: Some(0),
            threads: None,
        })
        .unwrap();
        let written: Vec<_> = fs::read_dir(&samples).unwrap().collect();
        assert!(written.is_empty(), "expected an empty directory");
    }

    #[test]
    fn repair_checkpoints_cannot_be_sampled_from() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(
            dir.path(),
            "run.json",
            r#"{
              "task": "recovery",
              "seed": 5,
              "data": {"procedural": {"categories": ["block-table"], "per_category": 4,
                       "extents": [8, 8, 8], "seed": 3}},
              "descriptor": {"explicit": {
                "extents": [8, 8, 8],
                "layers": [
                  {"kind": "conv3d", "out_channels": 4, "kernel": 4, "stride": 2},
                  {"kind": "relu"},
                  {"kind": "fully-connected", "out_features": 1}
                ],
                "ref_std": 0.5
              }},
              "recovery": {"train": {"iterations": 1, "batch_size": 2, "chain_count": 2,
                           "chain_init": "data-init", "langevin": {"steps": 2, "step_size": 0.005}}},
              "sample": {"count": 1, "steps": 2}
            }"#,
        );
        let out = dir.path().join("out");
        cmd_train_like(Task::Recovery, train_args(&cfg, None, &out)).unwrap();
        assert!(out.join("recovered_00.vgrid").exists());
        let err = cmd_sample(SampleArgs {
            checkpoint: out.join("checkpoint.vebm"),
            seed: 0,
            out: Some(dir.path().join("samples")),
            count: None,
            threads: None,
        })
        .unwrap_err();
        assert!(err.to_string().contains("recovery"), "{err}");
    }

    #[test]
    fn eval_reports_exactly_the_requested_metrics() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_synthesis_config(1));
        let out = dir.path().join("out");
        cmd_train_like(Task::Synthesis, train_args(&cfg, None, &out)).unwrap();
        let eval_out = dir.path().join("eval");
        cmd_eval(EvalArgs {
            checkpoint: out.join("checkpoint.vebm"),
            config: None,
            seed: 1,
            out: Some(eval_out.clone()),
            count: Some(3),
            threads: None,
            metrics: vec!["fid".into()],
        })
        .unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(eval_out.join("metrics.json")).unwrap())
                .unwrap();
        let keys: Vec<_> = report.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["fid"]);
        assert!(report["fid"].as_f64().unwrap().is_finite());
    }

    #[test]
    fn unknown_metric_names_are_rejected() {
        let dir = TempDir::new().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_synthesis_config(1));
        let out = dir.path().join("out");
        cmd_train_like(Task::Synthesis, train_args(&cfg, None, &out)).unwrap();
        let err = cmd_eval(EvalArgs {
            checkpoint: out.join("checkpoint.vebm"),
            config: None,
            seed: 0,
            out: Some(dir.path().join("eval")),
            count: None,
            threads: None,
            metrics: vec!["frechet".into()],
        })
        .unwrap_err();
        assert!(err.to_string().contains("frechet"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn dataset_export_voxelize_round_trip() {
        let dir = TempDir::new().unwrap();
        let ds = dir.path().join("ds");
        cmd_dataset(DatasetArgs {
            out: ds.clone(),
            count: 2,
            seed: 5,
            resolution: 8,
            categories: vec!["block-table".into(), "block-chair".into()],
        })
        .unwrap();
        assert!(ds.join("labels.json").exists());
        let grids: Vec<_> = fs::read_dir(&ds)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "vgrid"))
            .collect();
        assert_eq!(grids.len(), 4);

        let mesh_dir = dir.path().join("mesh");
        cmd_export(ExportArgs {
            grid: ds.join("grid_0000.vgrid"),
            threshold: 0.5,
            out: Some(mesh_dir.clone()),
        })
        .unwrap();
        let obj = mesh_dir.join("grid_0000.obj");
        assert!(obj.exists());

        let vox_dir = dir.path().join("vox");
        cmd_voxelize(VoxelizeArgs {
            mesh: obj,
            resolution: 8,
            margin: 0.05,
            out: Some(vox_dir.clone()),
        })
        .unwrap();
        let grid = load_grid(&vox_dir.join("grid_0000.vgrid")).unwrap();
        assert_eq!(grid.extents(), [8, 8, 8]);
        assert!(grid.mean() > 0.0, "voxelization produced an empty grid");
    }
}
