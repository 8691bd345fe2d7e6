//! Energy-based generative modeling of 3-D voxel grids.
//!
//! This crate trains a volumetric energy-based model ("descriptor") whose
//! density is `p(Y; θ) ∝ exp(f(Y; θ)) · p₀(Y)`, where `f` is a small 3-D
//! ConvNet mapping a voxel grid to a scalar and `p₀` is an isotropic Gaussian
//! reference distribution. Training is maximum likelihood: synthesized
//! examples are drawn by Langevin dynamics on the learned energy landscape,
//! and the parameter gradient is the difference between the model's average
//! response to observed and synthesized grids. On top of that one engine sit:
//!
//! - unconditional synthesis ([`training::MleTrainer`]),
//! - shape recovery from partial observations via conditional Langevin
//!   sampling ([`training::RecoveryTrainer`]),
//! - super-resolution via Langevin sampling projected onto the null space of
//!   the downscaling operator ([`training::SuperresTrainer`]),
//! - a multi-grid cascade that samples coarse-to-fine ([`training::MultigridTrainer`]),
//! - cooperative training of a latent-variable generator network that learns
//!   from the Langevin revisions of its own proposals ([`training::CoopTrainer`]),
//! - evaluation utilities: unsupervised feature extraction, a softmax
//!   classifier over those features, inception score, Fréchet distance,
//!   recovery error, and nearest neighbors ([`eval`]).
//!
//! Start with the runnable examples (`cargo run --release -p vebm --example
//! synthesis`), or the `vebm` binary for the file-driven workflow. Everything
//! is deterministic given a seed: reruns produce byte-identical checkpoints,
//! samples, and diagnostics, and resuming from a checkpoint continues the
//! exact trajectory of an uninterrupted run.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod generator;
pub mod graph;
pub mod grid;
pub mod langevin;
pub mod nn;
mod kernels;
pub mod oracle;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Configure the global compute thread pool. `None` keeps the library default
/// (one thread per core). Calling this after the pool already started is a
/// no-op, so it is safe to call from several entry points.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}
