//! Layer vocabulary, parameter containers, and the Adam optimizer.
//!
//! Networks are declared as a list of [`LayerSpec`]s and lowered onto a
//! [`Graph`](crate::graph::Graph) by [`build_stack`], which also creates and
//! initializes every parameter tensor. Weights start at N(0, 0.01²) with zero
//! biases, so a fresh scoring network computes almost exactly zero and the
//! reference distribution dominates early sampling; batchnorm starts as the
//! identity affine with zeroed running statistics.

use crate::error::{Error, Result};
use crate::graph::{Bindings, GradMap, Graph, NodeId, ValueKind, Values};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default weight-initialization standard deviation.
pub const INIT_STD: f32 = 0.01;
/// Batchnorm epsilon.
pub const BN_EPS: f32 = 1e-5;
/// Running-statistics momentum: `running = momentum·running + (1-momentum)·batch`.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv3d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Deconv3d {
        out_channels: usize,
        kernel: usize,
        up: usize,
    },
    FullyConnected {
        out_features: usize,
    },
    Relu,
    Tanh,
    BatchNorm3d,
    MaxPool3d {
        kernel: usize,
    },
    /// Reinterpret each sample's values with a new shape (no parameters).
    Reshape {
        shape: Vec<usize>,
    },
}

/// One named parameter (or non-trainable state tensor) bound to a graph leaf.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub node: NodeId,
    pub tensor: Tensor,
    /// False for state such as batchnorm running statistics, which is stored
    /// and checkpointed but never touched by the optimizer.
    pub trainable: bool,
}

/// The parameters of one network, in creation order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, node: NodeId, tensor: Tensor, trainable: bool) {
        self.entries.push(ParamEntry {
            name: name.into(),
            node,
            tensor,
            trainable,
        });
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    /// Replace a parameter value (used when loading checkpoints); the shape
    /// must match the existing tensor.
    pub fn assign(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Data(format!("no parameter named {name:?}")))?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter {name:?} has shape {:?}, checkpoint value has {:?}",
                entry.tensor.shape(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor;
        Ok(())
    }

    /// Bind every parameter tensor into `bindings`.
    pub fn bind_all<'a>(&'a self, bindings: &mut Bindings<'a>) {
        for e in &self.entries {
            bindings.bind(e.node, &e.tensor);
        }
    }

    pub fn trainable(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter().filter(|e| e.trainable)
    }

    /// Total number of scalar values across trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.trainable().map(|e| e.tensor.numel()).sum()
    }

    /// L2 norm over the trainable gradient tensors in `grads` (missing
    /// gradients count as zero).
    pub fn grad_norm(&self, grads: &GradMap) -> f64 {
        let mut acc = 0.0f64;
        for e in self.trainable() {
            if let Some(g) = grads.get(e.node) {
                acc += g.sum_sq();
            }
        }
        acc.sqrt()
    }
}

/// Output node and parameters of a lowered layer stack.
pub struct LayerStack {
    pub output: NodeId,
    pub params: ParamSet,
    /// Output node of each layer, in [`LayerSpec`] order.
    pub layer_outputs: Vec<NodeId>,
}

/// Lower `layers` onto the graph starting from `input`, creating freshly
/// initialized parameters. Parameter names are `conv1.weight`, `bn2.scale`,
/// and so on, numbered per layer kind in order of appearance; `prefix` is
/// prepended verbatim (use e.g. `"gen."` to namespace several networks in one
/// checkpoint).
pub fn build_stack<R: Rng>(
    graph: &mut Graph,
    input: NodeId,
    layers: &[LayerSpec],
    prefix: &str,
    rng: &mut R,
) -> Result<LayerStack> {
    let mut params = ParamSet::new();
    let mut cur = input;
    let mut layer_outputs = Vec::with_capacity(layers.len());
    let mut counts = [0usize; 4]; // conv, deconv, fc, bn

    for spec in layers {
        let per: Vec<usize> = match graph.kind(cur) {
            ValueKind::Batched(s) => s.clone(),
            k => {
                return Err(Error::Shape(format!(
                    "layer stack needs batched values, found {k:?}"
                )))
            }
        };
        match spec.clone() {
            LayerSpec::Conv3d {
                out_channels,
                kernel,
                stride,
            } => {
                if per.len() != 4 {
                    return Err(Error::Shape(format!(
                        "conv3d needs a [c,d,h,w] input, got {per:?}"
                    )));
                }
                counts[0] += 1;
                let base = format!("{prefix}conv{}", counts[0]);
                let wshape = [out_channels, per[0], kernel, kernel, kernel];
                let w = graph.param(&format!("{base}.weight"), &wshape);
                let b = graph.param(&format!("{base}.bias"), &[out_channels]);
                params.push(
                    format!("{base}.weight"),
                    w,
                    Tensor::randn(&wshape, INIT_STD, rng),
                    true,
                );
                params.push(format!("{base}.bias"), b, Tensor::zeros(&[out_channels]), true);
                cur = graph.conv3d(cur, w, b, stride)?;
            }
            LayerSpec::Deconv3d {
                out_channels,
                kernel,
                up,
            } => {
                if per.len() != 4 {
                    return Err(Error::Shape(format!(
                        "deconv3d needs a [c,d,h,w] input, got {per:?}"
                    )));
                }
                counts[1] += 1;
                let base = format!("{prefix}deconv{}", counts[1]);
                let wshape = [per[0], out_channels, kernel, kernel, kernel];
                let w = graph.param(&format!("{base}.weight"), &wshape);
                let b = graph.param(&format!("{base}.bias"), &[out_channels]);
                params.push(
                    format!("{base}.weight"),
                    w,
                    Tensor::randn(&wshape, INIT_STD, rng),
                    true,
                );
                params.push(format!("{base}.bias"), b, Tensor::zeros(&[out_channels]), true);
                cur = graph.deconv3d(cur, w, b, up)?;
            }
            LayerSpec::FullyConnected { out_features } => {
                counts[2] += 1;
                let base = format!("{prefix}fc{}", counts[2]);
                let in_features: usize = per.iter().product();
                let wshape = [out_features, in_features];
                let w = graph.param(&format!("{base}.weight"), &wshape);
                let b = graph.param(&format!("{base}.bias"), &[out_features]);
                params.push(
                    format!("{base}.weight"),
                    w,
                    Tensor::randn(&wshape, INIT_STD, rng),
                    true,
                );
                params.push(format!("{base}.bias"), b, Tensor::zeros(&[out_features]), true);
                cur = graph.fully_connected(cur, w, b)?;
            }
            LayerSpec::Relu => cur = graph.relu(cur),
            LayerSpec::Tanh => cur = graph.tanh(cur),
            LayerSpec::BatchNorm3d => {
                if per.len() != 4 {
                    return Err(Error::Shape(format!(
                        "batchnorm3d needs a [c,d,h,w] input, got {per:?}"
                    )));
                }
                counts[3] += 1;
                let base = format!("{prefix}bn{}", counts[3]);
                let c = per[0];
                let scale = graph.param(&format!("{base}.scale"), &[c]);
                let shift = graph.param(&format!("{base}.shift"), &[c]);
                let rm = graph.state(&format!("{base}.running_mean"), &[c]);
                let rv = graph.state(&format!("{base}.running_var"), &[c]);
                params.push(format!("{base}.scale"), scale, Tensor::filled(&[c], 1.0), true);
                params.push(format!("{base}.shift"), shift, Tensor::zeros(&[c]), true);
                params.push(format!("{base}.running_mean"), rm, Tensor::zeros(&[c]), false);
                params.push(format!("{base}.running_var"), rv, Tensor::filled(&[c], 1.0), false);
                cur = graph.batchnorm3d(cur, scale, shift, rm, rv, BN_EPS)?;
            }
            LayerSpec::MaxPool3d { kernel } => {
                cur = graph.maxpool3d(cur, kernel)?;
            }
            LayerSpec::Reshape { shape } => {
                cur = graph.reshape(cur, &shape)?;
            }
        }
        layer_outputs.push(cur);
    }
    Ok(LayerStack {
        output: cur,
        params,
        layer_outputs,
    })
}

/// Folds the batch statistics of every batchnorm layer in a lowered stack
/// into its running mean/variance with [`BN_MOMENTUM`], reading each layer's
/// input activation from a finished training-mode forward pass.
///
/// Must be called with the same `layers`, stack input node, layer outputs,
/// and `prefix` that built the stack; does nothing for stacks without
/// batchnorm.
pub fn fold_running_stats(
    layers: &[LayerSpec],
    stack_input: NodeId,
    layer_outputs: &[NodeId],
    prefix: &str,
    params: &mut ParamSet,
    values: &Values,
) -> Result<()> {
    let mut bn = 0usize;
    for (i, spec) in layers.iter().enumerate() {
        if !matches!(spec, LayerSpec::BatchNorm3d) {
            continue;
        }
        bn += 1;
        let src = if i == 0 { stack_input } else { layer_outputs[i - 1] };
        let x = values.get(src);
        let (mean, var) = crate::kernels::batchnorm_batch_stats(x.data(), x.shape());
        for (stat, batch) in [("running_mean", mean), ("running_var", var)] {
            let name = format!("{prefix}bn{bn}.{stat}");
            let t = params
                .tensor_mut(&name)
                .ok_or_else(|| Error::Unbound(format!("missing state tensor '{name}'")))?;
            for (r, &b) in t.data_mut().iter_mut().zip(&batch) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b as f32;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        // beta1 = 0.5 is the training default here (momentum hurts when the
        // gradient flips sign as the sampler catches up with the model).
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for the trainable entries of one
/// [`ParamSet`], aligned by trainable index.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> AdamState {
        let m = params
            .trainable()
            .map(|e| Tensor::zeros(e.tensor.shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }
}

/// One bias-corrected Adam **descent** step: `θ ← θ − lr·m̂/(√v̂ + ε)`.
/// Callers maximizing an objective negate their gradient first. Trainable
/// parameters with no entry in `grads` receive a zero gradient.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &mut GradMap,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f32,
) -> Result<()> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (cfg.beta1 as f64).powf(t);
    let bc2 = 1.0 - (cfg.beta2 as f64).powf(t);

    let nodes: Vec<(usize, NodeId, String)> = params
        .trainable()
        .enumerate()
        .map(|(i, e)| (i, e.node, e.name.clone()))
        .collect();
    for (i, node, name) in nodes {
        let grad = grads.take(node);
        let entry = params
            .entries
            .iter_mut()
            .filter(|e| e.trainable)
            .nth(i)
            .expect("trainable index in range");
        if let Some(g) = &grad {
            if g.shape() != entry.tensor.shape() {
                return Err(Error::Shape(format!(
                    "gradient for {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    entry.tensor.shape()
                )));
            }
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = entry.tensor.data_mut();
        for j in 0..p.len() {
            let g = grad.as_ref().map_or(0.0, |g| g.data()[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let mhat = m[j] as f64 / bc1;
            let vhat = v[j] as f64 / bc2;
            p[j] -= (lr as f64 * mhat / (vhat.sqrt() + cfg.eps as f64)) as f32;
        }
        if !entry.tensor.all_finite() {
            return Err(Error::NonFinite {
                node: node.0,
                detail: format!("parameter {name:?} became non-finite during the optimizer update"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{forward, Mode};
    use crate::rng::derive_rng;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut g = Graph::new();
        let x = g.input("x", &[1]);
        let stack = build_stack(
            &mut g,
            x,
            &[LayerSpec::FullyConnected { out_features: 1 }],
            "",
            &mut derive_rng(0, "init", 0, 0),
        )
        .unwrap();
        let mut params = stack.params;
        let before: Vec<Vec<f32>> = params.entries().iter().map(|e| e.tensor.data().to_vec()).collect();
        let mut state = AdamState::for_params(&params);
        let mut grads = GradMap::for_graph(&g);
        adam_step(&mut params, &mut grads, &mut state, &AdamConfig::default(), 0.01).unwrap();
        assert_eq!(state.step, 1);
        for (e, b) in params.entries().iter().zip(&before) {
            assert_eq!(e.tensor.data(), &b[..]);
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut g = Graph::new();
        let w = g.param("w", &[3]);
        let mut params = ParamSet::new();
        params.push("w", w, Tensor::zeros(&[3]), true);
        let mut state = AdamState::for_params(&params);
        let mut grads = GradMap::for_graph(&g);
        grads.insert(w, Tensor::from_vec(&[3], vec![0.7, -2.0, 0.001]).unwrap());
        adam_step(&mut params, &mut grads, &mut state, &AdamConfig::default(), 0.1).unwrap();
        let p = params.get("w").unwrap().tensor.data();
        for (i, sign) in [(0, 1.0f32), (1, -1.0), (2, 1.0)] {
            assert!(
                (p[i] + 0.1 * sign).abs() < 1e-3,
                "elem {i}: got {}, want {}",
                p[i],
                -0.1 * sign
            );
        }
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        let mut g = Graph::new();
        let w = g.param("w", &[1]);
        let mut params = ParamSet::new();
        params.push("w", w, Tensor::from_vec(&[1], vec![1.0]).unwrap(), true);
        let mut state = AdamState::for_params(&params);
        let mut prev = 1.0f32;
        for _ in 0..10 {
            let x = params.get("w").unwrap().tensor.data()[0];
            let mut grads = GradMap::for_graph(&g);
            grads.insert(w, Tensor::from_vec(&[1], vec![2.0 * x]).unwrap());
            adam_step(&mut params, &mut grads, &mut state, &AdamConfig::default(), 0.1).unwrap();
            let now = params.get("w").unwrap().tensor.data()[0];
            assert!(now.abs() < prev.abs(), "{now} should shrink from {prev}");
            prev = now;
        }
    }

    #[test]
    fn stack_shapes_follow_ceil_division() {
        // 32³ input, 16³ kernel stride 3 → 11³; 6³ kernel stride 2 → 6³; FC → scalar.
        let mut g = Graph::new();
        let x = g.input("y", &[1, 32, 32, 32]);
        let stack = build_stack(
            &mut g,
            x,
            &[
                LayerSpec::Conv3d { out_channels: 4, kernel: 16, stride: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv3d { out_channels: 5, kernel: 6, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
            "",
            &mut derive_rng(0, "init", 0, 0),
        )
        .unwrap();
        assert_eq!(g.kind(stack.output).per_sample(), Some(&[1usize][..]));
        // Walk back: the fc weight must flatten 5 × 6³ features.
        let wf = stack.params.get("fc1.weight").unwrap();
        assert_eq!(wf.tensor.shape(), &[1, 5 * 6 * 6 * 6]);
        let names: Vec<&str> = stack.params.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(
            names,
            vec!["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc1.weight", "fc1.bias"]
        );
    }

    #[test]
    fn stack_init_is_seed_deterministic_and_biases_zero() {
        let layers = [
            LayerSpec::Conv3d { out_channels: 2, kernel: 3, stride: 2 },
            LayerSpec::BatchNorm3d,
            LayerSpec::Relu,
            LayerSpec::FullyConnected { out_features: 1 },
        ];
        let mut g1 = Graph::new();
        let x1 = g1.input("y", &[1, 4, 4, 4]);
        let s1 = build_stack(&mut g1, x1, &layers, "", &mut derive_rng(7, "init", 0, 0)).unwrap();
        let mut g2 = Graph::new();
        let x2 = g2.input("y", &[1, 4, 4, 4]);
        let s2 = build_stack(&mut g2, x2, &layers, "", &mut derive_rng(7, "init", 0, 0)).unwrap();
        for (a, b) in s1.params.entries().iter().zip(s2.params.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
        assert!(s1.params.get("conv1.bias").unwrap().tensor.data().iter().all(|&v| v == 0.0));
        assert!(s1.params.get("bn1.scale").unwrap().tensor.data().iter().all(|&v| v == 1.0));
        assert!(!s1.params.get("bn1.running_mean").unwrap().trainable);

        // A freshly initialized scoring head is almost exactly zero.
        let xt = Tensor::randn(&[2, 1, 4, 4, 4], 1.0, &mut derive_rng(8, "x", 0, 0));
        let mut b = Bindings::for_graph(&g1);
        b.bind(x1, &xt);
        s1.params.bind_all(&mut b);
        let vals = forward(&g1, &b, Mode::Train).unwrap();
        for &v in vals.get(s1.output).data() {
            assert!(v.abs() < 0.05, "fresh score {v} should be near zero");
        }
    }

    #[test]
    fn batchnorm_after_flatten_is_rejected() {
        let mut g = Graph::new();
        let x = g.input("y", &[1, 4, 4, 4]);
        let err = build_stack(
            &mut g,
            x,
            &[
                LayerSpec::FullyConnected { out_features: 8 },
                LayerSpec::BatchNorm3d,
            ],
            "",
            &mut derive_rng(0, "init", 0, 0),
        );
        assert!(err.is_err());
    }

    #[test]
    fn layer_spec_serde_round_trip() {
        let layers = vec![
            LayerSpec::Conv3d { out_channels: 200, kernel: 16, stride: 3 },
            LayerSpec::Relu,
            LayerSpec::MaxPool3d { kernel: 2 },
            LayerSpec::Deconv3d { out_channels: 64, kernel: 4, up: 2 },
            LayerSpec::BatchNorm3d,
            LayerSpec::Tanh,
            LayerSpec::FullyConnected { out_features: 1 },
        ];
        let json = serde_json::to_string(&layers).unwrap();
        assert!(json.contains("\"kind\":\"conv3d\""));
        let back: Vec<LayerSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, layers);
    }
}
