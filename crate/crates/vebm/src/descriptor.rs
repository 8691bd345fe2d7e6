//! The scoring network f(Y; θ) and the energy it induces.
//!
//! The model density is an exponential tilting of a Gaussian reference:
//! `p(Y; θ) ∝ exp(f(Y; θ)) · exp(−‖Y‖²/2s²)`, so the energy splits as
//! `E(Y; θ) = ‖Y‖²/(2s²) − f(Y; θ)`. The scoring function is a small 3-D
//! ConvNet ending in a scalar fully-connected head; everything the samplers
//! and trainers need — scores, energies, input gradients, parameter
//! gradients — is computed from one shared graph.
//!
//! Scoring always runs the graph in inference mode, so a descriptor is a pure
//! function of (θ, Y).

use crate::data::VoxelBatch;
use crate::error::{Error, Result};
use crate::graph::{backward, forward, Bindings, GradMap, Graph, GradScope, Mode, NodeId, Values};
use crate::nn::{build_stack, LayerSpec, ParamSet};
use crate::rng::derive_rng;
use serde::{Deserialize, Serialize};

/// Architecture and reference distribution of one descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorSpec {
    /// Spatial extents of the (single-channel) input grid.
    pub extents: [usize; 3],
    pub layers: Vec<LayerSpec>,
    /// Standard deviation `s` of the Gaussian reference distribution.
    pub ref_std: f32,
}

pub const DEFAULT_REF_STD: f32 = 0.5;

impl DescriptorSpec {
    pub fn new(extents: [usize; 3], layers: Vec<LayerSpec>) -> DescriptorSpec {
        DescriptorSpec {
            extents,
            layers,
            ref_std: DEFAULT_REF_STD,
        }
    }

    /// 3-layer synthesis network for 32³ grids: 200 16³ filters at stride 3,
    /// 100 6³ filters at stride 2, scalar head.
    pub fn synthesis_32() -> DescriptorSpec {
        DescriptorSpec::new(
            [32; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 200, kernel: 16, stride: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv3d { out_channels: 100, kernel: 6, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        )
    }

    /// 2-layer recovery network for 32³ grids: 100 16³ filters at stride 3,
    /// scalar head.
    pub fn recovery_32() -> DescriptorSpec {
        DescriptorSpec::new(
            [32; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 100, kernel: 16, stride: 3 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        )
    }

    /// 2-layer super-resolution network for 32³ grids: 200 16³ filters at
    /// stride 3, scalar head.
    pub fn superres_32() -> DescriptorSpec {
        DescriptorSpec::new(
            [32; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 200, kernel: 16, stride: 3 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        )
    }

    /// 4-layer descriptor used opposite the generator on 32³ grids:
    /// 64 9³ / 128 7³ / 256 4³ filters, each at stride 2, scalar head.
    pub fn cooperative_32() -> DescriptorSpec {
        DescriptorSpec::new(
            [32; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 64, kernel: 9, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv3d { out_channels: 128, kernel: 7, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv3d { out_channels: 256, kernel: 4, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        )
    }

    /// Small 2-conv network for 16³ grids, sized to train in seconds on one
    /// core: 8 5³ filters at stride 2, 16 3³ filters at stride 2, scalar head.
    pub fn desk_16() -> DescriptorSpec {
        DescriptorSpec::new(
            [16; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 8, kernel: 5, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv3d { out_channels: 16, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        )
    }

    /// One small network per level of the desk ladder 4³ → 8³ → 16³ (the 1³
    /// root is the histogram model, not a network).
    pub fn desk_ladder() -> Vec<DescriptorSpec> {
        vec![
            DescriptorSpec::new(
                [4; 3],
                vec![
                    LayerSpec::Conv3d { out_channels: 8, kernel: 3, stride: 1 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { out_features: 1 },
                ],
            ),
            DescriptorSpec::new(
                [8; 3],
                vec![
                    LayerSpec::Conv3d { out_channels: 8, kernel: 4, stride: 2 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { out_features: 1 },
                ],
            ),
            DescriptorSpec::desk_16(),
        ]
    }

    /// The five per-grid networks of the 128³ cascade (grids 4³, 16³, 32³,
    /// 64³, 128³ above the histogram root).
    pub fn ladder_128() -> Vec<DescriptorSpec> {
        let three_layer = |edge: usize, k1: usize, s1: usize, k2: usize| {
            DescriptorSpec::new(
                [edge; 3],
                vec![
                    LayerSpec::Conv3d { out_channels: 256, kernel: k1, stride: s1 },
                    LayerSpec::Relu,
                    LayerSpec::Conv3d { out_channels: 128, kernel: k2, stride: 2 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { out_features: 1 },
                ],
            )
        };
        vec![
            DescriptorSpec::new(
                [4; 3],
                vec![
                    LayerSpec::Conv3d { out_channels: 128, kernel: 4, stride: 1 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { out_features: 1 },
                ],
            ),
            DescriptorSpec::new(
                [16; 3],
                vec![
                    LayerSpec::Conv3d { out_channels: 256, kernel: 8, stride: 2 },
                    LayerSpec::Relu,
                    LayerSpec::FullyConnected { out_features: 1 },
                ],
            ),
            three_layer(32, 16, 3, 6),
            three_layer(64, 16, 3, 6),
            three_layer(128, 16, 4, 8),
        ]
    }
}

/// A descriptor: the lowered scoring graph plus its parameters.
#[derive(Clone)]
pub struct DescriptorModel {
    spec: DescriptorSpec,
    graph: Graph,
    input: NodeId,
    scores: NodeId,
    score_sum: NodeId,
    layer_outputs: Vec<NodeId>,
    pub params: ParamSet,
}

impl DescriptorModel {
    /// Build the graph and initialize parameters from `seed`.
    pub fn new(spec: DescriptorSpec, seed: u64) -> Result<DescriptorModel> {
        if spec.ref_std <= 0.0 {
            return Err(Error::Config(format!(
                "reference standard deviation must be positive, got {}",
                spec.ref_std
            )));
        }
        let [d, h, w] = spec.extents;
        let mut graph = Graph::new();
        let input = graph.input("y", &[1, d, h, w]);
        let mut rng = derive_rng(seed, "descriptor-init", 0, 0);
        let stack = build_stack(&mut graph, input, &spec.layers, "", &mut rng)?;
        if graph.kind(stack.output).per_sample() != Some(&[1]) {
            return Err(Error::Config(format!(
                "descriptor must end in a scalar head, final per-sample shape is {:?}",
                graph.kind(stack.output).per_sample()
            )));
        }
        let score_sum = graph.sum(stack.output);
        Ok(DescriptorModel {
            spec,
            graph,
            input,
            scores: stack.output,
            score_sum,
            layer_outputs: stack.layer_outputs,
            params: stack.params,
        })
    }

    pub fn spec(&self) -> &DescriptorSpec {
        &self.spec
    }

    pub fn extents(&self) -> [usize; 3] {
        self.spec.extents
    }

    pub fn ref_std(&self) -> f32 {
        self.spec.ref_std
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn input_node(&self) -> NodeId {
        self.input
    }

    /// Output node of each layer in [`DescriptorSpec::layers`] order (useful
    /// for feature extraction).
    pub fn layer_outputs(&self) -> &[NodeId] {
        &self.layer_outputs
    }

    fn check_batch(&self, y: &VoxelBatch) -> Result<()> {
        if y.extents() != self.spec.extents {
            return Err(Error::Shape(format!(
                "batch extents {:?} do not match the model's {:?}",
                y.extents(),
                self.spec.extents
            )));
        }
        if y.count() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        Ok(())
    }

    /// Full forward pass; exposes every node value (feature maps included).
    pub fn forward_values(&self, y: &VoxelBatch) -> Result<Values> {
        self.check_batch(y)?;
        let t = y.to_tensor();
        let mut b = Bindings::for_graph(&self.graph);
        b.bind(self.input, &t);
        self.params.bind_all(&mut b);
        forward(&self.graph, &b, Mode::Eval)
    }

    /// `f(Y_i; θ)` per batch element.
    pub fn score(&self, y: &VoxelBatch) -> Result<Vec<f32>> {
        Ok(self.forward_values(y)?.get(self.scores).data().to_vec())
    }

    /// `E(Y_i; θ) = ‖Y_i‖²/(2s²) − f(Y_i; θ)` per batch element.
    pub fn energy(&self, y: &VoxelBatch) -> Result<Vec<f32>> {
        let scores = self.score(y)?;
        Ok(self.energy_from_scores(y, &scores))
    }

    /// Energies from already-computed scores (no extra forward pass).
    pub fn energy_from_scores(&self, y: &VoxelBatch, scores: &[f32]) -> Vec<f32> {
        let inv = 1.0 / (2.0 * self.spec.ref_std as f64 * self.spec.ref_std as f64);
        (0..y.count())
            .map(|i| {
                let sq: f64 = y.grid_values(i).iter().map(|&v| v as f64 * v as f64).sum();
                (sq * inv - scores[i] as f64) as f32
            })
            .collect()
    }

    /// `∂f/∂Y`, one grid per batch element.
    pub fn score_grad_input(&self, y: &VoxelBatch) -> Result<VoxelBatch> {
        self.check_batch(y)?;
        let t = y.to_tensor();
        let mut b = Bindings::for_graph(&self.graph);
        b.bind(self.input, &t);
        self.params.bind_all(&mut b);
        let vals = forward(&self.graph, &b, Mode::Eval)?;
        let mut grads = backward(&self.graph, &vals, self.score_sum, GradScope::InputsOnly)?;
        let g = grads
            .take(self.input)
            .ok_or_else(|| Error::Unbound("input gradient missing".into()))?;
        VoxelBatch::from_tensor(&g)
    }

    /// `Y/s² − ∂f/∂Y`: the auto-encoding residual, zero exactly at critical
    /// points of the energy.
    pub fn hopfield_residual(&self, y: &VoxelBatch) -> Result<VoxelBatch> {
        let mut grad = self.score_grad_input(y)?;
        let inv_s2 = 1.0 / (self.spec.ref_std * self.spec.ref_std);
        for (g, &v) in grad.values_mut().iter_mut().zip(y.values()) {
            *g = v * inv_s2 - *g;
        }
        Ok(grad)
    }

    /// Scores plus `Σ_i ∂f(Y_i)/∂θ` over the whole batch (the trainers divide
    /// by their own batch sizes).
    pub fn score_with_param_grads(&self, y: &VoxelBatch) -> Result<(Vec<f32>, GradMap)> {
        self.check_batch(y)?;
        let t = y.to_tensor();
        let mut b = Bindings::for_graph(&self.graph);
        b.bind(self.input, &t);
        self.params.bind_all(&mut b);
        let vals = forward(&self.graph, &b, Mode::Eval)?;
        let grads = backward(&self.graph, &vals, self.score_sum, GradScope::All)?;
        Ok((vals.get(self.scores).data().to_vec(), grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{finite_diff_grad, OracleBindings};

    fn tiny_spec() -> DescriptorSpec {
        DescriptorSpec::new(
            [4; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 2, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        )
    }

    fn zero_params(model: &mut DescriptorModel) {
        for e in model.params.entries_mut() {
            for v in e.tensor.data_mut() {
                *v = 0.0;
            }
        }
    }

    fn random_batch(extents: [usize; 3], n: usize, seed: u64) -> VoxelBatch {
        VoxelBatch::randn(n, extents, 0.5, &mut derive_rng(seed, "batch", 0, 0))
    }

    #[test]
    fn zero_weights_score_zero_any_input() {
        let mut m = DescriptorModel::new(tiny_spec(), 1).unwrap();
        zero_params(&mut m);
        let y = random_batch([4; 3], 3, 2);
        assert_eq!(m.score(&y).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_weight_energy_is_reference_energy() {
        // s = 0.5: all-ones 2³ grid has E = 8 / (2·0.25) = 16 exactly.
        let spec = DescriptorSpec::new(
            [2; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 2, kernel: 2, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        );
        let mut m = DescriptorModel::new(spec, 1).unwrap();
        zero_params(&mut m);
        let ones = VoxelBatch::from_grids(&[crate::data::VoxelGrid::from_values(
            [2; 3],
            vec![1.0; 8],
        )
        .unwrap()])
        .unwrap();
        assert_eq!(m.energy(&ones).unwrap(), vec![16.0]);
        let zeros = VoxelBatch::zeros(1, [2; 3]);
        assert_eq!(m.energy(&zeros).unwrap(), vec![0.0]);
    }

    #[test]
    fn linear_model_gradient_is_constant() {
        // f = w · sum(Y): one 1³ conv with weight w, head summing all voxels.
        let spec = DescriptorSpec::new(
            [3; 3],
            vec![
                LayerSpec::Conv3d { out_channels: 1, kernel: 1, stride: 1 },
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        );
        let mut m = DescriptorModel::new(spec, 1).unwrap();
        zero_params(&mut m);
        m.params.tensor_mut("conv1.weight").unwrap().data_mut()[0] = 0.35;
        for v in m.params.tensor_mut("fc1.weight").unwrap().data_mut() {
            *v = 1.0;
        }
        let y = random_batch([3; 3], 2, 5);
        let g = m.score_grad_input(&y).unwrap();
        for &v in g.values() {
            assert!((v - 0.35).abs() < 1e-6, "gradient should be w everywhere, got {v}");
        }
        // And the score really is w · sum(Y).
        let scores = m.score(&y).unwrap();
        for i in 0..2 {
            let s: f64 = y.grid_values(i).iter().map(|&v| v as f64).sum();
            assert!((scores[i] as f64 - 0.35 * s).abs() < 1e-4);
        }
    }

    #[test]
    fn energy_score_identity() {
        let m = DescriptorModel::new(tiny_spec(), 3).unwrap();
        let y = random_batch([4; 3], 4, 7);
        let f = m.score(&y).unwrap();
        let e = m.energy(&y).unwrap();
        let inv = 1.0 / (2.0 * 0.25);
        for i in 0..4 {
            let sq: f64 = y.grid_values(i).iter().map(|&v| (v as f64).powi(2)).sum();
            assert!(
                ((e[i] + f[i]) as f64 - sq * inv).abs() < 1e-4,
                "E + f must equal ‖Y‖²/(2s²)"
            );
        }
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let m = DescriptorModel::new(tiny_spec(), 11).unwrap();
        let y = random_batch([4; 3], 2, 13);
        let analytic = m.score_grad_input(&y).unwrap();

        let pairs: OracleBindings = {
            let mut p = vec![(m.input_node(), y.to_tensor())];
            for e in m.params.entries() {
                p.push((e.node, e.tensor.clone()));
            }
            p
        };
        let fd = finite_diff_grad(
            m.graph(),
            &pairs,
            m.score_sum,
            m.input_node(),
            1e-3,
            Mode::Eval,
        )
        .unwrap();
        for (i, (&a, f)) in analytic.values().iter().zip(fd).enumerate() {
            assert!(
                (a as f64 - f).abs() <= 1e-5f64.max(1e-3 * (a as f64).abs().max(f.abs())),
                "elem {i}: analytic {a} vs fd {f}"
            );
        }
    }

    #[test]
    fn hopfield_residual_zero_weights() {
        let mut m = DescriptorModel::new(tiny_spec(), 1).unwrap();
        zero_params(&mut m);
        let y = random_batch([4; 3], 2, 3);
        let r = m.hopfield_residual(&y).unwrap();
        // Zero f ⇒ residual is Y/s² = 4Y.
        for (&res, &v) in r.values().iter().zip(y.values()) {
            assert!((res - 4.0 * v).abs() < 1e-6);
        }
    }

    #[test]
    fn score_commutes_with_batch_permutation() {
        let m = DescriptorModel::new(tiny_spec(), 9).unwrap();
        let y = random_batch([4; 3], 3, 17);
        let scores = m.score(&y).unwrap();
        let permuted = VoxelBatch::from_grids(&[y.grid(2), y.grid(0), y.grid(1)]).unwrap();
        let pscores = m.score(&permuted).unwrap();
        assert_eq!(pscores, vec![scores[2], scores[0], scores[1]]);
    }

    #[test]
    fn presets_build_and_validate() {
        for spec in [
            DescriptorSpec::desk_16(),
            DescriptorSpec::recovery_32(),
        ] {
            let m = DescriptorModel::new(spec.clone(), 0).unwrap();
            assert_eq!(m.extents(), spec.extents);
        }
        for spec in DescriptorSpec::desk_ladder() {
            DescriptorModel::new(spec, 0).unwrap();
        }
        // The big nets must at least pass shape validation at build time.
        for spec in [
            DescriptorSpec::synthesis_32(),
            DescriptorSpec::superres_32(),
            DescriptorSpec::cooperative_32(),
        ] {
            DescriptorModel::new(spec, 0).unwrap();
        }
        for spec in DescriptorSpec::ladder_128() {
            DescriptorModel::new(spec, 0).unwrap();
        }
    }

    #[test]
    fn wrong_extents_rejected() {
        let m = DescriptorModel::new(tiny_spec(), 0).unwrap();
        let y = random_batch([8; 3], 1, 0);
        assert!(m.score(&y).is_err());
    }

    #[test]
    fn non_scalar_head_rejected() {
        let spec = DescriptorSpec::new(
            [4; 3],
            vec![LayerSpec::FullyConnected { out_features: 3 }],
        );
        assert!(DescriptorModel::new(spec, 0).is_err());
    }
}
