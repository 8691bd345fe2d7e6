//! Sample-quality metrics and the feature-based reference classifier.
//!
//! The descriptor doubles as a feature extractor: max-pooled activations
//! from its convolutional layers, concatenated into one flat vector per
//! grid. A small softmax regression trained on those features plays the
//! reference network for the score-style metrics — inception-style score,
//! Fréchet distance between feature clouds, mean class probability and
//! classification error — alongside voxel-space measures (recovery error,
//! nearest neighbors).
//!
//! Everything here is a pure function of its inputs; the heavier linear
//! algebra (the Fréchet distance's matrix square root) runs in f64 on a
//! cyclic Jacobi eigensolver, which is exact enough at these dimensions and
//! has no failure modes beyond symmetry.

use serde::{Deserialize, Serialize};

use crate::data::{CorruptionMask, VoxelBatch, VoxelGrid};
use crate::descriptor::DescriptorModel;
use crate::error::{Error, Result};
use crate::kernels::maxpool3d_forward;
use crate::nn::LayerSpec;

/// One pooled readout: activations of the `conv`-th convolution (1-based,
/// after its activation/normalization) max-pooled with kernel `pool`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureTap {
    pub conv: usize,
    pub pool: usize,
}

/// Which layers feed the feature vector. The default taps the first two
/// convolutions with 4³ and 2³ pooling; on the 32³ three-layer synthesis
/// descriptor that yields 200·3³ + 100·3³ = 8100 features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub taps: Vec<FeatureTap>,
}

impl Default for FeatureSpec {
    fn default() -> FeatureSpec {
        FeatureSpec {
            taps: vec![FeatureTap { conv: 1, pool: 4 }, FeatureTap { conv: 2, pool: 2 }],
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::Config("feature spec has no taps".into()));
        }
        if self.taps.iter().any(|t| t.conv == 0 || t.pool == 0) {
            return Err(Error::Config(
                "feature taps are 1-based and pooling kernels positive".into(),
            ));
        }
        Ok(())
    }
}

/// Max-pooled descriptor activations, one flat vector per batch element.
///
/// A tap on convolution `k` reads the layer output after any activation or
/// normalization that immediately follows it, so with zero weights the
/// features are exactly zero (ReLU of zero pre-activations).
pub fn extract_features(
    model: &DescriptorModel,
    y: &VoxelBatch,
    spec: &FeatureSpec,
) -> Result<Vec<Vec<f32>>> {
    spec.validate()?;
    let layers = &model.spec().layers;
    // Positions of the convolutions, then extend each tap through the
    // activation/normalization run that follows it.
    let conv_positions: Vec<usize> = layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Conv3d { .. }))
        .map(|(i, _)| i)
        .collect();
    for tap in &spec.taps {
        if tap.conv > conv_positions.len() {
            return Err(Error::Config(format!(
                "feature tap wants convolution {}, but the descriptor has only {}",
                tap.conv,
                conv_positions.len()
            )));
        }
    }

    let values = model.forward_values(y)?;
    let n = y.count();
    let mut features = vec![Vec::new(); n];
    for tap in &spec.taps {
        let mut j = conv_positions[tap.conv - 1];
        while j + 1 < layers.len()
            && matches!(
                layers[j + 1],
                LayerSpec::Relu | LayerSpec::Tanh | LayerSpec::BatchNorm3d
            )
        {
            j += 1;
        }
        let t = values.get(model.layer_outputs()[j]);
        let s = t.shape();
        if s.len() != 5 || s[0] != n {
            return Err(Error::Shape(format!(
                "feature tap {j} reads a non-spatial value of shape {s:?}"
            )));
        }
        let (c, dims) = (s[1], [s[2], s[3], s[4]]);
        let pooled = maxpool3d_forward(t.data(), n * c, dims, tap.pool);
        let per_sample = pooled.len() / n;
        for (i, f) in features.iter_mut().enumerate() {
            f.extend_from_slice(&pooled[i * per_sample..(i + 1) * per_sample]);
        }
    }
    Ok(features)
}

// ── symmetric linear algebra (f64) ──────────────────────────────────────

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors); column `j` of the row-major vector
/// matrix is the eigenvector of `values[j]`.
fn jacobi_eigh(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-angle root for stability.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    (values, v)
}

/// Symmetric PSD square root via eigendecomposition; tiny negative
/// eigenvalues from rounding are clamped to zero.
fn sqrtm_psd(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigh(a, n);
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    // V diag(roots) Vᵀ
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0f64;
            for (k, r) in roots.iter().enumerate() {
                acc += vecs[i * n + k] * r * vecs[j * n + k];
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    }
    out
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn trace(a: &[f64], n: usize) -> f64 {
    (0..n).map(|i| a[i * n + i]).sum()
}

/// Mean vector and (unbiased, `+1e-6·I`-regularized) covariance of a feature
/// cloud.
fn mean_cov(features: &[Vec<f32>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = features.len();
    let mut mean = vec![0.0f64; dim];
    for f in features {
        for (m, &x) in mean.iter_mut().zip(f) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0f64; dim * dim];
    if n > 1 {
        for f in features {
            let d: Vec<f64> = f.iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect();
            for i in 0..dim {
                for j in i..dim {
                    cov[i * dim + j] += d[i] * d[j];
                }
            }
        }
        let inv = 1.0 / (n - 1) as f64;
        for i in 0..dim {
            for j in i..dim {
                cov[i * dim + j] *= inv;
                cov[j * dim + i] = cov[i * dim + j];
            }
        }
    }
    for i in 0..dim {
        cov[i * dim + i] += 1e-6;
    }
    (mean, cov)
}

/// Fréchet distance between two feature clouds:
/// `‖μ−μ̃‖² + tr(Σ + Σ̃ − 2 (Σ Σ̃)^{1/2})`, with the cross square root
/// computed on the symmetrized product `Σ^{1/2} Σ̃ Σ^{1/2}`.
pub fn fid(features_a: &[Vec<f32>], features_b: &[Vec<f32>]) -> Result<f64> {
    if features_a.is_empty() || features_b.is_empty() {
        return Err(Error::Data("fid needs two non-empty feature sets".into()));
    }
    let dim = features_a[0].len();
    if dim == 0 {
        return Err(Error::Data("fid on zero-length features".into()));
    }
    for f in features_a.iter().chain(features_b) {
        if f.len() != dim {
            return Err(Error::Shape(format!(
                "feature dimension mismatch: {} vs {}",
                f.len(),
                dim
            )));
        }
    }
    let (mu_a, cov_a) = mean_cov(features_a, dim);
    let (mu_b, cov_b) = mean_cov(features_b, dim);
    let mean_term: f64 = mu_a
        .iter()
        .zip(&mu_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let root_a = sqrtm_psd(&cov_a, dim);
    let inner = matmul(&root_a, &matmul(&cov_b, &root_a, dim), dim);
    let cross = sqrtm_psd(&inner, dim);
    Ok(mean_term + trace(&cov_a, dim) + trace(&cov_b, dim) - 2.0 * trace(&cross, dim))
}

/// Inception-style score of classifier outputs: `exp(mean KL(row ‖ marginal))`
/// over `ñ` probability rows. 1 when every row equals the marginal, `C` when
/// rows are one-hot and evenly spread.
pub fn inception_score(prob_rows: &[Vec<f32>]) -> Result<f64> {
    if prob_rows.is_empty() {
        return Err(Error::Data("inception score of no rows".into()));
    }
    let c = prob_rows[0].len();
    if c == 0 {
        return Err(Error::Data("inception score with zero classes".into()));
    }
    for (i, row) in prob_rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::Shape(format!(
                "probability row {i} has {} classes, expected {c}",
                row.len()
            )));
        }
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Data(format!("probability row {i} has invalid entries")));
        }
        let sum: f64 = row.iter().map(|&p| p as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!(
                "probability row {i} sums to {sum}, not 1"
            )));
        }
    }
    let n = prob_rows.len();
    let mut marginal = vec![0.0f64; c];
    for row in prob_rows {
        for (m, &p) in marginal.iter_mut().zip(row) {
            *m += p as f64;
        }
    }
    for m in &mut marginal {
        *m /= n as f64;
    }
    let mut mean_kl = 0.0f64;
    for row in prob_rows {
        let mut kl = 0.0f64;
        for (&p, &q) in row.iter().zip(&marginal) {
            let p = p as f64;
            if p > 0.0 {
                kl += p * (p / q).ln();
            }
        }
        mean_kl += kl;
    }
    mean_kl /= n as f64;
    Ok(mean_kl.exp())
}

// ── reference classifier ────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub iterations: usize,
    pub learning_rate: f32,
    /// L2 penalty on the weights (not the biases).
    pub l2: f32,
}

impl Default for ClassifierConfig {
    fn default() -> ClassifierConfig {
        ClassifierConfig {
            iterations: 500,
            learning_rate: 0.1,
            l2: 1e-4,
        }
    }
}

/// Softmax multinomial regression over z-scored features. The training-set
/// standardization is baked into the model so inference sees raw features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub classes: usize,
    /// `classes × dim`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub feature_mean: Vec<f32>,
    pub feature_std: Vec<f32>,
}

impl ClassifierModel {
    fn standardize(&self, feature: &[f32]) -> Vec<f32> {
        feature
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((&x, &m), &s)| (x - m) / s)
            .collect()
    }

    fn softmax_logits(&self, z: &[f32]) -> Vec<f32> {
        let dim = z.len();
        let logits: Vec<f64> = (0..self.classes)
            .map(|k| {
                let mut acc = self.bias[k] as f64;
                for (j, &x) in z.iter().enumerate() {
                    acc += self.weights[k * dim + j] as f64 * x as f64;
                }
                acc
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| (e / total) as f32).collect()
    }
}

/// Fit the softmax regression by full-batch gradient descent on the
/// cross-entropy with an L2 penalty.
pub fn train_classifier(
    features: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    cfg: &ClassifierConfig,
) -> Result<ClassifierModel> {
    if classes < 2 {
        return Err(Error::Data("a classifier needs at least 2 classes".into()));
    }
    if features.is_empty() || features.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} feature vectors against {} labels",
            features.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::Data("label outside the class range".into()));
    }
    {
        let mut seen = vec![false; classes];
        for &l in labels {
            seen[l] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::Data(
                "training data is single-class; nothing to separate".into(),
            ));
        }
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("inconsistent feature dimensions".into()));
    }
    let n = features.len();

    // Per-dimension z-score statistics from the training set.
    let mut mean = vec![0.0f64; dim];
    for f in features {
        for (m, &x) in mean.iter_mut().zip(f) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0f64; dim];
    for f in features {
        for ((v, m), &x) in var.iter_mut().zip(&mean).zip(f) {
            let d = x as f64 - *m;
            *v += d * d;
        }
    }
    let feature_mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
    let feature_std: Vec<f32> = var
        .iter()
        .map(|&v| {
            let s = (v / n as f64).sqrt();
            if s > 1e-12 {
                s as f32
            } else {
                1.0 // constant dimension: leave it centered but unscaled
            }
        })
        .collect();

    let mut model = ClassifierModel {
        classes,
        weights: vec![0.0; classes * dim],
        bias: vec![0.0; classes],
        feature_mean,
        feature_std,
    };
    let z: Vec<Vec<f32>> = features.iter().map(|f| model.standardize(f)).collect();

    for _ in 0..cfg.iterations {
        let mut gw = vec![0.0f64; classes * dim];
        let mut gb = vec![0.0f64; classes];
        for (zi, &label) in z.iter().zip(labels) {
            let p = model.softmax_logits(zi);
            for k in 0..classes {
                let residual = p[k] as f64 - if k == label { 1.0 } else { 0.0 };
                gb[k] += residual;
                for (j, &xj) in zi.iter().enumerate() {
                    gw[k * dim + j] += residual * xj as f64;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.learning_rate * (g * inv_n + cfg.l2 as f64 * *w as f64) as f32;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= cfg.learning_rate * (g * inv_n) as f32;
        }
    }
    Ok(model)
}

/// Predicted label (argmax, ties to the lower index) and the full softmax
/// probability vector, which sums to 1 within float rounding.
pub fn classify(model: &ClassifierModel, feature: &[f32]) -> Result<(usize, Vec<f32>)> {
    if feature.len() != model.feature_mean.len() {
        return Err(Error::Shape(format!(
            "feature length {} does not match the classifier's {}",
            feature.len(),
            model.feature_mean.len()
        )));
    }
    let probs = model.softmax_logits(&model.standardize(feature));
    let mut best = 0usize;
    for (k, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = k;
        }
    }
    Ok((best, probs))
}

/// Mean softmax probability the classifier assigns to `target` over a batch
/// of feature vectors.
pub fn softmax_class_prob(
    model: &ClassifierModel,
    features: &[Vec<f32>],
    target: usize,
) -> Result<f64> {
    if target >= model.classes {
        return Err(Error::Data(format!(
            "class {target} out of range ({} classes)",
            model.classes
        )));
    }
    if features.is_empty() {
        return Err(Error::Data("no features to score".into()));
    }
    let mut acc = 0.0f64;
    for f in features {
        acc += classify(model, f)?.1[target] as f64;
    }
    Ok(acc / features.len() as f64)
}

/// Fraction of the batch whose argmax is not `target`.
pub fn classification_error(
    model: &ClassifierModel,
    features: &[Vec<f32>],
    target: usize,
) -> Result<f64> {
    if target >= model.classes {
        return Err(Error::Data(format!(
            "class {target} out of range ({} classes)",
            model.classes
        )));
    }
    if features.is_empty() {
        return Err(Error::Data("no features to score".into()));
    }
    let mut wrong = 0usize;
    for f in features {
        if classify(model, f)?.0 != target {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / features.len() as f64)
}

// ── voxel-space measures ────────────────────────────────────────────────

/// Mean absolute per-voxel difference over the masked (corrupted) voxels of
/// binary post-processed grids; 0 for a perfect recovery, 1 for an inverted
/// one.
pub fn recovery_error(
    original: &VoxelGrid,
    recovered: &VoxelGrid,
    mask: &CorruptionMask,
) -> Result<f64> {
    if original.extents() != recovered.extents() || original.extents() != mask.extents() {
        return Err(Error::Shape(format!(
            "extents differ: original {:?}, recovered {:?}, mask {:?}",
            original.extents(),
            recovered.extents(),
            mask.extents()
        )));
    }
    let k = mask.corrupted_count();
    if k == 0 {
        return Err(Error::Data(
            "recovery error over an empty mask is undefined".into(),
        ));
    }
    let mut acc = 0.0f64;
    for ((&a, &b), &m) in original
        .values()
        .iter()
        .zip(recovered.values())
        .zip(mask.as_slice())
    {
        if m {
            acc += (a as f64 - b as f64).abs();
        }
    }
    Ok(acc / k as f64)
}

/// Indices of the `k` dataset grids closest to `query` in voxel ℓ2
/// distance, ascending; exact ties resolve to the lower index.
pub fn nearest_neighbors(
    query: &VoxelGrid,
    dataset: &[VoxelGrid],
    k: usize,
) -> Result<Vec<usize>> {
    if k > dataset.len() {
        return Err(Error::Data(format!(
            "asked for {k} neighbors from {} grids",
            dataset.len()
        )));
    }
    let mut scored = Vec::with_capacity(dataset.len());
    for (i, g) in dataset.iter().enumerate() {
        if g.extents() != query.extents() {
            return Err(Error::Shape(format!(
                "grid {i} extents {:?} do not match the query's {:?}",
                g.extents(),
                query.extents()
            )));
        }
        let d2: f64 = g
            .values()
            .iter()
            .zip(query.values())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        scored.push((d2, i));
    }
    scored.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

/// The named metrics of one evaluation run, serialized as a JSON document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inception_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification_error: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::DescriptorSpec;
    use crate::rng::derive_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    // ── linear algebra ──

    #[test]
    fn jacobi_matches_analytic_2x2() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let (mut vals, vecs) = jacobi_eigh(&[2.0, 1.0, 1.0, 2.0], 2);
        vals.sort_by(f64::total_cmp);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // Columns are orthonormal.
        let dot = vecs[0] * vecs[1] + vecs[2] * vecs[3];
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric_matrix() {
        let n = 6;
        let mut rng = derive_rng(1, "jacobi", 0, 0);
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.sample(StandardNormal);
                a[i * n + j] = x;
                a[j * n + i] = x;
            }
        }
        let (vals, vecs) = jacobi_eigh(&a, n);
        // A v_j = λ_j v_j for every column.
        for j in 0..n {
            for i in 0..n {
                let av: f64 = (0..n).map(|k| a[i * n + k] * vecs[k * n + j]).sum();
                assert!(
                    (av - vals[j] * vecs[i * n + j]).abs() < 1e-9,
                    "eigenpair {j} residual at row {i}"
                );
            }
        }
    }

    #[test]
    fn sqrtm_squares_back() {
        let n = 4;
        let mut rng = derive_rng(2, "sqrtm", 0, 0);
        let mut m = vec![0.0f64; n * n];
        for v in &mut m {
            *v = rng.sample(StandardNormal);
        }
        // B = MᵀM is PSD.
        let mut b = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                b[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum();
            }
        }
        let r = sqrtm_psd(&b, n);
        let rr = matmul(&r, &r, n);
        for (x, y) in rr.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "sqrtm² deviates: {x} vs {y}");
        }
    }

    // ── fid ──

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let mut rng = derive_rng(3, "fid-same", 0, 0);
        let set: Vec<Vec<f32>> = (0..20)
            .map(|_| (0..5).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
            .collect();
        let d = fid(&set, &set).unwrap();
        assert!(d.abs() <= 1e-6, "fid(A, A) = {d}");
    }

    #[test]
    fn fid_matches_scalar_analytic_case() {
        // {−1, 0, 1} and {2, 3, 4}: means 0 and 3, unbiased variance exactly
        // 1 each, so FID = 9 + (1 + 1 − 2) = 9.
        let a: Vec<Vec<f32>> = vec![vec![-1.0], vec![0.0], vec![1.0]];
        let b: Vec<Vec<f32>> = vec![vec![2.0], vec![3.0], vec![4.0]];
        let d = fid(&a, &b).unwrap();
        assert!((d - 9.0).abs() <= 1e-5, "scalar fid {d}");
    }

    #[test]
    fn fid_is_symmetric_and_nonnegative() {
        let mut rng = derive_rng(4, "fid-sym", 0, 0);
        let a: Vec<Vec<f32>> = (0..30)
            .map(|_| (0..4).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
            .collect();
        let b: Vec<Vec<f32>> = (0..25)
            .map(|_| {
                (0..4)
                    .map(|_| 0.5 + 1.5 * rng.sample::<f32, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-6, "asymmetric fid: {ab} vs {ba}");
        assert!(ab >= -1e-6);
        assert!(fid(&a, &vec![vec![0.0f32; 3]; 4]).is_err(), "dimension mismatch accepted");
    }

    #[test]
    fn fid_approximates_analytic_gaussian_distance() {
        // X ~ N(0, I₃), Y ~ N(μ, diag(σ²)) with μ = (1, −1, 0.5),
        // σ = (1.5, 0.5, 1.0). Analytic FID = ‖μ‖² + Σ (σᵢ − 1)².
        let mu = [1.0f64, -1.0, 0.5];
        let sigma = [1.5f64, 0.5, 1.0];
        let analytic: f64 = mu.iter().map(|m| m * m).sum::<f64>()
            + sigma.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>();
        let mut rng = derive_rng(5, "fid-gauss", 0, 0);
        let n = 10_000;
        let a: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..3).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
            .collect();
        let b: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                (0..3)
                    .map(|j| {
                        let z: f32 = rng.sample(StandardNormal);
                        (mu[j] + sigma[j] * z as f64) as f32
                    })
                    .collect()
            })
            .collect();
        let d = fid(&a, &b).unwrap();
        assert!(
            (d - analytic).abs() <= 0.05 * analytic,
            "sampled fid {d} vs analytic {analytic}"
        );
    }

    // ── inception score ──

    #[test]
    fn inception_score_of_uniform_rows_is_one() {
        let rows = vec![vec![0.25f32; 4]; 10];
        let s = inception_score(&rows).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn inception_score_of_balanced_one_hot_rows_is_class_count() {
        let mut rows = Vec::new();
        for k in 0..4 {
            for _ in 0..5 {
                let mut r = vec![0.0f32; 4];
                r[k] = 1.0;
                rows.push(r);
            }
        }
        let s = inception_score(&rows).unwrap();
        assert!((s - 4.0).abs() < 1e-9, "one-hot score {s}");
    }

    #[test]
    fn inception_score_matches_hand_computed_two_row_table() {
        // Rows (0.9, 0.1) and (0.1, 0.9). By symmetry both rows have the
        // same KL to the marginal, so the score is exp(KL) computed by
        // direct scalar arithmetic on the same (float-rounded) table.
        let rows = vec![vec![0.9f32, 0.1], vec![0.1, 0.9]];
        let s = inception_score(&rows).unwrap();
        let (p0, p1) = (0.9f32 as f64, 0.1f32 as f64);
        let q = (p0 + p1) / 2.0;
        let expect = (p0 * (p0 / q).ln() + p1 * (p1 / q).ln()).exp();
        assert!((s - expect).abs() < 1e-9, "{s} vs direct oracle {expect}");
        assert!((s - 1.444937).abs() < 1e-5, "frozen value drifted: {s}");
    }

    #[test]
    fn inception_score_rejects_bad_rows() {
        assert!(inception_score(&[]).is_err());
        assert!(inception_score(&[vec![0.5f32, 0.6]]).is_err());
        assert!(inception_score(&[vec![-0.1f32, 1.1]]).is_err());
        assert!(inception_score(&[vec![0.5f32, 0.5], vec![0.3, 0.3, 0.4]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn inception_score_stays_between_one_and_class_count(
            raw in proptest::collection::vec(
                proptest::collection::vec(0.01f32..1.0, 3),
                1..12
            )
        ) {
            let rows: Vec<Vec<f32>> = raw
                .into_iter()
                .map(|r| {
                    let sum: f32 = r.iter().sum();
                    r.into_iter().map(|p| p / sum).collect()
                })
                .collect();
            let s = inception_score(&rows).unwrap();
            prop_assert!(s >= 1.0 - 1e-9, "score {} below 1", s);
            prop_assert!(s <= 3.0 + 1e-9, "score {} above class count", s);
        }
    }

    // ── classifier ──

    #[test]
    fn classifier_separates_a_linearly_separable_toy_set() {
        // Two clusters on a diagonal; trivially separable.
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut rng = derive_rng(6, "toy-classes", 0, 0);
        for i in 0..40 {
            let c = i % 2;
            let center = if c == 0 { -2.0f32 } else { 2.0 };
            let jitter: f32 = rng.sample::<f32, _>(StandardNormal) * 0.3;
            features.push(vec![center + jitter, -center + jitter]);
            labels.push(c);
        }
        let model =
            train_classifier(&features, &labels, 2, &ClassifierConfig::default()).unwrap();
        let mut correct = 0;
        for (f, &l) in features.iter().zip(&labels) {
            let (pred, probs) = classify(&model, f).unwrap();
            let total: f32 = probs.iter().sum();
            assert!((total - 1.0).abs() <= 1e-6, "probabilities sum to {total}");
            if pred == l {
                correct += 1;
            }
        }
        assert_eq!(correct, features.len(), "not 100% on separable training data");
    }

    #[test]
    fn untrained_classifier_is_uniform_and_chance_level() {
        // Zero iterations leave zero weights: every probability is exactly
        // 1/C, and all argmax ties resolve to class 0.
        let features: Vec<Vec<f32>> = (0..30)
            .map(|i| vec![i as f32, (i * 7 % 5) as f32])
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let cfg = ClassifierConfig {
            iterations: 0,
            ..ClassifierConfig::default()
        };
        let model = train_classifier(&features, &labels, 3, &cfg).unwrap();
        let prob = softmax_class_prob(&model, &features, 1).unwrap();
        assert!((prob - 1.0 / 3.0).abs() < 1e-6);
        // Chance level: every example's argmax misses exactly C−1 of the C
        // possible targets, so the error averaged over targets is 1 − 1/C —
        // the expected error of a probability-uniform model on balanced data.
        let mean_err: f64 = (0..3)
            .map(|t| classification_error(&model, &features, t).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((mean_err - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        // Deterministic tie-breaking pins the per-target errors themselves.
        assert_eq!(classification_error(&model, &features, 0).unwrap(), 0.0);
        assert_eq!(classification_error(&model, &features, 1).unwrap(), 1.0);
    }

    #[test]
    fn classifier_rejects_degenerate_input() {
        let features = vec![vec![1.0f32, 2.0]; 6];
        assert!(train_classifier(&features, &[0; 6], 2, &ClassifierConfig::default()).is_err());
        assert!(train_classifier(&features, &[0, 1, 0, 1, 0, 1], 1, &ClassifierConfig::default())
            .is_err());
        assert!(train_classifier(&features, &[0, 5, 0, 1, 0, 1], 2, &ClassifierConfig::default())
            .is_err());
        let model =
            train_classifier(&features, &[0, 1, 0, 1, 0, 1], 2, &ClassifierConfig::default())
                .unwrap();
        assert!(softmax_class_prob(&model, &features, 7).is_err());
    }

    // ── voxel-space measures ──

    #[test]
    fn recovery_error_endpoints() {
        let mut a = VoxelGrid::zeros([4, 4, 4]);
        for (i, v) in a.values_mut().iter_mut().enumerate() {
            *v = (i % 2) as f32;
        }
        let inverted = a.map(|v| 1.0 - v);
        let mask = CorruptionMask::new([4, 4, 4], vec![true; 64]).unwrap();
        assert_eq!(recovery_error(&a, &a, &mask).unwrap(), 0.0);
        assert_eq!(recovery_error(&a, &inverted, &mask).unwrap(), 1.0);
        let empty = CorruptionMask::new([4, 4, 4], vec![false; 64]).unwrap();
        assert!(recovery_error(&a, &a, &empty).is_err());
    }

    #[test]
    fn recovery_error_of_coin_flips_is_half() {
        let extents = [22, 22, 22]; // 10648 voxels
        let n = extents[0] * extents[1] * extents[2];
        let mut rng = derive_rng(7, "coin", 0, 0);
        let mut original = VoxelGrid::zeros(extents);
        let mut recovered = VoxelGrid::zeros(extents);
        for i in 0..n {
            original.values_mut()[i] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            recovered.values_mut()[i] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        }
        let mask = CorruptionMask::new(extents, vec![true; n]).unwrap();
        let e = recovery_error(&original, &recovered, &mask).unwrap();
        assert!((e - 0.5).abs() <= 0.02, "coin-flip recovery error {e}");
    }

    #[test]
    fn nearest_neighbors_orders_handcrafted_distances() {
        let base = VoxelGrid::zeros([2, 2, 2]);
        let mut near = base.clone();
        near.values_mut()[0] = 1.0; // distance 1
        let mut far = base.clone();
        for v in far.values_mut() {
            *v = 1.0; // distance 8
        }
        let dataset = vec![far.clone(), base.clone(), near.clone()];
        let order = nearest_neighbors(&base, &dataset, 3).unwrap();
        assert_eq!(order, vec![1, 2, 0]);
        // Query in the dataset: itself first at distance zero.
        assert_eq!(nearest_neighbors(&near, &dataset, 1).unwrap(), vec![2]);
        // Ties resolve to the lower index.
        let twins = vec![near.clone(), near.clone(), base];
        assert_eq!(nearest_neighbors(&near, &twins, 2).unwrap(), vec![0, 1]);
        assert!(nearest_neighbors(&near, &twins, 4).is_err());
    }

    // ── feature extraction ──

    fn feature_model(seed: u64) -> DescriptorModel {
        let spec = DescriptorSpec::new(
            [8, 8, 8],
            vec![
                LayerSpec::Conv3d {
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Conv3d {
                    out_channels: 5,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        );
        DescriptorModel::new(spec, seed).unwrap()
    }

    #[test]
    fn features_are_deterministic_and_sized_by_architecture() {
        let model = feature_model(1);
        let y = VoxelBatch::randn(3, [8, 8, 8], 0.5, &mut derive_rng(8, "feat", 0, 0));
        let spec = FeatureSpec::default();
        let f1 = extract_features(&model, &y, &spec).unwrap();
        let f2 = extract_features(&model, &y, &spec).unwrap();
        assert_eq!(f1, f2);
        // conv1: 8³ → 4³, pool 4 → 1³ ⇒ 3 features; conv2: 4³ → 2³, pool 2
        // → 1³ ⇒ 5 features.
        assert_eq!(f1[0].len(), 8);
        // Same grid twice in a batch gives identical rows.
        let twin = VoxelBatch::from_grids(&[y.grid(0), y.grid(0)]).unwrap();
        let tf = extract_features(&model, &twin, &spec).unwrap();
        assert_eq!(tf[0], tf[1]);
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let mut model = feature_model(2);
        for e in model.params.entries_mut() {
            if e.trainable {
                for v in e.tensor.data_mut() {
                    *v = 0.0;
                }
            }
        }
        let y = VoxelBatch::randn(2, [8, 8, 8], 0.5, &mut derive_rng(9, "feat0", 0, 0));
        let f = extract_features(&model, &y, &FeatureSpec::default()).unwrap();
        assert!(f.iter().all(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shallow_architecture_is_rejected() {
        let spec = DescriptorSpec::new(
            [8, 8, 8],
            vec![
                LayerSpec::Conv3d {
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 1 },
            ],
        );
        let model = DescriptorModel::new(spec, 3).unwrap();
        let y = VoxelBatch::zeros(1, [8, 8, 8]);
        assert!(extract_features(&model, &y, &FeatureSpec::default()).is_err());
    }

    #[test]
    fn paper_preset_feature_length_is_8100() {
        let model = DescriptorModel::new(DescriptorSpec::synthesis_32(), 4).unwrap();
        let y = VoxelBatch::zeros(1, [32, 32, 32]);
        let f = extract_features(&model, &y, &FeatureSpec::default()).unwrap();
        assert_eq!(f[0].len(), 8100);
    }

    #[test]
    fn metrics_report_serializes_named_fields() {
        let report = MetricsReport {
            inception_score: Some(1.5),
            fid: Some(0.25),
            recovery_error: None,
            softmax_prob: Some(0.9),
            classification_error: Some(0.1),
        };
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"inception_score\""));
        assert!(json.contains("\"fid\""));
        assert!(!json.contains("recovery_error"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
