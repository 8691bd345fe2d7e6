//! Reference implementations used as test oracles.
//!
//! Everything here is written straight from the defining formulas: plain
//! nested loops, no padding tricks, no layout cleverness, all arithmetic in
//! f64. The production kernels are never called — this module exists so tests
//! can compare the optimized f32 path against an independent evaluation of the
//! same graph, and so analytic gradients can be checked against central finite
//! differences computed at f64 precision (an f32 difference quotient at
//! h = 1e-3 would drown small gradients in rounding noise).
//!
//! None of this code runs in training or sampling.

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Node, NodeId, ValueKind};
use crate::tensor::Tensor;

/// One bound leaf for oracle evaluation (owned, so finite differencing can
/// perturb entries freely).
pub type OracleBindings = Vec<(NodeId, Tensor)>;

/// Evaluate every node of `graph` in f64. Returns one value vector per node.
pub fn eval_f64(graph: &Graph, bindings: &OracleBindings, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let lookup = |id: NodeId| -> Result<&Tensor> {
        bindings
            .iter()
            .find(|(bid, _)| *bid == id)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Unbound(format!("oracle leaf {}", id.0)))
    };

    // Batch size from any batched leaf.
    let mut batch = 1usize;
    for (id, _, _) in graph.leaves() {
        if let ValueKind::Batched(_) = graph.kind(id) {
            batch = lookup(id)?.shape()[0];
        }
    }

    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(graph.len());
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(graph.len());

    for (i, node) in graph.nodes().iter().enumerate() {
        let (v, s): (Vec<f64>, Vec<usize>) = match node {
            Node::Leaf { .. } => {
                let t = lookup(NodeId(i))?;
                (
                    t.data().iter().map(|&x| x as f64).collect(),
                    t.shape().to_vec(),
                )
            }
            Node::Conv3d {
                input,
                weight,
                bias,
                stride,
            } => {
                let (xi, si) = (&vals[input.0], &shapes[input.0]);
                let (wv, sw) = (&vals[weight.0], &shapes[weight.0]);
                let bv = &vals[bias.0];
                conv3d_oracle(xi, si, wv, sw, bv, *stride)
            }
            Node::Deconv3d {
                input,
                weight,
                bias,
                up,
            } => {
                let (xi, si) = (&vals[input.0], &shapes[input.0]);
                let (wv, sw) = (&vals[weight.0], &shapes[weight.0]);
                let bv = &vals[bias.0];
                deconv3d_oracle(xi, si, wv, sw, bv, *up)
            }
            Node::FullyConnected { input, weight, bias } => {
                let (xi, si) = (&vals[input.0], &shapes[input.0]);
                let (wv, sw) = (&vals[weight.0], &shapes[weight.0]);
                let bv = &vals[bias.0];
                let n = si[0];
                let in_f: usize = si[1..].iter().product();
                let out_f = sw[0];
                let mut out = vec![0.0; n * out_f];
                for nn in 0..n {
                    for f in 0..out_f {
                        let mut acc = bv[f];
                        for k in 0..in_f {
                            acc += wv[f * in_f + k] * xi[nn * in_f + k];
                        }
                        out[nn * out_f + f] = acc;
                    }
                }
                (out, vec![n, out_f])
            }
            Node::Relu { input } => (
                vals[input.0].iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                shapes[input.0].clone(),
            ),
            Node::Tanh { input } => (
                vals[input.0].iter().map(|&v| v.tanh()).collect(),
                shapes[input.0].clone(),
            ),
            Node::MaxPool3d { input, kernel } => {
                maxpool_oracle(&vals[input.0], &shapes[input.0], *kernel)
            }
            Node::BatchNorm3d {
                input,
                scale,
                shift,
                running_mean,
                running_var,
                eps,
            } => {
                let (xi, si) = (&vals[input.0], &shapes[input.0]);
                let (mean, var) = match mode {
                    Mode::Train => bn_stats_oracle(xi, si),
                    Mode::Eval => (vals[running_mean.0].clone(), vals[running_var.0].clone()),
                };
                let c = si[1];
                let spatial: usize = si[2..].iter().product();
                let mut out = vec![0.0; xi.len()];
                for n in 0..si[0] {
                    for ch in 0..c {
                        for p in 0..spatial {
                            let idx = (n * c + ch) * spatial + p;
                            let xh = (xi[idx] - mean[ch]) / (var[ch] + *eps as f64).sqrt();
                            out[idx] = vals[scale.0][ch] * xh + vals[shift.0][ch];
                        }
                    }
                }
                (out, si.clone())
            }
            Node::Reshape { input, per_sample } => {
                let mut s = vec![shapes[input.0][0]];
                s.extend_from_slice(per_sample);
                (vals[input.0].clone(), s)
            }
            Node::Add { a, b } => (
                vals[a.0].iter().zip(&vals[b.0]).map(|(x, y)| x + y).collect(),
                shapes[a.0].clone(),
            ),
            Node::Mul { a, b } => (
                vals[a.0].iter().zip(&vals[b.0]).map(|(x, y)| x * y).collect(),
                shapes[a.0].clone(),
            ),
            Node::Scale { input, factor } => (
                vals[input.0].iter().map(|&v| v * *factor as f64).collect(),
                shapes[input.0].clone(),
            ),
            Node::Sum { input } => (vec![vals[input.0].iter().sum()], vec![1]),
            Node::SquaredDiffMean { a, b } => {
                let s: f64 = vals[a.0]
                    .iter()
                    .zip(&vals[b.0])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (vec![s / batch as f64], vec![1])
            }
        };
        vals.push(v);
        shapes.push(s);
    }
    Ok(vals)
}

/// Scalar value of `output` under the oracle evaluation.
pub fn eval_scalar(
    graph: &Graph,
    bindings: &OracleBindings,
    output: NodeId,
    mode: Mode,
) -> Result<f64> {
    let vals = eval_f64(graph, bindings, mode)?;
    let v = &vals[output.0];
    if v.len() != 1 {
        return Err(Error::Shape(format!(
            "oracle output node has {} elements, want 1",
            v.len()
        )));
    }
    Ok(v[0])
}

/// Central finite-difference gradient of the scalar `output` with respect to
/// the leaf `wrt`: per element, `(f(x+h) - f(x-h)) / 2h`, evaluated in f64.
pub fn finite_diff_grad(
    graph: &Graph,
    bindings: &OracleBindings,
    output: NodeId,
    wrt: NodeId,
    h: f64,
    mode: Mode,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::Data(format!("finite difference step h must be > 0, got {h}")));
    }
    let base = bindings
        .iter()
        .position(|(id, _)| *id == wrt)
        .ok_or_else(|| Error::Unbound(format!("finite_diff_grad leaf {}", wrt.0)))?;
    let mut work = bindings.clone();
    let n = work[base].1.numel();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let orig = work[base].1.data()[i];
        // Perturbed values are quantized to f32 storage, so divide by the
        // step that was actually applied, not the nominal one.
        let xp = orig + h as f32;
        let xm = orig - h as f32;
        work[base].1.data_mut()[i] = xp;
        let plus = eval_scalar(graph, &work, output, mode)?;
        work[base].1.data_mut()[i] = xm;
        let minus = eval_scalar(graph, &work, output, mode)?;
        work[base].1.data_mut()[i] = orig;
        grad[i] = (plus - minus) / (xp as f64 - xm as f64);
    }
    Ok(grad)
}

// ── op-level reference kernels ──

fn same_pad(extent: usize, kernel: usize, stride: usize) -> (usize, isize) {
    let out = extent.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(extent);
    (out, (total / 2) as isize)
}

/// Convolution from the definition: for every output voxel, sum the kernel
/// window over the zero-padded input.
#[allow(clippy::too_many_arguments)]
fn conv3d_oracle(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    b: &[f64],
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (n, ci, d, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (co, kd, kh, kw) = (ws[0], ws[2], ws[3], ws[4]);
    let (od, pd) = same_pad(d, kd, stride);
    let (oh, ph) = same_pad(h, kh, stride);
    let (ow, pw) = same_pad(wd, kw, stride);
    let mut out = vec![0.0; n * co * od * oh * ow];
    for nn in 0..n {
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ci {
                            for dz in 0..kd {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let iz = (z * stride) as isize - pd + dz as isize;
                                        let iy = (y * stride) as isize - ph + dy as isize;
                                        let ix = (xx * stride) as isize - pw + dx as isize;
                                        if iz < 0
                                            || iy < 0
                                            || ix < 0
                                            || iz >= d as isize
                                            || iy >= h as isize
                                            || ix >= wd as isize
                                        {
                                            continue; // zero padding
                                        }
                                        let xi = (((nn * ci + c) * d + iz as usize) * h
                                            + iy as usize)
                                            * wd
                                            + ix as usize;
                                        let wi = (((o * ci + c) * kd + dz) * kh + dy) * kw + dx;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[(((nn * co + o) * od + z) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
    }
    (out, vec![n, co, od, oh, ow])
}

/// Transposed convolution from the adjoint definition: input voxel `q` with
/// kernel offset `t` contributes to output voxel `q*up - pad + t`, exactly the
/// positions a stride-`up` convolution would have read it from.
fn deconv3d_oracle(
    x: &[f64],
    xs: &[usize],
    w: &[f64],
    ws: &[usize],
    b: &[f64],
    up: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (n, ci, d, h, wd) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (co, kd, kh, kw) = (ws[1], ws[2], ws[3], ws[4]);
    let (od, oh, ow) = (d * up, h * up, wd * up);
    let pd = (kd.saturating_sub(up) / 2) as isize;
    let ph = (kh.saturating_sub(up) / 2) as isize;
    let pw = (kw.saturating_sub(up) / 2) as isize;
    let mut out = vec![0.0; n * co * od * oh * ow];
    for nn in 0..n {
        for o in 0..co {
            for p in 0..(od * oh * ow) {
                out[(nn * co + o) * od * oh * ow + p] = b[o];
            }
        }
        for c in 0..ci {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        let v = x[(((nn * ci + c) * d + z) * h + y) * wd + xx];
                        for o in 0..co {
                            for dz in 0..kd {
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        let oz = (z * up) as isize - pd + dz as isize;
                                        let oy = (y * up) as isize - ph + dy as isize;
                                        let ox = (xx * up) as isize - pw + dx as isize;
                                        if oz < 0
                                            || oy < 0
                                            || ox < 0
                                            || oz >= od as isize
                                            || oy >= oh as isize
                                            || ox >= ow as isize
                                        {
                                            continue;
                                        }
                                        let oi = (((nn * co + o) * od + oz as usize) * oh
                                            + oy as usize)
                                            * ow
                                            + ox as usize;
                                        let wi = (((c * co + o) * kd + dz) * kh + dy) * kw + dx;
                                        out[oi] += v * w[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, vec![n, co, od, oh, ow])
}

fn maxpool_oracle(x: &[f64], xs: &[usize], k: usize) -> (Vec<f64>, Vec<usize>) {
    let (n, c, d, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (od, oh, ow) = (d.div_ceil(k), h.div_ceil(k), w.div_ceil(k));
    let mut out = vec![0.0; n * c * od * oh * ow];
    for nn in 0..n {
        for ch in 0..c {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        for iz in z * k..((z + 1) * k).min(d) {
                            for iy in y * k..((y + 1) * k).min(h) {
                                for ix in xx * k..((xx + 1) * k).min(w) {
                                    let v = x[(((nn * c + ch) * d + iz) * h + iy) * w + ix];
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                        }
                        out[(((nn * c + ch) * od + z) * oh + y) * ow + xx] = best;
                    }
                }
            }
        }
    }
    (out, vec![n, c, od, oh, ow])
}

fn bn_stats_oracle(x: &[f64], xs: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (xs[0], xs[1]);
    let spatial: usize = xs[2..].iter().product();
    let m = (n * spatial) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for nn in 0..n {
            for p in 0..spatial {
                s += x[(nn * c + ch) * spatial + p];
            }
        }
        mean[ch] = s / m;
        let mut sq = 0.0;
        for nn in 0..n {
            for p in 0..spatial {
                let dlt = x[(nn * c + ch) * spatial + p] - mean[ch];
                sq += dlt * dlt;
            }
        }
        var[ch] = sq / m;
    }
    (mean, var)
}
