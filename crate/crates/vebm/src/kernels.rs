//! Compute kernels behind the graph ops.
//!
//! Layout everywhere is row-major `[batch, channels, depth, height, width]`
//! with x fastest. Parallelism is only ever across disjoint output slices
//! (batch elements or output channels) and each slice is filled by a
//! sequential loop, so results are bit-identical regardless of thread count.
//!
//! Convolution uses SAME-style zero padding with output extent
//! `ceil(extent/stride)`; the transposed convolution is the exact adjoint of
//! the matching stride-`up` convolution, which pins its padding to
//! `max(kernel - up, 0)` split low/high around the kernel.

use rayon::prelude::*;

pub(crate) fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Per-axis SAME padding in front of the input: centers the total padding
/// `(out-1)*stride + kernel - extent`, with the extra voxel (odd totals) at
/// the high side.
fn same_pad_front(extent: usize, kernel: usize, stride: usize) -> isize {
    let out = ceil_div(extent, stride);
    (((out - 1) * stride + kernel).saturating_sub(extent) / 2) as isize
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub ci: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub od: usize,
    pub oh: usize,
    pub ow: usize,
    pub pd: isize,
    pub ph: isize,
    pub pw: isize,
}

impl ConvDims {
    pub fn from_shapes(input: &[usize], weight: &[usize], stride: usize) -> ConvDims {
        ConvDims {
            n: input[0],
            ci: input[1],
            d: input[2],
            h: input[3],
            w: input[4],
            co: weight[0],
            kd: weight[2],
            kh: weight[3],
            kw: weight[4],
            stride,
            od: ceil_div(input[2], stride),
            oh: ceil_div(input[3], stride),
            ow: ceil_div(input[4], stride),
            pd: same_pad_front(input[2], weight[2], stride),
            ph: same_pad_front(input[3], weight[3], stride),
            pw: same_pad_front(input[4], weight[4], stride),
        }
    }
}

/// Valid kernel-offset range for one output coordinate: taps that land inside
/// `[0, extent)` after `origin = coord*stride - pad`.
#[inline]
fn tap_range(origin: isize, kernel: usize, extent: usize) -> (usize, usize) {
    let lo = (-origin).max(0) as usize;
    let hi = (extent as isize - origin).clamp(0, kernel as isize) as usize;
    (lo, hi.max(lo))
}

pub(crate) fn conv3d_forward(x: &[f32], w: &[f32], b: &[f32], d: &ConvDims) -> Vec<f32> {
    let per_in = d.ci * d.d * d.h * d.w;
    let per_out = d.co * d.od * d.oh * d.ow;
    let mut out = vec![0.0f32; d.n * per_out];
    out.par_chunks_mut(per_out).enumerate().for_each(|(n, on)| {
        let xn = &x[n * per_in..(n + 1) * per_in];
        let mut acc = vec![0.0f32; d.ow];
        for co in 0..d.co {
            for oz in 0..d.od {
                let z0 = (oz * d.stride) as isize - d.pd;
                let (dz_lo, dz_hi) = tap_range(z0, d.kd, d.d);
                for oy in 0..d.oh {
                    let y0 = (oy * d.stride) as isize - d.ph;
                    let (dy_lo, dy_hi) = tap_range(y0, d.kh, d.h);
                    acc.iter_mut().for_each(|a| *a = b[co]);
                    for ci in 0..d.ci {
                        for dz in dz_lo..dz_hi {
                            let iz = (z0 + dz as isize) as usize;
                            for dy in dy_lo..dy_hi {
                                let iy = (y0 + dy as isize) as usize;
                                let xrow =
                                    &xn[((ci * d.d + iz) * d.h + iy) * d.w..][..d.w];
                                let wrow = &w[(((co * d.ci + ci) * d.kd + dz) * d.kh + dy)
                                    * d.kw..][..d.kw];
                                for (ox, a) in acc.iter_mut().enumerate() {
                                    let x0 = (ox * d.stride) as isize - d.pw;
                                    let (lo, hi) = tap_range(x0, d.kw, d.w);
                                    let base = (x0 + lo as isize) as usize;
                                    let mut s = 0.0f32;
                                    for (wv, xv) in
                                        wrow[lo..hi].iter().zip(&xrow[base..base + (hi - lo)])
                                    {
                                        s += wv * xv;
                                    }
                                    *a += s;
                                }
                            }
                        }
                    }
                    let dst = ((co * d.od + oz) * d.oh + oy) * d.ow;
                    on[dst..dst + d.ow].copy_from_slice(&acc);
                }
            }
        }
    });
    out
}

pub(crate) fn conv3d_backward_input(gout: &[f32], w: &[f32], d: &ConvDims) -> Vec<f32> {
    let per_in = d.ci * d.d * d.h * d.w;
    let per_out = d.co * d.od * d.oh * d.ow;
    let mut gin = vec![0.0f32; d.n * per_in];
    gin.par_chunks_mut(per_in).enumerate().for_each(|(n, gn)| {
        let go = &gout[n * per_out..(n + 1) * per_out];
        for co in 0..d.co {
            for oz in 0..d.od {
                let z0 = (oz * d.stride) as isize - d.pd;
                let (dz_lo, dz_hi) = tap_range(z0, d.kd, d.d);
                for oy in 0..d.oh {
                    let y0 = (oy * d.stride) as isize - d.ph;
                    let (dy_lo, dy_hi) = tap_range(y0, d.kh, d.h);
                    let grow = &go[((co * d.od + oz) * d.oh + oy) * d.ow..][..d.ow];
                    for ci in 0..d.ci {
                        for dz in dz_lo..dz_hi {
                            let iz = (z0 + dz as isize) as usize;
                            for dy in dy_lo..dy_hi {
                                let iy = (y0 + dy as isize) as usize;
                                let dst = &mut gn[((ci * d.d + iz) * d.h + iy) * d.w..][..d.w];
                                let wrow = &w[(((co * d.ci + ci) * d.kd + dz) * d.kh + dy)
                                    * d.kw..][..d.kw];
                                for (ox, &g) in grow.iter().enumerate() {
                                    if g == 0.0 {
                                        continue;
                                    }
                                    let x0 = (ox * d.stride) as isize - d.pw;
                                    let (lo, hi) = tap_range(x0, d.kw, d.w);
                                    let base = (x0 + lo as isize) as usize;
                                    for (dv, wv) in
                                        dst[base..base + (hi - lo)].iter_mut().zip(&wrow[lo..hi])
                                    {
                                        *dv += g * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gin
}

pub(crate) fn conv3d_backward_weight(gout: &[f32], x: &[f32], d: &ConvDims) -> Vec<f32> {
    let per_in = d.ci * d.d * d.h * d.w;
    let per_out = d.co * d.od * d.oh * d.ow;
    let per_co = d.ci * d.kd * d.kh * d.kw;
    let mut gw = vec![0.0f32; d.co * per_co];
    gw.par_chunks_mut(per_co).enumerate().for_each(|(co, gwc)| {
        for n in 0..d.n {
            let xn = &x[n * per_in..(n + 1) * per_in];
            let go = &gout[n * per_out..(n + 1) * per_out];
            for oz in 0..d.od {
                let z0 = (oz * d.stride) as isize - d.pd;
                let (dz_lo, dz_hi) = tap_range(z0, d.kd, d.d);
                for oy in 0..d.oh {
                    let y0 = (oy * d.stride) as isize - d.ph;
                    let (dy_lo, dy_hi) = tap_range(y0, d.kh, d.h);
                    let grow = &go[((co * d.od + oz) * d.oh + oy) * d.ow..][..d.ow];
                    for (ox, &g) in grow.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let x0 = (ox * d.stride) as isize - d.pw;
                        let (dx_lo, dx_hi) = tap_range(x0, d.kw, d.w);
                        let base = (x0 + dx_lo as isize) as usize;
                        for ci in 0..d.ci {
                            for dz in dz_lo..dz_hi {
                                let iz = (z0 + dz as isize) as usize;
                                for dy in dy_lo..dy_hi {
                                    let iy = (y0 + dy as isize) as usize;
                                    let xrow = &xn[((ci * d.d + iz) * d.h + iy) * d.w..][..d.w];
                                    let wdst = &mut gwc[((ci * d.kd + dz) * d.kh + dy) * d.kw..]
                                        [..d.kw];
                                    for (wv, xv) in wdst[dx_lo..dx_hi]
                                        .iter_mut()
                                        .zip(&xrow[base..base + (dx_hi - dx_lo)])
                                    {
                                        *wv += g * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gw
}

pub(crate) fn conv3d_backward_bias(gout: &[f32], d: &ConvDims) -> Vec<f32> {
    let spatial = d.od * d.oh * d.ow;
    let per_out = d.co * spatial;
    (0..d.co)
        .map(|co| {
            let mut acc = 0.0f64;
            for n in 0..d.n {
                let s = &gout[n * per_out + co * spatial..][..spatial];
                acc += s.iter().map(|&v| v as f64).sum::<f64>();
            }
            acc as f32
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DeconvDims {
    pub n: usize,
    pub ci: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub up: usize,
    pub od: usize,
    pub oh: usize,
    pub ow: usize,
    pub pd: isize,
    pub ph: isize,
    pub pw: isize,
}

impl DeconvDims {
    pub fn from_shapes(input: &[usize], weight: &[usize], up: usize) -> DeconvDims {
        let pad = |k: usize| (k.saturating_sub(up) / 2) as isize;
        DeconvDims {
            n: input[0],
            ci: input[1],
            d: input[2],
            h: input[3],
            w: input[4],
            co: weight[1],
            kd: weight[2],
            kh: weight[3],
            kw: weight[4],
            up,
            od: input[2] * up,
            oh: input[3] * up,
            ow: input[4] * up,
            pd: pad(weight[2]),
            ph: pad(weight[3]),
            pw: pad(weight[4]),
        }
    }
}

pub(crate) fn deconv3d_forward(x: &[f32], w: &[f32], b: &[f32], d: &DeconvDims) -> Vec<f32> {
    let per_in = d.ci * d.d * d.h * d.w;
    let out_spatial = d.od * d.oh * d.ow;
    let per_out = d.co * out_spatial;
    let mut out = vec![0.0f32; d.n * per_out];
    out.par_chunks_mut(per_out).enumerate().for_each(|(n, on)| {
        for co in 0..d.co {
            on[co * out_spatial..(co + 1) * out_spatial].fill(b[co]);
        }
        let xn = &x[n * per_in..(n + 1) * per_in];
        for ci in 0..d.ci {
            for z in 0..d.d {
                let z0 = (z * d.up) as isize - d.pd;
                let (dz_lo, dz_hi) = tap_range(z0, d.kd, d.od);
                for y in 0..d.h {
                    let y0 = (y * d.up) as isize - d.ph;
                    let (dy_lo, dy_hi) = tap_range(y0, d.kh, d.oh);
                    for xx in 0..d.w {
                        let v = xn[((ci * d.d + z) * d.h + y) * d.w + xx];
                        if v == 0.0 {
                            continue;
                        }
                        let x0 = (xx * d.up) as isize - d.pw;
                        let (dx_lo, dx_hi) = tap_range(x0, d.kw, d.ow);
                        let base = (x0 + dx_lo as isize) as usize;
                        for co in 0..d.co {
                            for dz in dz_lo..dz_hi {
                                let oz = (z0 + dz as isize) as usize;
                                for dy in dy_lo..dy_hi {
                                    let oy = (y0 + dy as isize) as usize;
                                    let dst = &mut on[((co * d.od + oz) * d.oh + oy) * d.ow..]
                                        [..d.ow];
                                    let wrow = &w[(((ci * d.co + co) * d.kd + dz) * d.kh + dy)
                                        * d.kw..][..d.kw];
                                    for (dv, wv) in dst[base..base + (dx_hi - dx_lo)]
                                        .iter_mut()
                                        .zip(&wrow[dx_lo..dx_hi])
                                    {
                                        *dv += v * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn deconv3d_backward_input(gout: &[f32], w: &[f32], d: &DeconvDims) -> Vec<f32> {
    let per_in = d.ci * d.d * d.h * d.w;
    let out_spatial = d.od * d.oh * d.ow;
    let per_out = d.co * out_spatial;
    let mut gin = vec![0.0f32; d.n * per_in];
    gin.par_chunks_mut(per_in).enumerate().for_each(|(n, gn)| {
        let go = &gout[n * per_out..(n + 1) * per_out];
        for ci in 0..d.ci {
            for z in 0..d.d {
                let z0 = (z * d.up) as isize - d.pd;
                let (dz_lo, dz_hi) = tap_range(z0, d.kd, d.od);
                for y in 0..d.h {
                    let y0 = (y * d.up) as isize - d.ph;
                    let (dy_lo, dy_hi) = tap_range(y0, d.kh, d.oh);
                    for xx in 0..d.w {
                        let x0 = (xx * d.up) as isize - d.pw;
                        let (dx_lo, dx_hi) = tap_range(x0, d.kw, d.ow);
                        let base = (x0 + dx_lo as isize) as usize;
                        let mut acc = 0.0f32;
                        for co in 0..d.co {
                            for dz in dz_lo..dz_hi {
                                let oz = (z0 + dz as isize) as usize;
                                for dy in dy_lo..dy_hi {
                                    let oy = (y0 + dy as isize) as usize;
                                    let grow = &go[((co * d.od + oz) * d.oh + oy) * d.ow..]
                                        [..d.ow];
                                    let wrow = &w[(((ci * d.co + co) * d.kd + dz) * d.kh + dy)
                                        * d.kw..][..d.kw];
                                    for (gv, wv) in grow[base..base + (dx_hi - dx_lo)]
                                        .iter()
                                        .zip(&wrow[dx_lo..dx_hi])
                                    {
                                        acc += gv * wv;
                                    }
                                }
                            }
                        }
                        gn[((ci * d.d + z) * d.h + y) * d.w + xx] = acc;
                    }
                }
            }
        }
    });
    gin
}

pub(crate) fn deconv3d_backward_weight(gout: &[f32], x: &[f32], d: &DeconvDims) -> Vec<f32> {
    let per_in = d.ci * d.d * d.h * d.w;
    let out_spatial = d.od * d.oh * d.ow;
    let per_out = d.co * out_spatial;
    let per_ci = d.co * d.kd * d.kh * d.kw;
    let mut gw = vec![0.0f32; d.ci * per_ci];
    gw.par_chunks_mut(per_ci).enumerate().for_each(|(ci, gwc)| {
        for n in 0..d.n {
            let xn = &x[n * per_in..(n + 1) * per_in];
            let go = &gout[n * per_out..(n + 1) * per_out];
            for z in 0..d.d {
                let z0 = (z * d.up) as isize - d.pd;
                let (dz_lo, dz_hi) = tap_range(z0, d.kd, d.od);
                for y in 0..d.h {
                    let y0 = (y * d.up) as isize - d.ph;
                    let (dy_lo, dy_hi) = tap_range(y0, d.kh, d.oh);
                    for xx in 0..d.w {
                        let v = xn[((ci * d.d + z) * d.h + y) * d.w + xx];
                        if v == 0.0 {
                            continue;
                        }
                        let x0 = (xx * d.up) as isize - d.pw;
                        let (dx_lo, dx_hi) = tap_range(x0, d.kw, d.ow);
                        let base = (x0 + dx_lo as isize) as usize;
                        for co in 0..d.co {
                            for dz in dz_lo..dz_hi {
                                let oz = (z0 + dz as isize) as usize;
                                for dy in dy_lo..dy_hi {
                                    let oy = (y0 + dy as isize) as usize;
                                    let grow = &go[((co * d.od + oz) * d.oh + oy) * d.ow..]
                                        [..d.ow];
                                    let wdst = &mut gwc[((co * d.kd + dz) * d.kh + dy) * d.kw..]
                                        [..d.kw];
                                    for (wv, gv) in wdst[dx_lo..dx_hi]
                                        .iter_mut()
                                        .zip(&grow[base..base + (dx_hi - dx_lo)])
                                    {
                                        *wv += v * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    gw
}

pub(crate) fn deconv3d_backward_bias(gout: &[f32], d: &DeconvDims) -> Vec<f32> {
    let spatial = d.od * d.oh * d.ow;
    let per_out = d.co * spatial;
    (0..d.co)
        .map(|co| {
            let mut acc = 0.0f64;
            for n in 0..d.n {
                let s = &gout[n * per_out + co * spatial..][..spatial];
                acc += s.iter().map(|&v| v as f64).sum::<f64>();
            }
            acc as f32
        })
        .collect()
}

// ── dense ──

pub(crate) fn fc_forward(x: &[f32], w: &[f32], b: &[f32], n: usize, in_f: usize) -> Vec<f32> {
    let out_f = b.len();
    let mut out = vec![0.0f32; n * out_f];
    out.par_chunks_mut(out_f).enumerate().for_each(|(nn, on)| {
        let xn = &x[nn * in_f..(nn + 1) * in_f];
        for (f, o) in on.iter_mut().enumerate() {
            // The flattened grid can be thousands of elements; accumulate the
            // dot product in f64 so the scalar head stays oracle-stable.
            let mut acc = 0.0f64;
            for (wv, xv) in w[f * in_f..(f + 1) * in_f].iter().zip(xn) {
                acc += (*wv as f64) * (*xv as f64);
            }
            *o = (acc + b[f] as f64) as f32;
        }
    });
    out
}

pub(crate) fn fc_backward_input(
    gout: &[f32],
    w: &[f32],
    n: usize,
    in_f: usize,
    out_f: usize,
) -> Vec<f32> {
    let mut gin = vec![0.0f32; n * in_f];
    gin.par_chunks_mut(in_f).enumerate().for_each(|(nn, gn)| {
        for f in 0..out_f {
            let g = gout[nn * out_f + f];
            if g == 0.0 {
                continue;
            }
            for (dst, wv) in gn.iter_mut().zip(&w[f * in_f..(f + 1) * in_f]) {
                *dst += g * wv;
            }
        }
    });
    gin
}

pub(crate) fn fc_backward_weight(
    gout: &[f32],
    x: &[f32],
    n: usize,
    in_f: usize,
    out_f: usize,
) -> Vec<f32> {
    let mut gw = vec![0.0f32; out_f * in_f];
    gw.par_chunks_mut(in_f).enumerate().for_each(|(f, gwf)| {
        for nn in 0..n {
            let g = gout[nn * out_f + f];
            if g == 0.0 {
                continue;
            }
            for (dst, xv) in gwf.iter_mut().zip(&x[nn * in_f..(nn + 1) * in_f]) {
                *dst += g * xv;
            }
        }
    });
    gw
}

pub(crate) fn fc_backward_bias(gout: &[f32], n: usize, out_f: usize) -> Vec<f32> {
    (0..out_f)
        .map(|f| (0..n).map(|nn| gout[nn * out_f + f] as f64).sum::<f64>() as f32)
        .collect()
}

// ── pooling ──

/// Max over non-overlapping blocks; `nc` fused batch×channel slices of extent
/// `[d, h, w]`, ceil partition so trailing blocks may be short.
pub(crate) fn maxpool3d_forward(x: &[f32], nc: usize, dims: [usize; 3], k: usize) -> Vec<f32> {
    let [d, h, w] = dims;
    let (od, oh, ow) = (ceil_div(d, k), ceil_div(h, k), ceil_div(w, k));
    let in_sp = d * h * w;
    let out_sp = od * oh * ow;
    let mut out = vec![0.0f32; nc * out_sp];
    out.par_chunks_mut(out_sp).enumerate().for_each(|(c, oc)| {
        let xc = &x[c * in_sp..(c + 1) * in_sp];
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    for iz in oz * k..((oz + 1) * k).min(d) {
                        for iy in oy * k..((oy + 1) * k).min(h) {
                            for iv in &xc[(iz * h + iy) * w + ox * k
                                ..(iz * h + iy) * w + ((ox + 1) * k).min(w)]
                            {
                                if *iv > best {
                                    best = *iv;
                                }
                            }
                        }
                    }
                    oc[(oz * oh + oy) * ow + ox] = best;
                }
            }
        }
    });
    out
}

/// Routes each block's gradient to its argmax; ties go to the lowest linear
/// index, which the ascending scan order picks out with a strict `>`.
pub(crate) fn maxpool3d_backward(
    gout: &[f32],
    x: &[f32],
    nc: usize,
    dims: [usize; 3],
    k: usize,
) -> Vec<f32> {
    let [d, h, w] = dims;
    let (od, oh, ow) = (ceil_div(d, k), ceil_div(h, k), ceil_div(w, k));
    let in_sp = d * h * w;
    let out_sp = od * oh * ow;
    let mut gin = vec![0.0f32; nc * in_sp];
    gin.par_chunks_mut(in_sp).enumerate().for_each(|(c, gc)| {
        let xc = &x[c * in_sp..(c + 1) * in_sp];
        let go = &gout[c * out_sp..(c + 1) * out_sp];
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = go[(oz * oh + oy) * ow + ox];
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for iz in oz * k..((oz + 1) * k).min(d) {
                        for iy in oy * k..((oy + 1) * k).min(h) {
                            for ix in ox * k..((ox + 1) * k).min(w) {
                                let idx = (iz * h + iy) * w + ix;
                                if xc[idx] > best {
                                    best = xc[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    gc[best_idx] += g;
                }
            }
        }
    });
    gin
}

// ── batch normalization ──

/// Biased per-channel mean and variance over batch and spatial axes, in f64.
pub(crate) fn batchnorm_batch_stats(x: &[f32], shape: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let m = (n * spatial) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for nn in 0..n {
            for &v in &x[(nn * c + ch) * spatial..][..spatial] {
                s += v as f64;
            }
        }
        let mu = s / m;
        mean[ch] = mu;
        let mut sq = 0.0f64;
        for nn in 0..n {
            for &v in &x[(nn * c + ch) * spatial..][..spatial] {
                let dlt = v as f64 - mu;
                sq += dlt * dlt;
            }
        }
        var[ch] = sq / m;
    }
    (mean, var)
}

pub(crate) fn batchnorm_normalize(
    x: &[f32],
    shape: &[usize],
    mean: &[f64],
    var: &[f64],
    scale: &[f32],
    shift: &[f32],
    eps: f32,
) -> Vec<f32> {
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let mut out = vec![0.0f32; x.len()];
    for ch in 0..c {
        let inv = 1.0 / (var[ch] + eps as f64).sqrt();
        let a = (scale[ch] as f64 * inv) as f32;
        let b = (shift[ch] as f64 - scale[ch] as f64 * mean[ch] * inv) as f32;
        for nn in 0..n {
            let src = &x[(nn * c + ch) * spatial..][..spatial];
            let dst = &mut out[(nn * c + ch) * spatial..][..spatial];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o = a * v + b;
            }
        }
    }
    out
}

pub(crate) struct BnGrads {
    pub input: Vec<f32>,
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

/// Backward through batch normalization. In training mode the batch statistics
/// depend on the input, so the gradient carries the two correction terms; in
/// eval mode the running statistics are constants and the input gradient is a
/// plain per-channel rescale.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    gout: &[f32],
    x: &[f32],
    shape: &[usize],
    mean: &[f64],
    var: &[f64],
    scale: &[f32],
    eps: f32,
    train: bool,
    want_params: bool,
) -> BnGrads {
    let (n, c) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    let m = (n * spatial) as f64;
    let mut gin = vec![0.0f32; x.len()];
    let mut gscale = vec![0.0f32; if want_params { c } else { 0 }];
    let mut gshift = vec![0.0f32; if want_params { c } else { 0 }];

    for ch in 0..c {
        let inv = 1.0 / (var[ch] + eps as f64).sqrt();
        let mu = mean[ch];
        // S1 = Σ g, S2 = Σ g·x̂ over batch and spatial positions.
        let mut s1 = 0.0f64;
        let mut s2 = 0.0f64;
        for nn in 0..n {
            let xr = &x[(nn * c + ch) * spatial..][..spatial];
            let gr = &gout[(nn * c + ch) * spatial..][..spatial];
            for (&xv, &gv) in xr.iter().zip(gr) {
                s1 += gv as f64;
                s2 += gv as f64 * (xv as f64 - mu) * inv;
            }
        }
        if want_params {
            gscale[ch] = s2 as f32;
            gshift[ch] = s1 as f32;
        }
        let gamma_inv = scale[ch] as f64 * inv;
        for nn in 0..n {
            let xr = &x[(nn * c + ch) * spatial..][..spatial];
            let gr = &gout[(nn * c + ch) * spatial..][..spatial];
            let dst = &mut gin[(nn * c + ch) * spatial..][..spatial];
            if train {
                for ((o, &xv), &gv) in dst.iter_mut().zip(xr).zip(gr) {
                    let xh = (xv as f64 - mu) * inv;
                    *o = (gamma_inv * (gv as f64 - s1 / m - xh * s2 / m)) as f32;
                }
            } else {
                for (o, &gv) in dst.iter_mut().zip(gr) {
                    *o = (gamma_inv * gv as f64) as f32;
                }
            }
        }
    }
    BnGrads {
        input: gin,
        scale: gscale,
        shift: gshift,
    }
}
