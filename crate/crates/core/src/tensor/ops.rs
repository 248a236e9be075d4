use super::{Activation, Kernel, PadMode, Real, Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Leading pad for a same-size window of extent `k`. Even windows put the
/// extra tap on the trailing side.
pub fn same_padding(k: usize) -> usize {
    k.saturating_sub(1) / 2
}

/// 2-D cross-correlation with per-output-channel bias.
///
/// Output extent is `ceil(H / stride) x ceil(W / stride)`; output pixel
/// `(n1, n2)` reads the window anchored at input `(stride*n1, stride*n2)`,
/// so a strided call equals the stride-1 call sampled on the `(0, 0)` grid.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Kernel<T>,
    bias: &[T],
    stride: usize,
    pad: PadMode,
) -> Result<Tensor<T>> {
    let ks = w.shape();
    conv_core(x, w, bias, stride, pad, (same_padding(ks.h), same_padding(ks.w)))
}

pub(crate) fn check_conv(x: Shape, w: Shape, bias_len: usize, stride: usize) -> Result<()> {
    if stride < 1 {
        return arg_err("stride must be >= 1");
    }
    if w.c != x.c {
        return shape_err(format!("input has {} channels, kernel expects {}", x.c, w.c));
    }
    if bias_len != w.n {
        return shape_err(format!("bias has {bias_len} entries, kernel has {} outputs", w.n));
    }
    if w.h == 0 || w.w == 0 {
        return shape_err("empty kernel");
    }
    if x.h == 0 || x.w == 0 {
        return shape_err("empty input plane");
    }
    Ok(())
}

pub(crate) fn conv_core<T: Real>(
    x: &Tensor<T>,
    w: &Kernel<T>,
    bias: &[T],
    stride: usize,
    pad: PadMode,
    lead: (usize, usize),
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ks = w.shape();
    check_conv(xs, ks, bias.len(), stride)?;
    if stride == 1 {
        return Ok(conv_stride1(x, w, bias, pad, lead));
    }
    let (oh, ow) = (xs.h.div_ceil(stride), xs.w.div_ceil(stride));
    let mut out = Tensor::zeros(Shape::new(xs.n, ks.n, oh, ow));
    let data = out.data_mut();
    let mut idx = 0;
    for n in 0..xs.n {
        for o in 0..ks.n {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = bias[o];
                    for i in 0..xs.c {
                        for a in 0..ks.h {
                            let Some(sr) = source(r * stride + a, lead.0, xs.h, pad) else {
                                continue;
                            };
                            for b in 0..ks.w {
                                let Some(sc) = source(c * stride + b, lead.1, xs.w, pad) else {
                                    continue;
                                };
                                acc = acc + w.get(o, i, a, b) * x.get(n, i, sr, sc);
                            }
                        }
                    }
                    data[idx] = acc;
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Maps padded coordinate `p` (already offset by `+lead`) back into `[0, len)`.
#[inline]
pub(crate) fn source(p: usize, lead: usize, len: usize, pad: PadMode) -> Option<usize> {
    let s = p as isize - lead as isize;
    match pad {
        PadMode::Circular => Some(s.rem_euclid(len as isize) as usize),
        PadMode::Zero => (s >= 0 && (s as usize) < len).then_some(s as usize),
    }
}

/// `dst[col] += k * src[col + d]` over a row, with circular or zero extension.
#[inline]
pub(crate) fn axpy_shifted<T: Real>(dst: &mut [T], src: &[T], k: T, d: isize, pad: PadMode) {
    let len = src.len() as isize;
    match pad {
        PadMode::Circular => {
            let d = d.rem_euclid(len) as usize;
            let split = src.len() - d;
            for (o, &s) in dst[..split].iter_mut().zip(&src[d..]) {
                *o = *o + k * s;
            }
            for (o, &s) in dst[split..].iter_mut().zip(&src[..d]) {
                *o = *o + k * s;
            }
        }
        PadMode::Zero => {
            if d.abs() >= len {
                return;
            }
            if d >= 0 {
                let d = d as usize;
                for (o, &s) in dst.iter_mut().zip(&src[d..]) {
                    *o = *o + k * s;
                }
            } else {
                let d = (-d) as usize;
                for (o, &s) in dst[d..].iter_mut().zip(src) {
                    *o = *o + k * s;
                }
            }
        }
    }
}

fn conv_stride1<T: Real>(
    x: &Tensor<T>,
    w: &Kernel<T>,
    bias: &[T],
    pad: PadMode,
    lead: (usize, usize),
) -> Tensor<T> {
    let xs = x.shape();
    let ks = w.shape();
    let (h, wd) = (xs.h, xs.w);
    let mut out = Tensor::zeros(Shape::new(xs.n, ks.n, h, wd));
    let plane = h * wd;
    let wdata = w.data();
    let data = out.data_mut();
    for n in 0..xs.n {
        for o in 0..ks.n {
            let dst = &mut data[(n * ks.n + o) * plane..(n * ks.n + o + 1) * plane];
            dst.fill(bias[o]);
            for i in 0..xs.c {
                let src = x.plane(n, i);
                let kbase = (o * ks.c + i) * ks.h * ks.w;
                for a in 0..ks.h {
                    for r in 0..h {
                        let Some(sr) = source(r + a, lead.0, h, pad) else {
                            continue;
                        };
                        let srow = &src[sr * wd..(sr + 1) * wd];
                        let drow = &mut dst[r * wd..(r + 1) * wd];
                        for b in 0..ks.w {
                            let k = wdata[kbase + a * ks.w + b];
                            axpy_shifted(drow, srow, k, b as isize - lead.1 as isize, pad);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Elementwise activation.
pub fn activate<T: Real>(x: &Tensor<T>, act: &Activation) -> Tensor<T> {
    match act {
        Activation::Identity => x.clone(),
        Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Polynomial { .. } => x.map(|v| T::from_f64(act.apply(v.as_f64()))),
    }
}

/// Dense (stride-1) `k x k` max pooling; output has the input's extent.
///
/// Zero mode skips out-of-range taps rather than comparing against 0.
pub fn max_pool_dense<T: Real>(x: &Tensor<T>, k: usize, pad: PadMode) -> Result<Tensor<T>> {
    let s = x.shape();
    if k < 1 {
        return arg_err("pool window must be >= 1");
    }
    if k > s.h || k > s.w {
        return arg_err(format!("pool window {k} exceeds {}x{} input", s.h, s.w));
    }
    let lead = same_padding(k);
    Ok(Tensor::from_fn(s, |n, c, r, col| {
        let p = x.plane(n, c);
        let mut best = T::neg_infinity();
        for a in 0..k {
            let Some(sr) = source(r + a, lead, s.h, pad) else { continue };
            for b in 0..k {
                let Some(sc) = source(col + b, lead, s.w, pad) else { continue };
                let v = p[sr * s.w + sc];
                if v > best {
                    best = v;
                }
            }
        }
        best
    }))
}

/// Per-channel spatial mean, shape `(N, C, 1, 1)`.
pub fn global_average_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = 1.0 / s.plane() as f64;
    Tensor::from_fn(Shape::new(s.n, s.c, 1, 1), |n, c, _, _| {
        let sum: f64 = x.plane(n, c).iter().map(|v| v.as_f64()).sum();
        T::from_f64(sum * inv)
    })
}

/// Affine head: flattens each batch item to `F = C*H*W` features and maps
/// them through `weight` of shape `(K, F, 1, 1)`. Output is `(N, K, 1, 1)`.
pub fn fully_connected<T: Real>(x: &Tensor<T>, weight: &Kernel<T>, bias: &[T]) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    let features = xs.item();
    if ws.c * ws.h * ws.w != features {
        return shape_err(format!(
            "input has {features} features per item, weight expects {}",
            ws.c * ws.h * ws.w
        ));
    }
    if bias.len() != ws.n {
        return shape_err(format!("bias has {} entries, weight has {} rows", bias.len(), ws.n));
    }
    Ok(Tensor::from_fn(Shape::new(xs.n, ws.n, 1, 1), |n, k, _, _| {
        let row = &weight.data()[k * features..(k + 1) * features];
        let dot: f64 = row.iter().zip(x.item_data(n)).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
        T::from_f64(dot + bias[k].as_f64())
    }))
}

/// Periodic translation: `out(r, c) = x((r - dy) mod H, (c - dx) mod W)`.
pub fn circular_shift<T: Real>(x: &Tensor<T>, dy: isize, dx: isize) -> Tensor<T> {
    let s = x.shape();
    if s.is_empty() {
        return x.clone();
    }
    let dy = dy.rem_euclid(s.h as isize) as usize;
    let dx = dx.rem_euclid(s.w as isize) as usize;
    if dy == 0 && dx == 0 {
        return x.clone();
    }
    let mut out = Tensor::zeros(s);
    let data = out.data_mut();
    let plane = s.plane();
    for nc in 0..s.n * s.c {
        let src = &x.data()[nc * plane..(nc + 1) * plane];
        let dst = &mut data[nc * plane..(nc + 1) * plane];
        for r in 0..s.h {
            let sr = (r + s.h - dy) % s.h;
            let srow = &src[sr * s.w..(sr + 1) * s.w];
            let drow = &mut dst[r * s.w..(r + 1) * s.w];
            drow[dx..].copy_from_slice(&srow[..s.w - dx]);
            drow[..dx].copy_from_slice(&srow[s.w - dx..]);
        }
    }
    out
}
