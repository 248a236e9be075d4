//! Vector-Jacobian products for the forward primitives.
//!
//! Every gradient is accumulated and returned in f64 regardless of the
//! forward precision.

use super::ops::{axpy_shifted, check_conv, circular_shift, same_padding, source};
use super::{Activation, Kernel, PadMode, Real, Shape, Tensor};
use crate::error::{arg_err, shape_err, Result};

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor<f64>,
    pub weight: Tensor<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of the affine head.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor<f64>,
    pub weight: Tensor<f64>,
    pub bias: Vec<f64>,
}

fn expect_shape(upstream: &Tensor<f64>, want: Shape) -> Result<()> {
    if upstream.shape() != want {
        return shape_err(format!("upstream gradient is {}, forward output was {want}", upstream.shape()));
    }
    Ok(())
}

pub fn conv2d_vjp<T: Real>(
    x: &Tensor<T>,
    w: &Kernel<T>,
    stride: usize,
    pad: PadMode,
    upstream: &Tensor<f64>,
) -> Result<ConvGrads> {
    let ks = w.shape();
    conv_vjp_core(x, w, stride, pad, (same_padding(ks.h), same_padding(ks.w)), upstream)
}

pub(crate) fn conv_vjp_core<T: Real>(
    x: &Tensor<T>,
    w: &Kernel<T>,
    stride: usize,
    pad: PadMode,
    lead: (usize, usize),
    upstream: &Tensor<f64>,
) -> Result<ConvGrads> {
    let xs = x.shape();
    let ks = w.shape();
    check_conv(xs, ks, ks.n, stride)?;
    let out_shape = Shape::new(xs.n, ks.n, xs.h.div_ceil(stride), xs.w.div_ceil(stride));
    expect_shape(upstream, out_shape)?;

    // A strided convolution is the stride-1 one sampled on the (0,0) grid,
    // so its gradient is the stride-1 gradient of the scattered upstream.
    let full;
    let g = if stride == 1 {
        upstream
    } else {
        let mut t = Tensor::zeros(Shape::new(xs.n, ks.n, xs.h, xs.w));
        let data = t.data_mut();
        for n in 0..xs.n {
            for o in 0..ks.n {
                for r in 0..out_shape.h {
                    for c in 0..out_shape.w {
                        let dst = ((n * ks.n + o) * xs.h + r * stride) * xs.w + c * stride;
                        data[dst] = upstream.get(n, o, r, c);
                    }
                }
            }
        }
        full = t;
        &full
    };

    let x64 = x.to_f64();
    let w64 = w.to_f64();
    let (h, wd) = (xs.h, xs.w);
    let mut dx = Tensor::<f64>::zeros(xs);
    let mut dw = Tensor::<f64>::zeros(ks);
    let mut db = vec![0.0; ks.n];
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        for n in 0..xs.n {
            for o in 0..ks.n {
                let gp = g.plane(n, o);
                db[o] += gp.iter().sum::<f64>();
                for i in 0..xs.c {
                    let xp = x64.plane(n, i);
                    let dx_base = (n * xs.c + i) * h * wd;
                    let kbase = (o * ks.c + i) * ks.h * ks.w;
                    for a in 0..ks.h {
                        for r in 0..h {
                            let Some(sr) = source(r + a, lead.0, h, pad) else { continue };
                            let grow = &gp[r * wd..(r + 1) * wd];
                            let xrow = &xp[sr * wd..(sr + 1) * wd];
                            for b in 0..ks.w {
                                let d = b as isize - lead.1 as isize;
                                let k = w64.data()[kbase + a * ks.w + b];
                                let drow = &mut dxd[dx_base + sr * wd..dx_base + (sr + 1) * wd];
                                axpy_shifted(drow, grow, k, -d, pad);
                                dwd[kbase + a * ks.w + b] += dot_shifted(grow, xrow, d, pad);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias: db })
}

/// `sum_col g[col] * src[col + d]` with circular or zero extension.
#[inline]
pub(crate) fn dot_shifted(g: &[f64], src: &[f64], d: isize, pad: PadMode) -> f64 {
    let len = src.len() as isize;
    match pad {
        PadMode::Circular => {
            let d = d.rem_euclid(len) as usize;
            let split = src.len() - d;
            let head: f64 = g[..split].iter().zip(&src[d..]).map(|(a, b)| a * b).sum();
            let tail: f64 = g[split..].iter().zip(&src[..d]).map(|(a, b)| a * b).sum();
            head + tail
        }
        PadMode::Zero => {
            if d.abs() >= len {
                0.0
            } else if d >= 0 {
                g.iter().zip(&src[d as usize..]).map(|(a, b)| a * b).sum()
            } else {
                g[(-d) as usize..].iter().zip(src).map(|(a, b)| a * b).sum()
            }
        }
    }
}

pub fn activate_vjp<T: Real>(x: &Tensor<T>, act: &Activation, upstream: &Tensor<f64>) -> Result<Tensor<f64>> {
    expect_shape(upstream, x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| g * act.derivative(v.as_f64()))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Routes each upstream value to the first maximal tap of its window.
pub fn max_pool_dense_vjp<T: Real>(
    x: &Tensor<T>,
    k: usize,
    pad: PadMode,
    upstream: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let s = x.shape();
    if k < 1 || k > s.h || k > s.w {
        return arg_err(format!("invalid pool window {k}"));
    }
    expect_shape(upstream, s)?;
    let lead = same_padding(k);
    let mut dx = Tensor::<f64>::zeros(s);
    let plane = s.plane();
    let dxd = dx.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let p = x.plane(n, c);
            let base = (n * s.c + c) * plane;
            for r in 0..s.h {
                for col in 0..s.w {
                    let mut best = T::neg_infinity();
                    let mut at = None;
                    for a in 0..k {
                        let Some(sr) = source(r + a, lead, s.h, pad) else { continue };
                        for b in 0..k {
                            let Some(sc) = source(col + b, lead, s.w, pad) else { continue };
                            let v = p[sr * s.w + sc];
                            if v > best || at.is_none() {
                                best = v;
                                at = Some(sr * s.w + sc);
                            }
                        }
                    }
                    if let Some(at) = at {
                        dxd[base + at] += upstream.get(n, c, r, col);
                    }
                }
            }
        }
    }
    Ok(dx)
}

pub fn global_average_pool_vjp(input_shape: Shape, upstream: &Tensor<f64>) -> Result<Tensor<f64>> {
    expect_shape(upstream, Shape::new(input_shape.n, input_shape.c, 1, 1))?;
    let inv = 1.0 / input_shape.plane() as f64;
    Ok(Tensor::from_fn(input_shape, |n, c, _, _| upstream.get(n, c, 0, 0) * inv))
}

pub fn fully_connected_vjp<T: Real>(
    x: &Tensor<T>,
    weight: &Kernel<T>,
    upstream: &Tensor<f64>,
) -> Result<LinearGrads> {
    let xs = x.shape();
    let ws = weight.shape();
    let features = xs.item();
    if ws.c * ws.h * ws.w != features {
        return shape_err("weight does not match input features");
    }
    expect_shape(upstream, Shape::new(xs.n, ws.n, 1, 1))?;
    let mut dx = Tensor::<f64>::zeros(xs);
    let mut dw = Tensor::<f64>::zeros(ws);
    let mut db = vec![0.0; ws.n];
    {
        let dxd = dx.data_mut();
        let dwd = dw.data_mut();
        for n in 0..xs.n {
            let xi = x.item_data(n);
            for k in 0..ws.n {
                let g = upstream.get(n, k, 0, 0);
                db[k] += g;
                let row = &weight.data()[k * features..(k + 1) * features];
                for f in 0..features {
                    dxd[n * features + f] += g * row[f].as_f64();
                    dwd[k * features + f] += g * xi[f].as_f64();
                }
            }
        }
    }
    Ok(LinearGrads { input: dx, weight: dw, bias: db })
}

pub fn circular_shift_vjp(upstream: &Tensor<f64>, dy: isize, dx: isize) -> Tensor<f64> {
    circular_shift(upstream, -dy, -dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::{conv2d, fully_connected, global_average_pool, max_pool_dense};

    #[test]
    fn gap_backward_is_uniform() {
        let s = Shape::new(1, 2, 3, 4);
        let g = global_average_pool_vjp(s, &Tensor::filled(Shape::new(1, 2, 1, 1), 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn relu_backward_gates() {
        let x = Tensor::<f64>::from_rows(&[&[2.0, -3.0]]).unwrap();
        let g = Tensor::<f64>::from_rows(&[&[5.0, 7.0]]).unwrap();
        assert_eq!(activate_vjp(&x, &Activation::Relu, &g).unwrap().data(), &[5.0, 0.0]);
    }

    #[test]
    fn shift_backward_inverts_forward() {
        let g = Tensor::<f64>::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(circular_shift(&circular_shift_vjp(&g, 0, 1), 0, 1), g);
    }

    #[test]
    fn upstream_shape_is_checked() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::new(2, 1, 3, 3));
        let wrong = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        assert!(conv2d_vjp(&x, &w, 1, PadMode::Circular, &wrong).is_err());
        assert!(activate_vjp(&x, &Activation::Relu, &Tensor::zeros(Shape::new(1, 1, 2, 2))).is_err());
        assert!(global_average_pool_vjp(x.shape(), &wrong).is_err());
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    /// Central differences of `<g, f(x)>`.
    fn fd(x: &Tensor<f64>, g: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Tensor<f64>) -> Vec<f64> {
        let h = 1e-3;
        (0..x.data().len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                let fp: f64 = f(&p).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let fm: f64 = f(&m).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        num / den.max(1e-300)
    }

    fn random(shape: Shape, seed: &mut u64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| lcg(seed))
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut seed = 7;
        for (pad, stride, k) in [
            (PadMode::Circular, 1, 3),
            (PadMode::Zero, 1, 3),
            (PadMode::Circular, 2, 3),
            (PadMode::Zero, 2, 2),
            (PadMode::Circular, 1, 4),
        ] {
            let x = random(Shape::new(2, 2, 5, 4), &mut seed);
            let w = random(Shape::new(3, 2, k, k), &mut seed);
            let bias = [0.1, -0.2, 0.3];
            let y = conv2d(&x, &w, &bias, stride, pad).unwrap();
            let g = random(y.shape(), &mut seed);
            let grads = conv2d_vjp(&x, &w, stride, pad, &g).unwrap();
            let dx = fd(&x, &g, |t| conv2d(t, &w, &bias, stride, pad).unwrap());
            let dw = fd(&w, &g, |t| conv2d(&x, t, &bias, stride, pad).unwrap());
            assert!(rel_err(grads.input.data(), &dx) < 1e-7, "{pad:?} {stride} {k}");
            assert!(rel_err(grads.weight.data(), &dw) < 1e-7, "{pad:?} {stride} {k}");
            let db: Vec<f64> = (0..3).map(|o| (0..2).map(|n| g.plane(n, o).iter().sum::<f64>()).sum()).collect();
            assert!(rel_err(&grads.bias, &db) < 1e-12);
        }
    }

    #[test]
    fn conv_weight_gradient_single_channel_f32() {
        let mut seed = 3;
        let x = random(Shape::new(1, 1, 4, 4), &mut seed).cast::<f32>();
        let w = random(Shape::new(1, 1, 3, 3), &mut seed).cast::<f32>();
        let g = random(Shape::new(1, 1, 4, 4), &mut seed);
        let grads = conv2d_vjp(&x, &w, 1, PadMode::Circular, &g).unwrap();
        let dw = fd(&w.to_f64(), &g, |t| conv2d(&x.to_f64(), t, &[0.0], 1, PadMode::Circular).unwrap());
        assert!(rel_err(grads.weight.data(), &dw) < 1e-4);
    }

    #[test]
    fn pool_and_linear_gradients_match_finite_differences() {
        let mut seed = 11;
        let x = random(Shape::new(2, 2, 4, 5), &mut seed);
        let g = random(x.shape(), &mut seed);
        // Distinct values spaced well beyond the difference step, so no window has a near-tie.
        let xp = Tensor::from_fn(x.shape(), |n, c, r, w| (((n * 2 + c) * 20 + r * 5 + w) * 37 % 80) as f64 * 0.01);
        for pad in [PadMode::Circular, PadMode::Zero] {
            let got = max_pool_dense_vjp(&xp, 3, pad, &g).unwrap();
            let want = fd(&xp, &g, |t| max_pool_dense(t, 3, pad).unwrap());
            let e = rel_err(got.data(), &want);
            assert!(e < 1e-7, "{pad:?} {e}");
        }

        let gg = random(Shape::new(2, 2, 1, 1), &mut seed);
        let got = global_average_pool_vjp(x.shape(), &gg).unwrap();
        assert!(rel_err(got.data(), &fd(&x, &gg, global_average_pool)) < 1e-9);

        let w = random(Shape::new(3, 40, 1, 1), &mut seed);
        let gl = random(Shape::new(2, 3, 1, 1), &mut seed);
        let grads = fully_connected_vjp(&x, &w, &gl).unwrap();
        let b = [0.0; 3];
        assert!(rel_err(grads.input.data(), &fd(&x, &gl, |t| fully_connected(t, &w, &b).unwrap())) < 1e-9);
        assert!(rel_err(grads.weight.data(), &fd(&w, &gl, |t| fully_connected(&x, t, &b).unwrap())) < 1e-9);
    }
}
