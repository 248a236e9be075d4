//! Binomial low-pass kernels and the blurred samplers built on them:
//! BlurPool (blur, then the fixed `(0, 0)` grid) and APS-j (blur, then APS).

use crate::error::{arg_err, Result};
use crate::polyphase::{aps_downsample, conventional_downsample, ApsOutput, SelectionCriterion};
use crate::tensor::{PadMode, Real, Shape, Tensor};

/// Normalized separable `j x j` binomial filter.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    size: usize,
    coeffs: Vec<f64>,
}

impl BlurKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Row-major `size x size` coefficients.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Leading pad: `j / 2`, so the 2-tap filter reads the pixel and its
    /// upper/left neighbour.
    pub fn lead(&self) -> usize {
        self.size / 2
    }

    fn as_kernel<T: Real>(&self) -> Tensor<T> {
        let s = Shape::new(1, 1, self.size, self.size);
        Tensor::from_vec(s, self.coeffs.iter().map(|&v| T::from_f64(v)).collect()).expect("square kernel")
    }
}

fn binomial_row(j: usize) -> Option<&'static [f64]> {
    match j {
        2 => Some(&[1.0, 1.0]),
        3 => Some(&[1.0, 2.0, 1.0]),
        5 => Some(&[1.0, 4.0, 6.0, 4.0, 1.0]),
        _ => None,
    }
}

/// Outer product of the Pascal row of length `j`, normalized to sum 1.
pub fn binomial_kernel(j: usize) -> Result<BlurKernel> {
    let Some(row) = binomial_row(j) else {
        return arg_err(format!("unsupported blur size {j} (expected 2, 3 or 5)"));
    };
    let total: f64 = row.iter().sum::<f64>().powi(2);
    let coeffs = row.iter().flat_map(|a| row.iter().map(move |b| a * b / total)).collect();
    Ok(BlurKernel { size: j, coeffs })
}

/// Depthwise blur: every channel is filtered with `k`, extent preserved.
pub fn blur<T: Real>(x: &Tensor<T>, k: &BlurKernel, pad: PadMode) -> Result<Tensor<T>> {
    let s = x.shape();
    let planes = x.clone().reshape(Shape::new(s.n * s.c, 1, s.h, s.w))?;
    let lead = k.lead();
    let out = crate::tensor::ops::conv_core(&planes, &k.as_kernel(), &[T::zero()], 1, pad, (lead, lead))?;
    out.reshape(s)
}

/// Gradient of [`blur`] with respect to its input.
pub fn blur_vjp<T: Real>(x: &Tensor<T>, k: &BlurKernel, pad: PadMode, upstream: &Tensor<f64>) -> Result<Tensor<f64>> {
    let s = x.shape();
    let flat = Shape::new(s.n * s.c, 1, s.h, s.w);
    let planes = x.clone().reshape(flat)?;
    let up = upstream.clone().reshape(flat)?;
    let lead = k.lead();
    let g = crate::tensor::grad::conv_vjp_core(&planes, &k.as_kernel::<T>(), 1, pad, (lead, lead), &up)?;
    g.input.reshape(s)
}

/// Blur then conventional strided sampling.
pub fn blurpool<T: Real>(x: &Tensor<T>, j: usize, s: usize, pad: PadMode) -> Result<Tensor<T>> {
    conventional_downsample(&blur(x, &binomial_kernel(j)?, pad)?, s)
}

/// Blur then adaptive polyphase sampling.
pub fn aps_blurpool<T: Real>(
    x: &Tensor<T>,
    j: usize,
    s: usize,
    c: &SelectionCriterion,
    pad: PadMode,
) -> Result<ApsOutput<T>> {
    aps_downsample(&blur(x, &binomial_kernel(j)?, pad)?, s, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyphase::ApsIndex;
    use crate::tensor::circular_shift;

    #[test]
    fn binomial_coefficients() {
        let k3 = binomial_kernel(3).unwrap();
        let want: Vec<f64> = [1., 2., 1., 2., 4., 2., 1., 2., 1.].iter().map(|v| v / 16.0).collect();
        assert_eq!(k3.coeffs(), &want[..]);
        assert_eq!(binomial_kernel(2).unwrap().coeffs(), &[0.25; 4]);
        for j in [2, 3, 5] {
            let sum: f64 = binomial_kernel(j).unwrap().coeffs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
        assert!(binomial_kernel(4).is_err());
        assert!(binomial_kernel(1).is_err());
    }

    #[test]
    fn constant_is_preserved() {
        let c = Tensor::<f64>::filled(Shape::new(2, 3, 6, 6), 0.75);
        for j in [2, 3, 5] {
            let y = blur(&c, &binomial_kernel(j).unwrap(), PadMode::Circular).unwrap();
            assert!(y.max_abs_diff(&c).unwrap() < 1e-15);
        }
    }

    #[test]
    fn impulse_spreads_into_kernel() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 7, 7), |_, _, r, c| if r == 3 && c == 3 { 1.0 } else { 0.0 });
        let k = binomial_kernel(3).unwrap();
        let y = blur(&x, &k, PadMode::Zero).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(y.get(0, 0, 2 + a, 2 + b), k.coeffs()[a * 3 + b]);
            }
        }
        assert_eq!(y.get(0, 0, 0, 0), 0.0);
        // 2-tap filter: the impulse reaches itself and the pixel below/right.
        let y2 = blur(&x, &binomial_kernel(2).unwrap(), PadMode::Zero).unwrap();
        assert_eq!(y2.get(0, 0, 3, 3), 0.25);
        assert_eq!(y2.get(0, 0, 4, 4), 0.25);
        assert_eq!(y2.get(0, 0, 2, 2), 0.0);
    }

    #[test]
    fn alternating_row_blurs_to_half() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 1, 8), |_, _, _, c| (c % 2) as f64);
        let y = blurpool(&x, 2, 2, PadMode::Circular).unwrap();
        assert_eq!(y.shape().w, 4);
        assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn blurpool_is_composition() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 6, 6), |_, c, r, w| ((c + 3 * r + 5 * w) % 7) as f64);
        let k = binomial_kernel(5).unwrap();
        let direct = conventional_downsample(&blur(&x, &k, PadMode::Circular).unwrap(), 2).unwrap();
        assert_eq!(blurpool(&x, 5, 2, PadMode::Circular).unwrap(), direct);
        let c = SelectionCriterion::default();
        let aps = aps_blurpool(&x, 5, 2, &c, PadMode::Circular).unwrap();
        assert_eq!(aps, aps_downsample(&blur(&x, &k, PadMode::Circular).unwrap(), 2, &c).unwrap());
    }

    #[test]
    fn zero_image_keeps_origin() {
        let z = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 4));
        let out = aps_blurpool(&z, 3, 2, &SelectionCriterion::default(), PadMode::Circular).unwrap();
        assert!(out.tensor.data().iter().all(|&v| v == 0.0));
        assert_eq!(out.indices, vec![ApsIndex::ORIGIN]);
    }

    #[test]
    fn blur_commutes_with_shift() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 2, 8, 6), |_, c, r, w| ((c * 13 + r * 5 + w * 7) % 11) as f32 * 0.3);
        for j in [2, 3, 5] {
            let k = binomial_kernel(j).unwrap();
            let a = blur(&circular_shift(&x, 3, -2), &k, PadMode::Circular).unwrap();
            let b = circular_shift(&blur(&x, &k, PadMode::Circular).unwrap(), 3, -2);
            assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        }
    }
}
