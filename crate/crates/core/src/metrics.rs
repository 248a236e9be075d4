//! Evaluation metrics: shift consistency, accuracy, shift-compensated
//! feature stability, and the out-of-distribution perturbations.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::network::{argmax_rows, Network};
use crate::tensor::{circular_shift, Real, Shape, Tensor};

/// Anything that maps a batch to `(N, K, 1, 1)` logits.
pub trait Classifier<T> {
    fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Argmax labels, lowest class on ties.
    fn classify(&self, x: &Tensor<T>) -> Result<Vec<usize>>
    where
        T: Real,
    {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

impl<T: Real> Classifier<T> for Network<T> {
    fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x)
    }
}

/// Where shifted copies come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerKind {
    /// Circular shift with `dy, dx` uniform in `[-max_shift, max_shift]`.
    CircularUniform { max_shift: usize },
    /// Zero-pad by `pad` on every side, then crop back at a uniform offset;
    /// the same as a shift in `[-pad, pad]` that fills with zeros.
    ZeroPadCrop { pad: usize },
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerKind::CircularUniform { max_shift } => write!(f, "circular-{max_shift}"),
            SamplerKind::ZeroPadCrop { pad } => write!(f, "zeropad-{pad}"),
        }
    }
}

/// Seeded source of shifts. Pair `p` draws from its own ChaCha stream, so
/// results do not depend on evaluation order. The zero shift is never
/// drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSampler {
    pub kind: SamplerKind,
    pub seed: u64,
}

impl ShiftSampler {
    pub fn new(kind: SamplerKind, seed: u64) -> Result<Self> {
        match kind {
            SamplerKind::CircularUniform { max_shift: 0 } => arg_err("max_shift must be >= 1"),
            SamplerKind::ZeroPadCrop { pad: 0 } => arg_err("pad must be >= 1"),
            _ => Ok(Self { kind, seed }),
        }
    }

    pub fn circular(max_shift: usize, seed: u64) -> Result<Self> {
        Self::new(SamplerKind::CircularUniform { max_shift }, seed)
    }

    fn bound(&self) -> isize {
        match self.kind {
            SamplerKind::CircularUniform { max_shift } => max_shift as isize,
            SamplerKind::ZeroPadCrop { pad } => pad as isize,
        }
    }

    /// The shift used for pair `pair`.
    pub fn shift_for(&self, pair: u64) -> (isize, isize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pair);
        let b = self.bound();
        loop {
            let s = (rng.random_range(-b as i64..=b as i64) as isize, rng.random_range(-b as i64..=b as i64) as isize);
            if s != (0, 0) {
                return s;
            }
        }
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>, shift: (isize, isize)) -> Tensor<T> {
        match self.kind {
            SamplerKind::CircularUniform { .. } => circular_shift(x, shift.0, shift.1),
            SamplerKind::ZeroPadCrop { .. } => zero_fill_shift(x, shift.0, shift.1),
        }
    }
}

/// `out(r, c) = x(r - dy, c - dx)`, zero where the source is outside.
pub fn zero_fill_shift<T: Real>(x: &Tensor<T>, dy: isize, dx: isize) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, r, q| {
        let (sr, sc) = (r as isize - dy, q as isize - dx);
        if sr < 0 || sc < 0 || sr >= s.h as isize || sc >= s.w as isize {
            T::zero()
        } else {
            x.get(n, c, sr as usize, sc as usize)
        }
    })
}

/// Consistent / total pairs for one shift.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ShiftTally {
    pub consistent: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub trials: usize,
    pub total: usize,
    pub consistent: usize,
    pub fraction: f64,
    pub per_shift: BTreeMap<(isize, isize), ShiftTally>,
    /// Largest absolute logit difference over all pairs.
    pub max_logit_diff: f64,
}

/// Fraction of `(image, shifted image)` pairs that get the same label.
/// Each image is paired with `trials` shifts; pair `i * trials + t` uses
/// stream `i * trials + t` of the sampler.
pub fn consistency<T: Real, C: Classifier<T> + ?Sized>(
    model: &C,
    images: &Tensor<T>,
    sampler: &ShiftSampler,
    trials: usize,
) -> Result<ConsistencyReport> {
    if trials < 1 {
        return arg_err("trials must be >= 1");
    }
    let n = images.shape().n;
    if n == 0 || images.shape().is_empty() {
        return arg_err("empty dataset");
    }
    let base = model.logits(images)?;
    let base_labels = argmax_rows(&base);
    let mut per_shift: BTreeMap<(isize, isize), ShiftTally> = BTreeMap::new();
    let mut consistent = 0;
    let mut max_diff = 0.0f64;
    for t in 0..trials {
        let shifts: Vec<_> = (0..n).map(|i| sampler.shift_for((i * trials + t) as u64)).collect();
        let shifted: Vec<_> = (0..n).map(|i| sampler.apply(&images.item(i), shifts[i])).collect();
        let logits = model.logits(&Tensor::stack(&shifted)?)?;
        let labels = argmax_rows(&logits);
        for i in 0..n {
            let same = labels[i] == base_labels[i];
            let tally = per_shift.entry(shifts[i]).or_default();
            tally.total += 1;
            if same {
                tally.consistent += 1;
                consistent += 1;
            }
            for (a, b) in logits.item_data(i).iter().zip(base.item_data(i)) {
                max_diff = max_diff.max((a.as_f64() - b.as_f64()).abs());
            }
        }
    }
    let total = n * trials;
    Ok(ConsistencyReport {
        trials,
        total,
        consistent,
        fraction: consistent as f64 / total as f64,
        per_shift,
        max_logit_diff: max_diff,
    })
}

/// Top-1 accuracy on unshifted images.
pub fn accuracy<T: Real, C: Classifier<T> + ?Sized>(model: &C, images: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let n = images.shape().n;
    if n == 0 {
        return arg_err("empty dataset");
    }
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} images", labels.len()));
    }
    let pred = model.classify(images)?;
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / n as f64)
}

/// The nine one-pixel translations in search order: `0, 1, -1` per axis,
/// rows first. Ties keep the earlier candidate.
pub const ONE_PIXEL_SHIFTS: [(isize, isize); 9] =
    [(0, 0), (0, 1), (0, -1), (1, 0), (1, 1), (1, -1), (-1, 0), (-1, 1), (-1, -1)];

/// Shift-compensated error between a feature map and its counterpart
/// computed from a shifted input.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityEntry {
    /// Compensating shift `(dy, dx)` applied to `y`.
    pub shift: (isize, isize),
    /// Elementwise `|y_shifted - T_j(y)|^2`.
    pub delta: Tensor<f64>,
}

impl StabilityEntry {
    pub fn max(&self) -> f64 {
        self.delta.data().iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.delta.sum_f64() / self.delta.data().len().max(1) as f64
    }

    /// Max and mean of `delta` restricted to channel `c`.
    pub fn channel_stats(&self, c: usize) -> (f64, f64) {
        let s = self.delta.shape();
        let mut max = 0.0f64;
        let mut sum = 0.0;
        for n in 0..s.n {
            for &v in self.delta.plane(n, c) {
                max = max.max(v);
                sum += v;
            }
        }
        (max, sum / (s.n * s.plane()).max(1) as f64)
    }
}

/// Picks `j` in [`ONE_PIXEL_SHIFTS`] minimising `||y_shifted - T_j(y)||_2`
/// (circular) and returns the squared error map at that `j`.
pub fn stability_delta<T: Real>(y: &Tensor<T>, y_shifted: &Tensor<T>) -> Result<StabilityEntry> {
    if y.shape() != y_shifted.shape() {
        return shape_err(format!("cannot compare {} with {}", y.shape(), y_shifted.shape()));
    }
    let mut best: Option<((isize, isize), f64)> = None;
    for &(dy, dx) in &ONE_PIXEL_SHIFTS {
        let t = circular_shift(y, dy, dx);
        let err: f64 = t.data().iter().zip(y_shifted.data()).map(|(a, b)| (b.as_f64() - a.as_f64()).powi(2)).sum();
        if best.is_none_or(|(_, e)| err < e) {
            best = Some(((dy, dx), err));
        }
    }
    let (shift, _) = best.expect("nine candidates");
    let t = circular_shift(y, shift.0, shift.1);
    let delta = Tensor::from_fn(y.shape(), |n, c, r, q| (y_shifted.get(n, c, r, q).as_f64() - t.get(n, c, r, q).as_f64()).powi(2));
    Ok(StabilityEntry { shift, delta })
}

/// Channel with the largest energy `sum y^2` over the batch.
pub fn max_energy_channel<T: Real>(y: &Tensor<T>) -> usize {
    let s = y.shape();
    let energy = |c: usize| -> f64 { (0..s.n).flat_map(|n| y.plane(n, c)).map(|v| v.as_f64().powi(2)).sum() };
    (0..s.c).fold(0, |best, c| if energy(c) > energy(best) { c } else { best })
}

/// Zeroes one `patch x patch` square per image, at a location drawn from
/// stream `n` of a ChaCha generator seeded with `seed`.
pub fn random_erase<T: Real>(x: &Tensor<T>, patch: usize, seed: u64) -> Result<Tensor<T>> {
    let s = x.shape();
    if patch > s.h || patch > s.w {
        return arg_err(format!("patch {patch} does not fit {}x{}", s.h, s.w));
    }
    if patch == 0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    for n in 0..s.n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n as u64);
        let r0 = rng.random_range(0..=s.h - patch);
        let c0 = rng.random_range(0..=s.w - patch);
        for c in 0..s.c {
            for r in r0..r0 + patch {
                for q in c0..c0 + patch {
                    let at = out.offset(n, c, r, q);
                    out.data_mut()[at] = T::zero();
                }
            }
        }
    }
    Ok(out)
}

/// Reverses the row order of every plane.
pub fn vertical_flip<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, r, q| x.get(n, c, s.h - 1 - r, q))
}

/// Per-tap stability summary used by the CSV report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub tap: String,
    /// Channel index, or `all`.
    pub channel: String,
    pub max_delta: f64,
    pub mean_delta: f64,
    pub jx: isize,
    pub jy: isize,
}

/// Stability rows for one tap: the max-energy channel of `y`, then all channels.
pub fn stability_rows<T: Real>(tap: &str, y: &Tensor<T>, y_shifted: &Tensor<T>) -> Result<Vec<StabilityRow>> {
    let e = stability_delta(y, y_shifted)?;
    let ch = max_energy_channel(y);
    let (cmax, cmean) = e.channel_stats(ch);
    let (jy, jx) = e.shift;
    Ok(vec![
        StabilityRow { tap: tap.into(), channel: ch.to_string(), max_delta: cmax, mean_delta: cmean, jx, jy },
        StabilityRow { tap: tap.into(), channel: "all".into(), max_delta: e.max(), mean_delta: e.mean(), jx, jy },
    ])
}

/// Checks that `x` holds at least one item of the expected plane shape.
pub fn check_images<T: Real>(x: &Tensor<T>, plane: Shape) -> Result<()> {
    let s = x.shape();
    if s.n == 0 || (s.c, s.h, s.w) != (plane.c, plane.h, plane.w) {
        return shape_err(format!("expected images of shape (N, {}, {}, {}), got {s}", plane.c, plane.h, plane.w));
    }
    Ok(())
}
