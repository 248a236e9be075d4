//! Wall-clock comparison of two networks' forward passes.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{arg_err, Result};
use crate::network::Network;
use crate::tensor::{Real, Shape, Tensor};

pub const WARMUP: usize = 10;

/// Median and median absolute deviation of per-call forward times, in ms.
/// `ratio` is `median_b / median_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingRecord {
    pub reps: usize,
    pub median_a_ms: f64,
    pub mad_a_ms: f64,
    pub median_b_ms: f64,
    pub mad_b_ms: f64,
    pub ratio: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

fn median_mad(mut v: Vec<f64>) -> (f64, f64) {
    let med = median(&mut v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    (med, median(&mut dev))
}

/// Times `reps` forward passes of each net on one seeded random batch of
/// shape `input`, after [`WARMUP`] untimed calls each. Calls alternate
/// between the two nets so slow drifts hit both equally.
pub fn bench_forward<T: Real>(a: &Network<T>, b: &Network<T>, input: Shape, reps: usize) -> Result<TimingRecord> {
    if reps < 10 {
        return arg_err("reps must be >= 10");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<T>::from_fn(input, |_, _, _, _| T::from_f64(StandardNormal.sample(&mut rng)));
    for _ in 0..WARMUP {
        a.forward(&x)?;
        b.forward(&x)?;
    }
    let mut ta = Vec::with_capacity(reps);
    let mut tb = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(a.forward(&x)?);
        ta.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        std::hint::black_box(b.forward(&x)?);
        tb.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (median_a_ms, mad_a_ms) = median_mad(ta);
    let (median_b_ms, mad_b_ms) = median_mad(tb);
    Ok(TimingRecord { reps, median_a_ms, mad_a_ms, median_b_ms, mad_b_ms, ratio: median_b_ms / median_a_ms })
}
