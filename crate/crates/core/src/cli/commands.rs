//! Subcommand bodies. Each writes its CSVs into `out` and returns whether
//! the subcommand's own assertion held.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::*;
use crate::error::{arg_err, Result};
use crate::experiments::{bench_forward, generate, train, write_epoch_log, DatasetSpec, Split};
use crate::metrics::{accuracy, consistency, random_erase, stability_rows, vertical_flip, ShiftSampler};
use crate::network::{DownsampleKind, Network, NetworkSpec};
use crate::spectral::{
    band_limited_polynomial_check, band_limited_power_check, cosine_relu_sums, polyphase_spectrum_check,
    relu_check, power_sum_check, power_sum_polynomial_check, Signal1D,
};
use crate::tensor::{circular_shift, PadMode, Precision, Real, Shape, Tensor};

/// What a subcommand reports back to the front end.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The first `n` images of a generated dataset, splits concatenated in
/// train, val, test order.
fn images(spec: &DatasetSpec, n: usize) -> Result<Split> {
    let d = generate(spec)?;
    let all: Vec<Tensor<f64>> = [&d.train, &d.val, &d.test]
        .iter()
        .flat_map(|s| (0..s.len()).map(|i| s.images.item(i)))
        .take(n)
        .collect();
    if all.len() < n || n == 0 {
        return arg_err(format!("dataset holds {} images, {n} requested", all.len()));
    }
    let labels = [&d.train, &d.val, &d.test].iter().flat_map(|s| s.labels.iter().copied()).take(n).collect();
    Ok(Split { images: Tensor::stack(&all)?, labels })
}

/// Builds `spec`, then takes its parameters from `weights` if given.
/// Downsample kinds carry no parameters, so weights trained with one
/// kind load into a net with another.
fn build<T: Real>(spec: &NetworkSpec, weights: Option<&Path>) -> Result<Network<T>> {
    let mut net = Network::<T>::build(spec)?;
    if let Some(dir) = weights {
        let trained = Network::<T>::load(dir)?;
        if trained.params().len() != net.params().len()
            || trained.params().iter().zip(net.params()).any(|(a, b)| a.value.shape() != b.value.shape())
        {
            return arg_err(format!("weights in {} do not fit the configured network", dir.display()));
        }
        for (p, t) in net.params_mut().iter_mut().zip(trained.params()) {
            p.value = t.value.clone();
        }
    }
    Ok(net)
}

fn check_plane(net: &NetworkSpec, data: &DatasetSpec) -> Result<()> {
    let i = &net.input;
    if (i.channels, i.height, i.width) != (1, data.height, data.width) {
        return arg_err(format!(
            "network input {}x{}x{} does not match dataset images 1x{}x{}",
            i.channels, i.height, i.width, data.height, data.width
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct ConsistencyRow {
    model: String,
    sampler: String,
    trials: usize,
    fraction: f64,
}

fn consistency_rows<T: Real>(
    network: &NetworkSpec,
    kinds: &[DownsampleKind],
    x: &Tensor<T>,
    sampler: &ShiftSampler,
    trials: usize,
    weights: Option<&Path>,
) -> Result<Vec<(DownsampleKind, ConsistencyRow)>> {
    kinds
        .iter()
        .map(|&kind| {
            let net = build::<T>(&network.with_downsample(kind), weights)?;
            let r = consistency(&net, x, sampler, trials)?;
            let row = ConsistencyRow { model: kind.to_string(), sampler: sampler.kind.to_string(), trials, fraction: r.fraction };
            Ok((kind, row))
        })
        .collect()
}

pub fn invariance<T: Real>(cfg: &InvarianceConfig, out: &Path) -> Result<Outcome> {
    check_plane(&cfg.network, &cfg.dataset)?;
    let x = images(&cfg.dataset, cfg.images)?.images_as::<T>();
    let sampler = ShiftSampler::new(cfg.sampler, cfg.dataset.seed)?;
    let rows = consistency_rows(&cfg.network, &cfg.kinds, &x, &sampler, cfg.trials, cfg.weights.as_deref())?;
    let passed = rows.iter().all(|(k, r)| !k.is_adaptive() || r.fraction == 1.0);
    let lines = rows.iter().map(|(_, r)| format!("{}: consistency {:.4}", r.model, r.fraction)).collect();
    write_rows(&out.join("consistency.csv"), &rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>())?;
    Ok(Outcome { passed, lines })
}

pub fn oddsize<T: Real>(cfg: &OddsizeConfig, out: &Path) -> Result<Outcome> {
    let mut network = cfg.network.clone();
    network.input.height = cfg.size;
    network.input.width = cfg.size;
    let data = DatasetSpec { height: cfg.size, width: cfg.size, ..cfg.dataset.clone() };
    let x = images(&data, cfg.images)?.images_as::<T>();
    let sampler = ShiftSampler::new(cfg.sampler, data.seed)?;
    let rows = consistency_rows(&network, &cfg.kinds, &x, &sampler, cfg.trials, cfg.weights.as_deref())?;
    let adaptive = rows.iter().filter(|(k, _)| k.is_adaptive()).map(|(_, r)| r.fraction).reduce(f64::min);
    let fixed = rows.iter().filter(|(k, _)| !k.is_adaptive()).map(|(_, r)| r.fraction).reduce(f64::max);
    let passed = match (adaptive, fixed) {
        (Some(a), Some(f)) => a >= f,
        _ => true,
    };
    let lines = rows.iter().map(|(_, r)| format!("{}: consistency {:.4} at {}x{}", r.model, r.fraction, cfg.size, cfg.size)).collect();
    write_rows(&out.join("oddsize.csv"), &rows.into_iter().map(|(_, r)| r).collect::<Vec<_>>())?;
    Ok(Outcome { passed, lines })
}

#[derive(Serialize)]
struct CriterionRow {
    criterion: String,
    sampler: String,
    trials: usize,
    fraction: f64,
}

pub fn criteria<T: Real>(cfg: &CriteriaConfig, out: &Path) -> Result<Outcome> {
    check_plane(&cfg.network, &cfg.dataset)?;
    let x = images(&cfg.dataset, cfg.images)?.images_as::<T>();
    let sampler = ShiftSampler::new(cfg.sampler, cfg.dataset.seed)?;
    let base = cfg.network.with_downsample(DownsampleKind::Aps);
    let mut rows = Vec::new();
    for &c in &cfg.criteria {
        let net = build::<T>(&base.with_criterion(c), cfg.weights.as_deref())?;
        let r = consistency(&net, &x, &sampler, cfg.trials)?;
        rows.push(CriterionRow { criterion: c.to_string(), sampler: cfg.sampler.to_string(), trials: cfg.trials, fraction: r.fraction });
    }
    let passed = rows.iter().all(|r| r.fraction == 1.0);
    let lines = rows.iter().map(|r| format!("{}: consistency {:.4}", r.criterion, r.fraction)).collect();
    write_rows(&out.join("criteria.csv"), &rows)?;
    Ok(Outcome { passed, lines })
}

#[derive(Serialize)]
struct OodRow {
    model: String,
    perturbation: String,
    trials: usize,
    fraction: f64,
}

pub fn ood<T: Real>(cfg: &OodConfig, out: &Path) -> Result<Outcome> {
    check_plane(&cfg.network, &cfg.dataset)?;
    let x = images(&cfg.dataset, cfg.images)?.images_as::<T>();
    let sampler = ShiftSampler::new(cfg.sampler, cfg.dataset.seed)?;
    let mut perturbed = Vec::new();
    for &p in &cfg.patches {
        perturbed.push((format!("erase-{p}"), random_erase(&x, p, cfg.dataset.seed)?));
    }
    if cfg.vertical_flip {
        perturbed.push(("vflip".to_string(), vertical_flip(&x)));
    }
    let mut rows = Vec::new();
    let mut passed = true;
    for &kind in &cfg.kinds {
        let net = build::<T>(&cfg.network.with_downsample(kind), cfg.weights.as_deref())?;
        for (name, xp) in &perturbed {
            let r = consistency(&net, xp, &sampler, cfg.trials)?;
            passed &= !kind.is_adaptive() || r.fraction == 1.0;
            rows.push(OodRow { model: kind.to_string(), perturbation: name.clone(), trials: cfg.trials, fraction: r.fraction });
        }
    }
    let lines = cfg
        .kinds
        .iter()
        .map(|k| {
            let mine: Vec<f64> = rows.iter().filter(|r| r.model == k.to_string()).map(|r| r.fraction).collect();
            let min = mine.iter().copied().fold(f64::INFINITY, f64::min);
            format!("{k}: lowest consistency over {} perturbations {min:.4}", mine.len())
        })
        .collect();
    write_rows(&out.join("ood.csv"), &rows)?;
    Ok(Outcome { passed, lines })
}

/// Shift-compensated features of APS nets must agree to this.
pub fn stability_tolerance(p: Precision) -> f64 {
    match p {
        Precision::F32 => 1e-4,
        Precision::F64 => 1e-8,
    }
}

/// One directory per model, each holding a `stability.csv`.
pub fn stability<T: Real>(cfg: &StabilityConfig, out: &Path) -> Result<Outcome> {
    check_plane(&cfg.network, &cfg.dataset)?;
    let x = images(&cfg.dataset, cfg.image + 1)?.images.item(cfg.image).cast::<T>();
    let xs = circular_shift(&x, cfg.shift.0, cfg.shift.1);
    let taps: Vec<&str> = cfg.taps.iter().map(String::as_str).collect();
    let mut passed = true;
    let mut lines = Vec::new();
    for &kind in &cfg.kinds {
        let net = build::<T>(&cfg.network.with_downsample(kind), cfg.weights.as_deref())?;
        let a = net.forward_with_taps(&x, &taps)?;
        let b = net.forward_with_taps(&xs, &taps)?;
        let mut rows = Vec::new();
        for tap in &taps {
            rows.extend(stability_rows(tap, &a.taps[*tap], &b.taps[*tap])?);
        }
        let worst = rows.iter().filter(|r| r.channel == "all").map(|r| r.max_delta).fold(0.0, f64::max);
        if kind.is_adaptive() && cfg.network.pad == PadMode::Circular {
            passed &= worst < stability_tolerance(T::PRECISION);
        }
        lines.push(format!("{kind}: largest shift-compensated delta {worst:.3e}"));
        let dir = out.join(kind.to_string());
        fs::create_dir_all(&dir)?;
        write_rows(&dir.join("stability.csv"), &rows)?;
    }
    Ok(Outcome { passed, lines })
}

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    test_acc: f64,
    test_consistency: f64,
}

pub fn train_cmd<T: Real>(cfg: &TrainCmdConfig, out: &Path) -> Result<Outcome> {
    check_plane(&cfg.network, &cfg.dataset)?;
    let data = generate(&cfg.dataset)?;
    let mut net = Network::<T>::build(&cfg.network)?;
    let log = train(&mut net, &data, &cfg.train)?;
    write_epoch_log(&log, fs::File::create(out.join("epochs.csv"))?)?;
    net.save(out.join("params"))?;

    let x = data.test.images_as::<T>();
    let (test_acc, test_consistency) = if data.test.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let s = x.shape();
        let sampler = ShiftSampler::circular(s.h.max(s.w), cfg.train.seed ^ 0x5eed)?;
        (accuracy(&net, &x, &data.test.labels)?, consistency(&net, &x, &sampler, cfg.train.consistency_trials)?.fraction)
    };
    let kinds: Vec<String> = downsample_kinds(&cfg.network).iter().map(|k| k.to_string()).collect();
    let model = if kinds.is_empty() { "none".to_string() } else { kinds.join("+") };
    write_rows(&out.join("summary.csv"), &[TrainSummary { model, test_acc, test_consistency }])?;
    let last = log.last().expect("epoch 0 is always logged");
    Ok(Outcome {
        passed: true,
        lines: vec![
            format!("epoch {}: train loss {:.4}, val acc {:.4}", last.epoch, last.train_loss, last.val_acc),
            format!("test acc {test_acc:.4}, test consistency {test_consistency:.4}"),
        ],
    })
}

fn downsample_kinds(spec: &NetworkSpec) -> Vec<DownsampleKind> {
    use crate::network::LayerSpec;
    fn walk(layers: &[LayerSpec], out: &mut Vec<DownsampleKind>) {
        for l in layers {
            match l {
                LayerSpec::Downsample { kind, .. } if !out.contains(kind) => out.push(*kind),
                LayerSpec::Residual { main, .. } => walk(main, out),
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(&spec.layers, &mut out);
    out
}

#[derive(Serialize)]
struct BenchRow {
    model_a: String,
    model_b: String,
    size: usize,
    batch: usize,
    reps: usize,
    median_a_ms: f64,
    mad_a_ms: f64,
    median_b_ms: f64,
    mad_b_ms: f64,
    ratio: f64,
}

/// Timing columns vary run to run; every other column is deterministic.
pub fn bench<T: Real>(cfg: &BenchConfig, out: &Path) -> Result<Outcome> {
    let mut spec = cfg.network.clone();
    spec.input.height = cfg.size;
    spec.input.width = cfg.size;
    let a = Network::<T>::build(&spec.with_downsample(cfg.kinds.0))?;
    let b = Network::<T>::build(&spec.with_downsample(cfg.kinds.1))?;
    let input = Shape::new(cfg.batch, spec.input.channels, cfg.size, cfg.size);
    let t = bench_forward(&a, &b, input, cfg.reps)?;
    let row = BenchRow {
        model_a: cfg.kinds.0.to_string(),
        model_b: cfg.kinds.1.to_string(),
        size: cfg.size,
        batch: cfg.batch,
        reps: t.reps,
        median_a_ms: t.median_a_ms,
        mad_a_ms: t.mad_a_ms,
        median_b_ms: t.median_b_ms,
        mad_b_ms: t.mad_b_ms,
        ratio: t.ratio,
    };
    write_rows(&out.join("bench.csv"), &[row])?;
    Ok(Outcome {
        passed: t.ratio <= cfg.max_ratio,
        lines: vec![format!(
            "{} {:.3} ms, {} {:.3} ms, ratio {:.3} (limit {})",
            cfg.kinds.0, t.median_a_ms, cfg.kinds.1, t.median_b_ms, t.ratio, cfg.max_ratio
        )],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub identity: String,
    pub n: usize,
    /// Empty when the row is skipped.
    pub residual: Option<f64>,
    /// `<` when the residual must stay below `threshold`, `>` when it must exceed it.
    pub relation: &'static str,
    pub threshold: f64,
    pub status: &'static str,
}

impl OracleRow {
    fn below(identity: String, n: usize, residual: f64, threshold: f64) -> Self {
        let status = if residual < threshold { "pass" } else { "fail" };
        Self { identity, n, residual: Some(residual), relation: "<", threshold, status }
    }

    fn above(identity: String, n: usize, residual: f64, threshold: f64) -> Self {
        let status = if residual > threshold { "pass" } else { "fail" };
        Self { identity, n, residual: Some(residual), relation: ">", threshold, status }
    }

    fn skipped(identity: &str, n: usize, relation: &'static str, threshold: f64) -> Self {
        Self { identity: identity.into(), n, residual: None, relation, threshold, status: "skipped" }
    }
}

pub const POLYPHASE_TOL: f64 = 1e-10;
pub const SUM_TOL: f64 = 1e-9;
pub const COSINE_TOL: f64 = 1e-10;
pub const RELU_GAP_MIN: f64 = 1e-3;

/// Random signals: signal `s` is white noise from stream `s`.
/// Polynomial `p` has degree `degrees[p % len]` and standard normal
/// coefficients from stream `1 << 32 | p`.
pub fn oracle_rows(cfg: &OracleConfig) -> Result<Vec<OracleRow>> {
    if cfg.signals == 0 {
        return arg_err("signals must be positive");
    }
    if cfg.degrees.iter().any(|&m| m < 2) {
        return arg_err("degrees must be >= 2");
    }
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(s);
        rng
    };
    let polys: Vec<Vec<f64>> = (0..cfg.polynomials)
        .map(|p| {
            let degree = cfg.degrees.get(p % cfg.degrees.len().max(1)).copied().unwrap_or(2) as usize;
            let mut rng = stream(1 << 32 | p as u64);
            let mut a: Vec<f64> = (0..=degree).map(|_| rng.sample(StandardNormal)).collect();
            if a[degree] == 0.0 {
                a[degree] = 1.0;
            }
            a
        })
        .collect();

    let mut rows = Vec::new();
    for &n in &cfg.sizes {
        if n < 4 || n % 2 != 0 {
            rows.push(OracleRow::skipped("polyphase-even", n, "<", POLYPHASE_TOL));
            rows.push(OracleRow::skipped("polyphase-odd", n, "<", POLYPHASE_TOL));
        } else {
            let signals: Vec<Signal1D> =
                (0..cfg.signals).map(|s| Signal1D::white_noise(n, &mut stream(s as u64))).collect::<Result<_>>()?;
            let (mut even, mut odd) = (0.0f64, 0.0f64);
            for x in &signals {
                let r = polyphase_spectrum_check(x)?;
                even = even.max(r.even);
                odd = odd.max(r.odd);
            }
            rows.push(OracleRow::below("polyphase-even".into(), n, even, POLYPHASE_TOL));
            rows.push(OracleRow::below("polyphase-odd".into(), n, odd, POLYPHASE_TOL));
            for &m in &cfg.degrees {
                let mut worst = 0.0f64;
                for x in &signals {
                    let r = match cfg.band {
                        OracleBand::Half => power_sum_check(x, m)?,
                        OracleBand::PerDegree => band_limited_power_check(x, m)?,
                    };
                    worst = worst.max(r);
                }
                rows.push(OracleRow::below(format!("power-sum-m{m}"), n, worst, SUM_TOL));
            }
            for (p, a) in polys.iter().enumerate() {
                let mut worst = 0.0f64;
                for x in &signals {
                    let r = match cfg.band {
                        OracleBand::Half => power_sum_polynomial_check(x, a)?,
                        OracleBand::PerDegree => band_limited_polynomial_check(x, a)?,
                    };
                    worst = worst.max(r);
                }
                rows.push(OracleRow::below(format!("polynomial-{p}-deg{}", a.len() - 1), n, worst, SUM_TOL));
            }
        }
        match cosine_relu_sums(n) {
            Ok(c) => {
                rows.push(OracleRow::below("cosine-relu-even".into(), n, c.residual0(), COSINE_TOL));
                rows.push(OracleRow::below("cosine-relu-odd".into(), n, c.residual1(), COSINE_TOL));
                rows.push(OracleRow::above("cosine-relu-gap".into(), n, (c.sum1 - c.sum0).abs(), COSINE_TOL));
            }
            Err(_) => {
                rows.push(OracleRow::skipped("cosine-relu-even", n, "<", COSINE_TOL));
                rows.push(OracleRow::skipped("cosine-relu-odd", n, "<", COSINE_TOL));
                rows.push(OracleRow::skipped("cosine-relu-gap", n, ">", COSINE_TOL));
            }
        }
    }
    let boxed = Signal1D::from_fn(64, |i| if (8..11).contains(&i) { 1.0 } else { -0.2 })?;
    rows.push(OracleRow::above("relu-gap".into(), 64, relu_check(&boxed)?, RELU_GAP_MIN));
    Ok(rows)
}

pub fn oracle(cfg: &OracleConfig, out: &Path) -> Result<Outcome> {
    let rows = oracle_rows(cfg)?;
    let failed: Vec<String> =
        rows.iter().filter(|r| r.status == "fail").map(|r| format!("{} N={}: {:.3e}", r.identity, r.n, r.residual.unwrap_or(f64::NAN))).collect();
    let skipped = rows.iter().filter(|r| r.status == "skipped").count();
    write_rows(&out.join("oracle.csv"), &rows)?;
    let mut lines = vec![format!(
        "{} rows: {} pass, {} fail, {skipped} skipped",
        rows.len(),
        rows.len() - failed.len() - skipped,
        failed.len()
    )];
    lines.extend(failed.iter().map(|f| format!("fail {f}")));
    Ok(Outcome { passed: failed.is_empty(), lines })
}
