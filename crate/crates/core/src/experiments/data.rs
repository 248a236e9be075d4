//! Synthetic classification datasets.
//!
//! Every pattern is drawn on a torus (coordinates wrap around), so any
//! circular translate of an image is another valid sample of its class.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternFamily {
    /// Class `k` is one of disc, horizontal bar, cross, vertical bar, ring,
    /// square, at a random position, size and intensity.
    Shapes,
    /// Class `k` is a high-frequency texture patch: checkerboard, vertical
    /// stripes, horizontal stripes, diagonal stripes, 2x2 checkerboard,
    /// sparse dots.
    Checkerboard,
}

impl PatternFamily {
    pub fn max_classes(self) -> usize {
        6
    }
}

fn default_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub family: PatternFamily,
    /// Std of the additive Gaussian pixel noise. Keeps polyphase norms
    /// from tying exactly.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(family: PatternFamily, classes: usize, per_class: usize, size: usize, seed: u64) -> Self {
        Self { classes, per_class, height: size, width: size, family, noise: default_noise(), seed }
    }
}

/// Images `(N, 1, H, W)` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Tensor<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images_as<T: Real>(&self) -> Tensor<T> {
        self.images.cast()
    }

    /// The first `n` items.
    pub fn take(&self, n: usize) -> Result<Split> {
        let n = n.min(self.len());
        let items: Vec<_> = (0..n).map(|i| self.images.item(i)).collect();
        Ok(Split { images: Tensor::stack(&items)?, labels: self.labels[..n].to_vec() })
    }

    fn save(&self, dir: &Path, name: &str) -> Result<()> {
        self.images.save(dir.join(format!("{name}_images.psft")))?;
        let labels = Tensor::<f64>::from_vec(
            Shape::new(self.len(), 1, 1, 1),
            self.labels.iter().map(|&l| l as f64).collect(),
        )?;
        labels.save(dir.join(format!("{name}_labels.psft")))
    }

    fn load(dir: &Path, name: &str) -> Result<Split> {
        let images = Tensor::<f64>::load(dir.join(format!("{name}_images.psft")))?;
        let labels = Tensor::<f64>::load(dir.join(format!("{name}_labels.psft")))?;
        if labels.shape().n != images.shape().n {
            return Err(Error::Format(format!("{name}: label and image counts differ")));
        }
        Ok(Split { images, labels: labels.data().iter().map(|&v| v as usize).collect() })
    }
}

/// Train / validation / test splits in the ratio 0.8 / 0.1 / 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    /// Caches the splits as tensor files in `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.train.save(dir, "train")?;
        self.val.save(dir, "val")?;
        self.test.save(dir, "test")
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Dataset { train: Split::load(dir, "train")?, val: Split::load(dir, "val")?, test: Split::load(dir, "test")? })
    }
}

/// Deterministic balanced dataset. Image `i` has label `i % K` and is drawn
/// from stream `i` of a ChaCha generator seeded with `spec.seed`; the
/// images are then shuffled and split.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.classes > spec.family.max_classes() {
        return arg_err(format!("classes must be in 2..={}", spec.family.max_classes()));
    }
    if spec.per_class == 0 {
        return arg_err("per_class must be positive");
    }
    if spec.height < 4 || spec.width < 4 {
        return arg_err("canvas must be at least 4x4");
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return arg_err("noise must be finite and non-negative");
    }
    let total = spec.classes * spec.per_class;
    let plane = Shape::new(1, 1, spec.height, spec.width);
    let mut images = Vec::with_capacity(total);
    for i in 0..total {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        images.push(draw(spec, i % spec.classes, plane, &mut rng));
    }
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);

    let n_val = total / 10;
    let n_test = total / 10;
    let n_train = total - n_val - n_test;
    let pick = |range: &[usize]| -> Result<Split> {
        let imgs: Vec<_> = range.iter().map(|&i| images[i].clone()).collect();
        let images = if imgs.is_empty() { Tensor::zeros(plane.with_batch(0)) } else { Tensor::stack(&imgs)? };
        Ok(Split { images, labels: range.iter().map(|&i| i % spec.classes).collect() })
    };
    Ok(Dataset {
        train: pick(&order[..n_train])?,
        val: pick(&order[n_train..n_train + n_val])?,
        test: pick(&order[n_train + n_val..])?,
    })
}

fn wrap(v: isize, len: usize) -> usize {
    v.rem_euclid(len as isize) as usize
}

fn draw(spec: &DatasetSpec, class: usize, plane: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let (h, w) = (plane.h, plane.w);
    let mut img = vec![0.0; h * w];
    let cy = rng.random_range(0..h) as isize;
    let cx = rng.random_range(0..w) as isize;
    let intensity = rng.random_range(0.5..1.0);
    let min_side = h.min(w);
    match spec.family {
        PatternFamily::Shapes => {
            let r = rng.random_range(min_side as f64 / 8.0..min_side as f64 / 4.0).max(1.0);
            let t = (r / 3.0).max(1.0);
            let inside = |dy: f64, dx: f64| -> bool {
                match class {
                    0 => dy * dy + dx * dx <= r * r,
                    1 => dy.abs() <= t && dx.abs() <= 1.5 * r,
                    2 => (dy.abs() <= t / 2.0 + 0.5 && dx.abs() <= r) || (dx.abs() <= t / 2.0 + 0.5 && dy.abs() <= r),
                    3 => dx.abs() <= t && dy.abs() <= 1.5 * r,
                    4 => {
                        let d = (dy * dy + dx * dx).sqrt();
                        d <= r && d >= r - t
                    }
                    _ => dy.abs().max(dx.abs()) <= r && dy.abs().max(dx.abs()) >= r - t,
                }
            };
            let reach = (2.0 * r).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if inside(dy as f64, dx as f64) {
                        img[wrap(cy + dy, h) * w + wrap(cx + dx, w)] = intensity;
                    }
                }
            }
        }
        PatternFamily::Checkerboard => {
            let half = rng.random_range(min_side / 4..=min_side / 2).max(2) as isize / 2;
            let phase = rng.random_range(0..4usize);
            for dy in -half..half {
                for dx in -half..half {
                    let (y, x) = (cy + dy, cx + dx);
                    let (py, px) = (y + phase as isize, x + (phase / 2) as isize);
                    let on = match class {
                        0 => (py + px).rem_euclid(2) == 0,
                        1 => px.rem_euclid(2) == 0,
                        2 => py.rem_euclid(2) == 0,
                        3 => (py - px).rem_euclid(3) == 0,
                        4 => (py.div_euclid(2) + px.div_euclid(2)).rem_euclid(2) == 0,
                        _ => py.rem_euclid(3) == 0 && px.rem_euclid(3) == 0,
                    };
                    if on {
                        img[wrap(y, h) * w + wrap(x, w)] = intensity;
                    }
                }
            }
        }
    }
    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise).expect("finite noise");
        img.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    Tensor::from_vec(plane, img).expect("plane sized buffer")
}
