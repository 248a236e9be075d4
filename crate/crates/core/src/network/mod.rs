//! Small residual CNNs with pluggable downsampling.
//!
//! A [`NetworkSpec`] is compiled into a tree of nodes with a flat parameter
//! list. Batch items are run one at a time, so every item gets its own APS
//! indices and odd input sizes (where items may select components of
//! different extents) need no special casing until the logits are stacked.

mod spec;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::antialias::{binomial_kernel, blur, blur_vjp, BlurKernel};
use crate::error::{shape_err, Error, Result};
use crate::polyphase::{aps_backward, aps_indices, downsample_with_index, ApsIndex, SelectionCriterion};
use crate::tensor::{
    activate, activate_vjp, conv2d, conv2d_vjp, fully_connected, fully_connected_vjp, global_average_pool,
    global_average_pool_vjp, max_pool_dense, max_pool_dense_vjp, Activation, Real, Shape, Tensor,
};

pub use spec::{DownsampleKind, InputShape, LayerSpec, NetworkSpec};

/// A named parameter tensor. Conv weights are `(O, I, k, k)`, FC weights
/// `(K, F, 1, 1)` and biases `(O, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone)]
struct Sampler {
    kind: DownsampleKind,
    stride: usize,
    criterion: SelectionCriterion,
    blur: Option<BlurKernel>,
}

#[derive(Debug, Clone)]
struct Block {
    main: Vec<Node>,
    proj: Option<(usize, usize)>,
    down: Option<Sampler>,
    post: Option<Activation>,
}

#[derive(Debug, Clone)]
enum Op {
    Conv { w: usize, b: usize },
    Act(Activation),
    MaxPool(usize),
    Down(Sampler),
    Residual(Box<Block>),
    Gap,
    Fc { w: usize, b: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    /// Tap ids recorded at this node's output.
    taps: Vec<usize>,
}

/// Per-node values kept from the forward pass for backward.
enum Trace<T> {
    Input(Tensor<T>),
    Down { input: Tensor<T>, blurred: Option<Tensor<T>>, idx: ApsIndex },
    Residual { main: Vec<Trace<T>>, shortcut: Tensor<T>, input: Tensor<T>, idx: ApsIndex, sum: Tensor<T> },
}

/// An instantiated network.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    tap_names: Vec<String>,
    classes: usize,
}

/// Loss and parameter gradients (always f64), parallel to [`Network::params`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub params: Vec<Tensor<f64>>,
    /// Gradient with respect to the network input.
    pub input: Tensor<f64>,
}

/// Logits plus the requested feature maps, keyed by tap name.
#[derive(Debug, Clone)]
pub struct TappedOutput<T> {
    pub logits: Tensor<T>,
    pub taps: BTreeMap<String, Tensor<T>>,
}

struct Builder<T> {
    rng: ChaCha8Rng,
    params: Vec<Param<T>>,
    tap_names: Vec<String>,
    blocks: usize,
    downs: usize,
}

fn spec_err<T>(layer: &str, reason: impl Into<String>) -> Result<T> {
    Err(Error::Spec { layer: layer.to_string(), reason: reason.into() })
}

/// Nominal feature-map shape while compiling: `(channels, height, width)`.
/// For odd extents APS may produce the smaller component; the nominal
/// extent is that of component `(0, 0)`.
type Dims = (usize, usize, usize);

impl<T: Real> Builder<T> {
    fn he(&mut self, name: String, shape: Shape, fan_in: usize) -> usize {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        let value = Tensor::from_fn(shape, |_, _, _, _| T::from_f64(normal.sample(&mut self.rng)));
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn zeros(&mut self, name: String, len: usize) -> usize {
        self.params.push(Param { name, value: Tensor::zeros(Shape::new(len, 1, 1, 1)) });
        self.params.len() - 1
    }

    fn tap(&mut self, name: String) -> usize {
        self.tap_names.push(name);
        self.tap_names.len() - 1
    }

    fn sampler(&self, at: &str, kind: DownsampleKind, stride: usize, criterion: SelectionCriterion, d: Dims) -> Result<Sampler> {
        if stride < 1 {
            return spec_err(at, "stride must be >= 1");
        }
        if (d.1 > 1 && stride > d.1) || (d.2 > 1 && stride > d.2) {
            return spec_err(at, format!("stride {stride} exceeds {}x{} feature map", d.1, d.2));
        }
        let blur = match kind.blur() {
            Some(j) => Some(binomial_kernel(j).or_else(|e| spec_err(at, e.to_string()))?),
            None => None,
        };
        Ok(Sampler { kind, stride, criterion, blur })
    }

    fn layer(&mut self, at: String, spec: &LayerSpec, d: Dims, nested: bool) -> Result<(Node, Dims)> {
        let down_extent = |len: usize, s: usize| if len == 1 { 1 } else { len.div_ceil(s) };
        let (op, out) = match spec {
            LayerSpec::Conv { out_channels, kernel } => {
                if *out_channels == 0 || *kernel == 0 {
                    return spec_err(&at, "channels and kernel must be positive");
                }
                let w = self.he(format!("{at}.weight"), Shape::new(*out_channels, d.0, *kernel, *kernel), d.0 * kernel * kernel);
                let b = self.zeros(format!("{at}.bias"), *out_channels);
                (Op::Conv { w, b }, (*out_channels, d.1, d.2))
            }
            LayerSpec::Activation { function } => {
                function.validate().or_else(|e| spec_err(&at, e.to_string()))?;
                (Op::Act(function.clone()), d)
            }
            LayerSpec::MaxPoolDense { k } => {
                if *k < 1 || *k > d.1 || *k > d.2 {
                    return spec_err(&at, format!("pool window {k} does not fit {}x{}", d.1, d.2));
                }
                (Op::MaxPool(*k), d)
            }
            LayerSpec::Downsample { kind, stride, criterion } => {
                let s = self.sampler(&at, *kind, *stride, *criterion, d)?;
                (Op::Down(s), (d.0, down_extent(d.1, *stride), down_extent(d.2, *stride)))
            }
            LayerSpec::Residual { main, post } => {
                if nested {
                    return spec_err(&at, "residual blocks cannot be nested");
                }
                let block_id = self.blocks;
                self.blocks += 1;
                let mut nodes = Vec::new();
                let mut cur = d;
                let mut down = None;
                for (i, l) in main.iter().enumerate() {
                    let name = format!("{at}.main{i}");
                    match l {
                        LayerSpec::Residual { .. } => return spec_err(&name, "residual blocks cannot be nested"),
                        LayerSpec::GlobalAvgPool | LayerSpec::FullyConnected { .. } => {
                            return spec_err(&name, "only conv, activation, pooling and downsample layers fit in a residual branch")
                        }
                        LayerSpec::Downsample { kind, stride, criterion } => {
                            if down.is_some() {
                                return spec_err(&name, "a residual branch holds at most one downsample");
                            }
                            down = Some(self.sampler(&name, *kind, *stride, *criterion, cur)?);
                        }
                        _ => {}
                    }
                    let (node, next) = self.layer(name, l, cur, true)?;
                    nodes.push(node);
                    cur = next;
                }
                if let Some(p) = post {
                    p.validate().or_else(|e| spec_err(&at, e.to_string()))?;
                }
                let proj = if cur.0 != d.0 {
                    let w = self.he(format!("{at}.proj.weight"), Shape::new(cur.0, d.0, 1, 1), d.0);
                    let b = self.zeros(format!("{at}.proj.bias"), cur.0);
                    Some((w, b))
                } else {
                    None
                };
                let taps = vec![self.tap(format!("block{block_id}")), self.tap(at)];
                let op = Op::Residual(Box::new(Block { main: nodes, proj, down, post: post.clone() }));
                return Ok((Node { op, taps }, cur));
            }
            LayerSpec::GlobalAvgPool => {
                if nested {
                    return spec_err(&at, "pooling to 1x1 inside a residual branch");
                }
                (Op::Gap, (d.0, 1, 1))
            }
            LayerSpec::FullyConnected { classes } => {
                if *classes == 0 {
                    return spec_err(&at, "classes must be positive");
                }
                let features = d.0 * d.1 * d.2;
                let w = self.he(format!("{at}.weight"), Shape::new(*classes, features, 1, 1), features);
                let b = self.zeros(format!("{at}.bias"), *classes);
                (Op::Fc { w, b }, (*classes, 1, 1))
            }
        };
        let mut taps = Vec::new();
        if matches!(op, Op::Down(_)) {
            taps.push(self.tap(format!("down{}", self.downs)));
            self.downs += 1;
        }
        taps.push(self.tap(at));
        Ok((Node { op, taps }, out))
    }
}

impl<T: Real> Network<T> {
    /// Instantiates `spec` with He fan-in normal weights and zero biases,
    /// drawn in layer order from a ChaCha stream seeded by `spec.seed`.
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        let i = spec.input;
        if i.channels == 0 || i.height == 0 || i.width == 0 {
            return spec_err("input", "input extents must be positive");
        }
        let mut b = Builder::<T> {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            params: Vec::new(),
            tap_names: Vec::new(),
            blocks: 0,
            downs: 0,
        };
        let mut d = (i.channels, i.height, i.width);
        let mut nodes = Vec::new();
        for (k, l) in spec.layers.iter().enumerate() {
            let (node, next) = b.layer(format!("layer{k}"), l, d, false)?;
            nodes.push(node);
            d = next;
        }
        if !matches!(nodes.last().map(|n| &n.op), Some(Op::Fc { .. })) {
            return spec_err("output", "the last layer must be fully_connected");
        }
        Ok(Network { spec: spec.clone(), nodes, params: b.params, tap_names: b.tap_names, classes: d.0 })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }

    /// Names accepted by [`Network::forward_with_taps`]: `layerK` for every
    /// top-level layer, `layerK.mainI` inside residual branches, `blockK`
    /// for the K-th residual block and `downK` for the K-th downsample.
    pub fn tap_names(&self) -> &[String] {
        &self.tap_names
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let i = self.spec.input;
        let s = x.shape();
        if (s.c, s.h, s.w) != (i.channels, i.height, i.width) || s.n == 0 {
            return shape_err(format!(
                "input {s} does not match network input (N, {}, {}, {})",
                i.channels, i.height, i.width
            ));
        }
        Ok(())
    }

    /// Logits of shape `(N, classes, 1, 1)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let items = (0..x.shape().n)
            .map(|n| Ok(self.run(&self.nodes, x.item(n), &mut Recorder::off(), None)?.0))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&items)
    }

    /// Like [`Network::forward`], also returning the named feature maps.
    /// Fails if a tap's items differ in extent (odd sizes under APS).
    pub fn forward_with_taps(&self, x: &Tensor<T>, taps: &[&str]) -> Result<TappedOutput<T>> {
        self.check_input(x)?;
        let mut wanted = vec![false; self.tap_names.len()];
        for t in taps {
            let id = self.tap_names.iter().position(|n| n == t).ok_or_else(|| Error::UnknownTap(t.to_string()))?;
            wanted[id] = true;
        }
        let mut per_tap: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.tap_names.len()];
        let mut logits = Vec::new();
        for n in 0..x.shape().n {
            let mut rec = Recorder { wanted: &wanted, got: vec![None; wanted.len()] };
            logits.push(self.run(&self.nodes, x.item(n), &mut rec, None)?.0);
            for (id, t) in rec.got.into_iter().enumerate() {
                if let Some(t) = t {
                    per_tap[id].push(t);
                }
            }
        }
        let mut out = BTreeMap::new();
        for (id, items) in per_tap.into_iter().enumerate() {
            if wanted[id] {
                out.insert(self.tap_names[id].clone(), Tensor::stack(&items)?);
            }
        }
        Ok(TappedOutput { logits: Tensor::stack(&logits)?, taps: out })
    }

    /// Predicted class per item; ties go to the lowest class index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(x)?))
    }

    /// Blurred input (if the sampler blurs) and the index to sample at.
    fn choose(&self, s: &Sampler, x: &Tensor<T>) -> Result<(Option<Tensor<T>>, ApsIndex)> {
        let blurred = match &s.blur {
            Some(k) => Some(blur(x, k, self.spec.pad)?),
            None => None,
        };
        let src = blurred.as_ref().unwrap_or(x);
        let idx = if s.kind.is_adaptive() { aps_indices(src, s.stride, &s.criterion)?[0] } else { ApsIndex::ORIGIN };
        Ok((blurred, idx))
    }

    /// Runs `nodes` on one item. Returns the output and the index chosen by
    /// the last downsample in `nodes`. `trace`, when given, collects what
    /// backward needs.
    fn run(
        &self,
        nodes: &[Node],
        mut x: Tensor<T>,
        rec: &mut Recorder<'_, T>,
        mut trace: Option<&mut Vec<Trace<T>>>,
    ) -> Result<(Tensor<T>, Option<ApsIndex>)> {
        let pad = self.spec.pad;
        let mut chosen = None;
        for node in nodes {
            let (y, tr) = match &node.op {
                Op::Conv { w, b } => {
                    (conv2d(&x, &self.params[*w].value, self.params[*b].value.data(), 1, pad)?, Trace::Input(x))
                }
                Op::Act(a) => (activate(&x, a), Trace::Input(x)),
                Op::MaxPool(k) => (max_pool_dense(&x, *k, pad)?, Trace::Input(x)),
                Op::Down(s) => {
                    let (blurred, idx) = self.choose(s, &x)?;
                    chosen = Some(idx);
                    let y = downsample_with_index(blurred.as_ref().unwrap_or(&x), s.stride, idx)?;
                    (y, Trace::Down { input: x, blurred, idx })
                }
                Op::Residual(block) => {
                    let mut main_trace = trace.as_ref().map(|_| Vec::new());
                    let (main, idx) = self.run(&block.main, x.clone(), rec, main_trace.as_mut())?;
                    let idx = idx.unwrap_or(ApsIndex::ORIGIN);
                    let shortcut = match &block.down {
                        Some(s) => {
                            let src = match &s.blur {
                                Some(k) => blur(&x, k, pad)?,
                                None => x.clone(),
                            };
                            downsample_with_index(&src, s.stride, idx)?
                        }
                        None => x.clone(),
                    };
                    let projected = match block.proj {
                        Some((w, b)) => conv2d(&shortcut, &self.params[w].value, self.params[b].value.data(), 1, pad)?,
                        None => shortcut.clone(),
                    };
                    let sum = main.add(&projected)?;
                    let y = match &block.post {
                        Some(a) => activate(&sum, a),
                        None => sum.clone(),
                    };
                    let main = main_trace.unwrap_or_default();
                    (y, Trace::Residual { main, shortcut, input: x, idx, sum })
                }
                Op::Gap => (global_average_pool(&x), Trace::Input(x)),
                Op::Fc { w, b } => {
                    (fully_connected(&x, &self.params[*w].value, self.params[*b].value.data())?, Trace::Input(x))
                }
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(tr);
            }
            rec.record(&node.taps, &y);
            x = y;
        }
        Ok((x, chosen))
    }

    /// Mean softmax cross-entropy over the batch and its gradients.
    /// APS indices are held fixed (straight-through).
    pub fn backward(&self, x: &Tensor<T>, labels: &[usize]) -> Result<Gradients> {
        let n = x.shape().n;
        if labels.len() != n {
            return shape_err(format!("{} labels for a batch of {n}", labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange { label, classes: self.classes });
        }
        let inv = 1.0 / n as f64;
        self.accumulate(x, |item, logits| {
            let (loss, mut g) = softmax_cross_entropy(logits, labels[item]);
            g.iter_mut().for_each(|v| *v *= inv);
            (loss * inv, g)
        })
    }

    /// Gradients of `<upstream, logits(x)>`; `loss` is that inner product.
    pub fn backward_from_logits(&self, x: &Tensor<T>, upstream: &Tensor<f64>) -> Result<Gradients> {
        let want = Shape::new(x.shape().n, self.classes, 1, 1);
        if upstream.shape() != want {
            return shape_err(format!("upstream {} does not match logits {want}", upstream.shape()));
        }
        self.accumulate(x, |item, logits| {
            let g = upstream.item_data(item).to_vec();
            let dot = g.iter().zip(logits).map(|(a, b)| a * b).sum();
            (dot, g)
        })
    }

    fn accumulate(&self, x: &Tensor<T>, head: impl Fn(usize, &[f64]) -> (f64, Vec<f64>)) -> Result<Gradients> {
        self.check_input(x)?;
        let mut grads: Vec<Tensor<f64>> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let mut loss = 0.0;
        let mut inputs = Vec::with_capacity(x.shape().n);
        for n in 0..x.shape().n {
            let mut trace = Vec::new();
            let (logits, _) = self.run(&self.nodes, x.item(n), &mut Recorder::off(), Some(&mut trace))?;
            let logits: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
            let (l, g) = head(n, &logits);
            loss += l;
            let g = Tensor::from_vec(Shape::new(1, self.classes, 1, 1), g)?;
            inputs.push(self.back(&self.nodes, trace, g, &mut grads)?);
        }
        Ok(Gradients { loss, params: grads, input: Tensor::stack(&inputs)? })
    }

    fn back(&self, nodes: &[Node], traces: Vec<Trace<T>>, mut g: Tensor<f64>, grads: &mut [Tensor<f64>]) -> Result<Tensor<f64>> {
        let pad = self.spec.pad;
        for (node, tr) in nodes.iter().zip(traces).rev() {
            g = match (&node.op, tr) {
                (Op::Conv { w, b }, Trace::Input(x)) => self.conv_back(&x, *w, *b, &g, grads)?,
                (Op::Act(a), Trace::Input(x)) => activate_vjp(&x, a, &g)?,
                (Op::MaxPool(k), Trace::Input(x)) => max_pool_dense_vjp(&x, *k, pad, &g)?,
                (Op::Down(s), Trace::Down { input, blurred, idx }) => {
                    let src_shape = blurred.as_ref().map_or(input.shape(), |b| b.shape());
                    let scattered = aps_backward(&g, &[idx], s.stride, src_shape)?;
                    match &s.blur {
                        Some(k) => blur_vjp(&input, k, pad, &scattered)?,
                        None => scattered,
                    }
                }
                (Op::Residual(block), Trace::Residual { main, shortcut, input, idx, sum }) => {
                    let g_sum = match &block.post {
                        Some(a) => activate_vjp(&sum, a, &g)?,
                        None => g,
                    };
                    let g_main = self.back(&block.main, main, g_sum.clone(), grads)?;
                    let g_short = match block.proj {
                        Some((w, b)) => self.conv_back(&shortcut, w, b, &g_sum, grads)?,
                        None => g_sum,
                    };
                    let g_short = match &block.down {
                        Some(s) => {
                            let scattered = aps_backward(&g_short, &[idx], s.stride, input.shape())?;
                            match &s.blur {
                                Some(k) => blur_vjp(&input, k, pad, &scattered)?,
                                None => scattered,
                            }
                        }
                        None => g_short,
                    };
                    g_main.add(&g_short)?
                }
                (Op::Gap, Trace::Input(x)) => global_average_pool_vjp(x.shape(), &g)?,
                (Op::Fc { w, b }, Trace::Input(x)) => {
                    let lg = fully_connected_vjp(&x, &self.params[*w].value, &g)?;
                    add_into(&mut grads[*w], &lg.weight);
                    add_bias(&mut grads[*b], &lg.bias);
                    lg.input
                }
                _ => unreachable!("trace recorded for a different node"),
            };
        }
        Ok(g)
    }

    fn conv_back(&self, x: &Tensor<T>, w: usize, b: usize, g: &Tensor<f64>, grads: &mut [Tensor<f64>]) -> Result<Tensor<f64>> {
        let cg = conv2d_vjp(x, &self.params[w].value, 1, self.spec.pad, g)?;
        add_into(&mut grads[w], &cg.weight);
        add_bias(&mut grads[b], &cg.bias);
        Ok(cg.input)
    }

    /// Writes `manifest.toml` and one tensor file per parameter into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.params.len());
        for (i, p) in self.params.iter().enumerate() {
            let file = format!("param{i:03}.psft");
            p.value.save(dir.join(&file))?;
            let s = p.value.shape();
            entries.push(ManifestEntry { name: p.name.clone(), file, shape: [s.n, s.c, s.h, s.w] });
        }
        let manifest = Manifest { network: self.spec.clone(), params: entries };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }

    /// Rebuilds a network saved by [`Network::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.toml"))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut net = Network::build(&manifest.network)?;
        if manifest.params.len() != net.params.len() {
            return Err(Error::Format(format!(
                "manifest lists {} parameters, network has {}",
                manifest.params.len(),
                net.params.len()
            )));
        }
        for (p, e) in net.params.iter_mut().zip(&manifest.params) {
            let value = Tensor::<T>::load(dir.join(&e.file))?;
            if e.name != p.name || value.shape() != p.value.shape() {
                return Err(Error::Format(format!("parameter `{}` does not match `{}` in the spec", e.name, p.name)));
            }
            p.value = value;
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    network: NetworkSpec,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    file: String,
    shape: [usize; 4],
}

fn add_into(acc: &mut Tensor<f64>, g: &Tensor<f64>) {
    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
}

fn add_bias(acc: &mut Tensor<f64>, g: &[f64]) {
    acc.data_mut().iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Loss `-log softmax(z)[label]` and its gradient `softmax(z) - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let loss = total.ln() - (logits[label] - max);
    let grad = exps.iter().enumerate().map(|(k, e)| e / total - if k == label { 1.0 } else { 0.0 }).collect();
    (loss, grad)
}

/// Row-wise argmax of `(N, K, 1, 1)` logits, lowest index on ties.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.shape().n)
        .map(|n| {
            let row = logits.item_data(n);
            let mut best = 0;
            for (k, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Collects tapped feature maps of one item.
struct Recorder<'a, T> {
    wanted: &'a [bool],
    got: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Recorder<'_, T> {
    fn off() -> Self {
        Recorder { wanted: &[], got: Vec::new() }
    }

    fn record(&mut self, taps: &[usize], y: &Tensor<T>) {
        for &id in taps {
            if self.wanted.get(id).copied().unwrap_or(false) {
                self.got[id] = Some(y.clone());
            }
        }
    }
}
