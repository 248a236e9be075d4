//! Polyphase decomposition and adaptive polyphase sampling (APS).
//!
//! For stride `s` an image has `s*s` polyphase components
//! `y_ij(n1, n2) = x(s*n1 + i, s*n2 + j)`. A circular shift of the input
//! permutes these components (and shifts each by at most one sample), so
//! picking a component with a permutation-invariant rule such as
//! "largest l2 norm" makes the choice follow the shift. Conventional
//! strided sampling always keeps `y_00` and does not.
//!
//! Scores pool over every channel and pixel of one batch item; each item
//! of a batch gets its own index. An axis of extent 1 has a single phase
//! and is not subsampled, so a `1 x W` row splits into `s` components
//! `(0, j)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{circular_shift, Real, Shape, Tensor};

/// Grid offset `(i, j)` of a polyphase component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct ApsIndex {
    pub i: usize,
    pub j: usize,
}

impl ApsIndex {
    pub const ORIGIN: ApsIndex = ApsIndex { i: 0, j: 0 };

    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

impl fmt::Display for ApsIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

/// Per-axis phase counts for stride `s` on an `h x w` plane.
fn phases(s: usize, h: usize, w: usize) -> Result<(usize, usize)> {
    if s < 1 {
        return arg_err("stride must be >= 1");
    }
    let axis = |len: usize, name: &str| -> Result<usize> {
        if len == 1 {
            Ok(1)
        } else if s > len {
            arg_err(format!("stride {s} exceeds {name} {len}"))
        } else {
            Ok(s)
        }
    };
    Ok((axis(h, "height")?, axis(w, "width")?))
}

fn component_extent(len: usize, phase: usize, step: usize) -> usize {
    (len - phase).div_ceil(step)
}

/// The polyphase components of a tensor for one stride.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyphaseSet<T> {
    stride: usize,
    phases: (usize, usize),
    components: Vec<Tensor<T>>,
    source_shape: Shape,
}

impl<T: Real> PolyphaseSet<T> {
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of phases along (height, width); `(s, s)` except on singleton axes.
    pub fn phases(&self) -> (usize, usize) {
        self.phases
    }

    pub fn source_shape(&self) -> Shape {
        self.source_shape
    }

    pub fn component(&self, idx: ApsIndex) -> Option<&Tensor<T>> {
        if idx.i >= self.phases.0 || idx.j >= self.phases.1 {
            return None;
        }
        self.components.get(idx.i * self.phases.1 + idx.j)
    }

    /// `(index, component)` pairs in lexicographic index order.
    pub fn iter(&self) -> impl Iterator<Item = (ApsIndex, &Tensor<T>)> {
        let pw = self.phases.1;
        self.components.iter().enumerate().map(move |(k, t)| (ApsIndex::new(k / pw, k % pw), t))
    }

    /// Interleaves the components back into the source tensor.
    pub fn reassemble(&self) -> Tensor<T> {
        let (ph, pw) = self.phases;
        let s = self.source_shape;
        let mut out = Tensor::zeros(s);
        for (idx, comp) in self.iter() {
            let cs = comp.shape();
            for n in 0..s.n {
                for c in 0..s.c {
                    for r in 0..cs.h {
                        for q in 0..cs.w {
                            let at = out.offset(n, c, ph * r + idx.i, pw * q + idx.j);
                            out.data_mut()[at] = comp.get(n, c, r, q);
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn decompose<T: Real>(x: &Tensor<T>, s: usize) -> Result<PolyphaseSet<T>> {
    let xs = x.shape();
    let (ph, pw) = phases(s, xs.h, xs.w)?;
    let mut components = Vec::with_capacity(ph * pw);
    for i in 0..ph {
        for j in 0..pw {
            components.push(sample(x, ph, pw, ApsIndex::new(i, j)));
        }
    }
    Ok(PolyphaseSet { stride: s, phases: (ph, pw), components, source_shape: xs })
}

fn sample<T: Real>(x: &Tensor<T>, ph: usize, pw: usize, idx: ApsIndex) -> Tensor<T> {
    let xs = x.shape();
    let shape = Shape::new(xs.n, xs.c, component_extent(xs.h, idx.i, ph), component_extent(xs.w, idx.j, pw));
    Tensor::from_fn(shape, |n, c, r, q| x.get(n, c, ph * r + idx.i, pw * q + idx.j))
}

/// Norm used to score polyphase components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    Linf,
    /// Sum of the l1 and l2 norms; exact ties in both are rarer than in one.
    L1PlusL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectMode {
    Argmax,
    Argmin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TieRule {
    /// Smallest `(i, j)` among equal scores.
    #[default]
    LexicographicFirst,
}

/// Permutation-invariant rule used by APS to pick a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SelectionCriterion {
    pub norm: Norm,
    pub mode: SelectMode,
    pub tie_rule: TieRule,
}

impl SelectionCriterion {
    pub const fn argmax(norm: Norm) -> Self {
        Self { norm, mode: SelectMode::Argmax, tie_rule: TieRule::LexicographicFirst }
    }

    pub const fn argmin(norm: Norm) -> Self {
        Self { norm, mode: SelectMode::Argmin, tie_rule: TieRule::LexicographicFirst }
    }
}

impl Default for SelectionCriterion {
    fn default() -> Self {
        Self::argmax(Norm::L2)
    }
}

impl fmt::Display for SelectionCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            SelectMode::Argmax => "argmax",
            SelectMode::Argmin => "argmin",
        };
        let norm = match self.norm {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
            Norm::L1PlusL2 => "l1+l2",
        };
        write!(f, "{mode}-{norm}")
    }
}

impl FromStr for SelectionCriterion {
    type Err = Error;

    /// Parses `argmax-l2`, `argmin-l1`, `argmax-linf`, `argmax-l1+l2`, ...
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown selection criterion `{s}`"));
        let (mode, norm) = s.split_once('-').ok_or_else(bad)?;
        let mode = match mode {
            "argmax" => SelectMode::Argmax,
            "argmin" => SelectMode::Argmin,
            _ => return Err(bad()),
        };
        let norm = match norm {
            "l1" => Norm::L1,
            "l2" => Norm::L2,
            "linf" => Norm::Linf,
            "l1+l2" => Norm::L1PlusL2,
            _ => return Err(bad()),
        };
        Ok(Self { norm, mode, tie_rule: TieRule::LexicographicFirst })
    }
}

impl Serialize for SelectionCriterion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SelectionCriterion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Running f64 accumulator for one component's norm.
#[derive(Clone, Copy, Default)]
struct NormAcc {
    abs_sum: f64,
    sq_sum: f64,
    max_abs: f64,
}

impl NormAcc {
    #[inline]
    fn push(&mut self, v: f64) {
        let a = v.abs();
        self.abs_sum += a;
        self.sq_sum += v * v;
        if a > self.max_abs {
            self.max_abs = a;
        }
    }

    fn finish(self, norm: Norm) -> f64 {
        match norm {
            Norm::L1 => self.abs_sum,
            Norm::L2 => self.sq_sum.sqrt(),
            Norm::Linf => self.max_abs,
            Norm::L1PlusL2 => self.abs_sum + self.sq_sum.sqrt(),
        }
    }
}

/// Scores of every component, in lexicographic index order, pooled over
/// all elements of each component (every batch item, channel and pixel).
pub fn component_scores<T: Real>(ps: &PolyphaseSet<T>, c: &SelectionCriterion) -> Vec<f64> {
    ps.components
        .iter()
        .map(|t| {
            let mut acc = NormAcc::default();
            t.data().iter().for_each(|v| acc.push(v.as_f64()));
            acc.finish(c.norm)
        })
        .collect()
}

/// Scores for batch item `n` computed in one pass over the source. The
/// visiting order per component (channel, row, column) matches
/// [`component_scores`], so both give bit-identical results.
fn item_scores<T: Real>(x: &Tensor<T>, n: usize, ph: usize, pw: usize, norm: Norm) -> Vec<f64> {
    let s = x.shape();
    let mut acc = vec![NormAcc::default(); ph * pw];
    for c in 0..s.c {
        let plane = x.plane(n, c);
        for r in 0..s.h {
            let row = &plane[r * s.w..(r + 1) * s.w];
            let base = (r % ph) * pw;
            for (q, v) in row.iter().enumerate() {
                acc[base + q % pw].push(v.as_f64());
            }
        }
    }
    acc.into_iter().map(|a| a.finish(norm)).collect()
}

fn pick(scores: &[f64], pw: usize, c: &SelectionCriterion) -> ApsIndex {
    let TieRule::LexicographicFirst = c.tie_rule;
    let mut best = 0;
    for (k, &v) in scores.iter().enumerate().skip(1) {
        let better = match c.mode {
            SelectMode::Argmax => v > scores[best],
            SelectMode::Argmin => v < scores[best],
        };
        if better {
            best = k;
        }
    }
    ApsIndex::new(best / pw, best % pw)
}

/// Index chosen by `c` over the whole set; ties go to the smallest `(i, j)`.
pub fn select<T: Real>(ps: &PolyphaseSet<T>, c: &SelectionCriterion) -> ApsIndex {
    pick(&component_scores(ps, c), ps.phases.1, c)
}

/// Output of APS: the sampled tensor and one index per batch item.
#[derive(Debug, Clone, PartialEq)]
pub struct ApsOutput<T> {
    pub tensor: Tensor<T>,
    pub indices: Vec<ApsIndex>,
}

/// Indices APS would choose for each batch item, without sampling.
pub fn aps_indices<T: Real>(x: &Tensor<T>, s: usize, c: &SelectionCriterion) -> Result<Vec<ApsIndex>> {
    let xs = x.shape();
    let (ph, pw) = phases(s, xs.h, xs.w)?;
    Ok((0..xs.n).map(|n| pick(&item_scores(x, n, ph, pw, c.norm), pw, c)).collect())
}

/// Adaptive polyphase sampling with stride `s`.
///
/// Fails if items of one batch select components of different extents,
/// which can only happen for sizes not divisible by `s`.
pub fn aps_downsample<T: Real>(x: &Tensor<T>, s: usize, c: &SelectionCriterion) -> Result<ApsOutput<T>> {
    let indices = aps_indices(x, s, c)?;
    let tensor = downsample_with_indices(x, s, &indices)?;
    Ok(ApsOutput { tensor, indices })
}

/// Component `idx` of `decompose(x, s)` for every batch item.
pub fn downsample_with_index<T: Real>(x: &Tensor<T>, s: usize, idx: ApsIndex) -> Result<Tensor<T>> {
    let xs = x.shape();
    let (ph, pw) = phases(s, xs.h, xs.w)?;
    check_index(idx, ph, pw)?;
    Ok(sample(x, ph, pw, idx))
}

/// Per-item variant of [`downsample_with_index`].
pub fn downsample_with_indices<T: Real>(x: &Tensor<T>, s: usize, indices: &[ApsIndex]) -> Result<Tensor<T>> {
    let xs = x.shape();
    if indices.len() != xs.n {
        return shape_err(format!("{} indices for a batch of {}", indices.len(), xs.n));
    }
    if let Some(&first) = indices.first() {
        if indices.iter().all(|&i| i == first) {
            return downsample_with_index(x, s, first);
        }
    }
    let (ph, pw) = phases(s, xs.h, xs.w)?;
    let mut items = Vec::with_capacity(xs.n);
    for (n, &idx) in indices.iter().enumerate() {
        check_index(idx, ph, pw)?;
        items.push(sample(&x.item(n), ph, pw, idx));
    }
    Tensor::stack(&items)
        .map_err(|_| Error::ShapeMismatch("batch items selected components of different sizes".into()))
}

fn check_index(idx: ApsIndex, ph: usize, pw: usize) -> Result<()> {
    if idx.i >= ph || idx.j >= pw {
        return arg_err(format!("index {idx} outside {ph}x{pw} phase grid"));
    }
    Ok(())
}

/// Strided sampling on the fixed `(0, 0)` grid.
pub fn conventional_downsample<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    downsample_with_index(x, s, ApsIndex::ORIGIN)
}

/// Gradient of sampling at fixed indices: scatters `upstream` back to the
/// sampled positions and leaves every other position at exactly zero.
/// The selection itself is treated as constant.
pub fn aps_backward(upstream: &Tensor<f64>, indices: &[ApsIndex], s: usize, in_shape: Shape) -> Result<Tensor<f64>> {
    let (ph, pw) = phases(s, in_shape.h, in_shape.w)?;
    if indices.len() != in_shape.n {
        return shape_err(format!("{} indices for a batch of {}", indices.len(), in_shape.n));
    }
    let us = upstream.shape();
    let mut out = Tensor::<f64>::zeros(in_shape);
    for (n, &idx) in indices.iter().enumerate() {
        check_index(idx, ph, pw)?;
        let want = Shape::new(
            in_shape.n,
            in_shape.c,
            component_extent(in_shape.h, idx.i, ph),
            component_extent(in_shape.w, idx.j, pw),
        );
        if us.n != want.n || us.c != want.c || us.h != want.h || us.w != want.w {
            return shape_err(format!("upstream {us} does not match component {idx} of {in_shape}"));
        }
        for c in 0..in_shape.c {
            for r in 0..want.h {
                for q in 0..want.w {
                    let at = out.offset(n, c, ph * r + idx.i, pw * q + idx.j);
                    out.data_mut()[at] = upstream.get(n, c, r, q);
                }
            }
        }
    }
    Ok(out)
}

/// Shift candidates `0, 1, -1, 2, -2, ...` up to `max`.
fn shift_order(max: usize) -> impl Iterator<Item = isize> + Clone {
    std::iter::once(0).chain((1..=max as isize).flat_map(|k| [k, -k]))
}

/// Finds `(dy, dx)` with `|dy|, |dx| <= max_shift` such that
/// `circular_shift(a, dy, dx)` equals `b` within 1e-6. Candidates are tried
/// in the order `0, 1, -1, 2, -2, ...` per axis, rows first.
pub fn equal_up_to_shift<T: Real>(a: &Tensor<T>, b: &Tensor<T>, max_shift: usize) -> Result<Option<(isize, isize)>> {
    if a.shape() != b.shape() {
        return shape_err(format!("cannot compare {} with {}", a.shape(), b.shape()));
    }
    for dy in shift_order(max_shift) {
        for dx in shift_order(max_shift) {
            if circular_shift(a, dy, dx).max_abs_diff(b)? <= 1e-6 {
                return Ok(Some((dy, dx)));
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor<f64> {
        Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap()
    }

    fn row(v: &[f64]) -> Tensor<f64> {
        Tensor::from_rows(&[v]).unwrap()
    }

    #[test]
    fn decompose_two_by_two() {
        let ps = decompose(&grid(), 2).unwrap();
        let val = |i, j| ps.component(ApsIndex::new(i, j)).unwrap().data().to_vec();
        assert_eq!(val(0, 0), vec![1.0]);
        assert_eq!(val(0, 1), vec![2.0]);
        assert_eq!(val(1, 0), vec![3.0]);
        assert_eq!(val(1, 1), vec![4.0]);
        assert!(ps.component(ApsIndex::new(2, 0)).is_none());
    }

    #[test]
    fn stride_one_is_identity() {
        let ps = decompose(&grid(), 1).unwrap();
        assert_eq!(ps.phases(), (1, 1));
        assert_eq!(ps.component(ApsIndex::ORIGIN).unwrap(), &grid());
    }

    #[test]
    fn odd_size_component_extents() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 3, 3));
        let ps = decompose(&x, 2).unwrap();
        let dims: Vec<_> = ps.iter().map(|(_, t)| (t.shape().h, t.shape().w)).collect();
        assert_eq!(dims, vec![(2, 2), (2, 1), (1, 2), (1, 1)]);
    }

    #[test]
    fn stride_out_of_range() {
        assert!(decompose(&grid(), 0).is_err());
        assert!(decompose(&grid(), 3).is_err());
    }

    #[test]
    fn scores_on_row() {
        let ps = decompose(&row(&[3.0, 2.0, 0.0, 2.0]), 2).unwrap();
        let l1 = component_scores(&ps, &SelectionCriterion::argmax(Norm::L1));
        assert_eq!(l1, vec![3.0, 4.0]);
        let l2 = component_scores(&ps, &SelectionCriterion::argmax(Norm::L2));
        assert_eq!(l2[0], 3.0);
        assert!((l2[1] - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(select(&ps, &SelectionCriterion::argmax(Norm::L1)), ApsIndex::new(0, 1));
        assert_eq!(select(&ps, &SelectionCriterion::argmax(Norm::L2)), ApsIndex::new(0, 0));
        let both = component_scores(&ps, &SelectionCriterion::argmax(Norm::L1PlusL2));
        assert!((both[1] - (4.0 + 8f64.sqrt())).abs() < 1e-15);
        let inf = component_scores(&ps, &SelectionCriterion::argmax(Norm::Linf));
        assert_eq!(inf, vec![3.0, 2.0]);
    }

    #[test]
    fn degenerate_scores_and_ties() {
        let z = Tensor::<f64>::zeros(Shape::new(1, 2, 4, 4));
        let ps = decompose(&z, 2).unwrap();
        assert!(component_scores(&ps, &SelectionCriterion::default()).iter().all(|&v| v == 0.0));
        let ones = Tensor::<f64>::filled(Shape::new(1, 1, 4, 4), 1.0);
        let ps = decompose(&ones, 2).unwrap();
        let sc = component_scores(&ps, &SelectionCriterion::default());
        assert!(sc.iter().all(|&v| v == sc[0]));
        assert_eq!(select(&ps, &SelectionCriterion::default()), ApsIndex::ORIGIN);
        assert_eq!(select(&ps, &SelectionCriterion::argmin(Norm::L1)), ApsIndex::ORIGIN);
        let out = aps_downsample(&ones, 2, &SelectionCriterion::default()).unwrap();
        assert_eq!(out.tensor, conventional_downsample(&ones, 2).unwrap());
    }

    #[test]
    fn select_largest_single_value() {
        let ps = decompose(&grid(), 2).unwrap();
        assert_eq!(select(&ps, &SelectionCriterion::default()), ApsIndex::new(1, 1));
        assert_eq!(select(&ps, &SelectionCriterion::argmin(Norm::L2)), ApsIndex::new(0, 0));
    }

    #[test]
    fn aps_on_row_and_its_shift() {
        let x = row(&[1.0, 5.0, 2.0, 4.0]);
        let out = aps_downsample(&x, 2, &SelectionCriterion::default()).unwrap();
        assert_eq!(out.tensor.data(), &[5.0, 4.0]);
        assert_eq!(out.indices, vec![ApsIndex::new(0, 1)]);

        let shifted = circular_shift(&x, 0, 1);
        let out2 = aps_downsample(&shifted, 2, &SelectionCriterion::default()).unwrap();
        assert_eq!(out2.tensor.data(), &[4.0, 5.0]);
        assert_eq!(out2.indices, vec![ApsIndex::new(0, 0)]);
        assert_eq!(circular_shift(&out.tensor, 0, 1), out2.tensor);
    }

    #[test]
    fn fixed_index_sampling() {
        assert_eq!(downsample_with_index(&grid(), 2, ApsIndex::new(0, 1)).unwrap().data(), &[2.0]);
        assert!(downsample_with_index(&grid(), 2, ApsIndex::new(0, 2)).is_err());
        assert_eq!(conventional_downsample(&grid(), 2).unwrap().data(), &[1.0]);
        assert_eq!(conventional_downsample(&grid(), 1).unwrap(), grid());
        assert_eq!(conventional_downsample(&row(&[1.0, 5.0, 2.0, 4.0]), 2).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn batch_items_select_independently() {
        let a = grid();
        let b = circular_shift(&grid(), 1, 1);
        let x = Tensor::stack(&[a, b]).unwrap();
        let out = aps_downsample(&x, 2, &SelectionCriterion::default()).unwrap();
        assert_eq!(out.indices, vec![ApsIndex::new(1, 1), ApsIndex::new(0, 0)]);
        assert_eq!(out.tensor.data(), &[4.0, 4.0]);
    }

    #[test]
    fn backward_scatters() {
        let up = Tensor::<f64>::filled(Shape::new(1, 1, 1, 1), 1.0);
        let g = aps_backward(&up, &[ApsIndex::ORIGIN], 2, Shape::new(1, 1, 2, 2)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
        let bad = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 1));
        assert!(aps_backward(&bad, &[ApsIndex::ORIGIN], 2, Shape::new(1, 1, 2, 2)).is_err());
    }

    #[test]
    fn shift_matching() {
        let a = row(&[5.0, 4.0]);
        assert_eq!(equal_up_to_shift(&a, &a, 1).unwrap(), Some((0, 0)));
        assert_eq!(equal_up_to_shift(&a, &row(&[4.0, 5.0]), 1).unwrap(), Some((0, 1)));
        assert_eq!(equal_up_to_shift(&row(&[1.0, 2.0]), &row(&[3.0, 4.0]), 3).unwrap(), None);
        assert!(equal_up_to_shift(&a, &grid(), 1).is_err());
    }

    #[test]
    fn criterion_strings() {
        for s in ["argmax-l1", "argmax-l2", "argmax-linf", "argmin-l1", "argmin-l2", "argmax-l1+l2"] {
            assert_eq!(s.parse::<SelectionCriterion>().unwrap().to_string(), s);
        }
        assert!("max-l2".parse::<SelectionCriterion>().is_err());
        assert!("argmax-l3".parse::<SelectionCriterion>().is_err());
    }
}
