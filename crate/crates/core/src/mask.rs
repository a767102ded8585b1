//! Packed binary placement masks over centroid cells × cardinal orientations.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Orientation;
use crate::scene::{CellRect, GridSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("cannot sample from an empty mask")]
    EmptyMask,
    #[error("empty score grid")]
    EmptyScores,
    #[error("malformed mask file: {0}")]
    Format(String),
}

/// Row-major 2-D bitset. Row `y = 0` is the southernmost row; bits past `w`
/// in the last word of a row are always zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitGrid {
    w: usize,
    h: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitGrid {
    pub fn new(w: usize, h: usize) -> BitGrid {
        let words_per_row = w.div_ceil(64);
        BitGrid {
            w,
            h,
            words_per_row,
            words: vec![0; words_per_row * h],
        }
    }

    pub fn full(w: usize, h: usize) -> BitGrid {
        let mut g = BitGrid::new(w, h);
        g.words.iter_mut().for_each(|x| *x = !0);
        g.clear_padding();
        g
    }

    pub fn from_fn(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> bool) -> BitGrid {
        let mut g = BitGrid::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if f(x, y) {
                    g.set(x, y, true);
                }
            }
        }
        g
    }

    /// Set exactly the cells `(x, y)` with `cols[x] && rows[y]`.
    pub fn outer(cols: &[bool], rows: &[bool]) -> BitGrid {
        let mut g = BitGrid::new(cols.len(), rows.len());
        let mut pattern = vec![0u64; g.words_per_row];
        for (x, _) in cols.iter().enumerate().filter(|(_, c)| **c) {
            pattern[x / 64] |= 1 << (x % 64);
        }
        for (y, _) in rows.iter().enumerate().filter(|(_, r)| **r) {
            g.row_mut(y).copy_from_slice(&pattern);
        }
        g
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn same_shape(&self, other: &BitGrid) -> bool {
        self.w == other.w && self.h == other.h
    }

    fn row(&self, y: usize) -> &[u64] {
        &self.words[y * self.words_per_row..(y + 1) * self.words_per_row]
    }

    fn row_mut(&mut self, y: usize) -> &mut [u64] {
        &mut self.words[y * self.words_per_row..(y + 1) * self.words_per_row]
    }

    fn clear_padding(&mut self) {
        let rem = self.w % 64;
        if rem == 0 {
            return;
        }
        let keep = (1u64 << rem) - 1;
        for y in 0..self.h {
            let wpr = self.words_per_row;
            self.words[y * wpr + wpr - 1] &= keep;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.w && y < self.h);
        self.words[y * self.words_per_row + x / 64] >> (x % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        debug_assert!(x < self.w && y < self.h);
        let word = &mut self.words[y * self.words_per_row + x / 64];
        if v {
            *word |= 1 << (x % 64);
        } else {
            *word &= !(1 << (x % 64));
        }
    }

    /// Set every in-grid cell of `rect`.
    pub fn fill_rect(&mut self, rect: &CellRect) {
        let x0 = rect.x0.max(0);
        let y0 = rect.y0.max(0);
        let x1 = rect.x1.min(self.w as i64 - 1);
        let y1 = rect.y1.min(self.h as i64 - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                self.set(x as usize, y as usize, true);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn and_assign(&mut self, other: &BitGrid) {
        assert!(self.same_shape(other), "bit grid shape mismatch");
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a &= b);
    }

    pub fn or_assign(&mut self, other: &BitGrid) {
        assert!(self.same_shape(other), "bit grid shape mismatch");
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
    }

    pub fn and(&self, other: &BitGrid) -> BitGrid {
        let mut r = self.clone();
        r.and_assign(other);
        r
    }

    pub fn or(&self, other: &BitGrid) -> BitGrid {
        let mut r = self.clone();
        r.or_assign(other);
        r
    }

    pub fn complement(&self) -> BitGrid {
        let mut r = self.clone();
        r.words.iter_mut().for_each(|w| *w = !*w);
        r.clear_padding();
        r
    }

    pub fn and_count(&self, other: &BitGrid) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset_of(&self, other: &BitGrid) -> bool {
        self.same_shape(other) && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.h).flat_map(move |y| {
            self.row(y).iter().enumerate().flat_map(move |(wi, &word)| {
                let mut bits = word;
                std::iter::from_fn(move || {
                    if bits == 0 {
                        return None;
                    }
                    let b = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    Some((wi * 64 + b, y))
                })
            })
        })
    }

    /// The `n`-th set cell in row-major order.
    pub fn nth_one(&self, mut n: usize) -> Option<(usize, usize)> {
        for (i, &word) in self.words.iter().enumerate() {
            let c = word.count_ones() as usize;
            if n < c {
                let mut bits = word;
                for _ in 0..n {
                    bits &= bits - 1;
                }
                let y = i / self.words_per_row;
                let x = (i % self.words_per_row) * 64 + bits.trailing_zeros() as usize;
                return Some((x, y));
            }
            n -= c;
        }
        None
    }

    /// Morphological dilation by a `(2r+1)²` square.
    pub fn dilate(&self, radius: usize) -> BitGrid {
        if radius == 0 || self.is_empty() {
            return self.clone();
        }
        let mut horiz = BitGrid::new(self.w, self.h);
        for y in 0..self.h {
            let src = self.row(y);
            let dst = horiz.row_mut(y);
            dst.copy_from_slice(src);
            for k in 1..=radius.min(self.w) {
                or_shifted_left(dst, src, k);
                or_shifted_right(dst, src, k);
            }
        }
        horiz.clear_padding();
        let mut out = BitGrid::new(self.w, self.h);
        for y in 0..self.h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(self.h - 1);
            for yy in lo..=hi {
                let (wpr, src) = (self.words_per_row, horiz.row(yy).to_vec());
                let dst = &mut out.words[y * wpr..(y + 1) * wpr];
                dst.iter_mut().zip(&src).for_each(|(a, b)| *a |= b);
            }
        }
        out
    }

    /// Run lengths of alternating 0/1 runs in row-major order, starting with a 0-run.
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for y in 0..self.h {
            for x in 0..self.w {
                let v = self.get(x, y);
                if v != current {
                    runs.push(len);
                    current = v;
                    len = 0;
                }
                len += 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(w: usize, h: usize, runs: &[u32]) -> Result<BitGrid, MaskError> {
        let total: u64 = runs.iter().map(|r| *r as u64).sum();
        if total != (w * h) as u64 {
            return Err(MaskError::Format(format!("runs cover {total} cells, expected {}", w * h)));
        }
        let mut g = BitGrid::new(w, h);
        let mut pos = 0usize;
        for (i, &r) in runs.iter().enumerate() {
            if i % 2 == 1 {
                for p in pos..pos + r as usize {
                    g.set(p % w, p / w, true);
                }
            }
            pos += r as usize;
        }
        Ok(g)
    }
}

fn or_shifted_left(dst: &mut [u64], src: &[u64], k: usize) {
    // Bit x of the result takes bit x - k of the source.
    let (wshift, bshift) = (k / 64, k % 64);
    for i in (0..dst.len()).rev() {
        if i < wshift {
            break;
        }
        let j = i - wshift;
        let mut v = src[j] << bshift;
        if bshift > 0 && j > 0 {
            v |= src[j - 1] >> (64 - bshift);
        }
        dst[i] |= v;
    }
}

fn or_shifted_right(dst: &mut [u64], src: &[u64], k: usize) {
    // Bit x of the result takes bit x + k of the source.
    let (wshift, bshift) = (k / 64, k % 64);
    for i in 0..dst.len() {
        let j = i + wshift;
        if j >= src.len() {
            break;
        }
        let mut v = src[j] >> bshift;
        if bshift > 0 && j + 1 < src.len() {
            v |= src[j + 1] << (64 - bshift);
        }
        dst[i] |= v;
    }
}

/// A centroid cell and facing direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub cell: (usize, usize),
    pub orientation: Orientation,
}

/// W×H×4 binary mask; slice `o` holds the valid centroid cells for orientation `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementMask {
    pub grid: GridSpec,
    slices: [BitGrid; 4],
}

impl PlacementMask {
    pub fn empty(grid: &GridSpec) -> PlacementMask {
        let s = BitGrid::new(grid.w, grid.h);
        PlacementMask {
            grid: grid.clone(),
            slices: [s.clone(), s.clone(), s.clone(), s],
        }
    }

    pub fn full(grid: &GridSpec) -> PlacementMask {
        let s = BitGrid::full(grid.w, grid.h);
        PlacementMask {
            grid: grid.clone(),
            slices: [s.clone(), s.clone(), s.clone(), s],
        }
    }

    pub fn from_slices(grid: &GridSpec, slices: [BitGrid; 4]) -> Result<PlacementMask, MaskError> {
        if slices.iter().any(|s| s.w != grid.w || s.h != grid.h) {
            return Err(MaskError::GridMismatch("slice dimensions differ from grid".into()));
        }
        Ok(PlacementMask {
            grid: grid.clone(),
            slices,
        })
    }

    pub fn slice(&self, o: Orientation) -> &BitGrid {
        &self.slices[o.index()]
    }

    pub fn slice_mut(&mut self, o: Orientation) -> &mut BitGrid {
        &mut self.slices[o.index()]
    }

    pub fn slices(&self) -> &[BitGrid; 4] {
        &self.slices
    }

    pub fn get(&self, p: Placement) -> bool {
        p.cell.0 < self.grid.w && p.cell.1 < self.grid.h && self.slices[p.orientation.index()].get(p.cell.0, p.cell.1)
    }

    pub fn set(&mut self, p: Placement, v: bool) {
        self.slices[p.orientation.index()].set(p.cell.0, p.cell.1, v);
    }

    fn check(&self, other: &PlacementMask) -> Result<(), MaskError> {
        if self.grid != other.grid {
            return Err(MaskError::GridMismatch(format!(
                "{}x{}@{} vs {}x{}@{}",
                self.grid.w, self.grid.h, self.grid.cell, other.grid.w, other.grid.h, other.grid.cell
            )));
        }
        Ok(())
    }

    pub fn and(&self, other: &PlacementMask) -> Result<PlacementMask, MaskError> {
        self.check(other)?;
        let mut r = self.clone();
        r.and_assign(other);
        Ok(r)
    }

    pub fn or(&self, other: &PlacementMask) -> Result<PlacementMask, MaskError> {
        self.check(other)?;
        let mut r = self.clone();
        r.or_assign(other);
        Ok(r)
    }

    /// In-place conjunction; panics on grid mismatch.
    pub fn and_assign(&mut self, other: &PlacementMask) {
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            a.and_assign(b);
        }
    }

    /// In-place disjunction; panics on grid mismatch.
    pub fn or_assign(&mut self, other: &PlacementMask) {
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            a.or_assign(b);
        }
    }

    pub fn complement(&self) -> PlacementMask {
        PlacementMask {
            grid: self.grid.clone(),
            slices: self.slices.clone().map(|s| s.complement()),
        }
    }

    pub fn count(&self) -> usize {
        self.slices.iter().map(BitGrid::count).sum()
    }

    pub fn slice_counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.slices[i].count())
    }

    pub fn is_empty(&self) -> bool {
        self.slices.iter().all(BitGrid::is_empty)
    }

    /// Orientations whose slice has at least one set cell.
    pub fn orientations(&self) -> Vec<Orientation> {
        Orientation::ALL.into_iter().filter(|o| !self.slice(*o).is_empty()).collect()
    }

    pub fn is_subset_of(&self, other: &PlacementMask) -> bool {
        self.grid == other.grid && self.slices.iter().zip(&other.slices).all(|(a, b)| a.is_subset_of(b))
    }

    pub fn dilate(&self, radius: usize) -> PlacementMask {
        PlacementMask {
            grid: self.grid.clone(),
            slices: self.slices.clone().map(|s| s.dilate(radius)),
        }
    }

    /// Per-cell OR over the four orientation slices.
    pub fn collapse(&self) -> BitGrid {
        let mut out = self.slices[0].clone();
        for s in &self.slices[1..] {
            out.or_assign(s);
        }
        out
    }

    /// The mask restricted to a single orientation slice.
    pub fn only(&self, o: Orientation) -> PlacementMask {
        let mut r = PlacementMask::empty(&self.grid);
        r.slices[o.index()] = self.slices[o.index()].clone();
        r
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = Placement> + '_ {
        Orientation::ALL.into_iter().flat_map(move |o| {
            self.slices[o.index()]
                .iter_ones()
                .map(move |cell| Placement { cell, orientation: o })
        })
    }

    /// `k` placements drawn uniformly (with replacement) over the set bits.
    pub fn sample_with<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Placement>, MaskError> {
        let counts = self.slice_counts();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(MaskError::EmptyMask);
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut idx = rng.gen_range(0..total);
            for o in Orientation::ALL {
                if idx < counts[o.index()] {
                    let cell = self.slices[o.index()].nth_one(idx).expect("index within popcount");
                    out.push(Placement { cell, orientation: o });
                    break;
                }
                idx -= counts[o.index()];
            }
        }
        Ok(out)
    }

    pub fn to_file(&self) -> MaskFile {
        MaskFile {
            grid: self.grid.clone(),
            slices: self.slices.clone().map(|s| s.to_rle()).to_vec(),
        }
    }

    pub fn from_file(file: &MaskFile) -> Result<PlacementMask, MaskError> {
        if file.slices.len() != 4 {
            return Err(MaskError::Format(format!("expected 4 slices, got {}", file.slices.len())));
        }
        let g = &file.grid;
        let s = |i: usize| BitGrid::from_rle(g.w, g.h, &file.slices[i]);
        PlacementMask::from_slices(g, [s(0)?, s(1)?, s(2)?, s(3)?])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("mask files always serialize")
    }

    pub fn from_json(text: &str) -> Result<PlacementMask, MaskError> {
        let file: MaskFile = serde_json::from_str(text).map_err(|e| MaskError::Format(e.to_string()))?;
        PlacementMask::from_file(&file)
    }
}

/// On-disk mask: grid header plus one run-length list per orientation (N, E, S, W).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub grid: GridSpec,
    pub slices: Vec<Vec<u32>>,
}

pub fn mask_and(a: &PlacementMask, b: &PlacementMask) -> Result<PlacementMask, MaskError> {
    a.and(b)
}

pub fn mask_or(a: &PlacementMask, b: &PlacementMask) -> Result<PlacementMask, MaskError> {
    a.or(b)
}

pub fn collapse_orientations(m: &PlacementMask) -> BitGrid {
    m.collapse()
}

pub fn sample_placements(m: &PlacementMask, k: usize, seed: u64) -> Result<Vec<Placement>, MaskError> {
    m.sample_with(k, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MaskMetrics {
    pub fn from_counts(overlap: usize, predicted: usize, truth: usize) -> MaskMetrics {
        let precision = if predicted == 0 { 0.0 } else { overlap as f64 / predicted as f64 };
        let recall = if truth == 0 { 0.0 } else { overlap as f64 / truth as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MaskMetrics { precision, recall, f1 }
    }
}

/// Precision/recall/F1 of `pred` against `truth` after dilating both.
pub fn compare_masks(pred: &BitGrid, truth: &BitGrid, dilation_radius: usize) -> Result<MaskMetrics, MaskError> {
    if !pred.same_shape(truth) {
        return Err(MaskError::GridMismatch(format!(
            "{}x{} vs {}x{}",
            pred.w, pred.h, truth.w, truth.h
        )));
    }
    let p = pred.dilate(dilation_radius);
    let t = truth.dilate(dilation_radius);
    Ok(MaskMetrics::from_counts(p.and_count(&t), p.count(), t.count()))
}

/// Result of fitting a binarization threshold to a real-valued score grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Binarization {
    pub mask: BitGrid,
    /// Cells with `score > threshold` are set.
    pub threshold: f64,
    pub metrics: MaskMetrics,
}

pub fn binarize_at(scores: &[f64], w: usize, h: usize, threshold: f64) -> BitGrid {
    BitGrid::from_fn(w, h, |x, y| scores[y * w + x] > threshold)
}

/// Sweep every distinct score as a cut-off and keep the F1-maximizing
/// binarization (lowest threshold among ties).
pub fn binarize_scalar_mask(
    scores: &[f64],
    w: usize,
    h: usize,
    truth: &BitGrid,
    dilation_radius: usize,
) -> Result<Binarization, MaskError> {
    if scores.is_empty() || w * h == 0 {
        return Err(MaskError::EmptyScores);
    }
    if scores.len() != w * h || truth.w != w || truth.h != h {
        return Err(MaskError::GridMismatch("score grid and truth differ in size".into()));
    }
    let mut thresholds: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best: Option<Binarization> = None;
    for t in thresholds {
        let mask = binarize_at(scores, w, h, t);
        let metrics = compare_masks(&mask, truth, dilation_radius)?;
        if best.as_ref().is_none_or(|b| metrics.f1 > b.metrics.f1) {
            best = Some(Binarization { mask, threshold: t, metrics });
        }
    }
    best.ok_or(MaskError::EmptyScores)
}
