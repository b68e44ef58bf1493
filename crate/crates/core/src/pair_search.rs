//! Epipolar pair search.
//!
//! Every reference pixel gets its closed-form source epipolar line. Lines are
//! quantized by rounding `(k, b)` to the steps `(s_k, s_b)`, and reference
//! pixels sharing a quantized key form one cluster. Each source pixel is then
//! attached to the nearest dequantized cluster line lying within `delta`.
//! Pixels that end up in no cluster are recorded in per-view hole masks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    epipolar_line, pixel_coeffs, projection_constants, CameraPair, EpipolarLine, GeometryError,
    ImageSize, Orientation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("every reference pixel yields a degenerate epipolar line")]
    AllDegenerate,
    #[error("precision grid is empty")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Slope quantization step.
    pub s_k: f64,
    /// Intercept quantization step, in pixels.
    pub s_b: f64,
    /// Source-pixel distance threshold, in pixels.
    pub delta: f64,
    /// Clusters with fewer reference pixels are dissolved into the hole mask.
    pub min_cluster_size: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { s_k: 0.1, s_b: 10.0, delta: 1.0, min_cluster_size: 2 }
    }
}

impl SearchConfig {
    pub fn new(s_k: f64, s_b: f64, delta: f64, min_cluster_size: usize) -> Result<Self, SearchError> {
        let c = Self { s_k, s_b, delta, min_cluster_size };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.s_k) || !positive(self.s_b) || !positive(self.delta) {
            return Err(SearchError::InvalidConfig(format!(
                "s_k, s_b and delta must be positive (got {}, {}, {})",
                self.s_k, self.s_b, self.delta
            )));
        }
        if self.min_cluster_size == 0 {
            return Err(SearchError::InvalidConfig("min_cluster_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_steps(&self, s_k: f64, s_b: f64) -> Self {
        Self { s_k, s_b, ..*self }
    }
}

/// Integer cluster identity of a quantized line. Ordering is
/// `(orientation, qk, qb)` with Standard before Swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QuantizedLineKey {
    pub orientation: Orientation,
    pub qk: i64,
    pub qb: i64,
}

impl QuantizedLineKey {
    /// The representative line `(qk · s_k, qb · s_b)`.
    pub fn dequantize(&self, config: &SearchConfig) -> EpipolarLine {
        EpipolarLine::new(self.orientation, self.qk as f64 * config.s_k, self.qb as f64 * config.s_b)
    }
}

/// Rounds the line parameters to the configured steps, ties to even.
pub fn quantize_line(line: &EpipolarLine, config: &SearchConfig) -> QuantizedLineKey {
    QuantizedLineKey {
        orientation: line.orientation,
        qk: (line.slope / config.s_k).round_ties_even() as i64,
        qb: (line.intercept / config.s_b).round_ties_even() as i64,
    }
}

/// Integer pixel coordinate, `x` along columns and `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl Serialize for Pixel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pixel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[usize; 2]>::deserialize(d)?;
        Ok(Self { x, y })
    }
}

/// Boolean H×W grid in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleMask {
    size: ImageSize,
    bits: Vec<bool>,
}

impl HoleMask {
    pub fn new(size: ImageSize) -> Self {
        Self { size, bits: vec![false; size.pixel_count()] }
    }

    pub fn filled(size: ImageSize) -> Self {
        Self { size, bits: vec![true; size.pixel_count()] }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn get(&self, p: Pixel) -> bool {
        self.bits[self.size.index(p.x, p.y)]
    }

    pub fn set(&mut self, p: Pixel, hole: bool) {
        let i = self.size.index(p.x, p.y);
        self.bits[i] = hole;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn iter_holes(&self) -> impl Iterator<Item = Pixel> + '_ {
        let w = self.size.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| Pixel::new(i % w, i / w))
    }

    /// Alternating run lengths in raster order, starting with a run of
    /// non-hole pixels (possibly of length zero).
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0usize;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_run_lengths(size: ImageSize, runs: &[usize]) -> Option<Self> {
        let mut bits = Vec::with_capacity(size.pixel_count());
        let mut value = false;
        for &r in runs {
            bits.extend(std::iter::repeat(value).take(r));
            value = !value;
        }
        (bits.len() == size.pixel_count()).then_some(Self { size, bits })
    }
}

/// One matched line pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarPair {
    pub key: QuantizedLineKey,
    /// Dequantized source-view line shared by the cluster.
    pub line: EpipolarLine,
    /// Reference pixels of the cluster, raster order.
    pub ref_pixels: Vec<Pixel>,
    /// Source pixels assigned to `line`, raster order.
    pub src_pixels: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarPairSet {
    pub ref_size: ImageSize,
    pub src_size: ImageSize,
    pub config: SearchConfig,
    /// Sorted by key.
    pub pairs: Vec<EpipolarPair>,
    pub ref_hole_mask: HoleMask,
    pub src_hole_mask: HoleMask,
}

impl EpipolarPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Fraction of reference pixels that belong to a retained cluster.
    pub fn ref_coverage(&self) -> f64 {
        let total = self.ref_size.pixel_count();
        (total - self.ref_hole_mask.count()) as f64 / total as f64
    }

    pub fn src_coverage(&self) -> f64 {
        let total = self.src_size.pixel_count();
        (total - self.src_hole_mask.count()) as f64 / total as f64
    }

    /// Mean number of source pixels per pair (0 when there are no pairs).
    pub fn mean_src_len(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().map(|p| p.src_pixels.len()).sum::<usize>() as f64 / self.pairs.len() as f64
    }
}

/// Per-key source pixel lists plus the unassigned remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceAssignment {
    pub per_key: Vec<Vec<Pixel>>,
    pub src_hole_mask: HoleMask,
}

/// Attaches every source pixel to its nearest key line within `delta`.
/// Equal distances go to the lowest key.
pub fn assign_source_pixels(
    pair: &CameraPair,
    keys: &[QuantizedLineKey],
    config: &SearchConfig,
) -> SourceAssignment {
    let size = pair.src_size();
    let lines: Vec<EpipolarLine> = keys.iter().map(|k| k.dequantize(config)).collect();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| keys[i]);

    let nearest: Vec<Option<usize>> = (0..size.pixel_count())
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % size.width) as f64, (i / size.width) as f64);
            let mut best: Option<(f64, usize)> = None;
            for &k in &order {
                let d = lines[k].distance(x, y);
                if d < config.delta && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, k));
                }
            }
            best.map(|(_, k)| k)
        })
        .collect();

    let mut per_key = vec![Vec::new(); keys.len()];
    let mut src_hole_mask = HoleMask::new(size);
    for (i, slot) in nearest.into_iter().enumerate() {
        let p = Pixel::new(i % size.width, i / size.width);
        match slot {
            Some(k) => per_key[k].push(p),
            None => src_hole_mask.set(p, true),
        }
    }
    SourceAssignment { per_key, src_hole_mask }
}

/// Exact source epipolar line for every reference pixel, raster order.
/// `Err(DegenerateLine)` marks pixels whose line is undefined.
pub fn reference_lines(pair: &CameraPair) -> Result<Vec<Result<EpipolarLine, GeometryError>>, SearchError> {
    let constants = projection_constants(pair)?;
    let size = pair.ref_size();
    Ok((0..size.pixel_count())
        .into_par_iter()
        .map(|i| {
            let coeffs = pixel_coeffs(&constants, (i % size.width) as f64, (i / size.width) as f64);
            epipolar_line(&coeffs)
        })
        .collect())
}

/// Runs the full search for one reference/source pair.
pub fn search_pairs(pair: &CameraPair, config: &SearchConfig) -> Result<EpipolarPairSet, SearchError> {
    config.validate()?;
    let ref_size = pair.ref_size();
    let lines = reference_lines(pair)?;
    if lines.iter().all(|l| l.is_err()) {
        return Err(SearchError::AllDegenerate);
    }

    let mut ref_hole_mask = HoleMask::new(ref_size);
    let mut clusters: BTreeMap<QuantizedLineKey, Vec<Pixel>> = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        let p = Pixel::new(i % ref_size.width, i / ref_size.width);
        match line {
            Ok(line) => clusters.entry(quantize_line(line, config)).or_default().push(p),
            Err(_) => ref_hole_mask.set(p, true),
        }
    }
    clusters.retain(|_, members| {
        if members.len() < config.min_cluster_size {
            for &p in members.iter() {
                ref_hole_mask.set(p, true);
            }
            false
        } else {
            true
        }
    });

    let keys: Vec<QuantizedLineKey> = clusters.keys().copied().collect();
    let assignment = assign_source_pixels(pair, &keys, config);
    let pairs = clusters
        .into_iter()
        .zip(assignment.per_key)
        .map(|((key, ref_pixels), src_pixels)| EpipolarPair {
            key,
            line: key.dequantize(config),
            ref_pixels,
            src_pixels,
        })
        .collect();

    Ok(EpipolarPairSet {
        ref_size,
        src_size: pair.src_size(),
        config: *config,
        pairs,
        ref_hole_mask,
        src_hole_mask: assignment.src_hole_mask,
    })
}

/// One row of a quantization-precision sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub s_k: f64,
    pub s_b: f64,
    /// Number of retained clusters.
    pub m: usize,
    /// Fraction of reference pixels inside a retained cluster.
    pub coverage: f64,
    pub src_coverage: f64,
}

/// Grid from the usual precision ablation: `s_k ∈ {1, 0.1, 0.01}`, `s_b ∈ {0.1, 1, 10}`.
pub fn default_precision_grid() -> Vec<(f64, f64)> {
    let mut grid = Vec::new();
    for s_k in [1.0, 0.1, 0.01] {
        for s_b in [0.1, 1.0, 10.0] {
            grid.push((s_k, s_b));
        }
    }
    grid
}

pub fn precision_sweep(
    pair: &CameraPair,
    grid: &[(f64, f64)],
    base: &SearchConfig,
) -> Result<Vec<SweepRow>, SearchError> {
    if grid.is_empty() {
        return Err(SearchError::EmptyGrid);
    }
    grid.iter()
        .map(|&(s_k, s_b)| {
            let set = search_pairs(pair, &base.with_steps(s_k, s_b))?;
            Ok(SweepRow {
                s_k,
                s_b,
                m: set.len(),
                coverage: set.ref_coverage(),
                src_coverage: set.src_coverage(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::rectified_rig;

    fn cfg(s_k: f64, s_b: f64, delta: f64) -> SearchConfig {
        SearchConfig::new(s_k, s_b, delta, 2).unwrap()
    }

    fn size8() -> ImageSize {
        ImageSize::new(8, 8).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let c = cfg(0.1, 10.0, 1.0);
        let key = quantize_line(&EpipolarLine::new(Orientation::Standard, 0.26, 103.2), &c);
        assert_eq!((key.qk, key.qb), (3, 10));

        let c = cfg(0.1, 1.0, 1.0);
        let key = quantize_line(&EpipolarLine::new(Orientation::Swapped, -0.05, -4.9), &c);
        assert_eq!((key.qk, key.qb), (0, -5));
        assert_eq!(key.orientation, Orientation::Swapped);
    }

    #[test]
    fn ties_round_to_even() {
        let c = cfg(1.0, 1.0, 1.0);
        for (b, q) in [(0.5, 0), (1.5, 2), (2.5, 2), (-0.5, 0), (-1.5, -2)] {
            let key = quantize_line(&EpipolarLine::new(Orientation::Standard, 0.0, b), &c);
            assert_eq!(key.qb, q, "b = {b}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::new(0.0, 1.0, 1.0, 1).is_err());
        assert!(SearchConfig::new(0.1, -1.0, 1.0, 1).is_err());
        assert!(SearchConfig::new(0.1, 1.0, f64::NAN, 1).is_err());
        assert!(SearchConfig::new(0.1, 1.0, 1.0, 0).is_err());
        assert!(SearchConfig::default().validate().is_ok());
    }

    #[test]
    fn rectified_rows_pair_up() {
        let set = search_pairs(&rectified_rig(size8(), 100.0, 0.2), &cfg(0.1, 1.0, 1.0)).unwrap();
        assert_eq!(set.len(), 8);
        for (i, p) in set.pairs.iter().enumerate() {
            assert_eq!(p.key, QuantizedLineKey { orientation: Orientation::Standard, qk: 0, qb: i as i64 });
            let row: Vec<Pixel> = (0..8).map(|x| Pixel::new(x, i)).collect();
            assert_eq!(p.ref_pixels, row);
            assert_eq!(p.src_pixels, row);
        }
        assert!(set.ref_hole_mask.is_empty());
        assert!(set.src_hole_mask.is_empty());
    }

    #[test]
    fn rectified_coarse_intercepts_merge_by_rounding() {
        // b = y for y in 0..8; round(y / 2) ties-even gives bins
        // {0, 1} -> 0, {2} -> 1, {3, 4, 5} -> 2, {6} -> 3, {7} -> 4.
        let set = search_pairs(&rectified_rig(size8(), 100.0, 0.2), &cfg(0.1, 2.0, 1.0)).unwrap();
        let rows: Vec<Vec<usize>> = set
            .pairs
            .iter()
            .map(|p| {
                let mut ys: Vec<usize> = p.ref_pixels.iter().map(|q| q.y).collect();
                ys.dedup();
                ys
            })
            .collect();
        assert_eq!(rows, vec![vec![0, 1], vec![2], vec![3, 4, 5], vec![6], vec![7]]);
        // Source rows land on the nearest representative line y = 2 qb.
        let src_rows: Vec<Vec<usize>> = set
            .pairs
            .iter()
            .map(|p| {
                let mut ys: Vec<usize> = p.src_pixels.iter().map(|q| q.y).collect();
                ys.dedup();
                ys
            })
            .collect();
        assert_eq!(src_rows, vec![vec![0], vec![2], vec![4], vec![6], vec![]]);
    }

    fn horizontal_keys(qbs: &[i64]) -> Vec<QuantizedLineKey> {
        qbs.iter().map(|&qb| QuantizedLineKey { orientation: Orientation::Standard, qk: 0, qb }).collect()
    }

    #[test]
    fn assignment_band_width() {
        let pair = rectified_rig(size8(), 100.0, 0.2);
        let a = assign_source_pixels(&pair, &horizontal_keys(&[3]), &cfg(0.1, 1.0, 0.6));
        assert!(a.per_key[0].iter().all(|p| p.y == 3));
        assert_eq!(a.per_key[0].len(), 8);
        assert_eq!(a.src_hole_mask.count(), 56);

        let a = assign_source_pixels(&pair, &horizontal_keys(&[3]), &cfg(0.1, 1.0, 1.1));
        let mut rows: Vec<usize> = a.per_key[0].iter().map(|p| p.y).collect();
        rows.dedup();
        assert_eq!(rows, vec![2, 3, 4]);
    }

    #[test]
    fn assignment_tie_goes_to_lower_key() {
        let pair = rectified_rig(size8(), 100.0, 0.2);
        // Keys passed out of order on purpose.
        let keys = horizontal_keys(&[5, 3]);
        let a = assign_source_pixels(&pair, &keys, &cfg(0.1, 1.0, 1.5));
        let rows = |v: &Vec<Pixel>| {
            let mut r: Vec<usize> = v.iter().map(|p| p.y).collect();
            r.dedup();
            r
        };
        assert_eq!(rows(&a.per_key[1]), vec![2, 3, 4]);
        assert_eq!(rows(&a.per_key[0]), vec![5, 6]);
    }

    #[test]
    fn min_cluster_size_dissolves_small_clusters() {
        let pair = rectified_rig(size8(), 100.0, 0.2);
        let set = search_pairs(&pair, &SearchConfig::new(0.1, 1.0, 1.0, 9).unwrap()).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.ref_hole_mask.count(), 64);
        assert_eq!(set.src_hole_mask.count(), 64);
    }

    #[test]
    fn run_length_round_trip() {
        let size = ImageSize::new(3, 4).unwrap();
        let mut m = HoleMask::new(size);
        for p in [Pixel::new(0, 0), Pixel::new(1, 0), Pixel::new(3, 1), Pixel::new(0, 2)] {
            m.set(p, true);
        }
        let runs = m.run_lengths();
        assert_eq!(runs, vec![0, 2, 5, 2, 3]);
        assert_eq!(HoleMask::from_run_lengths(size, &runs).unwrap(), m);
        assert_eq!(HoleMask::new(size).run_lengths(), vec![12]);
        assert!(HoleMask::from_run_lengths(size, &[3]).is_none());
    }

    #[test]
    fn empty_grid_rejected() {
        let pair = rectified_rig(size8(), 100.0, 0.2);
        assert_eq!(precision_sweep(&pair, &[], &SearchConfig::default()), Err(SearchError::EmptyGrid));
        let rows = precision_sweep(&pair, &[(0.1, 1.0), (0.1, 2.0)], &SearchConfig::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.m).collect::<Vec<_>>(), vec![8, 5]);
    }
}
