//! Dense feature maps and their per-line token sequences.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{ImageSize, Orientation};
use crate::pair_search::{EpipolarPair, EpipolarPairSet, Pixel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("feature map is {got} but the pair set expects {expected}")]
    DimensionMismatch { expected: ImageSize, got: ImageSize },
    #[error("data length {len} does not match {height}x{width}x{channels}")]
    BadDataLength { len: usize, height: usize, width: usize, channels: usize },
    #[error("non-finite feature value at index {0}")]
    NonFinite(usize),
    #[error("sequence shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Row-major `height × width × channels` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, CodecError> {
        if data.len() != height * width * channels {
            return Err(CodecError::BadDataLength { len: data.len(), height, width, channels });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite(i));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> ImageSize {
        ImageSize { height: self.height, width: self.width }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// All pixels as an `(H·W) × C` token matrix in raster order.
    pub fn to_tokens(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.height * self.width, self.channels, &self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Ref,
    Src,
}

/// Tokens gathered along one epipolar line. Row `i` of `tokens` is the
/// feature vector at `pixel_order[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSequence {
    pub pair_index: usize,
    pub tokens: DMatrix<f64>,
    pub pixel_order: Vec<Pixel>,
}

impl LineSequence {
    pub fn len(&self) -> usize {
        self.pixel_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_order.is_empty()
    }
}

/// Canonical direction for ordering: dominant component positive.
fn canonical(dx: f64, dy: f64) -> (f64, f64) {
    let n = dx.hypot(dy);
    if n == 0.0 {
        return (1.0, 0.0);
    }
    let (dx, dy) = (dx / n, dy / n);
    let flip = if dx.abs() >= dy.abs() { dx < 0.0 } else { dy < 0.0 };
    if flip {
        (-dx, -dy)
    } else {
        (dx, dy)
    }
}

/// Principal axis of a pixel cloud. Moments are accumulated exactly in
/// integers, so the axis does not depend on the pixel order.
fn principal_direction(pixels: &[Pixel]) -> (f64, f64) {
    if pixels.len() < 2 {
        return (1.0, 0.0);
    }
    let n = pixels.len() as i128;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for p in pixels {
        let (x, y) = (p.x as i128, p.y as i128);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    // Scatter matrix scaled by n².
    let cxx = (n * sxx - sx * sx) as f64;
    let cxy = (n * sxy - sx * sy) as f64;
    let cyy = (n * syy - sy * sy) as f64;
    let theta = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    (theta.cos(), theta.sin())
}

/// Direction used to order one side of a pair. The source side follows the
/// pair's line; the reference side follows the cluster's principal axis.
pub fn ordering_direction(pair: &EpipolarPair, side: Side) -> (f64, f64) {
    match side {
        Side::Src => {
            let (dx, dy) = pair.line.unit_direction();
            canonical(dx, dy)
        }
        Side::Ref => {
            let (dx, dy) = principal_direction(&pair.ref_pixels);
            canonical(dx, dy)
        }
    }
}

/// Sorts pixels by their scalar projection on `dir`, ties broken by `(x, y)`.
pub fn arc_order(pixels: &[Pixel], dir: (f64, f64)) -> Vec<Pixel> {
    let mut keyed: Vec<(f64, Pixel)> =
        pixels.iter().map(|p| (p.x as f64 * dir.0 + p.y as f64 * dir.1, *p)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.x.cmp(&b.1.x)).then(a.1.y.cmp(&b.1.y)));
    keyed.into_iter().map(|(_, p)| p).collect()
}

/// Token order for one side of a pair.
pub fn pixel_order(pair: &EpipolarPair, side: Side) -> Vec<Pixel> {
    let pixels = match side {
        Side::Ref => &pair.ref_pixels,
        Side::Src => &pair.src_pixels,
    };
    // Axis-aligned lines order along the free axis exactly.
    if side == Side::Src && pair.line.slope == 0.0 {
        let mut v = pixels.clone();
        match pair.line.orientation {
            Orientation::Standard => v.sort_by_key(|p| (p.x, p.y)),
            Orientation::Swapped => v.sort_by_key(|p| (p.y, p.x)),
        }
        return v;
    }
    arc_order(pixels, ordering_direction(pair, side))
}

fn expected_size(pairs: &EpipolarPairSet, side: Side) -> ImageSize {
    match side {
        Side::Ref => pairs.ref_size,
        Side::Src => pairs.src_size,
    }
}

/// Gathers one sequence per pair from `map`.
pub fn gather(map: &FeatureMap, pairs: &EpipolarPairSet, side: Side) -> Result<Vec<LineSequence>, CodecError> {
    let expected = expected_size(pairs, side);
    if map.size() != expected {
        return Err(CodecError::DimensionMismatch { expected, got: map.size() });
    }
    let c = map.channels;
    Ok(pairs
        .pairs
        .iter()
        .enumerate()
        .map(|(pair_index, pair)| {
            let order = pixel_order(pair, side);
            let mut tokens = DMatrix::zeros(order.len(), c);
            for (i, p) in order.iter().enumerate() {
                for (j, v) in map.pixel(p.x, p.y).iter().enumerate() {
                    tokens[(i, j)] = *v;
                }
            }
            LineSequence { pair_index, tokens, pixel_order: order }
        })
        .collect())
}

/// Writes sequence tokens back over a copy of `template`. Pixels not covered
/// by any sequence keep their template values.
pub fn scatter(
    sequences: &[LineSequence],
    pairs: &EpipolarPairSet,
    side: Side,
    template: &FeatureMap,
) -> Result<FeatureMap, CodecError> {
    let expected = expected_size(pairs, side);
    if template.size() != expected {
        return Err(CodecError::DimensionMismatch { expected, got: template.size() });
    }
    if sequences.len() != pairs.len() {
        return Err(CodecError::ShapeMismatch(format!(
            "{} sequences for {} pairs",
            sequences.len(),
            pairs.len()
        )));
    }
    let mut out = template.clone();
    let mut written = vec![false; expected.pixel_count()];
    for seq in sequences {
        let pair = pairs.pairs.get(seq.pair_index).ok_or_else(|| {
            CodecError::ShapeMismatch(format!("pair index {} out of range", seq.pair_index))
        })?;
        let members = match side {
            Side::Ref => &pair.ref_pixels,
            Side::Src => &pair.src_pixels,
        };
        if seq.pixel_order.len() != members.len()
            || seq.tokens.nrows() != members.len()
            || seq.tokens.ncols() != template.channels
        {
            return Err(CodecError::ShapeMismatch(format!(
                "pair {}: sequence is {}x{} over {} pixels, pair has {} pixels and maps have {} channels",
                seq.pair_index,
                seq.tokens.nrows(),
                seq.tokens.ncols(),
                seq.pixel_order.len(),
                members.len(),
                template.channels
            )));
        }
        for (i, p) in seq.pixel_order.iter().enumerate() {
            if p.x >= expected.width || p.y >= expected.height {
                return Err(CodecError::ShapeMismatch(format!("pixel {p:?} outside {expected}")));
            }
            let idx = expected.index(p.x, p.y);
            if std::mem::replace(&mut written[idx], true) {
                return Err(CodecError::ShapeMismatch(format!("pixel {p:?} written twice")));
            }
            for (j, v) in out.pixel_mut(p.x, p.y).iter_mut().enumerate() {
                *v = seq.tokens[(i, j)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair_search::{search_pairs, SearchConfig};
    use crate::synthetic::rectified_rig;

    fn rectified_set() -> EpipolarPairSet {
        let size = ImageSize::new(8, 8).unwrap();
        search_pairs(&rectified_rig(size, 100.0, 0.2), &SearchConfig::new(0.1, 1.0, 1.0, 2).unwrap()).unwrap()
    }

    #[test]
    fn rows_gather_in_x_order() {
        let set = rectified_set();
        let map = FeatureMap::from_fn(8, 8, 1, |x, _, _| x as f64);
        for side in [Side::Ref, Side::Src] {
            let seqs = gather(&map, &set, side).unwrap();
            assert_eq!(seqs.len(), 8);
            for s in &seqs {
                let values: Vec<f64> = s.tokens.column(0).iter().copied().collect();
                assert_eq!(values, (0..8).map(|x| x as f64).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn empty_source_side_gives_empty_sequence() {
        let size = ImageSize::new(8, 8).unwrap();
        let set = search_pairs(&rectified_rig(size, 100.0, 0.2), &SearchConfig::new(0.1, 2.0, 1.0, 2).unwrap())
            .unwrap();
        let map = FeatureMap::zeros(8, 8, 3);
        let seqs = gather(&map, &set, Side::Src).unwrap();
        let last = seqs.last().unwrap();
        assert_eq!(last.len(), 0);
        assert_eq!(last.tokens.shape(), (0, 3));
    }

    #[test]
    fn dimension_mismatch() {
        let set = rectified_set();
        let map = FeatureMap::zeros(8, 7, 1);
        assert!(matches!(gather(&map, &set, Side::Ref), Err(CodecError::DimensionMismatch { .. })));
    }

    #[test]
    fn zeros_over_ones_template() {
        let size = ImageSize::new(8, 8).unwrap();
        let set = search_pairs(&rectified_rig(size, 100.0, 0.2), &SearchConfig::new(0.1, 2.0, 1.0, 2).unwrap())
            .unwrap();
        let ones = FeatureMap::from_fn(8, 8, 2, |_, _, _| 1.0);
        let mut seqs = gather(&ones, &set, Side::Src).unwrap();
        for s in &mut seqs {
            s.tokens.fill(0.0);
        }
        let out = scatter(&seqs, &set, Side::Src, &ones).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let hole = set.src_hole_mask.get(Pixel::new(x, y));
                let expect = if hole { 1.0 } else { 0.0 };
                assert!(out.pixel(x, y).iter().all(|v| *v == expect));
            }
        }
    }

    #[test]
    fn scatter_rejects_bad_shapes() {
        let set = rectified_set();
        let map = FeatureMap::zeros(8, 8, 2);
        let mut seqs = gather(&map, &set, Side::Src).unwrap();
        seqs[0].tokens = DMatrix::zeros(3, 2);
        assert!(matches!(scatter(&seqs, &set, Side::Src, &map), Err(CodecError::ShapeMismatch(_))));
        let seqs = gather(&map, &set, Side::Src).unwrap();
        assert!(matches!(scatter(&seqs[1..], &set, Side::Src, &map), Err(CodecError::ShapeMismatch(_))));
    }

    #[test]
    fn arc_order_diagonal() {
        let pixels = vec![Pixel::new(3, 3), Pixel::new(0, 0), Pixel::new(2, 2), Pixel::new(1, 1)];
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let order = arc_order(&pixels, (d, d));
        assert_eq!(order, vec![Pixel::new(0, 0), Pixel::new(1, 1), Pixel::new(2, 2), Pixel::new(3, 3)]);
    }

    #[test]
    fn principal_axis_of_a_column() {
        let pixels: Vec<Pixel> = (0..5).map(|y| Pixel::new(2, y)).collect();
        let (dx, dy) = canonical(principal_direction(&pixels).0, principal_direction(&pixels).1);
        assert!(dx.abs() < 1e-12 && (dy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(FeatureMap::new(1, 1, 1, vec![f64::NAN]), Err(CodecError::NonFinite(0))));
        assert!(FeatureMap::new(1, 2, 1, vec![0.0]).is_err());
    }
}
