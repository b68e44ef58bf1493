//! Forward pass of the epipolar transformer.
//!
//! Source line sequences are refined by self-attention within the line,
//! then by cross-attention to the paired reference line followed by a
//! feed-forward layer, each with a plain residual. Blocks can be stacked.
//! After scattering back to the grid a single convolution smooths the map
//! and fills pixels that belonged to no line.
//!
//! Token matrices are `n × c` with one token per row; linear layers compute
//! `x W + b` with `W` stored as `in × out`.

use nalgebra::{DMatrix, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::pair_search::EpipolarPairSet;
use crate::sequence::{gather, scatter, CodecError, FeatureMap, LineSequence, Side};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("invalid attention config: {0}")]
    InvalidConfig(String),
    #[error("sine positional encoding needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("reference and source sequences are not index-aligned: {0}")]
    IndexMisalignment(String),
    #[error("weight shape mismatch: {0}")]
    WeightShape(String),
    #[error("learnable positional table has {rows} rows, sequence needs {needed}")]
    PeTableTooShort { rows: usize, needed: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeMode {
    None,
    Sine,
    /// Stored table from the weights, never fitted here.
    Learnable,
}

impl std::str::FromStr for PeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(PeMode::None),
            "sine" => Ok(PeMode::Sine),
            "learnable" => Ok(PeMode::Learnable),
            other => Err(format!("unknown positional encoding '{other}' (none|sine|learnable)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub channels: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    pub n_blocks: usize,
    pub pe_mode: PeMode,
    pub la_kernel: usize,
}

impl AttentionConfig {
    /// One block, four-times FFN, sine encoding and a 3×3 smoothing kernel.
    pub fn new(channels: usize, heads: usize) -> Self {
        Self { channels, heads, ffn_ratio: 4, n_blocks: 1, pe_mode: PeMode::Sine, la_kernel: 3 }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let bad = |m: String| Err(AttentionError::InvalidConfig(m));
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return bad(format!("channels {} must be a positive multiple of heads {}", self.channels, self.heads));
        }
        if self.ffn_ratio < 1 || self.n_blocks < 1 {
            return bad("ffn_ratio and n_blocks must be at least 1".into());
        }
        if self.la_kernel % 2 == 0 {
            return bad(format!("la_kernel must be odd, got {}", self.la_kernel));
        }
        if self.pe_mode == PeMode::Sine && self.channels % 2 != 0 {
            return Err(AttentionError::OddChannels(self.channels));
        }
        Ok(())
    }
}

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: RowDVector<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: DMatrix::zeros(inputs, outputs), bias: RowDVector::zeros(outputs) }
    }

    fn uniform(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize, bound: f64) -> Self {
        Self {
            weight: DMatrix::from_fn(inputs, outputs, |_, _| rng.gen_range(-bound..=bound)),
            bias: RowDVector::zeros(outputs),
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += &self.bias;
        }
        y
    }

    fn check(&self, name: &str, inputs: usize, outputs: usize) -> Result<(), AttentionError> {
        if self.weight.shape() != (inputs, outputs) || self.bias.len() != outputs {
            return Err(AttentionError::WeightShape(format!(
                "{name}: expected {inputs}x{outputs}, got {:?} with bias {}",
                self.weight.shape(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Query, key, value and output projections of one multi-head layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionLayer {
    pub fn zeros(c: usize) -> Self {
        Self { q: Linear::zeros(c, c), k: Linear::zeros(c, c), v: Linear::zeros(c, c), o: Linear::zeros(c, c) }
    }

    fn check(&self, name: &str, c: usize) -> Result<(), AttentionError> {
        for (part, l) in [("q", &self.q), ("k", &self.k), ("v", &self.v), ("o", &self.o)] {
            l.check(&format!("{name}.{part}"), c, c)?;
        }
        Ok(())
    }
}

/// `W2 · relu(W1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let hidden = self.w1.apply(x).map(|v| v.max(0.0));
        self.w2.apply(&hidden)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    /// Self-attention within the source line.
    pub intra: AttentionLayer,
    /// Cross-attention from source queries to reference keys/values.
    pub cross: AttentionLayer,
    pub ffn: FeedForward,
}

/// Square convolution kernel stored as `[ky][kx][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub kernel_size: usize,
    pub channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn zeros(kernel_size: usize, channels: usize) -> Self {
        Self {
            kernel_size,
            channels,
            kernel: vec![0.0; kernel_size * kernel_size * channels * channels],
            bias: vec![0.0; channels],
        }
    }

    /// Center tap is the channel identity, every other tap zero.
    pub fn identity(kernel_size: usize, channels: usize) -> Self {
        let mut w = Self::zeros(kernel_size, channels);
        let r = kernel_size / 2;
        for c in 0..channels {
            let i = w.index(r, r, c, c);
            w.kernel[i] = 1.0;
        }
        w
    }

    /// Per-channel box filter.
    pub fn box_filter(kernel_size: usize, channels: usize) -> Self {
        let mut w = Self::zeros(kernel_size, channels);
        let v = 1.0 / (kernel_size * kernel_size) as f64;
        for ky in 0..kernel_size {
            for kx in 0..kernel_size {
                for c in 0..channels {
                    let i = w.index(ky, kx, c, c);
                    w.kernel[i] = v;
                }
            }
        }
        w
    }

    pub fn index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kernel_size + kx) * self.channels + ci) * self.channels + co
    }

    fn check(&self, kernel_size: usize, channels: usize) -> Result<(), AttentionError> {
        if self.kernel_size != kernel_size
            || self.channels != channels
            || self.kernel.len() != kernel_size * kernel_size * channels * channels
            || self.bias.len() != channels
        {
            return Err(AttentionError::WeightShape(format!(
                "local conv: expected {kernel_size}x{kernel_size} over {channels} channels"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub blocks: Vec<BlockWeights>,
    pub local: ConvWeights,
    /// Positional table for `PeMode::Learnable`, `rows × channels`.
    pub pe_table: Option<DMatrix<f64>>,
}

impl AttentionWeights {
    /// All-zero attention and FFN with a zero local kernel.
    pub fn zeros(config: &AttentionConfig) -> Self {
        let c = config.channels;
        let h = c * config.ffn_ratio;
        let block = BlockWeights {
            intra: AttentionLayer::zeros(c),
            cross: AttentionLayer::zeros(c),
            ffn: FeedForward { w1: Linear::zeros(c, h), w2: Linear::zeros(h, c) },
        };
        Self {
            blocks: vec![block; config.n_blocks],
            local: ConvWeights::zeros(config.la_kernel, c),
            pe_table: None,
        }
    }

    /// Deterministic weights drawn uniformly from `[-1/√c, 1/√c]`, zero biases.
    pub fn seeded(config: &AttentionConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let h = c * config.ffn_ratio;
        let bound = 1.0 / (c as f64).sqrt();
        let layer = |rng: &mut ChaCha8Rng| AttentionLayer {
            q: Linear::uniform(rng, c, c, bound),
            k: Linear::uniform(rng, c, c, bound),
            v: Linear::uniform(rng, c, c, bound),
            o: Linear::uniform(rng, c, c, bound),
        };
        let blocks = (0..config.n_blocks)
            .map(|_| {
                let intra = layer(&mut rng);
                let cross = layer(&mut rng);
                let ffn = FeedForward {
                    w1: Linear::uniform(&mut rng, c, h, bound),
                    w2: Linear::uniform(&mut rng, h, c, bound),
                };
                BlockWeights { intra, cross, ffn }
            })
            .collect();
        let mut local = ConvWeights::zeros(config.la_kernel, c);
        for v in local.kernel.iter_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
        Self { blocks, local, pe_table: None }
    }

    pub fn check(&self, config: &AttentionConfig) -> Result<(), AttentionError> {
        let c = config.channels;
        let h = c * config.ffn_ratio;
        if self.blocks.len() != config.n_blocks {
            return Err(AttentionError::WeightShape(format!(
                "{} blocks, config expects {}",
                self.blocks.len(),
                config.n_blocks
            )));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.intra.check(&format!("block{i}.intra"), c)?;
            b.cross.check(&format!("block{i}.cross"), c)?;
            b.ffn.w1.check(&format!("block{i}.ffn.w1"), c, h)?;
            b.ffn.w2.check(&format!("block{i}.ffn.w2"), h, c)?;
        }
        self.local.check(config.la_kernel, c)?;
        if let Some(t) = &self.pe_table {
            if t.ncols() != c {
                return Err(AttentionError::WeightShape(format!("pe table has {} columns", t.ncols())));
            }
        }
        Ok(())
    }
}

/// Sinusoidal table: `PE[pos][2i] = sin(pos / 10000^(2i/c))`, `PE[pos][2i+1] = cos(...)`.
pub fn sine_pe(n: usize, c: usize) -> Result<DMatrix<f64>, AttentionError> {
    if c % 2 != 0 {
        return Err(AttentionError::OddChannels(c));
    }
    let mut pe = DMatrix::zeros(n, c);
    for i in 0..c / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / c as f64);
        for pos in 0..n {
            let angle = pos as f64 * freq;
            pe[(pos, 2 * i)] = angle.sin();
            pe[(pos, 2 * i + 1)] = angle.cos();
        }
    }
    Ok(pe)
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Per-head attention probabilities for projected queries and keys.
pub fn attention_probs(q: &DMatrix<f64>, k: &DMatrix<f64>, heads: usize) -> Vec<DMatrix<f64>> {
    let d = q.ncols() / heads;
    let scale = 1.0 / (d as f64).sqrt();
    (0..heads)
        .map(|h| {
            let qh = q.columns(h * d, d);
            let kh = k.columns(h * d, d);
            let mut scores = (qh * kh.transpose()) * scale;
            softmax_rows(&mut scores);
            scores
        })
        .collect()
}

fn multi_head(query: &DMatrix<f64>, kv: &DMatrix<f64>, layer: &AttentionLayer, heads: usize) -> DMatrix<f64> {
    let q = layer.q.apply(query);
    let k = layer.k.apply(kv);
    let v = layer.v.apply(kv);
    let d = q.ncols() / heads;
    let probs = attention_probs(&q, &k, heads);
    let mut concat = DMatrix::zeros(query.nrows(), q.ncols());
    for (h, p) in probs.iter().enumerate() {
        concat.columns_mut(h * d, d).copy_from(&(p * v.columns(h * d, d)));
    }
    layer.o.apply(&concat)
}

/// Multi-head self-attention term (without the residual).
pub fn mhsa(seq: &DMatrix<f64>, layer: &AttentionLayer, heads: usize) -> DMatrix<f64> {
    multi_head(seq, seq, layer, heads)
}

/// Multi-head cross-attention: queries from `query_seq`, keys and values from `kv_seq`.
pub fn mhca(query_seq: &DMatrix<f64>, kv_seq: &DMatrix<f64>, layer: &AttentionLayer, heads: usize) -> DMatrix<f64> {
    multi_head(query_seq, kv_seq, layer, heads)
}

fn positional(
    n: usize,
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Result<Option<DMatrix<f64>>, AttentionError> {
    match config.pe_mode {
        PeMode::None => Ok(None),
        PeMode::Sine => sine_pe(n, config.channels).map(Some),
        PeMode::Learnable => {
            let table = weights
                .pe_table
                .as_ref()
                .ok_or(AttentionError::PeTableTooShort { rows: 0, needed: n })?;
            if table.nrows() < n {
                return Err(AttentionError::PeTableTooShort { rows: table.nrows(), needed: n });
            }
            Ok(Some(table.rows(0, n).into_owned()))
        }
    }
}

fn with_pe(tokens: &DMatrix<f64>, weights: &AttentionWeights, config: &AttentionConfig) -> Result<DMatrix<f64>, AttentionError> {
    Ok(match positional(tokens.nrows(), weights, config)? {
        Some(pe) => tokens + pe,
        None => tokens.clone(),
    })
}

/// Refines one source line against its reference line.
fn refine_line(
    reference: &DMatrix<f64>,
    source: &DMatrix<f64>,
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Result<DMatrix<f64>, AttentionError> {
    if source.nrows() == 0 {
        return Ok(source.clone());
    }
    let mut src = with_pe(source, weights, config)?;
    let refs = if reference.nrows() > 0 { Some(with_pe(reference, weights, config)?) } else { None };
    for block in &weights.blocks {
        src += mhsa(&src, &block.intra, config.heads);
        if let Some(r) = &refs {
            src += mhca(&src, r, &block.cross, config.heads);
            src += block.ffn.apply(&src);
        }
    }
    Ok(src)
}

fn check_alignment(
    query: &[LineSequence],
    context: &[LineSequence],
    channels: usize,
) -> Result<(), AttentionError> {
    if query.len() != context.len() {
        return Err(AttentionError::IndexMisalignment(format!(
            "{} reference sequences vs {} source sequences",
            context.len(),
            query.len()
        )));
    }
    for (s, r) in query.iter().zip(context) {
        if s.pair_index != r.pair_index {
            return Err(AttentionError::IndexMisalignment(format!(
                "pair {} paired with pair {}",
                s.pair_index, r.pair_index
            )));
        }
        for seq in [s, r] {
            if seq.tokens.ncols() != channels && seq.tokens.nrows() > 0 {
                return Err(AttentionError::WeightShape(format!(
                    "pair {} has {} channels, weights expect {channels}",
                    seq.pair_index,
                    seq.tokens.ncols()
                )));
            }
        }
    }
    Ok(())
}

/// Runs the stacked blocks on every pair and returns the augmented source
/// sequences. Pairs are independent and processed in parallel.
pub fn et_forward(
    ref_seqs: &[LineSequence],
    src_seqs: &[LineSequence],
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Result<Vec<LineSequence>, AttentionError> {
    config.validate()?;
    weights.check(config)?;
    check_alignment(src_seqs, ref_seqs, config.channels)?;
    src_seqs
        .par_iter()
        .zip(ref_seqs.par_iter())
        .map(|(s, r)| {
            Ok(LineSequence {
                pair_index: s.pair_index,
                tokens: refine_line(&r.tokens, &s.tokens, weights, config)?,
                pixel_order: s.pixel_order.clone(),
            })
        })
        .collect()
}

/// Same-size convolution with zero padding, stride 1.
pub fn local_augment(map: &FeatureMap, conv: &ConvWeights) -> Result<FeatureMap, AttentionError> {
    conv.check(conv.kernel_size, map.channels())?;
    if conv.kernel_size % 2 == 0 {
        return Err(AttentionError::InvalidConfig("kernel size must be odd".into()));
    }
    let (h, w, c) = (map.height(), map.width(), map.channels());
    let r = (conv.kernel_size / 2) as isize;
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; w * c];
            for x in 0..w {
                let out = &mut row[x * c..(x + 1) * c];
                out.copy_from_slice(&conv.bias);
                for ky in 0..conv.kernel_size {
                    let sy = y as isize + ky as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..conv.kernel_size {
                        let sx = x as isize + kx as isize - r;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let input = map.pixel(sx as usize, sy as usize);
                        let base = conv.index(ky, kx, 0, 0);
                        for (ci, &v) in input.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let taps = &conv.kernel[base + ci * c..base + (ci + 1) * c];
                            for (o, t) in out.iter_mut().zip(taps) {
                                *o += v * t;
                            }
                        }
                    }
                }
            }
            row
        })
        .collect();
    Ok(FeatureMap::new(h, w, c, rows.concat())?)
}

/// Gather, refine, scatter over `src_map`, then smooth. Returns the enhanced
/// source map.
pub fn augment_pipeline(
    ref_map: &FeatureMap,
    src_map: &FeatureMap,
    pairs: &EpipolarPairSet,
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Result<FeatureMap, AttentionError> {
    let ref_seqs = gather(ref_map, pairs, Side::Ref)?;
    let src_seqs = gather(src_map, pairs, Side::Src)?;
    let refined = et_forward(&ref_seqs, &src_seqs, weights, config)?;
    let scattered = scatter(&refined, pairs, Side::Src, src_map)?;
    local_augment(&scattered, &weights.local)
}

/// Enhanced `(source, reference)` maps; the reference map is produced by the
/// mirrored pass with reference lines as queries.
pub fn augment_pipeline_symmetric(
    ref_map: &FeatureMap,
    src_map: &FeatureMap,
    pairs: &EpipolarPairSet,
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Result<(FeatureMap, FeatureMap), AttentionError> {
    let ref_seqs = gather(ref_map, pairs, Side::Ref)?;
    let src_seqs = gather(src_map, pairs, Side::Src)?;
    let src_refined = et_forward(&ref_seqs, &src_seqs, weights, config)?;
    let ref_refined = et_forward(&src_seqs, &ref_seqs, weights, config)?;
    let src_out = local_augment(&scatter(&src_refined, pairs, Side::Src, src_map)?, &weights.local)?;
    let ref_out = local_augment(&scatter(&ref_refined, pairs, Side::Ref, ref_map)?, &weights.local)?;
    Ok((src_out, ref_out))
}
