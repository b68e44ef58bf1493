//! Cost model and wall-clock comparison of three aggregation strategies:
//! point-to-line (each reference pixel attends its source line), line-to-line
//! (paired line sequences attend each other) and plane-to-plane (linear
//! attention over the whole image).
//!
//! Analytic counts are multiply-accumulates, computed in `u128`.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::attention::{mhca, AttentionConfig, AttentionError, AttentionLayer, AttentionWeights};
use crate::geometry::CameraPair;
use crate::pair_search::{search_pairs, EpipolarPairSet, SearchConfig, SearchError};
use crate::sequence::{gather, FeatureMap, Side};
use crate::synthetic::random_feature_map;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("at least 3 repeats are required, got {0}")]
    RepeatsTooFew(usize),
    #[error("unknown strategy '{0}' (point-to-line|line-to-line|plane-to-plane)")]
    UnknownStrategy(String),
    #[error("complexity parameters must all be at least 1")]
    InvalidParams,
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    PointToLine,
    LineToLine,
    PlaneToPlaneLinear,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::PointToLine, Strategy::LineToLine, Strategy::PlaneToPlaneLinear];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::PointToLine => "point-to-line",
            Strategy::LineToLine => "line-to-line",
            Strategy::PlaneToPlaneLinear => "plane-to-plane",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "point-to-line" | "p2l" => Ok(Strategy::PointToLine),
            "line-to-line" | "l2l" => Ok(Strategy::LineToLine),
            "plane-to-plane" | "plane-to-plane-linear" | "p2p" => Ok(Strategy::PlaneToPlaneLinear),
            other => Err(BenchError::UnknownStrategy(other.to_string())),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Shape parameters of an attention call: batch `b`, query length `n1`,
/// key length `n2`, channels `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityParams {
    pub b: u64,
    pub n1: u64,
    pub n2: u64,
    pub c: u64,
}

impl ComplexityParams {
    pub fn new(b: u64, n1: u64, n2: u64, c: u64) -> Result<Self, BenchError> {
        if b == 0 || n1 == 0 || n2 == 0 || c == 0 {
            return Err(BenchError::InvalidParams);
        }
        Ok(Self { b, n1, n2, c })
    }
}

/// Softmax attention: `B (9 N1 C² + 2 N2 C² + 2 N1 N2 C)`.
pub fn vanilla_attention_macs(p: &ComplexityParams) -> u128 {
    let (b, n1, n2, c) = (p.b as u128, p.n1 as u128, p.n2 as u128, p.c as u128);
    b * (9 * n1 * c * c + 2 * n2 * c * c + 2 * n1 * n2 * c)
}

/// Linear attention: `B (10 N1 C² + 3 N2 C²)`.
pub fn linear_attention_macs(p: &ComplexityParams) -> u128 {
    let (b, n1, n2, c) = (p.b as u128, p.n1 as u128, p.n2 as u128, p.c as u128);
    b * (10 * n1 * c * c + 3 * n2 * c * c)
}

/// Image and line statistics feeding the per-strategy formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategyShape {
    pub height: u64,
    pub width: u64,
    pub channels: u64,
    /// Mean pixels per line.
    pub s: u64,
    /// Number of line pairs.
    pub m: u64,
}

/// Closed-form MACs per strategy:
/// point-to-line `HW (9C² + 2SC² + 2SC)`, line-to-line `M (11SC² + 2S²C)`,
/// plane-to-plane `13 HW C²`.
pub fn strategy_macs(strategy: Strategy, shape: &StrategyShape) -> Result<u128, BenchError> {
    let StrategyShape { height, width, channels, s, m } = *shape;
    let hw = height * width;
    let params = match strategy {
        Strategy::PointToLine => ComplexityParams::new(hw, 1, s, channels)?,
        Strategy::LineToLine => ComplexityParams::new(m, s, s, channels)?,
        Strategy::PlaneToPlaneLinear => ComplexityParams::new(1, hw, hw, channels)?,
    };
    Ok(match strategy {
        Strategy::PlaneToPlaneLinear => linear_attention_macs(&params),
        _ => vanilla_attention_macs(&params),
    })
}

/// Same as [`strategy_macs`] with the strategy given by name.
pub fn strategy_macs_by_name(name: &str, shape: &StrategyShape) -> Result<u128, BenchError> {
    strategy_macs(name.parse()?, shape)
}

pub fn gmacs(macs: u128) -> f64 {
    macs as f64 / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadMode {
    Single,
    Parallel,
}

impl ThreadMode {
    pub fn label(&self) -> &'static str {
        match self {
            ThreadMode::Single => "single-threaded",
            ThreadMode::Parallel => "parallel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub strategy: Strategy,
    pub mac_count: u128,
    /// Median seconds over the timed repeats.
    pub wall_time: Option<f64>,
    /// Longest token sequence alive during one attention call.
    pub peak_tokens: usize,
    pub mode: ThreadMode,
}

/// Line-statistics shape measured from a pair set: `M` pairs, `S` the
/// rounded mean source tokens per pair (at least 1).
pub fn measured_shape(set: &EpipolarPairSet, channels: usize) -> StrategyShape {
    StrategyShape {
        height: set.src_size.height as u64,
        width: set.src_size.width as u64,
        channels: channels as u64,
        s: (set.mean_src_len().round() as u64).max(1),
        m: (set.len() as u64).max(1),
    }
}

/// Kernelized attention with `φ(x) = elu(x) + 1`, queries from `query`,
/// keys and values from `kv`.
pub fn linear_attention(query: &DMatrix<f64>, kv: &DMatrix<f64>, layer: &AttentionLayer, heads: usize) -> DMatrix<f64> {
    let phi = |x: f64| if x > 0.0 { x + 1.0 } else { x.exp() };
    let q = layer.q.apply(query).map(phi);
    let k = layer.k.apply(kv).map(phi);
    let v = layer.v.apply(kv);
    let d = q.ncols() / heads;
    let mut concat = DMatrix::zeros(query.nrows(), q.ncols());
    for h in 0..heads {
        let qh = q.columns(h * d, d);
        let kh = k.columns(h * d, d);
        let vh = v.columns(h * d, d);
        let kv_sum = kh.transpose() * vh;
        let k_sum = kh.row_sum();
        let num = qh * kv_sum;
        let den = qh * k_sum.transpose();
        let mut out = concat.columns_mut(h * d, d);
        for i in 0..query.nrows() {
            for j in 0..d {
                out[(i, j)] = num[(i, j)] / den[i];
            }
        }
    }
    layer.o.apply(&concat)
}

/// Prepared inputs for the timed strategies.
pub struct BenchWorkload {
    pub pairs: EpipolarPairSet,
    pub ref_map: FeatureMap,
    pub src_map: FeatureMap,
    pub layer: AttentionLayer,
    pub heads: usize,
}

impl BenchWorkload {
    pub fn new(pair: &CameraPair, config: &AttentionConfig, search: &SearchConfig, seed: u64) -> Result<Self, BenchError> {
        config.validate()?;
        let pairs = search_pairs(pair, search)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ref_map = random_feature_map(&mut rng, pair.ref_size(), config.channels);
        let src_map = random_feature_map(&mut rng, pair.src_size(), config.channels);
        let weights = AttentionWeights::seeded(config, seed ^ 0x5eed);
        let layer = weights.blocks[0].cross.clone();
        Ok(Self { pairs, ref_map, src_map, layer, heads: config.heads })
    }

    /// One forward pass; returns a checksum so the work is not optimized away.
    pub fn run(&self, strategy: Strategy) -> Result<f64, BenchError> {
        let refs = gather(&self.ref_map, &self.pairs, Side::Ref).map_err(AttentionError::from)?;
        let srcs = gather(&self.src_map, &self.pairs, Side::Src).map_err(AttentionError::from)?;
        let sum = match strategy {
            Strategy::LineToLine => refs
                .par_iter()
                .zip(srcs.par_iter())
                .filter(|(r, s)| !r.is_empty() && !s.is_empty())
                .map(|(r, s)| mhca(&r.tokens, &s.tokens, &self.layer, self.heads).sum())
                .sum(),
            Strategy::PointToLine => refs
                .par_iter()
                .zip(srcs.par_iter())
                .filter(|(_, s)| !s.is_empty())
                .map(|(r, s)| {
                    (0..r.tokens.nrows())
                        .map(|i| {
                            let q = r.tokens.rows(i, 1).into_owned();
                            mhca(&q, &s.tokens, &self.layer, self.heads).sum()
                        })
                        .sum::<f64>()
                })
                .sum(),
            Strategy::PlaneToPlaneLinear => {
                linear_attention(&self.ref_map.to_tokens(), &self.src_map.to_tokens(), &self.layer, self.heads).sum()
            }
        };
        Ok(sum)
    }

    pub fn peak_tokens(&self, strategy: Strategy) -> usize {
        let longest_src = self.pairs.pairs.iter().map(|p| p.src_pixels.len()).max().unwrap_or(0);
        let longest_ref = self.pairs.pairs.iter().map(|p| p.ref_pixels.len()).max().unwrap_or(0);
        match strategy {
            Strategy::PointToLine => longest_src + 1,
            Strategy::LineToLine => longest_src + longest_ref,
            Strategy::PlaneToPlaneLinear => self.ref_map.size().pixel_count() + self.src_map.size().pixel_count(),
        }
    }
}

pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Times each strategy: one discarded warm-up, then `repeats` timed runs.
pub fn run_benchmark(
    pair: &CameraPair,
    config: &AttentionConfig,
    strategies: &[Strategy],
    repeats: usize,
    mode: ThreadMode,
) -> Result<Vec<CostReport>, BenchError> {
    if repeats < 3 {
        return Err(BenchError::RepeatsTooFew(repeats));
    }
    let workload = BenchWorkload::new(pair, config, &SearchConfig::default(), 0)?;
    let shape = measured_shape(&workload.pairs, config.channels);
    let body = || -> Result<Vec<CostReport>, BenchError> {
        strategies
            .iter()
            .map(|&strategy| {
                workload.run(strategy)?;
                let mut samples = Vec::with_capacity(repeats);
                for _ in 0..repeats {
                    let start = Instant::now();
                    std::hint::black_box(workload.run(strategy)?);
                    samples.push(start.elapsed().as_secs_f64());
                }
                Ok(CostReport {
                    strategy,
                    mac_count: strategy_macs(strategy, &shape)?,
                    wall_time: Some(median(&mut samples)),
                    peak_tokens: workload.peak_tokens(strategy),
                    mode,
                })
            })
            .collect()
    };
    match mode {
        ThreadMode::Parallel => body(),
        ThreadMode::Single => rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| BenchError::ThreadPool(e.to_string()))?
            .install(body),
    }
}
