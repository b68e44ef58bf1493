//! Independent oracle suites.
//!
//! Each oracle recomputes a library result by a different route: direct
//! camera projection instead of the closed-form line, the fundamental matrix
//! instead of the pixel coefficients, explicit per-head loops over `Vec`s
//! instead of matrix products. The suites are shared by the test targets and
//! the `verify` command.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    attention_probs, augment_pipeline, et_forward, AttentionConfig, AttentionError, AttentionLayer,
    AttentionWeights, ConvWeights, Linear, PeMode,
};
use crate::complexity::{gmacs, strategy_macs, Strategy, StrategyShape};
use crate::geometry::{
    epipolar_line, fundamental_matrix, pixel_coeffs, projection_constants, CameraPair, EpipolarLine, ImageSize,
};
use crate::pair_search::{search_pairs, SearchConfig};
use crate::sequence::{gather, scatter, FeatureMap, LineSequence, Side};
use crate::synthetic::{random_feature_map, RigSampler};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the suite's residual measure.
    pub max_residual: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub seconds: f64,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} max_residual={:.3e} tol={:.1e} cases={} ({:.3}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_residual,
            self.tolerance,
            self.cases,
            self.seconds
        )
    }
}

fn report(name: &str, passed: bool, max_residual: f64, tolerance: f64, cases: usize, start: Instant) -> SuiteReport {
    SuiteReport {
        name: name.to_string(),
        passed,
        max_residual,
        tolerance,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Alternates object-centric and broad rigs.
pub fn random_rig(rng: &mut ChaCha8Rng, i: usize, size: ImageSize) -> (CameraPair, f64) {
    let sampler = if i % 2 == 0 { RigSampler::dtu_like() } else { RigSampler::general() };
    let s = sampler.sample(rng, size);
    (s.pair, s.scene_depth)
}

/// Source-view pixel of reference pixel `(x, y)` at `depth`, by back-projection
/// and reprojection. `None` when the point is behind the source camera.
pub fn project_direct(pair: &CameraPair, x: f64, y: f64, depth: f64) -> Option<(f64, f64)> {
    let kr_inv = pair.ref_intrinsics().matrix().try_inverse()?;
    let world = kr_inv * Vector3::new(x, y, 1.0) * depth;
    let ext = pair.rel_extrinsics();
    let cam = ext.rotation() * world + ext.translation();
    if cam.z <= 0.0 {
        return None;
    }
    let p = pair.src_intrinsics().matrix() * cam;
    Some((p.x / p.z, p.y / p.z))
}

/// Mutated line used to check that the collinearity suite can fail.
fn faulty(line: EpipolarLine) -> EpipolarLine {
    EpipolarLine { slope: -line.slope, ..line }
}

/// Max perpendicular distance from directly projected depth samples to the
/// closed-form line, over `pairs` rigs × `pixels` pixels × `depths` depths.
pub fn collinearity_suite(seed: u64, pairs: usize, pixels: usize, depths: usize, fault: bool) -> SuiteReport {
    const TOL: f64 = 1e-6;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = ImageSize { height: 64, width: 80 };
    let mut worst = 0.0f64;
    let mut cases = 0;
    for i in 0..pairs {
        let (pair, scene) = random_rig(&mut rng, i, size);
        let constants = projection_constants(&pair).expect("sampled intrinsics are invertible");
        let window = 10.0 * (size.width.max(size.height) as f64);
        for _ in 0..pixels {
            let x = rng.gen_range(0.0..size.width as f64);
            let y = rng.gen_range(0.0..size.height as f64);
            let Ok(mut line) = epipolar_line(&pixel_coeffs(&constants, x, y)) else { continue };
            if fault {
                line = faulty(line);
            }
            for j in 0..depths {
                let d = scene * (0.5 + 1.5 * j as f64 / depths.max(2).saturating_sub(1) as f64);
                let Some((u, v)) = project_direct(&pair, x, y, d) else { continue };
                if u.abs() > window || v.abs() > window {
                    continue;
                }
                worst = worst.max(line.distance(u, v));
                cases += 1;
            }
        }
    }
    report("collinearity", worst < TOL && cases > 0, worst, TOL, cases, start)
}

/// Direction cosine between the closed-form line and `F·p` in homogeneous form.
pub fn line_cosine(pair: &CameraPair, x: f64, y: f64) -> Option<f64> {
    let constants = projection_constants(pair).ok()?;
    let l1 = epipolar_line(&pixel_coeffs(&constants, x, y)).ok()?.homogeneous();
    let l2 = fundamental_matrix(pair) * Vector3::new(x, y, 1.0);
    Some(l1.dot(&l2).abs() / (l1.norm() * l2.norm()))
}

pub fn fundamental_suite(seed: u64, draws: usize) -> SuiteReport {
    const TOL: f64 = 1e-9;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let size = ImageSize { height: 64, width: 80 };
    let mut worst = 0.0f64;
    let mut cases = 0;
    for i in 0..draws {
        let (pair, _) = random_rig(&mut rng, i, size);
        let x = rng.gen_range(0.0..size.width as f64);
        let y = rng.gen_range(0.0..size.height as f64);
        if let Some(cos) = line_cosine(&pair, x, y) {
            worst = worst.max(1.0 - cos);
            cases += 1;
        }
    }
    report("fundamental-equivalence", worst < TOL && cases > 0, worst, TOL, cases, start)
}

type Rows = Vec<Vec<f64>>;

fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn naive_linear(x: &[Vec<f64>], l: &Linear) -> Rows {
    x.iter()
        .map(|row| {
            (0..l.weight.ncols())
                .map(|o| {
                    let mut acc = l.bias[o];
                    for (i, v) in row.iter().enumerate() {
                        acc += v * l.weight[(i, o)];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Explicit score, softmax and weighted sum per head and per query.
pub fn naive_attention(query: &[Vec<f64>], kv: &[Vec<f64>], layer: &AttentionLayer, heads: usize) -> Rows {
    let q = naive_linear(query, &layer.q);
    let k = naive_linear(kv, &layer.k);
    let v = naive_linear(kv, &layer.v);
    let c = layer.q.weight.ncols();
    let d = c / heads;
    let mut concat = vec![vec![0.0; c]; query.len()];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for (qi, qrow) in q.iter().enumerate() {
            let mut scores: Vec<f64> = k
                .iter()
                .map(|krow| cols.clone().map(|j| qrow[j] * krow[j]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            for (ki, s) in scores.iter().enumerate() {
                for j in cols.clone() {
                    concat[qi][j] += s / total * v[ki][j];
                }
            }
        }
    }
    naive_linear(&concat, &layer.o)
}

pub fn naive_sine_pe(n: usize, c: usize) -> Rows {
    (0..n)
        .map(|pos| {
            (0..c)
                .map(|j| {
                    let i = (j / 2) as f64;
                    let angle = pos as f64 / 10000f64.powf(2.0 * i / c as f64);
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

fn add_into(x: &mut [Vec<f64>], y: &[Vec<f64>]) {
    for (a, b) in x.iter_mut().zip(y) {
        for (u, v) in a.iter_mut().zip(b) {
            *u += v;
        }
    }
}

fn naive_pe(n: usize, weights: &AttentionWeights, config: &AttentionConfig) -> Option<Rows> {
    match config.pe_mode {
        PeMode::None => None,
        PeMode::Sine => Some(naive_sine_pe(n, config.channels)),
        PeMode::Learnable => weights.pe_table.as_ref().map(|t| rows_of(t).into_iter().take(n).collect()),
    }
}

/// Sequential per-pair transformer built on [`naive_attention`].
pub fn naive_et_forward(
    ref_seqs: &[LineSequence],
    src_seqs: &[LineSequence],
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Vec<Rows> {
    let mut out = Vec::with_capacity(src_seqs.len());
    for (r, s) in ref_seqs.iter().zip(src_seqs) {
        let mut src = rows_of(&s.tokens);
        let mut refs = rows_of(&r.tokens);
        if src.is_empty() {
            out.push(src);
            continue;
        }
        if let Some(pe) = naive_pe(src.len(), weights, config) {
            add_into(&mut src, &pe);
        }
        if let Some(pe) = naive_pe(refs.len(), weights, config) {
            add_into(&mut refs, &pe);
        }
        for block in &weights.blocks {
            let sa = naive_attention(&src, &src, &block.intra, config.heads);
            add_into(&mut src, &sa);
            if refs.is_empty() {
                continue;
            }
            let ca = naive_attention(&src, &refs, &block.cross, config.heads);
            add_into(&mut src, &ca);
            let hidden: Rows = naive_linear(&src, &block.ffn.w1)
                .into_iter()
                .map(|row| row.into_iter().map(|v| v.max(0.0)).collect())
                .collect();
            let ff = naive_linear(&hidden, &block.ffn.w2);
            add_into(&mut src, &ff);
        }
        out.push(src);
    }
    out
}

/// Direct six-loop same-size convolution with zero padding.
pub fn naive_conv(map: &FeatureMap, conv: &ConvWeights) -> FeatureMap {
    let (h, w, c) = (map.height(), map.width(), map.channels());
    let r = (conv.kernel_size / 2) as isize;
    let mut out = FeatureMap::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for co in 0..c {
                let mut acc = conv.bias[co];
                for ky in 0..conv.kernel_size {
                    for kx in 0..conv.kernel_size {
                        let sy = y as isize + ky as isize - r;
                        let sx = x as isize + kx as isize - r;
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        for ci in 0..c {
                            acc += map.pixel(sx as usize, sy as usize)[ci] * conv.kernel[conv.index(ky, kx, ci, co)];
                        }
                    }
                }
                out.pixel_mut(x, y)[co] = acc;
            }
        }
    }
    out
}

fn max_abs_diff(a: &[Rows], b: &[LineSequence]) -> f64 {
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        for (i, row) in x.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - y.tokens[(i, j)]).abs());
            }
        }
    }
    worst
}

fn random_seq(rng: &mut ChaCha8Rng, pair_index: usize, n: usize, c: usize) -> LineSequence {
    LineSequence {
        pair_index,
        tokens: DMatrix::from_fn(n, c, |_, _| rng.gen_range(-1.0..1.0)),
        pixel_order: (0..n).map(|i| crate::pair_search::Pixel::new(i, 0)).collect(),
    }
}

/// One random attention problem.
#[derive(Debug, Clone)]
pub struct AttentionInstance {
    pub config: AttentionConfig,
    pub weights: AttentionWeights,
    pub ref_seqs: Vec<LineSequence>,
    pub src_seqs: Vec<LineSequence>,
}

/// Instance `0` is the largest shape (n = 256, c = 64, h = 8); the rest are random.
pub fn attention_instance(rng: &mut ChaCha8Rng, index: usize, pe_mode: PeMode) -> AttentionInstance {
    let (c, heads, n_max) = if index == 0 {
        (64, 8, 256)
    } else {
        let c = *[8usize, 16, 32, 64].choose(rng).unwrap();
        let heads = *[1usize, 2, 4, 8].iter().filter(|h| c % **h == 0).collect::<Vec<_>>().choose(rng).unwrap();
        (c, *heads, rng.gen_range(1..=256))
    };
    let config = AttentionConfig { pe_mode, n_blocks: 1 + index % 2, ..AttentionConfig::new(c, heads) };
    let mut weights = AttentionWeights::seeded(&config, rng.gen());
    for b in weights.blocks.iter_mut() {
        for l in [&mut b.intra.q, &mut b.intra.k, &mut b.intra.v, &mut b.intra.o, &mut b.cross.q, &mut b.cross.o] {
            l.bias.apply(|v| *v = rng.gen_range(-0.1..0.1));
        }
        b.ffn.w1.bias.apply(|v| *v = rng.gen_range(-0.1..0.1));
    }
    if pe_mode == PeMode::Learnable {
        weights.pe_table = Some(DMatrix::from_fn(n_max, c, |_, _| rng.gen_range(-1.0..1.0)));
    }
    let n_pairs = if index == 0 { 1 } else { rng.gen_range(1..=3) };
    let mut ref_seqs = Vec::new();
    let mut src_seqs = Vec::new();
    for p in 0..n_pairs {
        let ns = if index == 0 { n_max } else { rng.gen_range(0..=n_max) };
        let nr = if index == 0 { n_max } else { rng.gen_range(0..=n_max) };
        src_seqs.push(random_seq(rng, p, ns, c));
        ref_seqs.push(random_seq(rng, p, nr, c));
    }
    AttentionInstance { config, weights, ref_seqs, src_seqs }
}

fn permute(seq: &LineSequence, perm: &[usize]) -> LineSequence {
    LineSequence {
        pair_index: seq.pair_index,
        tokens: DMatrix::from_fn(perm.len(), seq.tokens.ncols(), |i, j| seq.tokens[(perm[i], j)]),
        pixel_order: perm.iter().map(|&i| seq.pixel_order[i]).collect(),
    }
}

/// Largest deviation between `f(permuted input)` and `permuted f(input)` for a
/// single pair with a shuffled source and a shuffled reference.
pub fn permutation_gap(
    rng: &mut ChaCha8Rng,
    src: &LineSequence,
    reference: &LineSequence,
    weights: &AttentionWeights,
    config: &AttentionConfig,
) -> Result<f64, AttentionError> {
    let base = et_forward(std::slice::from_ref(reference), std::slice::from_ref(src), weights, config)?;
    let mut ps: Vec<usize> = (0..src.len()).collect();
    ps.shuffle(rng);
    if ps.windows(2).all(|w| w[0] < w[1]) {
        ps.rotate_left(1);
    }
    let mut pr: Vec<usize> = (0..reference.len()).collect();
    pr.shuffle(rng);
    let shuffled = et_forward(&[permute(reference, &pr)], &[permute(src, &ps)], weights, config)?;
    let expected = permute(&base[0], &ps);
    Ok((&shuffled[0].tokens - &expected.tokens).abs().max())
}

/// Oracle match, row stochasticity, zero-weight identity and permutation
/// behaviour over `instances` random problems.
pub fn attention_suites(seed: u64, instances: usize) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa77e);
    let modes = [PeMode::Sine, PeMode::None, PeMode::Learnable];

    let start = Instant::now();
    let mut worst_oracle = 0.0f64;
    let mut worst_rows = 0.0f64;
    let mut worst_equivariance = 0.0f64;
    let mut min_pe_gap = f64::INFINITY;
    let mut perm_cases = 0;
    let mut errors = false;
    for i in 0..instances {
        let inst = attention_instance(&mut rng, i, modes[i % modes.len()]);
        match et_forward(&inst.ref_seqs, &inst.src_seqs, &inst.weights, &inst.config) {
            Ok(out) => {
                let naive = naive_et_forward(&inst.ref_seqs, &inst.src_seqs, &inst.weights, &inst.config);
                worst_oracle = worst_oracle.max(max_abs_diff(&naive, &out));
            }
            Err(_) => errors = true,
        }
        let block = &inst.weights.blocks[0];
        for (s, r) in inst.src_seqs.iter().zip(&inst.ref_seqs) {
            if s.is_empty() {
                continue;
            }
            let q = block.intra.q.apply(&s.tokens);
            let mut keys = vec![block.intra.k.apply(&s.tokens)];
            if !r.is_empty() {
                keys.push(block.cross.k.apply(&r.tokens));
            }
            for k in keys {
                for p in attention_probs(&q, &k, inst.config.heads) {
                    for row in p.row_iter() {
                        worst_rows = worst_rows.max((row.sum() - 1.0).abs());
                    }
                }
            }
        }
        let (s, r) = (&inst.src_seqs[0], &inst.ref_seqs[0]);
        if s.len() >= 2 {
            let plain = AttentionConfig { pe_mode: PeMode::None, ..inst.config };
            let sine = AttentionConfig { pe_mode: PeMode::Sine, ..inst.config };
            match (
                permutation_gap(&mut rng, s, r, &inst.weights, &plain),
                permutation_gap(&mut rng, s, r, &inst.weights, &sine),
            ) {
                (Ok(a), Ok(b)) => {
                    worst_equivariance = worst_equivariance.max(a);
                    min_pe_gap = min_pe_gap.min(b);
                    perm_cases += 1;
                }
                _ => errors = true,
            }
        }
    }
    let oracle = report("attention-oracle", !errors && worst_oracle < 1e-8, worst_oracle, 1e-8, instances, start);
    let rows = report("attention-row-sums", worst_rows < 1e-12, worst_rows, 1e-12, instances, start);
    let equiv = report(
        "permutation-equivariance",
        !errors && perm_cases > 0 && worst_equivariance < 1e-9,
        worst_equivariance,
        1e-9,
        perm_cases,
        start,
    );
    // Residual here is the smallest gap seen with sine encoding; it must stay large.
    let pe_breaks = SuiteReport {
        passed: perm_cases > 0 && min_pe_gap > 1e-6,
        ..report("sine-pe-breaks-symmetry", false, min_pe_gap, 1e-6, perm_cases, start)
    };

    let start = Instant::now();
    let mut worst_identity = 0.0f64;
    let identity_cases = instances.div_ceil(10).max(1);
    for i in 0..identity_cases {
        let size = ImageSize { height: 16, width: 20 };
        let (pair, _) = random_rig(&mut rng, i, size);
        let config = AttentionConfig { pe_mode: PeMode::None, ..AttentionConfig::new(8, 2) };
        let mut weights = AttentionWeights::zeros(&config);
        weights.local = ConvWeights::identity(config.la_kernel, config.channels);
        let ref_map = random_feature_map(&mut rng, size, 8);
        let src_map = random_feature_map(&mut rng, size, 8);
        let diff = search_pairs(&pair, &SearchConfig::default())
            .ok()
            .and_then(|set| augment_pipeline(&ref_map, &src_map, &set, &weights, &config).ok())
            .map(|out| if out == src_map { 0.0 } else { f64::INFINITY })
            .unwrap_or(f64::INFINITY);
        worst_identity = worst_identity.max(diff);
    }
    let identity = report("zero-weight-identity", worst_identity == 0.0, worst_identity, 0.0, identity_cases, start);
    vec![oracle, rows, equiv, pe_breaks, identity]
}

/// Exact MAC counts at the published worked example and their rounded figures.
pub fn complexity_suite() -> SuiteReport {
    let start = Instant::now();
    let shape = StrategyShape { height: 80, width: 64, channels: 64, s: 30, m: 30 };
    let expected: [(Strategy, u128, f64, i32); 3] = [
        (Strategy::PointToLine, 1_466_695_680, 1.5, 1),
        (Strategy::LineToLine, 44_006_400, 0.04, 2),
        (Strategy::PlaneToPlaneLinear, 272_629_760, 0.27, 2),
    ];
    let mut worst = 0.0f64;
    let mut ok = true;
    for (strategy, macs, quoted, decimals) in expected {
        let got = strategy_macs(strategy, &shape).unwrap_or(0);
        let scale = 10f64.powi(decimals);
        let rounded = (gmacs(got) * scale).round() / scale;
        ok &= got == macs && (rounded - quoted).abs() < 1e-12;
        worst = worst.max((got as f64 - macs as f64).abs());
    }
    report("complexity-regression", ok, worst, 0.0, expected.len(), start)
}

/// Bitwise scatter∘gather identity on clustered pixels of both views.
pub fn codec_suite(seed: u64, maps: usize) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0dec);
    let size = ImageSize { height: 32, width: 40 };
    let mut mismatches = 0usize;
    let mut rig_cache = None;
    for i in 0..maps {
        if i % 10 == 0 {
            let (pair, _) = random_rig(&mut rng, i / 10, size);
            rig_cache = search_pairs(&pair, &SearchConfig::default()).ok();
        }
        let Some(set) = rig_cache.as_ref() else {
            mismatches += 1;
            continue;
        };
        let c = rng.gen_range(1..=16);
        for side in [Side::Ref, Side::Src] {
            let map = random_feature_map(&mut rng, size, c);
            let zeros = FeatureMap::zeros(size.height, size.width, c);
            let round = gather(&map, set, side).and_then(|seqs| scatter(&seqs, set, side, &zeros));
            let Ok(out) = round else {
                mismatches += 1;
                continue;
            };
            for pair in &set.pairs {
                let members = match side {
                    Side::Ref => &pair.ref_pixels,
                    Side::Src => &pair.src_pixels,
                };
                for p in members {
                    let a = map.pixel(p.x, p.y).iter().map(|v| v.to_bits());
                    if !a.eq(out.pixel(p.x, p.y).iter().map(|v| v.to_bits())) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    report("codec-round-trip", mismatches == 0, mismatches as f64, 0.0, maps, start)
}

/// Every suite at sizes derived from `trials`.
pub fn run_all(seed: u64, trials: usize, fault: bool) -> Vec<SuiteReport> {
    let mut out = vec![
        collinearity_suite(seed, trials, 10, 100, fault),
        fundamental_suite(seed, trials * 10),
    ];
    out.extend(attention_suites(seed, trials.min(50)));
    out.push(complexity_suite());
    out.push(codec_suite(seed, trials.min(100)));
    out
}
