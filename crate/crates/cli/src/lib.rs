//! Command implementations behind the `epiline` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epiline_core::attention::{augment_pipeline, augment_pipeline_symmetric};
use epiline_core::complexity::{gmacs, measured_shape, run_benchmark, CostReport, BenchWorkload};
use epiline_core::io::{
    load_feature_map, load_weights, pairs_from_json, pairs_to_json, parse_cam_file, render_pairs,
    save_feature_map, write_ppm,
};
use epiline_core::pair_search::{precision_sweep, search_pairs, SweepRow};
use epiline_core::synthetic::{random_feature_map, RigSampler};
use epiline_core::verify::{run_all, SuiteReport};
use epiline_core::{
    AttentionConfig, AttentionWeights, CameraPair, EpipolarPairSet, FeatureMap, ImageSize, SearchConfig, Strategy,
    ThreadMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Parses `HxW`.
pub fn parse_size(text: &str) -> Result<ImageSize, String> {
    let (h, w) = text.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got \"{text}\""))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in \"{text}\""))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in \"{text}\""))?;
    ImageSize::new(h, w).map_err(|e| e.to_string())
}

/// Parses `s_k:s_b,s_k:s_b,...`.
pub fn parse_grid(text: &str) -> Result<Vec<(f64, f64)>, String> {
    text.split(',')
        .map(|cell| {
            let (k, b) = cell.split_once(':').ok_or_else(|| format!("expected s_k:s_b, got \"{cell}\""))?;
            let k: f64 = k.trim().parse().map_err(|_| format!("bad s_k in \"{cell}\""))?;
            let b: f64 = b.trim().parse().map_err(|_| format!("bad s_b in \"{cell}\""))?;
            Ok((k, b))
        })
        .collect()
}

pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>> {
    text.split(',').map(|s| s.trim().parse::<Strategy>().map_err(anyhow::Error::from)).collect()
}

/// Builds the pair from two camera files.
pub fn load_pair(ref_cam: &Path, src_cam: &Path, size: ImageSize) -> Result<CameraPair> {
    let r = parse_cam_file(ref_cam).with_context(|| format!("reading {}", ref_cam.display()))?;
    let s = parse_cam_file(src_cam).with_context(|| format!("reading {}", src_cam.display()))?;
    Ok(CameraPair::from_world_poses(r.intrinsics, &r.extrinsics, s.intrinsics, &s.extrinsics, size)?)
}

/// Camera files when both are given, otherwise a seeded object-centric rig.
pub fn pair_or_synthetic(cams: Option<(&Path, &Path)>, size: ImageSize, seed: u64) -> Result<CameraPair> {
    match cams {
        Some((r, s)) => load_pair(r, s, size),
        None => Ok(RigSampler::dtu_like().sample(&mut ChaCha8Rng::seed_from_u64(seed), size).pair),
    }
}

pub fn cmd_pairs(pair: &CameraPair, config: &SearchConfig) -> Result<String> {
    Ok(pairs_to_json(&search_pairs(pair, config)?))
}

pub fn read_pairs(path: &Path) -> Result<EpipolarPairSet> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    pairs_from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<prefix>_ref.ppm` and `<prefix>_src.ppm`.
pub fn cmd_visualize(set: &EpipolarPairSet, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let (r, s) = render_pairs(set);
    let (rp, sp) = (with_suffix(prefix, "_ref.ppm"), with_suffix(prefix, "_src.ppm"));
    write_ppm(&rp, &r).with_context(|| format!("writing {}", rp.display()))?;
    write_ppm(&sp, &s).with_context(|| format!("writing {}", sp.display()))?;
    Ok((rp, sp))
}

pub struct AugmentInputs<'a> {
    pub pair: &'a CameraPair,
    pub search: SearchConfig,
    pub features: Option<(&'a Path, &'a Path)>,
    pub weights: Option<&'a Path>,
    pub config: AttentionConfig,
    pub seed: u64,
    pub symmetric: bool,
}

/// Enhanced source map, plus the reference map in symmetric mode.
pub fn cmd_augment(inputs: &AugmentInputs) -> Result<(FeatureMap, Option<FeatureMap>)> {
    let mut config = inputs.config;
    let weights = match inputs.weights {
        Some(path) => {
            let (stored, weights) = load_weights(path).with_context(|| format!("reading {}", path.display()))?;
            config = AttentionConfig { pe_mode: config.pe_mode, ..stored };
            weights
        }
        None => AttentionWeights::seeded(&config, inputs.seed),
    };
    let (ref_map, src_map) = match inputs.features {
        Some((r, s)) => (
            load_feature_map(r).with_context(|| format!("reading {}", r.display()))?,
            load_feature_map(s).with_context(|| format!("reading {}", s.display()))?,
        ),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(inputs.seed);
            (
                random_feature_map(&mut rng, inputs.pair.ref_size(), config.channels),
                random_feature_map(&mut rng, inputs.pair.src_size(), config.channels),
            )
        }
    };
    if ref_map.size() != inputs.pair.ref_size() || src_map.size() != inputs.pair.src_size() {
        bail!(
            "feature maps are {} and {}, but --size is {}",
            ref_map.size(),
            src_map.size(),
            inputs.pair.ref_size()
        );
    }
    let set = search_pairs(inputs.pair, &inputs.search)?;
    if inputs.symmetric {
        let (src, reference) = augment_pipeline_symmetric(&ref_map, &src_map, &set, &weights, &config)?;
        Ok((src, Some(reference)))
    } else {
        Ok((augment_pipeline(&ref_map, &src_map, &set, &weights, &config)?, None))
    }
}

pub fn save_augmented(prefix: &Path, src: &FeatureMap, reference: Option<&FeatureMap>) -> Result<Vec<PathBuf>> {
    let mut written = vec![with_suffix(prefix, "_src.epfm")];
    save_feature_map(&written[0], src)?;
    if let Some(r) = reference {
        written.push(with_suffix(prefix, "_ref.epfm"));
        save_feature_map(&written[1], r)?;
    }
    Ok(written)
}

pub fn cmd_bench(
    pair: &CameraPair,
    config: &AttentionConfig,
    strategies: &[Strategy],
    repeats: usize,
    mode: ThreadMode,
) -> Result<Vec<CostReport>> {
    Ok(run_benchmark(pair, config, strategies, repeats, mode)?)
}

pub fn bench_table(pair: &CameraPair, config: &AttentionConfig, reports: &[CostReport]) -> Result<String> {
    let workload = BenchWorkload::new(pair, config, &SearchConfig::default(), 0)?;
    let shape = measured_shape(&workload.pairs, config.channels);
    let mut out = String::new();
    let mode = reports.first().map_or("n/a", |r| r.mode.label());
    let _ = writeln!(
        out,
        "# {}x{} C={} S={} M={} mode={}",
        shape.height, shape.width, shape.channels, shape.s, shape.m, mode
    );
    let _ = writeln!(out, "{:<16} {:>16} {:>8} {:>12} {:>8}", "strategy", "MACs", "GMACs", "median_ms", "peak");
    for r in reports {
        let ms = r.wall_time.map_or("-".to_string(), |t| format!("{:.3}", t * 1e3));
        let _ = writeln!(
            out,
            "{:<16} {:>16} {:>8.2} {:>12} {:>8}",
            r.strategy.name(),
            r.mac_count,
            gmacs(r.mac_count),
            ms,
            r.peak_tokens
        );
    }
    Ok(out)
}

pub fn bench_csv(reports: &[CostReport]) -> String {
    let mut out = String::from("strategy,macs,gmacs,median_seconds,peak_tokens,mode\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.2},{},{},{}",
            r.strategy.name(),
            r.mac_count,
            gmacs(r.mac_count),
            r.wall_time.map_or(String::new(), |t| format!("{t:.9}")),
            r.peak_tokens,
            r.mode.label()
        );
    }
    out
}

/// Suite reports and the overall verdict.
pub fn cmd_verify(seed: u64, trials: usize, fault: bool) -> Result<(Vec<SuiteReport>, bool)> {
    if trials == 0 {
        bail!("--trials must be at least 1");
    }
    let reports = run_all(seed, trials, fault);
    let ok = reports.iter().all(|r| r.passed);
    Ok((reports, ok))
}

pub fn cmd_sweep(pair: &CameraPair, grid: &[(f64, f64)], base: &SearchConfig) -> Result<Vec<SweepRow>> {
    Ok(precision_sweep(pair, grid, base)?)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>8} {:>8} {:>8} {:>10} {:>12}\n", "s_k", "s_b", "m", "coverage", "src_coverage");
    for r in rows {
        let _ = writeln!(out, "{:>8} {:>8} {:>8} {:>10.4} {:>12.4}", r.s_k, r.s_b, r.m, r.coverage, r.src_coverage);
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("s_k,s_b,m,coverage,src_coverage\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.6},{:.6}", r.s_k, r.s_b, r.m, r.coverage, r.src_coverage);
    }
    out
}
