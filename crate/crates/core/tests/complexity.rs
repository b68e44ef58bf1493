use epiline_core::complexity::{
    linear_attention_macs, measured_shape, run_benchmark, strategy_macs, strategy_macs_by_name,
    vanilla_attention_macs, BenchError, ComplexityParams, Strategy, StrategyShape, ThreadMode,
};
use epiline_core::attention::AttentionConfig;
use epiline_core::geometry::ImageSize;
use epiline_core::pair_search::{search_pairs, SearchConfig};
use epiline_core::synthetic::RigSampler;
use epiline_core::verify::complexity_suite;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXAMPLE: StrategyShape = StrategyShape { height: 80, width: 64, channels: 64, s: 30, m: 30 };

#[test]
fn worked_example_values() {
    assert_eq!(strategy_macs(Strategy::PointToLine, &EXAMPLE).unwrap(), 1_466_695_680);
    assert_eq!(strategy_macs(Strategy::LineToLine, &EXAMPLE).unwrap(), 44_006_400);
    assert_eq!(strategy_macs(Strategy::PlaneToPlaneLinear, &EXAMPLE).unwrap(), 272_629_760);
    let p = ComplexityParams::new(30, 30, 30, 64).unwrap();
    assert_eq!(vanilla_attention_macs(&p), 44_006_400);
    let p = ComplexityParams::new(1, 5120, 5120, 64).unwrap();
    assert_eq!(linear_attention_macs(&p), 272_629_760);
    assert!(strategy_macs_by_name("spiral", &EXAMPLE).is_err());
    assert!(complexity_suite().passed);
}

#[test]
fn doubling_channels_quadruples_when_quadratic_terms_dominate() {
    for (n1, n2) in [(1, 1), (4, 9), (30, 30)] {
        for c in [1024u64, 4096, 16384] {
            let base = vanilla_attention_macs(&ComplexityParams::new(2, n1, n2, c).unwrap()) as f64;
            let doubled = vanilla_attention_macs(&ComplexityParams::new(2, n1, n2, 2 * c).unwrap()) as f64;
            // The linear-in-C interaction term only doubles, so the ratio sits just below 4.
            let eps = (2 * n1 * n2) as f64 / ((9 * n1 + 2 * n2) * c) as f64;
            let ratio = doubled / base;
            assert!(ratio <= 4.0 && ratio >= 4.0 * (1.0 - eps), "{ratio}");
        }
    }
}

#[test]
fn scaling_in_image_size() {
    let small = StrategyShape { height: 40, width: 32, ..EXAMPLE };
    let p2l = |s: &StrategyShape| strategy_macs(Strategy::PointToLine, s).unwrap();
    let l2l = |s: &StrategyShape| strategy_macs(Strategy::LineToLine, s).unwrap();
    assert_eq!(p2l(&EXAMPLE), 4 * p2l(&small));
    assert_eq!(l2l(&EXAMPLE), l2l(&small));
}

#[test]
fn measured_ordering_on_dtu_rig() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pair = RigSampler::dtu_like().sample(&mut rng, ImageSize::new(64, 80).unwrap()).pair;
    let set = search_pairs(&pair, &SearchConfig::default()).unwrap();
    let shape = measured_shape(&set, 64);
    let m = |s| strategy_macs(s, &shape).unwrap();
    assert!(m(Strategy::LineToLine) < m(Strategy::PlaneToPlaneLinear));
    assert!(m(Strategy::PlaneToPlaneLinear) < m(Strategy::PointToLine));
}

#[test]
fn benchmark_reports() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pair = RigSampler::dtu_like().sample(&mut rng, ImageSize::new(16, 20).unwrap()).pair;
    let config = AttentionConfig::new(8, 2);
    assert!(matches!(
        run_benchmark(&pair, &config, &Strategy::ALL, 1, ThreadMode::Single),
        Err(BenchError::RepeatsTooFew(1))
    ));
    let reports = run_benchmark(&pair, &config, &Strategy::ALL, 3, ThreadMode::Single).unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert!(r.wall_time.unwrap() >= 0.0);
        assert!(r.mac_count > 0 && r.peak_tokens > 0);
        assert_eq!(r.mode, ThreadMode::Single);
    }
}
