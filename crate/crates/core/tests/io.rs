use epiline_core::attention::{AttentionConfig, AttentionWeights};
use epiline_core::geometry::{CameraExtrinsics, CameraIntrinsics, ImageSize};
use epiline_core::io::{
    format_cam_file, load_feature_map, load_weights, pairs_from_json, pairs_to_json, parse_cam_file, render_pairs,
    save_feature_map, save_weights, CamFile,
};
use epiline_core::pair_search::{search_pairs, SearchConfig};
use epiline_core::synthetic::{random_feature_map, rectified_rig, RigSampler};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cam_strategy() -> impl Strategy<Value = CamFile> {
    (
        (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
        (-500.0f64..500.0, -500.0f64..500.0, -500.0f64..500.0),
        (50.0f64..2000.0, 50.0f64..2000.0, 0.0f64..400.0, 0.0f64..300.0),
        prop::option::of((1.0f64..900.0, 0.1f64..10.0)),
    )
        .prop_map(|(rv, t, (fx, fy, cx, cy), depth)| {
            let r = Rotation3::from_scaled_axis(Vector3::new(rv.0, rv.1, rv.2)).into_inner();
            CamFile {
                intrinsics: CameraIntrinsics::new(fx, fy, cx, cy).unwrap(),
                extrinsics: CameraExtrinsics::new(r, Vector3::new(t.0, t.1, t.2)).unwrap(),
                depth_min: depth.map(|d| d.0),
                depth_interval: depth.map(|d| d.1),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cam_file_round_trip(cam in cam_strategy()) {
        let text = format_cam_file(&cam);
        let back = epiline_core::io::parse_cam_str(&text).unwrap();
        prop_assert_eq!(back.intrinsics, cam.intrinsics);
        prop_assert_eq!(back.depth_min, cam.depth_min);
        prop_assert_eq!(back.depth_interval, cam.depth_interval);
        prop_assert_eq!(back.extrinsics.translation(), cam.extrinsics.translation());
        let dr = (back.extrinsics.rotation() - cam.extrinsics.rotation()).abs().max();
        prop_assert!(dr < 1e-15);
    }
}

#[test]
fn files_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let map = random_feature_map(&mut rng, ImageSize::new(5, 7).unwrap(), 3);
    let path = dir.path().join("f.epfm");
    save_feature_map(&path, &map).unwrap();
    let back = load_feature_map(&path).unwrap();
    for (a, b) in map.data().iter().zip(back.data()) {
        assert_eq!(*b, *a as f32 as f64);
    }

    let config = AttentionConfig::new(8, 2);
    let weights = AttentionWeights::seeded(&config, 3);
    let wpath = dir.path().join("w.epwt");
    save_weights(&wpath, &config, &weights).unwrap();
    let (cfg, w) = load_weights(&wpath).unwrap();
    assert_eq!(cfg, config);
    assert_eq!(w.blocks.len(), 1);

    let cam = CamFile {
        intrinsics: CameraIntrinsics::new(100.0, 100.0, 40.0, 32.0).unwrap(),
        extrinsics: CameraExtrinsics::identity(),
        depth_min: Some(425.0),
        depth_interval: None,
    };
    let cpath = dir.path().join("c.txt");
    std::fs::write(&cpath, format_cam_file(&cam)).unwrap();
    assert_eq!(parse_cam_file(&cpath).unwrap(), cam);
    assert!(parse_cam_file(dir.path().join("missing.txt")).is_err());
}

#[test]
fn pair_json_round_trip_random_rig() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pair = RigSampler::dtu_like().sample(&mut rng, ImageSize::new(32, 40).unwrap()).pair;
    let set = search_pairs(&pair, &SearchConfig::default()).unwrap();
    assert_eq!(pairs_from_json(&pairs_to_json(&set)).unwrap(), set);
}

#[test]
fn rectified_render_has_row_bands() {
    let size = ImageSize::new(8, 8).unwrap();
    let set = search_pairs(&rectified_rig(size, 100.0, 0.2), &SearchConfig::new(0.1, 1.0, 1.0, 2).unwrap()).unwrap();
    let (r, s) = render_pairs(&set);
    let mut colors = Vec::new();
    for y in 0..8 {
        let c = r.get(0, y);
        assert!((0..8).all(|x| r.get(x, y) == c && s.get(x, y) == c));
        colors.push(c);
    }
    colors.sort();
    colors.dedup();
    assert_eq!(colors.len(), 8);
}
