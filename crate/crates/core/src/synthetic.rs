//! Seeded camera rigs and feature maps for demos, benchmarks and tests.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;

use crate::geometry::{CameraExtrinsics, CameraIntrinsics, CameraPair, ImageSize};
use crate::sequence::FeatureMap;

/// Horizontal stereo rig with identity intrinsics offset and `W = I`.
pub fn rectified_rig(size: ImageSize, focal: f64, baseline: f64) -> CameraPair {
    let k = CameraIntrinsics::new(focal, focal, 0.0, 0.0).expect("positive focal");
    let ext = CameraExtrinsics::new(Matrix3::identity(), Vector3::new(baseline, 0.0, 0.0))
        .expect("identity rotation");
    CameraPair::new(k, k, ext, size, size).expect("valid rectified rig")
}

/// Parameters of the random convergent rig generator.
#[derive(Debug, Clone, Copy)]
pub struct RigSampler {
    /// Range of the angle subtended at the scene center by the two cameras (degrees).
    pub vergence_deg: (f64, f64),
    /// Range of the ref-camera to scene-center distance.
    pub distance: (f64, f64),
    /// Focal length relative to the image width.
    pub focal_ratio: (f64, f64),
    /// Max principal point offset from the image center, relative to size.
    pub principal_jitter: f64,
    /// Max roll of the source camera about its optical axis (degrees).
    pub roll_deg: f64,
}

impl RigSampler {
    /// Small-vergence rigs resembling object-centric capture setups.
    pub fn dtu_like() -> Self {
        Self {
            vergence_deg: (5.0, 20.0),
            distance: (500.0, 800.0),
            focal_ratio: (1.0, 1.4),
            principal_jitter: 0.05,
            roll_deg: 5.0,
        }
    }

    /// Broader sampling for geometry property checks.
    pub fn general() -> Self {
        Self {
            vergence_deg: (3.0, 60.0),
            distance: (1.0, 10.0),
            focal_ratio: (0.5, 2.0),
            principal_jitter: 0.2,
            roll_deg: 30.0,
        }
    }

    /// Samples a pair whose source camera looks at the same scene center as the reference.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, size: ImageSize) -> SampledRig {
        let w = size.width as f64;
        let h = size.height as f64;
        let intr = |rng: &mut R| {
            let f = w * rng.gen_range(self.focal_ratio.0..=self.focal_ratio.1);
            let fy = f * rng.gen_range(0.98..=1.02);
            let cx = w / 2.0 + w * self.principal_jitter * rng.gen_range(-1.0..=1.0);
            let cy = h / 2.0 + h * self.principal_jitter * rng.gen_range(-1.0..=1.0);
            CameraIntrinsics::new(f, fy, cx, cy).expect("positive focal")
        };
        let k_ref = intr(rng);
        let k_src = intr(rng);

        let dist = rng.gen_range(self.distance.0..=self.distance.1);
        let center = Vector3::new(0.0, 0.0, dist);
        // Orbit the reference center about the scene center.
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let axis = Unit::new_normalize(Vector3::new(phi.cos(), phi.sin(), 0.0));
        let angle = rng.gen_range(self.vergence_deg.0..=self.vergence_deg.1).to_radians();
        let orbit = Rotation3::from_axis_angle(&axis, angle);
        let src_center = center + orbit * (-center);

        let forward = (center - src_center).normalize();
        let roll = rng.gen_range(-self.roll_deg..=self.roll_deg).to_radians();
        let up_hint = Rotation3::from_axis_angle(&Unit::new_normalize(forward), roll) * Vector3::y();
        let right = up_hint.cross(&forward).normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world coordinates.
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let r = crate::geometry::nearest_rotation(&r);
        let t = -(r * src_center);
        let ext = CameraExtrinsics::new(r, t).expect("orthonormal by construction");
        let pair = CameraPair::new(k_ref, k_src, ext, size, size).expect("nonzero baseline");
        SampledRig { pair, scene_depth: dist }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampledRig {
    pub pair: CameraPair,
    /// Reference-camera depth of the scene center.
    pub scene_depth: f64,
}

/// Dense map with entries drawn uniformly from `[-1, 1]`.
pub fn random_feature_map<R: Rng + ?Sized>(rng: &mut R, size: ImageSize, channels: usize) -> FeatureMap {
    let data = (0..size.pixel_count() * channels).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    FeatureMap::new(size.height, size.width, channels, data).expect("shape matches")
}
