//! Calibrated two-view geometry: camera pairs, depth-parameterized pixel
//! transfer and closed-form epipolar lines.
//!
//! Pixel centers sit at integer coordinates, `x` grows along columns and `y`
//! grows down the rows. A reference pixel `p_r = (x_r, y_r, 1)` observed at
//! depth `d` lands in the source view at
//!
//! ```text
//! p_s(d) ~ W p_r d + b,    W = K_s R K_r^-1,    b = K_s t
//! ```
//!
//! so each coordinate is a ratio of two affine functions of `d`. Eliminating
//! `d` yields the source epipolar line, which depends only on the
//! coefficients of those affine functions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating rotation matrices built in code.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("singular intrinsic matrix (fx or fy is zero)")]
    SingularIntrinsics,
    #[error("rotation is not orthonormal (max deviation {deviation:.3e}, det {det:.9})")]
    NonOrthonormalRotation { deviation: f64, det: f64 },
    #[error("nonzero baseline required")]
    NonzeroBaselineRequired,
    #[error("invalid image size {height}x{width}")]
    InvalidImageSize { height: usize, width: usize },
    #[error("degenerate epipolar line (pixel maps to the epipole)")]
    DegenerateLine,
    #[error("non-finite camera parameter")]
    NonFinite,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, skew };
        k.validate()?;
        Ok(k)
    }

    /// Reads intrinsics from an upper-triangular matrix with `K[2][2] = 1`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m[(1, 0)] != 0.0 || m[(2, 0)] != 0.0 || m[(2, 1)] != 0.0 || m[(2, 2)] != 1.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "matrix must be upper-triangular with K[2][2] = 1".into(),
            ));
        }
        Self::with_skew(m[(0, 0)], m[(1, 1)], m[(0, 2)], m[(1, 2)], m[(0, 1)])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if self.fx == 0.0 || self.fy == 0.0 {
            return Err(GeometryError::SingularIntrinsics);
        }
        if self.fx < 0.0 || self.fy < 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Scales the intrinsics for an image resampled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
            skew: self.skew * factor,
        }
    }
}

/// Rigid transform `X_dst = R X_src + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    /// Validates orthonormality and `det(R) = 1` at the given elementwise tolerance.
    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self, GeometryError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let deviation = rotation_deviation(&rotation);
        let det = rotation.determinant();
        if deviation > tolerance || (det - 1.0).abs() > tolerance {
            return Err(GeometryError::NonOrthonormalRotation { deviation, det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Replaces the rotation by its closest orthonormal matrix (polar factor).
    pub fn orthonormalized(&self) -> Self {
        if rotation_deviation(&self.rotation) == 0.0 && self.rotation.determinant() == 1.0 {
            return *self;
        }
        Self { rotation: nearest_rotation(&self.rotation), translation: self.translation }
    }
}

/// Max elementwise deviation of `RᵀR` from the identity.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

pub fn nearest_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Image size in pixels: `height` rows by `width` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
}

impl ImageSize {
    pub fn new(height: usize, width: usize) -> Result<Self, GeometryError> {
        if height == 0 || width == 0 {
            return Err(GeometryError::InvalidImageSize { height, width });
        }
        Ok(Self { height, width })
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Raster index of `(x, y)`.
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }
}

impl std::fmt::Display for ImageSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// A calibrated reference/source view pair. `rel_extrinsics` maps reference
/// camera coordinates into source camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPair {
    ref_intrinsics: CameraIntrinsics,
    src_intrinsics: CameraIntrinsics,
    rel_extrinsics: CameraExtrinsics,
    ref_size: ImageSize,
    src_size: ImageSize,
}

impl CameraPair {
    pub fn new(
        ref_intrinsics: CameraIntrinsics,
        src_intrinsics: CameraIntrinsics,
        rel_extrinsics: CameraExtrinsics,
        ref_size: ImageSize,
        src_size: ImageSize,
    ) -> Result<Self, GeometryError> {
        ref_intrinsics.validate()?;
        src_intrinsics.validate()?;
        for s in [ref_size, src_size] {
            ImageSize::new(s.height, s.width)?;
        }
        if !(rel_extrinsics.translation.norm() > 0.0) {
            return Err(GeometryError::NonzeroBaselineRequired);
        }
        Ok(Self { ref_intrinsics, src_intrinsics, rel_extrinsics, ref_size, src_size })
    }

    /// Builds a pair from two world-to-camera poses: `rel = E_src · E_ref⁻¹`.
    pub fn from_world_poses(
        ref_intrinsics: CameraIntrinsics,
        ref_pose: &CameraExtrinsics,
        src_intrinsics: CameraIntrinsics,
        src_pose: &CameraExtrinsics,
        size: ImageSize,
    ) -> Result<Self, GeometryError> {
        let rel = src_pose.compose(&ref_pose.inverse());
        Self::new(ref_intrinsics, src_intrinsics, rel, size, size)
    }

    pub fn ref_intrinsics(&self) -> &CameraIntrinsics {
        &self.ref_intrinsics
    }

    pub fn src_intrinsics(&self) -> &CameraIntrinsics {
        &self.src_intrinsics
    }

    pub fn rel_extrinsics(&self) -> &CameraExtrinsics {
        &self.rel_extrinsics
    }

    pub fn ref_size(&self) -> ImageSize {
        self.ref_size
    }

    pub fn src_size(&self) -> ImageSize {
        self.src_size
    }

    /// The same rig with reference and source roles exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            ref_intrinsics: self.src_intrinsics,
            src_intrinsics: self.ref_intrinsics,
            rel_extrinsics: self.rel_extrinsics.inverse(),
            ref_size: self.src_size,
            src_size: self.ref_size,
        }
    }
}

/// `W = K_s R K_r⁻¹` and `b = K_s t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConstants {
    pub warp_matrix: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

pub fn projection_constants(pair: &CameraPair) -> Result<ProjectionConstants, GeometryError> {
    let kr_inv = pair
        .ref_intrinsics
        .matrix()
        .try_inverse()
        .ok_or(GeometryError::SingularIntrinsics)?;
    let ks = pair.src_intrinsics.matrix();
    let ext = &pair.rel_extrinsics;
    Ok(ProjectionConstants {
        warp_matrix: ks * ext.rotation * kr_inv,
        offset: ks * ext.translation,
    })
}

/// Per-pixel transfer coefficients: `x_s(d) = (a1 d + b1) / (a3 d + b3)`,
/// `y_s(d) = (a2 d + b2) / (a3 d + b3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjectionCoeffs {
    pub a: [f64; 3],
    pub b: [f64; 3],
}

pub fn pixel_coeffs(constants: &ProjectionConstants, x_r: f64, y_r: f64) -> PixelProjectionCoeffs {
    let w = &constants.warp_matrix;
    let row = |i: usize| w[(i, 0)] * x_r + w[(i, 1)] * y_r + w[(i, 2)];
    PixelProjectionCoeffs {
        a: [row(0), row(1), row(2)],
        b: [constants.offset[0], constants.offset[1], constants.offset[2]],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Point { x: f64, y: f64 },
    AtInfinity,
}

impl Projection {
    pub fn point(self) -> Option<(f64, f64)> {
        match self {
            Projection::Point { x, y } => Some((x, y)),
            Projection::AtInfinity => None,
        }
    }
}

impl PixelProjectionCoeffs {
    /// Threshold below which the homogeneous denominator counts as zero.
    pub fn denom_epsilon(&self) -> f64 {
        1e-9 * self.a[2].abs().max(self.b[2].abs()).max(1.0)
    }

    /// Unnormalized direction of the image trajectory as depth varies.
    pub fn direction(&self) -> (f64, f64) {
        let [a1, a2, a3] = self.a;
        let [b1, b2, b3] = self.b;
        (a1 * b3 - a3 * b1, a2 * b3 - a3 * b2)
    }

    fn direction_epsilon(&self) -> f64 {
        let amax = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bmax = self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        1e-12 * amax * bmax
    }
}

/// Transfers the pixel to the source view at `depth` (> 0).
pub fn project_pixel(coeffs: &PixelProjectionCoeffs, depth: f64) -> Projection {
    debug_assert!(depth > 0.0, "depth must be positive");
    let [a1, a2, a3] = coeffs.a;
    let [b1, b2, b3] = coeffs.b;
    let w = a3 * depth + b3;
    if w.abs() < coeffs.denom_epsilon() {
        return Projection::AtInfinity;
    }
    Projection::Point { x: (a1 * depth + b1) / w, y: (a2 * depth + b2) / w }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// `y = k x + b`
    Standard,
    /// `x = k' y + b'`
    Swapped,
}

/// A line in the source image in slope/intercept form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub orientation: Orientation,
    pub slope: f64,
    pub intercept: f64,
}

impl EpipolarLine {
    pub fn new(orientation: Orientation, slope: f64, intercept: f64) -> Self {
        Self { orientation, slope, intercept }
    }

    /// Perpendicular distance from `(x, y)` to the line.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (k, b) = (self.slope, self.intercept);
        match self.orientation {
            Orientation::Standard => (y - k * x - b).abs() / (1.0 + k * k).sqrt(),
            Orientation::Swapped => (x - k * y - b).abs() / (1.0 + k * k).sqrt(),
        }
    }

    /// Homogeneous line `l` with `l · (x, y, 1) = 0` on the line.
    pub fn homogeneous(&self) -> Vector3<f64> {
        let (k, b) = (self.slope, self.intercept);
        match self.orientation {
            Orientation::Standard => Vector3::new(k, -1.0, b),
            Orientation::Swapped => Vector3::new(1.0, -k, -b),
        }
    }

    /// Unit direction along the line, pointing towards increasing `x`
    /// (Standard) or increasing `y` (Swapped).
    pub fn unit_direction(&self) -> (f64, f64) {
        let n = (1.0 + self.slope * self.slope).sqrt();
        match self.orientation {
            Orientation::Standard => (1.0 / n, self.slope / n),
            Orientation::Swapped => (self.slope / n, 1.0 / n),
        }
    }

    /// Re-expresses the line in the other branch. `None` when the slope is
    /// zero, since an axis-aligned line has no finite form in the other one.
    pub fn flipped(&self) -> Option<Self> {
        if self.slope == 0.0 {
            return None;
        }
        let orientation = match self.orientation {
            Orientation::Standard => Orientation::Swapped,
            Orientation::Swapped => Orientation::Standard,
        };
        Some(Self {
            orientation,
            slope: 1.0 / self.slope,
            intercept: -self.intercept / self.slope,
        })
    }
}

/// Closed-form source epipolar line for one reference pixel.
///
/// Picks the branch with `|slope| ≤ 1`. The intercept comes from the `d = 0`
/// point when `b3` is usable, otherwise from the first finite sample at
/// `d ∈ {1, 2, 4, ...}`.
pub fn epipolar_line(coeffs: &PixelProjectionCoeffs) -> Result<EpipolarLine, GeometryError> {
    let (dx, dy) = coeffs.direction();
    let orientation = if dy.abs() <= dx.abs() { Orientation::Standard } else { Orientation::Swapped };
    line_in_orientation(coeffs, orientation)
}

/// Epipolar line forced into a given branch. Fails if that branch's slope
/// would be infinite.
pub fn line_in_orientation(
    coeffs: &PixelProjectionCoeffs,
    orientation: Orientation,
) -> Result<EpipolarLine, GeometryError> {
    let (dx, dy) = coeffs.direction();
    let eps = coeffs.direction_epsilon();
    if !(dx.hypot(dy) > eps) {
        return Err(GeometryError::DegenerateLine);
    }
    let (num, den) = match orientation {
        Orientation::Standard => (dy, dx),
        Orientation::Swapped => (dx, dy),
    };
    if den == 0.0 {
        return Err(GeometryError::DegenerateLine);
    }
    let slope = num / den;
    let point = finite_sample(coeffs).ok_or(GeometryError::DegenerateLine)?;
    let intercept = match orientation {
        Orientation::Standard => point.1 - slope * point.0,
        Orientation::Swapped => point.0 - slope * point.1,
    };
    if !slope.is_finite() || !intercept.is_finite() {
        return Err(GeometryError::DegenerateLine);
    }
    Ok(EpipolarLine { orientation, slope, intercept })
}

const FALLBACK_MAX_DOUBLINGS: u32 = 64;

/// A finite point on the trajectory: the `d = 0` image of the source camera
/// frame origin if `b3` is non-negligible, else the first usable depth.
fn finite_sample(coeffs: &PixelProjectionCoeffs) -> Option<(f64, f64)> {
    let [a1, a2, a3] = coeffs.a;
    let [b1, b2, b3] = coeffs.b;
    let eps = coeffs.denom_epsilon();
    if b3.abs() >= eps {
        return Some((b1 / b3, b2 / b3));
    }
    let mut depth = 1.0f64;
    for _ in 0..FALLBACK_MAX_DOUBLINGS {
        let w = a3 * depth + b3;
        if w.abs() > eps {
            return Some(((a1 * depth + b1) / w, (a2 * depth + b2) / w));
        }
        depth *= 2.0;
    }
    None
}

/// `[v]_x`, the cross-product matrix.
pub fn skew_symmetric(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// `F = K_s⁻ᵀ [t]_x R K_r⁻¹`, satisfying `p_sᵀ F p_r = 0`.
pub fn fundamental_matrix(pair: &CameraPair) -> Matrix3<f64> {
    let kr_inv = pair.ref_intrinsics.matrix().try_inverse().expect("validated intrinsics");
    let ks_inv = pair.src_intrinsics.matrix().try_inverse().expect("validated intrinsics");
    let ext = &pair.rel_extrinsics;
    ks_inv.transpose() * skew_symmetric(&ext.translation) * ext.rotation * kr_inv
}
