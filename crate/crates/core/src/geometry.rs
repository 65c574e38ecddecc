//! Pinhole camera, rigid poses and the log-depth binning shared by every
//! volume in the crate.
//!
//! Conventions: right-handed camera frame with +z forward, +x right and +y
//! down. Poses are stored camera-from-world, so `pose.transform(p_world)`
//! yields camera coordinates. "Depth" always means the camera-frame z
//! coordinate, never the Euclidean range.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Pinhole intrinsics together with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let finite = [fx, fy, cx, cy].iter().all(|v| v.is_finite());
        if !finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics("image size must be non-zero".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Default Freiburg 1 calibration of the TUM RGB-D benchmark (640x480).
    pub fn tum_freiburg1() -> Self {
        Self {
            fx: 517.3,
            fy: 516.5,
            cx: 318.6,
            cy: 255.3,
            width: 640,
            height: 480,
        }
    }

    /// Intrinsics for the same camera resampled to `width` x `height`.
    ///
    /// Pixel centres sit at integer coordinates, so the principal point is
    /// shifted by half a pixel before and after scaling.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        )
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// K⁻¹·(u, v, 1): the viewing ray through a pixel, scaled to unit depth.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Unit-depth rays for every pixel, row-major.
    pub fn pixel_rays(&self) -> Vec<Vector3<f64>> {
        let mut rays = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                rays.push(self.ray(x as f64, y as f64));
            }
        }
        rays
    }

    /// Projects a camera-frame point to `(u, v, depth)`.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(f64, f64, f64)> {
        self.project_checked(point).ok_or(Error::BehindCamera(point.z))
    }

    /// Like [`Intrinsics::project`] but without constructing an error.
    #[inline]
    pub fn project_checked(&self, point: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        if point.z > 0.0 {
            let inv_z = 1.0 / point.z;
            Some((
                self.fx * point.x * inv_z + self.cx,
                self.fy * point.y * inv_z + self.cy,
                point.z,
            ))
        } else {
            None
        }
    }

    /// depth·K⁻¹·(u, v, 1).
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        debug_assert!(depth > 0.0);
        self.ray(u, v) * depth
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Rigid transform, camera-from-world unless stated otherwise by the name of
/// the binding (`ref_from_kf`, `new_from_old`, ...).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOL: f64 = 1e-9;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (|RᵀR − I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_quaternion(quaternion: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *quaternion.to_rotation_matrix().matrix(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera centre in world coordinates (for a camera-from-world pose).
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Transform taking points from camera `a`'s frame into camera `b`'s frame,
/// given both camera-from-world poses: `T_b ∘ T_a⁻¹`.
pub fn relative_pose(pose_a: &Pose, pose_b: &Pose) -> Pose {
    pose_b.compose(&pose_a.inverse())
}

/// Uniform discretisation of log-depth into `k_count` bins over
/// `[d_min, d_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBinning {
    d_min: f64,
    d_max: f64,
    log_min: f64,
    log_step: f64,
    midpoints: Vec<f64>,
}

impl DepthBinning {
    pub const DEFAULT_D_MIN: f64 = 0.1;
    pub const DEFAULT_D_MAX: f64 = 12.0;
    pub const DEFAULT_BINS: usize = 64;

    pub fn new(d_min: f64, d_max: f64, k_count: usize) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite()) || d_min <= 0.0 || d_min >= d_max {
            return Err(Error::InvalidRange(format!(
                "need 0 < d_min < d_max, got d_min={d_min}, d_max={d_max}"
            )));
        }
        if k_count < 2 {
            return Err(Error::InvalidRange(format!("need at least 2 bins, got {k_count}")));
        }
        let log_min = d_min.ln();
        let log_step = (d_max.ln() - log_min) / k_count as f64;
        let midpoints = (0..k_count)
            .map(|k| (log_min + (k as f64 + 0.5) * log_step).exp())
            .collect();
        Ok(Self {
            d_min,
            d_max,
            log_min,
            log_step,
            midpoints,
        })
    }

    pub fn k_count(&self) -> usize {
        self.midpoints.len()
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    /// Width of one bin in log-depth.
    pub fn log_step(&self) -> f64 {
        self.log_step
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    #[inline]
    pub fn midpoint(&self, k: usize) -> f64 {
        self.midpoints[k]
    }

    /// Index of the bin containing `depth`, clamped to the valid range.
    #[inline]
    pub fn bin_of(&self, depth: f64) -> usize {
        let t = (depth.ln() - self.log_min) / self.log_step;
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t.floor() as usize).min(self.k_count() - 1)
        }
    }

    /// Like [`DepthBinning::bin_of`] but `None` outside `[d_min, d_max]`.
    #[inline]
    pub fn bin_in_range(&self, depth: f64) -> Option<usize> {
        if depth >= self.d_min && depth <= self.d_max {
            Some(self.bin_of(depth))
        } else {
            None
        }
    }

    pub fn clamp(&self, depth: f64) -> f64 {
        depth.clamp(self.d_min, self.d_max)
    }
}

impl Default for DepthBinning {
    fn default() -> Self {
        Self::new(Self::DEFAULT_D_MIN, Self::DEFAULT_D_MAX, Self::DEFAULT_BINS)
            .expect("default binning is valid")
    }
}
