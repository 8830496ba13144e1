//! Pinhole camera model, ray generation, and pose sampling on a sphere.
//!
//! Convention: camera looks along +z in its own frame, image origin is the
//! top-left pixel, and pixel (u, v) samples the point (u+0.5, v+0.5) on the
//! image plane.

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Square-pixel intrinsics with the principal point at the image center.
    pub fn centered(resolution: usize) -> Self {
        let r = resolution as f64;
        Intrinsics { fx: r, fy: r, cx: r / 2.0, cy: r / 2.0 }
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let p = Pose { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    /// Checks orthonormality (RᵀR = I within 1e-9) and det R = +1.
    pub fn validate(&self) -> Result<()> {
        let rt = self.rotation.transpose();
        let prod = rt.mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (prod.m[i][j] - want).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "rotation is not orthonormal: (RtR)[{i}][{j}] = {}",
                        prod.m[i][j]
                    )));
                }
            }
        }
        let m = &self.rotation.m;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("rotation determinant {det}, want +1")));
        }
        if !self.translation.is_finite() {
            return Err(Error::InvalidArgument("non-finite pose translation".into()));
        }
        Ok(())
    }

    /// World-to-camera inverse: (Rᵀ, −Rᵀt).
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -rt.mul_vec(self.translation) }
    }

    /// `self` applied after `other` (both camera-to-world composition order).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul_mat(&other.rotation),
            translation: self.rotation.mul_vec(other.translation) + self.translation,
        }
    }

    /// Camera at `eye` with +z pointing at `target`; up = +y, falling back
    /// to +x when the view direction is colinear with +y.
    pub fn look_at(eye: Vec3, target: Vec3) -> Pose {
        let forward = (target - eye).normalized();
        let mut up = Vec3::new(0.0, 1.0, 0.0);
        if forward.cross(up).norm() < 1e-9 {
            up = Vec3::new(1.0, 0.0, 0.0);
        }
        let right = up.cross(forward).normalized();
        let down = forward.cross(right);
        // Columns map camera axes (+x right, +y down, +z forward) to world.
        Pose { rotation: Mat3::from_cols(right, down, forward), translation: eye }
    }

    /// 16 row-major values of the 4x4 matrix, last row [0,0,0,1].
    pub fn to_matrix4(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                out[i * 4 + j] = self.rotation.m[i][j];
            }
        }
        out[3] = self.translation.x;
        out[7] = self.translation.y;
        out[11] = self.translation.z;
        out[15] = 1.0;
        out
    }

    pub fn from_matrix4(vals: &[f64; 16]) -> Result<Pose> {
        for (i, want) in [(12, 0.0), (13, 0.0), (14, 0.0), (15, 1.0)] {
            if (vals[i] - want).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "pose matrix last row entry {i} = {}, want {want}",
                    vals[i]
                )));
            }
        }
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = vals[i * 4 + j];
            }
        }
        Pose::new(Mat3 { m }, Vec3::new(vals[3], vals[7], vals[11]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
}

impl CameraView {
    pub fn new(intrinsics: Intrinsics, pose: Pose, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be >= 1, got {width}x{height}"
            )));
        }
        Ok(CameraView { intrinsics, pose, width, height })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// World-space ray through the center of pixel (u, v).
    pub fn ray_for_pixel(&self, u: usize, v: usize) -> Ray {
        let k = &self.intrinsics;
        let dir_cam = Vec3::new(
            (u as f64 + 0.5 - k.cx) / k.fx,
            (v as f64 + 0.5 - k.cy) / k.fy,
            1.0,
        )
        .normalized();
        Ray { origin: self.pose.translation, direction: self.pose.rotation.mul_vec(dir_cam) }
    }
}

/// Rays for every pixel, row-major (v major, u minor).
pub fn rays_for_view(view: &CameraView) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(view.pixel_count());
    for v in 0..view.height {
        for u in 0..view.width {
            rays.push(view.ray_for_pixel(u, v));
        }
    }
    rays
}

/// `n` poses with centers area-uniform on the sphere of given radius about
/// the origin, each looking at the origin. Deterministic in `seed`.
pub fn sample_sphere_poses(n: usize, radius: f64, seed: u64) -> Result<Vec<Pose>> {
    if n == 0 {
        return Err(Error::InvalidArgument("pose count must be >= 1".into()));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidArgument(format!("sphere radius must be > 0, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut poses = Vec::with_capacity(n);
    for _ in 0..n {
        let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
        let cos_polar: f64 = rng.gen_range(-1.0..1.0);
        let sin_polar = (1.0 - cos_polar * cos_polar).sqrt();
        let center = Vec3::new(
            radius * sin_polar * azimuth.cos(),
            radius * cos_polar,
            radius * sin_polar * azimuth.sin(),
        );
        poses.push(Pose::look_at(center, Vec3::ZERO));
    }
    Ok(poses)
}

/// Pose on the sphere at interpolation parameter `t` in [0,1] of one orbit
/// at fixed elevation, looking at the origin. Used for turntable sweeps.
pub fn orbit_pose(radius: f64, elevation: f64, t: f64) -> Pose {
    let azimuth = t * std::f64::consts::TAU;
    let (se, ce) = elevation.sin_cos();
    let center =
        Vec3::new(radius * ce * azimuth.cos(), radius * se, radius * ce * azimuth.sin());
    Pose::look_at(center, Vec3::ZERO)
}
