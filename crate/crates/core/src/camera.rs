//! Pinhole camera model and rigid poses.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Quaternion};

use crate::error::{Error, Result};
use crate::types::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Raw depth units per meter.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, depth_scale: f64) -> Result<Self> {
        let c = CameraIntrinsics { fx, fy, cx, cy, width, height, depth_scale };
        c.validate()?;
        Ok(c)
    }

    /// 640×480 Kinect-style defaults scaled to the requested width.
    pub fn scaled_default(width: usize, height: usize) -> Self {
        let s = width as f64 / 640.0;
        CameraIntrinsics {
            fx: 525.0 * s,
            fy: 525.0 * s,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            depth_scale: 5000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidIntrinsics(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be nonzero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("principal point outside the image");
        }
        if !(self.depth_scale > 0.0) {
            return bad("depth_scale must be positive");
        }
        Ok(())
    }

    /// Camera-frame direction with unit z for pixel (u, v).
    pub fn ray_dir(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    rot_matrix: Matrix3<f64>,
    pub translation: Vec3,
}

impl Pose {
    /// Quaternion given as (w, x, y, z); must be unit within 1e-6.
    pub fn new(q: [f64; 4], translation: Vec3) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidPose(format!("quaternion norm {norm} is not 1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self::from_unit(UnitQuaternion::new_normalize(quat), translation))
    }

    pub fn identity() -> Self {
        Self::from_unit(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::from_unit(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self::from_unit(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Camera at `eye` looking horizontally along `yaw` (radians about world +z),
    /// with camera y pointing down.
    pub fn looking_horizontal(eye: Vec3, yaw: f64) -> Self {
        let fwd = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
        let right = Vec3::new(yaw.sin(), -yaw.cos(), 0.0);
        let down = Vec3::new(0.0, 0.0, -1.0);
        Self::from_rotation_matrix(&Matrix3::from_columns(&[right, down, fwd]), eye)
    }

    fn from_unit(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Pose { rotation, rot_matrix: rotation.to_rotation_matrix().into_inner(), translation }
    }

    /// (w, x, y, z)
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        &self.rot_matrix
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rot_matrix * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rot_matrix * v
    }

    pub fn origin(&self) -> Vec3 {
        self.translation
    }
}

/// World point for pixel (u, v) at z-depth `d`.
pub fn unproject(intr: &CameraIntrinsics, pose: &Pose, u: f64, v: f64, d: f64) -> Result<Vec3> {
    if !(d > 0.0) {
        return Err(Error::InvalidDepth(d));
    }
    let p = Vec3::new((u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d);
    Ok(pose.transform(&p))
}
