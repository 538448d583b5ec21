//! Pinhole projection, the point-feature interaction matrix and the image Jacobian.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kinematics::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        let intr = Self { fx, fy, u0, v0 };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.u0.is_finite() || !self.v0.is_finite() {
            return Err(invalid("camera focal lengths must be positive"));
        }
        Ok(())
    }
}

/// Pixel coordinates of a point feature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageFeature {
    pub u: f64,
    pub v: f64,
}

impl ImageFeature {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl From<Vector2<f64>> for ImageFeature {
    fn from(v: Vector2<f64>) -> Self {
        Self { u: v[0], v: v[1] }
    }
}

/// Depth of a feature along the optical axis (m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDepth(pub f64);

/// Standard pinhole projection of a camera-frame point.
pub fn project(intr: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Result<ImageFeature> {
    let z = p_cam.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera(z));
    }
    Ok(ImageFeature::new(intr.u0 + intr.fx * p_cam.x / z, intr.v0 + intr.fy * p_cam.y / z))
}

/// Derivative of the projected pixel with respect to the camera-frame point.
pub fn projection_jacobian(intr: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    let z = p_cam.z;
    if !(z > 0.0) {
        return Err(Error::BehindCamera(z));
    }
    let z2 = z * z;
    Ok(Matrix2x3::new(
        intr.fx / z,
        0.0,
        -intr.fx * p_cam.x / z2, //
        0.0,
        intr.fy / z,
        -intr.fy * p_cam.y / z2,
    ))
}

/// Interaction matrix of a pixel feature for a camera twist `[v; w]` given in
/// the camera frame. Columns follow the order `vx, vy, vz, wx, wy, wz`.
pub fn interaction_matrix(intr: &CameraIntrinsics, s: &ImageFeature, depth: FeatureDepth) -> Result<Matrix2x6<f64>> {
    let d = depth.0;
    if !(d > 0.0) {
        return Err(invalid(format!("feature depth must be positive, got {d}")));
    }
    let (fx, fy) = (intr.fx, intr.fy);
    let uh = s.u - intr.u0;
    let vh = s.v - intr.v0;
    Ok(Matrix2x6::new(
        -fx / d,
        0.0,
        uh / d,
        uh * vh / fy,
        -uh * uh / fx - fx,
        fx * vh / fy, //
        0.0,
        -fy / d,
        vh / d,
        vh * vh / fy + fy,
        -uh * vh / fx,
        -fy * uh / fx,
    ))
}

/// `J_s = L_s * tcp_to_cam * J_r`. With an identity adjoint this is the plain
/// composition `L_s * J_r`.
pub fn image_jacobian(ls: &Matrix2x6<f64>, jr: &Matrix6<f64>, tcp_to_cam: &Matrix6<f64>) -> Matrix2x6<f64> {
    ls * tcp_to_cam * jr
}

/// Re-expresses a base-frame twist in the camera frame of `cam_pose`.
pub fn base_to_camera_twist(cam_pose: &Pose) -> Matrix6<f64> {
    let rt: Matrix3<f64> = cam_pose.rotation().transpose();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
    m
}

/// Point expressed in the camera frame.
pub fn to_camera_frame(cam_pose: &Pose, p_base: &Vector3<f64>) -> Vector3<f64> {
    cam_pose.rotation().transpose() * (p_base - cam_pose.translation())
}
