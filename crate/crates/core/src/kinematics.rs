//! Forward kinematics and the geometric Jacobian of a six-joint serial arm.
//!
//! Link frames follow the standard (distal) Denavit-Hartenberg convention:
//! the transform from frame `i-1` to frame `i` is
//! `Rz(q_i + theta0_i) * Tz(d_i) * Tx(a_i) * Rx(alpha_i)`.
//! The last frame is the tool center point (TCP), which carries the camera.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of joints of the arm.
pub const DOF: usize = 6;

/// One row of a standard DH table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Link length (m).
    pub a: f64,
    /// Link twist (rad).
    pub alpha: f64,
    /// Link offset (m).
    pub d: f64,
    /// Joint angle offset (rad).
    pub theta0: f64,
}

impl DhRow {
    pub const fn new(a: f64, alpha: f64, d: f64, theta0: f64) -> Self {
        Self { a, alpha, d, theta0 }
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite() && self.alpha.is_finite() && self.d.is_finite() && self.theta0.is_finite()
    }

    /// Homogeneous transform of this link for joint angle `q`.
    pub fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta0).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            self.a * ct, //
            st,
            ct * ca,
            -ct * sa,
            self.a * st, //
            0.0,
            sa,
            ca,
            self.d, //
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// DH table plus joint position and velocity limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub dh_rows: [DhRow; DOF],
    pub joint_min: [f64; DOF],
    pub joint_max: [f64; DOF],
    pub joint_vel_min: [f64; DOF],
    pub joint_vel_max: [f64; DOF],
}

impl RobotModel {
    /// Builds a model, checking the limit ordering and finiteness.
    pub fn new(
        dh_rows: Vec<DhRow>,
        joint_min: [f64; DOF],
        joint_max: [f64; DOF],
        joint_vel_min: [f64; DOF],
        joint_vel_max: [f64; DOF],
    ) -> Result<Self> {
        let rows: [DhRow; DOF] =
            dh_rows.try_into().map_err(|v: Vec<DhRow>| invalid(format!("expected {DOF} DH rows, got {}", v.len())))?;
        let model = Self { dh_rows: rows, joint_min, joint_max, joint_vel_min, joint_vel_max };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dh_rows.iter().all(DhRow::is_finite) {
            return Err(invalid("non-finite DH parameter"));
        }
        for i in 0..DOF {
            if !(self.joint_min[i] < self.joint_max[i]) {
                return Err(invalid(format!("joint {i}: joint_min must be < joint_max")));
            }
            if !(self.joint_vel_min[i] < self.joint_vel_max[i]) {
                return Err(invalid(format!("joint {i}: joint_vel_min must be < joint_vel_max")));
            }
        }
        Ok(())
    }

    pub fn q_min(&self) -> Vector6<f64> {
        Vector6::from(self.joint_min)
    }

    pub fn q_max(&self) -> Vector6<f64> {
        Vector6::from(self.joint_max)
    }

    pub fn qdot_min(&self) -> Vector6<f64> {
        Vector6::from(self.joint_vel_min)
    }

    pub fn qdot_max(&self) -> Vector6<f64> {
        Vector6::from(self.joint_vel_max)
    }

    /// Clamps `q` into the joint limits, returning whether any joint was clamped.
    pub fn clamp_to_limits(&self, q: &mut Vector6<f64>) -> bool {
        let mut clamped = false;
        for i in 0..DOF {
            let c = q[i].clamp(self.joint_min[i], self.joint_max[i]);
            clamped |= c != q[i];
            q[i] = c;
        }
        clamped
    }
}

/// Joint angles (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vector6<f64>,
}

impl JointState {
    pub fn new(q: Vector6<f64>) -> Self {
        Self { q }
    }

    pub fn zeros() -> Self {
        Self { q: Vector6::zeros() }
    }

    fn check_finite(&self) -> Result<()> {
        if self.q.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(invalid("non-finite joint state"))
        }
    }
}

impl From<[f64; DOF]> for JointState {
    fn from(q: [f64; DOF]) -> Self {
        Self { q: Vector6::from(q) }
    }
}

/// Rigid transform stored as a 4x4 homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(pub Matrix4<f64>);

impl Pose {
    pub fn identity() -> Self {
        Pose(Matrix4::identity())
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Pose(m)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose(self.0 * other.0)
    }

    /// Inverse using the rigid-body structure (no general 4x4 inversion).
    pub fn inverse(&self) -> Pose {
        let rt = self.rotation().transpose();
        Pose::from_parts(rt, -(rt * self.translation()))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }
}

/// TCP pose in the base frame.
pub fn forward_kinematics(model: &RobotModel, q: &JointState) -> Result<Pose> {
    q.check_finite()?;
    let t = model.dh_rows.iter().zip(q.q.iter()).fold(Matrix4::identity(), |acc, (row, &qi)| acc * row.transform(qi));
    Ok(Pose(t))
}

/// Geometric Jacobian mapping joint rates to the TCP twist `[v; w]`, both
/// expressed in the base frame (`v` is the velocity of the TCP origin).
pub fn geometric_jacobian(model: &RobotModel, q: &JointState) -> Result<Matrix6<f64>> {
    q.check_finite()?;
    let mut frames = [Matrix4::identity(); DOF + 1];
    for (i, row) in model.dh_rows.iter().enumerate() {
        frames[i + 1] = frames[i] * row.transform(q.q[i]);
    }
    let o_n: Vector3<f64> = frames[DOF].fixed_view::<3, 1>(0, 3).into_owned();
    let mut jac = Matrix6::zeros();
    for i in 0..DOF {
        let z: Vector3<f64> = frames[i].fixed_view::<3, 1>(0, 2).into_owned();
        let o: Vector3<f64> = frames[i].fixed_view::<3, 1>(0, 3).into_owned();
        let lin = z.cross(&(o_n - o));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
    }
    Ok(jac)
}

/// Scales each nonzero DH field by `1 + u`, `u ~ U[-fraction, fraction]`.
/// Zero fields stay zero; limits are untouched.
pub fn perturb_dh(model: &RobotModel, fraction: f64, seed: u64) -> Result<RobotModel> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(invalid(format!("perturbation fraction {fraction} outside [0, 1)")));
    }
    let mut out = model.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scale = |v: &mut f64| {
        if *v != 0.0 {
            *v *= 1.0 + rng.random_range(-fraction..=fraction);
        }
    };
    for row in out.dh_rows.iter_mut() {
        scale(&mut row.a);
        scale(&mut row.alpha);
        scale(&mut row.d);
        scale(&mut row.theta0);
    }
    Ok(out)
}
