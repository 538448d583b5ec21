mod common;

use common::{joints, robot};
use fovpc::kinematics::{forward_kinematics, geometric_jacobian, perturb_dh, JointState, RobotModel};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use proptest::prelude::*;

fn rot_z(t: f64) -> Matrix4<f64> {
    let (s, c) = t.sin_cos();
    let mut m = Matrix4::identity();
    m[(0, 0)] = c;
    m[(0, 1)] = -s;
    m[(1, 0)] = s;
    m[(1, 1)] = c;
    m
}

fn rot_x(t: f64) -> Matrix4<f64> {
    let (s, c) = t.sin_cos();
    let mut m = Matrix4::identity();
    m[(1, 1)] = c;
    m[(1, 2)] = -s;
    m[(2, 1)] = s;
    m[(2, 2)] = c;
    m
}

fn trans(x: f64, y: f64, z: f64) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m[(0, 3)] = x;
    m[(1, 3)] = y;
    m[(2, 3)] = z;
    m
}

/// Elementary-motion product, one link at a time.
fn fk_oracle(m: &RobotModel, q: &JointState) -> Matrix4<f64> {
    let mut t = Matrix4::identity();
    for (row, qi) in m.dh_rows.iter().zip(q.q.iter()) {
        t = t * rot_z(qi + row.theta0) * trans(0.0, 0.0, row.d) * trans(row.a, 0.0, 0.0) * rot_x(row.alpha);
    }
    t
}

fn vee(w: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) * 0.5
}

fn fd_jacobian(m: &RobotModel, q: &JointState, h: f64) -> nalgebra::Matrix6<f64> {
    let mut j = nalgebra::Matrix6::zeros();
    for i in 0..6 {
        let mut dq = Vector6::zeros();
        dq[i] = h;
        let plus = forward_kinematics(m, &JointState::new(q.q + dq)).unwrap();
        let minus = forward_kinematics(m, &JointState::new(q.q - dq)).unwrap();
        let v = (plus.translation() - minus.translation()) / (2.0 * h);
        let w = vee(&(plus.rotation() * minus.rotation().transpose())) / (2.0 * h);
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&w);
    }
    j
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fk_matches_elementary_product(m in robot(), q in joints()) {
        let pose = forward_kinematics(&m, &q).unwrap();
        prop_assert!((pose.0 - fk_oracle(&m, &q)).abs().max() < 1e-12);
    }

    #[test]
    fn fk_rotation_is_proper(m in robot(), q in joints()) {
        let pose = forward_kinematics(&m, &q).unwrap();
        let r = pose.rotation();
        prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        prop_assert_eq!(pose.0.row(3).clone_owned(), nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn perturbation_stays_within_fraction(m in robot(), seed in any::<u64>(), frac in 0.0..0.5f64) {
        let p = perturb_dh(&m, frac, seed).unwrap();
        prop_assert_eq!(&p, &perturb_dh(&m, frac, seed).unwrap());
        for (o, n) in m.dh_rows.iter().zip(p.dh_rows.iter()) {
            for (a, b) in [(o.a, n.a), (o.alpha, n.alpha), (o.d, n.d), (o.theta0, n.theta0)] {
                prop_assert!((b - a).abs() <= frac * a.abs() * (1.0 + 1e-12));
            }
        }
        prop_assert_eq!(p.joint_min, m.joint_min);
        prop_assert_eq!(p.joint_vel_min, m.joint_vel_min);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_finite_differences(m in robot(), q in joints()) {
        let j = geometric_jacobian(&m, &q).unwrap();
        let fd = fd_jacobian(&m, &q, 1e-6);
        let rel = (j - fd).norm() / j.norm();
        prop_assert!(rel < 1e-5, "relative error {rel}");
    }
}

#[test]
fn scenario_chain_has_rank_five() {
    let sc = common::load_scenario("multi_target_sim.toml");
    let j = geometric_jacobian(&sc.robot, &sc.initial_state()).unwrap();
    let sv = j.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    assert!(s[4] > 1e-3, "{s:?}");
    assert!(s[5] < 1e-9, "{s:?}");
}
