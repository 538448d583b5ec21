#![allow(dead_code)]

use std::path::PathBuf;

use fovpc::kinematics::{DhRow, JointState, RobotModel};
use fovpc::scenario::Scenario;
use nalgebra::Vector6;
use proptest::prelude::*;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

pub fn load_scenario(name: &str) -> Scenario {
    Scenario::load(&scenario_path(name)).unwrap()
}

pub fn dh_row() -> impl Strategy<Value = DhRow> {
    (-0.5..0.5f64, -3.1..3.1f64, -0.5..0.5f64, -3.1..3.1f64).prop_map(|(a, alpha, d, t)| DhRow::new(a, alpha, d, t))
}

pub fn robot() -> impl Strategy<Value = RobotModel> {
    proptest::collection::vec(dh_row(), 6)
        .prop_map(|rows| RobotModel::new(rows, [-7.0; 6], [7.0; 6], [-1.0; 6], [1.0; 6]).unwrap())
}

pub fn joints() -> impl Strategy<Value = JointState> {
    proptest::array::uniform6(-3.1..3.1f64).prop_map(|q| JointState::new(Vector6::from(q)))
}

pub fn vec6(lim: f64) -> impl Strategy<Value = Vector6<f64>> {
    proptest::array::uniform6(-lim..lim).prop_map(Vector6::from)
}
