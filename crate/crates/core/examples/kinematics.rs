//! Forward kinematics and the geometric Jacobian of the scenario arm, and how
//! far a perturbed copy of it drifts.
use fovpc::kinematics::{forward_kinematics, geometric_jacobian, perturb_dh};
use fovpc::scenario::Scenario;

fn main() -> fovpc::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/multi_target_sim.toml".into());
    let sc = Scenario::load(path.as_ref())?;
    let q0 = sc.initial_state();

    let pose = forward_kinematics(&sc.robot, &q0)?;
    println!("camera position  {:.4?}", pose.translation().as_slice());
    println!("optical axis     {:.4?}", pose.rotation().column(2).as_slice());

    let j = geometric_jacobian(&sc.robot, &q0)?;
    let mut sv: Vec<f64> = j.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sv: Vec<String> = sv.iter().map(|x| format!("{x:.3e}")).collect();
    println!("singular values  {}", sv.join(" "));

    for seed in 0..3 {
        let truth = perturb_dh(&sc.robot, sc.dh_perturb_fraction, seed)?;
        let p = forward_kinematics(&truth, &q0)?;
        println!("seed {seed}: tip offset {:.2} mm", (p.translation() - pose.translation()).norm() * 1e3);
    }
    Ok(())
}
