//! Projects an instrument tip, builds the image Jacobian and compares its
//! first-order prediction with the pixel motion after a small joint step.
use fovpc::kinematics::Pose;
use fovpc::scenario::Scenario;
use fovpc::simulator::{nominal_image_jacobian, PlantState};
use nalgebra::Vector6;

fn main() -> fovpc::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/multi_target_sim.toml".into());
    let sc = Scenario::load(path.as_ref())?;
    let tips = sc.instruments.iter().map(|i| i.position(0.0)).collect::<Vec<_>>();
    let mut plant = PlantState::new(sc.robot.clone(), Pose::identity(), sc.camera, sc.initial_state(), tips.clone(), 0, 0.0, 0)?;

    let s = plant.true_feature()?;
    let depth = plant.depth()?;
    let js = nominal_image_jacobian(&sc.robot, &sc.camera, &plant.q, &s, depth)?;
    println!("pixel {:.2}, {:.2} at depth {:.3} m", s.u, s.v, depth.0);
    println!("image Jacobian{js:.1}");

    let qdot = Vector6::new(0.05, -0.03, 0.02, 0.04, -0.02, 0.01);
    let dt = 0.05;
    let predicted = s.to_vector() + js * qdot * dt;
    let out = fovpc::simulator::plant_step(&mut plant, &qdot, dt, &tips)?;
    println!("predicted {:.3?}", predicted.as_slice());
    println!("actual    {:.3?}", out.s_true.to_vector().as_slice());
    Ok(())
}
