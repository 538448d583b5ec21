//! One controller step per variant with the instrument near the edge of the
//! view and the target on the far side.
use fovpc::controller::{Controller, ControllerVariant, Observation};
use fovpc::safety;
use fovpc::scenario::Scenario;
use fovpc::vision::{FeatureDepth, ImageFeature};
use nalgebra::Matrix2x6;

fn main() -> fovpc::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/multi_target_sim.toml".into());
    let sc = Scenario::load(path.as_ref())?;
    let fov = sc.fov_disc()?;
    let js = Matrix2x6::new(
        -420.0, 35.0, 610.0, -12.0, 80.0, 5.0, //
        18.0, -380.0, -40.0, 560.0, -9.0, 70.0,
    );
    let obs = Observation {
        s_meas: ImageFeature::new(850.0, 520.0),
        q: sc.initial_state(),
        js,
        depth: FeatureDepth(0.12),
        target: ImageFeature::new(420.0, 470.0),
    };
    println!("h now = {:.0}", safety::h(&obs.s_meas, &fov));
    for v in ControllerVariant::ALL {
        let mut ctl = Controller::new(v, sc.vpc_config()?, sc.robot.clone(), fov, sc.noise_params()?, None, sc.gp.window)?;
        let (u, d) = ctl.step(&obs)?;
        println!(
            "{:20} |qdot| {:.3}  next pixel ({:.1}, {:.1})  h_next {:>8.0}  cbc {:>8.0}  {}",
            v.name(),
            u.norm(),
            d.s_bar.u,
            d.s_bar.v,
            safety::h(&d.s_bar, &fov),
            d.cbc,
            d.status.as_str()
        );
    }
    Ok(())
}
