//! All variants over a range of seeds, as a median table. Nothing is written
//! to disk.
use fovpc::controller::ControllerVariant;
use fovpc::runner::{run_cell, summary_table};
use fovpc::scenario::Scenario;

fn main() -> fovpc::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "scenarios/multi_target_sim.toml".into());
    let seeds: u64 = args.next().map_or(10, |s| s.parse().unwrap_or(10));
    let sc = Scenario::load(path.as_ref())?;
    let start = std::time::Instant::now();
    let mut reports = Vec::new();
    for v in ControllerVariant::ALL {
        for seed in 0..seeds {
            reports.push(run_cell(&sc, v, seed, sc.gp.offline_samples)?.0);
        }
    }
    print!("{}", summary_table(&reports));
    println!("{} episodes in {:.2} s", reports.len(), start.elapsed().as_secs_f64());
    Ok(())
}
