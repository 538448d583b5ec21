//! Runs one closed-loop episode and writes its log.
use fovpc::controller::ControllerVariant;
use fovpc::runner::run_cell;
use fovpc::scenario::Scenario;

fn main() -> fovpc::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "scenarios/single_segment.toml".into());
    let variant: ControllerVariant = args.next().as_deref().unwrap_or("VisionSafeEnhanced").parse()?;
    let seed: u64 = args.next().map_or(0, |s| s.parse().unwrap_or(0));
    let sc = Scenario::load(path.as_ref())?;

    let (report, log, _) = run_cell(&sc, variant, seed, sc.gp.offline_samples)?;
    let out = format!("{}_{}_seed{seed}.csv", sc.name, variant.name());
    log.write_csv(std::fs::File::create(&out)?)?;
    print!("{}", report.to_text());
    let active = log.records.iter().filter(|r| r.slack > 0.0).count();
    println!("# {} steps, {active} with slack, log in {out}", log.len());
    Ok(())
}
