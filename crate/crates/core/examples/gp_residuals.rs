//! Collects residual data from an excitation run on the perturbed arm, fits
//! the GP and checks it on a second, held-out run. Set NOISELESS=1 to drop
//! the measurement noise and see the model error on its own.
use fovpc::gpr::fit;
use fovpc::scenario::Scenario;
use fovpc::simulator::{collect_excitation_data, EpisodeSetup};

fn main() -> fovpc::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "scenarios/multi_target_sim.toml".into());
    let mut sc = Scenario::load(path.as_ref())?;
    if std::env::var_os("NOISELESS").is_some() {
        sc.noise.sigma_process_m = 0.0;
    }
    let setup = EpisodeSetup::new(&sc, 0)?;
    let train = collect_excitation_data(&sc, &setup, sc.gp.offline_samples)?;
    let gp = fit(train.clone(), sc.gp_hyperparams()?)?;

    let mut other = setup.clone();
    other.excitation_seed ^= 0xABCD;
    let test = collect_excitation_data(&sc, &other, 100)?;
    let (mut prior, mut post, mut z2) = (0.0, 0.0, 0.0);
    for (z, y) in test.inputs.iter().zip(&test.targets) {
        let p = gp.predict(z);
        prior += y.norm_squared();
        post += (y - p.mean).norm_squared();
        z2 += (y - p.mean).norm_squared() / (2.0 * (p.variance() + gp.hyperparams().noise_variance));
    }
    let n = test.len() as f64;
    println!("{} training points", gp.len());
    println!("held-out RMS residual: {:.4} raw, {:.4} after GP mean", (prior / n).sqrt(), (post / n).sqrt());
    println!("mean standardized squared error {:.2}", z2 / n);

    if let Some(out) = std::env::args().nth(2) {
        train.write_csv(std::fs::File::create(&out)?)?;
        println!("dataset written to {out}");
    }
    Ok(())
}
