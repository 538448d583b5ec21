//! Barrier value, uncertainty-tightened barrier and chance margins for a
//! feature drifting toward the edge of the view.
use fovpc::quantile::gaussian_quantile;
use fovpc::safety::{cov_propagate, h, h_sigma, sigma_s, state_chance_margin, CbfParams, ChanceParams, FovDisc, NoiseParams};
use fovpc::vision::ImageFeature;
use nalgebra::{Matrix2, Matrix6, Vector6};

fn main() -> fovpc::Result<()> {
    let fov = FovDisc::new(ImageFeature::new(640.0, 480.0), 240.0)?;
    let cbf = CbfParams::new(0.5, 3.0)?;
    let chance = ChanceParams::new(0.95, 0.95, Vector6::zeros(), 1.0, Matrix6::identity() * 1e-4)?;
    let noise = NoiseParams::new(28.0, Matrix2::identity())?;
    println!("kappa_s = {:.4} (quantile of 0.95 = {:.6})", chance.kappa_s(), gaussian_quantile(0.95)?);

    let mut cov = Matrix2::zeros();
    println!("{:>6} {:>8} {:>10} {:>10} {:>8}", "u", "sigma", "h", "h_sigma", "margin");
    for k in 0..8 {
        let s = ImageFeature::new(640.0 + 150.0 + 12.0 * k as f64, 480.0);
        let sig = sigma_s(&cov)?;
        println!(
            "{:6.1} {:8.3} {:10.1} {:10.1} {:8.2}",
            s.u,
            sig,
            h(&s, &fov),
            h_sigma(&s, sig, &fov, &cbf),
            state_chance_margin(&s, sig, &fov, &chance)
        );
        cov = cov_propagate(&cov, &(Matrix2::identity() * 0.5), &noise);
    }
    Ok(())
}
