//! Field-of-view safe set, belief propagation, the uncertainty-adaptive
//! barrier condition and the chance-constraint margins.
//!
//! All margins are signed so that a nonnegative value means "satisfied".

use nalgebra::{DMatrix, Matrix2, Matrix2x6, Matrix6, SymmetricEigen, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantile::gaussian_quantile;
use crate::vision::ImageFeature;

/// Circular visibility region in the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovDisc {
    pub center: ImageFeature,
    pub radius: f64,
}

impl FovDisc {
    pub fn new(center: ImageFeature, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(invalid("FoV radius must be positive"));
        }
        Ok(Self { center, radius })
    }

    pub fn distance(&self, s: &ImageFeature) -> f64 {
        (s.to_vector() - self.center.to_vector()).norm()
    }

    pub fn contains(&self, s: &ImageFeature) -> bool {
        h(s, self) >= 0.0
    }
}

/// Predicted feature mean and its 2x2 covariance (pixels^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeliefState {
    pub mean: ImageFeature,
    pub cov: Matrix2<f64>,
}

impl BeliefState {
    pub fn certain(mean: ImageFeature) -> Self {
        Self { mean, cov: Matrix2::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfParams {
    /// Contraction rate, `0 < alpha <= 1`.
    pub alpha: f64,
    /// Pixels of margin per standard deviation.
    pub beta: f64,
}

impl CbfParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid("CBF alpha must lie in (0, 1]"));
        }
        if !(self.beta >= 0.0) {
            return Err(invalid("CBF beta must be nonnegative"));
        }
        Ok(())
    }
}

/// State and input chance-constraint settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceParams {
    pub p_s: f64,
    pub p_u: f64,
    pub input_center: Vector6<f64>,
    pub input_radius: f64,
    pub input_cov: Matrix6<f64>,
}

impl ChanceParams {
    pub fn new(p_s: f64, p_u: f64, input_center: Vector6<f64>, input_radius: f64, input_cov: Matrix6<f64>) -> Result<Self> {
        let p = Self { p_s, p_u, input_center, input_radius, input_cov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_s", self.p_s), ("p_u", self.p_u)] {
            if !(0.5..1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0.5, 1)")));
            }
        }
        if !(self.input_radius > 0.0) {
            return Err(invalid("input radius must be positive"));
        }
        spectral_sigma(to_dynamic(&self.input_cov))?;
        Ok(())
    }

    pub fn kappa_s(&self) -> f64 {
        gaussian_quantile(self.p_s).unwrap_or(0.0)
    }

    pub fn kappa_u(&self) -> f64 {
        gaussian_quantile(self.p_u).unwrap_or(0.0)
    }

    /// `sqrt(lambda_max(Sigma_u))`.
    pub fn sigma_u(&self) -> f64 {
        spectral_sigma(to_dynamic(&self.input_cov)).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Process-noise variance (pixels^2).
    pub sigma_w2: f64,
    /// Disturbance distribution matrix.
    pub b_d: Matrix2<f64>,
}

impl NoiseParams {
    pub fn new(sigma_w2: f64, b_d: Matrix2<f64>) -> Result<Self> {
        if !(sigma_w2 >= 0.0) {
            return Err(invalid("process-noise variance must be nonnegative"));
        }
        if b_d.determinant().abs() < 1e-12 {
            return Err(invalid("disturbance matrix B_d must be full rank"));
        }
        Ok(Self { sigma_w2, b_d })
    }
}

/// Barrier `r^2 - |s - s_c|^2`.
pub fn h(s: &ImageFeature, fov: &FovDisc) -> f64 {
    fov.radius * fov.radius - (s.to_vector() - fov.center.to_vector()).norm_squared()
}

/// One-step mean prediction `s + dt J_s qdot + B_d mu`.
pub fn mean_predict(
    b: &BeliefState,
    qdot: &Vector6<f64>,
    js: &Matrix2x6<f64>,
    mu: &Vector2<f64>,
    noise: &NoiseParams,
    dt: f64,
) -> ImageFeature {
    ImageFeature::from(b.mean.to_vector() + dt * js * qdot + noise.b_d * mu)
}

/// `Sigma_{k+1} = Sigma_k + B_d (Sigma_d + sigma_w^2 I) B_d^T`.
pub fn cov_propagate(sigma_k: &Matrix2<f64>, sigma_d: &Matrix2<f64>, noise: &NoiseParams) -> Matrix2<f64> {
    let inner = sigma_d + Matrix2::identity() * noise.sigma_w2;
    let next = sigma_k + noise.b_d * inner * noise.b_d.transpose();
    (next + next.transpose()) * 0.5
}

fn spectral_sigma(cov: DMatrix<f64>) -> Result<f64> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance("non-finite entry".into()));
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -1e-9 {
        return Err(Error::InvalidCovariance(format!("negative eigenvalue {min}")));
    }
    Ok(eig.eigenvalues.max().max(0.0).sqrt())
}

fn to_dynamic<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_column_slice(N, N, m.as_slice())
}

/// Image-space standard deviation `sqrt(lambda_max(Sigma))`.
pub fn sigma_s(sigma: &Matrix2<f64>) -> Result<f64> {
    spectral_sigma(to_dynamic(sigma))
}

/// Shrunk-radius barrier `(r - beta*sig)^2 - |s - s_c|^2`, with the effective
/// radius clamped at zero once `beta*sig >= r`.
pub fn h_sigma(s_bar: &ImageFeature, sig: f64, fov: &FovDisc, p: &CbfParams) -> f64 {
    let r_eff = effective_radius(sig, fov, p);
    r_eff * r_eff - (s_bar.to_vector() - fov.center.to_vector()).norm_squared()
}

pub fn effective_radius(sig: f64, fov: &FovDisc, p: &CbfParams) -> f64 {
    (fov.radius - p.beta * sig).max(0.0)
}

/// Discrete barrier condition value `h_next - (1 - alpha) h_now`.
pub fn cbc(h_next: f64, h_now: f64, p: &CbfParams) -> f64 {
    h_next - (1.0 - p.alpha) * h_now
}

/// `r - |s - s_c| - Phi^{-1}(p_s) * sig`.
pub fn state_chance_margin(s_bar: &ImageFeature, sig: f64, fov: &FovDisc, cp: &ChanceParams) -> f64 {
    fov.radius - fov.distance(s_bar) - cp.kappa_s() * sig
}

/// `r_u - |u - u_c| - Phi^{-1}(p_u) * sqrt(lambda_max(Sigma_u))`.
pub fn input_chance_margin(u_bar: &Vector6<f64>, cp: &ChanceParams) -> f64 {
    cp.input_radius - (u_bar - cp.input_center).norm() - cp.kappa_u() * cp.sigma_u()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fov() -> FovDisc {
        FovDisc::new(ImageFeature::new(640.0, 480.0), 100.0).unwrap()
    }

    fn chance(p_s: f64, p_u: f64, cov: Matrix6<f64>) -> ChanceParams {
        ChanceParams::new(p_s, p_u, Vector6::zeros(), 1.0, cov).unwrap()
    }

    #[test]
    fn barrier_values() {
        let f = fov();
        assert_eq!(h(&f.center, &f), 1e4);
        assert_eq!(h(&ImageFeature::new(740.0, 480.0), &f), 0.0);
        assert_eq!(h(&ImageFeature::new(700.0, 560.0), &f), 0.0);
        assert!(FovDisc::new(f.center, 0.0).is_err());
    }

    #[test]
    fn mean_prediction_cases() {
        let noise = NoiseParams::new(0.0, Matrix2::identity()).unwrap();
        let b = BeliefState::certain(ImageFeature::new(10.0, 20.0));
        let js = Matrix2x6::from_fn(|i, j| (i + j) as f64);
        let s = mean_predict(&b, &Vector6::zeros(), &js, &Vector2::zeros(), &noise, 0.1);
        assert_eq!(s, b.mean);
        let s = mean_predict(&b, &Vector6::repeat(1.0), &Matrix2x6::zeros(), &Vector2::new(1.0, 2.0), &noise, 0.1);
        assert_eq!(s, ImageFeature::new(11.0, 22.0));
    }

    #[test]
    fn covariance_cases() {
        let noise0 = NoiseParams::new(0.0, Matrix2::identity()).unwrap();
        let s = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        assert_eq!(cov_propagate(&s, &Matrix2::zeros(), &noise0), s);
        let noise = NoiseParams::new(0.3, Matrix2::identity()).unwrap();
        let out = cov_propagate(&Matrix2::zeros(), &Matrix2::new(1.0, 0.0, 0.0, 2.0), &noise);
        assert!((out - Matrix2::new(1.3, 0.0, 0.0, 2.3)).abs().max() < 1e-15);
        assert!(NoiseParams::new(0.0, Matrix2::zeros()).is_err());
    }

    #[test]
    fn sigma_cases() {
        assert!((sigma_s(&Matrix2::new(4.0, 0.0, 0.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(sigma_s(&Matrix2::zeros()).unwrap(), 0.0);
        assert!(matches!(sigma_s(&Matrix2::new(-1.0, 0.0, 0.0, 1.0)), Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn adaptive_barrier_cases() {
        let f = fov();
        let s = ImageFeature::new(690.0, 430.0);
        assert_eq!(h_sigma(&s, 7.0, &f, &CbfParams::new(0.5, 0.0).unwrap()), h(&s, &f));
        assert_eq!(h_sigma(&f.center, 50.0, &f, &CbfParams::new(0.5, 2.0).unwrap()), 0.0);
        assert_eq!(h_sigma(&f.center, 80.0, &f, &CbfParams::new(0.5, 2.0).unwrap()), 0.0);
        let s = ImageFeature::new(640.0, 560.0);
        assert_eq!(h_sigma(&s, 10.0, &f, &CbfParams::new(0.5, 2.0).unwrap()), 0.0);
        assert!(CbfParams::new(0.0, 1.0).is_err());
        assert!(CbfParams::new(0.5, -1.0).is_err());
    }

    #[test]
    fn barrier_condition_cases() {
        let p1 = CbfParams::new(1.0, 0.0).unwrap();
        assert_eq!(cbc(4.0, 10.0, &p1), 4.0);
        let p = CbfParams::new(0.5, 0.0).unwrap();
        assert_eq!(cbc(10.0, 10.0, &p), 5.0);
        assert_eq!(cbc(4.0, 10.0, &p), -1.0);
    }

    #[test]
    fn chance_margins() {
        let f = fov();
        let s = ImageFeature::new(730.0, 480.0);
        let cp = chance(0.975, 0.975, Matrix6::identity() * 0.01);
        assert!((state_chance_margin(&s, 0.0, &f, &cp) - 10.0).abs() < 1e-12);
        assert!((state_chance_margin(&s, 5.0, &f, &chance(0.5, 0.5, Matrix6::zeros())) - 10.0).abs() < 1e-12);
        assert!((state_chance_margin(&s, 5.0, &f, &cp) - 0.200_180).abs() < 1e-5);
        let cp0 = chance(0.975, 0.975, Matrix6::zeros());
        assert!((input_chance_margin(&Vector6::zeros(), &cp0) - 1.0).abs() < 1e-15);
        let u = Vector6::new(0.3, 0.4, 0.0, 0.0, 0.0, 0.0);
        assert!((input_chance_margin(&u, &cp0) - 0.5).abs() < 1e-12);
        assert!((input_chance_margin(&u, &cp) - 0.304_004).abs() < 1e-5);
        assert!(ChanceParams::new(0.4, 0.9, Vector6::zeros(), 1.0, Matrix6::zeros()).is_err());
        assert!(ChanceParams::new(0.9, 0.9, Vector6::zeros(), 1.0, -Matrix6::identity()).is_err());
    }
}
