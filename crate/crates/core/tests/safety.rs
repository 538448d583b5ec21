use fovpc::quantile::gaussian_quantile;
use fovpc::safety::{
    cbc, cov_propagate, h, h_sigma, input_chance_margin, mean_predict, sigma_s, state_chance_margin, BeliefState, CbfParams,
    ChanceParams, FovDisc, NoiseParams,
};
use fovpc::vision::ImageFeature;
use nalgebra::{Matrix2, Matrix2x6, Matrix6, SymmetricEigen, Vector2, Vector6};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

fn fov() -> FovDisc {
    FovDisc::new(ImageFeature::new(640.0, 480.0), 240.0).unwrap()
}

fn psd() -> impl Strategy<Value = Matrix2<f64>> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b, c, d)| {
        let m = Matrix2::new(a, b, c, d);
        m * m.transpose()
    })
}

fn full_rank() -> impl Strategy<Value = Matrix2<f64>> {
    (0.5..2.0f64, -0.3..0.3f64, -0.3..0.3f64, 0.5..2.0f64).prop_map(|(a, b, c, d)| Matrix2::new(a, b, c, d))
}

fn feature() -> impl Strategy<Value = ImageFeature> {
    (300.0..980.0f64, 150.0..810.0f64).prop_map(|(u, v)| ImageFeature::new(u, v))
}

fn chance(p_s: f64, p_u: f64, cov: Matrix6<f64>) -> ChanceParams {
    ChanceParams::new(p_s, p_u, Vector6::zeros(), 1.0, cov).unwrap()
}

/// `Phi(x)` from the complementary error function.
fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn bisection_quantile(p: f64) -> f64 {
    // Upper tail by symmetry: 1 - p is exact there, the CDF near 1 is not.
    if p > 0.5 {
        return -bisection_quantile(1.0 - p);
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn mean_prediction_elementwise(
        s in feature(),
        qd in proptest::array::uniform6(-1.0..1.0f64),
        js in proptest::collection::vec(-500.0..500.0f64, 12),
        mu in proptest::array::uniform2(-5.0..5.0f64),
        bd in full_rank(),
        dt in 0.01..0.5f64,
    ) {
        let js = Matrix2x6::from_row_slice(&js);
        let noise = NoiseParams::new(1.0, bd).unwrap();
        let got = mean_predict(&BeliefState::certain(s), &Vector6::from(qd), &js, &Vector2::from(mu), &noise, dt);
        let mut want = [s.u, s.v];
        for r in 0..2 {
            for c in 0..6 {
                want[r] += dt * js[(r, c)] * qd[c];
            }
            for c in 0..2 {
                want[r] += bd[(r, c)] * mu[c];
            }
        }
        prop_assert!((got.u - want[0]).abs() < 1e-12 * (1.0 + want[0].abs()));
        prop_assert!((got.v - want[1]).abs() < 1e-12 * (1.0 + want[1].abs()));
    }

    #[test]
    fn covariance_grows_and_stays_psd(sk in psd(), sd in psd(), w2 in 0.0..50.0f64, bd in full_rank()) {
        let noise = NoiseParams::new(w2, bd).unwrap();
        let next = cov_propagate(&sk, &sd, &noise);
        let eig = SymmetricEigen::new(next).eigenvalues;
        prop_assert!(eig.min() >= -1e-12 * (1.0 + eig.max().abs()));
        let diff = SymmetricEigen::new(next - sk).eigenvalues;
        prop_assert!(diff.min() >= -1e-9 * (1.0 + next.norm()));
        prop_assert!((next - next.transpose()).norm() == 0.0);
    }

    #[test]
    fn sigma_s_matches_characteristic_polynomial(m in psd()) {
        let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
        let tr = a + d;
        let det = a * d - b * b;
        let lmax = 0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt());
        let s = sigma_s(&m).unwrap();
        prop_assert!((s - lmax.sqrt()).abs() < 1e-9 * (1.0 + s));
    }

    #[test]
    fn uncertainty_never_loosens_barrier(s in feature(), sig in 0.0..200.0f64, beta in 0.0..5.0f64, alpha in 0.01..1.0f64) {
        let p = CbfParams::new(alpha, beta).unwrap();
        prop_assert!(h_sigma(&s, sig, &fov(), &p) <= h(&s, &fov()));
    }

    #[test]
    fn chance_margin_is_monotone(s in feature(), sig in 0.0..20.0f64, dsig in 0.0..20.0f64, p1 in 0.5..0.999f64, dp in 0.0..0.0009f64) {
        let f = fov();
        let c1 = chance(p1, 0.9, Matrix6::zeros());
        let c2 = chance(p1 + dp, 0.9, Matrix6::zeros());
        prop_assert!(state_chance_margin(&s, sig + dsig, &f, &c1) <= state_chance_margin(&s, sig, &f, &c1));
        prop_assert!(state_chance_margin(&s, sig, &f, &c2) <= state_chance_margin(&s, sig, &f, &c1) + 1e-12);
    }

    #[test]
    fn quantile_matches_bisection(p in 1e-12..(1.0 - 1e-12)) {
        let q = gaussian_quantile(p).unwrap();
        prop_assert!((q - bisection_quantile(p)).abs() < 1e-9);
    }
}

#[test]
fn quantile_reference_points() {
    assert_eq!(gaussian_quantile(0.5).unwrap(), 0.0);
    assert!((gaussian_quantile(0.975).unwrap() - bisection_quantile(0.975)).abs() < 1e-9);
    assert!((gaussian_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
    assert!((gaussian_quantile(0.841345).unwrap() - 1.0).abs() < 1e-5);
    assert!(gaussian_quantile(1.0).is_err());
}

#[test]
fn margin_examples() {
    let f = FovDisc::new(ImageFeature::new(0.0, 0.0), 100.0).unwrap();
    let c = chance(0.975, 0.975, Matrix6::identity() * 0.01);
    let m = state_chance_margin(&ImageFeature::new(90.0, 0.0), 5.0, &f, &c);
    assert!((m - (10.0 - bisection_quantile(0.975) * 5.0)).abs() < 1e-9);
    assert!((m - 0.200).abs() < 1e-3);
    let u = Vector6::new(0.3, 0.4, 0.0, 0.0, 0.0, 0.0);
    let mu = input_chance_margin(&u, &c);
    assert!((mu - (0.5 - bisection_quantile(0.975) * 0.1)).abs() < 1e-9);
    assert!((mu - 0.304).abs() < 1e-3);
    let half = chance(0.5, 0.5, Matrix6::identity());
    assert_eq!(state_chance_margin(&ImageFeature::new(30.0, 40.0), 9.0, &f, &half), 50.0);
    assert_eq!(input_chance_margin(&Vector6::zeros(), &chance(0.9, 0.9, Matrix6::zeros())), 1.0);
    let p = CbfParams::new(0.5, 2.0).unwrap();
    assert_eq!(h_sigma(&ImageFeature::new(0.0, 80.0), 10.0, &f, &p), 0.0);
    assert_eq!(h_sigma(&ImageFeature::new(0.0, 0.0), 50.0, &f, &p), 0.0);
    assert_eq!(cbc(4.0, 10.0, &p), -1.0);
    assert_eq!(cbc(7.0, 3.0, &CbfParams::new(1.0, 0.0).unwrap()), 7.0);
}

/// Random input sequences, each step shrunk until the barrier condition
/// holds, never leave the safe set.
#[test]
fn barrier_condition_is_forward_invariant() {
    let f = fov();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = NoiseParams::new(0.0, Matrix2::identity()).unwrap();
    for _ in 0..1000 {
        let p = CbfParams::new(rng.random_range(0.05..1.0), rng.random_range(0.0..3.0)).unwrap();
        let js = Matrix2x6::from_fn(|_, _| rng.random_range(-600.0..600.0));
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rad = f.radius * rng.random::<f64>().sqrt();
        let mut b = BeliefState::certain(ImageFeature::new(640.0 + rad * ang.cos(), 480.0 + rad * ang.sin()));
        let mut sig = 0.0;
        for _ in 0..50 {
            let dsig = rng.random_range(0.0..0.5);
            let u = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let mu = Vector2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let now = h_sigma(&b.mean, sig, &f, &p);
            let mut scale = 1.0;
            let next = loop {
                let s = mean_predict(&b, &(u * scale), &js, &(mu * scale), &noise, 0.1);
                if cbc(h_sigma(&s, sig + dsig * scale, &f, &p), now, &p) >= 0.0 || scale == 0.0 {
                    break (s, sig + dsig * scale);
                }
                scale = if scale < 1e-6 { 0.0 } else { scale * 0.5 };
            };
            b = BeliefState::certain(next.0);
            sig = next.1;
            assert!(h(&b.mean, &f) >= -1e-9);
        }
    }
}

/// Worst-case placement (margin exactly zero) under isotropic noise.
#[test]
fn chance_tightening_is_calibrated() {
    let f = fov();
    let n = 100_000;
    let sig = 1.2;
    for (i, p_s) in [0.9, 0.95, 0.975].into_iter().enumerate() {
        let cp = chance(p_s, 0.9, Matrix6::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let dist = f.radius - cp.kappa_s() * sig;
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s_bar = ImageFeature::new(640.0 + dist * ang.cos(), 480.0 + dist * ang.sin());
        assert!(state_chance_margin(&s_bar, sig, &f, &cp).abs() < 1e-9);
        let outside = (0..n)
            .filter(|_| {
                let e: Vector2<f64> = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * sig;
                !f.contains(&ImageFeature::from(s_bar.to_vector() + e))
            })
            .count();
        let freq = outside as f64 / n as f64;
        let bound = (1.0 - p_s) + 2.0 * (p_s * (1.0 - p_s) / n as f64).sqrt();
        assert!(freq <= bound, "p_s={p_s}: {freq} > {bound}");
    }
}
