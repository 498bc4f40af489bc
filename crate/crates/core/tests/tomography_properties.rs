//! Reconstruction invariants and generate-then-reconstruct checks.

use nalgebra::Matrix4;
use proptest::prelude::*;
use qtb_core::tomography::{
    exact_records, fidelity, linear_inversion, mle_reconstruct, monte_carlo_uncertainty, phi_plus,
    predicted_probability, published_state, sample_records, Basis, DensityMatrix, MeasurementRecord, Setting,
};
use qtb_core::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `GG†/Tr` for a complex Gaussian `G`: full rank with probability one.
fn random_state(rng: &mut ChaCha8Rng) -> DensityMatrix {
    let g = Matrix4::<C64>::from_fn(|_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let m = g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::new(m / tr).unwrap()
}

fn assert_physical(rho: &DensityMatrix) {
    assert!(rho.hermiticity_error() <= 1e-9);
    assert!(rho.eigenvalues()[0] >= -1e-9);
    assert!((rho.trace() - 1.0).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn mle_output_is_always_physical(counts in prop::array::uniform16(0u64..5000), dwell in prop::array::uniform16(0.1..10.0f64)) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let records: Vec<_> = Setting::all()
            .iter()
            .zip(counts.iter().zip(dwell))
            .map(|(&setting, (&count, dwell_s))| MeasurementRecord { setting, count, dwell_s })
            .collect();
        let res = mle_reconstruct(&records).unwrap();
        assert_physical(&res.rho);
        prop_assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn computational_quartet_partitions_unity(seed in any::<u64>()) {
        let rho = random_state(&mut ChaCha8Rng::seed_from_u64(seed));
        let sum: f64 = [(Basis::Early, Basis::Early), (Basis::Early, Basis::Late), (Basis::Late, Basis::Early), (Basis::Late, Basis::Late)]
            .iter()
            .map(|&(s, i)| predicted_probability(&rho, Setting::new(s, i)).unwrap())
            .sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_is_linear(s1 in any::<u64>(), s2 in any::<u64>(), a in 0.0..1.0f64) {
        let r1 = random_state(&mut ChaCha8Rng::seed_from_u64(s1));
        let r2 = random_state(&mut ChaCha8Rng::seed_from_u64(s2));
        let mix = DensityMatrix::new(r1.matrix() * C64::new(a, 0.0) + r2.matrix() * C64::new(1.0 - a, 0.0)).unwrap();
        let target = phi_plus();
        let lhs = fidelity(&mix, &target).unwrap();
        let rhs = a * fidelity(&r1, &target).unwrap() + (1.0 - a) * fidelity(&r2, &target).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }
}

#[test]
fn random_states_round_trip_at_a_million_per_setting() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_state(&mut rng);
        let records = sample_records(&rho, 1e6, 1.0, &mut rng);
        let rec = mle_reconstruct(&records).unwrap();
        assert!(rec.converged);
        assert_physical(&rec.rho);
        let d = rec.rho.trace_distance(&rho);
        assert!(d <= 0.01, "seed {seed}: trace distance {d}");
    }
}

#[test]
fn published_state_round_trip() {
    let generator = published_state().renormalized().unwrap().psd_projected().unwrap();
    let records = sample_records(&generator, 1e6, 1.0, &mut ChaCha8Rng::seed_from_u64(42));
    let rec = mle_reconstruct(&records).unwrap();
    assert!(rec.rho.trace_distance(&generator) <= 0.01);
    let f = fidelity(&rec.rho, &phi_plus()).unwrap();
    assert!((f - 0.94).abs() <= 0.01, "{f}");
}

#[test]
fn noisy_linear_inversion_keeps_hermiticity_and_trace() {
    let bell = DensityMatrix::from_pure(&phi_plus()).unwrap();
    let mut flagged = 0;
    for seed in 0..20 {
        let records = sample_records(&bell, 1e4, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let lin = linear_inversion(&records).unwrap();
        assert!(lin.rho.hermiticity_error() < 1e-12);
        assert!((lin.rho.trace() - 1.0).abs() < 1e-9);
        assert_eq!(lin.physical, lin.rho.is_physical());
        if !lin.physical {
            flagged += 1;
            assert!(lin.min_eigenvalue < 0.0);
        }
    }
    // a pure state sits on the boundary, so shot noise pushes most estimates outside
    assert!(flagged > 0);
}

#[test]
fn monte_carlo_spread_vanishes_for_huge_counts() {
    let bell = DensityMatrix::from_pure(&phi_plus()).unwrap();
    let records = exact_records(&bell.psd_projected().unwrap(), 1e9, 1.0);
    let mc = monte_carlo_uncertainty(&records, &phi_plus(), 50, 3).unwrap();
    assert!(mc.std < 1e-4, "{}", mc.std);
}

#[test]
fn monte_carlo_spread_scales_as_inverse_root_counts() {
    let generator = published_state().renormalized().unwrap().psd_projected().unwrap();
    let levels = [1e4, 1e5, 1e6, 1e7, 1e8];
    let points: Vec<(f64, f64)> = levels
        .iter()
        .map(|&n| {
            let records = exact_records(&generator, n, 1.0);
            let mc = monte_carlo_uncertainty(&records, &phi_plus(), 200, 11).unwrap();
            (n.ln(), mc.std.ln())
        })
        .collect();
    let k = points.len() as f64;
    let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / k, points.iter().map(|p| p.1).sum::<f64>() / k);
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.1, "slope {slope}");
}

#[test]
fn monte_carlo_is_order_independent() {
    let generator = published_state().renormalized().unwrap().psd_projected().unwrap();
    let records = exact_records(&generator, 1e4, 1.0);
    let all = monte_carlo_uncertainty(&records, &phi_plus(), 20, 5).unwrap();
    let reversed: Vec<_> = (0..20u64)
        .rev()
        .map(|t| qtb_core::tomography::monte_carlo_trial(&records, &phi_plus(), 5, t).unwrap())
        .collect();
    let mut reordered = reversed;
    reordered.reverse();
    assert_eq!(all.values, reordered);
}
