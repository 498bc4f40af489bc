//! Invariants of the analyzer, source and fitting models.

use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use qtb_core::analysis::{
    chsh_from_visibility, correlation_coefficient, fit_fringe, FringeSample, FringeScan, PortPair,
};
use qtb_core::pairsource::{brightness_figure_of_merit, car_from_counts, MaterialWaveguide};
use qtb_core::quantities::{Frequency, Wavelength};
use qtb_core::resonator::{fit_resonance, sample_trace, Resonance};
use qtb_core::simulator::{apply_umzi, joint_outcomes, outcome_index, TimeBinState, UmziConfig};
use qtb_core::C64;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn polar(r: f64, theta: f64) -> C64 {
    C64::new(r * theta.cos(), r * theta.sin())
}

/// `(U ⊗ I)|φ⁺⟩` for the single-qubit unitary with angles `(θ, φ, λ)`.
fn rotated_bell(theta: f64, phi: f64, lam: f64) -> [C64; 4] {
    let (ct, st) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let u = [
        [c(ct, 0.0), -polar(st, lam)],
        [polar(st, phi), polar(ct, phi + lam)],
    ];
    let r = std::f64::consts::FRAC_1_SQRT_2;
    // |φ⁺⟩ = r(|0⟩|0⟩ + |1⟩|1⟩); U acts on the signal index
    let mut out = [c(0.0, 0.0); 4];
    for s in 0..2 {
        for i in 0..2 {
            out[2 * s + i] = u[s][i] * r;
        }
    }
    out
}

proptest! {
    #[test]
    fn analyzer_conserves_probability(
        theta in 0.0..PI, rel in 0.0..TAU, norm in 0.0..1.0f64,
        phase in -20.0..20.0f64, t in 0.01..1.0f64, r in 0.01..0.99f64,
    ) {
        let input = [c(norm.sqrt() * (theta / 2.0).cos(), 0.0), polar(norm.sqrt() * (theta / 2.0).sin(), rel)];
        let cfg = UmziConfig { delay_s: 1.25e-9, phase: phase.rem_euclid(TAU), transmittance: t, splitting_ratio: r };
        let out = apply_umzi(input, &cfg).unwrap();
        let total: f64 = out.iter().flatten().map(|z| z.norm_sqr()).sum();
        prop_assert!((total - t * norm).abs() < 1e-12);
    }

    #[test]
    fn joint_table_sums_to_one(
        theta in 0.0..PI, phi in 0.0..TAU, lam in 0.0..TAU,
        alpha in 0.0..TAU, beta in 0.0..TAU, ta in 0.05..1.0f64, tb in 0.05..1.0f64,
    ) {
        let state = TimeBinState::Pure(rotated_bell(theta, phi, lam));
        let a = UmziConfig { transmittance: ta, ..UmziConfig::new(1.25e-9, alpha).unwrap() };
        let b = UmziConfig { transmittance: tb, ..UmziConfig::new(1.25e-9, beta).unwrap() };
        let t = joint_outcomes(&state, &a, &b).unwrap();
        let total: f64 = t.iter().flatten().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn post_selected_fraction_is_a_quarter_for_maximal_entanglement(
        theta in 0.0..PI, phi in 0.0..TAU, lam in 0.0..TAU, alpha in 0.0..TAU, beta in 0.0..TAU,
    ) {
        let state = TimeBinState::Pure(rotated_bell(theta, phi, lam));
        let t = joint_outcomes(&state, &UmziConfig::new(1.25e-9, alpha).unwrap(), &UmziConfig::new(1.25e-9, beta).unwrap()).unwrap();
        let mid: f64 = (0..2).flat_map(|p| (0..2).map(move |q| (p, q))).map(|(p, q)| t[outcome_index(p, 1)][outcome_index(q, 1)]).sum();
        prop_assert!((mid - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fringe_fit_is_exact_on_model_rates(
        amp in 10.0..1e4f64, v in 0.0..1.0f64, offset in 0.0..TAU, alpha in 0.0..TAU, n in 5usize..24,
    ) {
        // dwell 1e9 s keeps integer rounding of the counts below 1e-9 relative
        let samples = (0..n).map(|k| {
            let b = TAU * k as f64 / n as f64;
            let rate = amp * (1.0 + v * (b + alpha + offset).cos());
            FringeSample { phase: b, count: (rate * 1e9).round() as u64, dwell_s: 1e9 }
        }).collect();
        let r = fit_fringe(&FringeScan::new(PortPair::A1B1, samples, alpha).unwrap()).unwrap();
        prop_assert!((r.visibility - v).abs() < 1e-7);
        prop_assert!((r.amplitude - amp).abs() < 1e-7 * amp);
        if v > 1e-3 {
            let d = (r.phase_offset - offset).rem_euclid(TAU);
            prop_assert!(d.min(TAU - d) < 1e-6 / v);
        }
    }

    #[test]
    fn correlation_is_scale_invariant(n in prop::array::uniform4(0u64..1_000_000), k in 1u64..1000) {
        prop_assume!(n.iter().sum::<u64>() > 0);
        let e1 = correlation_coefficient(n[0], n[1], n[2], n[3]).unwrap();
        let e2 = correlation_coefficient(k * n[0], k * n[1], k * n[2], k * n[3]).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&e1));
    }

    #[test]
    fn car_is_scale_invariant(cc in 1u64..10_000_000, acc in 1u64..100_000, k in 1u64..100) {
        let (a, _) = car_from_counts(cc, acc);
        let (b, _) = car_from_counts(k * cc, k * acc);
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-12 * a.ratio);
    }

    #[test]
    fn chsh_monotone_and_inverse_in_sigma(v1 in 0.0..1.0f64, dv in 1e-6..0.05f64, s in 1e-4..0.1f64, k in 1.5..10.0f64) {
        let a = chsh_from_visibility(v1, s).unwrap();
        let b = chsh_from_visibility(v1 + dv, s).unwrap();
        prop_assert!(b.s > a.s && b.n_sigma > a.n_sigma);
        let c = chsh_from_visibility(v1, s / k).unwrap();
        prop_assert!((c.n_sigma - k * a.n_sigma).abs() <= 1e-9 * (1.0 + c.n_sigma.abs()));
    }

    #[test]
    fn resonance_fit_recovers_parameters(
        center_thz in 191.0..196.0f64, width_ghz in 0.3..5.0f64, t_min in 0.0..0.9f64,
        span in 4.0..20.0f64, n in 41usize..401,
    ) {
        let res = Resonance::new(Frequency::thz(center_thz), Frequency::ghz(width_ghz), t_min).unwrap();
        let trace = sample_trace(&res, Frequency::ghz(span * width_ghz), n);
        let fit = fit_resonance(&trace).unwrap();
        prop_assert!((fit.resonance.center.0 - res.center.0).abs() < 1e-6 * res.linewidth.0);
        prop_assert!((fit.resonance.linewidth.0 / res.linewidth.0 - 1.0).abs() < 1e-6);
        prop_assert!((fit.resonance.t_min - t_min).abs() < 1e-6);
    }
}

/// Local slope `d ln F / d ln x` by a symmetric step.
fn exponent(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-3;
    ((f(x * (1.0 + h))).ln() - (f(x * (1.0 - h))).ln()) / ((1.0 + h).ln() - (1.0 - h).ln())
}

#[test]
fn brightness_exponents() {
    let lambda = Wavelength::nm(1555.75);
    let (n2, a_eff, r, dnu) = (6.9e-19, 1.3e-12, 17e-6, Frequency::ghz(1.19));
    let fom = |n2: f64, a_eff: f64, r: f64, dnu: f64| {
        brightness_figure_of_merit(&MaterialWaveguide::new(n2, a_eff, lambda).unwrap(), r, Frequency(dnu)).unwrap()
    };
    let slopes = [
        exponent(|x| fom(x, a_eff, r, dnu.0), n2),
        exponent(|x| fom(n2, x, r, dnu.0), a_eff),
        exponent(|x| fom(n2, a_eff, x, dnu.0), r),
        exponent(|x| fom(n2, a_eff, r, x), dnu.0),
    ];
    for (got, want) in slopes.iter().zip([2.0, -2.0, -2.0, -3.0]) {
        assert!((got - want).abs() < 1e-9, "{slopes:?}");
    }
    // halving the linewidth alone buys exactly a factor eight
    let ratio = fom(n2, a_eff, r, dnu.0 / 2.0) / fom(n2, a_eff, r, dnu.0);
    assert!((ratio - 8.0).abs() < 1e-12);
}
