//! Rate-level model of the SFWM photon-pair source.
//!
//! Pump powers in the singles model are in milliwatts because the fitted
//! coefficients are quoted per mW and per mW².

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::coincidence::Histogram;
use crate::fit::{levenberg_marquardt, linear_least_squares, LmOptions};
use crate::quantities::{Frequency, Power, Wavelength};
use crate::{Error, Result};

/// Nonlinear material and mode-confinement constants of the ring waveguide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialWaveguide {
    /// Nonlinear refractive index, m²/W.
    pub n2: f64,
    /// Effective mode area, m².
    pub a_eff: f64,
    pub pump_wavelength: Wavelength,
}

impl MaterialWaveguide {
    pub fn new(n2: f64, a_eff: f64, pump_wavelength: Wavelength) -> Result<Self> {
        if !(n2 > 0.0 && a_eff > 0.0 && pump_wavelength.0 > 0.0) {
            return Err(Error::domain("n2, effective area and wavelength must be positive"));
        }
        Ok(MaterialWaveguide { n2, a_eff, pump_wavelength })
    }
}

/// Nonlinear coefficient `γ = 2π n₂ / (λ_p A_eff)` in W⁻¹m⁻¹.
pub fn nonlinear_coefficient(mw: &MaterialWaveguide) -> f64 {
    2.0 * PI * mw.n2 / (mw.pump_wavelength.0 * mw.a_eff)
}

/// Relative pair-brightness figure `n₂² / (A_eff² R² Δν³)`.
///
/// Only ratios between designs are meaningful; there is no absolute
/// calibration behind it.
pub fn brightness_figure_of_merit(mw: &MaterialWaveguide, radius: f64, linewidth: Frequency) -> Result<f64> {
    if !(radius > 0.0 && linewidth.0 > 0.0) {
        return Err(Error::domain("radius and linewidth must be positive"));
    }
    let r2 = radius * radius;
    Ok(mw.n2 * mw.n2 / (mw.a_eff * mw.a_eff * r2 * linewidth.0 * linewidth.0 * linewidth.0))
}

/// Single-side count rate `R(P) = aP² + bP + c`, P in mW.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SinglesModel {
    /// SFWM coefficient, s⁻¹mW⁻².
    pub a: f64,
    /// Linear noise coefficient, s⁻¹mW⁻¹.
    pub b: f64,
    /// Dark counts, s⁻¹.
    pub c: f64,
}

impl SinglesModel {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0) || b < 0.0 || c < 0.0 {
            return Err(Error::domain("singles model needs a > 0, b ≥ 0, c ≥ 0"));
        }
        Ok(SinglesModel { a, b, c })
    }

    /// Rate of pair-generated singles, `aP²`.
    pub fn sfwm_rate(&self, p: Power) -> f64 {
        let mw = p.as_mw();
        self.a * mw * mw
    }
}

/// `aP² + bP + c` with `P` converted to mW.
pub fn eval_singles(m: &SinglesModel, p: Power) -> Result<f64> {
    if p.0 < 0.0 {
        return Err(Error::domain("pump power must be non-negative"));
    }
    let mw = p.as_mw();
    Ok(m.a * mw * mw + m.b * mw + m.c)
}

/// Result of [`fit_singles`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglesFit {
    pub model: SinglesModel,
    /// Standard errors of `(a, b, c)`.
    pub errors: [f64; 3],
    /// The fitted dark rate came out negative; it is reported unclamped.
    pub negative_dark: bool,
}

fn singles_fit(points: &[(f64, f64)], sigma: Option<&[f64]>) -> Result<SinglesFit> {
    if points.iter().any(|&(p, r)| p < 0.0 || r < 0.0) {
        return Err(Error::domain("powers and rates must be non-negative"));
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::degenerate("singles fit needs at least three distinct pump powers"));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|&(p, _)| alloc::vec![p * p, p, 1.0]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = linear_least_squares(&rows, &y, sigma)?;
    let model = SinglesModel { a: fit.params[0], b: fit.params[1], c: fit.params[2] };
    Ok(SinglesFit {
        model,
        errors: [fit.std_errors[0], fit.std_errors[1], fit.std_errors[2]],
        negative_dark: model.c < 0.0,
    })
}

/// Unweighted least squares of `(power, rate)` points on `{P², P, 1}`.
pub fn fit_singles(data: &[(Power, f64)]) -> Result<SinglesFit> {
    let pts: Vec<(f64, f64)> = data.iter().map(|&(p, r)| (p.as_mw(), r)).collect();
    singles_fit(&pts, None)
}

/// One point of a pump-power sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub power: Power,
    pub counts: u64,
    pub dwell_s: f64,
}

/// Poisson-weighted singles fit of a counting sweep (rate = counts/dwell).
pub fn fit_singles_counts(sweep: &[SweepPoint]) -> Result<SinglesFit> {
    if sweep.iter().any(|s| !(s.dwell_s > 0.0)) {
        return Err(Error::domain("dwell times must be positive"));
    }
    let pts: Vec<(f64, f64)> = sweep.iter().map(|s| (s.power.as_mw(), s.counts as f64 / s.dwell_s)).collect();
    let sigma: Vec<f64> = sweep.iter().map(|s| libm::sqrt((s.counts as f64).max(1.0)) / s.dwell_s).collect();
    singles_fit(&pts, Some(&sigma))
}

/// Coincidence and accidental rates within a coincidence window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStatistics {
    /// N_cc, s⁻¹.
    pub coincidence_rate: f64,
    /// N_acc, s⁻¹.
    pub accidental_rate: f64,
    /// Seconds.
    pub window: f64,
}

impl PairStatistics {
    pub fn new(coincidence_rate: f64, accidental_rate: f64, window: f64) -> Result<Self> {
        if coincidence_rate < 0.0 || accidental_rate < 0.0 || !(window > 0.0) {
            return Err(Error::domain("rates must be non-negative and the window positive"));
        }
        Ok(PairStatistics { coincidence_rate, accidental_rate, window })
    }
}

/// Coincidence-to-accidental ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Car {
    /// `N_cc / N_acc`, or `+∞` when no accidentals were recorded.
    pub ratio: f64,
    /// Set when `N_acc = 0`; the ratio is then only a lower-bound sentinel.
    pub zero_accidentals: bool,
}

/// `CAR = N_cc / N_acc`.
pub fn car(stats: &PairStatistics) -> Car {
    if stats.accidental_rate == 0.0 {
        Car { ratio: f64::INFINITY, zero_accidentals: true }
    } else {
        Car { ratio: stats.coincidence_rate / stats.accidental_rate, zero_accidentals: false }
    }
}

/// CAR with its Poisson error from raw counts over equal acquisition times.
pub fn car_from_counts(coincidences: u64, accidentals: u64) -> (Car, f64) {
    if accidentals == 0 {
        return (Car { ratio: f64::INFINITY, zero_accidentals: true }, f64::INFINITY);
    }
    let ratio = coincidences as f64 / accidentals as f64;
    let rel = libm::sqrt(1.0 / (coincidences.max(1) as f64) + 1.0 / accidentals as f64);
    (Car { ratio, zero_accidentals: false }, ratio * rel)
}

/// Inferred on-chip pair generation rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgrEstimate {
    /// Pairs per second at the given pump power.
    pub pgr: f64,
    /// `pgr / P²`, s⁻¹mW⁻².
    pub per_mw2: f64,
    /// `pgr / (P² Δν)`, s⁻¹GHz⁻¹mW⁻², when a bandwidth was supplied.
    pub brightness: Option<f64>,
}

/// `N_c = (a_s P² · a_i P²) / (N_cc − N_acc)`.
pub fn infer_pgr(
    signal: &SinglesModel,
    idler: &SinglesModel,
    p: Power,
    stats: &PairStatistics,
    bandwidth: Option<Frequency>,
) -> Result<PgrEstimate> {
    if !(p.0 > 0.0) {
        return Err(Error::domain("pump power must be positive"));
    }
    let net = stats.coincidence_rate - stats.accidental_rate;
    if !(net > 0.0) {
        return Err(Error::NoSignal("coincidences do not exceed accidentals".into()));
    }
    let pgr = signal.sfwm_rate(p) * idler.sfwm_rate(p) / net;
    let mw = p.as_mw();
    let per_mw2 = pgr / (mw * mw);
    let brightness = bandwidth.filter(|b| b.0 > 0.0).map(|b| per_mw2 / b.as_ghz());
    Ok(PgrEstimate { pgr, per_mw2, brightness })
}

/// Lorentzian FWHM `Δν = 1/(2πτ)` for a coherence time `τ` in seconds.
pub fn bandwidth_from_coherence(tau: f64) -> Result<Frequency> {
    if !(tau > 0.0) {
        return Err(Error::domain("coherence time must be positive"));
    }
    Ok(Frequency(1.0 / (2.0 * PI * tau)))
}

/// Inverse of [`bandwidth_from_coherence`].
pub fn coherence_from_bandwidth(bw: Frequency) -> Result<f64> {
    if !(bw.0 > 0.0) {
        return Err(Error::domain("bandwidth must be positive"));
    }
    Ok(1.0 / (2.0 * PI * bw.0))
}

/// Result of [`fit_double_exponential`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleExpFit {
    /// Seconds.
    pub tau: f64,
    pub tau_err: f64,
    /// Peak height above baseline, counts per bin.
    pub amplitude: f64,
    pub amplitude_err: f64,
    /// Counts per bin.
    pub baseline: f64,
    pub baseline_err: f64,
    /// Peak position, seconds.
    pub center: f64,
    pub center_err: f64,
    pub bandwidth: Frequency,
    pub reduced_chi_square: f64,
    pub iterations: usize,
}

/// Bins required on each side of the peak.
const MIN_FLANK_BINS: usize = 5;

/// Fits `A·exp(−|Δt − t₀|/τ) + B` to a delay histogram with Poisson
/// weights; errors are inflated by the reduced χ² when it exceeds one.
pub fn fit_double_exponential(hist: &Histogram) -> Result<DoubleExpFit> {
    let n = hist.len();
    if n < 2 * MIN_FLANK_BINS + 1 {
        return Err(Error::degenerate("histogram too short for a peak fit"));
    }
    let (ipk, &peak) = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("non-empty");
    if ipk < MIN_FLANK_BINS || n - 1 - ipk < MIN_FLANK_BINS {
        return Err(Error::degenerate("peak too close to the histogram edge"));
    }
    let edge = (n / 10).max(1);
    let tail: Vec<u64> = hist.counts[..edge].iter().chain(&hist.counts[n - edge..]).copied().collect();
    let baseline = tail.iter().sum::<u64>() as f64 / tail.len() as f64;
    let amp = peak as f64 - baseline;
    if !(amp > 3.0 * libm::sqrt(baseline.max(1.0))) {
        return Err(Error::degenerate("histogram has no dominant peak"));
    }

    let bw = hist.bin_width_ps as f64;
    let excess: f64 = hist.counts.iter().map(|&c| (c as f64 - baseline).max(0.0)).sum();
    let tau0 = (excess * bw / (2.0 * amp)).max(bw);
    let t0 = hist.center_ps(ipk) as f64;

    let xs: Vec<f64> = (0..n).map(|i| hist.center_ps(i) as f64).collect();
    let ys: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = hist.counts.iter().map(|&c| libm::sqrt((c as f64).max(1.0))).collect();
    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let (a, t0, tau, b) = (p[0], p[1], p[2], p[3]);
        let d = x - t0;
        let e = libm::exp(-d.abs() / tau);
        g[0] = e;
        g[1] = a * e * d.signum() / tau;
        g[2] = a * e * d.abs() / (tau * tau);
        g[3] = 1.0;
        a * e + b
    };
    let fit = levenberg_marquardt(model, &xs, &ys, Some(&sigma), &[amp, t0, tau0, baseline], LmOptions::default())?;
    let dof = (n - 4).max(1) as f64;
    let red = fit.chi_square / dof;
    let inflate = libm::sqrt(red.max(1.0));
    let tau_ps = fit.params[2].abs();
    if !(tau_ps > 0.0) || !tau_ps.is_finite() {
        return Err(Error::degenerate("fit collapsed to zero width"));
    }
    let tau = tau_ps * 1e-12;
    Ok(DoubleExpFit {
        tau,
        tau_err: fit.std_errors[2] * inflate * 1e-12,
        amplitude: fit.params[0],
        amplitude_err: fit.std_errors[0] * inflate,
        baseline: fit.params[3],
        baseline_err: fit.std_errors[3] * inflate,
        center: fit.params[1] * 1e-12,
        center_err: fit.std_errors[1] * inflate * 1e-12,
        bandwidth: bandwidth_from_coherence(tau)?,
        reduced_chi_square: red,
        iterations: fit.iterations,
    })
}
