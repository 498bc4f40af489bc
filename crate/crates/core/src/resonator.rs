//! Microring resonance model: Lorentzian transmission dips, dip fitting and
//! cavity figures (loaded Q, free spectral range).

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::fit::{levenberg_marquardt, LmOptions};
use crate::quantities::{wavelength_to_frequency, Frequency, Wavelength, SPEED_OF_LIGHT};
use crate::{Error, Result};

/// A single symmetric resonance dip in the through-port transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resonance {
    pub center: Frequency,
    /// Full width at half depth.
    pub linewidth: Frequency,
    /// On-resonance transmission, `0 ≤ T_min < 1`.
    pub t_min: f64,
}

impl Resonance {
    pub fn new(center: Frequency, linewidth: Frequency, t_min: f64) -> Result<Self> {
        if !(linewidth.0 > 0.0) || !(center.0 > 0.0) {
            return Err(Error::domain("resonance center and linewidth must be positive"));
        }
        if !(0.0..1.0).contains(&t_min) {
            return Err(Error::domain("on-resonance transmission must lie in [0, 1)"));
        }
        Ok(Resonance { center, linewidth, t_min })
    }
}

/// Ring radius and group index, enough to place neighbouring resonances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingGeometry {
    /// Meters.
    pub radius: f64,
    pub group_index: f64,
}

impl RingGeometry {
    pub fn new(radius: f64, group_index: f64) -> Result<Self> {
        if !(radius > 0.0) || !(group_index > 0.0) {
            return Err(Error::domain("ring radius and group index must be positive"));
        }
        Ok(RingGeometry { radius, group_index })
    }

    /// Group index in the (1, 5) range expected of integrated waveguides.
    pub fn is_plausible(&self) -> bool {
        self.group_index > 1.0 && self.group_index < 5.0
    }
}

/// Lorentzian dip:
/// `T(ν) = 1 − (1 − T_min)·(Δν/2)² / ((ν − ν₀)² + (Δν/2)²)`.
pub fn transmission(res: &Resonance, nu: Frequency) -> f64 {
    let h = 0.5 * res.linewidth.0;
    let d = nu.0 - res.center.0;
    1.0 - (1.0 - res.t_min) * h * h / (d * d + h * h)
}

/// Loaded quality factor, `Q = ν₀ / Δν`.
pub fn q_factor(res: &Resonance) -> f64 {
    res.center.0 / res.linewidth.0
}

/// `FSR = c / (2π R n_g)`.
pub fn free_spectral_range(geom: &RingGeometry) -> Frequency {
    Frequency(SPEED_OF_LIGHT / (2.0 * PI * geom.radius * geom.group_index))
}

/// Result of [`fit_resonance`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceFit {
    pub resonance: Resonance,
    pub center_err: Frequency,
    pub linewidth_err: Frequency,
    pub t_min_err: f64,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl ResonanceFit {
    pub fn q_factor(&self) -> f64 {
        q_factor(&self.resonance)
    }

    /// First-order error on Q from the center and linewidth errors.
    pub fn q_factor_err(&self) -> f64 {
        let q = self.q_factor();
        let rc = self.center_err.0 / self.resonance.center.0;
        let rw = self.linewidth_err.0 / self.resonance.linewidth.0;
        q * libm::sqrt(rc * rc + rw * rw)
    }
}

/// Minimum number of samples accepted by [`fit_resonance`].
pub const MIN_RESONANCE_SAMPLES: usize = 8;

/// Least-squares Lorentzian fit of a transmission trace.
///
/// The initial guess takes the center at the lowest sample and the width
/// from the half-depth crossings on either side. The fit runs in
/// coordinates centered on that guess and scaled by the guessed width so
/// that THz carriers and GHz linewidths stay well conditioned.
pub fn fit_resonance(samples: &[(Frequency, f64)]) -> Result<ResonanceFit> {
    if samples.len() < MIN_RESONANCE_SAMPLES {
        return Err(Error::degenerate(alloc::format!(
            "need at least {MIN_RESONANCE_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|&(f, t)| !(f.0 > 0.0) || !(0.0..=1.2).contains(&t)) {
        return Err(Error::domain("frequencies must be positive and transmissions in [0, 1.2]"));
    }
    let mut pts: Vec<(f64, f64)> = samples.iter().map(|&(f, t)| (f.0, t)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (imin, &(nu_min, t_lo)) = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    let half = 0.5 * (1.0 + t_lo);
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imin;
        for i in range {
            if pts[i].1 >= half {
                let (f0, t0) = pts[prev];
                let (f1, t1) = pts[i];
                let s = if t1 != t0 { (half - t0) / (t1 - t0) } else { 0.0 };
                return Some(f0 + s * (f1 - f0));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imin).rev());
    let right = crossing(&mut (imin + 1..pts.len()));
    let (Some(left), Some(right)) = (left, right) else {
        return Err(Error::degenerate("samples do not bracket a transmission dip"));
    };
    let width0 = right - left;
    let span = pts[pts.len() - 1].0 - pts[0].0;
    if !(width0 > 0.0) || span < 2.0 * width0 {
        return Err(Error::degenerate("trace must span at least twice the dip width"));
    }

    let xs: Vec<f64> = pts.iter().map(|p| (p.0 - nu_min) / width0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let model = |x: f64, p: &[f64], g: &mut [f64]| {
        let (x0, w, tmin) = (p[0], p[1], p[2]);
        let h = 0.5 * w;
        let d = x - x0;
        let den = d * d + h * h;
        let l = h * h / den;
        let depth = 1.0 - tmin;
        g[0] = -depth * 2.0 * d * h * h / (den * den);
        g[1] = -depth * h * d * d / (den * den);
        g[2] = l;
        1.0 - depth * l
    };
    let fit = levenberg_marquardt(model, &xs, &ys, None, &[0.0, 1.0, t_lo.clamp(0.0, 0.99)], LmOptions::default())
        .map_err(|e| match e {
            Error::NoConvergence { what, iterations, best } => Error::NoConvergence {
                what,
                iterations,
                best: alloc::vec![nu_min + best[0] * width0, best[1].abs() * width0, best[2]],
            },
            other => other,
        })?;

    let center = nu_min + fit.params[0] * width0;
    let linewidth = fit.params[1].abs() * width0;
    let t_min = fit.params[2].clamp(0.0, 1.0 - f64::EPSILON);
    Ok(ResonanceFit {
        resonance: Resonance::new(Frequency(center), Frequency(linewidth), t_min)?,
        center_err: Frequency(fit.std_errors[0] * width0),
        linewidth_err: Frequency(fit.std_errors[1] * width0),
        t_min_err: fit.std_errors[2],
        residual_rms: fit.residual_rms,
        iterations: fit.iterations,
    })
}

/// Same as [`fit_resonance`] for traces recorded against wavelength.
pub fn fit_resonance_wavelength(samples: &[(Wavelength, f64)]) -> Result<ResonanceFit> {
    let converted = samples
        .iter()
        .map(|&(l, t)| Ok((wavelength_to_frequency(l)?, t)))
        .collect::<Result<Vec<_>>>()?;
    fit_resonance(&converted)
}

/// Samples `res` at `n` equally spaced frequencies over `center ± half_span`.
pub fn sample_trace(res: &Resonance, half_span: Frequency, n: usize) -> Vec<(Frequency, f64)> {
    let step = if n > 1 { 2.0 * half_span.0 / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            let nu = Frequency(res.center.0 - half_span.0 + step * i as f64);
            (nu, transmission(res, nu))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::itu_c_channel_center;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn c27() -> Resonance {
        Resonance::new(Frequency::thz(192.70), Frequency::ghz(1.0), 0.1).unwrap()
    }

    #[test]
    fn lineshape_landmarks() {
        let r = c27();
        assert!((transmission(&r, r.center) - 0.1).abs() < 1e-15);
        let hw = Frequency(r.center.0 + 0.5 * r.linewidth.0);
        assert!((transmission(&r, hw) - 0.55).abs() < 1e-12);
        let far = Frequency(r.center.0 + 1e6 * r.linewidth.0);
        assert!((transmission(&r, far) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn reference_q_factors() {
        let cases = [(37, 1.19, 1.63e5), (27, 1.00, 1.93e5), (17, 1.73, 1.11e5)];
        for (ch, lw, q) in cases {
            let r = Resonance::new(itu_c_channel_center(ch).unwrap(), Frequency::ghz(lw), 0.1).unwrap();
            assert!(((q_factor(&r) - q) / q).abs() < 0.005, "C{ch}: {}", q_factor(&r));
        }
    }

    #[test]
    fn fsr_of_a_17um_ring() {
        let g = RingGeometry::new(17e-6, 2.81).unwrap();
        assert!((free_spectral_range(&g).as_thz() - 0.999).abs() < 0.001);
        let g2 = RingGeometry::new(34e-6, 2.81).unwrap();
        assert!((free_spectral_range(&g2).0 * 2.0 / free_spectral_range(&g).0 - 1.0).abs() < 1e-14);
        let unit = RingGeometry::new(1.0, SPEED_OF_LIGHT / (2.0 * PI)).unwrap();
        assert!((free_spectral_range(&unit).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_fit_recovers_parameters() {
        let r = c27();
        let trace = sample_trace(&r, Frequency::ghz(5.0), 41);
        let fit = fit_resonance(&trace).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.resonance.center.0, r.center.0) < 1e-3);
        assert!(rel(fit.resonance.linewidth.0, r.linewidth.0) < 1e-3);
        assert!(rel(fit.resonance.t_min, r.t_min) < 1e-3);
        assert!(((fit.q_factor() - 1.927e5) / 1.927e5).abs() < 0.01);
    }

    #[test]
    fn noisy_fit_is_within_three_sigma() {
        let r = c27();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let trace: Vec<_> = sample_trace(&r, Frequency::ghz(5.0), 41)
            .into_iter()
            .map(|(f, t)| (f, (t + noise.sample(&mut rng)).clamp(0.0, 1.2)))
            .collect();
        let fit = fit_resonance(&trace).unwrap();
        let dev = (fit.resonance.linewidth.0 - r.linewidth.0).abs();
        assert!(dev < 3.0 * fit.linewidth_err.0, "dev {dev} err {}", fit.linewidth_err.0);
        assert!(fit.linewidth_err.0 > 0.0);
    }

    #[test]
    fn wavelength_traces_are_converted() {
        let r = c27();
        let trace: Vec<_> = sample_trace(&r, Frequency::ghz(5.0), 41)
            .into_iter()
            .map(|(f, t)| (Wavelength(SPEED_OF_LIGHT / f.0), t))
            .collect();
        let fit = fit_resonance_wavelength(&trace).unwrap();
        assert!(((fit.resonance.linewidth.0 - 1e9) / 1e9).abs() < 1e-3);
    }

    #[test]
    fn flat_or_short_traces_are_degenerate() {
        let flat: Vec<_> = (0..20).map(|i| (Frequency::thz(192.7 + i as f64 * 1e-3), 1.0)).collect();
        assert!(matches!(fit_resonance(&flat), Err(Error::DegenerateData(_))));
        let r = c27();
        let short = sample_trace(&r, Frequency::ghz(5.0), 5);
        assert!(matches!(fit_resonance(&short), Err(Error::DegenerateData(_))));
        // one-sided: only the left flank of the dip
        let half: Vec<_> = sample_trace(&r, Frequency::ghz(5.0), 41).into_iter().take(21).collect();
        assert!(matches!(fit_resonance(&half), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn out_of_range_transmission_is_rejected() {
        let mut trace = sample_trace(&c27(), Frequency::ghz(5.0), 41);
        trace[3].1 = 1.5;
        assert!(matches!(fit_resonance(&trace), Err(Error::Domain(_))));
    }
}
