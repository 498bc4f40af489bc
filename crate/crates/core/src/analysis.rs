//! Entanglement figures of merit from gated coincidence counts.
//!
//! Nothing here subtracts accidentals unless the function name says so.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2, TAU};
use core::fmt;

use nalgebra::{Matrix3, Vector3};

use crate::fit::linear_least_squares;
use crate::tags::{channel, ChannelId};
use crate::{Error, Result};

/// Output port pair of the two analyzers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortPair {
    A1B1,
    A1B2,
    A2B1,
    A2B2,
}

impl PortPair {
    pub const ALL: [PortPair; 4] = [PortPair::A1B1, PortPair::A1B2, PortPair::A2B1, PortPair::A2B2];

    /// `(−1)^(i+j)`.
    pub fn parity(self) -> f64 {
        match self {
            PortPair::A1B1 | PortPair::A2B2 => 1.0,
            PortPair::A1B2 | PortPair::A2B1 => -1.0,
        }
    }

    pub fn channels(self) -> (ChannelId, ChannelId) {
        match self {
            PortPair::A1B1 => (channel::A1, channel::B1),
            PortPair::A1B2 => (channel::A1, channel::B2),
            PortPair::A2B1 => (channel::A2, channel::B1),
            PortPair::A2B2 => (channel::A2, channel::B2),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PortPair::A1B1 => "A1B1",
            PortPair::A1B2 => "A1B2",
            PortPair::A2B1 => "A2B1",
            PortPair::A2B2 => "A2B2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PortPair::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain(alloc::format!("unknown port pair {s:?}")))
    }
}

impl fmt::Display for PortPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One point of a phase scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeSample {
    pub phase: f64,
    pub count: u64,
    pub dwell_s: f64,
}

/// Coincidence counts of one port pair while `β` is scanned at fixed `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeScan {
    pub port: PortPair,
    pub samples: Vec<FringeSample>,
    pub fixed_phase: f64,
}

/// Fewest distinct scan phases accepted by [`fit_fringe`].
pub const MIN_FRINGE_PHASES: usize = 5;

impl FringeScan {
    pub fn new(port: PortPair, samples: Vec<FringeSample>, fixed_phase: f64) -> Result<Self> {
        let scan = FringeScan { port, samples, fixed_phase };
        scan.validate()?;
        Ok(scan)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fixed_phase.is_finite() {
            return Err(Error::domain("fixed phase must be finite"));
        }
        for s in &self.samples {
            if !s.phase.is_finite() || !(s.dwell_s > 0.0) || !s.dwell_s.is_finite() {
                return Err(Error::domain("scan samples need finite phases and positive dwell"));
            }
        }
        let mut phases: Vec<f64> = self.samples.iter().map(|s| s.phase).collect();
        phases.sort_by(f64::total_cmp);
        phases.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        if phases.len() < MIN_FRINGE_PHASES {
            return Err(Error::degenerate(alloc::format!(
                "fringe scan has {} distinct phases, need {MIN_FRINGE_PHASES}",
                phases.len()
            )));
        }
        if phases[phases.len() - 1] - phases[0] < PI - 1e-12 {
            return Err(Error::degenerate("fringe scan spans less than π"));
        }
        Ok(())
    }
}

/// Fitted fringe `rate = A(1 + V cos(β + φ))` for one port pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityResult {
    pub visibility: f64,
    /// `atan2(−C, B) − α`, in `[0, 2π)`.
    pub phase_offset: f64,
    /// Mean rate `A` in s⁻¹.
    pub amplitude: f64,
    pub sigma_v: f64,
    pub sigma_phase: f64,
    pub sigma_amplitude: f64,
    /// `V > 1`; still returned.
    pub unphysical: bool,
    /// False once accidentals were subtracted.
    pub raw: bool,
}

fn fold_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU { 0.0 } else { r }
}

/// Fringe fit on `(phase, rate, rate variance)` triples; the variances
/// only enter the uncertainty propagation.
pub fn fit_fringe_rates(points: &[(f64, f64, f64)], fixed_phase: f64) -> Result<VisibilityResult> {
    fit_points(points, fixed_phase, true)
}

fn fit_points(points: &[(f64, f64, f64)], fixed_phase: f64, raw: bool) -> Result<VisibilityResult> {
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|&(b, _, _)| alloc::vec![1.0, libm::cos(b), libm::sin(b)])
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = linear_least_squares(&rows, &y, None)?;
    let (a, b, c) = (fit.params[0], fit.params[1], fit.params[2]);
    if !(a > 0.0) {
        return Err(Error::degenerate("fringe mean rate is not positive"));
    }

    // θ = M y with M = (XᵀX)⁻¹Xᵀ; Cov θ = M diag(var) Mᵀ
    let mut xtx = Matrix3::zeros();
    for r in &rows {
        let v = Vector3::new(r[0], r[1], r[2]);
        xtx += v * v.transpose();
    }
    let inv = xtx.try_inverse().ok_or_else(|| Error::degenerate("fringe design is singular"))?;
    let mut cov = Matrix3::zeros();
    for (r, p) in rows.iter().zip(points) {
        let m = inv * Vector3::new(r[0], r[1], r[2]);
        cov += m * m.transpose() * p.2;
    }

    let amp = libm::hypot(b, c);
    let v = amp / a;
    let (sigma_v, sigma_phase) = if amp > 0.0 {
        let g = Vector3::new(-v / a, b / (a * amp), c / (a * amp));
        let h = Vector3::new(0.0, c / (amp * amp), -b / (amp * amp));
        (libm::sqrt((g.transpose() * cov * g)[(0, 0)].max(0.0)), libm::sqrt((h.transpose() * cov * h)[(0, 0)].max(0.0)))
    } else {
        // direction undefined at V = 0; use the mean transverse spread
        (libm::sqrt(0.5 * (cov[(1, 1)] + cov[(2, 2)]).max(0.0)) / a, PI)
    };
    Ok(VisibilityResult {
        visibility: v,
        phase_offset: fold_phase(libm::atan2(-c, b) - fixed_phase),
        amplitude: a,
        sigma_v,
        sigma_phase,
        sigma_amplitude: libm::sqrt(cov[(0, 0)].max(0.0)),
        unphysical: v > 1.0,
        raw,
    })
}

/// Unweighted least squares of the rate on `{1, cos β, sin β}`.
///
/// Uncertainties propagate Poisson variances `max(n, 1)/dwell²` through the
/// linear estimator to first order.
pub fn fit_fringe(scan: &FringeScan) -> Result<VisibilityResult> {
    scan.validate()?;
    let points: Vec<(f64, f64, f64)> = scan
        .samples
        .iter()
        .map(|s| {
            let n = s.count as f64;
            (s.phase, n / s.dwell_s, n.max(1.0) / (s.dwell_s * s.dwell_s))
        })
        .collect();
    fit_points(&points, scan.fixed_phase, true)
}

/// Non-raw variant: subtracts the accidental counts measured alongside each
/// sample (same order as `scan.samples`) before fitting.
pub fn fit_fringe_accidental_corrected(scan: &FringeScan, accidentals: &[u64]) -> Result<VisibilityResult> {
    scan.validate()?;
    if accidentals.len() != scan.samples.len() {
        return Err(Error::domain("one accidental count per scan sample is required"));
    }
    let points: Vec<(f64, f64, f64)> = scan
        .samples
        .iter()
        .zip(accidentals)
        .map(|(s, &acc)| {
            let n = s.count as f64 - acc as f64;
            let var = (s.count as f64 + acc as f64).max(1.0);
            (s.phase, n / s.dwell_s, var / (s.dwell_s * s.dwell_s))
        })
        .collect();
    fit_points(&points, scan.fixed_phase, false)
}

/// `E = (n11 − n12 − n21 + n22) / (n11 + n12 + n21 + n22)`.
pub fn correlation_coefficient(n11: u64, n12: u64, n21: u64, n22: u64) -> Result<f64> {
    let total = n11 as f64 + n12 as f64 + n21 as f64 + n22 as f64;
    if total == 0.0 {
        return Err(Error::no_data("no coincidences at any port pair"));
    }
    Ok((n11 as f64 - n12 as f64 - n21 as f64 + n22 as f64) / total)
}

/// Counts at the four port pairs for one phase sum `θ = α + β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationPoint {
    pub phase_sum: f64,
    pub counts: [u64; 4],
}

/// `E(θ) = V cos(θ + φ)` fitted to correlation coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationFit {
    pub visibility: f64,
    pub sigma_v: f64,
    pub phase_offset: f64,
    pub sigma_phase: f64,
}

/// Weighted least squares of `E` on `{cos θ, sin θ}` with the binomial
/// variance `(1 − E²)/N` per point, floored at `1/N²`.
pub fn fit_correlation(points: &[CorrelationPoint]) -> Result<CorrelationFit> {
    let mut rows = Vec::with_capacity(points.len());
    let mut e = Vec::with_capacity(points.len());
    let mut sigma = Vec::with_capacity(points.len());
    for p in points {
        let [n11, n12, n21, n22] = p.counts;
        let ei = correlation_coefficient(n11, n12, n21, n22)?;
        let total = p.counts.iter().map(|&n| n as f64).sum::<f64>();
        rows.push(alloc::vec![libm::cos(p.phase_sum), libm::sin(p.phase_sum)]);
        e.push(ei);
        sigma.push(libm::sqrt(((1.0 - ei * ei) / total).max(1.0 / (total * total))));
    }
    let mut phases: Vec<f64> = points.iter().map(|p| p.phase_sum).collect();
    phases.sort_by(f64::total_cmp);
    phases.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if phases.len() < 3 {
        return Err(Error::degenerate("correlation fit needs three distinct phases"));
    }
    let fit = linear_least_squares(&rows, &e, Some(&sigma))?;
    let (b, c) = (fit.params[0], fit.params[1]);
    let v = libm::hypot(b, c);
    let (vb, vc, cbc) = (fit.covariance_at(0, 0), fit.covariance_at(1, 1), fit.covariance_at(0, 1));
    let (sigma_v, sigma_phase) = if v > 0.0 {
        let sv = (b * b * vb + c * c * vc + 2.0 * b * c * cbc) / (v * v);
        let sp = (c * c * vb + b * b * vc - 2.0 * b * c * cbc) / (v * v * v * v);
        (libm::sqrt(sv.max(0.0)), libm::sqrt(sp.max(0.0)))
    } else {
        (libm::sqrt(0.5 * (vb + vc)), PI)
    };
    Ok(CorrelationFit { visibility: v, sigma_v, phase_offset: fold_phase(libm::atan2(-c, b)), sigma_phase })
}

/// CHSH value implied by a visibility and its significance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshResult {
    /// `S = 2√2 V`.
    pub s: f64,
    pub sigma_s: f64,
    /// `(V − 1/√2)/σ_V`.
    pub n_sigma: f64,
}

/// Largest visibility accepted, leaving room for noise above 1.
pub const MAX_VISIBILITY: f64 = 1.05;

pub fn chsh_from_visibility(v: f64, sigma_v: f64) -> Result<ChshResult> {
    if !(0.0..=MAX_VISIBILITY).contains(&v) {
        return Err(Error::domain(alloc::format!("visibility {v} outside [0, {MAX_VISIBILITY}]")));
    }
    if !(sigma_v > 0.0) || !sigma_v.is_finite() {
        return Err(Error::domain("visibility uncertainty must be positive"));
    }
    Ok(ChshResult { s: 2.0 * SQRT_2 * v, sigma_s: 2.0 * SQRT_2 * sigma_v, n_sigma: (v - FRAC_1_SQRT_2) / sigma_v })
}

/// Aggregate of per-port visibilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawVisibility {
    pub visibility: f64,
    pub sigma: f64,
    /// False when a zero σ forced the unweighted mean.
    pub weighted: bool,
}

/// Inverse-variance weighted mean; with any zero σ the plain mean with
/// `σ = √(Σσ²)/n`.
pub fn raw_visibility(per_port: &[VisibilityResult]) -> Result<RawVisibility> {
    let pairs: Vec<(f64, f64)> = per_port.iter().map(|r| (r.visibility, r.sigma_v)).collect();
    combine_visibilities(&pairs)
}

/// [`raw_visibility`] on bare `(V, σ)` pairs.
pub fn combine_visibilities(pairs: &[(f64, f64)]) -> Result<RawVisibility> {
    if pairs.is_empty() {
        return Err(Error::no_data("no visibilities to combine"));
    }
    if pairs.iter().any(|&(v, s)| !v.is_finite() || !s.is_finite() || s < 0.0) {
        return Err(Error::domain("visibilities and uncertainties must be finite, σ ≥ 0"));
    }
    let n = pairs.len() as f64;
    if pairs.iter().any(|&(_, s)| s == 0.0) {
        let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let sigma = libm::sqrt(pairs.iter().map(|p| p.1 * p.1).sum::<f64>()) / n;
        return Ok(RawVisibility { visibility: mean, sigma, weighted: false });
    }
    let wsum: f64 = pairs.iter().map(|p| 1.0 / (p.1 * p.1)).sum();
    let mean = pairs.iter().map(|p| p.0 / (p.1 * p.1)).sum::<f64>() / wsum;
    Ok(RawVisibility { visibility: mean, sigma: libm::sqrt(1.0 / wsum), weighted: true })
}
