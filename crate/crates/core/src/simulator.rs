//! Synthetic time-tag streams for the double-pulse time-bin experiment.
//!
//! Each pump period starts with a CLOCK tag. The two pump pulses sit at
//! `pulse_delay` and `pulse_delay + ΔT` after it. A photon emitted in bin
//! `b ∈ {e, l}` leaves its analyzer in slot `b` (short arm) or `b + 1`
//! (long arm), so arrival slots are early, middle and late.
//!
//! The joint (port, slot) outcome of a pair is sampled once from the exact
//! two-photon output distribution, so interference is never approximated
//! by sampling the emission bin first.
//!
//! Periods are simulated in fixed-size segments, each with its own ChaCha
//! stream, so segments can run in any order; [`Simulation::merge`] sorts
//! per channel and applies dead time over the concatenated result.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2, TAU};

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Geometric, Poisson, StandardNormal};

use crate::analysis::{fit_fringe_rates, VisibilityResult};
use crate::coincidence::Gate;
use crate::quantities::PS_PER_S;
use crate::tags::{channel, ChannelId, ChannelMap, TagStream, Tags};
use crate::tomography::DensityMatrix;
use crate::{Error, Result, C64};

/// Detector timing jitter used when none is configured.
pub const DEFAULT_JITTER_S: f64 = 30e-12;
/// Detector dead time used when none is configured.
pub const DEFAULT_DEAD_TIME_S: f64 = 20e-9;
/// Delay from a CLOCK tag to the first pump pulse.
pub const DEFAULT_PULSE_DELAY_S: f64 = 1e-9;
/// Fraction of tags removed by dead time above which a run is flagged.
pub const DEAD_TIME_WARNING_FRACTION: f64 = 0.1;
/// Pump periods per independently seeded segment.
pub const SEGMENT_PERIODS: u64 = 1 << 20;

/// `2√(2 ln 2)`: Gaussian FWHM over σ.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Double-pulse pump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpConfig {
    pub pulse_fwhm_s: f64,
    /// ΔT between the early and late pulse.
    pub bin_separation_s: f64,
    pub repetition_rate_hz: f64,
    /// Mean number of pairs per double pulse.
    pub mu: f64,
    /// Spread emission over the pulse envelope with σ = FWHM/2.355.
    pub pulse_smear: bool,
    pub pulse_delay_s: f64,
}

impl PumpConfig {
    /// 300 ps pulses, 1.25 ns apart, at 160 MHz.
    pub fn standard(mu: f64) -> Self {
        PumpConfig {
            pulse_fwhm_s: 300e-12,
            bin_separation_s: 1.25e-9,
            repetition_rate_hz: 160e6,
            mu,
            pulse_smear: true,
            pulse_delay_s: DEFAULT_PULSE_DELAY_S,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.pulse_fwhm_s, self.bin_separation_s, self.repetition_rate_hz, self.mu, self.pulse_delay_s];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("pump parameters must be finite"));
        }
        if !(self.pulse_fwhm_s >= 0.0) || !(self.bin_separation_s > self.pulse_fwhm_s) {
            return Err(Error::config("pump.bin_separation_s must exceed pump.pulse_fwhm_s"));
        }
        if !(self.repetition_rate_hz > 0.0) {
            return Err(Error::config("pump.repetition_rate_hz must be positive"));
        }
        if !(self.period_ps() > 2 * self.bin_separation_ps()) {
            return Err(Error::config("pump period must exceed twice pump.bin_separation_s"));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::config("pump.mu must be non-negative"));
        }
        if !(self.pulse_delay_s >= 0.0) {
            return Err(Error::config("pump.pulse_delay_s must be non-negative"));
        }
        Ok(())
    }

    pub fn period_ps(&self) -> u64 {
        libm::round(PS_PER_S / self.repetition_rate_hz) as u64
    }

    pub fn bin_separation_ps(&self) -> u64 {
        libm::round(self.bin_separation_s * PS_PER_S) as u64
    }

    /// Standard deviation of the emission-time smear in seconds.
    pub fn smear_sigma_s(&self) -> f64 {
        if self.pulse_smear {
            self.pulse_fwhm_s / FWHM_PER_SIGMA
        } else {
            0.0
        }
    }
}

/// Two-photon time-bin state over `{|ee⟩, |el⟩, |le⟩, |ll⟩}`, signal first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeBinState {
    Pure([C64; 4]),
    Density(DensityMatrix),
}

impl TimeBinState {
    /// `(|ee⟩ + |ll⟩)/√2`.
    pub fn phi_plus() -> Self {
        let r = C64::new(1.0 / SQRT_2, 0.0);
        let z = C64::new(0.0, 0.0);
        TimeBinState::Pure([r, z, z, r])
    }

    /// Pure state from `[re₀, im₀, re₁, im₁, …]`.
    pub fn from_reals(x: [f64; 8]) -> Result<Self> {
        let s = TimeBinState::Pure(core::array::from_fn(|k| C64::new(x[2 * k], x[2 * k + 1])));
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TimeBinState::Pure(a) => {
                let n: f64 = a.iter().map(|z| z.norm_sqr()).sum();
                if !((n - 1.0).abs() <= 1e-9) {
                    return Err(Error::config(alloc::format!("state amplitudes have norm² {n}, expected 1")));
                }
                Ok(())
            }
            TimeBinState::Density(rho) => rho.check_physical().map_err(|e| Error::config(alloc::format!("state: {e}"))),
        }
    }

    pub fn density(&self) -> Matrix4<C64> {
        match self {
            TimeBinState::Pure(a) => {
                let v = nalgebra::Vector4::from_column_slice(a);
                v * v.adjoint()
            }
            TimeBinState::Density(rho) => *rho.matrix(),
        }
    }
}

/// Unbalanced Mach-Zehnder analyzer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UmziConfig {
    /// Arm-length imbalance expressed as delay; must equal ΔT.
    pub delay_s: f64,
    /// Long-arm phase in `[0, 2π)`.
    pub phase: f64,
    pub transmittance: f64,
    /// Power fraction of each coupler sent to the short arm.
    pub splitting_ratio: f64,
}

impl UmziConfig {
    /// Lossless 50/50 analyzer.
    pub fn new(delay_s: f64, phase: f64) -> Result<Self> {
        let cfg = UmziConfig { delay_s, phase: fold_phase(phase), transmittance: 1.0, splitting_ratio: 0.5 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = fold_phase(phase);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay_s > 0.0) || !self.delay_s.is_finite() {
            return Err(Error::config("umzi.delay_s must be positive"));
        }
        if !self.phase.is_finite() {
            return Err(Error::config("umzi.phase must be finite"));
        }
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            return Err(Error::config("umzi.transmittance must lie in (0, 1]"));
        }
        if !(self.splitting_ratio > 0.0 && self.splitting_ratio < 1.0) {
            return Err(Error::config("umzi.splitting_ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn fold_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r >= TAU { 0.0 } else { r }
}

/// Single-photon detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_sigma_s: f64,
    pub dead_time_s: f64,
}

impl DetectorConfig {
    /// Default jitter and dead time.
    pub fn new(efficiency: f64, dark_rate_hz: f64) -> Self {
        DetectorConfig { efficiency, dark_rate_hz, jitter_sigma_s: DEFAULT_JITTER_S, dead_time_s: DEFAULT_DEAD_TIME_S }
    }

    /// Unit efficiency, no dark counts, no jitter, no dead time.
    pub fn ideal() -> Self {
        DetectorConfig { efficiency: 1.0, dark_rate_hz: 0.0, jitter_sigma_s: 0.0, dead_time_s: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config("detector efficiency must lie in [0, 1]"));
        }
        let rest = [self.dark_rate_hz, self.jitter_sigma_s, self.dead_time_s];
        if rest.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::config("detector dark rate, jitter and dead time must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Everything needed to synthesize a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub pump: PumpConfig,
    pub state: TimeBinState,
    /// Two-photon coherence time τ; each photon decays with mean τ.
    pub coherence_time_s: f64,
    pub umzi_signal: Option<UmziConfig>,
    pub umzi_idler: Option<UmziConfig>,
    pub detectors: BTreeMap<ChannelId, DetectorConfig>,
    pub duration_s: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// µ = 0.05, 90% efficiency, 30 Hz darks, |φ⁺⟩, τ = 152 ps, analyzers
    /// at zero phase, 10 s, seed 42.
    pub fn fixture() -> Self {
        let det = DetectorConfig::new(0.9, 30.0);
        let umzi = UmziConfig::new(1.25e-9, 0.0).expect("valid analyzer");
        let detectors = [channel::A1, channel::A2, channel::B1, channel::B2, channel::SIG, channel::IDL]
            .into_iter()
            .map(|c| (c, det))
            .collect();
        ExperimentConfig {
            pump: PumpConfig::standard(0.05),
            state: TimeBinState::phi_plus(),
            coherence_time_s: 152e-12,
            umzi_signal: Some(umzi),
            umzi_idler: Some(umzi),
            detectors,
            duration_s: 10.0,
            seed: 42,
        }
    }

    pub fn detector(&self, id: ChannelId) -> Result<&DetectorConfig> {
        self.detectors
            .get(&id)
            .ok_or_else(|| Error::config(alloc::format!("detectors: no entry for channel {id}")))
    }

    pub fn duration_ps(&self) -> u64 {
        libm::round(self.duration_s * PS_PER_S) as u64
    }

    /// `⌊duration / period⌋`.
    pub fn periods(&self) -> u64 {
        self.duration_ps() / self.pump.period_ps()
    }

    fn validate_common(&self) -> Result<()> {
        self.pump.validate()?;
        self.state.validate()?;
        if !(self.coherence_time_s >= 0.0) || !self.coherence_time_s.is_finite() {
            return Err(Error::config("coherence_time_s must be finite and non-negative"));
        }
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return Err(Error::config("duration_s must be finite and non-negative"));
        }
        for d in self.detectors.values() {
            d.validate()?;
        }
        Ok(())
    }

    fn analyzers(&self) -> Result<(UmziConfig, UmziConfig)> {
        let (Some(a), Some(b)) = (self.umzi_signal, self.umzi_idler) else {
            return Err(Error::config("umzi_signal and umzi_idler are required"));
        };
        let bin = self.pump.bin_separation_ps();
        for (name, u) in [("umzi_signal", a), ("umzi_idler", b)] {
            u.validate()?;
            if libm::round(u.delay_s * PS_PER_S) as u64 != bin {
                return Err(Error::config(alloc::format!(
                    "{name}.delay_s = {} s does not match pump.bin_separation_s = {} s",
                    u.delay_s,
                    self.pump.bin_separation_s
                )));
            }
        }
        Ok((a, b))
    }
}

/// Output amplitudes of one analyzer, `[port][slot]` with slots early,
/// middle, late. Input amplitudes are for the early and late bins.
pub fn apply_umzi(input: [C64; 2], cfg: &UmziConfig) -> Result<[[C64; 3]; 2]> {
    cfg.validate()?;
    let norm = input[0].norm_sqr() + input[1].norm_sqr();
    if !(norm <= 1.0 + 1e-9) {
        return Err(Error::domain(alloc::format!("input amplitudes have norm² {norm} > 1")));
    }
    let k = umzi_kernel(cfg, cfg.transmittance);
    let mut out = [[C64::new(0.0, 0.0); 3]; 2];
    for port in 0..2 {
        for slot in 0..3 {
            out[port][slot] = k[port][slot][0] * input[0] + k[port][slot][1] * input[1];
        }
    }
    Ok(out)
}

/// `[port][slot][bin]` transfer amplitudes. Coupler matrix
/// `[[√r, √(1−r)], [√(1−r), −√r]]`, long arm delayed one slot with phase φ.
fn umzi_kernel(cfg: &UmziConfig, transmittance: f64) -> [[[C64; 2]; 3]; 2] {
    let r = cfg.splitting_ratio;
    let t = libm::sqrt(transmittance);
    let ph = C64::new(libm::cos(cfg.phase), libm::sin(cfg.phase));
    let cross = libm::sqrt(r * (1.0 - r));
    let short = [C64::new(r * t, 0.0), C64::new(cross * t, 0.0)];
    let long = [ph * ((1.0 - r) * t), ph * (-cross * t)];
    let mut k = [[[C64::new(0.0, 0.0); 2]; 3]; 2];
    for port in 0..2 {
        for bin in 0..2 {
            k[port][bin][bin] += short[port];
            k[port][bin + 1][bin] += long[port];
        }
    }
    k
}

/// Index of photon outcome `(port, slot)`; [`LOST`] marks absorption.
pub fn outcome_index(port: usize, slot: usize) -> usize {
    port * 3 + slot
}

/// Outcome index of a photon lost inside its analyzer.
pub const LOST: usize = 6;

/// Joint distribution `P[o_signal][o_idler]` over `(port, slot)` outcomes
/// and loss, summing to `Tr ρ`.
pub fn joint_outcomes(state: &TimeBinState, signal: &UmziConfig, idler: &UmziConfig) -> Result<[[f64; 7]; 7]> {
    signal.validate()?;
    idler.validate()?;
    let rho = state.density();
    let ka = umzi_kernel(signal, 1.0);
    let kb = umzi_kernel(idler, 1.0);
    let mut lossless = [[0.0; 6]; 6];
    for oa in 0..6 {
        for ob in 0..6 {
            let (pa, sa, pb, sb) = (oa / 3, oa % 3, ob / 3, ob % 3);
            let v: [C64; 4] = core::array::from_fn(|b| ka[pa][sa][b / 2] * kb[pb][sb][b % 2]);
            let mut p = C64::new(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    p += v[i] * rho[(i, j)] * v[j].conj();
                }
            }
            lossless[oa][ob] = p.re.max(0.0);
        }
    }
    let (ta, tb) = (signal.transmittance, idler.transmittance);
    let mut out = [[0.0; 7]; 7];
    for oa in 0..6 {
        for ob in 0..6 {
            out[oa][ob] = ta * tb * lossless[oa][ob];
        }
    }
    for oa in 0..6 {
        out[oa][LOST] = ta * (1.0 - tb) * lossless[oa].iter().sum::<f64>();
    }
    for ob in 0..6 {
        out[LOST][ob] = (1.0 - ta) * tb * (0..6).map(|oa| lossless[oa][ob]).sum::<f64>();
    }
    out[LOST][LOST] = (1.0 - ta) * (1.0 - tb) * lossless.iter().flatten().sum::<f64>();
    Ok(out)
}

/// Which run a [`Simulation`] synthesizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    /// Analyzers in place; CLOCK, A1, A2, B1, B2.
    Interference,
    /// No analyzers; SIG and IDL see the emission bins directly.
    Correlation,
}

/// Per-photon destination of one sampled pair outcome.
#[derive(Debug, Clone, Copy)]
struct PhotonOutcome {
    /// Index into the detector list, or `None` when lost.
    detector: Option<usize>,
    slot: u32,
}

/// Validated, precomputed simulation of one configuration.
#[derive(Debug, Clone)]
pub struct Simulation {
    kind: RunKind,
    seed: u64,
    periods: u64,
    period_ps: u64,
    duration_ps: u64,
    bin_ps: f64,
    delay_ps: f64,
    smear_ps: f64,
    tau_ps: f64,
    mu: f64,
    /// `1 − e^{−µ}`.
    p_nonempty: f64,
    channels: Vec<ChannelId>,
    detectors: Vec<DetectorConfig>,
    /// Cumulative outcome probabilities, last entry 1.
    cdf: Vec<f64>,
    outcomes: Vec<(PhotonOutcome, PhotonOutcome)>,
}

/// Tags produced by one segment, per detector channel, unsorted.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutput {
    pub index: u64,
    pub channels: Vec<Vec<u64>>,
    pub pairs: u64,
}

/// Bookkeeping returned with a simulated stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationInfo {
    pub periods: u64,
    pub emitted_pairs: u64,
    /// `(channel, tags before dead time, tags kept)`.
    pub channel_counts: Vec<(ChannelId, u64, u64)>,
    pub dead_time_removed: u64,
    /// Some channel lost more than [`DEAD_TIME_WARNING_FRACTION`] of its
    /// tags to dead time.
    pub dead_time_warning: bool,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig, kind: RunKind) -> Result<Self> {
        cfg.validate_common()?;
        let (channels, outcomes, probs) = match kind {
            RunKind::Interference => {
                let (ua, ub) = cfg.analyzers()?;
                let table = joint_outcomes(&cfg.state, &ua, &ub)?;
                let photon = |o: usize, base: usize| PhotonOutcome {
                    detector: (o != LOST).then_some(base + o / 3),
                    slot: (o % 3) as u32,
                };
                let mut outcomes = Vec::with_capacity(49);
                let mut probs = Vec::with_capacity(49);
                for (oa, row) in table.iter().enumerate() {
                    for (ob, &p) in row.iter().enumerate() {
                        outcomes.push((photon(oa, 0), photon(ob, 2)));
                        probs.push(p);
                    }
                }
                (vec![channel::A1, channel::A2, channel::B1, channel::B2], outcomes, probs)
            }
            RunKind::Correlation => {
                let rho = cfg.state.density();
                let mut outcomes = Vec::with_capacity(4);
                let mut probs = Vec::with_capacity(4);
                for b in 0..4 {
                    let s = PhotonOutcome { detector: Some(0), slot: (b / 2) as u32 };
                    let i = PhotonOutcome { detector: Some(1), slot: (b % 2) as u32 };
                    outcomes.push((s, i));
                    probs.push(rho[(b, b)].re.max(0.0));
                }
                (vec![channel::SIG, channel::IDL], outcomes, probs)
            }
        };
        let detectors = channels.iter().map(|&c| cfg.detector(c).copied()).collect::<Result<Vec<_>>>()?;
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        *cdf.last_mut().expect("non-empty outcome table") = 1.0;

        let mu = cfg.pump.mu;
        Ok(Simulation {
            kind,
            seed: cfg.seed,
            periods: cfg.periods(),
            period_ps: cfg.pump.period_ps(),
            duration_ps: cfg.duration_ps(),
            bin_ps: cfg.pump.bin_separation_ps() as f64,
            delay_ps: cfg.pump.pulse_delay_s * PS_PER_S,
            smear_ps: cfg.pump.smear_sigma_s() * PS_PER_S,
            tau_ps: cfg.coherence_time_s * PS_PER_S,
            mu,
            p_nonempty: -libm::expm1(-mu),
            channels,
            detectors,
            cdf,
            outcomes,
        })
    }

    pub fn kind(&self) -> RunKind {
        self.kind
    }

    pub fn periods(&self) -> u64 {
        self.periods
    }

    pub fn segment_count(&self) -> u64 {
        self.periods.div_ceil(SEGMENT_PERIODS).max(1)
    }

    /// Detector channels in output order.
    pub fn channels(&self) -> &[ChannelId] {
        &self.channels
    }

    /// Simulates periods `[i·S, min((i+1)·S, periods))` with S =
    /// [`SEGMENT_PERIODS`]. The last segment also covers the time after the
    /// final full period, for dark counts.
    pub fn simulate_segment(&self, index: u64) -> SegmentOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let first = index * SEGMENT_PERIODS;
        let end = ((index + 1) * SEGMENT_PERIODS).min(self.periods);
        let mut channels = vec![Vec::new(); self.channels.len()];
        let mut pairs = 0;

        if self.p_nonempty > 0.0 && first < end {
            let skip = Geometric::new(self.p_nonempty).expect("probability in (0, 1]");
            let mut k = first;
            loop {
                k = k.saturating_add(skip.sample(&mut rng));
                if k >= end {
                    break;
                }
                let n = self.nonzero_poisson(&mut rng);
                pairs += n;
                for _ in 0..n {
                    self.emit_pair(k, &mut rng, &mut channels);
                }
                k += 1;
            }
        }

        let start_ps = first * self.period_ps;
        let stop_ps = if index + 1 >= self.segment_count() { self.duration_ps } else { end * self.period_ps };
        if stop_ps > start_ps {
            let span = stop_ps - start_ps;
            for (d, tags) in self.detectors.iter().zip(channels.iter_mut()) {
                let mean = d.dark_rate_hz * span as f64 / PS_PER_S;
                if mean > 0.0 {
                    let n = Poisson::new(mean).expect("finite dark mean").sample(&mut rng) as u64;
                    for _ in 0..n {
                        tags.push(start_ps + rng.random_range(0..span));
                    }
                }
            }
        }
        SegmentOutput { index, channels, pairs }
    }

    /// Pair count conditioned on at least one, by inversion.
    fn nonzero_poisson(&self, rng: &mut ChaCha8Rng) -> u64 {
        let u: f64 = rng.random::<f64>() * self.p_nonempty;
        let mut n = 1u64;
        let mut p = self.mu * libm::exp(-self.mu);
        let mut cum = p;
        while u > cum && n < 10_000 {
            n += 1;
            p *= self.mu / n as f64;
            cum += p;
            if p == 0.0 {
                break;
            }
        }
        n
    }

    fn emit_pair(&self, period: u64, rng: &mut ChaCha8Rng, channels: &mut [Vec<u64>]) {
        let smear = if self.smear_ps > 0.0 { self.smear_ps * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let (s, i) = self.outcomes[idx];
        let base = (period * self.period_ps) as i64;
        for photon in [s, i] {
            let Some(det) = photon.detector else { continue };
            let cfg = &self.detectors[det];
            if !(rng.random::<f64>() < cfg.efficiency) {
                continue;
            }
            let mut t = self.delay_ps + smear + photon.slot as f64 * self.bin_ps;
            if self.tau_ps > 0.0 {
                t += self.tau_ps * rng.sample::<f64, _>(Exp1);
            }
            if cfg.jitter_sigma_s > 0.0 {
                t += cfg.jitter_sigma_s * PS_PER_S * rng.sample::<f64, _>(StandardNormal);
            }
            let time = base + libm::round(t) as i64;
            if time >= 0 && (time as u64) < self.duration_ps {
                channels[det].push(time as u64);
            }
        }
    }

    /// Concatenates segment outputs (any order), sorts each channel and
    /// applies non-paralyzable dead time.
    pub fn merge(&self, mut segments: Vec<SegmentOutput>) -> Result<(TagStream, SimulationInfo)> {
        segments.sort_by_key(|s| s.index);
        let expected = self.segment_count();
        if segments.len() as u64 != expected || segments.iter().enumerate().any(|(i, s)| s.index != i as u64) {
            return Err(Error::config("segment outputs do not cover the run exactly once"));
        }
        let emitted_pairs = segments.iter().map(|s| s.pairs).sum();
        let mut entries: Vec<(ChannelId, alloc::string::String)> = Vec::new();
        let standard = ChannelMap::standard();
        if self.kind == RunKind::Interference {
            entries.push((channel::CLOCK, "CLOCK".into()));
        }
        for &c in &self.channels {
            entries.push((c, standard.name(c).expect("standard channel").into()));
        }
        let mut stream = TagStream::new(ChannelMap::new(entries)?, self.duration_ps);
        if self.kind == RunKind::Interference {
            stream.set_channel(channel::CLOCK, Tags::Periodic { first: 0, period: self.period_ps, count: self.periods })?;
        }

        let mut channel_counts = Vec::with_capacity(self.channels.len());
        let mut removed_total = 0;
        let mut warning = false;
        for (ci, &id) in self.channels.iter().enumerate() {
            let total: usize = segments.iter().map(|s| s.channels[ci].len()).sum();
            let mut tags = Vec::with_capacity(total);
            for seg in segments.iter_mut() {
                tags.append(&mut seg.channels[ci]);
            }
            tags.sort_unstable();
            let before = tags.len() as u64;
            apply_dead_time(&mut tags, libm::round(self.detectors[ci].dead_time_s * PS_PER_S) as u64);
            let kept = tags.len() as u64;
            removed_total += before - kept;
            if before > 0 && (before - kept) as f64 > DEAD_TIME_WARNING_FRACTION * before as f64 {
                warning = true;
            }
            channel_counts.push((id, before, kept));
            stream.set_channel(id, Tags::Events(tags))?;
        }
        let info = SimulationInfo {
            periods: self.periods,
            emitted_pairs,
            channel_counts,
            dead_time_removed: removed_total,
            dead_time_warning: warning,
        };
        Ok((stream, info))
    }

    /// All segments in order on the calling thread.
    pub fn run(&self) -> Result<(TagStream, SimulationInfo)> {
        let segments = (0..self.segment_count()).map(|i| self.simulate_segment(i)).collect();
        self.merge(segments)
    }
}

/// Drops every tag closer than `dead_ps` to the last kept one.
pub fn apply_dead_time(sorted: &mut Vec<u64>, dead_ps: u64) {
    if dead_ps == 0 {
        return;
    }
    let mut last: Option<u64> = None;
    sorted.retain(|&t| match last {
        Some(l) if t - l < dead_ps => false,
        _ => {
            last = Some(t);
            true
        }
    });
}

/// CLOCK, A1, A2, B1, B2 stream of the analyzer experiment.
pub fn simulate_experiment(cfg: &ExperimentConfig) -> Result<(TagStream, SimulationInfo)> {
    Simulation::new(cfg, RunKind::Interference)?.run()
}

/// SIG, IDL stream without analyzers.
pub fn simulate_correlation_run(cfg: &ExperimentConfig) -> Result<(TagStream, SimulationInfo)> {
    Simulation::new(cfg, RunKind::Correlation)?.run()
}

fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        libm::log(0.5 * libm::erfc(-x / SQRT_2))
    } else {
        // Mills-ratio asymptote
        let x2 = x * x;
        -0.5 * x2 - libm::log(-x * libm::sqrt(2.0 * PI)) + libm::log1p(-1.0 / x2 + 3.0 / (x2 * x2))
    }
}

/// CDF of a zero-mean Gaussian (σ) plus an exponential of mean τ.
pub fn exgauss_cdf(t: f64, sigma: f64, tau: f64) -> f64 {
    match (sigma > 0.0, tau > 0.0) {
        (false, false) => {
            if t >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        (false, true) => {
            if t <= 0.0 {
                0.0
            } else {
                -libm::expm1(-t / tau)
            }
        }
        (true, false) => libm::exp(ln_norm_cdf(t / sigma)),
        (true, true) => {
            let phi = libm::exp(ln_norm_cdf(t / sigma));
            let tail = libm::exp(-t / tau + sigma * sigma / (2.0 * tau * tau) + ln_norm_cdf(t / sigma - sigma / tau));
            (phi - tail).clamp(0.0, 1.0)
        }
    }
}

/// Expected gated probabilities for one port pair and one pump period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedExpectation {
    /// Mean photon-plus-dark count in the signal gate.
    pub mean_a: f64,
    pub mean_b: f64,
    /// Mean number of pairs with both photons in their gates.
    pub mean_both: f64,
    /// Probability that both gates hold at least one tag.
    pub triple_probability: f64,
    /// Triple rate in s⁻¹.
    pub triple_rate: f64,
}

/// Analytic three-fold probability for port pair `(port_a, port_b)` (0 or
/// 1 each).
///
/// Pairs are Poisson per period and land independently, so the number of
/// pairs touching any pair of regions (one per detector) is Poisson. A
/// detector registers in its gate when at least one photon arrives there
/// and none arrived during the dead time before the gate opened, which by
/// inclusion-exclusion gives
/// `P = e^{−Λ(E)} − e^{−Λ(E∪G_a)} − e^{−Λ(E∪G_b)} + e^{−Λ(E∪G_a∪G_b)}`
/// with `E` the two pre-gate dead windows. Arrivals stand in for registered
/// clicks inside `E`, which is exact to first order in rate × dead time.
/// With zero dead time this is `1 − e^{−m_a} − e^{−m_b} + e^{−(m_a + m_b − m_c)}`.
/// The shared emission smear is integrated numerically.
pub fn expected_triple(cfg: &ExperimentConfig, port_a: usize, port_b: usize, gate_a: Gate, gate_b: Gate) -> Result<GatedExpectation> {
    cfg.validate_common()?;
    let (ua, ub) = cfg.analyzers()?;
    if port_a > 1 || port_b > 1 {
        return Err(Error::domain("ports are 0 or 1"));
    }
    let table = joint_outcomes(&cfg.state, &ua, &ub)?;
    let ch_a = [channel::A1, channel::A2][port_a];
    let ch_b = [channel::B1, channel::B2][port_b];
    let (da, db) = (*cfg.detector(ch_a)?, *cfg.detector(ch_b)?);
    let period = cfg.pump.period_ps() as f64;
    let bin = cfg.pump.bin_separation_ps() as f64;
    let delay = cfg.pump.pulse_delay_s * PS_PER_S;
    let tau = cfg.coherence_time_s * PS_PER_S;
    let smear = cfg.pump.smear_sigma_s() * PS_PER_S;

    // tags are rounded to whole ps, so the closed integer gate [lo, hi]
    // accepts continuous times in [lo − ½, hi + ½)
    let window = |g: Gate| {
        let h = (g.width_ps / 2) as f64;
        (g.offset_ps as f64 - h - 0.5, g.offset_ps as f64 + h + 0.5)
    };
    let (wa, wb) = (window(gate_a), window(gate_b));
    let (dead_a, dead_b) = (da.dead_time_s * PS_PER_S, db.dead_time_s * PS_PER_S);
    // regions per detector: [dead window, dead window + gate]
    let ra = [(wa.0 - dead_a, wa.0), (wa.0 - dead_a, wa.1)];
    let rb = [(wb.0 - dead_b, wb.0), (wb.0 - dead_b, wb.1)];
    let capture = |w: (f64, f64), center: f64, sigma: f64| {
        if w.1 <= w.0 {
            0.0
        } else {
            exgauss_cdf(w.1 - center, sigma, tau) - exgauss_cdf(w.0 - center, sigma, tau)
        }
    };
    let sa_sig = da.jitter_sigma_s * PS_PER_S;
    let sb_sig = db.jitter_sigma_s * PS_PER_S;
    let back = libm::ceil(dead_a.max(dead_b) / period) as i64 + 1;

    // per pair and smear s, summed over contributing periods: signal in
    // ra[i], idler in rb[j], and both, for i, j ∈ {0, 1}
    let per_pair = |s: f64| -> [f64; 8] {
        let mut m = [0.0; 8];
        for k in -back..=1 {
            let shift = k as f64 * period;
            let center = |slot: usize| shift + delay + s + slot as f64 * bin;
            let ga: [[f64; 3]; 2] = core::array::from_fn(|i| core::array::from_fn(|slot| da.efficiency * capture(ra[i], center(slot), sa_sig)));
            let gb: [[f64; 3]; 2] = core::array::from_fn(|j| core::array::from_fn(|slot| db.efficiency * capture(rb[j], center(slot), sb_sig)));
            for slot_a in 0..3 {
                let oa = outcome_index(port_a, slot_a);
                let marginal: f64 = table[oa].iter().sum();
                for i in 0..2 {
                    m[i] += marginal * ga[i][slot_a];
                }
                for slot_b in 0..3 {
                    let p = table[oa][outcome_index(port_b, slot_b)];
                    for i in 0..2 {
                        for j in 0..2 {
                            m[4 + 2 * i + j] += p * ga[i][slot_a] * gb[j][slot_b];
                        }
                    }
                }
            }
            for slot_b in 0..3 {
                let ob = outcome_index(port_b, slot_b);
                let marginal: f64 = (0..7).map(|oa| table[oa][ob]).sum();
                for j in 0..2 {
                    m[2 + j] += marginal * gb[j][slot_b];
                }
            }
        }
        m
    };

    let m = if smear > 0.0 {
        // Simpson over ±8σ of the Gaussian smear
        let n = 400;
        let h = 16.0 * smear / n as f64;
        let mut acc = [0.0; 8];
        for i in 0..=n {
            let s = -8.0 * smear + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let pdf = libm::exp(-0.5 * (s / smear) * (s / smear)) / (smear * libm::sqrt(2.0 * PI));
            for (a, v) in acc.iter_mut().zip(per_pair(s)) {
                *a += w * pdf * v;
            }
        }
        acc.map(|a| a * h / 3.0)
    } else {
        per_pair(0.0)
    };

    let mu = cfg.pump.mu;
    let len = |w: (f64, f64)| (w.1 - w.0).max(0.0) / PS_PER_S;
    // expected number of pairs or darks touching ra[i] ∪ rb[j]
    let lambda = |i: usize, j: usize| {
        mu * (m[i] + m[2 + j] - m[4 + 2 * i + j]) + da.dark_rate_hz * len(ra[i]) + db.dark_rate_hz * len(rb[j])
    };
    let triple = libm::exp(-lambda(0, 0)) * (1.0 - libm::exp(lambda(0, 0) - lambda(1, 0)) - libm::exp(lambda(0, 0) - lambda(0, 1))
        + libm::exp(lambda(0, 0) - lambda(1, 1)));

    let dark_a = da.dark_rate_hz * len(wa);
    let dark_b = db.dark_rate_hz * len(wb);
    let gated = |idx: usize, other: usize| mu * (m[idx] - m[other]);
    let mean_a = gated(1, 0) + dark_a;
    let mean_b = gated(3, 2) + dark_b;
    let mean_both = mu * (m[7] - m[6] - m[5] + m[4]);
    Ok(GatedExpectation {
        mean_a,
        mean_b,
        mean_both,
        triple_probability: triple,
        triple_rate: triple * cfg.pump.repetition_rate_hz,
    })
}

/// Fringe fitted to analytic triple rates at the given idler phases (the
/// signal analyzer phase held at its configured value). This is the
/// visibility a noiseless run would show.
pub fn expected_visibility(
    cfg: &ExperimentConfig,
    port_a: usize,
    port_b: usize,
    gate_a: Gate,
    gate_b: Gate,
    idler_phases: &[f64],
) -> Result<VisibilityResult> {
    let (ua, ub) = cfg.analyzers()?;
    let mut points = Vec::with_capacity(idler_phases.len());
    for &beta in idler_phases {
        let mut c = cfg.clone();
        c.umzi_idler = Some(ub.with_phase(beta));
        let e = expected_triple(&c, port_a, port_b, gate_a, gate_b)?;
        points.push((beta, e.triple_rate, e.triple_rate));
    }
    fit_fringe_rates(&points, ua.phase)
}

/// Expected tags per detector channel before dead time.
pub fn expected_tag_counts(cfg: &ExperimentConfig, kind: RunKind) -> Result<Vec<(ChannelId, f64)>> {
    let sim = Simulation::new(cfg, kind)?;
    let mut probs = vec![0.0; sim.channels.len()];
    let mut prev = 0.0;
    for (c, (s, i)) in sim.cdf.iter().zip(&sim.outcomes) {
        let p = c - prev;
        prev = *c;
        for photon in [s, i] {
            if let Some(d) = photon.detector {
                probs[d] += p;
            }
        }
    }
    let pairs = sim.mu * sim.periods as f64;
    Ok(sim
        .channels
        .iter()
        .zip(&sim.detectors)
        .zip(probs)
        .map(|((&c, d), p)| (c, pairs * p * d.efficiency + d.dark_rate_hz * sim.duration_ps as f64 / PS_PER_S))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::count_triples;
    use crate::tags::Timeline;

    fn ideal(mu: f64, duration: f64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::fixture();
        cfg.pump.mu = mu;
        cfg.duration_s = duration;
        for d in cfg.detectors.values_mut() {
            *d = DetectorConfig::ideal();
        }
        cfg
    }

    #[test]
    fn early_photon_splits_evenly() {
        let u = UmziConfig::new(1.25e-9, 1.1).unwrap();
        let out = apply_umzi([C64::new(1.0, 0.0), C64::new(0.0, 0.0)], &u).unwrap();
        for port in out {
            assert!((port[0].norm_sqr() - 0.25).abs() < 1e-15);
            assert!((port[1].norm_sqr() - 0.25).abs() < 1e-15);
            assert!(port[2].norm_sqr() < 1e-30);
        }
        let lossy = UmziConfig { transmittance: 0.6, ..u };
        let out = apply_umzi([C64::new(0.6, 0.0), C64::new(0.0, 0.8)], &lossy).unwrap();
        let total: f64 = out.iter().flatten().map(|z| z.norm_sqr()).sum();
        assert!((total - 0.6).abs() < 1e-12);
        assert!(apply_umzi([C64::new(1.0, 0.0), C64::new(0.5, 0.0)], &u).is_err());
    }

    #[test]
    fn both_middle_probability_follows_parity_rule() {
        for (alpha, beta) in [(0.0, 0.0), (0.4, 1.9), (3.0, 5.5)] {
            let a = UmziConfig::new(1.25e-9, alpha).unwrap();
            let b = UmziConfig::new(1.25e-9, beta).unwrap();
            let t = joint_outcomes(&TimeBinState::phi_plus(), &a, &b).unwrap();
            let mut sum = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    let s = if p == q { 1.0 } else { -1.0 };
                    let want = (1.0 + s * libm::cos(alpha + beta)) / 16.0;
                    let got = t[outcome_index(p, 1)][outcome_index(q, 1)];
                    assert!((got - want).abs() < 1e-15);
                    sum += got;
                }
            }
            assert!((sum - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn delay_mismatch_is_a_config_error() {
        let mut cfg = ExperimentConfig::fixture();
        cfg.umzi_idler = Some(UmziConfig::new(1.3e-9, 0.0).unwrap());
        assert!(matches!(simulate_experiment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn clock_only_without_pairs_or_darks() {
        let cfg = ideal(0.0, 1e-3);
        let (s, info) = simulate_experiment(&cfg).unwrap();
        assert_eq!(s.require(channel::CLOCK).unwrap().len(), 160_000);
        assert_eq!(s.len(), 160_000);
        assert_eq!(info.emitted_pairs, 0);
    }

    #[test]
    fn zero_phase_sum_gives_even_parity_only() {
        // sharp slots and few enough pairs that no period holds two
        let mut cfg = ideal(1e-4, 0.1);
        cfg.coherence_time_s = 0.0;
        cfg.pump.pulse_smear = false;
        let (s, info) = simulate_experiment(&cfg).unwrap();
        assert!(info.emitted_pairs > 1000);
        let clock = s.require(channel::CLOCK).unwrap();
        let gate = Gate::new(1000 + 1250, 1000).unwrap();
        let n = |a, b| count_triples(clock, s.require(a).unwrap(), s.require(b).unwrap(), gate, gate);
        assert!(n(channel::A1, channel::B1) > 50);
        assert!(n(channel::A2, channel::B2) > 50);
        assert_eq!(n(channel::A1, channel::B2), 0);
        assert_eq!(n(channel::A2, channel::B1), 0);
    }

    #[test]
    fn segments_are_order_independent() {
        let mut cfg = ExperimentConfig::fixture();
        cfg.duration_s = 0.02;
        let sim = Simulation::new(&cfg, RunKind::Interference).unwrap();
        assert!(sim.segment_count() > 2);
        let forward = sim.run().unwrap();
        let reversed: Vec<_> = (0..sim.segment_count()).rev().map(|i| sim.simulate_segment(i)).collect();
        assert_eq!(sim.merge(reversed).unwrap(), forward);
        assert_eq!(simulate_experiment(&cfg).unwrap(), forward);
    }

    #[test]
    fn dead_time_filter() {
        let mut v = vec![0, 5, 10, 25, 26, 60];
        apply_dead_time(&mut v, 20);
        assert_eq!(v, vec![0, 25, 60]);
    }

    #[test]
    fn exgauss_limits() {
        assert!((exgauss_cdf(0.0, 1.0, 0.0) - 0.5).abs() < 1e-12);
        assert!((exgauss_cdf(152.0, 0.0, 152.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(exgauss_cdf(-1e6, 30.0, 1.0), 0.0);
        assert!((exgauss_cdf(1e6, 30.0, 152.0) - 1.0).abs() < 1e-12);
        // numerical convolution at one point
        let (sigma, tau, t) = (30.0, 152.0, 80.0);
        let n = 20_000;
        let h = 2000.0 / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            let pdf = (-x / tau).exp() / tau;
            let z = (t - x) / sigma;
            acc += pdf * 0.5 * libm::erfc(-z / SQRT_2) * h;
        }
        assert!((exgauss_cdf(t, sigma, tau) - acc).abs() < 1e-6);
    }
}
