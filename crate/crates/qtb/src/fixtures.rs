//! Reference inputs shipped with the crate, and their generators.
//!
//! All generators are deterministic; [`FIXTURE_SEED`] is part of each
//! fixture's definition rather than a run parameter.

use std::path::Path;

use qtb_core::analysis::{FringeSample, PortPair};
use qtb_core::pairsource::{SinglesModel, SweepPoint};
use qtb_core::quantities::{itu_c_channel_center, Frequency, Power};
use qtb_core::resonator::{sample_trace, Resonance};
use qtb_core::simulator::{expected_triple, ExperimentConfig};
use qtb_core::tomography::{published_state, sample_records, trial_rng, DensityMatrix, MeasurementRecord};
use rand_distr::{Distribution, Normal, Poisson};

use crate::cli::default_gate;
use crate::config::config_to_json;
use crate::counts::counts_to_json;
use crate::error::{QtbError, Result};
use crate::tables::{write_fringe, write_sweep, write_trace};

pub const FIXTURE_SEED: u64 = 42;

/// Shipped resonance traces: (file stem, ITU channel, linewidth, T_min).
pub const TRACES: [(&str, u32, f64, f64); 3] = [
    ("trace_c37", 37, 1.19e9, 0.25),
    ("trace_c27", 27, 1.00e9, 0.10),
    ("trace_c17", 17, 1.73e9, 0.35),
];
/// Samples per trace and span in linewidths either side of the dip.
pub const TRACE_POINTS: usize = 121;
pub const TRACE_HALF_SPAN_LINEWIDTHS: f64 = 4.0;
/// Additive Gaussian noise on shipped traces.
pub const TRACE_NOISE: f64 = 0.005;

/// Counts per setting of the tomography fixture.
pub const TOMO_COUNTS_PER_SETTING: f64 = 1e6;

/// Idler singles model used for the power-sweep fixture.
pub const IDLER_SINGLES: (f64, f64, f64) = (1.29e6, 1.15e5, 30.0);

/// Idler phases of the shipped fringe scans.
pub fn fringe_phases() -> Vec<f64> {
    (0..16).map(|k| k as f64 * std::f64::consts::TAU / 16.0).collect()
}
pub const FRINGE_DWELL_S: f64 = 0.05;

pub fn trace(stream: u64, channel: u32, linewidth: f64, t_min: f64) -> Vec<(Frequency, f64)> {
    let center = itu_c_channel_center(channel).expect("valid channel");
    let res = Resonance::new(center, Frequency(linewidth), t_min).expect("valid resonance");
    let mut rng = trial_rng(FIXTURE_SEED, stream);
    let noise = Normal::new(0.0, TRACE_NOISE).expect("valid sigma");
    sample_trace(&res, Frequency(TRACE_HALF_SPAN_LINEWIDTHS * linewidth), TRACE_POINTS)
        .into_iter()
        .map(|(f, t)| (f, t + noise.sample(&mut rng)))
        .collect()
}

/// The published matrix, renormalized to unit trace and projected onto
/// the positive semidefinite cone.
pub fn tomography_source_state() -> DensityMatrix {
    published_state()
        .renormalized()
        .and_then(|r| r.psd_projected())
        .expect("published state projects")
}

pub fn tomography_counts() -> Vec<MeasurementRecord> {
    let mut rng = trial_rng(FIXTURE_SEED, 0);
    sample_records(&tomography_source_state(), TOMO_COUNTS_PER_SETTING, 1.0, &mut rng)
}

pub fn idler_sweep() -> Vec<SweepPoint> {
    let (a, b, c) = IDLER_SINGLES;
    let m = SinglesModel::new(a, b, c).expect("valid model");
    let mut rng = trial_rng(FIXTURE_SEED, 1);
    (1..=13)
        .map(|k| {
            let p = Power::mw(0.1 * k as f64);
            let mean = m.a * p.as_mw() * p.as_mw() + m.b * p.as_mw() + m.c;
            SweepPoint { power: p, counts: Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64, dwell_s: 1.0 }
        })
        .collect()
}

/// Poisson-sampled triple counts from the analytic model of the fixture
/// experiment at the default gate, signal phase 0, idler phase scanned.
pub fn fringe_scans() -> Result<Vec<(PortPair, FringeSample)>> {
    let cfg = ExperimentConfig::fixture();
    let mut rng = trial_rng(FIXTURE_SEED, 2);
    let gate = default_gate(&cfg);
    let mut rows = Vec::new();
    for port in PortPair::ALL {
        let (pa, pb) = port_indices(port);
        for beta in fringe_phases() {
            let mut c = cfg.clone();
            c.umzi_idler = c.umzi_idler.map(|u| u.with_phase(beta));
            let e = expected_triple(&c, pa, pb, gate, gate)
                .map_err(|source| QtbError::Analysis { module: "simulator", source })?;
            let mean = e.triple_rate * FRINGE_DWELL_S;
            let count = if mean > 0.0 { Poisson::new(mean).expect("positive mean").sample(&mut rng) as u64 } else { 0 };
            rows.push((port, FringeSample { phase: beta, count, dwell_s: FRINGE_DWELL_S }));
        }
    }
    Ok(rows)
}

/// `(signal port, idler port)` as 0/1 indices.
pub fn port_indices(p: PortPair) -> (usize, usize) {
    match p {
        PortPair::A1B1 => (0, 0),
        PortPair::A1B2 => (0, 1),
        PortPair::A2B1 => (1, 0),
        PortPair::A2B2 => (1, 1),
    }
}

/// Writes every fixture into `dir`, returning the file names.
pub fn write_all(dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| QtbError::io(dir, e))?;
    let mut names = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| QtbError::io(&p, e))?;
        names.push(name.to_string());
        Ok(())
    };
    put("experiment.json", (config_to_json(&ExperimentConfig::fixture()) + "\n").into_bytes())?;
    for (k, (stem, ch, lw, tmin)) in TRACES.iter().enumerate() {
        let mut buf = Vec::new();
        let note = format!(
            "synthetic Lorentzian: ITU C{ch}, linewidth {lw} Hz, T_min {tmin}, noise sigma {TRACE_NOISE}, seed {FIXTURE_SEED} stream {}",
            10 + k
        );
        write_trace(&trace(10 + k as u64, *ch, *lw, *tmin), &mut buf, Some(&note))?;
        put(&format!("{stem}.csv"), buf)?;
    }
    put("tomography_counts.json", counts_to_json(&tomography_counts()).into_bytes())?;
    let mut buf = Vec::new();
    write_sweep(&idler_sweep(), &mut buf)?;
    put("idler_sweep.csv", buf)?;
    let mut buf = Vec::new();
    write_fringe(&fringe_scans()?, &mut buf)?;
    put("fringe_scans.csv", buf)?;
    Ok(names)
}

/// Directory of the fixtures shipped in the source tree.
pub fn shipped_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
