//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "pump": { "pulse_fwhm_s": 3e-10, "bin_separation_s": 1.25e-9,
//!             "repetition_rate_hz": 1.6e8, "mu": 0.05 },
//!   "state": [0.7071067811865476, 0, 0, 0, 0, 0, 0.7071067811865476, 0],
//!   "coherence_time_s": 1.52e-10,
//!   "umzi_signal": { "delay_s": 1.25e-9, "phase": 0 },
//!   "umzi_idler":  { "delay_s": 1.25e-9, "phase": 0 },
//!   "detectors": { "A1": { "efficiency": 0.9, "dark_rate_hz": 30 }, ... },
//!   "duration_s": 10,
//!   "seed": 42
//! }
//! ```
//!
//! `state` is either eight reals (re, im of the ee, el, le, ll amplitudes)
//! or `{"density": [...]}` with 32 reals (re, im of the 16 entries, row
//! major). Optional fields and their defaults: `pump.pulse_smear` (true),
//! `pump.pulse_delay_s` (1 ns), `umzi_*.transmittance` (1),
//! `umzi_*.splitting_ratio` (0.5), `detectors.*.jitter_sigma_s` (30 ps),
//! `detectors.*.dead_time_s` (20 ns), `seed` (0). Jitter and dead time are
//! typical detector values, not measured ones. Unknown fields are errors.

use std::collections::BTreeMap;
use std::path::Path;

use qtb_core::simulator::{
    DetectorConfig, ExperimentConfig, PumpConfig, TimeBinState, UmziConfig, DEFAULT_DEAD_TIME_S, DEFAULT_JITTER_S,
    DEFAULT_PULSE_DELAY_S,
};
use qtb_core::tags::ChannelMap;
use qtb_core::tomography::DensityMatrix;
use qtb_core::C64;
use serde::{Deserialize, Serialize};

use crate::error::{QtbError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpDoc {
    pub pulse_fwhm_s: f64,
    pub bin_separation_s: f64,
    pub repetition_rate_hz: f64,
    pub mu: f64,
    #[serde(default = "yes")]
    pub pulse_smear: bool,
    #[serde(default = "default_pulse_delay")]
    pub pulse_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateDoc {
    Amplitudes([f64; 8]),
    Density { density: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UmziDoc {
    pub delay_s: f64,
    pub phase: f64,
    #[serde(default = "one")]
    pub transmittance: f64,
    #[serde(default = "half")]
    pub splitting_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorDoc {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    #[serde(default = "default_jitter")]
    pub jitter_sigma_s: f64,
    #[serde(default = "default_dead_time")]
    pub dead_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub pump: PumpDoc,
    pub state: StateDoc,
    pub coherence_time_s: f64,
    #[serde(default)]
    pub umzi_signal: Option<UmziDoc>,
    #[serde(default)]
    pub umzi_idler: Option<UmziDoc>,
    pub detectors: BTreeMap<String, DetectorDoc>,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_pulse_delay() -> f64 {
    DEFAULT_PULSE_DELAY_S
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER_S
}
fn default_dead_time() -> f64 {
    DEFAULT_DEAD_TIME_S
}

/// Parses and validates a configuration document. `label` names the
/// source in error messages.
pub fn parse_config(text: &str, label: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ConfigDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "(root)".to_string() } else { path };
        QtbError::config(label, path, e.inner().to_string())
    })?;
    doc.into_config(label)
}

pub fn read_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| QtbError::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

impl ConfigDoc {
    pub fn into_config(self, label: &str) -> Result<ExperimentConfig> {
        let err = |path: &str, msg: String| QtbError::config(label, path, msg);
        let check = |path: &str, r: qtb_core::Result<()>| r.map_err(|e| err(path, e.to_string()));

        let p = &self.pump;
        let pump = PumpConfig {
            pulse_fwhm_s: p.pulse_fwhm_s,
            bin_separation_s: p.bin_separation_s,
            repetition_rate_hz: p.repetition_rate_hz,
            mu: p.mu,
            pulse_smear: p.pulse_smear,
            pulse_delay_s: p.pulse_delay_s,
        };
        for (field, v) in [
            ("pump.pulse_fwhm_s", p.pulse_fwhm_s),
            ("pump.bin_separation_s", p.bin_separation_s),
            ("pump.repetition_rate_hz", p.repetition_rate_hz),
            ("pump.mu", p.mu),
            ("pump.pulse_delay_s", p.pulse_delay_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(err(field, format!("must be finite and non-negative, got {v}")));
            }
        }
        if !(p.bin_separation_s > p.pulse_fwhm_s) {
            return Err(err("pump.bin_separation_s", "must exceed pump.pulse_fwhm_s".into()));
        }
        check("pump", pump.validate())?;

        let state = match &self.state {
            StateDoc::Amplitudes(x) => TimeBinState::from_reals(*x).map_err(|e| err("state", e.to_string()))?,
            StateDoc::Density { density } => {
                if density.len() != 32 {
                    return Err(err("state.density", format!("expected 32 reals, got {}", density.len())));
                }
                let entries: Vec<C64> = density.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
                let rho = DensityMatrix::from_row_slice(&entries).map_err(|e| err("state.density", e.to_string()))?;
                let s = TimeBinState::Density(rho);
                check("state.density", s.validate())?;
                s
            }
        };

        if !self.coherence_time_s.is_finite() || self.coherence_time_s < 0.0 {
            return Err(err("coherence_time_s", "must be finite and non-negative".into()));
        }
        if !self.duration_s.is_finite() || self.duration_s < 0.0 {
            return Err(err("duration_s", "must be finite and non-negative".into()));
        }

        let umzi = |name: &str, d: &Option<UmziDoc>| -> Result<Option<UmziConfig>> {
            let Some(d) = d else { return Ok(None) };
            let u = UmziConfig { delay_s: d.delay_s, phase: 0.0, transmittance: d.transmittance, splitting_ratio: d.splitting_ratio }
                .with_phase(d.phase);
            check(name, u.validate())?;
            if (u.delay_s * 1e12).round() as u64 != pump.bin_separation_ps() {
                return Err(err(
                    &format!("{name}.delay_s"),
                    format!("{} s does not match pump.bin_separation_s = {} s", d.delay_s, p.bin_separation_s),
                ));
            }
            Ok(Some(u))
        };
        let umzi_signal = umzi("umzi_signal", &self.umzi_signal)?;
        let umzi_idler = umzi("umzi_idler", &self.umzi_idler)?;

        let standard = ChannelMap::standard();
        let mut detectors = BTreeMap::new();
        for (name, d) in &self.detectors {
            let path = format!("detectors.{name}");
            let id = standard
                .id(name)
                .filter(|_| name != "CLOCK")
                .ok_or_else(|| err(&path, "unknown detector channel (expected A1, A2, B1, B2, SIG or IDL)".into()))?;
            let det = DetectorConfig {
                efficiency: d.efficiency,
                dark_rate_hz: d.dark_rate_hz,
                jitter_sigma_s: d.jitter_sigma_s,
                dead_time_s: d.dead_time_s,
            };
            if !(0.0..=1.0).contains(&d.efficiency) {
                return Err(err(&format!("{path}.efficiency"), format!("must lie in [0, 1], got {}", d.efficiency)));
            }
            check(&path, det.validate())?;
            detectors.insert(id, det);
        }

        Ok(ExperimentConfig {
            pump,
            state,
            coherence_time_s: self.coherence_time_s,
            umzi_signal,
            umzi_idler,
            detectors,
            duration_s: self.duration_s,
            seed: self.seed,
        })
    }

    /// Document form of `cfg`.
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let p = cfg.pump;
        let state = match &cfg.state {
            TimeBinState::Pure(a) => StateDoc::Amplitudes(std::array::from_fn(|k| {
                let z = a[k / 2];
                if k % 2 == 0 {
                    z.re
                } else {
                    z.im
                }
            })),
            TimeBinState::Density(rho) => StateDoc::Density {
                density: (0..16).flat_map(|k| {
                    let z = rho.entry(k / 4, k % 4);
                    [z.re, z.im]
                })
                .collect(),
            },
        };
        let umzi = |u: &Option<UmziConfig>| {
            u.map(|u| UmziDoc { delay_s: u.delay_s, phase: u.phase, transmittance: u.transmittance, splitting_ratio: u.splitting_ratio })
        };
        let standard = ChannelMap::standard();
        ConfigDoc {
            pump: PumpDoc {
                pulse_fwhm_s: p.pulse_fwhm_s,
                bin_separation_s: p.bin_separation_s,
                repetition_rate_hz: p.repetition_rate_hz,
                mu: p.mu,
                pulse_smear: p.pulse_smear,
                pulse_delay_s: p.pulse_delay_s,
            },
            state,
            coherence_time_s: cfg.coherence_time_s,
            umzi_signal: umzi(&cfg.umzi_signal),
            umzi_idler: umzi(&cfg.umzi_idler),
            detectors: cfg
                .detectors
                .iter()
                .map(|(id, d)| {
                    (
                        standard.name(*id).unwrap_or("?").to_string(),
                        DetectorDoc {
                            efficiency: d.efficiency,
                            dark_rate_hz: d.dark_rate_hz,
                            jitter_sigma_s: d.jitter_sigma_s,
                            dead_time_s: d.dead_time_s,
                        },
                    )
                })
                .collect(),
            duration_s: cfg.duration_s,
            seed: cfg.seed,
        }
    }
}

/// Pretty JSON for `cfg`.
pub fn config_to_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(&ConfigDoc::from_config(cfg)).expect("config serializes")
}
