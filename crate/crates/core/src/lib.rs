//! Models, Monte Carlo synthesis and analysis for cavity-enhanced time-bin
//! entangled photon-pair experiments.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, parallel drivers
//! and the command-line front end live in the companion `qtb` crate.
//!
//! Module map:
//!
//! - [`quantities`]: frequencies, wavelengths, timestamps, powers, ITU grid.
//! - [`resonator`]: Lorentzian microring transmission, fitting, Q and FSR.
//! - [`pairsource`]: SFWM rate model, singles fit, CAR, pair-rate inference,
//!   coherence time.
//! - [`simulator`]: double-pulse pump, UMZI analyzers, detectors, time tags.
//! - [`coincidence`]: delay histograms, two- and three-fold coincidences,
//!   peak finding.
//! - [`analysis`]: fringe visibility, correlation coefficient, CHSH.
//! - [`tomography`]: projectors, linear inversion, maximum likelihood,
//!   fidelity, Monte Carlo error bars.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod coincidence;
mod error;
pub mod fit;
pub mod pairsource;
pub mod quantities;
pub mod resonator;
pub mod simulator;
pub mod tags;
pub mod tomography;

pub use error::{Error, Result};
pub use nalgebra;
pub use nalgebra::Complex;

/// Double-precision complex number used throughout the crate.
pub type C64 = Complex<f64>;
