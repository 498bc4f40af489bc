//! Command-line toolkit around `qtb-core`: file formats, configuration,
//! run reports, parallel drivers and the `qtb` command grammar.

pub mod cli;
pub mod config;
pub mod counts;
pub mod error;
pub mod fixtures;
pub mod parallel;
pub mod report;
pub mod svg;
pub mod tables;
pub mod ttag;
pub mod units;

pub use error::{QtbError, Result};
