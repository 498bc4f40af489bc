use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the models and estimators in this crate.
///
/// Every variant carries enough context to be reported without the caller
/// knowing which module produced it.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    Domain(String),
    /// Input data cannot determine the requested estimate.
    DegenerateData(String),
    /// An iterative fit hit its iteration cap.
    ///
    /// `best` holds the parameters of the best iterate seen.
    NoConvergence { what: &'static str, iterations: usize, best: alloc::vec::Vec<f64> },
    /// Inconsistent experiment or counting configuration.
    Config(String),
    /// Nothing to analyze (zero totals, empty streams).
    NoData(String),
    /// Coincidences do not exceed accidentals.
    NoSignal(String),
    /// A stream violates the sorted-order precondition.
    Unsorted { channel: u8, index: usize },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateData(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn no_data(msg: impl Into<String>) -> Self {
        Error::NoData(msg.into())
    }

    /// True for errors caused by a bad configuration rather than by data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::DegenerateData(m) => write!(f, "degenerate data: {m}"),
            Error::NoConvergence { what, iterations, .. } => {
                write!(f, "{what} did not converge after {iterations} iterations")
            }
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::NoData(m) => write!(f, "no data: {m}"),
            Error::NoSignal(m) => write!(f, "no signal: {m}"),
            Error::Unsorted { channel, index } => {
                write!(f, "channel {channel} is not sorted at record {index}")
            }
        }
    }
}

impl core::error::Error for Error {}
