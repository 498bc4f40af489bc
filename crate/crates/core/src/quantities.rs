//! Physical quantities and the ITU DWDM frequency grid.
//!
//! Frequencies are stored in hertz, wavelengths in meters, powers in watts and
//! timestamps as integer picoseconds.

use crate::{Error, Result};

/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Optical or RF frequency in hertz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Frequency(pub f64);

impl Frequency {
    pub const fn hz(value: f64) -> Self {
        Frequency(value)
    }

    pub fn ghz(value: f64) -> Self {
        Frequency(value * 1e9)
    }

    pub fn thz(value: f64) -> Self {
        Frequency(value * 1e12)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn as_ghz(self) -> f64 {
        self.0 * 1e-9
    }

    pub fn as_thz(self) -> f64 {
        self.0 * 1e-12
    }
}

/// Vacuum wavelength in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Wavelength(pub f64);

impl Wavelength {
    pub const fn meters(value: f64) -> Self {
        Wavelength(value)
    }

    pub fn nm(value: f64) -> Self {
        Wavelength(value * 1e-9)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn as_nm(self) -> f64 {
        self.0 * 1e9
    }

    /// True inside the (1 µm, 2 µm) window used to sanity-check telecom inputs.
    pub fn is_telecom(self) -> bool {
        self.0 > 1.0e-6 && self.0 < 2.0e-6
    }
}

/// Detection time in integer picoseconds since the stream epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TimeStamp(pub u64);

impl TimeStamp {
    pub fn as_seconds(self) -> f64 {
        self.0 as f64 / PS_PER_S
    }

    /// Rounds to the nearest picosecond; negative inputs saturate to zero.
    pub fn from_seconds(seconds: f64) -> Self {
        let ps = libm::round(seconds * PS_PER_S);
        TimeStamp(if ps <= 0.0 { 0 } else { ps as u64 })
    }
}

/// Rounds a duration in seconds to signed integer picoseconds.
pub fn seconds_to_ps(seconds: f64) -> i64 {
    libm::round(seconds * PS_PER_S) as i64
}

pub fn ps_to_seconds(ps: i64) -> f64 {
    ps as f64 / PS_PER_S
}

/// Optical power in watts.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Power(pub f64);

impl Power {
    pub const fn watts(value: f64) -> Self {
        Power(value)
    }

    pub fn mw(value: f64) -> Self {
        Power(value * 1e-3)
    }

    pub fn from_dbm(dbm: f64) -> Self {
        Power(1e-3 * libm::pow(10.0, dbm / 10.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn as_mw(self) -> f64 {
        self.0 * 1e3
    }

    /// Power in dBm; zero power maps to negative infinity.
    pub fn as_dbm(self) -> f64 {
        10.0 * libm::log10(self.0 / 1e-3)
    }

    /// Applies an insertion loss given in dB.
    pub fn attenuate_db(self, loss_db: f64) -> Self {
        Power(self.0 * libm::pow(10.0, -loss_db / 10.0))
    }
}

/// Converts a vacuum wavelength to frequency, ν = c/λ.
pub fn wavelength_to_frequency(lambda: Wavelength) -> Result<Frequency> {
    if !(lambda.0 > 0.0) || !lambda.0.is_finite() {
        return Err(Error::domain("wavelength must be positive and finite"));
    }
    Ok(Frequency(SPEED_OF_LIGHT / lambda.0))
}

/// Converts a frequency to vacuum wavelength, λ = c/ν.
pub fn frequency_to_wavelength(nu: Frequency) -> Result<Wavelength> {
    if !(nu.0 > 0.0) || !nu.0.is_finite() {
        return Err(Error::domain("frequency must be positive and finite"));
    }
    Ok(Wavelength(SPEED_OF_LIGHT / nu.0))
}

/// First and last valid channel of the 100-GHz C-band grid.
pub const ITU_CHANNELS: core::ops::RangeInclusive<u32> = 1..=72;

/// Center frequency of ITU 100-GHz channel `C<n>`: 190 THz + n × 100 GHz.
pub fn itu_c_channel_center(n: u32) -> Result<Frequency> {
    if !ITU_CHANNELS.contains(&n) {
        return Err(Error::domain(alloc::format!("ITU channel C{n} outside 1..=72")));
    }
    // Integer arithmetic in GHz keeps the grid spacing exact.
    let ghz = 190_000u64 + 100 * n as u64;
    Ok(Frequency(ghz as f64 * 1e9))
}

/// Nearest 100-GHz grid channel to `nu`, if it lies on the grid span.
pub fn nearest_itu_channel(nu: Frequency) -> Option<u32> {
    let n = libm::round((nu.0 - 190.0e12) / 100.0e9);
    if n >= 1.0 && n <= 72.0 {
        Some(n as u32)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn reference_wavelengths_sit_on_the_grid() {
        let pump = wavelength_to_frequency(Wavelength::nm(1555.75)).unwrap();
        assert!((pump.as_thz() - 192.70).abs() < 0.01);
        let signal = wavelength_to_frequency(Wavelength::nm(1547.72)).unwrap();
        assert!((signal.as_thz() - 193.70).abs() < 0.01);
        let idler = wavelength_to_frequency(Wavelength::nm(1563.86)).unwrap();
        assert!((idler.as_thz() - 191.70).abs() < 0.01);
        assert_eq!(nearest_itu_channel(pump), Some(27));
        assert_eq!(nearest_itu_channel(signal), Some(37));
        assert_eq!(nearest_itu_channel(idler), Some(17));
    }

    #[test]
    fn speed_of_light_in_meters_is_one_hertz() {
        let f = wavelength_to_frequency(Wavelength::meters(SPEED_OF_LIGHT)).unwrap();
        assert_eq!(f.value(), 1.0);
    }

    #[test]
    fn non_positive_wavelength_is_rejected() {
        assert!(matches!(wavelength_to_frequency(Wavelength::meters(0.0)), Err(Error::Domain(_))));
        assert!(wavelength_to_frequency(Wavelength::meters(-1e-6)).is_err());
        assert!(wavelength_to_frequency(Wavelength::meters(f64::NAN)).is_err());
    }

    #[test]
    fn grid_centers() {
        assert_eq!(itu_c_channel_center(27).unwrap().value(), 192.70e12);
        assert_eq!(itu_c_channel_center(17).unwrap().value(), 191.70e12);
        assert_eq!(itu_c_channel_center(37).unwrap().value(), 193.70e12);
        assert!(itu_c_channel_center(0).is_err());
        assert!(itu_c_channel_center(73).is_err());
    }

    #[test]
    fn grid_spacing_is_exactly_100_ghz() {
        for n in 1..72 {
            let a = itu_c_channel_center(n).unwrap().value();
            let b = itu_c_channel_center(n + 1).unwrap().value();
            assert_eq!(b - a, 100.0e9);
        }
    }

    #[test]
    fn grid_round_trips_through_wavelength() {
        for n in ITU_CHANNELS {
            let f = itu_c_channel_center(n).unwrap();
            let back = wavelength_to_frequency(frequency_to_wavelength(f).unwrap()).unwrap();
            assert!(rel(back.value(), f.value()) < 1e-12);
        }
    }

    #[test]
    fn dbm_round_trip() {
        for &mw in &[1e-6, 0.29, 1.0, 1.28, 250.0] {
            let p = Power::mw(mw);
            let back = Power::from_dbm(p.as_dbm());
            assert!(rel(back.value(), p.value()) < 1e-12);
        }
        assert!((Power::mw(1.0).as_dbm()).abs() < 1e-12);
        assert!(rel(Power::mw(10.0).attenuate_db(4.0).as_mw(), 3.981071705534973) < 1e-12);
    }

    #[test]
    fn timestamps_round_to_picoseconds() {
        assert_eq!(TimeStamp::from_seconds(6.25e-9).0, 6250);
        assert_eq!(TimeStamp::from_seconds(-1.0).0, 0);
        assert_eq!(seconds_to_ps(-1.25e-9), -1250);
    }
}
