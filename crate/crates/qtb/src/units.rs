//! Parsing of command-line quantities with SI suffixes.

use qtb_core::coincidence::Gate;

/// Seconds from `"2.35ns"`, `"400 ps"`, `"1.2us"`, `"3ms"`, `"0.5s"` or a
/// bare number of seconds.
pub fn parse_time(s: &str) -> Result<f64, String> {
    parse_scaled(s, &[("ps", 1e-12), ("ns", 1e-9), ("us", 1e-6), ("µs", 1e-6), ("ms", 1e-3), ("s", 1.0)], "time")
}

/// Hertz from `"1.0GHz"`, `"30Hz"`, `"160MHz"` or a bare number of hertz.
pub fn parse_frequency(s: &str) -> Result<f64, String> {
    parse_scaled(s, &[("THz", 1e12), ("GHz", 1e9), ("MHz", 1e6), ("kHz", 1e3), ("Hz", 1.0)], "frequency")
}

fn parse_scaled(s: &str, units: &[(&str, f64)], what: &str) -> Result<f64, String> {
    let t = s.trim();
    let (num, scale) = units
        .iter()
        .find_map(|(u, k)| t.strip_suffix(u).map(|n| (n.trim(), *k)))
        .unwrap_or((t, 1.0));
    let v: f64 = num.parse().map_err(|_| format!("invalid {what} {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("invalid {what} {s:?}"));
    }
    Ok(v * scale)
}

/// Integer picoseconds of a time argument.
pub fn parse_time_ps(s: &str) -> Result<i64, String> {
    parse_time(s).map(|v| (v * 1e12).round() as i64)
}

/// Positive integer picoseconds.
pub fn parse_span_ps(s: &str) -> Result<u64, String> {
    match parse_time_ps(s)? {
        v if v > 0 => Ok(v as u64),
        _ => Err(format!("{s:?} must be positive")),
    }
}

/// `offset,width` gate, e.g. `"2.35ns,400ps"`.
pub fn parse_gate(s: &str) -> Result<Gate, String> {
    let (o, w) = s.split_once(',').ok_or_else(|| format!("gate {s:?} must be `offset,width`"))?;
    Gate::new(parse_time_ps(o)?, parse_span_ps(w)?).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(parse_time_ps("2.35ns").unwrap(), 2350);
        assert_eq!(parse_time_ps("400 ps").unwrap(), 400);
        assert_eq!(parse_time_ps("1.5us").unwrap(), 1_500_000);
        assert_eq!(parse_time_ps("1e-9").unwrap(), 1000);
        assert_eq!(parse_time("0.25s").unwrap(), 0.25);
        assert_eq!(parse_time("10ms").unwrap(), 0.01);
        assert!(parse_time("ten").is_err());
        assert!(parse_span_ps("-1ns").is_err());
        assert_eq!(parse_frequency("1.19GHz").unwrap(), 1.19e9);
        assert_eq!(parse_frequency("30").unwrap(), 30.0);
    }

    #[test]
    fn gates() {
        let g = parse_gate("2.35ns,400ps").unwrap();
        assert_eq!((g.offset_ps, g.width_ps), (2350, 400));
        assert!(parse_gate("2ns").is_err());
        assert!(parse_gate("2ns,0ps").is_err());
    }
}
