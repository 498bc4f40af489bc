//! CSV formats: transmission traces, power sweeps, fringe scans and
//! histograms. Lines starting with `#` are comments; headers are required.

use std::io::{Read, Write};
use std::path::Path;

use qtb_core::analysis::{FringeSample, PortPair};
use qtb_core::coincidence::Histogram;
use qtb_core::pairsource::SweepPoint;
use qtb_core::quantities::{Frequency, Power, Wavelength};

use crate::error::{QtbError, Result};

/// Spectral axis of a transmission trace.
#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Frequency(Vec<(Frequency, f64)>),
    Wavelength(Vec<(Wavelength, f64)>),
}

impl Trace {
    pub fn len(&self) -> usize {
        match self {
            Trace::Frequency(v) => v.len(),
            Trace::Wavelength(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(false).from_reader(input)
}

fn headers<R: Read>(r: &mut csv::Reader<R>, label: &str) -> Result<Vec<String>> {
    Ok(r.headers()
        .map_err(|e| QtbError::format(label, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect())
}

fn column(headers: &[String], name: &str, label: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| QtbError::format(label, 1, format!("missing column `{name}`")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, label: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| QtbError::format(label, line_of(rec), format!("invalid {name} {raw:?}")))
}

fn records<R: Read>(r: &mut csv::Reader<R>, label: &str) -> Result<Vec<csv::StringRecord>> {
    r.records()
        .map(|rec| rec.map_err(|e| QtbError::format(label, e.position().map_or(0, |p| p.line()), e.to_string())))
        .collect()
}

/// `frequency_hz,transmission` or `wavelength_nm,transmission`.
pub fn read_trace<R: Read>(input: R, label: &str) -> Result<Trace> {
    let mut r = reader(input);
    let h = headers(&mut r, label)?;
    let ti = column(&h, "transmission", label)?;
    let rows = records(&mut r, label)?;
    if let Ok(fi) = column(&h, "frequency_hz", label) {
        let v = rows
            .iter()
            .map(|rec| Ok((Frequency(field(rec, fi, "frequency", label)?), field(rec, ti, "transmission", label)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trace::Frequency(v))
    } else if let Ok(wi) = column(&h, "wavelength_nm", label) {
        let v = rows
            .iter()
            .map(|rec| Ok((Wavelength::nm(field(rec, wi, "wavelength", label)?), field(rec, ti, "transmission", label)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trace::Wavelength(v))
    } else {
        Err(QtbError::format(label, 1, "expected a `frequency_hz` or `wavelength_nm` column"))
    }
}

pub fn write_trace<W: Write>(samples: &[(Frequency, f64)], out: W, comment: Option<&str>) -> Result<()> {
    let mut out = out;
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}").map_err(|e| QtbError::io("<trace>", e))?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frequency_hz", "transmission"]).map_err(csv_err)?;
    for (f, t) in samples {
        w.write_record([format!("{:.6}", f.0), format!("{t:.9}")]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| QtbError::io("<trace>", e))
}

/// `power_mw,counts,dwell_s`.
pub fn read_sweep<R: Read>(input: R, label: &str) -> Result<Vec<SweepPoint>> {
    let mut r = reader(input);
    let h = headers(&mut r, label)?;
    let (pi, ci, di) = (column(&h, "power_mw", label)?, column(&h, "counts", label)?, column(&h, "dwell_s", label)?);
    records(&mut r, label)?
        .iter()
        .map(|rec| {
            let dwell_s: f64 = field(rec, di, "dwell", label)?;
            if !(dwell_s > 0.0) {
                return Err(QtbError::format(label, line_of(rec), "dwell_s must be positive"));
            }
            Ok(SweepPoint { power: Power::mw(field(rec, pi, "power", label)?), counts: field(rec, ci, "count", label)?, dwell_s })
        })
        .collect()
}

pub fn write_sweep<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["power_mw", "counts", "dwell_s"]).map_err(csv_err)?;
    for p in points {
        w.write_record([format!("{}", p.power.as_mw()), p.counts.to_string(), format!("{}", p.dwell_s)]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| QtbError::io("<sweep>", e))
}

/// `phase_rad,count,dwell_s` with an optional `port` column. Rows without
/// a port column belong to `default_port`.
pub fn read_fringe<R: Read>(input: R, label: &str, default_port: Option<PortPair>) -> Result<Vec<(PortPair, FringeSample)>> {
    let mut r = reader(input);
    let h = headers(&mut r, label)?;
    let (phi, ci, di) = (column(&h, "phase_rad", label)?, column(&h, "count", label)?, column(&h, "dwell_s", label)?);
    let port_col = h.iter().position(|c| c == "port");
    if port_col.is_none() && default_port.is_none() {
        return Err(QtbError::format(label, 1, "no `port` column; name the port pair as PORT=FILE"));
    }
    records(&mut r, label)?
        .iter()
        .map(|rec| {
            let port = match port_col {
                Some(i) => PortPair::parse(rec.get(i).unwrap_or(""))
                    .map_err(|e| QtbError::format(label, line_of(rec), e.to_string()))?,
                None => default_port.expect("checked above"),
            };
            let dwell_s: f64 = field(rec, di, "dwell", label)?;
            if !(dwell_s > 0.0) {
                return Err(QtbError::format(label, line_of(rec), "dwell_s must be positive"));
            }
            Ok((port, FringeSample { phase: field(rec, phi, "phase", label)?, count: field(rec, ci, "count", label)?, dwell_s }))
        })
        .collect()
}

pub fn write_fringe<W: Write>(rows: &[(PortPair, FringeSample)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["port", "phase_rad", "count", "dwell_s"]).map_err(csv_err)?;
    for (p, s) in rows {
        w.write_record([p.label().to_string(), format!("{}", s.phase), s.count.to_string(), format!("{}", s.dwell_s)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| QtbError::io("<fringe>", e))
}

/// `bin_center_s,count`.
pub fn write_histogram<W: Write>(h: &Histogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_center_s", "count"]).map_err(csv_err)?;
    for (i, c) in h.counts.iter().enumerate() {
        w.write_record([format!("{:e}", h.center_s(i)), c.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| QtbError::io("<histogram>", e))
}

/// Generic numeric table with the given header.
pub fn write_table<W: Write>(header: &[&str], rows: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(csv_err)?;
    }
    w.flush().map_err(|e| QtbError::io("<table>", e))
}

fn csv_err(e: csv::Error) -> QtbError {
    QtbError::Io { path: "<csv>".into(), source: std::io::Error::other(e.to_string()) }
}

pub fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| QtbError::io(path, e))
}

pub fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| QtbError::io(path, e))
}
