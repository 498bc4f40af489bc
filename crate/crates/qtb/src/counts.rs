//! Tomography counts and density-matrix JSON.
//!
//! Counts: `{"ee": {"count": 530123, "dwell_s": 1.0}, "e+": {...}, ...}`
//! keyed by setting label, signal basis first. A density matrix is written
//! as `{"basis": ["ee","el","le","ll"], "entries": [[re, im], ...]}` with
//! 16 entries in row-major order.

use std::collections::BTreeMap;

use qtb_core::tomography::{DensityMatrix, MeasurementRecord, Setting};
use qtb_core::C64;
use serde::{Deserialize, Serialize};

use crate::error::{QtbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountDoc {
    pub count: u64,
    pub dwell_s: f64,
}

pub fn parse_counts(text: &str, label: &str) -> Result<Vec<MeasurementRecord>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: BTreeMap<String, CountDoc> = serde_path_to_error::deserialize(de)
        .map_err(|e| QtbError::config(label, e.path().to_string(), e.inner().to_string()))?;
    let mut out = Vec::with_capacity(doc.len());
    for (key, c) in doc {
        let setting = Setting::parse(&key).map_err(|e| QtbError::config(label, key.clone(), e.to_string()))?;
        if !(c.dwell_s > 0.0) || !c.dwell_s.is_finite() {
            return Err(QtbError::config(label, format!("{key}.dwell_s"), "must be positive"));
        }
        out.push(MeasurementRecord { setting, count: c.count, dwell_s: c.dwell_s });
    }
    // canonical setting order, not the map's lexical order
    let order = Setting::all();
    out.sort_by_key(|r| order.iter().position(|s| *s == r.setting));
    Ok(out)
}

/// Counts JSON in canonical setting order.
pub fn counts_to_json(records: &[MeasurementRecord]) -> String {
    let mut s = String::from("{\n");
    for (i, r) in records.iter().enumerate() {
        let comma = if i + 1 < records.len() { "," } else { "" };
        s.push_str(&format!(
            "  {}: {{\"count\": {}, \"dwell_s\": {}}}{comma}\n",
            serde_json::to_string(&r.setting.label()).expect("string"),
            r.count,
            serde_json::to_string(&r.dwell_s).expect("number"),
        ));
    }
    s.push('}');
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDoc {
    pub basis: [String; 4],
    pub entries: Vec<[f64; 2]>,
}

pub fn density_to_doc(rho: &DensityMatrix) -> DensityDoc {
    DensityDoc {
        basis: ["ee", "el", "le", "ll"].map(String::from),
        entries: (0..16)
            .map(|k| {
                let z = rho.entry(k / 4, k % 4);
                [z.re, z.im]
            })
            .collect(),
    }
}

pub fn density_from_doc(doc: &DensityDoc, label: &str) -> Result<DensityMatrix> {
    if doc.entries.len() != 16 {
        return Err(QtbError::config(label, "entries", format!("expected 16 entries, got {}", doc.entries.len())));
    }
    let z: Vec<C64> = doc.entries.iter().map(|e| C64::new(e[0], e[1])).collect();
    DensityMatrix::from_row_slice(&z).map_err(|e| QtbError::config(label, "entries", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use qtb_core::tomography::{exact_records, phi_plus};

    #[test]
    fn counts_round_trip_in_canonical_order() {
        let rho = DensityMatrix::from_pure(&phi_plus()).unwrap();
        let recs = exact_records(&rho, 1000.0, 2.0);
        let text = counts_to_json(&recs);
        let back = parse_counts(&text, "c").unwrap();
        assert_eq!(back, recs);
        assert!(text.contains("\"+i+i\""));
    }

    #[test]
    fn rejects_bad_labels_and_dwell() {
        match parse_counts(r#"{"ex": {"count": 1, "dwell_s": 1}}"#, "c") {
            Err(QtbError::Config { path, .. }) => assert_eq!(path, "ex"),
            other => panic!("{other:?}"),
        }
        match parse_counts(r#"{"ee": {"count": -1, "dwell_s": 1}}"#, "c") {
            Err(QtbError::Config { path, .. }) => assert_eq!(path, "ee.count"),
            other => panic!("{other:?}"),
        }
        assert!(parse_counts(r#"{"ee": {"count": 1, "dwell_s": 0}}"#, "c").is_err());
    }

    #[test]
    fn density_doc_round_trip() {
        let rho = DensityMatrix::from_pure(&phi_plus()).unwrap();
        let doc = density_to_doc(&rho);
        let json = serde_json::to_string(&doc).unwrap();
        let back: DensityDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(density_from_doc(&back, "d").unwrap(), rho);
    }
}
