//! Machine-readable run reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QtbError, Result};

/// A numeric result with its unit (`"1"` for dimensionless values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: String,
}

/// Self-contained record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    /// Input path → SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub parameters: serde_json::Value,
    pub results: BTreeMap<String, Quantity>,
    pub warnings: Vec<String>,
    /// Files written by the command, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            parameters: serde_json::Value::Object(Default::default()),
            results: BTreeMap::new(),
            warnings: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records the digest of an input file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("parameter serializes");
        self.parameters.as_object_mut().expect("object").insert(key.to_string(), v);
    }

    pub fn result(&mut self, key: &str, value: f64, unit: &str) {
        self.results.insert(key.to_string(), Quantity { value, unit: unit.to_string() });
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.results.get(key).map(|q| q.value)
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| QtbError::io(&path, e))
    }
}

/// SHA-256 of a file, hex encoded, streamed.
pub fn file_digest(path: &Path) -> Result<String> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| QtbError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| QtbError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
