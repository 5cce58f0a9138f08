//! Sweep results: axes, data columns and run metadata, written as CSV with a
//! JSON sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::qcore::ITERATIVE_TOL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
    /// Repetitions averaged into every point.
    pub repeat: usize,
}

impl SweepSpec {
    pub fn new(name: &str, unit: &str, values: Vec<f64>) -> Self {
        SweepSpec {
            name: name.into(),
            unit: unit.into(),
            values,
            repeat: 1,
        }
    }

    pub fn with_repeat(mut self, repeat: usize) -> Self {
        self.repeat = repeat;
        self
    }

    /// `n` evenly spaced values from `start` to `stop` inclusive.
    pub fn linspace(name: &str, unit: &str, start: f64, stop: f64, n: usize) -> Self {
        let values = match n {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..n).map(|k| start + (stop - start) * k as f64 / (n - 1) as f64).collect(),
        };
        Self::new(name, unit, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub unit: String,
    pub values: Vec<f64>,
    /// Values are probabilities and must lie in `[0, 1]`.
    pub probability: bool,
}

fn header(name: &str, unit: &str) -> String {
    if unit.is_empty() {
        name.to_string()
    } else {
        format!("{name} [{unit}]")
    }
}

/// Data over one or two sweep axes. Rows are ordered with the first axis
/// outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub protocol: String,
    pub axes: Vec<SweepSpec>,
    pub columns: Vec<Column>,
    pub metadata: BTreeMap<String, Value>,
}

/// SHA-256 of the JSON serialization of the device parameters.
pub fn params_hash(p: &DeviceParams) -> String {
    let bytes = serde_json::to_vec(p).expect("device parameters serialize");
    hex::encode(Sha256::digest(&bytes))
}

impl ExperimentResult {
    pub fn new(protocol: &str, axes: Vec<SweepSpec>, p: &DeviceParams, seed: Option<u64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::param("axes", "one or two sweep axes are required"));
        }
        if let Some(a) = axes.iter().find(|a| a.values.is_empty()) {
            return Err(Error::param(&a.name, "sweep has no values"));
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("protocol".into(), Value::from(protocol));
        metadata.insert("params_sha256".into(), Value::from(params_hash(p)));
        metadata.insert("device".into(), serde_json::to_value(p)?);
        metadata.insert("seed".into(), seed.map_or(Value::Null, Value::from));
        Ok(ExperimentResult {
            protocol: protocol.into(),
            axes,
            columns: Vec::new(),
            metadata,
        })
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Coordinates of row `i`, one per axis.
    pub fn coordinates(&self, i: usize) -> Vec<f64> {
        match self.axes.as_slice() {
            [a] => vec![a.values[i]],
            [a, b] => vec![a.values[i / b.values.len()], b.values[i % b.values.len()]],
            _ => unreachable!(),
        }
    }

    pub fn push_column(&mut self, name: &str, unit: &str, values: Vec<f64>, probability: bool) -> Result<()> {
        if values.len() != self.n_points() {
            return Err(Error::param(
                name,
                format!("column has {} values for {} sweep points", values.len(), self.n_points()),
            ));
        }
        if probability {
            if let Some(v) = values.iter().find(|v| !(-ITERATIVE_TOL..=1.0 + ITERATIVE_TOL).contains(*v)) {
                return Err(Error::param(name, format!("probability {v} outside [0, 1]")));
            }
        }
        let values = if probability {
            values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
        } else {
            values
        };
        self.columns.push(Column {
            name: name.into(),
            unit: unit.into(),
            values,
            probability,
        });
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.metadata.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let head: Vec<String> = self
            .axes
            .iter()
            .map(|a| header(&a.name, &a.unit))
            .chain(self.columns.iter().map(|c| header(&c.name, &c.unit)))
            .collect();
        w.write_record(&head)?;
        for i in 0..self.n_points() {
            let row: Vec<String> = self
                .coordinates(i)
                .into_iter()
                .chain(self.columns.iter().map(|c| c.values[i]))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Writes `<name>.csv` and `<name>.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{name}.csv"));
        let meta_path = dir.join(format!("{name}.meta.json"));
        fs::write(&csv_path, self.to_csv_string()?)?;
        let mut meta = self.metadata.clone();
        meta.insert("axes".into(), serde_json::to_value(&self.axes)?);
        let cols: Vec<Value> = self
            .columns
            .iter()
            .map(|c| serde_json::json!({"name": c.name, "unit": c.unit, "probability": c.probability}))
            .collect();
        meta.insert("columns".into(), Value::from(cols));
        fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok((csv_path, meta_path))
    }
}
