//! Artifact directory layout, CSV and plot writers, and the manifest.
//!
//! Numbers are written with the shortest representation that round-trips,
//! so identical computations give byte-identical files. Every write goes
//! through a temporary file and a rename.

use std::fs;
use std::path::{Path, PathBuf};

use nonlocal_core::grid::io::write_atomic;
use serde_json::{json, Map, Value};

use crate::error::{HarnessError, Result};

pub const SCHEMA: u32 = 1;

/// Shortest round-trip decimal form, in exponent notation outside
/// `[1e-5, 1e16)`.
pub fn num(v: f64) -> String {
    if v == 0.0 || (v.is_finite() && (1e-5..1e16).contains(&v.abs())) {
        format!("{v}")
    } else if v.is_finite() {
        format!("{v:e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Debug)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Artifacts> {
        for sub in ["", "eigen", "checkpoints", "plots", "stages"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        }
        Ok(Artifacts {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&self, index: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("u_{index:04}.json"))
    }

    pub fn eigenfunction(&self, radius: f64) -> PathBuf {
        self.root.join("eigen").join(format!("H_R{}.json", num(radius)))
    }

    pub fn barrier_csv(&self, radius: f64) -> PathBuf {
        self.root.join(format!("barrier_R{}.csv", num(radius)))
    }

    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(format!("{name}.dat"))
    }

    fn marker(&self, stage: &str) -> PathBuf {
        self.root.join("stages").join(format!("{stage}.done"))
    }

    pub fn require(&self, path: PathBuf, stage: &'static str) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(HarnessError::MissingArtifact { path, stage })
        }
    }

    pub fn write_bytes(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes).map_err(|e| match e {
            nonlocal_core::Error::Io(io) => HarnessError::io(path, io),
            other => other.into(),
        })
    }

    pub fn write_csv(&self, path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::io(path, e.into_error()))?;
        self.write_bytes(path, &bytes)
    }

    /// Header plus rows of raw strings.
    pub fn read_csv(&self, path: &Path, stage: &'static str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
        let path = self.require(path.to_path_buf(), stage)?;
        let mut r = csv::Reader::from_path(&path)?;
        let header = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_owned).collect());
        }
        Ok((header, rows))
    }

    /// Two-column series with a header naming the axes.
    pub fn write_plot(&self, name: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<()> {
        let mut text = format!("# {x_label} {y_label}\n");
        for (x, y) in points {
            text.push_str(&format!("{} {}\n", num(*x), num(*y)));
        }
        self.write_bytes(&self.plot(name), text.as_bytes())
    }

    pub fn write_json(&self, path: &Path, value: &Value) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(path, &bytes)
    }

    pub fn read_json(&self, path: &Path, stage: &'static str) -> Result<Value> {
        let path = self.require(path.to_path_buf(), stage)?;
        let bytes = fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Merges `entry` under `stages.<stage>` in the manifest.
    pub fn record_stage(&self, canonical_config: &str, stage: &str, entry: Value) -> Result<()> {
        let path = self.path("manifest.json");
        let mut manifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice::<Value>(&bytes)?,
            Err(_) => Value::Object(Map::new()),
        };
        let config: Value = serde_json::from_str(canonical_config)?;
        if manifest.get("config") != Some(&config) {
            manifest = json!({ "schema": SCHEMA, "config": config, "stages": {} });
        }
        manifest["schema"] = json!(SCHEMA);
        manifest["stages"][stage] = entry;
        self.write_json(&path, &manifest)
    }

    pub fn mark_done(&self, stage: &str, canonical_config: &str) -> Result<()> {
        self.write_bytes(&self.marker(stage), canonical_config.as_bytes())
    }

    /// `Some(true)` when the stage finished with this configuration,
    /// `Some(false)` when it finished with another one.
    pub fn done_with(&self, stage: &str, canonical_config: &str) -> Option<bool> {
        fs::read_to_string(self.marker(stage))
            .ok()
            .map(|c| c == canonical_config)
    }

    pub fn clear_markers(&self) -> Result<()> {
        let dir = self.root.join("stages");
        for entry in fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))? {
            let entry = entry.map_err(|e| HarnessError::io(&dir, e))?;
            fs::remove_file(entry.path()).map_err(|e| HarnessError::io(entry.path(), e))?;
        }
        Ok(())
    }
}

pub fn parse_num(path: &Path, s: &str) -> Result<f64> {
    s.parse().map_err(|_| HarnessError::MalformedArtifact {
        path: path.to_path_buf(),
        reason: format!("`{s}` is not a number"),
    })
}
