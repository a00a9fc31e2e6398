//! Manifest and CSV artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sclm_core::solver::Monitor;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub metrics: BTreeMap<String, Value>,
    pub checks: BTreeMap<String, bool>,
    pub pass: bool,
    /// Artifact paths relative to the output directory.
    pub files: Vec<String>,
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes files below one directory and remembers what was written.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    fn open(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    /// CSV with a header and pre-formatted rows.
    pub fn csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.open(rel)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut w = self.open(rel)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn text(&mut self, rel: &str, body: &str) -> Result<()> {
        let mut w = self.open(rel)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn monitors(&mut self, rel: &str, monitors: &[Monitor]) -> Result<()> {
        let rows: Vec<Vec<String>> = monitors
            .iter()
            .map(|m| vec![fmt(m.t), fmt(m.l2), fmt(m.grad_energy), fmt(m.mass)])
            .collect();
        self.csv(rel, &["t", "l2", "grad_energy", "mass"], &rows)
    }

    /// `(t, node, u)` rows, one block per snapshot time.
    pub fn fields(
        &mut self,
        rel: &str,
        times: &[f64],
        nodal: &[ndarray::Array1<f64>],
    ) -> Result<()> {
        let mut w = self.open(rel)?;
        sclm_core::function_space::write_nodal_csv(&mut w, times, nodal)?;
        w.flush()?;
        Ok(())
    }

    pub fn coefficients(
        &mut self,
        rel: &str,
        times: &[f64],
        coeffs: &[ndarray::Array1<f64>],
    ) -> Result<()> {
        let mut w = self.open(rel)?;
        sclm_core::function_space::write_coefficients_csv(&mut w, times, coeffs)?;
        w.flush()?;
        Ok(())
    }
}

/// Metric and check accumulator of one experiment.
#[derive(Default, Debug)]
pub struct Report {
    pub metrics: BTreeMap<String, Value>,
    pub checks: BTreeMap<String, bool>,
}

impl Report {
    pub fn metric(&mut self, name: &str, value: impl Serialize) {
        self.metrics.insert(
            name.to_string(),
            serde_json::to_value(value).expect("metric serializes"),
        );
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        self.checks.insert(name.to_string(), ok);
    }

    pub fn pass(&self) -> bool {
        self.checks.values().all(|&c| c)
    }
}
