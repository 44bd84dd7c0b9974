//! Clip records and JSON-lines manifests.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Smoothness;
use crate::{Error, Result};

/// Per-clip metric slots; `None` means not yet measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipMetrics {
    pub luma_mean: Option<f64>,
    pub mcv: Option<f64>,
    pub hcpr: Option<f64>,
    /// Supplied by an external reconstructor; never computed here.
    pub alignment_loss: Option<f64>,
    pub cs: Option<Smoothness>,
}

impl ClipMetrics {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.luma_mean {
            if !(0.0..=255.0).contains(&l) {
                return Err(Error::invalid(format!("luma_mean {l} outside [0, 255]")));
            }
        }
        let cs = self.cs.map(|c| [("v_mean", c.v_mean), ("a_mean", c.a_mean), ("kappa_mean", c.kappa_mean)]);
        let named = [("mcv", self.mcv), ("hcpr", self.hcpr), ("alignment_loss", self.alignment_loss)]
            .into_iter()
            .filter_map(|(n, v)| v.map(|v| (n, v)))
            .chain(cs.into_iter().flatten());
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Files a clip's metrics are measured from, relative to the manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipFiles {
    /// PPM frames.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<String>,
    /// `T×H×W` confidence maps (TNSR).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<String>,
    /// `T×3` camera positions (TNSR).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub frames: usize,
    #[serde(default)]
    pub metrics: ClipMetrics,
    #[serde(default = "default_keep")]
    pub keep: bool,
    /// Empty when kept.
    #[serde(default)]
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub files: Option<ClipFiles>,
}

fn default_keep() -> bool {
    true
}

impl ClipRecord {
    pub fn new(id: impl Into<String>, source: impl Into<String>, frames: usize) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            frames,
            metrics: ClipMetrics::default(),
            keep: true,
            reason: String::new(),
            files: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.keep && !self.reason.is_empty() {
            return Err(Error::invalid(format!("clip '{}' is kept but has reason '{}'", self.id, self.reason)));
        }
        self.metrics.validate().map_err(|e| Error::invalid(format!("clip '{}': {e}", self.id)))
    }

    pub(crate) fn reject(&mut self, reason: &str) {
        self.keep = false;
        self.reason = reason.to_string();
    }
}

/// Parses one record per non-blank line and validates each.
pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ClipRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
        rec.validate().map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(mut w: W, records: &[ClipRecord]) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(std::io::BufReader::new(f))
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[ClipRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(std::io::BufWriter::new(f), records)
}
