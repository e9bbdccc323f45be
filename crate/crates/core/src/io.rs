//! File ingestion and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{Abscissa, CoherenceCurve, CurvePoint, Provenance};
use crate::reconstruct::{Method, PointFlag, ReconstructedSpectrum, SpectrumPoint};

/// Column layout of an ingested coherence file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    /// `time_s,coherence[,uncertainty]`
    TimeCsv,
    /// `mod_frequency_hz,coherence[,uncertainty]`
    FreqCsv,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

fn parse_field(record: &csv::StringRecord, i: usize, line: usize, what: &str) -> Result<f64> {
    let raw = record.get(i).ok_or_else(|| Error::Parse { line, message: format!("missing {what} column") })?;
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse { line, message: format!("{what} `{raw}` is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("{what} is not finite") });
    }
    Ok(v)
}

/// Reads a coherence curve from a CSV file with a header row.
///
/// Columns are positional: abscissa, coherence and an optional
/// uncertainty (zero when absent). Values outside `(0, 1 + 3σ]` are kept
/// but flagged.
pub fn ingest_curve(path: &Path, schema: Schema) -> Result<CoherenceCurve> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse { line: 1, message: "need at least the abscissa and coherence columns".into() });
    }
    let mut points: Vec<CurvePoint> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let x = parse_field(&record, 0, line, "abscissa")?;
        let coherence = parse_field(&record, 1, line, "coherence")?;
        let uncertainty = if record.len() > 2 && !record[2].trim().is_empty() {
            parse_field(&record, 2, line, "uncertainty")?
        } else {
            0.0
        };
        if uncertainty < 0.0 {
            return Err(Error::Parse { line, message: "uncertainty must be non-negative".into() });
        }
        if let Some(prev) = points.last() {
            if !(x > prev.x) {
                return Err(Error::Parse { line, message: format!("abscissa {x} does not increase (previous {})", prev.x) });
            }
        }
        points.push(CurvePoint { x, coherence, uncertainty, flagged: false });
    }
    if points.is_empty() {
        return Err(Error::Parse { line: 1, message: "file holds no data rows".into() });
    }
    let abscissa = match schema {
        Schema::TimeCsv => Abscissa::Time,
        Schema::FreqCsv => Abscissa::ModFrequency,
    };
    CoherenceCurve::new(abscissa, points, None, Provenance::Ingested { path: path.display().to_string() })
}

/// Reads a spectrum written by [`ReconstructedSpectrum::to_csv`].
pub fn read_spectrum(path: &Path, method: Method) -> Result<ReconstructedSpectrum> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let omega = parse_field(&record, 0, line, "omega")?;
        let s = parse_field(&record, 1, line, "spectral density")?;
        let uncertainty = if record.len() > 2 { parse_field(&record, 2, line, "uncertainty")? } else { 0.0 };
        let flag = match record.get(3).map(str::trim) {
            None | Some("ok") | Some("") => PointFlag::Ok,
            Some("clipped") => PointFlag::Clipped,
            Some(other) => return Err(Error::Parse { line, message: format!("unknown flag `{other}`") }),
        };
        points.push(SpectrumPoint { omega, s, uncertainty, flag });
    }
    if points.is_empty() {
        return Err(Error::Parse { line: 1, message: "file holds no data rows".into() });
    }
    Ok(ReconstructedSpectrum { method, raw: points.clone(), points, bins: None, warnings: Vec::new() })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command: its configuration, the hash of
/// that configuration, hashes of inputs and outputs, and crate version.
/// Holds no timestamps, so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
}

/// Single writer for one run's artifacts.
pub struct OutputDir {
    root: PathBuf,
    written: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf(), written: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `name` and reads it back to confirm the contents.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, contents)?;
        if fs::read(&path)? != contents.as_bytes() {
            return Err(Error::Io(std::io::Error::other(format!("{} did not read back intact", path.display()))));
        }
        self.written.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(mut self, command: &str, seed: Option<u64>, config: serde_json::Value, inputs: &[PathBuf]) -> Result<Manifest> {
        let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let inputs = inputs
            .iter()
            .map(|p| Ok(Artifact { path: p.display().to_string(), sha256: sha256_hex(&fs::read(p)?) }))
            .collect::<Result<Vec<_>>>()?;
        let outputs = self.written.iter().map(|(path, sha256)| Artifact { path: path.clone(), sha256: sha256.clone() }).collect();
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            config_sha256,
            inputs,
            outputs,
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "c.csv", "time_s,coherence,uncertainty\n1e-6,0.99,0.01\n2e-6,0.95,0.01\n3e-6,0.9,0.01\n");
        let c = ingest_curve(&p, Schema::TimeCsv).unwrap();
        assert_eq!(c.len(), 3);
        assert!(matches!(c.provenance, Provenance::Ingested { .. }));
    }

    #[test]
    fn above_one_within_tolerance_is_flagged_not_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "c.csv", "mod_frequency_hz,coherence,uncertainty\n1e4,1.2,0.05\n2e4,0.5,0.05\n");
        let c = ingest_curve(&p, Schema::FreqCsv).unwrap();
        assert_eq!(c.points[0].coherence, 1.2);
        assert!(c.points[0].flagged);
        assert!(!c.points[1].flagged);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "bad.csv", "time_s,coherence\n1e-6,0.9\n2e-6,NaN\n");
        match ingest_curve(&p, Schema::TimeCsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let p = write_tmp(&dir, "order.csv", "time_s,coherence\n2e-6,0.9\n1e-6,0.95\n");
        assert!(matches!(ingest_curve(&p, Schema::TimeCsv), Err(Error::Parse { line: 3, .. })));
        let p = write_tmp(&dir, "empty.csv", "time_s,coherence\n");
        assert!(matches!(ingest_curve(&p, Schema::TimeCsv), Err(Error::Parse { .. })));
        let p = write_tmp(&dir, "narrow.csv", "time_s\n1e-6\n");
        assert!(matches!(ingest_curve(&p, Schema::TimeCsv), Err(Error::Parse { line: 1, .. })));
        let p = write_tmp(&dir, "short.csv", "time_s,coherence\n1e-6\n");
        assert!(matches!(ingest_curve(&p, Schema::TimeCsv), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn manifest_lists_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", "x\n1\n").unwrap();
        let m = out.finish("test", Some(3), serde_json::json!({"k": 1}), &[]).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs[0].sha256, sha256_hex(b"x\n1\n"));
        assert!(dir.path().join("manifest.json").exists());
    }
}
