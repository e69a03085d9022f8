//! File formats: CSV outputs, data ingestion, and the run manifest.
//!
//! Every float is written with 17 significant digits so parsing the file
//! reproduces the exact double; rerunning a command from its manifest
//! must yield byte-identical outputs.

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::diagnostics::StudyReport;
use crate::error::{Result, SmeError};
use crate::simulate::Path;

/// 17-significant-digit decimal form, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        // integral values print exactly without an exponent
        format!("{x}")
    } else {
        format!("{x:.16e}")
    }
}

fn write_file(path: &FsPath, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| SmeError::io(parent.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| SmeError::io(path.display().to_string(), e))
}

/// Path CSV: header `n,s_1,...,s_k`, one row per step.
pub fn path_to_csv(p: &Path) -> String {
    let k = p.dim();
    let mut out = String::from("n");
    for i in 1..=k {
        out.push_str(&format!(",s_{i}"));
    }
    out.push('\n');
    for (n, row) in p.rows().enumerate() {
        out.push_str(&(n + 1).to_string());
        for v in row {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_path_csv(file: &FsPath, p: &Path) -> Result<()> {
    write_file(file, &path_to_csv(p))
}

/// Reads a data CSV whose header must name exactly the observable
/// coordinates `s_{i+1}` for each mask index `i`, in mask order.
pub fn read_data_csv(file: &FsPath, mask: &[usize]) -> Result<Vec<Vec<f64>>> {
    let text =
        fs::read_to_string(file).map_err(|e| SmeError::io(file.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SmeError::Data("empty data file".into()))?;
    let expected: Vec<String> = mask.iter().map(|i| format!("s_{}", i + 1)).collect();
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    // an optional leading step column is tolerated
    let offset = usize::from(got.first() == Some(&"n"));
    if got[offset..] != expected[..] {
        return Err(SmeError::Data(format!(
            "data columns {:?} do not match the observable mask (expected {:?})",
            &got[offset..],
            expected
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != got.len() {
            return Err(SmeError::Data(format!(
                "row {} has {} fields, header has {}",
                lineno + 2,
                fields.len(),
                got.len()
            )));
        }
        let mut row = Vec::with_capacity(mask.len());
        for f in &fields[offset..] {
            let v: f64 = f.trim().parse().map_err(|_| {
                SmeError::Data(format!("row {}: '{}' is not a number", lineno + 2, f))
            })?;
            if !v.is_finite() {
                return Err(SmeError::Data(format!(
                    "row {}: non-finite value {v}",
                    lineno + 2
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SmeError::Data("data file has a header but no rows".into()));
    }
    Ok(rows)
}

/// Moment report CSV: `name,value,std_error`.
pub fn moments_to_csv(names: &[String], values: &[f64], std_errors: Option<&[f64]>) -> String {
    let mut out = String::from("name,value,std_error\n");
    for (i, (name, v)) in names.iter().zip(values).enumerate() {
        let se = std_errors.map(|s| fmt_f64(s[i])).unwrap_or_default();
        out.push_str(&format!("{name},{},{se}\n", fmt_f64(*v)));
    }
    out
}

/// Results CSV: `N,theta_1..theta_l,objective`, one row per entry.
pub fn results_to_csv(rows: &[(usize, Vec<f64>, f64)], l: usize) -> String {
    let mut out = String::from("N");
    for i in 1..=l {
        out.push_str(&format!(",theta_{i}"));
    }
    out.push_str(",objective\n");
    for (n, theta, obj) in rows {
        out.push_str(&n.to_string());
        for t in theta {
            out.push(',');
            out.push_str(&fmt_f64(*t));
        }
        out.push(',');
        out.push_str(&fmt_f64(*obj));
        out.push('\n');
    }
    out
}

/// Study evidence CSV: the report's columns and rows.
pub fn study_to_csv(report: &StudyReport) -> String {
    let mut out = report.columns.join(",");
    out.push('\n');
    for row in &report.rows {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Plain-text verdict summary, one PASS/FAIL line per verdict.
pub fn study_to_text(report: &StudyReport) -> String {
    let mut out = format!("study: {}\nmodel: {}\n", report.study, report.model);
    for (k, v) in &report.inputs {
        out.push_str(&format!("input {k} = {v}\n"));
    }
    for v in &report.verdicts {
        out.push_str(&format!(
            "{} [row {}] {} -- {}\n",
            if v.passed { "PASS" } else { "FAIL" },
            v.evidence_row,
            v.criterion,
            v.detail
        ));
    }
    out.push_str(&format!(
        "overall: {}\n",
        if report.passed() { "PASS" } else { "FAIL" }
    ));
    out
}

pub fn write_study(dir: &FsPath, report: &StudyReport) -> Result<(PathBuf, PathBuf)> {
    let csv = dir.join(format!("{}_evidence.csv", report.study));
    let txt = dir.join(format!("{}_verdicts.txt", report.study));
    write_file(&csv, &study_to_csv(report))?;
    write_file(&txt, &study_to_text(report))?;
    Ok((csv, txt))
}

/// The manifest: embedded normalized config, command identity, seeds and
/// checksums of every file the run wrote. Feeding a manifest back as
/// `--config` re-executes the identical run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: RunSection,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub command: String,
    pub version: String,
    /// Extra command-line arguments that shaped the run (kept as text so
    /// a rerun can reproduce them exactly).
    pub args: Vec<String>,
    pub files: Vec<FileChecksum>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileChecksum {
    pub name: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: ExperimentConfig) -> Self {
        RunManifest {
            run: RunSection {
                command: command.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                args,
                files: Vec::new(),
            },
            config,
        }
    }

    /// Records a file's checksum (name is relative to the output dir).
    pub fn record_file(&mut self, dir: &FsPath, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes =
            fs::read(&path).map_err(|e| SmeError::io(path.display().to_string(), e))?;
        self.run.files.push(FileChecksum {
            name: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, dir: &FsPath) -> Result<PathBuf> {
        let path = dir.join("manifest.toml");
        let text = toml::to_string_pretty(self)
            .map_err(|e| SmeError::Config(format!("manifest serialization: {e}")))?;
        write_file(&path, &text)?;
        Ok(path)
    }

    pub fn read(path: &FsPath) -> Result<RunManifest> {
        let text =
            fs::read_to_string(path).map_err(|e| SmeError::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| SmeError::Config(format!("manifest parse: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ThresholdJump;
    use crate::simulate::{simulate_path, ShockStream};
    use crate::state_space::Point;

    #[test]
    fn floats_round_trip_through_the_csv_format() {
        for &x in &[0.1, -1.0 / 3.0, 1e-300, 2.0f64.powi(-53), 12345.0, 0.0] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn path_csv_schema() {
        let m = ThresholdJump::new();
        let p = simulate_path(
            &m,
            &Point::scalar(1.0).unwrap(),
            ShockStream::new(1, 0),
            &[0.0],
            3,
        )
        .unwrap();
        let csv = path_to_csv(&p);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "n,s_1");
        assert_eq!(csv.lines().count(), 4);
        assert!(lines.next().unwrap().starts_with("1,"));
    }

    #[test]
    fn data_csv_round_trip_and_mask_validation() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("data.csv");
        let m = ThresholdJump::new();
        let p = simulate_path(
            &m,
            &Point::scalar(1.0).unwrap(),
            ShockStream::new(3, 0),
            &[0.2],
            50,
        )
        .unwrap();
        write_path_csv(&file, &p).unwrap();
        let rows = read_data_csv(&file, &[0]).unwrap();
        assert_eq!(rows.len(), 50);
        for (n, row) in rows.iter().enumerate() {
            assert_eq!(row[0].to_bits(), p.state(n)[0].to_bits());
        }
        // wrong mask is a structured failure naming the columns
        let err = read_data_csv(&file, &[1]).unwrap_err();
        assert!(format!("{err}").contains("observable mask"));
    }

    #[test]
    fn manifest_records_checksums_and_reruns() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_toml_str("[model]\nid = \"threshold\"")
            .unwrap()
            .normalize()
            .unwrap();
        std::fs::write(dir.path().join("x.csv"), "n,s_1\n1,0.5\n").unwrap();
        let mut m = RunManifest::new("simulate", vec!["--theta".into(), "0".into()], cfg);
        m.record_file(dir.path(), "x.csv").unwrap();
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back.run.command, "simulate");
        assert_eq!(back.run.files[0].sha256, m.run.files[0].sha256);
        // a manifest is accepted wherever a config is
        let text = std::fs::read_to_string(&path).unwrap();
        let cfg2 = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg2.model.id, "threshold");
    }
}
