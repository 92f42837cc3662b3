//! File formats: dataset CSV (header t1..tp), experiment records CSV,
//! JSON configs and summaries. All writes are atomic (temp file + rename)
//! so reruns either replace a file completely or not at all.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, ExperimentRecord};
use crate::family::Dataset;

/// Schema tag expected at the top of experiment config files.
pub const EXPERIMENT_SCHEMA: &str = "expfam-experiment/1";

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp_path).map_err(|e| Error::io(path_str(tmp_path), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(path_str(tmp_path), e))?;
        f.sync_all().map_err(|e| Error::io(path_str(tmp_path), e))?;
    }
    fs::rename(tmp_path, path).map_err(|e| Error::io(path_str(path), e))
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

/// Writes a dataset as CSV with header t1,...,tp.
pub fn write_dataset_csv(path: &Path, data: &Dataset<f64>) -> Result<()> {
    let p = data.dim();
    let mut out = String::new();
    let header: Vec<String> = (1..=p).map(|i| format!("t{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in data.stats().outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Reads a dataset CSV (header t1,...,tp, one sample per row).
pub fn read_dataset_csv(path: &Path) -> Result<Dataset<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path_str(path),
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    let p = cols.len();
    for (i, c) in cols.iter().enumerate() {
        let expected = format!("t{}", i + 1);
        if c.trim() != expected {
            return Err(Error::Parse {
                path: path_str(path),
                msg: format!("header column {} is '{}', expected '{expected}'", i + 1, c),
            });
        }
    }
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != p {
            return Err(Error::Parse {
                path: path_str(path),
                msg: format!("line {}: expected {p} columns, got {}", lineno + 2, cells.len()),
            });
        }
        for (i, c) in cells.iter().enumerate() {
            let v: f64 = c.trim().parse().map_err(|_| Error::Parse {
                path: path_str(path),
                msg: format!("line {}, column t{}: bad number '{c}'", lineno + 2, i + 1),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let stats = Array2::from_shape_vec((rows, p), values).map_err(|e| Error::Parse {
        path: path_str(path),
        msg: e.to_string(),
    })?;
    Dataset::new(stats)
}

// ---------------------------------------------------------------------------
// Experiment records CSV
// ---------------------------------------------------------------------------

/// Column names of records.csv, in the declared field order of
/// [`ExperimentRecord`].
pub const RECORD_COLUMNS: &[&str] = &[
    "trial",
    "n",
    "lambda",
    "fisher_risk",
    "regret",
    "l1_risk",
    "support_size_stage1",
    "support_size_stage2",
    "measurement_error",
    "bound_fisher",
    "bound_l1",
    "bound_twostage",
    "eq6_holds",
    "blambda1_holds",
    "lambda_dominates",
    "stage2_fisher_risk",
    "stage2_regret",
    "alpha_star",
    "kappa_min",
    "kappa_max",
    "converged",
    "failed",
    "cone_off_support_l1",
    "cone_on_support_gap_l1",
];

/// Shortest round-tripping decimal representation; NaN prints as `NaN`.
fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    if s == "NaN" {
        Some(f64::NAN)
    } else {
        s.parse().ok()
    }
}

pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&RECORD_COLUMNS.join(","));
    out.push('\n');
    for r in records {
        let cells = [
            r.trial.to_string(),
            r.n.to_string(),
            format_f64(r.lambda),
            format_f64(r.fisher_risk),
            format_f64(r.regret),
            format_f64(r.l1_risk),
            r.support_size_stage1.to_string(),
            r.support_size_stage2.to_string(),
            format_f64(r.measurement_error),
            format_f64(r.bound_fisher),
            format_f64(r.bound_l1),
            format_f64(r.bound_twostage),
            r.eq6_holds.to_string(),
            r.blambda1_holds.to_string(),
            r.lambda_dominates.to_string(),
            format_f64(r.stage2_fisher_risk),
            format_f64(r.stage2_regret),
            format_f64(r.alpha_star),
            format_f64(r.kappa_min),
            format_f64(r.kappa_max),
            r.converged.to_string(),
            r.failed.to_string(),
            format_f64(r.cone_off_support_l1),
            format_f64(r.cone_on_support_gap_l1),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: path_str(path),
        msg: "empty file".into(),
    })?;
    if header != RECORD_COLUMNS.join(",") {
        return Err(Error::Parse {
            path: path_str(path),
            msg: "unexpected header".into(),
        });
    }
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != RECORD_COLUMNS.len() {
            return Err(Error::Parse {
                path: path_str(path),
                msg: format!("line {}: wrong column count", lineno + 2),
            });
        }
        let bad = |col: &str| Error::Parse {
            path: path_str(path),
            msg: format!("line {}: bad value in {col}", lineno + 2),
        };
        let f = |i: usize| parse_f64(c[i]).ok_or_else(|| bad(RECORD_COLUMNS[i]));
        let u = |i: usize| c[i].parse::<usize>().map_err(|_| bad(RECORD_COLUMNS[i]));
        let b = |i: usize| c[i].parse::<bool>().map_err(|_| bad(RECORD_COLUMNS[i]));
        records.push(ExperimentRecord {
            trial: u(0)?,
            n: u(1)?,
            lambda: f(2)?,
            fisher_risk: f(3)?,
            regret: f(4)?,
            l1_risk: f(5)?,
            support_size_stage1: u(6)?,
            support_size_stage2: u(7)?,
            measurement_error: f(8)?,
            bound_fisher: f(9)?,
            bound_l1: f(10)?,
            bound_twostage: f(11)?,
            eq6_holds: b(12)?,
            blambda1_holds: b(13)?,
            lambda_dominates: b(14)?,
            stage2_fisher_risk: f(15)?,
            stage2_regret: f(16)?,
            alpha_star: f(17)?,
            kappa_min: f(18)?,
            kappa_max: f(19)?,
            converged: b(20)?,
            failed: b(21)?,
            cone_off_support_l1: f(22)?,
            cone_on_support_gap_l1: f(23)?,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// JSON configs and reports
// ---------------------------------------------------------------------------

/// Experiment config file: a schema tag plus the config fields inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfigFile {
    pub schema: String,
    #[serde(flatten)]
    pub config: ExperimentConfig,
}

/// Parses and fully validates an experiment config, materializing defaults.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    let file: ExperimentConfigFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path_str(path),
        msg: e.to_string(),
    })?;
    if file.schema != EXPERIMENT_SCHEMA {
        return Err(Error::validation(format!(
            "unsupported schema '{}', expected '{EXPERIMENT_SCHEMA}'",
            file.schema
        )));
    }
    file.config.validate()?;
    Ok(file.config)
}

/// Serializes any report as pretty JSON, atomically. A trailing newline is
/// included so files are diff-friendly.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path_str(path),
        msg: e.to_string(),
    })?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path_str(path), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path_str(path),
        msg: e.to_string(),
    })
}
