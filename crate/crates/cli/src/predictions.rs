//! Prediction directories. Every method writes the same layout:
//!
//! ```text
//! run.json                  method, dataset label, timings
//! case_{i}.csv              node,score,predicted,truth (one row per source node)
//! case_{i}_trace.json       method-specific diagnostics (optional)
//! resolved_config.toml
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cnsl_core::dataset::Dataset;
use cnsl_core::eval::PredictionRecord;
use cnsl_core::graph::SeedVector;

use crate::error::{io_err, CliError, CliResult};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub method: String,
    pub dataset: String,
    pub dataset_dir: String,
    /// Index of each case within the dataset's samples.
    pub sample_indices: Vec<usize>,
    pub n_source: usize,
    pub train_seconds: f64,
    pub infer_seconds: Vec<f64>,
}

/// Column-group label of a dataset, e.g. `cross-platform LT2IC` or
/// `g2s D1`.
pub fn dataset_label(d: &Dataset) -> String {
    let variant = match d.meta.generator.get("seed_mode").and_then(|m| m.as_str()) {
        Some(mode) if d.meta.diffusion.is_empty() => mode,
        _ => d.meta.diffusion.as_str(),
    };
    if variant.is_empty() {
        d.meta.kind.clone()
    } else {
        format!("{} {variant}", d.meta.kind)
    }
}

fn case_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("case_{i}.csv"))
}

pub fn write_case(dir: &Path, i: usize, scores: &[f64], predicted: &SeedVector, truth: &SeedVector) -> CliResult<()> {
    let mut out = String::from("node,score,predicted,truth\n");
    for (v, s) in scores.iter().enumerate() {
        let _ = writeln!(out, "{v},{s},{},{}", u8::from(predicted.0[v]), u8::from(truth.0[v]));
    }
    let p = case_path(dir, i);
    std::fs::write(&p, out).map_err(|e| io_err(&p, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(cnsl_core::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_case(path: &Path, n: usize) -> CliResult<(Vec<f64>, SeedVector, SeedVector)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, msg: &str| CliError::Runtime(format!("{}:{line}: {msg}", path.display()));
    let mut scores = Vec::with_capacity(n);
    let (mut pred, mut truth) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (ln, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(ln + 1, "expected node,score,predicted,truth"));
        }
        let score: f64 = cols[1].parse().map_err(|_| bad(ln + 1, "score is not a number"))?;
        let bit = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(ln + 1, "predicted/truth must be 0 or 1")),
        };
        scores.push(score);
        pred.push(bit(cols[2])?);
        truth.push(bit(cols[3])?);
    }
    if scores.len() != n {
        return Err(bad(0, &format!("{} rows, expected {n}", scores.len())));
    }
    Ok((scores, SeedVector(pred), SeedVector(truth)))
}

/// Loads a prediction directory into evaluation records.
pub fn read_predictions(dir: &Path) -> CliResult<(RunInfo, Vec<PredictionRecord>)> {
    let p = dir.join(RUN_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
    let info: RunInfo = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    let records = (0..info.sample_indices.len())
        .map(|i| {
            let (scores, predicted, truth) = read_case(&case_path(dir, i), info.n_source)?;
            Ok(PredictionRecord {
                scores,
                predicted,
                truth,
                wall_time_train: info.train_seconds,
                wall_time_infer: info.infer_seconds.get(i).copied().unwrap_or(0.0),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((info, records))
}

/// Every directory at or below `root` holding a `run.json`, sorted.
pub fn find_prediction_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join(RUN_FILE).is_file() {
            found.push(d.clone());
        }
        for entry in std::fs::read_dir(&d).map_err(|e| io_err(&d, e))? {
            let path = entry.map_err(|e| io_err(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = SeedVector::from_support(4, &[1]);
        let pred = SeedVector::from_support(4, &[1, 2]);
        let scores = vec![0.1, 0.9, 0.5, 1.0 / 3.0];
        write_case(dir.path(), 0, &scores, &pred, &truth).unwrap();
        let info = RunInfo {
            method: "m".into(),
            dataset: "d".into(),
            dataset_dir: ".".into(),
            sample_indices: vec![7],
            n_source: 4,
            train_seconds: 1.5,
            infer_seconds: vec![0.25],
        };
        write_json(&dir.path().join(RUN_FILE), &info).unwrap();
        let (back, recs) = read_predictions(dir.path()).unwrap();
        assert_eq!(back, info);
        assert_eq!(recs[0].scores, scores);
        assert_eq!((&recs[0].predicted, &recs[0].truth), (&pred, &truth));
        assert_eq!(find_prediction_dirs(dir.path()).unwrap(), vec![dir.path().to_path_buf()]);
    }
}
