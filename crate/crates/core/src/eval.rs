//! Localization metrics and experiment tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SeedVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scores: Vec<f64>,
    pub predicted: SeedVector,
    pub truth: SeedVector,
    pub wall_time_train: f64,
    pub wall_time_infer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub method: String,
    pub pr: f64,
    pub re: f64,
    pub f1: f64,
    /// `None` when the truth has a single class.
    pub auc: Option<f64>,
    pub pr_at_100: f64,
}

/// Mann–Whitney AUC with average ranks for tied scores.
pub fn auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| truth[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Share of true seeds among the `min(k, N)` highest-scored nodes; ties go
/// to the lowest index.
pub fn precision_at_k(scores: &[f64], truth: &[bool], k: usize) -> f64 {
    let k = k.min(scores.len());
    if k == 0 {
        return 0.0;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx[..k].iter().filter(|&&i| truth[i]).count() as f64 / k as f64
}

pub fn compute_metrics(record: &PredictionRecord, dataset: &str, method: &str) -> Result<MetricsRow> {
    let n = record.truth.len();
    for (what, len) in [("scores", record.scores.len()), ("prediction", record.predicted.len())] {
        if len != n {
            return Err(Error::Invalid(format!("{what} has {len} entries, truth has {n}")));
        }
    }
    if record.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "prediction scores".into() });
    }
    let tp = record.predicted.0.iter().zip(&record.truth.0).filter(|(p, t)| **p && **t).count() as f64;
    let n_pred = record.predicted.count() as f64;
    let n_true = record.truth.count() as f64;
    let pr = if n_pred > 0.0 { tp / n_pred } else { 0.0 };
    let re = if n_true > 0.0 { tp / n_true } else { 0.0 };
    let f1 = if pr + re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 };
    Ok(MetricsRow {
        dataset: dataset.to_string(),
        method: method.to_string(),
        pr,
        re,
        f1,
        auc: auc(&record.scores, &record.truth.0),
        pr_at_100: precision_at_k(&record.scores, &record.truth.0, 100),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Population standard deviation; `n = 0` gives zeros.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Self {
            mean,
            std: var.sqrt(),
            n: v.len(),
        }
    }
}

/// Case-averaged metrics for one (dataset, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub method: String,
    pub cases: usize,
    pub pr: MeanStd,
    pub re: MeanStd,
    pub f1: MeanStd,
    /// Over cases where AUC is defined.
    pub auc: MeanStd,
    pub pr_at_100: MeanStd,
    pub train_seconds: f64,
    pub infer_seconds: MeanStd,
}

pub fn summarize(dataset: &str, method: &str, records: &[PredictionRecord]) -> Result<Summary> {
    let rows = records.iter().map(|r| compute_metrics(r, dataset, method)).collect::<Result<Vec<_>>>()?;
    Ok(Summary {
        dataset: dataset.to_string(),
        method: method.to_string(),
        cases: rows.len(),
        pr: MeanStd::of(rows.iter().map(|r| r.pr)),
        re: MeanStd::of(rows.iter().map(|r| r.re)),
        f1: MeanStd::of(rows.iter().map(|r| r.f1)),
        auc: MeanStd::of(rows.iter().filter_map(|r| r.auc)),
        pr_at_100: MeanStd::of(rows.iter().map(|r| r.pr_at_100)),
        train_seconds: records.iter().map(|r| r.wall_time_train).fold(0.0, f64::max),
        infer_seconds: MeanStd::of(records.iter().map(|r| r.wall_time_infer)),
    })
}

/// One requested cell of an experiment grid; `Err` carries the reason its
/// artifacts could not be loaded.
pub struct GridCell {
    pub dataset: String,
    pub method: String,
    pub records: std::result::Result<Vec<PredictionRecord>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub summaries: Vec<Summary>,
    pub missing: Vec<String>,
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

/// Writes `metrics.csv`, `metrics.md`, `runtime.csv` and `pr_at_100.csv`
/// into `out_dir`. Missing cells are listed in the report and the Markdown
/// footer; the remaining cells are still written.
pub fn run_experiment_grid(cells: Vec<GridCell>, out_dir: &Path) -> Result<GridReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut summaries = Vec::new();
    let mut missing = Vec::new();
    for cell in cells {
        match cell.records {
            Ok(r) if !r.is_empty() => summaries.push(summarize(&cell.dataset, &cell.method, &r)?),
            Ok(_) => missing.push(format!("{}/{}: no cases", cell.dataset, cell.method)),
            Err(e) => missing.push(format!("{}/{}: {e}", cell.dataset, cell.method)),
        }
    }

    let mut csv = String::from("dataset,method,cases,pr,pr_std,re,re_std,f1,f1_std,auc,auc_std,auc_cases,pr_at_100,pr_at_100_std\n");
    for s in &summaries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.dataset,
            s.method,
            s.cases,
            f(s.pr.mean),
            f(s.pr.std),
            f(s.re.mean),
            f(s.re.std),
            f(s.f1.mean),
            f(s.f1.std),
            if s.auc.n > 0 { f(s.auc.mean) } else { String::new() },
            if s.auc.n > 0 { f(s.auc.std) } else { String::new() },
            s.auc.n,
            f(s.pr_at_100.mean),
            f(s.pr_at_100.std)
        );
    }
    write(out_dir, "metrics.csv", &csv)?;

    let mut rt = String::from("dataset,method,train_seconds,infer_seconds_mean,infer_seconds_std\n");
    for s in &summaries {
        let _ = writeln!(rt, "{},{},{:.6},{:.6},{:.6}", s.dataset, s.method, s.train_seconds, s.infer_seconds.mean, s.infer_seconds.std);
    }
    write(out_dir, "runtime.csv", &rt)?;

    let mut p100 = String::from("dataset,method,pr_at_100,pr_at_100_std\n");
    for s in &summaries {
        let _ = writeln!(p100, "{},{},{},{}", s.dataset, s.method, f(s.pr_at_100.mean), f(s.pr_at_100.std));
    }
    write(out_dir, "pr_at_100.csv", &p100)?;

    write(out_dir, "metrics.md", &markdown(&summaries, &missing))?;
    Ok(GridReport { summaries, missing })
}

/// One column group (PR, RE, F1, AUC) per dataset and one row per method,
/// each entry as `mean ± std`.
fn markdown(summaries: &[Summary], missing: &[String]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut methods: Vec<&str> = Vec::new();
    for s in summaries {
        if !datasets.contains(&s.dataset.as_str()) {
            datasets.push(&s.dataset);
        }
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
    }
    let mut out = String::from("| Method |");
    for d in &datasets {
        let _ = write!(out, " {d} PR | {d} RE | {d} F1 | {d} AUC |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(4 * datasets.len()));
    out.push('\n');
    for m in &methods {
        let _ = write!(out, "| {m} |");
        for d in &datasets {
            match summaries.iter().find(|s| s.dataset == *d && s.method == *m) {
                Some(s) => {
                    let auc = if s.auc.n > 0 { format!("{:.3} ± {:.3}", s.auc.mean, s.auc.std) } else { "n/a".into() };
                    let _ = write!(
                        out,
                        " {:.3} ± {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} | {auc} |",
                        s.pr.mean, s.pr.std, s.re.mean, s.re.std, s.f1.mean, s.f1.std
                    );
                }
                None => out.push_str(" – | – | – | – |"),
            }
        }
        out.push('\n');
    }
    if !missing.is_empty() {
        out.push_str("\nMissing:\n");
        let unique: BTreeSet<&String> = missing.iter().collect();
        for m in unique {
            let _ = writeln!(out, "- {m}");
        }
    }
    out
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
}
