//! Evaluation metrics and benchmark report emission.
//!
//! Suboptimality is the relative objective gap of a feasible prediction;
//! infeasibility is the normalized maximum violation; a prediction is
//! accurate when both are within their tolerances.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Infeasibility acceptance tolerance.
pub const EPS_INF: f64 = 1e-4;
/// Suboptimality acceptance tolerance.
pub const EPS_SUB: f64 = 1e-4;
/// Guard on |f*| in the relative gap denominator.
pub const F_STAR_GUARD: f64 = 1e-10;

/// Relative suboptimality of a feasible prediction:
/// max(0, (f_hat - f_star) / max(|f_star|, guard)). Calling it on an
/// infeasible prediction is a contract violation.
pub fn suboptimality(f_hat: f64, f_star: f64, violation: f64) -> Result<f64> {
    if violation > EPS_INF {
        return Err(Error::Config(format!(
            "suboptimality called on infeasible prediction (p = {violation:.3e})"
        )));
    }
    Ok(((f_hat - f_star) / f_star.abs().max(F_STAR_GUARD)).max(0.0))
}

/// One evaluated test sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub theta_id: u64,
    pub k: usize,
    /// Network forward time, seconds.
    pub time_nn: f64,
    /// Candidate decode time, seconds.
    pub time_decode: f64,
    /// Full online path (prediction + decoding), seconds.
    pub time_online: f64,
    /// Exact branch-and-bound time, when measured.
    pub time_full: Option<f64>,
    /// Node-limited branch-and-bound time, when measured.
    pub time_heuristic: Option<f64>,
    /// Relative suboptimality d >= 0; None when the prediction is
    /// infeasible.
    pub subopt: Option<f64>,
    /// Normalized violation p.
    pub infeas: f64,
}

impl EvalRecord {
    pub fn accurate(&self, eps_inf: f64, eps_sub: f64) -> bool {
        self.infeas <= eps_inf && self.subopt.map_or(false, |d| d <= eps_sub)
    }
}

/// Fraction of records that are feasible within eps_inf and suboptimal
/// within eps_sub.
pub fn accuracy(records: &[EvalRecord], eps_inf: f64, eps_sub: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Config("accuracy over an empty record set".into()));
    }
    let hits = records
        .iter()
        .filter(|r| r.accurate(eps_inf, eps_sub))
        .count();
    Ok(hits as f64 / records.len() as f64)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NAN, f64::max)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Coefficient of variation: std / mean.
pub fn coeff_of_variation(values: &[f64]) -> f64 {
    let mu = mean(values);
    if values.len() < 2 || mu == 0.0 {
        return f64::NAN;
    }
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    var.sqrt() / mu
}

/// One (size, k) row of a benchmark table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub size_param: usize,
    pub n_var: usize,
    pub n_constr: usize,
    pub m_unpruned: usize,
    pub m: usize,
    pub n_best: usize,
    pub mean_time_pred: f64,
    pub max_time_pred: f64,
    pub mean_time_full: f64,
    pub max_time_full: f64,
    pub mean_time_heuristic: f64,
    pub max_time_heuristic: f64,
    pub avg_subopt: f64,
    pub avg_infeas: f64,
    pub accuracy: f64,
}

impl ReportRow {
    /// Aggregate the records of a fixed (size, k) cell. Infeasible
    /// predictions enter avg_subopt at the worst observed suboptimality
    /// (conservative; they are already counted by avg_infeas and accuracy).
    pub fn from_records(
        size_param: usize,
        n_var: usize,
        n_constr: usize,
        m_unpruned: usize,
        m: usize,
        k: usize,
        records: &[EvalRecord],
    ) -> Result<ReportRow> {
        let acc = accuracy(records, EPS_INF, EPS_SUB)?;
        let online: Vec<f64> = records.iter().map(|r| r.time_online).collect();
        let full: Vec<f64> = records.iter().filter_map(|r| r.time_full).collect();
        let heuristic: Vec<f64> = records.iter().filter_map(|r| r.time_heuristic).collect();
        let feas_subopts: Vec<f64> = records.iter().filter_map(|r| r.subopt).collect();
        let worst = if feas_subopts.is_empty() {
            f64::NAN
        } else {
            max(&feas_subopts)
        };
        let subopts: Vec<f64> = records
            .iter()
            .map(|r| r.subopt.unwrap_or(worst))
            .collect();
        let infeas: Vec<f64> = records.iter().map(|r| r.infeas).collect();
        Ok(ReportRow {
            size_param,
            n_var,
            n_constr,
            m_unpruned,
            m,
            n_best: k,
            mean_time_pred: mean(&online),
            max_time_pred: max(&online),
            mean_time_full: mean(&full),
            max_time_full: max(&full),
            mean_time_heuristic: mean(&heuristic),
            max_time_heuristic: max(&heuristic),
            avg_subopt: mean(&subopts),
            avg_infeas: mean(&infeas),
            accuracy: acc,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmitSummary {
    pub csv_path: PathBuf,
    pub json_path: PathBuf,
    /// False when the caller expected more (size, k) cells than provided.
    pub complete: bool,
}

const REPORT_COLUMNS: [&str; 15] = [
    "size_param",
    "n_var",
    "n_constr",
    "M_unpruned",
    "M",
    "n_best",
    "mean_time_pred",
    "max_time_pred",
    "mean_time_full",
    "max_time_full",
    "mean_time_heuristic",
    "max_time_heuristic",
    "avg_subopt",
    "avg_infeas",
    "accuracy",
];

/// Write `<family>.csv` (RFC-4180) plus `<family>_summary.json` with a
/// deterministic column order. `expected_rows` marks the emit as partial
/// when the grid is incomplete.
pub fn emit_report(
    family: &str,
    rows: &[ReportRow],
    expected_rows: Option<usize>,
    out_dir: &Path,
) -> Result<EmitSummary> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{family}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record(&[
            r.size_param.to_string(),
            r.n_var.to_string(),
            r.n_constr.to_string(),
            r.m_unpruned.to_string(),
            r.m.to_string(),
            r.n_best.to_string(),
            format!("{:.9e}", r.mean_time_pred),
            format!("{:.9e}", r.max_time_pred),
            format!("{:.9e}", r.mean_time_full),
            format!("{:.9e}", r.max_time_full),
            format!("{:.9e}", r.mean_time_heuristic),
            format!("{:.9e}", r.max_time_heuristic),
            format!("{:.9e}", r.avg_subopt),
            format!("{:.9e}", r.avg_infeas),
            format!("{:.9}", r.accuracy),
        ])?;
    }
    w.flush()?;
    drop(w);

    let json_path = out_dir.join(format!("{family}_summary.json"));
    let complete = expected_rows.map_or(true, |n| rows.len() >= n);
    let summary = serde_json::json!({
        "family": family,
        "rows": rows,
        "complete": complete,
    });
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(EmitSummary {
        csv_path,
        json_path,
        complete,
    })
}
