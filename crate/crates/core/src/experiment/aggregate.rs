use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_error, ExperimentError, Result};
use crate::train::MetricsRow;
use crate::weighting::{HistogramRecord, HIST_BINS, LOG_PROB_FLOOR};

/// Metric columns averaged across seeds, in CSV order after `step`.
pub const AGG_COLUMNS: [&str; 8] = [
    "episode",
    "eval_return_mean",
    "eval_return_std",
    "loss_qtot",
    "loss_qstar",
    "w_raw_mean",
    "w_raw_zero_frac",
    "epsilon",
];

fn columns(r: &MetricsRow) -> [f64; 8] {
    [
        r.episode as f64,
        r.eval_return_mean,
        r.eval_return_std,
        r.loss_qtot,
        r.loss_qstar,
        r.w_raw_mean,
        r.w_raw_zero_frac,
        r.epsilon,
    ]
}

/// Mean and population standard deviation of every metric column across
/// seeds, per evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: Vec<PathBuf>,
    pub steps: Vec<u64>,
    /// `[point][column]`.
    pub mean: Vec<[f64; 8]>,
    pub std: Vec<[f64; 8]>,
}

impl Aggregate {
    pub fn header() -> String {
        let mut h = String::from("step");
        for c in AGG_COLUMNS {
            h.push_str(&format!(",{c}_mean,{c}_std"));
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            out.push_str(&step.to_string());
            for c in 0..AGG_COLUMNS.len() {
                out.push_str(&format!(",{},{}", self.mean[i][c], self.std[i][c]));
            }
            out.push('\n');
        }
        out
    }

    /// Mean across seeds of each seed's final-window return.
    pub fn final_return(&self, window: usize) -> Option<f64> {
        let tail = &self.mean[self.mean.len().saturating_sub(window)..];
        (!tail.is_empty()).then(|| tail.iter().map(|m| m[1]).sum::<f64>() / tail.len() as f64)
    }
}

/// Aggregates the `metrics.csv` of each seed directory. Rows are matched by
/// evaluation index; extra trailing rows of longer runs are dropped.
/// Seeds may log the same evaluation at slightly different steps; the
/// `step` column is the first seed's, and steps more than half an
/// evaluation interval apart are an error.
pub fn aggregate_runs(seed_dirs: &[PathBuf]) -> Result<Aggregate> {
    if seed_dirs.is_empty() {
        return Err(ExperimentError::Config("nothing to aggregate".into()));
    }
    let tables = seed_dirs
        .iter()
        .map(|d| Ok(MetricsRow::read_csv(&d.join("metrics.csv"))?))
        .collect::<Result<Vec<_>>>()?;
    let len = tables.iter().map(Vec::len).min().unwrap_or(0);
    let mut agg = Aggregate {
        runs: seed_dirs.to_vec(),
        steps: Vec::with_capacity(len),
        mean: Vec::with_capacity(len),
        std: Vec::with_capacity(len),
    };
    let n = tables.len() as f64;
    let first = &tables[0];
    for i in 0..len {
        let step = first[i].step;
        let spacing = match i {
            _ if len < 2 => None,
            0 => Some(first[1].step - first[0].step),
            _ => Some(step - first[i - 1].step),
        };
        if let Some(spacing) = spacing {
            if let Some((t, _)) = tables
                .iter()
                .enumerate()
                .find(|(_, t)| 2 * t[i].step.abs_diff(step) >= spacing.max(1))
            {
                return Err(ExperimentError::Config(format!(
                    "evaluation {i} is at step {step} in {} but at step {} in {}",
                    seed_dirs[0].display(),
                    tables[t][i].step,
                    seed_dirs[t].display()
                )));
            }
        }
        let rows: Vec<[f64; 8]> = tables.iter().map(|t| columns(&t[i])).collect();
        let mut mean = [0.0; 8];
        let mut std = [0.0; 8];
        for c in 0..8 {
            mean[c] = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            std[c] = (rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt();
        }
        agg.steps.push(step);
        agg.mean.push(mean);
        agg.std.push(std);
    }
    Ok(agg)
}

/// Weight-distribution heatmap: one row per recorded training step, one
/// column per weight bin, values log10 probabilities clipped at the floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapData {
    pub bins: usize,
    pub bin_edges: Vec<f64>,
    pub floor: f64,
    pub steps: Vec<u64>,
    pub log10_probability: Vec<Vec<f64>>,
}

pub fn export_heatmap_data(run_dir: &Path) -> Result<HeatmapData> {
    let path = run_dir.join("weights.jsonl");
    let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
    let mut data = HeatmapData {
        bins: HIST_BINS,
        bin_edges: (0..=HIST_BINS).map(|i| i as f64 / HIST_BINS as f64).collect(),
        floor: LOG_PROB_FLOOR,
        steps: Vec::new(),
        log10_probability: Vec::new(),
    };
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: HistogramRecord = serde_json::from_str(line).map_err(|e| ExperimentError::Parse {
            path: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?;
        if rec.log10_probability.len() != HIST_BINS {
            return Err(ExperimentError::Parse {
                path: format!("{}:{}", path.display(), i + 1),
                message: format!("expected {HIST_BINS} bins, got {}", rec.log10_probability.len()),
            });
        }
        data.steps.push(rec.step);
        data.log10_probability
            .push(rec.log10_probability.iter().map(|p| p.max(LOG_PROB_FLOOR)).collect());
    }
    Ok(data)
}
