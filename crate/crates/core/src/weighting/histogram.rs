use serde::{Deserialize, Serialize};

pub const HIST_BINS: usize = 11;
/// Lower clip for log10 probabilities; empty bins report this value.
pub const LOG_PROB_FLOOR: f64 = -10.0;

/// Distribution of applied weights at one training step: `HIST_BINS` equal
/// bins over `[0, 1]` (the last bin closed on the right).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub step: u64,
    pub bin_edges: Vec<f64>,
    pub log10_probability: Vec<f64>,
}

/// Bin of a weight; values outside `[0, 1]` land in the end bins.
pub fn bin_index(w: f64) -> usize {
    ((w.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

pub fn histogram_record(step: u64, weights: &[f64]) -> HistogramRecord {
    let mut counts = [0u64; HIST_BINS];
    for &w in weights {
        counts[bin_index(w)] += 1;
    }
    histogram_from_counts(step, &counts)
}

/// Builds a record from per-bin counts (missing trailing bins count as 0).
pub fn histogram_from_counts(step: u64, counts: &[u64]) -> HistogramRecord {
    let bin_edges: Vec<f64> = (0..=HIST_BINS).map(|i| i as f64 / HIST_BINS as f64).collect();
    let total = counts.iter().sum::<u64>().max(1) as f64;
    let log10_probability = (0..HIST_BINS)
        .map(|b| match counts.get(b).copied().unwrap_or(0) {
            0 => LOG_PROB_FLOOR,
            c => (c as f64 / total).log10().max(LOG_PROB_FLOOR),
        })
        .collect();
    HistogramRecord {
        step,
        bin_edges,
        log10_probability,
    }
}
