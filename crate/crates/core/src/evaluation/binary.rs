//! Binary perplexity and ROC-AUC for single-state predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    /// `exp(-mean(b ln p + (1-b) ln(1-p)))`.
    pub perplexity: f64,
    /// Probability a random positive outranks a random negative, ties at
    /// half weight. Absent when labels are degenerate.
    pub auc: Option<f64>,
}

/// Metrics for predicted probabilities `p_i in (0,1)` against labels.
pub fn binary_metrics(probs: &[f64], labels: &[bool]) -> Result<BinaryMetrics> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::data("binary metrics need matching, non-empty inputs"));
    }
    if probs.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::data("probabilities must lie strictly inside (0, 1)"));
    }
    let mut nll = 0.0;
    for (&p, &b) in probs.iter().zip(labels) {
        nll -= if b { p.ln() } else { (1.0 - p).ln() };
    }
    let perplexity = (nll / probs.len() as f64).exp();
    Ok(BinaryMetrics { perplexity, auc: auc(probs, labels) })
}

/// Rank-sum AUC with average ranks for ties.
fn auc(probs: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&b| b).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    // Average ranks across tied scores, then the Mann-Whitney statistic.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut jj = i;
        while jj + 1 < order.len() && probs[order[jj + 1]] == probs[order[i]] {
            jj += 1;
        }
        let avg_rank = (i + jj) as f64 / 2.0 + 1.0; // 1-based
        for &idx in &order[i..=jj] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = jj + 1;
    }
    let u = rank_sum_pos - (positives * (positives + 1)) as f64 / 2.0;
    Some(u / (positives as f64 * negatives as f64))
}
