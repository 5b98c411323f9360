//! Handcrafted history features for the regression baseline.
//!
//! All features are computed from timesteps strictly before the prediction
//! step (no lookahead), except the current covariate values, which are
//! pre-transition and therefore available.

use crate::corpus::{CareerSequence, OccId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryFeatures {
    /// `y_{t-1}`, or bos at the first step.
    pub recent_job: OccId,
    /// `y_{t-2}`, or bos.
    pub prior_job: OccId,
    /// Current (pre-transition) value of every covariate.
    pub cov_values: Vec<u32>,
    /// Whether each covariate changed between the previous and current step.
    pub cov_changed: Vec<bool>,
    /// More than one year since the most recent observed job.
    pub gap: bool,
    /// Length of the run of the current job ending at the previous step.
    pub years_in_current_job: f64,
    /// Number of observed steps before this one.
    pub total_years_observed: f64,
}

/// Compute features for prediction step `t` (0-based, `0 <= t < T`).
pub fn extract_features(seq: &CareerSequence, t: usize, vocab: &Vocabulary) -> Result<HistoryFeatures> {
    if t >= seq.len() {
        return Err(Error::data(format!("step {t} out of range for T={}", seq.len())));
    }
    let bos = vocab.bos_id();
    let no_obs = vocab.no_obs_id();
    let recent_job = seq.prev_job(t, bos);
    let prior_job = if t >= 2 { seq.jobs[t - 2] } else { bos };

    let num_cov = vocab.covariates().len();
    let mut cov_values = Vec::with_capacity(num_cov);
    let mut cov_changed = Vec::with_capacity(num_cov);
    for c in 0..num_cov {
        cov_values.push(seq.cov_at(c, t));
        cov_changed.push(t >= 1 && seq.cov_at(c, t) != seq.cov_at(c, t - 1));
    }

    // Most recent *observed* job: skip no-observation fill steps.
    let last_observed =
        (0..t).rev().find(|&k| Some(seq.jobs[k]) != no_obs);
    let gap = match last_observed {
        Some(k) => seq.years[t] - seq.years[k] > 1,
        None => false,
    };

    let years_in_current_job = if t == 0 {
        0.0
    } else {
        let current = seq.jobs[t - 1];
        (0..t).rev().take_while(|&k| seq.jobs[k] == current).count() as f64
    };

    Ok(HistoryFeatures {
        recent_job,
        prior_job,
        cov_values,
        cov_changed,
        gap,
        years_in_current_job,
        total_years_observed: t as f64,
    })
}

/// Dense feature-vector layout for a vocabulary: one-hot blocks for the
/// recent and prior jobs (including the bos slot) and each covariate,
/// then per-covariate changed dummies, the gap dummy, the two continuous
/// features, and an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLayout {
    pub num_occupations: usize,
    pub cov_cards: Vec<usize>,
}

impl FeatureLayout {
    pub fn new(vocab: &Vocabulary) -> Self {
        FeatureLayout {
            num_occupations: vocab.num_occupations(),
            cov_cards: vocab.covariates().iter().map(|s| s.cardinality()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        let occ_block = self.num_occupations + 1; // + bos slot
        2 * occ_block + self.cov_cards.iter().sum::<usize>() + self.cov_cards.len() + 4
    }

    /// Active `(index, value)` pairs for a feature vector; at most
    /// `2 + C + C + 4` entries.
    pub fn encode(&self, f: &HistoryFeatures, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let occ_block = self.num_occupations + 1;
        out.push((f.recent_job as usize, 1.0));
        out.push((occ_block + f.prior_job as usize, 1.0));
        let mut offset = 2 * occ_block;
        for (c, &card) in self.cov_cards.iter().enumerate() {
            out.push((offset + f.cov_values[c] as usize, 1.0));
            offset += card;
        }
        for (c, &changed) in f.cov_changed.iter().enumerate() {
            if changed {
                out.push((offset + c, 1.0));
            }
        }
        offset += self.cov_cards.len();
        if f.gap {
            out.push((offset, 1.0));
        }
        if f.years_in_current_job != 0.0 {
            out.push((offset + 1, f.years_in_current_job));
        }
        if f.total_years_observed != 0.0 {
            out.push((offset + 2, f.total_years_observed));
        }
        out.push((offset + 3, 1.0)); // intercept
    }
}
