//! Held-out perplexity, decomposed by transition category.
//!
//! Every prediction step falls in exactly one category: a consecutive
//! repeat (`y_t = y_{t-1}`), a non-consecutive repeat (`y_t` appeared
//! earlier but not last year), or a new job. Perplexity is the exponential
//! of the token-mean negative log-likelihood; a uniform model over `J`
//! outcomes scores exactly `J`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, OccId};
use crate::error::{Error, Result};
use crate::models::{OccupationModel, SequenceView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCategory {
    ConsecutiveRepeat,
    NonConsecutiveRepeat,
    NewJob,
}

/// Category of prediction step `t` (0-based) in a job sequence.
pub fn classify_step(jobs: &[OccId], t: usize) -> TransitionCategory {
    if t >= 1 && jobs[t] == jobs[t - 1] {
        TransitionCategory::ConsecutiveRepeat
    } else if t >= 2 && jobs[..t - 1].contains(&jobs[t]) {
        TransitionCategory::NonConsecutiveRepeat
    } else {
        TransitionCategory::NewJob
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub tokens: u64,
    /// Absent when the category has no tokens.
    pub perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_perplexity: f64,
    pub total_tokens: u64,
    pub consecutive_repeat: CategoryMetrics,
    pub non_consecutive_repeat: CategoryMetrics,
    pub new_job: CategoryMetrics,
}

impl EvalReport {
    pub fn category(&self, cat: TransitionCategory) -> &CategoryMetrics {
        match cat {
            TransitionCategory::ConsecutiveRepeat => &self.consecutive_repeat,
            TransitionCategory::NonConsecutiveRepeat => &self.non_consecutive_repeat,
            TransitionCategory::NewJob => &self.new_job,
        }
    }

    /// Aligned table in the overall / consecutive / non-consecutive / new
    /// layout used throughout.
    pub fn render_table(&self, model_name: &str) -> String {
        let fmt = |m: &CategoryMetrics| match m.perplexity {
            Some(p) => format!("{p:.2}"),
            None => "-".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>10} {:>20} {:>24} {:>10}\n",
            "model", "overall", "consecutive repeat", "non-consecutive repeat", "new job"
        ));
        out.push_str(&format!(
            "{:<16} {:>10.2} {:>20} {:>24} {:>10}\n",
            model_name,
            self.overall_perplexity,
            fmt(&self.consecutive_repeat),
            fmt(&self.non_consecutive_repeat),
            fmt(&self.new_job)
        ));
        out
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    nll: f64,
    tokens: u64,
}

/// Held-out perplexity of `model` on `corpus`, overall and per category.
pub fn perplexity<M: OccupationModel + Sync>(model: &M, corpus: &Corpus) -> Result<EvalReport> {
    if *model.vocabulary() != corpus.vocabulary {
        return Err(Error::data("model and corpus vocabularies differ"));
    }
    if corpus.is_empty() {
        return Err(Error::data("cannot evaluate on an empty corpus"));
    }

    let per_seq: Vec<Result<[Acc; 3]>> = corpus
        .sequences
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = [Acc::default(); 3];
            for seq in chunk {
                let lp = model.log_probs(&SequenceView::plain(seq))?;
                for (t, &y) in seq.jobs.iter().enumerate() {
                    let cat = classify_step(&seq.jobs, t) as usize;
                    acc[cat].nll -= lp[[t, y as usize]];
                    acc[cat].tokens += 1;
                }
            }
            Ok(acc)
        })
        .collect();

    let mut acc = [Acc::default(); 3];
    for chunk in per_seq {
        let chunk = chunk?;
        for (a, c) in acc.iter_mut().zip(chunk) {
            a.nll += c.nll;
            a.tokens += c.tokens;
        }
    }

    let total_tokens: u64 = acc.iter().map(|a| a.tokens).sum();
    let total_nll: f64 = acc.iter().map(|a| a.nll).sum();
    let cat = |a: Acc| CategoryMetrics {
        tokens: a.tokens,
        perplexity: (a.tokens > 0).then(|| (a.nll / a.tokens as f64).exp()),
    };
    Ok(EvalReport {
        overall_perplexity: (total_nll / total_tokens as f64).exp(),
        total_tokens,
        consecutive_repeat: cat(acc[0]),
        non_consecutive_repeat: cat(acc[1]),
        new_job: cat(acc[2]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CareerSequence, Vocabulary};
    use crate::models::{Model, UniformModel};
    use approx::assert_abs_diff_eq;

    fn corpus(jobs: Vec<Vec<OccId>>, j: usize) -> Corpus {
        let vocab =
            Vocabulary::from_occupations((0..j).map(|i| format!("o{i}")).collect()).unwrap();
        let sequences = jobs
            .into_iter()
            .enumerate()
            .map(|(i, js)| CareerSequence {
                id: format!("w{i}"),
                years: (0..js.len() as i32).map(|t| 2000 + t).collect(),
                jobs: js,
                covariates: vec![],
            })
            .collect();
        Corpus::new(sequences, vocab, "test").unwrap()
    }

    #[test]
    fn categories_match_definitions() {
        // A, A, B, A -> consecutive, (new at t=0), new, non-consecutive.
        let jobs = vec![0u32, 0, 1, 0];
        assert_eq!(classify_step(&jobs, 0), TransitionCategory::NewJob);
        assert_eq!(classify_step(&jobs, 1), TransitionCategory::ConsecutiveRepeat);
        assert_eq!(classify_step(&jobs, 2), TransitionCategory::NewJob);
        assert_eq!(classify_step(&jobs, 3), TransitionCategory::NonConsecutiveRepeat);
    }

    #[test]
    fn uniform_model_scores_exactly_j() {
        let c = corpus(vec![vec![0, 1, 2, 0], vec![3, 3]], 5);
        let model = Model::Uniform(UniformModel { vocab: c.vocabulary.clone() });
        let report = perplexity(&model, &c).unwrap();
        assert_abs_diff_eq!(report.overall_perplexity, 5.0, epsilon = 1e-12);
        assert_eq!(report.total_tokens, 6);
    }

    #[test]
    fn category_partition_covers_every_token() {
        let c = corpus(vec![vec![0, 1, 1, 0, 2], vec![1, 1, 1]], 4);
        let model = Model::Uniform(UniformModel { vocab: c.vocabulary.clone() });
        let r = perplexity(&model, &c).unwrap();
        let sum = r.consecutive_repeat.tokens + r.non_consecutive_repeat.tokens + r.new_job.tokens;
        assert_eq!(sum, r.total_tokens);
    }

    #[test]
    fn per_category_metrics_recompose_overall() {
        // Non-uniform model so categories have different perplexities: a
        // fitted markov1.
        let c = corpus(vec![vec![0, 1, 1, 0, 2, 1], vec![1, 1, 2, 1], vec![2, 0, 0, 1]], 3);
        let fitted = crate::models::fit_markov(&c, 1).unwrap();
        let model = Model::Markov { vocab: c.vocabulary.clone(), model: fitted };
        let r = perplexity(&model, &c).unwrap();
        let mut weighted = 0.0;
        for cat in [&r.consecutive_repeat, &r.non_consecutive_repeat, &r.new_job] {
            if let Some(p) = cat.perplexity {
                weighted += cat.tokens as f64 * p.ln();
            }
        }
        let recomposed = (weighted / r.total_tokens as f64).exp();
        assert_abs_diff_eq!(recomposed, r.overall_perplexity, epsilon = 1e-9);
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let c = corpus(vec![vec![0, 1]], 3);
        let other = corpus(vec![vec![0]], 2);
        let model = Model::Uniform(UniformModel { vocab: other.vocabulary });
        assert!(perplexity(&model, &c).is_err());
    }
}
