//! Prediction heads and the non-transformer baselines.

mod bagofjobs;
mod features;
mod heads;
mod markov;
mod regression;

pub use bagofjobs::{BagOfJobsModel, BagOfJobsParams};
pub use features::{extract_features, FeatureLayout, HistoryFeatures};
pub use heads::{
    one_stage_log_prob, two_stage_log_prob, Head, HeadKind, OneStageHead, TwoStageHead,
};
pub use markov::{
    fit_markov, fit_markov_with, read_markov_tsv, write_markov_tsv, MarkovModel, DEFAULT_LAMBDA1,
    DEFAULT_LAMBDA2,
};
pub use regression::{RegressionModel, RegressionParams};

use ndarray::Array2;

use crate::career::CareerModel;
use crate::corpus::{CareerSequence, Vocabulary};
use crate::error::{Error, Result};

/// A sequence plus an optional input mask. `mask[t] = true` hides
/// observation `jobs[t]` from model *inputs* (prediction targets are
/// unaffected). Only the transformer supports masked histories.
#[derive(Debug, Clone, Copy)]
pub struct SequenceView<'a> {
    pub seq: &'a CareerSequence,
    pub mask: Option<&'a [bool]>,
}

impl<'a> SequenceView<'a> {
    pub fn plain(seq: &'a CareerSequence) -> Self {
        SequenceView { seq, mask: None }
    }

    pub fn masked(seq: &'a CareerSequence, mask: &'a [bool]) -> Self {
        SequenceView { seq, mask: Some(mask) }
    }
}

/// Anything that predicts a worker's next occupation from history.
pub trait OccupationModel {
    fn vocabulary(&self) -> &Vocabulary;

    /// `[T, J]` log-probabilities, row `t` the full predictive distribution
    /// for step `t` given the (possibly masked) history before it.
    fn log_probs(&self, view: &SequenceView<'_>) -> Result<Array2<f64>>;
}

/// Total negative log-likelihood of a sequence under a model, with the
/// per-step breakdown used by evaluation decompositions.
pub fn sequence_nll(model: &impl OccupationModel, seq: &CareerSequence) -> Result<(f64, Vec<f64>)> {
    let lp = model.log_probs(&SequenceView::plain(seq))?;
    let per_step: Vec<f64> =
        seq.jobs.iter().enumerate().map(|(t, &y)| -lp[[t, y as usize]]).collect();
    Ok((per_step.iter().sum(), per_step))
}

/// The trivial baseline: `p = 1/J` everywhere. Its held-out perplexity is
/// exactly `J`, which makes it a useful smoke test for the whole pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformModel {
    pub vocab: Vocabulary,
}

impl OccupationModel for UniformModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn log_probs(&self, view: &SequenceView<'_>) -> Result<Array2<f64>> {
        let j = self.vocab.num_occupations();
        let lp = -(j as f64).ln();
        Ok(Array2::from_elem((view.seq.len(), j), lp))
    }
}

fn reject_mask(view: &SequenceView<'_>, kind: &str) -> Result<()> {
    if view.mask.is_some() {
        return Err(Error::config(format!("{kind} models do not support masked histories")));
    }
    Ok(())
}

/// Every trained artifact, ready for evaluation, forecasting, or
/// rationalization. Wraps the concrete model with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Uniform(UniformModel),
    Markov { vocab: Vocabulary, model: MarkovModel },
    Regression(RegressionModel),
    BagOfJobs(BagOfJobsModel),
    Career(CareerModel),
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Uniform(_) => "uniform",
            Model::Markov { model, .. } => {
                if model.order == 1 {
                    "markov1"
                } else {
                    "markov2"
                }
            }
            Model::Regression(_) => "regression",
            Model::BagOfJobs(_) => "bagofjobs",
            Model::Career(_) => "career",
        }
    }
}

impl OccupationModel for Model {
    fn vocabulary(&self) -> &Vocabulary {
        match self {
            Model::Uniform(m) => &m.vocab,
            Model::Markov { vocab, .. } => vocab,
            Model::Regression(m) => &m.vocab,
            Model::BagOfJobs(m) => &m.vocab,
            Model::Career(m) => &m.vocab,
        }
    }

    fn log_probs(&self, view: &SequenceView<'_>) -> Result<Array2<f64>> {
        match self {
            Model::Uniform(m) => {
                reject_mask(view, "uniform")?;
                m.log_probs(view)
            }
            Model::Markov { vocab, model } => {
                reject_mask(view, "markov")?;
                let seq = view.seq;
                let bos = vocab.bos_id();
                let mut out = Array2::zeros((seq.len(), vocab.num_occupations()));
                for t in 0..seq.len() {
                    let prev = seq.prev_job(t, bos);
                    let prev2 = if t >= 2 { seq.jobs[t - 2] } else { bos };
                    let dist = model.dist(prev2, prev);
                    for (o, p) in out.row_mut(t).iter_mut().zip(dist.iter()) {
                        *o = p.ln();
                    }
                }
                Ok(out)
            }
            Model::Regression(m) => {
                reject_mask(view, "regression")?;
                let seq = view.seq;
                let bos = m.vocab.bos_id();
                let mut out = Array2::zeros((seq.len(), m.vocab.num_occupations()));
                for t in 0..seq.len() {
                    let h = m.features_dense(seq, t)?;
                    let dist = m.params.head.log_dist(h.view(), seq.prev_job(t, bos));
                    out.row_mut(t).assign(&dist);
                }
                Ok(out)
            }
            Model::BagOfJobs(m) => {
                reject_mask(view, "bag-of-jobs")?;
                let seq = view.seq;
                let bos = m.vocab.bos_id();
                let mut out = Array2::zeros((seq.len(), m.vocab.num_occupations()));
                for t in 0..seq.len() {
                    let h = m.representation(seq, t)?;
                    let dist = m.params.head.log_dist(h.view(), seq.prev_job(t, bos));
                    out.row_mut(t).assign(&dist);
                }
                Ok(out)
            }
            Model::Career(m) => m.log_probs(view),
        }
    }
}
