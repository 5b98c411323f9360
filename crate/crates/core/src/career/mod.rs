//! The transformer occupation model.
//!
//! Stacked causal self-attention blocks build a per-step representation of
//! career history from the previous job, the current covariates, and the
//! step position; the shared two-stage (or one-stage) head turns the final
//! representation into next-job probabilities.

mod config;
mod net;
mod params;

pub use config::TransformerConfig;
pub use net::{BatchInput, DropoutCtx};
pub use params::{LayerParams, TransformerParams, INIT_STD};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::corpus::{CareerSequence, Vocabulary};
use crate::error::Result;
use crate::models::{Head, OccupationModel, SequenceView};
use net::Net;

/// Token budget per work chunk. Fixed (not thread-count dependent) so that
/// gradient reduction order, and therefore training output, is identical
/// whatever the level of parallelism.
const CHUNK_TOKENS: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct CareerModel {
    pub vocab: Vocabulary,
    pub config: TransformerConfig,
    pub params: TransformerParams,
}

/// Loss output for a batch: sum of per-step NLLs plus per-sequence sums
/// (for divergence reporting).
pub struct BatchLoss {
    pub nll_sum: f64,
    pub tokens: usize,
    pub per_seq_nll: Vec<f64>,
}

impl CareerModel {
    pub fn new(vocab: Vocabulary, config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = TransformerParams::init(&config, &vocab, seed);
        Ok(CareerModel { vocab, config, params })
    }

    fn net(&self) -> Net<'_> {
        Net { config: &self.config, params: &self.params }
    }

    /// First-layer representations for one sequence (test hook).
    pub fn first_layer(&self, seq: &CareerSequence) -> Result<Array2<f64>> {
        let batch = BatchInput::new(&[seq], &[None], &self.vocab, &self.config)?;
        self.net().first_layer(&batch)
    }

    /// Final-layer representations (after the last layer norm), eval mode.
    pub fn representations(&self, view: &SequenceView<'_>) -> Result<Array2<f64>> {
        let batch = BatchInput::new(&[view.seq], &[view.mask], &self.vocab, &self.config)?;
        let (reps, _) = self.net().forward(&batch, None)?;
        Ok(reps)
    }

    /// Sum-NLL and sum-gradients for a chunk of sequences (single thread).
    fn chunk_loss_grads(
        &self,
        seqs: &[&CareerSequence],
        masks: &[Option<&[bool]>],
        dropout: Option<&DropoutCtx>,
        grads: &mut TransformerParams,
    ) -> Result<BatchLoss> {
        let batch = BatchInput::new(seqs, masks, &self.vocab, &self.config)?;
        let (reps, caches) = self.net().forward(&batch, dropout)?;
        let (d_beta, d_eta) = match &mut grads.head {
            Head::TwoStage(h) => (&mut h.beta, Some(&mut h.eta)),
            Head::OneStage(h) => (&mut h.beta, None),
        };
        let mut per_row = Vec::with_capacity(batch.rows);
        let (nll_sum, d_reps) = self.params.head.nll_and_grads(
            reps.view(),
            &batch.y_prev,
            &batch.targets,
            d_beta,
            d_eta,
            Some(&mut per_row),
        )?;
        self.net().backward(&batch, &caches, &d_reps, grads);
        let per_seq_nll =
            batch.ranges.iter().map(|r| per_row[r.clone()].iter().sum()).collect();
        Ok(BatchLoss { nll_sum, tokens: batch.rows, per_seq_nll })
    }

    /// Sum-NLL and sum-gradients over a batch, parallel across fixed-size
    /// chunks with in-order reduction. `masks` may be empty (no masking) or
    /// one entry per sequence.
    pub fn loss_and_grads(
        &self,
        seqs: &[&CareerSequence],
        masks: &[Option<&[bool]>],
        dropout: Option<DropoutCtx>,
        grads: &mut TransformerParams,
    ) -> Result<BatchLoss> {
        let no_masks = vec![None; seqs.len()];
        let masks: &[Option<&[bool]>] = if masks.is_empty() { &no_masks } else { masks };

        // Chunk boundaries depend only on the batch composition.
        let mut chunks: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        let mut tokens = 0;
        for (i, seq) in seqs.iter().enumerate() {
            if tokens > 0 && tokens + seq.len() > CHUNK_TOKENS {
                chunks.push((start, i));
                start = i;
                tokens = 0;
            }
            tokens += seq.len();
        }
        if start < seqs.len() {
            chunks.push((start, seqs.len()));
        }

        let results: Vec<Result<(BatchLoss, TransformerParams)>> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut chunk_grads = self.params.zeros_like();
                let ctx = dropout.map(|mut c| {
                    c.first_stream += lo;
                    c
                });
                let loss =
                    self.chunk_loss_grads(&seqs[lo..hi], &masks[lo..hi], ctx.as_ref(), &mut chunk_grads)?;
                Ok((loss, chunk_grads))
            })
            .collect();

        let mut total = BatchLoss { nll_sum: 0.0, tokens: 0, per_seq_nll: Vec::with_capacity(seqs.len()) };
        for result in results {
            let (loss, chunk_grads) = result?;
            total.nll_sum += loss.nll_sum;
            total.tokens += loss.tokens;
            total.per_seq_nll.extend(loss.per_seq_nll);
            grads.add_assign(&chunk_grads);
        }
        Ok(total)
    }
}

impl OccupationModel for CareerModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn log_probs(&self, view: &SequenceView<'_>) -> Result<Array2<f64>> {
        let batch = BatchInput::new(&[view.seq], &[view.mask], &self.vocab, &self.config)?;
        let (reps, _) = self.net().forward(&batch, None)?;
        let j = self.vocab.num_occupations();
        let mut out = Array2::zeros((view.seq.len(), j));
        for t in 0..view.seq.len() {
            let dist: Array1<f64> = self.params.head.log_dist(reps.row(t), batch.y_prev[t]);
            out.row_mut(t).assign(&dist);
        }
        Ok(out)
    }
}
