//! The optimization loop: token-budgeted batches, Adam with the
//! warmup/inverse-sqrt schedule, periodic validation, and best-checkpoint
//! selection with early stopping.

use serde::{Deserialize, Serialize};

use super::batch::{epoch_order, make_batches};
use super::checkpoint::{Checkpoint, CheckpointMeta, ModelConfig};
use crate::career::{CareerModel, DropoutCtx, TransformerParams};
use crate::corpus::{CareerSequence, Corpus};
use crate::error::{Error, Result};
use crate::evaluation::perplexity;
use crate::models::{
    fit_markov_with, BagOfJobsModel, BagOfJobsParams, Model, OccupationModel, RegressionModel,
    RegressionParams, UniformModel,
};
use crate::numerics::{adam_step, AdamConfig, AdamState, ParamTensors};
use crate::rationale::job_dropout_mask;
use crate::util::derived_rng_n;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Token budget per minibatch (a token is one prediction step).
    pub max_tokens_per_batch: usize,
    pub total_steps: u64,
    pub validation_interval: u64,
    /// Validation intervals without improvement before stopping.
    pub patience: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Probability that a training sequence gets job dropout applied
    /// (career models only).
    pub job_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_tokens_per_batch: 16_000,
            total_steps: 2_000,
            validation_interval: 100,
            patience: 5,
            seed: 0,
            adam: AdamConfig::default(),
            job_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    /// Per-model learning-rate presets: peak learning rate and warmup steps
    /// as used for the published runs (career fine-tune 1e-4/500, career
    /// from scratch 5e-4/500, bag-of-jobs 5e-4/5000, regression 5e-4/4000).
    pub fn lr_preset(config: &ModelConfig, finetune: bool) -> (f64, u64) {
        match config {
            ModelConfig::Career { .. } if finetune => (1e-4, 500),
            ModelConfig::Career { .. } => (5e-4, 500),
            ModelConfig::BagOfJobs { .. } => (5e-4, 5_000),
            ModelConfig::Regression { .. } => (5e-4, 4_000),
            _ => (5e-4, 4_000),
        }
    }

    pub fn with_lr_preset(mut self, config: &ModelConfig, finetune: bool) -> Self {
        let (peak, warmup) = Self::lr_preset(config, finetune);
        self.adam.peak_lr = peak;
        self.adam.warmup_steps = warmup;
        self
    }
}

/// One line of the run log (serialized as JSONL by the CLI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub step: u64,
    pub train_loss: Option<f64>,
    pub lr: Option<f64>,
    pub validation_ppl: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<RunLogEntry>,
}

/// Train a model of the configured kind on `train`, selecting the
/// checkpoint with the best validation perplexity. Markov and uniform
/// models fit in closed form; everything else runs the gradient loop.
pub fn train(
    config: &ModelConfig,
    train_corpus: &Corpus,
    val_corpus: &Corpus,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_corpus.is_empty() || val_corpus.is_empty() {
        return Err(Error::data("train and validation corpora must be non-empty"));
    }
    if tc.job_dropout > 0.0 && !matches!(config, ModelConfig::Career { .. }) {
        return Err(Error::config("job dropout applies to career models only"));
    }
    let vocab = train_corpus.vocabulary.clone();
    match config {
        ModelConfig::Uniform => {
            let model = Model::Uniform(UniformModel { vocab });
            closed_form_outcome(config, model, val_corpus, tc)
        }
        ModelConfig::Markov { order, lambda1, lambda2 } => {
            let fitted = fit_markov_with(train_corpus, *order, *lambda1, *lambda2)?;
            let model = Model::Markov { vocab, model: fitted };
            closed_form_outcome(config, model, val_corpus, tc)
        }
        ModelConfig::Regression { head } => {
            let model = RegressionModel::new(vocab, *head);
            gradient_loop(config, model, train_corpus, val_corpus, tc)
        }
        ModelConfig::BagOfJobs { dim, head } => {
            let model = BagOfJobsModel::new(vocab, *dim, *head, tc.seed);
            gradient_loop(config, model, train_corpus, val_corpus, tc)
        }
        ModelConfig::Career { config: tcfg } => {
            let model = CareerModel::new(vocab, *tcfg, tc.seed)?;
            gradient_loop(config, model, train_corpus, val_corpus, tc)
        }
    }
}

/// Fine-tune from explicit initial parameters (transfer or dropout
/// compatibility fine-tuning).
pub fn train_from(
    config: &ModelConfig,
    initial: Model,
    train_corpus: &Corpus,
    val_corpus: &Corpus,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_corpus.is_empty() || val_corpus.is_empty() {
        return Err(Error::data("train and validation corpora must be non-empty"));
    }
    match initial {
        Model::Career(model) => gradient_loop(config, model, train_corpus, val_corpus, tc),
        Model::BagOfJobs(model) => gradient_loop(config, model, train_corpus, val_corpus, tc),
        Model::Regression(model) => gradient_loop(config, model, train_corpus, val_corpus, tc),
        other => closed_form_outcome(config, other, val_corpus, tc),
    }
}

fn closed_form_outcome(
    config: &ModelConfig,
    model: Model,
    val_corpus: &Corpus,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    let val_ppl = perplexity(&model, val_corpus)?.overall_perplexity;
    let meta = CheckpointMeta {
        step: 0,
        validation_ppl: Some(val_ppl),
        seed: tc.seed,
        dropout_compatible: false,
        train_cutoff_year: None,
        diverged: false,
    };
    let _ = config;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::from_model(&model, meta),
        log: vec![RunLogEntry { step: 0, train_loss: None, lr: None, validation_ppl: Some(val_ppl) }],
    })
}

/// Everything the generic loop needs from a gradient-trained model.
trait GradientModel: OccupationModel + Clone + Sync {
    type Params: ParamTensors + Clone;

    fn params(&self) -> &Self::Params;
    fn set_params(&mut self, params: Self::Params);
    fn grad_buffer(&self) -> Self::Params;
    fn zero_grads(grads: &mut Self::Params) {
        for mut view in grads.param_views_mut() {
            view.fill(0.0);
        }
    }
    /// Sum-NLL over the batch, gradients of the sum accumulated into
    /// `grads`. Returns (nll_sum, token count, per-sequence nll).
    fn batch_loss(
        &self,
        seqs: &[&CareerSequence],
        masks: &[Option<&[bool]>],
        dropout: Option<DropoutCtx>,
        grads: &mut Self::Params,
    ) -> Result<(f64, usize, Vec<f64>)>;
    fn into_model(self) -> Model;
}

impl GradientModel for CareerModel {
    type Params = TransformerParams;

    fn params(&self) -> &TransformerParams {
        &self.params
    }
    fn set_params(&mut self, params: TransformerParams) {
        self.params = params;
    }
    fn grad_buffer(&self) -> TransformerParams {
        self.params.zeros_like()
    }
    fn batch_loss(
        &self,
        seqs: &[&CareerSequence],
        masks: &[Option<&[bool]>],
        dropout: Option<DropoutCtx>,
        grads: &mut TransformerParams,
    ) -> Result<(f64, usize, Vec<f64>)> {
        let out = self.loss_and_grads(seqs, masks, dropout, grads)?;
        Ok((out.nll_sum, out.tokens, out.per_seq_nll))
    }
    fn into_model(self) -> Model {
        Model::Career(self)
    }
}

impl GradientModel for BagOfJobsModel {
    type Params = BagOfJobsParams;

    fn params(&self) -> &BagOfJobsParams {
        &self.params
    }
    fn set_params(&mut self, params: BagOfJobsParams) {
        self.params = params;
    }
    fn grad_buffer(&self) -> BagOfJobsParams {
        self.zero_grads()
    }
    fn batch_loss(
        &self,
        seqs: &[&CareerSequence],
        _masks: &[Option<&[bool]>],
        _dropout: Option<DropoutCtx>,
        grads: &mut BagOfJobsParams,
    ) -> Result<(f64, usize, Vec<f64>)> {
        let mut per_row = Vec::new();
        let nll = self.loss_and_grads(seqs, grads, Some(&mut per_row))?;
        Ok((nll, per_row.len(), per_seq_sums(seqs, &per_row)))
    }
    fn into_model(self) -> Model {
        Model::BagOfJobs(self)
    }
}

impl GradientModel for RegressionModel {
    type Params = RegressionParams;

    fn params(&self) -> &RegressionParams {
        &self.params
    }
    fn set_params(&mut self, params: RegressionParams) {
        self.params = params;
    }
    fn grad_buffer(&self) -> RegressionParams {
        RegressionParams {
            head: crate::models::Head::zeros(
                self.params.head.kind(),
                self.params.head.num_occupations(),
                self.params.head.dim(),
            ),
        }
    }
    fn batch_loss(
        &self,
        seqs: &[&CareerSequence],
        _masks: &[Option<&[bool]>],
        _dropout: Option<DropoutCtx>,
        grads: &mut RegressionParams,
    ) -> Result<(f64, usize, Vec<f64>)> {
        let mut per_row = Vec::new();
        let nll = self.loss_and_grads(seqs, grads, Some(&mut per_row))?;
        Ok((nll, per_row.len(), per_seq_sums(seqs, &per_row)))
    }
    fn into_model(self) -> Model {
        Model::Regression(self)
    }
}

fn per_seq_sums(seqs: &[&CareerSequence], per_row: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(seqs.len());
    let mut offset = 0;
    for seq in seqs {
        out.push(per_row[offset..offset + seq.len()].iter().sum());
        offset += seq.len();
    }
    out
}

fn gradient_loop<M: GradientModel>(
    config: &ModelConfig,
    mut model: M,
    train_corpus: &Corpus,
    val_corpus: &Corpus,
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    let batches = make_batches(train_corpus, tc.max_tokens_per_batch)?;
    let mut adam = AdamState::new(model.params(), tc.adam);
    let mut grads = model.grad_buffer();

    let mut log = Vec::new();
    // Validation at step 0 establishes the untrained baseline and the
    // fallback checkpoint for early divergence.
    let initial_ppl = perplexity(&model, val_corpus)?.overall_perplexity;
    log.push(RunLogEntry { step: 0, train_loss: None, lr: None, validation_ppl: Some(initial_ppl) });
    let mut best: (f64, M::Params, u64) = (initial_ppl, model.params().clone(), 0);
    let mut stale_intervals = 0u64;
    let mut diverged = false;

    let mut epoch = 0u64;
    let mut order = epoch_order(batches.len(), tc.seed, epoch);
    let mut cursor = 0usize;
    'steps: for step in 1..=tc.total_steps {
        if cursor == order.len() {
            epoch += 1;
            order = epoch_order(batches.len(), tc.seed, epoch);
            cursor = 0;
        }
        let batch = &batches[order[cursor]];
        cursor += 1;

        let seqs: Vec<&CareerSequence> = batch.iter().map(|&i| &train_corpus.sequences[i]).collect();
        // Job-dropout masks, one decision per sequence per step.
        let mask_store: Vec<Option<Vec<bool>>> = if tc.job_dropout > 0.0 {
            seqs.iter()
                .enumerate()
                .map(|(i, seq)| {
                    let mut rng =
                        derived_rng_n(tc.seed ^ step, "job-dropout", (batch[i % batch.len()]) as u64);
                    job_dropout_mask(seq.len(), tc.job_dropout, &mut rng)
                })
                .collect()
        } else {
            vec![None; seqs.len()]
        };
        let masks: Vec<Option<&[bool]>> =
            mask_store.iter().map(|m| m.as_deref()).collect();

        M::zero_grads(&mut grads);
        let dropout = DropoutCtx { seed: tc.seed, step, first_stream: 0 };
        let (nll_sum, tokens, per_seq) =
            model.batch_loss(&seqs, &masks, Some(dropout), &mut grads)?;
        let mean_loss = nll_sum / tokens as f64;
        if !mean_loss.is_finite() {
            let culprit = per_seq
                .iter()
                .position(|v| !v.is_finite())
                .map(|i| seqs[i].id.clone());
            log::warn!("non-finite loss at step {step}; stopping with last good checkpoint");
            diverged = true;
            log.push(RunLogEntry {
                step,
                train_loss: Some(f64::NAN),
                lr: None,
                validation_ppl: None,
            });
            let _ = culprit;
            break 'steps;
        }
        let scale = 1.0 / tokens as f64;
        for mut view in grads.param_views_mut() {
            view.mapv_inplace(|v| v * scale);
        }
        let mut params = model.params().clone();
        let lr = adam_step(&mut params, &grads, &mut adam)?;
        model.set_params(params);

        let validate_now = step % tc.validation_interval == 0 || step == tc.total_steps;
        let mut entry = RunLogEntry {
            step,
            train_loss: Some(mean_loss),
            lr: Some(lr),
            validation_ppl: None,
        };
        if validate_now {
            let ppl = perplexity(&model, val_corpus)?.overall_perplexity;
            entry.validation_ppl = Some(ppl);
            if ppl < best.0 {
                best = (ppl, model.params().clone(), step);
                stale_intervals = 0;
            } else {
                stale_intervals += 1;
            }
        }
        log.push(entry);
        if validate_now && stale_intervals >= tc.patience {
            break;
        }
    }

    let (best_ppl, best_params, best_step) = best;
    model.set_params(best_params);
    let meta = CheckpointMeta {
        step: best_step,
        validation_ppl: Some(best_ppl),
        seed: tc.seed,
        dropout_compatible: tc.job_dropout > 0.0,
        train_cutoff_year: None,
        diverged,
    };
    let _ = config;
    Ok(TrainOutcome { checkpoint: Checkpoint::from_model(&model.into_model(), meta), log })
}
