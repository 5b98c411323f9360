//! Bag-of-jobs baseline: scores the next job from the most recent job's
//! embedding plus the unweighted mean of all prior-job embeddings, with
//! covariates handled the same way (current value embedded, prior values
//! averaged).
//!
//! The per-step representation stacks the blocks
//! `[alpha(y_prev) | mean rho(priors) | alpha_c(x_t) | mean rho_c(priors)...]`
//! so the shared head machinery sees one `(2 + 2C) * D` vector; empty prior
//! sets contribute zero vectors.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand_distr::{Distribution, Normal};

use super::heads::{Head, HeadKind};
use crate::corpus::{CareerSequence, Vocabulary};
use crate::error::Result;
use crate::numerics::{ParamDesc, ParamTensors};
use crate::util::derived_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BagOfJobsParams {
    /// Recent-job embeddings, `[J+1, D]` (row `J`: begin-of-sequence).
    pub alpha: Array2<f64>,
    /// Prior-job embeddings, `[J, D]`.
    pub rho: Array2<f64>,
    pub cov_alpha: Vec<Array2<f64>>,
    pub cov_rho: Vec<Array2<f64>>,
    pub head: Head,
}

impl ParamTensors for BagOfJobsParams {
    fn param_descs(&self) -> Vec<ParamDesc> {
        let mut out = vec![ParamDesc::new("alpha", true), ParamDesc::new("rho", true)];
        for c in 0..self.cov_alpha.len() {
            out.push(ParamDesc::new(format!("cov_alpha.{c}"), true));
            out.push(ParamDesc::new(format!("cov_rho.{c}"), true));
        }
        out.push(ParamDesc::new("head.beta", true));
        if self.head.eta().is_some() {
            out.push(ParamDesc::new("head.eta", true));
        }
        out
    }

    fn param_views(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = vec![self.alpha.view().into_dyn(), self.rho.view().into_dyn()];
        for (a, r) in self.cov_alpha.iter().zip(&self.cov_rho) {
            out.push(a.view().into_dyn());
            out.push(r.view().into_dyn());
        }
        out.push(self.head.beta().view().into_dyn());
        if let Head::TwoStage(h) = &self.head {
            out.push(h.eta.view().into_dyn());
        }
        out
    }

    fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = vec![self.alpha.view_mut().into_dyn(), self.rho.view_mut().into_dyn()];
        for (a, r) in self.cov_alpha.iter_mut().zip(&mut self.cov_rho) {
            out.push(a.view_mut().into_dyn());
            out.push(r.view_mut().into_dyn());
        }
        match &mut self.head {
            Head::TwoStage(h) => {
                out.push(h.beta.view_mut().into_dyn());
                out.push(h.eta.view_mut().into_dyn());
            }
            Head::OneStage(h) => out.push(h.beta.view_mut().into_dyn()),
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagOfJobsModel {
    pub vocab: Vocabulary,
    pub dim: usize,
    pub params: BagOfJobsParams,
}

impl BagOfJobsModel {
    pub fn new(vocab: Vocabulary, dim: usize, head: HeadKind, seed: u64) -> Self {
        let j = vocab.num_occupations();
        let mut rng = derived_rng(seed, "bag-of-jobs-init");
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut init = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
        };
        let alpha = init(j + 1, dim);
        let rho = init(j, dim);
        let mut cov_alpha = Vec::new();
        let mut cov_rho = Vec::new();
        for schema in vocab.covariates() {
            cov_alpha.push(init(schema.cardinality(), dim));
            cov_rho.push(init(schema.cardinality(), dim));
        }
        let rep_dim = (2 + 2 * vocab.covariates().len()) * dim;
        let params = BagOfJobsParams {
            alpha,
            rho,
            cov_alpha,
            cov_rho,
            head: Head::zeros(head, j, rep_dim),
        };
        BagOfJobsModel { vocab, dim, params }
    }

    pub fn rep_dim(&self) -> usize {
        (2 + 2 * self.vocab.covariates().len()) * self.dim
    }

    /// Representation for step `t` of a sequence (0-based).
    pub fn representation(&self, seq: &CareerSequence, t: usize) -> Result<Array1<f64>> {
        if t >= seq.len() {
            return Err(crate::error::Error::data(format!(
                "step {t} out of range for T={}",
                seq.len()
            )));
        }
        let mut rep = Array1::zeros(self.rep_dim());
        self.fill_representation(seq, t, rep.view_mut());
        Ok(rep)
    }

    fn fill_representation(&self, seq: &CareerSequence, t: usize, mut out: ndarray::ArrayViewMut1<'_, f64>) {
        let d = self.dim;
        let p = &self.params;
        let recent = seq.prev_job(t, self.vocab.bos_id());
        out.slice_mut(ndarray::s![0..d]).assign(&p.alpha.row(recent as usize));
        let priors = &seq.jobs[..t.saturating_sub(1)];
        if !priors.is_empty() {
            let scale = 1.0 / priors.len() as f64;
            let mut block = out.slice_mut(ndarray::s![d..2 * d]);
            for &y in priors {
                block.scaled_add(scale, &p.rho.row(y as usize));
            }
        }
        for c in 0..self.vocab.covariates().len() {
            let base = (2 + 2 * c) * d;
            out.slice_mut(ndarray::s![base..base + d])
                .assign(&p.cov_alpha[c].row(seq.cov_at(c, t) as usize));
            if t > 0 {
                let scale = 1.0 / t as f64;
                let mut block = out.slice_mut(ndarray::s![base + d..base + 2 * d]);
                for k in 0..t {
                    block.scaled_add(scale, &p.cov_rho[c].row(seq.cov_at(c, k) as usize));
                }
            }
        }
    }

    pub(crate) fn batch_design(&self, seqs: &[&CareerSequence]) -> (Array2<f64>, Vec<u32>, Vec<u32>) {
        let rows: usize = seqs.iter().map(|s| s.len()).sum();
        let mut reps = Array2::zeros((rows, self.rep_dim()));
        let mut y_prev = Vec::with_capacity(rows);
        let mut targets = Vec::with_capacity(rows);
        let bos = self.vocab.bos_id();
        let mut r = 0;
        for seq in seqs {
            for t in 0..seq.len() {
                self.fill_representation(seq, t, reps.row_mut(r));
                y_prev.push(seq.prev_job(t, bos));
                targets.push(seq.jobs[t]);
                r += 1;
            }
        }
        (reps, y_prev, targets)
    }

    /// Sum NLL over all steps plus gradients into `grads`.
    pub fn loss_and_grads(
        &self,
        seqs: &[&CareerSequence],
        grads: &mut BagOfJobsParams,
        per_row_nll: Option<&mut Vec<f64>>,
    ) -> Result<f64> {
        let (reps, y_prev, targets) = self.batch_design(seqs);
        let (d_beta, d_eta) = match &mut grads.head {
            Head::TwoStage(h) => (&mut h.beta, Some(&mut h.eta)),
            Head::OneStage(h) => (&mut h.beta, None),
        };
        let (nll, d_reps) = self.params.head.nll_and_grads(
            reps.view(),
            &y_prev,
            &targets,
            d_beta,
            d_eta,
            per_row_nll,
        )?;

        // Scatter representation gradients back into the embedding tables.
        let d = self.dim;
        let mut r = 0;
        for seq in seqs {
            for t in 0..seq.len() {
                let drow = d_reps.row(r);
                let recent = seq.prev_job(t, self.vocab.bos_id());
                grads
                    .alpha
                    .row_mut(recent as usize)
                    .scaled_add(1.0, &drow.slice(ndarray::s![0..d]));
                let priors = &seq.jobs[..t.saturating_sub(1)];
                if !priors.is_empty() {
                    let scale = 1.0 / priors.len() as f64;
                    let block = drow.slice(ndarray::s![d..2 * d]);
                    for &y in priors {
                        grads.rho.row_mut(y as usize).scaled_add(scale, &block);
                    }
                }
                for c in 0..self.vocab.covariates().len() {
                    let base = (2 + 2 * c) * d;
                    grads.cov_alpha[c]
                        .row_mut(seq.cov_at(c, t) as usize)
                        .scaled_add(1.0, &drow.slice(ndarray::s![base..base + d]));
                    if t > 0 {
                        let scale = 1.0 / t as f64;
                        let block = drow.slice(ndarray::s![base + d..base + 2 * d]);
                        for k in 0..t {
                            grads.cov_rho[c]
                                .row_mut(seq.cov_at(c, k) as usize)
                                .scaled_add(scale, &block);
                        }
                    }
                }
                r += 1;
            }
        }
        Ok(nll)
    }

    pub fn zero_grads(&self) -> BagOfJobsParams {
        let p = &self.params;
        BagOfJobsParams {
            alpha: Array2::zeros(p.alpha.dim()),
            rho: Array2::zeros(p.rho.dim()),
            cov_alpha: p.cov_alpha.iter().map(|a| Array2::zeros(a.dim())).collect(),
            cov_rho: p.cov_rho.iter().map(|a| Array2::zeros(a.dim())).collect(),
            head: Head::zeros(p.head.kind(), p.head.num_occupations(), p.head.dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vocab(j: usize) -> Vocabulary {
        Vocabulary::from_occupations((0..j).map(|i| format!("o{i}")).collect()).unwrap()
    }

    fn seq(jobs: Vec<u32>) -> CareerSequence {
        CareerSequence {
            id: "w".into(),
            years: (0..jobs.len() as i32).map(|t| 2000 + t).collect(),
            jobs,
            covariates: vec![],
        }
    }

    #[test]
    fn no_priors_at_second_step() {
        let m = BagOfJobsModel::new(vocab(4), 3, HeadKind::OneStage, 1);
        let s = seq(vec![2, 0, 1, 3]);
        // t = 1 (second step): recent = jobs[0], prior block must be zero.
        let rep = m.representation(&s, 1).unwrap();
        assert_eq!(rep.slice(ndarray::s![0..3]).to_owned(), m.params.alpha.row(2).to_owned());
        assert!(rep.slice(ndarray::s![3..6]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prior_average_and_permutation_invariance() {
        let m = BagOfJobsModel::new(vocab(4), 3, HeadKind::OneStage, 2);
        // History a, b, a -> predicting step 3: priors are {a, b}.
        let s = seq(vec![0, 1, 0, 2]);
        let rep = m.representation(&s, 3).unwrap();
        let expect = (&m.params.rho.row(0) + &m.params.rho.row(1)) / 2.0;
        for i in 0..3 {
            assert_abs_diff_eq!(rep[3 + i], expect[i], epsilon = 1e-15);
        }
        // Permuting the priors leaves the representation unchanged.
        let s2 = seq(vec![1, 0, 0, 2]);
        let rep2 = m.representation(&s2, 3).unwrap();
        for i in 0..3 {
            // recent job (jobs[2]) coincides in both variants
            assert_abs_diff_eq!(rep[3 + i], rep2[3 + i], epsilon = 1e-15);
        }
    }

    #[test]
    fn grads_match_finite_differences() {
        use crate::numerics::{flatten_params, load_flat_params};
        let m = BagOfJobsModel::new(vocab(5), 4, HeadKind::TwoStage, 3);
        let seqs_owned = vec![seq(vec![0, 1, 1, 4, 2]), seq(vec![3, 3])];
        let seqs: Vec<&CareerSequence> = seqs_owned.iter().collect();

        let mut grads = m.zero_grads();
        let nll = m.loss_and_grads(&seqs, &mut grads, None).unwrap();
        assert!(nll.is_finite());

        let theta = flatten_params(&m.params);
        let analytic = flatten_params(&grads);
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for i in (0..theta.len()).step_by(7) {
            let mut probe = m.clone();
            let mut pt = theta.clone();
            pt[i] += h;
            load_flat_params(&mut probe.params, &pt).unwrap();
            let up = probe.loss_and_grads(&seqs, &mut probe.zero_grads(), None).unwrap();
            pt[i] -= 2.0 * h;
            load_flat_params(&mut probe.params, &pt).unwrap();
            let down = probe.loss_and_grads(&seqs, &mut probe.zero_grads(), None).unwrap();
            let num = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(num.abs()).max(1e-6);
            max_rel = max_rel.max((analytic[i] - num).abs() / denom);
        }
        assert!(max_rel < 1e-5, "max rel err {max_rel}");
    }
}
