//! Multinomial logistic regression over handcrafted history features.
//!
//! Scores are linear in the feature vector (Eq.-style per-occupation
//! intercept + previous-job block + covariate blocks + additive continuous
//! effects), normalized by the configured head. In two-stage mode the
//! switch logit uses its own coefficient vector over the same features.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};

use super::features::{extract_features, FeatureLayout};
use super::heads::{Head, HeadKind};
use crate::corpus::{CareerSequence, Vocabulary};
use crate::error::Result;
use crate::numerics::{ParamDesc, ParamTensors};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionParams {
    pub head: Head,
}

impl ParamTensors for RegressionParams {
    fn param_descs(&self) -> Vec<ParamDesc> {
        let mut out = vec![ParamDesc::new("head.beta", true)];
        if self.head.eta().is_some() {
            out.push(ParamDesc::new("head.eta", true));
        }
        out
    }

    fn param_views(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = vec![self.head.beta().view().into_dyn()];
        if let Head::TwoStage(h) = &self.head {
            out.push(h.eta.view().into_dyn());
        }
        out
    }

    fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        match &mut self.head {
            Head::TwoStage(h) => vec![h.beta.view_mut().into_dyn(), h.eta.view_mut().into_dyn()],
            Head::OneStage(h) => vec![h.beta.view_mut().into_dyn()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub vocab: Vocabulary,
    pub layout: FeatureLayout,
    pub params: RegressionParams,
}

impl RegressionModel {
    /// Zero-initialized model (uniform predictions).
    pub fn new(vocab: Vocabulary, head: HeadKind) -> Self {
        let layout = FeatureLayout::new(&vocab);
        let params =
            RegressionParams { head: Head::zeros(head, vocab.num_occupations(), layout.dim()) };
        RegressionModel { vocab, layout, params }
    }

    pub(crate) fn features_dense(&self, seq: &CareerSequence, t: usize) -> Result<Array1<f64>> {
        let f = extract_features(seq, t, &self.vocab)?;
        let mut sparse = Vec::with_capacity(16);
        self.layout.encode(&f, &mut sparse);
        let mut dense = Array1::zeros(self.layout.dim());
        for (i, v) in sparse {
            dense[i] = v;
        }
        Ok(dense)
    }

    /// Feature matrix, previous jobs, and targets for a batch of sequences.
    pub(crate) fn batch_design(
        &self,
        seqs: &[&CareerSequence],
    ) -> Result<(Array2<f64>, Vec<u32>, Vec<u32>)> {
        let rows: usize = seqs.iter().map(|s| s.len()).sum();
        let mut reps = Array2::zeros((rows, self.layout.dim()));
        let mut y_prev = Vec::with_capacity(rows);
        let mut targets = Vec::with_capacity(rows);
        let bos = self.vocab.bos_id();
        let mut sparse = Vec::with_capacity(16);
        let mut r = 0;
        for seq in seqs {
            for t in 0..seq.len() {
                let f = extract_features(seq, t, &self.vocab)?;
                self.layout.encode(&f, &mut sparse);
                for &(i, v) in &sparse {
                    reps[[r, i]] = v;
                }
                y_prev.push(seq.prev_job(t, bos));
                targets.push(seq.jobs[t]);
                r += 1;
            }
        }
        Ok((reps, y_prev, targets))
    }

    /// Sum NLL over all steps of `seqs` plus gradients into `grads`.
    pub fn loss_and_grads(
        &self,
        seqs: &[&CareerSequence],
        grads: &mut RegressionParams,
        per_row_nll: Option<&mut Vec<f64>>,
    ) -> Result<f64> {
        let (reps, y_prev, targets) = self.batch_design(seqs)?;
        let (d_beta, d_eta) = match &mut grads.head {
            Head::TwoStage(h) => (&mut h.beta, Some(&mut h.eta)),
            Head::OneStage(h) => (&mut h.beta, None),
        };
        let (nll, _) = self.params.head.nll_and_grads(
            reps.view(),
            &y_prev,
            &targets,
            d_beta,
            d_eta,
            per_row_nll,
        )?;
        Ok(nll)
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
    fn zero_coefficients_one_stage_is_uniform() {
        let m = RegressionModel::new(vocab(4), HeadKind::OneStage);
        let s = seq(vec![0, 1, 2]);
        let h = m.features_dense(&s, 1).unwrap();
        let dist = m.params.head.log_dist(h.view(), 0);
        for &lp in dist.iter() {
            assert_abs_diff_eq!(lp, 0.25f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_two_stage_splits_mass() {
        let j = 5;
        let m = RegressionModel::new(vocab(j), HeadKind::TwoStage);
        let s = seq(vec![0, 1]);
        let h = m.features_dense(&s, 1).unwrap();
        let dist = m.params.head.log_dist(h.view(), 0);
        assert_abs_diff_eq!(dist[0], 0.5f64.ln(), epsilon = 1e-12);
        for y in 1..j {
            assert_abs_diff_eq!(dist[y], (0.5 / (j - 1) as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn raising_an_intercept_raises_that_switch_probability() {
        let j = 4;
        let mut m = RegressionModel::new(vocab(j), HeadKind::TwoStage);
        let s = seq(vec![0, 2]);
        let h = m.features_dense(&s, 1).unwrap();
        let before = m.params.head.log_dist(h.view(), 0);
        // Intercept is the last feature column.
        let intercept_col = m.layout.dim() - 1;
        if let Head::TwoStage(head) = &mut m.params.head {
            head.beta[[2, intercept_col]] += 0.7;
        }
        let after = m.params.head.log_dist(h.view(), 0);
        assert!(after[2] > before[2]);
        // Stay mass is untouched; other switch targets lose mass.
        assert_abs_diff_eq!(after[0], before[0], epsilon = 1e-12);
        assert!(after[1] < before[1]);
    }
}
