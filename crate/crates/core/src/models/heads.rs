//! Two-stage and one-stage prediction heads.
//!
//! Given a history representation `h` and the previous job, the two-stage
//! head first decides stay-vs-switch with a logistic regression on `h`, then
//! distributes the switch mass over the other occupations with a masked
//! softmax. The one-stage head is a plain softmax over all `J` occupations.
//!
//! The outcome space is always `0..J` (predictable occupations). When the
//! previous "job" is the begin-of-sequence token there is no stay outcome,
//! so the two-stage head degrades to a softmax over all real occupations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::OccId;
use crate::error::{Error, Result};
use crate::numerics::{log_sigmoid, log_softmax_masked_into, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    TwoStage,
    OneStage,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKind::TwoStage => write!(f, "two-stage"),
            HeadKind::OneStage => write!(f, "one-stage"),
        }
    }
}

/// Switch coefficients `eta` and occupation coefficients `beta` (rows are
/// occupations).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageHead {
    pub eta: Array1<f64>,
    pub beta: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStageHead {
    pub beta: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    TwoStage(TwoStageHead),
    OneStage(OneStageHead),
}

impl Head {
    /// Zero-initialized head: a fresh model predicts the uniform
    /// distribution (one-stage) or a 50/50 stay-switch split.
    pub fn zeros(kind: HeadKind, num_occupations: usize, dim: usize) -> Head {
        match kind {
            HeadKind::TwoStage => Head::TwoStage(TwoStageHead {
                eta: Array1::zeros(dim),
                beta: Array2::zeros((num_occupations, dim)),
            }),
            HeadKind::OneStage => {
                Head::OneStage(OneStageHead { beta: Array2::zeros((num_occupations, dim)) })
            }
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Head::TwoStage(_) => HeadKind::TwoStage,
            Head::OneStage(_) => HeadKind::OneStage,
        }
    }

    pub fn beta(&self) -> &Array2<f64> {
        match self {
            Head::TwoStage(h) => &h.beta,
            Head::OneStage(h) => &h.beta,
        }
    }

    pub fn eta(&self) -> Option<&Array1<f64>> {
        match self {
            Head::TwoStage(h) => Some(&h.eta),
            Head::OneStage(_) => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta().ncols()
    }

    pub fn num_occupations(&self) -> usize {
        self.beta().nrows()
    }

    /// Log-distribution over all `J` outcomes. `y_prev >= J` means "no real
    /// previous job" (begin of sequence).
    pub fn log_dist(&self, h: ArrayView1<'_, f64>, y_prev: OccId) -> Array1<f64> {
        let j = self.num_occupations();
        let mut logits = self.beta().dot(&h);
        match self {
            Head::OneStage(_) => {
                log_softmax_masked_into(logits.view_mut(), None).expect("J >= 1");
                logits
            }
            Head::TwoStage(head) => {
                if (y_prev as usize) >= j {
                    log_softmax_masked_into(logits.view_mut(), None).expect("J >= 1");
                    return logits;
                }
                if j == 1 {
                    // Only one outcome and it is the previous job.
                    logits[0] = 0.0;
                    return logits;
                }
                let u = head.eta.dot(&h);
                let log_stay = log_sigmoid(-u); // log(1 - sigma(u))
                let log_switch = log_sigmoid(u);
                let prev = y_prev as usize;
                logits[prev] = f64::NEG_INFINITY;
                log_softmax_masked_into(logits.view_mut(), None).expect("J >= 2");
                for (idx, v) in logits.iter_mut().enumerate() {
                    if idx == prev {
                        *v = log_stay;
                    } else {
                        *v += log_switch;
                    }
                }
                logits
            }
        }
    }

    /// Log-probability of one outcome; `two_stage_log_prob`/`one_stage_log_prob`
    /// are thin wrappers over this.
    pub fn log_prob(&self, h: ArrayView1<'_, f64>, y_prev: OccId, y: OccId) -> Result<f64> {
        if (y as usize) >= self.num_occupations() {
            return Err(Error::data(format!("occupation id {y} out of range")));
        }
        Ok(self.log_dist(h, y_prev)[y as usize])
    }

    /// Sum of per-row negative log-likelihoods over a batch of
    /// representations, with gradients.
    ///
    /// `reps` is `[R, D]`; `y_prev` and `targets` have length `R`. Gradients
    /// of the *sum* (callers rescale to token means) are accumulated into
    /// `d_beta`/`d_eta`, and the gradient with respect to the representations
    /// comes back as a fresh `[R, D]` array.
    pub fn nll_and_grads(
        &self,
        reps: ArrayView2<'_, f64>,
        y_prev: &[OccId],
        targets: &[OccId],
        d_beta: &mut Array2<f64>,
        mut d_eta: Option<&mut Array1<f64>>,
        per_row_nll: Option<&mut Vec<f64>>,
    ) -> Result<(f64, Array2<f64>)> {
        let rows = reps.nrows();
        if y_prev.len() != rows || targets.len() != rows {
            return Err(Error::shape("head batch: rows mismatch"));
        }
        let j = self.num_occupations();
        // Logits for every row at once; d_logits is overwritten per row
        // below and turned into the gradient buffer.
        let mut logits = reps.dot(&self.beta().t()); // [R, J]
        let u: Option<Array1<f64>> = self.eta().map(|eta| reps.dot(eta));
        let mut du: Option<Array1<f64>> = u.as_ref().map(|_| Array1::zeros(rows));

        let mut total_nll = 0.0;
        let mut per_row = per_row_nll;
        for r in 0..rows {
            let target = targets[r] as usize;
            if target >= j {
                return Err(Error::data(format!("target id {target} out of range")));
            }
            let prev = y_prev[r] as usize;
            let mut row = logits.row_mut(r);
            let nll = match self {
                Head::OneStage(_) => {
                    log_softmax_masked_into(row.view_mut(), None)?;
                    let nll = -row[target];
                    // d logits = softmax - onehot(target)
                    for (idx, v) in row.iter_mut().enumerate() {
                        *v = v.exp() - if idx == target { 1.0 } else { 0.0 };
                    }
                    nll
                }
                Head::TwoStage(_) => {
                    let u_r = u.as_ref().expect("two-stage has eta")[r];
                    if prev >= j {
                        log_softmax_masked_into(row.view_mut(), None)?;
                        let nll = -row[target];
                        for (idx, v) in row.iter_mut().enumerate() {
                            *v = v.exp() - if idx == target { 1.0 } else { 0.0 };
                        }
                        nll
                    } else if target == prev {
                        // Stay branch: -log(1 - sigma(u)) = softplus(u).
                        du.as_mut().unwrap()[r] = sigmoid(u_r);
                        row.fill(0.0);
                        softplus(u_r)
                    } else {
                        // Switch branch: -log sigma(u) - log softmax_masked.
                        du.as_mut().unwrap()[r] = sigmoid(u_r) - 1.0;
                        row[prev] = f64::NEG_INFINITY;
                        log_softmax_masked_into(row.view_mut(), None)?;
                        let nll = softplus(-u_r) - row[target];
                        for (idx, v) in row.iter_mut().enumerate() {
                            let p = if idx == prev { 0.0 } else { v.exp() };
                            *v = p - if idx == target { 1.0 } else { 0.0 };
                        }
                        nll
                    }
                }
            };
            total_nll += nll;
            if let Some(out) = per_row.as_mut() {
                out.push(nll);
            }
        }

        // logits now holds dNLL/dlogits.
        *d_beta += &logits.t().dot(&reps);
        let mut d_reps = logits.dot(self.beta());
        if let (Some(eta), Some(du)) = (self.eta(), du.as_ref()) {
            if let Some(d_eta) = d_eta.as_mut() {
                for r in 0..rows {
                    let w = du[r];
                    if w != 0.0 {
                        d_eta.scaled_add(w, &reps.row(r));
                        d_reps.row_mut(r).scaled_add(w, eta);
                    }
                }
            }
        }
        Ok((total_nll, d_reps))
    }
}

/// Two-stage log-probability of `y` given representation `h` and previous
/// job `y_prev` (pass the vocabulary's bos id at the first step).
pub fn two_stage_log_prob(
    h: ArrayView1<'_, f64>,
    y_prev: OccId,
    y: OccId,
    head: &TwoStageHead,
) -> Result<f64> {
    Head::TwoStage(head.clone()).log_prob(h, y_prev, y)
}

/// One-stage log-probability: plain softmax over all occupations.
pub fn one_stage_log_prob(h: ArrayView1<'_, f64>, y: OccId, head: &OneStageHead) -> Result<f64> {
    Head::OneStage(head.clone()).log_prob(h, y_prev_unused(), y)
}

fn y_prev_unused() -> OccId {
    u32::MAX
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn stay_probability_at_zero_logit() {
        // eta . h = 0 and y = y_prev gives log(0.5).
        let head = TwoStageHead { eta: Array1::zeros(3), beta: Array2::zeros((4, 3)) };
        let h = array![0.5, -1.0, 2.0];
        let lp = two_stage_log_prob(h.view(), 2, 2, &head).unwrap();
        assert_abs_diff_eq!(lp, 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn single_switch_target_gets_full_switch_mass() {
        // J = 2: the masked softmax over the one other job is 1, so the
        // switch outcome carries exactly log sigma(u) = log(0.5) at u = 0.
        let head = TwoStageHead { eta: Array1::zeros(2), beta: Array2::zeros((2, 2)) };
        let h = array![1.0, 1.0];
        let lp = two_stage_log_prob(h.view(), 0, 1, &head).unwrap();
        assert_abs_diff_eq!(lp, 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn two_stage_normalizes_over_all_outcomes() {
        let mut rng = crate::util::derived_rng(3, "head-test");
        let (j, d) = (7, 5);
        let head = TwoStageHead {
            eta: Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0)),
            beta: Array2::from_shape_fn((j, d), |_| rng.random_range(-1.0..1.0)),
        };
        let h = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
        // Brute-force sum over all 7 outcomes.
        let total: f64 =
            (0..j as OccId).map(|y| two_stage_log_prob(h.view(), 4, y, &head).unwrap().exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        // Switch branch never assigns mass to the previous job beyond stay.
        let dist = Head::TwoStage(head.clone()).log_dist(h.view(), 4);
        let u = head.eta.dot(&h);
        assert_abs_diff_eq!(dist[4].exp(), 1.0 - sigmoid(u), epsilon = 1e-12);
    }

    #[test]
    fn one_stage_uniform_when_beta_zero() {
        let head = OneStageHead { beta: Array2::zeros((5, 3)) };
        let h = array![1.0, 2.0, 3.0];
        for y in 0..5 {
            assert_abs_diff_eq!(
                one_stage_log_prob(h.view(), y, &head).unwrap(),
                (1.0f64 / 5.0).ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn bos_conditioning_degrades_to_softmax_over_real_jobs() {
        let mut rng = crate::util::derived_rng(5, "head-bos");
        let head = TwoStageHead {
            eta: Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0)),
            beta: Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0)),
        };
        let h = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let dist = Head::TwoStage(head).log_dist(h.view(), 6); // bos id = J
        let total: f64 = dist.iter().map(|lp| lp.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn batch_grads_match_log_dist() {
        // Gradient of the sum-NLL wrt beta, checked against finite
        // differences through log_dist.
        let mut rng = crate::util::derived_rng(11, "head-grad");
        let (j, d) = (5, 3);
        let mk_head = |beta: &Array2<f64>, eta: &Array1<f64>| {
            Head::TwoStage(TwoStageHead { eta: eta.clone(), beta: beta.clone() })
        };
        let beta = Array2::from_shape_fn((j, d), |_| rng.random_range(-0.5..0.5));
        let eta = Array1::from_shape_fn(d, |_| rng.random_range(-0.5..0.5));
        let reps = Array2::from_shape_fn((4, d), |_| rng.random_range(-1.0..1.0));
        let y_prev = vec![5u32, 0, 1, 2]; // first row conditions on bos
        let targets = vec![1u32, 0, 3, 2];

        let head = mk_head(&beta, &eta);
        let mut d_beta = Array2::zeros((j, d));
        let mut d_eta = Array1::zeros(d);
        let (nll, d_reps) = head
            .nll_and_grads(reps.view(), &y_prev, &targets, &mut d_beta, Some(&mut d_eta), None)
            .unwrap();

        let loss_at = |beta: &Array2<f64>, eta: &Array1<f64>, reps: &Array2<f64>| -> f64 {
            let head = mk_head(beta, eta);
            (0..4)
                .map(|r| -head.log_dist(reps.row(r), y_prev[r])[targets[r] as usize])
                .sum()
        };
        assert_abs_diff_eq!(nll, loss_at(&beta, &eta, &reps), epsilon = 1e-10);

        let h = 1e-6;
        for (idx, &g) in d_beta.indexed_iter() {
            let mut up = beta.clone();
            up[idx] += h;
            let mut down = beta.clone();
            down[idx] -= h;
            let num = (loss_at(&up, &eta, &reps) - loss_at(&down, &eta, &reps)) / (2.0 * h);
            assert_abs_diff_eq!(g, num, epsilon = 1e-6);
        }
        for (idx, &g) in d_eta.indexed_iter() {
            let mut up = eta.clone();
            up[idx] += h;
            let mut down = eta.clone();
            down[idx] -= h;
            let num = (loss_at(&beta, &up, &reps) - loss_at(&beta, &down, &reps)) / (2.0 * h);
            assert_abs_diff_eq!(g, num, epsilon = 1e-6);
        }
        for (idx, &g) in d_reps.indexed_iter() {
            let mut up = reps.clone();
            up[idx] += h;
            let mut down = reps.clone();
            down[idx] -= h;
            let num = (loss_at(&beta, &eta, &up) - loss_at(&beta, &eta, &down)) / (2.0 * h);
            assert_abs_diff_eq!(g, num, epsilon = 1e-6);
        }
    }
}
