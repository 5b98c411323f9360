//! Transformer parameter tensors.
//!
//! Attention projections are stored packed: head `a` of `wq`/`wk`/`wv` is
//! the column block `a*K..(a+1)*K`. Position embeddings are sinusoidal and
//! derived on the fly, never stored. The output head is zero-initialized so
//! a fresh model starts from calibrated (uniform) predictions; everything
//! else follows the usual normal(0, 0.02) scheme with zero biases and unit
//! layer-norm gains.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand_distr::{Distribution, Normal};

use super::config::TransformerConfig;
use crate::corpus::Vocabulary;
use crate::models::Head;
use crate::numerics::{ParamDesc, ParamTensors};
use crate::util::derived_rng;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    /// `[D, D]`, query projections, packed per head.
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    /// `[D, D]`, the output map applied to the concatenated heads.
    pub wo: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    /// `[J+2, D]`: predictable occupations, then bos, then the mask row.
    pub occ_emb: Array2<f64>,
    /// One `[N_c, D]` table per covariate.
    pub cov_embs: Vec<Array2<f64>>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    pub head: Head,
}

impl TransformerParams {
    pub fn init(config: &TransformerConfig, vocab: &Vocabulary, seed: u64) -> Self {
        let d = config.dim;
        let j = vocab.num_occupations();
        let mut rng = derived_rng(seed, "career-init");
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut mat = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
        };

        let occ_emb = mat(j + 2, d);
        let cov_embs =
            vocab.covariates().iter().map(|s| mat(s.cardinality(), d)).collect::<Vec<_>>();
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                wq: mat(d, d),
                wk: mat(d, d),
                wv: mat(d, d),
                wo: mat(d, d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w1: mat(d, config.ffn_dim),
                b1: Array1::zeros(config.ffn_dim),
                w2: mat(config.ffn_dim, d),
                b2: Array1::zeros(d),
            })
            .collect();

        TransformerParams {
            occ_emb,
            cov_embs,
            layers,
            lnf_gain: Array1::ones(d),
            lnf_bias: Array1::zeros(d),
            head: Head::zeros(config.head, j, d),
        }
    }

    /// Same shapes, all zeros; gradient buffer.
    pub fn zeros_like(&self) -> Self {
        TransformerParams {
            occ_emb: Array2::zeros(self.occ_emb.dim()),
            cov_embs: self.cov_embs.iter().map(|e| Array2::zeros(e.dim())).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: Array1::zeros(l.ln1_gain.len()),
                    ln1_bias: Array1::zeros(l.ln1_bias.len()),
                    wq: Array2::zeros(l.wq.dim()),
                    wk: Array2::zeros(l.wk.dim()),
                    wv: Array2::zeros(l.wv.dim()),
                    wo: Array2::zeros(l.wo.dim()),
                    ln2_gain: Array1::zeros(l.ln2_gain.len()),
                    ln2_bias: Array1::zeros(l.ln2_bias.len()),
                    w1: Array2::zeros(l.w1.dim()),
                    b1: Array1::zeros(l.b1.len()),
                    w2: Array2::zeros(l.w2.dim()),
                    b2: Array1::zeros(l.b2.len()),
                })
                .collect(),
            lnf_gain: Array1::zeros(self.lnf_gain.len()),
            lnf_bias: Array1::zeros(self.lnf_bias.len()),
            head: Head::zeros(self.head.kind(), self.head.num_occupations(), self.head.dim()),
        }
    }

    /// Elementwise accumulate (used by the deterministic chunk reduction).
    pub fn add_assign(&mut self, other: &Self) {
        let views = other.param_views();
        for (mut dst, src) in self.param_views_mut().into_iter().zip(views) {
            dst.zip_mut_with(&src, |a, &b| *a += b);
        }
    }

    /// Scale every tensor (turns sum-gradients into mean-gradients).
    pub fn scale(&mut self, factor: f64) {
        for mut view in self.param_views_mut() {
            view.mapv_inplace(|v| v * factor);
        }
    }
}

impl ParamTensors for TransformerParams {
    fn param_descs(&self) -> Vec<ParamDesc> {
        let mut out = vec![ParamDesc::new("occ_emb", true)];
        for c in 0..self.cov_embs.len() {
            out.push(ParamDesc::new(format!("cov_emb.{c}"), true));
        }
        for l in 0..self.layers.len() {
            out.push(ParamDesc::new(format!("layer.{l}.ln1_gain"), false));
            out.push(ParamDesc::new(format!("layer.{l}.ln1_bias"), false));
            out.push(ParamDesc::new(format!("layer.{l}.wq"), true));
            out.push(ParamDesc::new(format!("layer.{l}.wk"), true));
            out.push(ParamDesc::new(format!("layer.{l}.wv"), true));
            out.push(ParamDesc::new(format!("layer.{l}.wo"), true));
            out.push(ParamDesc::new(format!("layer.{l}.ln2_gain"), false));
            out.push(ParamDesc::new(format!("layer.{l}.ln2_bias"), false));
            out.push(ParamDesc::new(format!("layer.{l}.w1"), true));
            out.push(ParamDesc::new(format!("layer.{l}.b1"), false));
            out.push(ParamDesc::new(format!("layer.{l}.w2"), true));
            out.push(ParamDesc::new(format!("layer.{l}.b2"), false));
        }
        out.push(ParamDesc::new("lnf_gain", false));
        out.push(ParamDesc::new("lnf_bias", false));
        out.push(ParamDesc::new("head.beta", true));
        if self.head.eta().is_some() {
            out.push(ParamDesc::new("head.eta", true));
        }
        out
    }

    fn param_views(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out: Vec<ArrayViewD<'_, f64>> = vec![self.occ_emb.view().into_dyn()];
        out.extend(self.cov_embs.iter().map(|e| e.view().into_dyn()));
        for l in &self.layers {
            out.push(l.ln1_gain.view().into_dyn());
            out.push(l.ln1_bias.view().into_dyn());
            out.push(l.wq.view().into_dyn());
            out.push(l.wk.view().into_dyn());
            out.push(l.wv.view().into_dyn());
            out.push(l.wo.view().into_dyn());
            out.push(l.ln2_gain.view().into_dyn());
            out.push(l.ln2_bias.view().into_dyn());
            out.push(l.w1.view().into_dyn());
            out.push(l.b1.view().into_dyn());
            out.push(l.w2.view().into_dyn());
            out.push(l.b2.view().into_dyn());
        }
        out.push(self.lnf_gain.view().into_dyn());
        out.push(self.lnf_bias.view().into_dyn());
        out.push(self.head.beta().view().into_dyn());
        if let Head::TwoStage(h) = &self.head {
            out.push(h.eta.view().into_dyn());
        }
        out
    }

    fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out: Vec<ArrayViewMutD<'_, f64>> = vec![self.occ_emb.view_mut().into_dyn()];
        out.extend(self.cov_embs.iter_mut().map(|e| e.view_mut().into_dyn()));
        for l in &mut self.layers {
            out.push(l.ln1_gain.view_mut().into_dyn());
            out.push(l.ln1_bias.view_mut().into_dyn());
            out.push(l.wq.view_mut().into_dyn());
            out.push(l.wk.view_mut().into_dyn());
            out.push(l.wv.view_mut().into_dyn());
            out.push(l.wo.view_mut().into_dyn());
            out.push(l.ln2_gain.view_mut().into_dyn());
            out.push(l.ln2_bias.view_mut().into_dyn());
            out.push(l.w1.view_mut().into_dyn());
            out.push(l.b1.view_mut().into_dyn());
            out.push(l.w2.view_mut().into_dyn());
            out.push(l.b2.view_mut().into_dyn());
        }
        out.push(self.lnf_gain.view_mut().into_dyn());
        out.push(self.lnf_bias.view_mut().into_dyn());
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
