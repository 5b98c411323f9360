//! Transformer forward and backward passes.
//!
//! A batch is flattened to `R = sum T_i` rows; all linear layers run as
//! single `[R, D]` matrix products, attention runs per sequence on its row
//! range. One layer computes, in order:
//!
//! ```text
//! x      = ln1(h)                         (pre-attention norm)
//! q,k,v  = x Wq, x Wk, x Wv               (heads = column blocks, K = D/A)
//! z_a    = q_a k_a^T / sqrt(K)            (masked to t' <= t)
//! pi_a   = dropout(softmax(z_a))
//! g      = concat_a(pi_a v_a)
//! u      = ln2(h + g Wo^T)                (norm after the attention residual)
//! h'     = u + W2^T dropout(gelu(W1^T u + b1)) + b2
//! ```
//!
//! and the final layer's output passes through one last layer norm before
//! the prediction head.

use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::TransformerConfig;
use super::params::TransformerParams;
use crate::corpus::{CareerSequence, OccId, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{gelu, gelu_prime, sinusoidal_embedding, LayerNorm1d};
use crate::util::derived_rng_n;

/// Flattened model inputs for a batch of sequences.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub rows: usize,
    /// Per-sequence row ranges, in batch order.
    pub ranges: Vec<std::ops::Range<usize>>,
    /// Embedding row for the conditioning job at each position (the true
    /// previous job, bos, or the mask row for hidden observations).
    pub input_jobs: Vec<OccId>,
    /// Per covariate, the category id at each position.
    pub cov_ids: Vec<Vec<OccId>>,
    /// 1-based position of each row within its sequence.
    pub positions: Vec<usize>,
    /// Head conditioning: the true previous job (never masked).
    pub y_prev: Vec<OccId>,
    pub targets: Vec<OccId>,
}

impl BatchInput {
    pub fn new(
        seqs: &[&CareerSequence],
        masks: &[Option<&[bool]>],
        vocab: &Vocabulary,
        config: &TransformerConfig,
    ) -> Result<Self> {
        debug_assert_eq!(seqs.len(), masks.len());
        let rows: usize = seqs.iter().map(|s| s.len()).sum();
        let bos = vocab.bos_id();
        let mask_row = vocab.mask_id();
        let num_cov = vocab.covariates().len();

        let mut out = BatchInput {
            rows,
            ranges: Vec::with_capacity(seqs.len()),
            input_jobs: Vec::with_capacity(rows),
            cov_ids: vec![Vec::with_capacity(rows); num_cov],
            positions: Vec::with_capacity(rows),
            y_prev: Vec::with_capacity(rows),
            targets: Vec::with_capacity(rows),
        };
        let mut offset = 0;
        for (seq, mask) in seqs.iter().zip(masks) {
            let t_len = seq.len();
            if t_len > config.max_len {
                return Err(Error::data(format!(
                    "sequence {:?} has {t_len} steps, model max_len is {}",
                    seq.id, config.max_len
                )));
            }
            if let Some(m) = mask {
                if m.len() != t_len {
                    return Err(Error::shape(format!("mask length {} vs T {t_len}", m.len())));
                }
            }
            out.ranges.push(offset..offset + t_len);
            for t in 0..t_len {
                let prev = seq.prev_job(t, bos);
                let hidden = t > 0 && mask.map(|m| m[t - 1]).unwrap_or(false);
                out.input_jobs.push(if hidden { mask_row } else { prev });
                out.y_prev.push(prev);
                out.targets.push(seq.jobs[t]);
                out.positions.push(t + 1);
                for c in 0..num_cov {
                    out.cov_ids[c].push(seq.cov_at(c, t));
                }
            }
            offset += t_len;
        }
        Ok(out)
    }
}

/// Per-layer activations kept for the backward pass.
pub struct LayerCache {
    x_hat1: Array2<f64>,
    rstd1: Vec<f64>,
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per sequence: `[A, T, T]` attention weights after softmax.
    pi: Vec<Array3<f64>>,
    /// Per sequence: inverted-dropout scale factors (train mode only).
    attn_scale: Option<Vec<Array3<f64>>>,
    g: Array2<f64>,
    x_hat2: Array2<f64>,
    rstd2: Vec<f64>,
    u: Array2<f64>,
    f1: Array2<f64>,
    a1: Array2<f64>,
    ffn_scale: Option<Array2<f64>>,
}

pub struct ForwardCaches {
    layers: Vec<LayerCache>,
    x_hat_f: Array2<f64>,
    rstd_f: Vec<f64>,
}

/// Seeded dropout context for one optimization step. Each sequence draws
/// from its own stream (derived from the batch position), so results do not
/// depend on how the batch is chunked across threads.
#[derive(Debug, Clone, Copy)]
pub struct DropoutCtx {
    pub seed: u64,
    pub step: u64,
    /// Index of the batch's first sequence within the step (nonzero when a
    /// batch is processed in chunks).
    pub first_stream: usize,
}

impl DropoutCtx {
    fn rng_for(&self, local_idx: usize) -> ChaCha8Rng {
        derived_rng_n(
            self.seed ^ self.step.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            "career-dropout",
            (self.first_stream + local_idx) as u64,
        )
    }
}

fn layer_norm_rows(
    input: &Array2<f64>,
    gain: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
    let mut x_hat = input.clone();
    let mut rstd = Vec::with_capacity(input.nrows());
    for mut row in x_hat.rows_mut() {
        rstd.push(LayerNorm1d::normalize(row.view_mut()));
    }
    let mut affine = x_hat.clone();
    for mut row in affine.rows_mut() {
        for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    (x_hat, rstd, affine)
}

fn layer_norm_rows_backward(
    d_out: &Array2<f64>,
    x_hat: &Array2<f64>,
    rstd: &[f64],
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
    d_in: &mut Array2<f64>,
) {
    for r in 0..d_out.nrows() {
        LayerNorm1d::backward(
            d_out.row(r),
            x_hat.row(r),
            rstd[r],
            gain.view(),
            d_gain.view_mut(),
            d_bias.view_mut(),
            d_in.row_mut(r),
        );
    }
}

pub struct Net<'a> {
    pub config: &'a TransformerConfig,
    pub params: &'a TransformerParams,
}

impl<'a> Net<'a> {
    /// Embedding layer: previous-job embedding + covariate embeddings +
    /// sinusoidal position.
    pub fn first_layer(&self, batch: &BatchInput) -> Result<Array2<f64>> {
        let d = self.config.dim;
        let max_pos = batch.positions.iter().copied().max().unwrap_or(1);
        let mut sin_table = Array2::zeros((max_pos + 1, d));
        for p in 1..=max_pos {
            sin_table.row_mut(p).assign(&sinusoidal_embedding(p, d)?);
        }
        let mut h0 = Array2::zeros((batch.rows, d));
        for r in 0..batch.rows {
            let mut row = h0.row_mut(r);
            row.assign(&self.params.occ_emb.row(batch.input_jobs[r] as usize));
            for (c, ids) in batch.cov_ids.iter().enumerate() {
                row.scaled_add(1.0, &self.params.cov_embs[c].row(ids[r] as usize));
            }
            row.scaled_add(1.0, &sin_table.row(batch.positions[r]));
        }
        Ok(h0)
    }

    /// Full forward pass to final representations. With `dropout` set,
    /// attention weights and FFN activations are dropped (inverted scaling).
    pub fn forward(
        &self,
        batch: &BatchInput,
        dropout: Option<&DropoutCtx>,
    ) -> Result<(Array2<f64>, ForwardCaches)> {
        let cfg = self.config;
        let (d, a, k_w) = (cfg.dim, cfg.heads, cfg.head_width());
        let inv_sqrt_k = 1.0 / (k_w as f64).sqrt();
        let h0 = self.first_layer(batch)?;
        let mut drop_rngs: Option<Vec<ChaCha8Rng>> =
            dropout.map(|ctx| (0..batch.ranges.len()).map(|i| ctx.rng_for(i)).collect());

        let mut h = h0;
        let mut layers = Vec::with_capacity(cfg.layers);
        for lp in &self.params.layers {
            let (x_hat1, rstd1, x) = layer_norm_rows(&h, &lp.ln1_gain, &lp.ln1_bias);
            let q = x.dot(&lp.wq);
            let k = x.dot(&lp.wk);
            let v = x.dot(&lp.wv);

            let mut g = Array2::zeros((batch.rows, d));
            let mut pis = Vec::with_capacity(batch.ranges.len());
            let mut scales: Option<Vec<Array3<f64>>> =
                drop_rngs.as_ref().map(|_| Vec::with_capacity(batch.ranges.len()));
            for (si, range) in batch.ranges.iter().enumerate() {
                let t_len = range.len();
                let mut pi_seq = Array3::zeros((a, t_len, t_len));
                let mut scale_seq = drop_rngs
                    .as_ref()
                    .map(|_| Array3::from_elem((a, t_len, t_len), 1.0));
                for head in 0..a {
                    let cols = head * k_w..(head + 1) * k_w;
                    let qs = q.slice(s![range.clone(), cols.clone()]);
                    let ks = k.slice(s![range.clone(), cols.clone()]);
                    let vs = v.slice(s![range.clone(), cols.clone()]);
                    // Causal scores and row softmax.
                    for i in 0..t_len {
                        let mut row = pi_seq.slice_mut(s![head, i, ..]);
                        let mut max = f64::NEG_INFINITY;
                        for jj in 0..=i {
                            let z = qs.row(i).dot(&ks.row(jj)) * inv_sqrt_k;
                            row[jj] = z;
                            max = max.max(z);
                        }
                        let mut sum = 0.0;
                        for jj in 0..=i {
                            let e = (row[jj] - max).exp();
                            row[jj] = e;
                            sum += e;
                        }
                        for jj in 0..=i {
                            row[jj] /= sum;
                        }
                    }
                    // Attention dropout on the weights.
                    if let (Some(rngs), Some(scale_seq)) = (drop_rngs.as_mut(), scale_seq.as_mut()) {
                        let p = cfg.dropout_attn;
                        if p > 0.0 {
                            let rng = &mut rngs[si];
                            let keep = 1.0 / (1.0 - p);
                            for i in 0..t_len {
                                for jj in 0..=i {
                                    scale_seq[[head, i, jj]] =
                                        if rng.random::<f64>() < p { 0.0 } else { keep };
                                }
                            }
                        }
                    }
                    // Weighted value average per position.
                    let mut gs = g.slice_mut(s![range.clone(), cols]);
                    for i in 0..t_len {
                        for jj in 0..=i {
                            let mut w = pi_seq[[head, i, jj]];
                            if let Some(scale_seq) = &scale_seq {
                                w *= scale_seq[[head, i, jj]];
                            }
                            if w != 0.0 {
                                gs.row_mut(i).scaled_add(w, &vs.row(jj));
                            }
                        }
                    }
                }
                pis.push(pi_seq);
                if let (Some(scales), Some(scale_seq)) = (scales.as_mut(), scale_seq) {
                    scales.push(scale_seq);
                }
            }

            let mut h_tilde = h;
            h_tilde.scaled_add(1.0, &g.dot(&lp.wo.t()));
            let (x_hat2, rstd2, u) = layer_norm_rows(&h_tilde, &lp.ln2_gain, &lp.ln2_bias);

            let mut f1 = u.dot(&lp.w1);
            for mut row in f1.rows_mut() {
                row += &lp.b1;
            }
            let mut a1 = f1.mapv(gelu);
            let ffn_scale = match (drop_rngs.as_mut(), cfg.dropout_ffn > 0.0) {
                (Some(rngs), true) => {
                    let p = cfg.dropout_ffn;
                    let keep = 1.0 / (1.0 - p);
                    let mut scale = Array2::from_elem(a1.dim(), 1.0);
                    for (si, range) in batch.ranges.iter().enumerate() {
                        let rng = &mut rngs[si];
                        for r in range.clone() {
                            for c in 0..scale.ncols() {
                                if rng.random::<f64>() < p {
                                    scale[[r, c]] = 0.0;
                                } else {
                                    scale[[r, c]] = keep;
                                }
                            }
                        }
                    }
                    a1.zip_mut_with(&scale, |av, &sv| *av *= sv);
                    Some(scale)
                }
                _ => None,
            };
            let mut h_next = a1.dot(&lp.w2);
            for mut row in h_next.rows_mut() {
                row += &lp.b2;
            }
            h_next += &u;

            layers.push(LayerCache {
                x_hat1,
                rstd1,
                x,
                q,
                k,
                v,
                pi: pis,
                attn_scale: scales,
                g,
                x_hat2,
                rstd2,
                u,
                f1,
                a1,
                ffn_scale,
            });
            h = h_next;
        }

        let (x_hat_f, rstd_f, reps) = layer_norm_rows(&h, &self.params.lnf_gain, &self.params.lnf_bias);
        Ok((reps, ForwardCaches { layers, x_hat_f, rstd_f }))
    }

    /// Backward pass from `d_reps` (gradient at the final representations)
    /// down to every parameter, accumulating into `grads`.
    pub fn backward(
        &self,
        batch: &BatchInput,
        caches: &ForwardCaches,
        d_reps: &Array2<f64>,
        grads: &mut TransformerParams,
    ) {
        let cfg = self.config;
        let (d, a, k_w) = (cfg.dim, cfg.heads, cfg.head_width());
        let inv_sqrt_k = 1.0 / (k_w as f64).sqrt();

        let mut d_h = Array2::zeros((batch.rows, d));
        layer_norm_rows_backward(
            d_reps,
            &caches.x_hat_f,
            &caches.rstd_f,
            &self.params.lnf_gain,
            &mut grads.lnf_gain,
            &mut grads.lnf_bias,
            &mut d_h,
        );

        for (li, lp) in self.params.layers.iter().enumerate().rev() {
            let cache = &caches.layers[li];
            let lg = &mut grads.layers[li];

            // FFN residual: h_next = u + a1 W2 + b2.
            let d_f2 = &d_h; // alias: dNLL/d f2 equals dNLL/d h_next
            lg.w2 += &cache.a1.t().dot(d_f2);
            for row in d_f2.rows() {
                lg.b2 += &row;
            }
            let mut d_a1 = d_f2.dot(&lp.w2.t());
            if let Some(scale) = &cache.ffn_scale {
                d_a1.zip_mut_with(scale, |g, &s| *g *= s);
            }
            let mut d_f1 = d_a1;
            d_f1.zip_mut_with(&cache.f1, |g, &x| *g *= gelu_prime(x));
            lg.w1 += &cache.u.t().dot(&d_f1);
            for row in d_f1.rows() {
                lg.b1 += &row;
            }
            let mut d_u = d_f1.dot(&lp.w1.t());
            d_u += &d_h;

            // ln2 after the attention residual.
            let mut d_h_tilde = Array2::zeros((batch.rows, d));
            layer_norm_rows_backward(
                &d_u,
                &cache.x_hat2,
                &cache.rstd2,
                &lp.ln2_gain,
                &mut lg.ln2_gain,
                &mut lg.ln2_bias,
                &mut d_h_tilde,
            );

            // h_tilde = h + g Wo^T.
            lg.wo += &d_h_tilde.t().dot(&cache.g);
            let d_g = d_h_tilde.dot(&lp.wo);
            d_h = d_h_tilde; // residual path to the layer input

            // Attention per sequence and head.
            let mut d_q = Array2::zeros((batch.rows, d));
            let mut d_k = Array2::zeros((batch.rows, d));
            let mut d_v = Array2::zeros((batch.rows, d));
            for (si, range) in batch.ranges.iter().enumerate() {
                let t_len = range.len();
                let pi_seq = &cache.pi[si];
                for head in 0..a {
                    let cols = head * k_w..(head + 1) * k_w;
                    let d_b = d_g.slice(s![range.clone(), cols.clone()]);
                    let vs = cache.v.slice(s![range.clone(), cols.clone()]);
                    let qs = cache.q.slice(s![range.clone(), cols.clone()]);
                    let ks = cache.k.slice(s![range.clone(), cols.clone()]);
                    let mut d_qs = d_q.slice_mut(s![range.clone(), cols.clone()]);
                    let mut d_ks = d_k.slice_mut(s![range.clone(), cols.clone()]);
                    let mut d_vs = d_v.slice_mut(s![range.clone(), cols]);
                    for i in 0..t_len {
                        // d pi (through dropout), then softmax backward.
                        let mut d_pi = vec![0.0; i + 1];
                        for jj in 0..=i {
                            let mut w = d_b.row(i).dot(&vs.row(jj));
                            if let Some(scales) = &cache.attn_scale {
                                let sc = scales[si][[head, i, jj]];
                                // dV uses the dropped weight.
                                let dropped = pi_seq[[head, i, jj]] * sc;
                                if dropped != 0.0 {
                                    d_vs.row_mut(jj).scaled_add(dropped, &d_b.row(i));
                                }
                                w *= sc;
                            } else {
                                let p = pi_seq[[head, i, jj]];
                                if p != 0.0 {
                                    d_vs.row_mut(jj).scaled_add(p, &d_b.row(i));
                                }
                            }
                            d_pi[jj] = w;
                        }
                        let mut dot = 0.0;
                        for jj in 0..=i {
                            dot += d_pi[jj] * pi_seq[[head, i, jj]];
                        }
                        for jj in 0..=i {
                            let d_z = pi_seq[[head, i, jj]] * (d_pi[jj] - dot) * inv_sqrt_k;
                            if d_z != 0.0 {
                                d_qs.row_mut(i).scaled_add(d_z, &ks.row(jj));
                                d_ks.row_mut(jj).scaled_add(d_z, &qs.row(i));
                            }
                        }
                    }
                }
            }

            lg.wq += &cache.x.t().dot(&d_q);
            lg.wk += &cache.x.t().dot(&d_k);
            lg.wv += &cache.x.t().dot(&d_v);
            let mut d_x = d_q.dot(&lp.wq.t());
            d_x += &d_k.dot(&lp.wk.t());
            d_x += &d_v.dot(&lp.wv.t());

            layer_norm_rows_backward(
                &d_x,
                &cache.x_hat1,
                &cache.rstd1,
                &lp.ln1_gain,
                &mut lg.ln1_gain,
                &mut lg.ln1_bias,
                &mut d_h,
            );
        }

        // Embedding scatter.
        for r in 0..batch.rows {
            grads.occ_emb.row_mut(batch.input_jobs[r] as usize).scaled_add(1.0, &d_h.row(r));
            for (c, ids) in batch.cov_ids.iter().enumerate() {
                grads.cov_embs[c].row_mut(ids[r] as usize).scaled_add(1.0, &d_h.row(r));
            }
        }
    }
}
