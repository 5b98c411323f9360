//! Uniform access to a model's named parameter tensors.
//!
//! Typed parameter structs implement [`ParamTensors`] to expose their
//! tensors in a stable order; the optimizer, checkpoint container, transfer
//! logic, and gradient checker all work through this view.

use ndarray::{ArrayViewD, ArrayViewMutD};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamDesc {
    pub name: String,
    /// Whether decoupled weight decay applies (matrices yes, biases and
    /// layer-norm parameters no).
    pub decay: bool,
}

impl ParamDesc {
    pub fn new(name: impl Into<String>, decay: bool) -> Self {
        ParamDesc { name: name.into(), decay }
    }
}

/// A fixed-order view over named parameter tensors. Implementations must
/// return descriptors and views in the same order every call; gradients use
/// the same struct type, so parameter/gradient pairs align by index.
pub trait ParamTensors {
    fn param_descs(&self) -> Vec<ParamDesc>;
    fn param_views(&self) -> Vec<ArrayViewD<'_, f64>>;
    fn param_views_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    fn num_params(&self) -> usize {
        self.param_views().iter().map(|v| v.len()).sum()
    }
}

/// Copy all tensors into one flat vector (descriptor order, row-major).
pub fn flatten_params<P: ParamTensors>(params: &P) -> Vec<f64> {
    let mut flat = Vec::with_capacity(params.num_params());
    for view in params.param_views() {
        flat.extend(view.iter());
    }
    flat
}

/// Inverse of [`flatten_params`].
pub fn load_flat_params<P: ParamTensors>(params: &mut P, flat: &[f64]) -> Result<()> {
    let mut offset = 0;
    for mut view in params.param_views_mut() {
        let n = view.len();
        if offset + n > flat.len() {
            return Err(Error::shape("flat parameter vector too short"));
        }
        for (dst, src) in view.iter_mut().zip(&flat[offset..offset + n]) {
            *dst = *src;
        }
        offset += n;
    }
    if offset != flat.len() {
        return Err(Error::shape(format!(
            "flat parameter vector has {} values, model needs {offset}",
            flat.len()
        )));
    }
    Ok(())
}
