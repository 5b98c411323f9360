//! Deterministic numerical primitives shared by every model.
//!
//! Everything here is pure f64. Acceptance and gradient-check suites rely on
//! bit-determinism of these functions given identical inputs on one platform.

mod adam;
mod gradcheck;
mod ops;
mod params;

pub use adam::{adam_step, lr_at, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckEntry, GradCheckReport};
pub use ops::{
    gelu, gelu_prime, log_sigmoid, log_softmax_masked, log_softmax_masked_into, logsumexp,
    sigmoid, sinusoidal_embedding, softplus, LayerNorm1d,
};
pub use params::{flatten_params, load_flat_params, ParamDesc, ParamTensors};
