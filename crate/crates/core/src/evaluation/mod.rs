//! Held-out evaluation: perplexity with transition-category decomposition,
//! binary perplexity/AUC, and Monte-Carlo forecasting.

mod binary;
mod forecast;
mod perplexity;

pub use binary::{binary_metrics, BinaryMetrics};
pub use forecast::{forecast, ForecastConfig, ForecastReport, StateMetrics, YearForecast};
pub use perplexity::{classify_step, perplexity, CategoryMetrics, EvalReport, TransitionCategory};
