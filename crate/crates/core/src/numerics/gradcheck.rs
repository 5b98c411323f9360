//! Finite-difference gradient verification.
//!
//! Central differences (step 1e-5, f64) against a caller-supplied analytic
//! gradient, over a seeded random subset of coordinates per tensor. The
//! checker only re-evaluates the loss; it is independent of whatever
//! backward pass produced the analytic gradient.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::util::derived_rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Pass iff max relative error is below this.
    pub tolerance: f64,
    /// Coordinates sampled per tensor (all coordinates if the tensor is
    /// smaller).
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4, coords_per_tensor: 24, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// Plain-text table: parameter name, analytic, numeric, relative error.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>6} {:>14} {:>14} {:>10}\n",
            "parameter", "coord", "analytic", "numeric", "rel err"
        ));
        for e in &self.entries {
            out.push_str(&format!(
                "{:<28} {:>6} {:>14.6e} {:>14.6e} {:>10.2e}\n",
                e.tensor, e.coord, e.analytic, e.numeric, e.rel_error
            ));
        }
        out.push_str(&format!(
            "max relative error {:.3e} (tolerance {:.1e}): {}\n",
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Coordinates where both gradients are below this magnitude are compared
/// with this floor in the denominator, so finite-difference noise on
/// genuinely tiny gradients does not register as relative error.
const DENOM_FLOOR: f64 = 1e-6;

/// Verify `analytic` against central differences of `loss` at `theta`.
///
/// `layout` names the tensors the flat vector is made of, `(name, len)` in
/// order; it controls both sampling and reporting. The loss must be finite
/// at every evaluation point or an error is returned.
pub fn gradient_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    analytic: &[f64],
    layout: &[(String, usize)],
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let total: usize = layout.iter().map(|(_, n)| n).sum();
    if total != theta.len() || theta.len() != analytic.len() {
        return Err(Error::shape(format!(
            "gradient check: layout {total}, theta {}, analytic {}",
            theta.len(),
            analytic.len()
        )));
    }
    let mut rng = derived_rng(config.seed, "gradient-check");
    let mut point = theta.to_vec();
    let mut entries = Vec::new();
    let mut max_rel: f64 = 0.0;
    let mut offset = 0;
    for (name, len) in layout {
        let picks = if *len <= config.coords_per_tensor {
            (0..*len).collect::<Vec<_>>()
        } else {
            let mut v = sample(&mut rng, *len, config.coords_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for local in picks {
            let i = offset + local;
            let saved = point[i];
            point[i] = saved + config.step;
            let up = loss(&point)?;
            point[i] = saved - config.step;
            let down = loss(&point)?;
            point[i] = saved;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::data(format!(
                    "gradient check: non-finite loss when perturbing {name}[{local}]"
                )));
            }
            let numeric = (up - down) / (2.0 * config.step);
            let a = analytic[i];
            let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            let rel = (a - numeric).abs() / denom;
            max_rel = max_rel.max(rel);
            entries.push(GradCheckEntry {
                tensor: name.clone(),
                coord: local,
                analytic: a,
                numeric,
                rel_error: rel,
            });
        }
        offset += len;
    }
    Ok(GradCheckReport { entries, max_rel_error: max_rel, tolerance: config.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_matches_exactly() {
        // loss = sum theta^2, gradient 2 theta: central differences are exact
        // for quadratics up to rounding.
        let theta: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let analytic: Vec<f64> = theta.iter().map(|&t| 2.0 * t).collect();
        let layout = vec![("theta".to_string(), theta.len())];
        let report = gradient_check(
            |p| Ok(p.iter().map(|&x| x * x).sum()),
            &theta,
            &analytic,
            &layout,
            &GradCheckConfig { tolerance: 1e-8, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render_table());
    }

    #[test]
    fn log_softmax_composite_within_tolerance() {
        // loss = -log softmax(theta)[0]
        let theta = vec![0.3, -1.2, 0.8, 0.05];
        let loss = |p: &[f64]| -> Result<f64> {
            let z = crate::numerics::logsumexp(p);
            Ok(z - p[0])
        };
        let probs: Vec<f64> = {
            let z = crate::numerics::logsumexp(&theta);
            theta.iter().map(|&t| (t - z).exp()).collect()
        };
        let analytic: Vec<f64> =
            probs.iter().enumerate().map(|(i, &p)| p - if i == 0 { 1.0 } else { 0.0 }).collect();
        let layout = vec![("logits".to_string(), 4)];
        let report = gradient_check(
            loss,
            &theta,
            &analytic,
            &layout,
            &GradCheckConfig { tolerance: 1e-6, ..GradCheckConfig::default() },
        )
        .unwrap();
        assert!(report.passed(), "{}", report.render_table());
    }

    #[test]
    fn nan_loss_is_an_error() {
        let theta = vec![1.0];
        let analytic = vec![0.0];
        let layout = vec![("x".to_string(), 1)];
        let err = gradient_check(|_| Ok(f64::NAN), &theta, &analytic, &layout, &GradCheckConfig::default());
        assert!(err.is_err());
    }
}
