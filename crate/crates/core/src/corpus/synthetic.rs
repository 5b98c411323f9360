//! Synthetic corpora with known generating processes.
//!
//! These are the verification oracles for the model suite: a fitted model's
//! held-out behavior can be compared against analytically known quantities
//! of the declared process.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CareerSequence, Corpus, Vocabulary};
use crate::error::{Error, Result};
use crate::util::derived_rng;

/// Sequence-length distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthSpec {
    Fixed(usize),
    /// Inclusive bounds.
    Uniform { min: usize, max: usize },
}

impl LengthSpec {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        match *self {
            LengthSpec::Fixed(n) => n,
            LengthSpec::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LengthSpec::Fixed(n) => n >= 1,
            LengthSpec::Uniform { min, max } => min >= 1 && min <= max,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("invalid length spec"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SyntheticKind {
    /// `y_t ~ transition[y_{t-1}]`, `y_1 ~ initial` (uniform if omitted).
    FirstOrderMarkov {
        transition: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        initial: Option<Vec<f64>>,
    },
    /// `y_t = y_{t-1}` with probability `stay`, else uniform over the others.
    StickyMarkov { stay: f64 },
    /// `y_t = y_{t-lag}` with probability `copy`, else a fresh uniform draw.
    /// The first `lag` steps are uniform.
    LongRange { lag: usize, copy: f64 },
}

/// Declarative description of a synthetic corpus; mirrors the JSON document
/// accepted by the `gen` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Number of occupation categories (named `occ00`, `occ01`, ...).
    pub occupations: usize,
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub sequences: usize,
    pub length: LengthSpec,
    pub seed: u64,
    #[serde(default = "default_start_year")]
    pub start_year: i32,
}

fn default_start_year() -> i32 {
    2000
}

fn check_stochastic_row(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
        return Err(Error::config(format!("{what}: probabilities out of range")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what}: row sums to {sum}, expected 1")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let j = self.occupations;
        if j < 2 {
            return Err(Error::config("need at least 2 occupations"));
        }
        if self.sequences == 0 {
            return Err(Error::config("need at least 1 sequence"));
        }
        self.length.validate()?;
        match &self.kind {
            SyntheticKind::FirstOrderMarkov { transition, initial } => {
                if transition.len() != j || transition.iter().any(|r| r.len() != j) {
                    return Err(Error::config("transition matrix must be J x J"));
                }
                for (i, row) in transition.iter().enumerate() {
                    check_stochastic_row(row, &format!("transition row {i}"))?;
                }
                if let Some(init) = initial {
                    if init.len() != j {
                        return Err(Error::config("initial distribution must have J entries"));
                    }
                    check_stochastic_row(init, "initial distribution")?;
                }
            }
            SyntheticKind::StickyMarkov { stay } => {
                if !(0.0..=1.0).contains(stay) {
                    return Err(Error::config("stay probability must be in [0, 1]"));
                }
            }
            SyntheticKind::LongRange { lag, copy } => {
                if *lag == 0 {
                    return Err(Error::config("lag must be at least 1"));
                }
                if !(0.0..=1.0).contains(copy) {
                    return Err(Error::config("copy probability must be in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Occupation names, `occ00..`: zero-padded so lexicographic vocabulary
    /// order matches id order.
    pub fn occupation_names(&self) -> Vec<String> {
        let width = (self.occupations as f64).log10().floor() as usize + 1;
        (0..self.occupations).map(|i| format!("occ{i:0w$}", w = width.max(2))).collect()
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> u32 {
    let mut u: f64 = rng.random();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i as u32;
        }
    }
    probs.len() as u32 - 1
}

/// Sample a corpus exactly from the declared process; byte-reproducible for
/// a given spec (the seed is part of the spec).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let j = spec.occupations;
    let vocab = Vocabulary::from_occupations(spec.occupation_names())?;
    let mut rng = derived_rng(spec.seed, "synthetic");
    let uniform = vec![1.0 / j as f64; j];

    let mut sequences = Vec::with_capacity(spec.sequences);
    for i in 0..spec.sequences {
        let t_len = spec.length.sample(&mut rng);
        let mut jobs: Vec<u32> = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let y = match &spec.kind {
                SyntheticKind::FirstOrderMarkov { transition, initial } => {
                    if t == 0 {
                        sample_categorical(&mut rng, initial.as_deref().unwrap_or(&uniform))
                    } else {
                        sample_categorical(&mut rng, &transition[jobs[t - 1] as usize])
                    }
                }
                SyntheticKind::StickyMarkov { stay } => {
                    if t == 0 {
                        sample_categorical(&mut rng, &uniform)
                    } else if rng.random::<f64>() < *stay {
                        jobs[t - 1]
                    } else {
                        // Uniform over the other J-1 categories.
                        let r = rng.random_range(0..j as u32 - 1);
                        if r >= jobs[t - 1] {
                            r + 1
                        } else {
                            r
                        }
                    }
                }
                SyntheticKind::LongRange { lag, copy } => {
                    if t >= *lag && rng.random::<f64>() < *copy {
                        jobs[t - lag]
                    } else {
                        sample_categorical(&mut rng, &uniform)
                    }
                }
            };
            jobs.push(y);
        }
        sequences.push(CareerSequence {
            id: format!("syn{i}"),
            years: (0..t_len as i32).map(|t| spec.start_year + t).collect(),
            jobs,
            covariates: vec![],
        });
    }
    Corpus::new(sequences, vocab, "synthetic")
}
