//! Smoothed first- and second-order Markov baselines.
//!
//! The first-order table mixes empirical transition rows with the empirical
//! job distribution: `p(j|i) = l1 * emp(j|i) + (1-l1) * unigram(j)`, default
//! `l1 = 0.99`. Source rows with no observations fall back to the unigram
//! entirely. The second-order model mixes empirical second-order rows with
//! the smoothed first-order model at weight `l2 = 0.5`; unseen source pairs
//! fall back to the first-order row.
//!
//! Sources include the begin-of-sequence slot (id `J`), so the first
//! prediction step is the empirical initial-job distribution, smoothed.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::corpus::{Corpus, OccId};
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA1: f64 = 0.99;
pub const DEFAULT_LAMBDA2: f64 = 0.5;

type PairKey = (OccId, OccId);

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub order: u8,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Empirical distribution of observed jobs, `[J]`.
    unigram: Array1<f64>,
    /// Smoothed first-order table, `[J+1, J]` (last row: bos source).
    first: Array2<f64>,
    /// Empirical second-order rows keyed by `(y_{t-2}, y_{t-1})`, each a
    /// normalized sparse distribution. Only present for order 2.
    second: BTreeMap<PairKey, Vec<(OccId, f64)>>,
}

/// Estimate a Markov model from transition counts.
pub fn fit_markov(corpus: &Corpus, order: u8) -> Result<MarkovModel> {
    fit_markov_with(corpus, order, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2)
}

pub fn fit_markov_with(corpus: &Corpus, order: u8, lambda1: f64, lambda2: f64) -> Result<MarkovModel> {
    if corpus.is_empty() {
        return Err(Error::data("cannot fit a Markov model on an empty corpus"));
    }
    if !(1..=2).contains(&order) {
        return Err(Error::config(format!("markov order must be 1 or 2, got {order}")));
    }
    let j = corpus.vocabulary.num_occupations();
    let bos = corpus.vocabulary.bos_id();

    let mut counts = Array2::<f64>::zeros((j + 1, j));
    let mut uni = Array1::<f64>::zeros(j);
    let mut pair_counts: BTreeMap<PairKey, BTreeMap<OccId, f64>> = BTreeMap::new();
    for seq in &corpus.sequences {
        for (t, &y) in seq.jobs.iter().enumerate() {
            let prev = seq.prev_job(t, bos);
            counts[[prev as usize, y as usize]] += 1.0;
            uni[y as usize] += 1.0;
            if order == 2 {
                let prev2 = if t >= 2 { seq.jobs[t - 2] } else { bos };
                *pair_counts.entry((prev2, prev)).or_default().entry(y).or_insert(0.0) += 1.0;
            }
        }
    }

    let total: f64 = uni.sum();
    let unigram = &uni / total;

    let mut first = Array2::<f64>::zeros((j + 1, j));
    for i in 0..=j {
        let row_total: f64 = counts.row(i).sum();
        if row_total == 0.0 {
            first.row_mut(i).assign(&unigram);
        } else {
            for y in 0..j {
                first[[i, y]] =
                    lambda1 * counts[[i, y]] / row_total + (1.0 - lambda1) * unigram[y];
            }
        }
    }

    let second = pair_counts
        .into_iter()
        .map(|(key, row)| {
            let row_total: f64 = row.values().sum();
            (key, row.into_iter().map(|(y, c)| (y, c / row_total)).collect())
        })
        .collect();

    Ok(MarkovModel { order, lambda1, lambda2, unigram, first, second })
}

impl MarkovModel {
    /// Assemble a model directly from tables (tests, oracles, checkpoint
    /// loading). `first` must be `[J+1, J]` row-stochastic.
    pub fn from_parts(
        order: u8,
        lambda1: f64,
        lambda2: f64,
        unigram: Array1<f64>,
        first: Array2<f64>,
        second: BTreeMap<PairKey, Vec<(OccId, f64)>>,
    ) -> Result<Self> {
        let j = unigram.len();
        if first.nrows() != j + 1 || first.ncols() != j {
            return Err(Error::shape(format!(
                "first-order table {:?}, expected [{}, {j}]",
                first.dim(),
                j + 1
            )));
        }
        Ok(MarkovModel { order, lambda1, lambda2, unigram, first, second })
    }

    /// Wrap an exact transition matrix (`[J, J]`) as an unsmoothed
    /// first-order model with the given initial distribution at the bos row.
    /// This is the "true process" model used by forecasting oracles.
    pub fn from_transition_matrix(matrix: Array2<f64>, initial: Array1<f64>) -> Result<Self> {
        let j = matrix.nrows();
        if matrix.ncols() != j || initial.len() != j {
            return Err(Error::shape("transition matrix must be square with matching initial"));
        }
        let mut first = Array2::zeros((j + 1, j));
        for i in 0..j {
            first.row_mut(i).assign(&matrix.row(i));
        }
        first.row_mut(j).assign(&initial);
        Ok(MarkovModel {
            order: 1,
            lambda1: 1.0,
            lambda2: DEFAULT_LAMBDA2,
            unigram: initial,
            first,
            second: BTreeMap::new(),
        })
    }

    pub fn num_occupations(&self) -> usize {
        self.unigram.len()
    }

    pub fn unigram(&self) -> &Array1<f64> {
        &self.unigram
    }

    pub fn first_order(&self) -> &Array2<f64> {
        &self.first
    }

    pub fn second_order(&self) -> &BTreeMap<PairKey, Vec<(OccId, f64)>> {
        &self.second
    }

    /// Conditional distribution over next jobs. `prev2` is ignored for
    /// order-1 models; bos ids are legal sources.
    pub fn dist(&self, prev2: OccId, prev: OccId) -> Array1<f64> {
        let base = self.first.row(prev as usize);
        if self.order == 1 {
            return base.to_owned();
        }
        match self.second.get(&(prev2, prev)) {
            None => base.to_owned(),
            Some(row) => {
                let mut out = base.to_owned() * self.lambda2;
                for &(y, p) in row {
                    out[y as usize] += (1.0 - self.lambda2) * p;
                }
                out
            }
        }
    }

    pub fn log_prob(&self, prev2: OccId, prev: OccId, y: OccId) -> f64 {
        self.dist(prev2, prev)[y as usize].ln()
    }
}

/// TSV export: `source-id(s) <TAB> target-id <TAB> probability`. Sources are
/// `*` for the unigram, a single id for the smoothed first-order table, and
/// `k,i` pairs for empirical second-order rows.
pub fn write_markov_tsv(model: &MarkovModel, mut out: impl std::io::Write) -> Result<()> {
    for (y, p) in model.unigram.iter().enumerate() {
        writeln!(out, "*\t{y}\t{p:.17e}")?;
    }
    for (i, row) in model.first.rows().into_iter().enumerate() {
        for (y, p) in row.iter().enumerate() {
            writeln!(out, "{i}\t{y}\t{p:.17e}")?;
        }
    }
    for ((k, i), row) in &model.second {
        for (y, p) in row {
            writeln!(out, "{k},{i}\t{y}\t{p:.17e}")?;
        }
    }
    Ok(())
}

/// Inverse of [`write_markov_tsv`].
pub fn read_markov_tsv(input: impl std::io::BufRead, order: u8, lambda1: f64, lambda2: f64) -> Result<MarkovModel> {
    let mut uni: BTreeMap<usize, f64> = BTreeMap::new();
    let mut first: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut second: BTreeMap<PairKey, Vec<(OccId, f64)>> = BTreeMap::new();
    for (ln, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (src, tgt, p) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Parse { line: ln + 1, message: "expected 3 fields".into() }),
        };
        let bad = |what: &str| Error::Parse { line: ln + 1, message: format!("bad {what}") };
        let y: usize = tgt.parse().map_err(|_| bad("target"))?;
        let p: f64 = p.parse().map_err(|_| bad("probability"))?;
        if src == "*" {
            uni.insert(y, p);
        } else if let Some((k, i)) = src.split_once(',') {
            let k: OccId = k.parse().map_err(|_| bad("source"))?;
            let i: OccId = i.parse().map_err(|_| bad("source"))?;
            second.entry((k, i)).or_default().push((y as OccId, p));
        } else {
            let i: usize = src.parse().map_err(|_| bad("source"))?;
            first.insert((i, y), p);
        }
    }
    let j = uni.len();
    let mut unigram = Array1::zeros(j);
    for (y, p) in uni {
        unigram[y] = p;
    }
    let mut table = Array2::zeros((j + 1, j));
    for ((i, y), p) in first {
        table[[i, y]] = p;
    }
    MarkovModel::from_parts(order, lambda1, lambda2, unigram, table, second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CareerSequence, Vocabulary};
    use approx::assert_abs_diff_eq;

    fn corpus_from_jobs(jobs: Vec<Vec<OccId>>, j: usize) -> Corpus {
        let vocab =
            Vocabulary::from_occupations((0..j).map(|i| format!("o{i}")).collect()).unwrap();
        let sequences = jobs
            .into_iter()
            .enumerate()
            .map(|(i, js)| CareerSequence {
                id: format!("w{i}"),
                years: (0..js.len() as i32).map(|t| 2000 + t).collect(),
                jobs: js,
                covariates: vec![],
            })
            .collect();
        Corpus::new(sequences, vocab, "test").unwrap()
    }

    #[test]
    fn smoothing_formula_hand_example() {
        // From job 0: 3 observed transitions, all to job 1; the corpus is
        // arranged so unigram(1) = 0.5 exactly. Expect
        // p(1|0) = 0.99 * 1.0 + 0.01 * 0.5 = 0.995.
        let c = corpus_from_jobs(vec![vec![0, 1], vec![0, 1], vec![0, 1], vec![1, 0], vec![1, 0]], 2);
        // targets: 0->1 x3, 1->0 x2, bos->0 x3, bos->1 x2; unigram: five 0s, five 1s.
        let m = fit_markov(&c, 1).unwrap();
        assert_abs_diff_eq!(m.unigram()[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.first_order()[[0, 1]], 0.995, epsilon = 1e-12);
    }

    #[test]
    fn unseen_source_falls_back_to_unigram() {
        let c = corpus_from_jobs(vec![vec![0, 1, 1]], 3);
        let m = fit_markov(&c, 1).unwrap();
        // Job 2 never occurs as a source.
        let row = m.dist(0, 2);
        for y in 0..3 {
            assert_abs_diff_eq!(row[y], m.unigram()[y], epsilon = 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let c = corpus_from_jobs(vec![vec![0, 1, 2, 0, 2], vec![2, 2, 1, 0, 1]], 3);
        for order in [1, 2] {
            let m = fit_markov(&c, order).unwrap();
            let bos = 3;
            for prev in 0..=bos {
                for prev2 in 0..=bos {
                    let sum: f64 = m.dist(prev2, prev).sum();
                    assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn second_order_mixes_with_first() {
        let c = corpus_from_jobs(vec![vec![0, 1, 2], vec![0, 1, 0], vec![2, 1, 2]], 3);
        let m = fit_markov(&c, 2).unwrap();
        // (0,1) observed twice: -> 2 once, -> 0 once.
        let d = m.dist(0, 1);
        let first_row = m.first_order().row(1);
        assert_abs_diff_eq!(d[2], 0.5 * 0.5 + 0.5 * first_row[2], epsilon = 1e-12);
        assert_abs_diff_eq!(d[0], 0.5 * 0.5 + 0.5 * first_row[0], epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 0.5 * first_row[1], epsilon = 1e-12);
        // Unseen pair falls back to the first-order row.
        let d = m.dist(2, 0);
        for y in 0..3 {
            assert_abs_diff_eq!(d[y], m.first_order()[[0, y]], epsilon = 1e-15);
        }
    }

    #[test]
    fn tsv_round_trip() {
        let c = corpus_from_jobs(vec![vec![0, 1, 2, 0], vec![1, 1, 2, 0]], 3);
        let m = fit_markov(&c, 2).unwrap();
        let mut buf = Vec::new();
        write_markov_tsv(&m, &mut buf).unwrap();
        let back = read_markov_tsv(std::io::Cursor::new(buf), 2, m.lambda1, m.lambda2).unwrap();
        assert_eq!(back.unigram(), m.unigram());
        assert_eq!(back.first_order(), m.first_order());
        assert_eq!(back.second_order(), m.second_order());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let vocab = Vocabulary::from_occupations(vec!["a".into()]).unwrap();
        let c = Corpus { sequences: vec![], vocabulary: vocab, provenance: "x".into() };
        assert!(fit_markov(&c, 1).is_err());
    }
}
