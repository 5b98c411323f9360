//! Deterministic train/validation/test splitting.

use rand::seq::SliceRandom;

use super::Corpus;
use crate::error::{Error, Result};
use crate::util::derived_rng;

/// Partition a corpus into train/validation/test by a seeded shuffle.
/// Fractions must be positive and sum to 1 (tolerance 1e-9). Sizes are
/// `floor(f_train * n)`, `floor(f_val * n)`, remainder to test, so every
/// sequence lands in exactly one split.
pub fn split_corpus(
    corpus: &Corpus,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 {
        return Err(Error::config("split fractions must be positive"));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions sum to {}, expected 1", ft + fv + fe)));
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, "corpus-split"));
    let n_train = (ft * n as f64).floor() as usize;
    let n_val = (fv * n as f64).floor() as usize;

    let take = |range: &[usize], tag: &str| Corpus {
        sequences: range.iter().map(|&i| corpus.sequences[i].clone()).collect(),
        vocabulary: corpus.vocabulary.clone(),
        provenance: format!("{} ({tag})", corpus.provenance),
    };
    Ok((
        take(&order[..n_train], "train"),
        take(&order[n_train..n_train + n_val], "val"),
        take(&order[n_train + n_val..], "test"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CareerSequence, Vocabulary};

    fn corpus(n: usize) -> Corpus {
        let vocab = Vocabulary::from_occupations(vec!["a".into()]).unwrap();
        let sequences = (0..n)
            .map(|i| CareerSequence {
                id: format!("w{i}"),
                years: vec![2000],
                jobs: vec![0],
                covariates: vec![],
            })
            .collect();
        Corpus::new(sequences, vocab, "test").unwrap()
    }

    #[test]
    fn paper_split_sizes() {
        let c = corpus(10);
        let (tr, va, te) = split_corpus(&c, (0.7, 0.1, 0.2), 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (7, 1, 2));
    }

    #[test]
    fn deterministic_and_exhaustive() {
        let c = corpus(23);
        let (a1, b1, c1) = split_corpus(&c, (0.7, 0.1, 0.2), 5).unwrap();
        let (a2, b2, c2) = split_corpus(&c, (0.7, 0.1, 0.2), 5).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        let mut ids: Vec<&str> = a1
            .sequences
            .iter()
            .chain(&b1.sequences)
            .chain(&c1.sequences)
            .map(|s| s.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 23);
    }

    #[test]
    fn bad_fractions_rejected() {
        let c = corpus(4);
        assert!(split_corpus(&c, (0.5, 0.5, 0.5), 0).is_err());
        assert!(split_corpus(&c, (1.0, 0.0, 0.0), 0).is_err());
    }
}
