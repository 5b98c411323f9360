//! Token-budgeted minibatch construction for variable-length sequences.
//!
//! Sequences are sorted by length and packed so that
//! `batch_size * max_length_in_batch <= max_tokens`; the batch *order* is
//! reshuffled each epoch from the seed, while batch contents stay fixed
//! (fairseq-style length bucketing).

use rand::seq::SliceRandom;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::util::derived_rng_n;

/// Build batches of sequence indices. Every sequence appears in exactly one
/// batch.
pub fn make_batches(corpus: &Corpus, max_tokens: usize) -> Result<Vec<Vec<usize>>> {
    if corpus.is_empty() {
        return Err(Error::data("cannot batch an empty corpus"));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by_key(|&i| (corpus.sequences[i].len(), i));
    if let Some(&longest) = order.last() {
        let len = corpus.sequences[longest].len();
        if len > max_tokens {
            return Err(Error::data(format!(
                "sequence {:?} has {len} tokens, over the {max_tokens}-token batch budget",
                corpus.sequences[longest].id
            )));
        }
    }

    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for &i in &order {
        let len = corpus.sequences[i].len();
        // Ascending lengths: the candidate's length is the batch max.
        if !current.is_empty() && (current.len() + 1) * len > max_tokens {
            batches.push(std::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Deterministic epoch ordering of batches.
pub fn epoch_order(num_batches: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_batches).collect();
    order.shuffle(&mut derived_rng_n(seed, "batch-order", epoch));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CareerSequence, Vocabulary};

    fn corpus_with_lengths(lengths: &[usize]) -> Corpus {
        let vocab = Vocabulary::from_occupations(vec!["a".into()]).unwrap();
        let sequences = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| CareerSequence {
                id: format!("w{i}"),
                years: (0..len as i32).map(|t| 1990 + t).collect(),
                jobs: vec![0; len],
                covariates: vec![],
            })
            .collect();
        Corpus::new(sequences, vocab, "test").unwrap()
    }

    #[test]
    fn respects_token_budget() {
        let c = corpus_with_lengths(&[10; 10]);
        let batches = make_batches(&c, 50).unwrap();
        for b in &batches {
            let max_len = b.iter().map(|&i| c.sequences[i].len()).max().unwrap();
            assert!(b.len() * max_len <= 50);
            assert!(b.len() <= 5);
        }
        assert_eq!(batches.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn single_max_length_sequence_gets_own_batch() {
        let c = corpus_with_lengths(&[3, 50, 4]);
        let batches = make_batches(&c, 50).unwrap();
        assert!(batches.iter().any(|b| b.len() == 1 && c.sequences[b[0]].len() == 50));
    }

    #[test]
    fn partition_is_exact() {
        let c = corpus_with_lengths(&[5, 9, 2, 14, 7, 7, 3, 1]);
        let batches = make_batches(&c, 20).unwrap();
        let mut seen: Vec<usize> = batches.concat();
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_sequence_is_an_error() {
        let c = corpus_with_lengths(&[5, 21]);
        assert!(make_batches(&c, 20).is_err());
    }

    #[test]
    fn epoch_order_is_seeded() {
        assert_eq!(epoch_order(7, 3, 1), epoch_order(7, 3, 1));
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 3, 2));
    }
}
