//! Examples, batching, synthetic task generators and JSONL ingestion.

mod jsonl;
mod synthetic;
mod vocab;

pub use jsonl::{load_jsonl, parse_jsonl, to_jsonl, write_jsonl};
pub use synthetic::{
    contains_trigger, gen_sequence_task, gen_span_task, span_start_distribution, ANSWER_MAX_LEN,
    MARKER, TRIGGER,
};
pub use vocab::{Vocab, CLS, FIRST_WORD, PAD, SEP, UNK};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Class(usize),
    /// Inclusive token positions.
    Span {
        start: usize,
        end: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    /// Real tokens only; position 0 holds the classification token.
    pub token_ids: Vec<u32>,
    pub label: Label,
}

impl Example {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn check(&self, vocab_size: usize) -> Result<()> {
        if let Some(t) = self.token_ids.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::contract(format!(
                "token id {t} outside vocabulary of {vocab_size}"
            )));
        }
        if let Label::Span { start, end } = self.label {
            if !(start <= end && end < self.len()) {
                return Err(Error::contract(format!(
                    "span ({start}, {end}) outside an example of length {}",
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.examples.iter().map(Example::len).max().unwrap_or(0)
    }
}

/// Disjoint train/validation/test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Deduplicates `ds`, shuffles it with `seed` and cuts it by fraction.
    pub fn from_dataset(
        ds: Dataset,
        validation_frac: f64,
        test_frac: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&(validation_frac + test_frac))
            || validation_frac < 0.0
            || test_frac < 0.0
        {
            return Err(Error::contract(
                "split fractions must be nonnegative and sum below 1",
            ));
        }
        let mut seen = HashSet::new();
        let mut examples: Vec<Example> = ds
            .examples
            .into_iter()
            .filter(|e| seen.insert(e.clone()))
            .collect();
        examples.shuffle(&mut rng::stream(seed, rng::stream::DATA));
        let n = examples.len();
        let n_val = (n as f64 * validation_frac).round() as usize;
        let n_test = (n as f64 * test_frac).round() as usize;
        let test = examples.split_off(n - n_test);
        let validation = examples.split_off(n - n_test - n_val);
        Ok(Splits {
            train: Dataset {
                task: ds.task,
                examples,
            },
            validation: Dataset {
                task: ds.task,
                examples: validation,
            },
            test: Dataset {
                task: ds.task,
                examples: test,
            },
        })
    }
}

/// Right-padded token matrix with an attention mask over real tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<Vec<u32>>,
    pub mask: Vec<Vec<bool>>,
    pub labels: Vec<Label>,
    /// Longest real length in the batch; every row is padded to it.
    pub max_len: usize,
}

impl Batch {
    pub fn from_examples<'a>(examples: impl IntoIterator<Item = &'a Example>) -> Self {
        let examples: Vec<&Example> = examples.into_iter().collect();
        let max_len = examples.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(examples.len());
        let mut mask = Vec::with_capacity(examples.len());
        for e in &examples {
            let mut row = e.token_ids.clone();
            row.resize(max_len, PAD);
            tokens.push(row);
            let mut m = vec![true; e.len()];
            m.resize(max_len, false);
            mask.push(m);
        }
        Batch {
            tokens,
            mask,
            labels: examples.iter().map(|e| e.label.clone()).collect(),
            max_len,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Real (unmasked) tokens of row `i`.
    pub fn real_tokens(&self, i: usize) -> &[u32] {
        let n = self.mask[i].iter().take_while(|&&m| m).count();
        &self.tokens[i][..n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_mask_matches_lengths() {
        let ds = gen_sequence_task(5, 20, (4, 12), 16).unwrap();
        let b = Batch::from_examples(&ds.examples);
        for (i, e) in ds.examples.iter().enumerate() {
            assert_eq!(b.mask[i].iter().filter(|&&m| m).count(), e.len());
            assert_eq!(b.real_tokens(i), e.token_ids.as_slice());
            assert_eq!(b.tokens[i].len(), b.max_len);
        }
    }

    #[test]
    fn splits_are_disjoint_and_seed_stable() {
        let ds = gen_sequence_task(9, 200, (6, 12), 16).unwrap();
        let a = Splits::from_dataset(ds.clone(), 0.2, 0.1, 4).unwrap();
        let b = Splits::from_dataset(ds, 0.2, 0.1, 4).unwrap();
        assert_eq!(a, b);
        let train: HashSet<_> = a.train.examples.iter().collect();
        for e in a.validation.examples.iter().chain(&a.test.examples) {
            assert!(!train.contains(e));
        }
        let val: HashSet<_> = a.validation.examples.iter().collect();
        assert!(a.test.examples.iter().all(|e| !val.contains(e)));
        assert_eq!(a.validation.len(), 40);
        assert_eq!(a.test.len(), 20);
    }

    #[test]
    fn example_check_catches_bad_span() {
        let e = Example {
            token_ids: vec![1, 4, 5],
            label: Label::Span { start: 2, end: 3 },
        };
        assert!(e.check(8).is_err());
        let e = Example {
            token_ids: vec![1, 9],
            label: Label::Class(0),
        };
        assert!(e.check(8).is_err());
    }
}
