//! Deterministic synthetic tasks.
//!
//! Sequence task: label 1 iff the trigger bigram `TRIGGER.0 TRIGGER.1` occurs
//! somewhere. Both trigger tokens also appear as distractors (alone or
//! reversed), so the label depends on adjacency rather than presence.
//!
//! Span task: a marker token is followed by a run of answer tokens; the label
//! is that run. Decoy runs without a marker may appear elsewhere.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, Example, Label, CLS, FIRST_WORD};
use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::rng;

pub const TRIGGER: (u32, u32) = (FIRST_WORD, FIRST_WORD + 1);
pub const MARKER: u32 = FIRST_WORD;
/// Longest answer span the span generator emits.
pub const ANSWER_MAX_LEN: usize = 4;

pub fn contains_trigger(ids: &[u32]) -> bool {
    ids.windows(2)
        .any(|w| w[0] == TRIGGER.0 && w[1] == TRIGGER.1)
}

fn check_args(count: usize, len_range: (usize, usize), vocab: usize, min_len: usize) -> Result<()> {
    if vocab < 8 {
        return Err(Error::contract(format!(
            "vocabulary of {vocab} is below the minimum of 8"
        )));
    }
    if len_range.0 < min_len || len_range.0 > len_range.1 {
        return Err(Error::contract(format!(
            "length range {len_range:?} must be ordered and start at {min_len} or more"
        )));
    }
    if count == 0 {
        return Err(Error::contract("empty dataset requested"));
    }
    Ok(())
}

/// Trigger-bigram classification with exactly balanced classes.
pub fn gen_sequence_task(
    seed: u64,
    count: usize,
    len_range: (usize, usize),
    vocab: usize,
) -> Result<Dataset> {
    check_args(count, len_range, vocab, 3)?;
    let mut rng = rng::stream(seed, "synthetic-sequence");
    let filler = FIRST_WORD + 2..vocab as u32;
    let mut labels: Vec<bool> = (0..count).map(|i| i % 2 == 0).collect();
    labels.shuffle(&mut rng);

    let examples = labels
        .into_iter()
        .map(|positive| {
            let n = rng.random_range(len_range.0..=len_range.1);
            let mut ids: Vec<u32> = std::iter::once(CLS)
                .chain((1..n).map(|_| rng.random_range(filler.clone())))
                .collect();
            // Distractors: lone trigger halves or the reversed pair.
            let n_distract = rng.random_range(0..=2usize);
            for _ in 0..n_distract {
                let p = rng.random_range(1..n);
                ids[p] = if rng.random_bool(0.5) {
                    TRIGGER.0
                } else {
                    TRIGGER.1
                };
            }
            if n >= 3 && rng.random_bool(0.3) {
                let p = rng.random_range(1..n - 1);
                ids[p] = TRIGGER.1;
                ids[p + 1] = TRIGGER.0;
            }
            // Break any accidental trigger.
            for p in 1..n - 1 {
                if ids[p] == TRIGGER.0 && ids[p + 1] == TRIGGER.1 {
                    ids[p + 1] = rng.random_range(filler.clone());
                }
            }
            if positive {
                let p = rng.random_range(1..n - 1);
                ids[p] = TRIGGER.0;
                ids[p + 1] = TRIGGER.1;
            }
            debug_assert_eq!(contains_trigger(&ids), positive);
            Example {
                token_ids: ids,
                label: Label::Class(usize::from(positive)),
            }
        })
        .collect();
    Ok(Dataset {
        task: TaskKind::SequenceClassification,
        examples,
    })
}

fn span_vocab(vocab: usize) -> (std::ops::Range<u32>, std::ops::Range<u32>) {
    let first_answer = MARKER + 1;
    let n_answer = ((vocab as u32 - first_answer) / 2).max(1);
    let answers = first_answer..first_answer + n_answer;
    let filler = answers.end..vocab as u32;
    (answers, filler)
}

fn max_span(n: usize) -> usize {
    ANSWER_MAX_LEN.min(n - 2)
}

/// Marker-delimited span extraction. For an example of length `n`, the span
/// length is uniform on `1..=min(4, n-2)` and the marker position uniform on
/// `1..=n-1-span_len`.
pub fn gen_span_task(
    seed: u64,
    count: usize,
    len_range: (usize, usize),
    vocab: usize,
) -> Result<Dataset> {
    check_args(count, len_range, vocab, 3)?;
    let mut rng = rng::stream(seed, "synthetic-span");
    let (answers, filler) = span_vocab(vocab);
    let examples = (0..count)
        .map(|_| {
            let n = rng.random_range(len_range.0..=len_range.1);
            let span_len = rng.random_range(1..=max_span(n));
            let marker = rng.random_range(1..=n - 1 - span_len);
            let (start, end) = (marker + 1, marker + span_len);
            let mut ids: Vec<u32> = std::iter::once(CLS)
                .chain((1..n).map(|_| rng.random_range(filler.clone())))
                .collect();
            ids[marker] = MARKER;
            for t in &mut ids[start..=end] {
                *t = rng.random_range(answers.clone());
            }
            if rng.random_bool(0.5) {
                // Decoy run, separated from the marker and span by filler.
                let len = rng.random_range(1..=ANSWER_MAX_LEN);
                for _ in 0..8 {
                    let s = rng.random_range(1..n);
                    let e = s + len - 1;
                    if e >= n {
                        continue;
                    }
                    let clear = e + 1 < marker || s > end + 1;
                    if clear {
                        for t in &mut ids[s..=e] {
                            *t = rng.random_range(answers.clone());
                        }
                        break;
                    }
                }
            }
            Example {
                token_ids: ids,
                label: Label::Span { start, end },
            }
        })
        .collect();
    Ok(Dataset {
        task: TaskKind::SpanExtraction,
        examples,
    })
}

/// Exact distribution of span start positions produced by [`gen_span_task`],
/// indexed by position.
pub fn span_start_distribution(len_range: (usize, usize)) -> Vec<f64> {
    let mut p = vec![0.0; len_range.1];
    let n_lens = (len_range.1 - len_range.0 + 1) as f64;
    for n in len_range.0..=len_range.1 {
        let m = max_span(n);
        for span_len in 1..=m {
            let n_markers = n - 1 - span_len;
            let w = 1.0 / n_lens / m as f64 / n_markers as f64;
            for marker in 1..=n_markers {
                p[marker + 1] += w;
            }
        }
    }
    p
}
