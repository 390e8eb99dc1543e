//! Task metrics for a model under a fixed length configuration.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Label};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{LengthConfig, Model, TaskKind};
use crate::tensor::Tape;

/// Longest span the decoder will predict, in tokens.
pub const MAX_ANSWER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Class(usize),
    Span { start: usize, end: usize },
}

/// Metrics in `[0, 1]`. `score` is accuracy for sequence tasks and token F1
/// for span tasks; `exact_match` equals accuracy for sequence tasks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub score: f64,
    pub exact_match: f64,
    pub count: usize,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Highest `start[s] + end[e]` over `s <= e < s + max_len`.
pub fn best_span(start: &[f64], end: &[f64], max_len: usize) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for s in 0..start.len() {
        for e in s..end.len().min(s + max_len) {
            let v = start[s] + end[e];
            if v > best_score {
                best_score = v;
                best = (s, e);
            }
        }
    }
    best
}

/// Token-overlap F1 between two inclusive position ranges.
pub fn span_f1(pred: (usize, usize), gold: (usize, usize)) -> f64 {
    let lo = pred.0.max(gold.0);
    let hi = pred.1.min(gold.1);
    if hi < lo {
        return 0.0;
    }
    let overlap = (hi - lo + 1) as f64;
    let precision = overlap / (pred.1 - pred.0 + 1) as f64;
    let recall = overlap / (gold.1 - gold.0 + 1) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn predict(model: &Model, ids: &[u32], lengths: &LengthConfig) -> Result<Prediction> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let out = model.forward(&mut tape, &p, ids, lengths, None)?;
    Ok(match model.config().task {
        TaskKind::SequenceClassification => {
            Prediction::Class(argmax(tape.value(out.logits).data()))
        }
        TaskKind::SpanExtraction => {
            let v = tape.value(out.logits);
            let (start, end) = best_span(v.row(0), v.row(1), MAX_ANSWER_LEN);
            Prediction::Span { start, end }
        }
    })
}

/// `(score, exact)` of one prediction against its label.
pub fn score_prediction(pred: Prediction, label: &Label) -> Result<(f64, f64)> {
    match (pred, label) {
        (Prediction::Class(p), Label::Class(g)) => {
            let hit = if p == *g { 1.0 } else { 0.0 };
            Ok((hit, hit))
        }
        (Prediction::Span { start, end }, Label::Span { start: gs, end: ge }) => {
            let exact = if (start, end) == (*gs, *ge) { 1.0 } else { 0.0 };
            Ok((span_f1((start, end), (*gs, *ge)), exact))
        }
        _ => Err(Error::contract(format!(
            "prediction {pred:?} does not match label {label:?}"
        ))),
    }
}

/// Averages per-example `(score, exact)` pairs in input order.
pub fn aggregate(scores: &[(f64, f64)]) -> Metrics {
    let n = scores.len().max(1) as f64;
    Metrics {
        score: scores.iter().map(|s| s.0).sum::<f64>() / n,
        exact_match: scores.iter().map(|s| s.1).sum::<f64>() / n,
        count: scores.len(),
    }
}

pub fn evaluate(
    model: &Model,
    examples: &[Example],
    lengths: &LengthConfig,
    exec: Execution,
) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let scores = exec
        .map(examples, |e| {
            score_prediction(predict(model, &e.token_ids, lengths)?, &e.label)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&scores))
}

pub fn evaluate_dataset(
    model: &Model,
    ds: &Dataset,
    lengths: &LengthConfig,
    exec: Execution,
) -> Result<Metrics> {
    if ds.task != model.config().task {
        return Err(Error::contract(format!(
            "{} dataset for a {} model",
            ds.task,
            model.config().task
        )));
    }
    evaluate(model, &ds.examples, lengths, exec)
}
