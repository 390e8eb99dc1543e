//! JSONL datasets.
//!
//! Sequence tasks: `{"text": "...", "label": 0}`.
//! Span tasks: `{"context": "...", "question": "...", "answer_span": [start, end]}`
//! with inclusive word indices into `context`. `question` may be omitted.
//!
//! Encoded layout is `[CLS] context` or `[CLS] question [SEP] context`,
//! truncated from the right to `max_len`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Label, Vocab, CLS, SEP};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::TaskKind;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceRecord {
    text: String,
    label: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanRecord {
    context: String,
    #[serde(default)]
    question: String,
    answer_span: [usize; 2],
}

pub fn load_jsonl(path: &Path, task: TaskKind, vocab: Vocab, max_len: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_jsonl(&text, &path.display().to_string(), task, vocab, max_len)
}

/// Parses JSONL text; `origin` names the source in error messages.
pub fn parse_jsonl(
    text: &str,
    origin: &str,
    task: TaskKind,
    vocab: Vocab,
    max_len: usize,
) -> Result<Dataset> {
    if max_len < 2 {
        return Err(Error::contract("max_len must be at least 2"));
    }
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut examples = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let ex = match task {
            TaskKind::SequenceClassification => {
                let r: SequenceRecord =
                    serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
                let mut ids = vec![CLS];
                ids.extend(vocab.encode(&r.text));
                ids.truncate(max_len);
                Example {
                    token_ids: ids,
                    label: Label::Class(r.label),
                }
            }
            TaskKind::SpanExtraction => {
                let r: SpanRecord =
                    serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
                let context = vocab.encode(&r.context);
                let [s, e] = r.answer_span;
                if s > e || e >= context.len() {
                    return Err(err(
                        line,
                        format!(
                            "answer_span [{s}, {e}] outside a context of {} words",
                            context.len()
                        ),
                    ));
                }
                let mut ids = vec![CLS];
                let question = vocab.encode(&r.question);
                if !question.is_empty() {
                    ids.extend(question);
                    ids.push(SEP);
                }
                let offset = ids.len();
                ids.extend(context);
                if offset + e >= max_len {
                    log::warn!("{origin}:{line}: answer truncated away at max_len {max_len}; example skipped");
                    continue;
                }
                ids.truncate(max_len);
                Example {
                    token_ids: ids,
                    label: Label::Span {
                        start: offset + s,
                        end: offset + e,
                    },
                }
            }
        };
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(Error::contract(format!("{origin} contains no examples")));
    }
    Ok(Dataset { task, examples })
}

/// Serializes a dataset in the schema [`parse_jsonl`] reads.
pub fn to_jsonl(ds: &Dataset, vocab: Vocab) -> Result<String> {
    let mut out = String::new();
    for ex in &ds.examples {
        let body = ex.token_ids.get(1..).unwrap_or(&[]);
        let line = match &ex.label {
            Label::Class(c) => serde_json::to_string(&SequenceRecord {
                text: vocab.decode(body),
                label: *c,
            })?,
            Label::Span { start, end } => {
                let (question, context, offset) = match body.iter().position(|&t| t == SEP) {
                    Some(p) => (&body[..p], &body[p + 1..], p + 2),
                    None => (&body[..0], body, 1),
                };
                if *start < offset {
                    return Err(Error::contract("span starts before the context"));
                }
                serde_json::to_string(&SpanRecord {
                    context: vocab.decode(context),
                    question: vocab.decode(question),
                    answer_span: [start - offset, end - offset],
                })?
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(ds: &Dataset, vocab: Vocab, path: &Path) -> Result<()> {
    write_atomic(path, to_jsonl(ds, vocab)?.as_bytes())
}
