//! Length-adaptive transformer encoder.
//!
//! Post-norm blocks: self-attention, add & norm, extraction of the top-`l_j`
//! word vectors by significance, feed-forward on the survivors, add & norm.
//! Dropped vectors are stashed with their post-attention value and restored
//! at their original positions after the last block, so token-level heads see
//! every position.

mod config;
pub mod extract;
mod params;

pub use config::{LengthConfig, ModelConfig, TaskKind};
pub use extract::{
    extract_top, restore, select_top, significance_scores, ForwardTrace, LayerTrace, Selection,
    StashEntry, StashSlot,
};
pub use params::{check_params, init_params, param_specs, BoundParams, Params};

use params::LayerVars;

use crate::data::Label;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Params,
}

/// Logits on the tape plus the trace of what was kept and dropped.
///
/// Sequence tasks produce `[1, num_classes]`; span tasks produce `[2, n]` with
/// start logits in row 0 and end logits in row 1.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub task: TaskKind,
    pub logits: Var,
    pub trace: ForwardTrace,
}

impl ModelOutput {
    pub fn sequence_logits<'t>(&self, tape: &'t Tape) -> Option<&'t [f64]> {
        (self.task == TaskKind::SequenceClassification).then(|| tape.value(self.logits).data())
    }

    pub fn start_logits<'t>(&self, tape: &'t Tape) -> Option<&'t [f64]> {
        (self.task == TaskKind::SpanExtraction).then(|| tape.value(self.logits).row(0))
    }

    pub fn end_logits<'t>(&self, tape: &'t Tape) -> Option<&'t [f64]> {
        (self.task == TaskKind::SpanExtraction).then(|| tape.value(self.logits).row(1))
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(Model { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        check_params(&config, &params)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn into_params(self) -> Params {
        self.params
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        BoundParams::bind(&self.params, tape, requires_grad)
    }

    fn check_input(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::contract("forward over an empty real-token set"));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::contract(format!(
                "input of {} tokens exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        Ok(())
    }

    fn embed(&self, tape: &mut Tape, p: &BoundParams, ids: &[u32]) -> Result<Var> {
        let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.embedding(p.token_embedding(), &ids)?;
        let pos = tape.embedding(p.position_embedding(), &positions)?;
        tape.add(tok, pos)
    }

    /// Self-attention sub-layer with residual and norm. Returns the output and
    /// the per-head attention probabilities.
    fn attention(&self, tape: &mut Tape, l: &LayerVars, h: Var) -> Result<(Var, Vec<Var>)> {
        let d = self.config.head_dim();
        let q = tape.matmul(h, l.wq)?;
        let q = tape.add_row(q, l.bq)?;
        let k = tape.matmul(h, l.wk)?;
        let k = tape.add_row(k, l.bk)?;
        let v = tape.matmul(h, l.wv)?;
        let v = tape.add_row(v, l.bv)?;
        let scale = 1.0 / (d as f64).sqrt();
        let mut probs = Vec::with_capacity(self.config.num_heads);
        let mut contexts = Vec::with_capacity(self.config.num_heads);
        for head in 0..self.config.num_heads {
            let qh = tape.slice_cols(q, head * d, d)?;
            let kh = tape.slice_cols(k, head * d, d)?;
            let vh = tape.slice_cols(v, head * d, d)?;
            let s = tape.matmul_nt(qh, kh)?;
            let s = tape.scale(s, scale)?;
            let p = tape.softmax_rows(s)?;
            contexts.push(tape.matmul(p, vh)?);
            probs.push(p);
        }
        let ctx = if contexts.len() == 1 {
            contexts[0]
        } else {
            tape.concat_cols(&contexts)?
        };
        let o = tape.matmul(ctx, l.wo)?;
        let o = tape.add_row(o, l.bo)?;
        let r = tape.add(h, o)?;
        let a = tape.layer_norm(r, l.ln1_gain, l.ln1_bias, self.config.layer_norm_eps)?;
        Ok((a, probs))
    }

    fn feed_forward(&self, tape: &mut Tape, l: &LayerVars, a: Var) -> Result<Var> {
        let f = tape.matmul(a, l.w_in)?;
        let f = tape.add_row(f, l.b_in)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, l.w_out)?;
        let f = tape.add_row(f, l.b_out)?;
        let r = tape.add(a, f)?;
        tape.layer_norm(r, l.ln2_gain, l.ln2_bias, self.config.layer_norm_eps)
    }

    fn head(&self, tape: &mut Tape, p: &BoundParams, hidden: Var) -> Result<Var> {
        let head = p.head(self.config.num_layers);
        match self.config.task {
            TaskKind::SequenceClassification => {
                let cls = tape.gather_rows(hidden, &[0])?;
                let z = tape.matmul(cls, head[0])?;
                tape.add_row(z, head[1])
            }
            TaskKind::SpanExtraction => tape.matmul_nt(head[0], hidden),
        }
    }

    fn protected_positions(&self) -> &'static [usize] {
        match self.config.task {
            TaskKind::SequenceClassification => &[0],
            TaskKind::SpanExtraction => &[],
        }
    }

    /// Forward pass over one sequence of real tokens under `lengths`.
    ///
    /// `layerdrop[j] == true` skips block `j` entirely, including its
    /// extraction. Retained counts are `min(l_j, ids.len())`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        ids: &[u32],
        lengths: &LengthConfig,
        layerdrop: Option<&[bool]>,
    ) -> Result<ModelOutput> {
        self.check_input(ids)?;
        let cfg = &self.config;
        lengths.check_against(cfg.max_len, cfg.num_layers)?;
        if let Some(mask) = layerdrop {
            if mask.len() != cfg.num_layers {
                return Err(Error::contract(format!(
                    "layerdrop mask has {} entries for {} layers",
                    mask.len(),
                    cfg.num_layers
                )));
            }
        }
        let n = ids.len();
        let mut h = self.embed(tape, p, ids)?;
        let mut positions: Vec<usize> = (0..n).collect();
        let mut stash: Vec<StashSlot> = Vec::new();
        let mut trace = ForwardTrace {
            n_real: n,
            ..ForwardTrace::default()
        };

        for j in 0..cfg.num_layers {
            if layerdrop.is_some_and(|m| m[j]) {
                trace.layers.push(LayerTrace {
                    skipped: true,
                    input_len: positions.len(),
                    attention: None,
                    scores: Vec::new(),
                    kept: positions.clone(),
                    dropped: Vec::new(),
                });
                continue;
            }
            let l = p.layer(j);
            let input_len = positions.len();
            let (a, probs) = self.attention(tape, &l, h)?;
            let attention = stack_heads(tape, &probs, input_len);
            let scores = significance_scores(&attention)?;
            let keep = lengths.lengths()[j].min(n).min(input_len);
            let ex = extract_top(
                tape,
                a,
                &positions,
                &scores,
                keep,
                self.protected_positions(),
                j,
            )?;
            trace.layers.push(LayerTrace {
                skipped: false,
                input_len,
                attention: Some(attention),
                scores,
                kept: ex.positions.clone(),
                dropped: ex.dropped.iter().map(|s| s.position).collect(),
            });
            stash.extend_from_slice(&ex.dropped);
            h = self.feed_forward(tape, &l, ex.hidden)?;
            positions = ex.positions;
        }

        trace.stash = stash
            .iter()
            .map(|s| StashEntry {
                position: s.position,
                layer: s.layer,
                vector: tape.value(s.source).row(s.row).to_vec(),
            })
            .collect();
        let full = restore(tape, h, &positions, &stash, n)?;
        let logits = self.head(tape, p, full)?;
        Ok(ModelOutput {
            task: cfg.task,
            logits,
            trace,
        })
    }

    /// Plain encoder forward with no extraction machinery at all.
    pub fn forward_vanilla(&self, tape: &mut Tape, p: &BoundParams, ids: &[u32]) -> Result<Var> {
        self.check_input(ids)?;
        let mut h = self.embed(tape, p, ids)?;
        for j in 0..self.config.num_layers {
            let l = p.layer(j);
            let (a, _) = self.attention(tape, &l, h)?;
            h = self.feed_forward(tape, &l, a)?;
        }
        self.head(tape, p, h)
    }

    /// Supervised loss for one example: cross-entropy on the class, or the
    /// mean of start and end cross-entropies.
    pub fn task_loss(&self, tape: &mut Tape, out: &ModelOutput, label: &Label) -> Result<Var> {
        match (self.config.task, label) {
            (TaskKind::SequenceClassification, Label::Class(c)) => {
                tape.cross_entropy(out.logits, &[*c])
            }
            (TaskKind::SpanExtraction, Label::Span { start, end }) => {
                tape.cross_entropy(out.logits, &[*start, *end])
            }
            (task, label) => Err(Error::contract(format!(
                "label {label:?} does not fit a {task} model"
            ))),
        }
    }
}

fn stack_heads(tape: &Tape, probs: &[Var], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(probs.len() * n * n);
    for &p in probs {
        data.extend_from_slice(tape.value(p).data());
    }
    Tensor::new(vec![probs.len(), n, n], data).expect("square attention maps")
}
