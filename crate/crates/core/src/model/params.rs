use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, TaskKind};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        Params { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rounds every value to the nearest f32 so checkpoints store it exactly.
    pub fn round_to_f32(&mut self) {
        for (_, t) in &mut self.entries {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }
}

/// Parameter names and shapes, in storage order, for a configuration.
pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (h, f) = (cfg.hidden, cfg.ffn_dim);
    let mut specs = vec![
        ("embeddings.token".to_string(), vec![cfg.vocab_size, h]),
        ("embeddings.position".to_string(), vec![cfg.max_len, h]),
    ];
    for j in 0..cfg.num_layers {
        let p = |s: &str| format!("layers.{j}.{s}");
        specs.extend([
            (p("attention.query.weight"), vec![h, h]),
            (p("attention.query.bias"), vec![h]),
            (p("attention.key.weight"), vec![h, h]),
            (p("attention.key.bias"), vec![h]),
            (p("attention.value.weight"), vec![h, h]),
            (p("attention.value.bias"), vec![h]),
            (p("attention.output.weight"), vec![h, h]),
            (p("attention.output.bias"), vec![h]),
            (p("attention.norm.gain"), vec![h]),
            (p("attention.norm.bias"), vec![h]),
            (p("ffn.in.weight"), vec![h, f]),
            (p("ffn.in.bias"), vec![f]),
            (p("ffn.out.weight"), vec![f, h]),
            (p("ffn.out.bias"), vec![h]),
            (p("ffn.norm.gain"), vec![h]),
            (p("ffn.norm.bias"), vec![h]),
        ]);
    }
    match cfg.task {
        TaskKind::SequenceClassification => specs.extend([
            (
                "head.classifier.weight".to_string(),
                vec![h, cfg.num_classes],
            ),
            ("head.classifier.bias".to_string(), vec![cfg.num_classes]),
        ]),
        // A bias on span logits is constant across positions and cancels in the softmax.
        TaskKind::SpanExtraction => specs.push(("head.span.weight".to_string(), vec![2, h])),
    }
    specs
}

pub(crate) const PER_LAYER: usize = 16;

/// Random initialization: N(0, 0.02) weights and embeddings, unit norm gains, zero biases.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Params {
    let mut rng = rng::stream(seed, rng::stream::INIT);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let entries = param_specs(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            (name, Tensor::new(shape, data).expect("spec shape"))
        })
        .collect();
    let mut p = Params { entries };
    p.round_to_f32();
    p
}

/// Checks names and shapes of `params` against `cfg`.
pub fn check_params(cfg: &ModelConfig, params: &Params) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(Error::ModelConfig(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            params.len()
        )));
    }
    for ((name, shape), (pn, pt)) in specs.iter().zip(params.iter()) {
        if name != pn || shape.as_slice() != pt.shape() {
            return Err(Error::ModelConfig(format!(
                "parameter {pn} {:?} does not match expected {name} {shape:?}",
                pt.shape()
            )));
        }
    }
    Ok(())
}

/// Parameters pushed onto a tape, in storage order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind(params: &Params, tape: &mut Tape, requires_grad: bool) -> Self {
        let vars = params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect();
        BoundParams { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub(crate) fn token_embedding(&self) -> Var {
        self.vars[0]
    }

    pub(crate) fn position_embedding(&self) -> Var {
        self.vars[1]
    }

    pub(crate) fn layer(&self, j: usize) -> LayerVars {
        let b = 2 + j * PER_LAYER;
        let v = &self.vars[b..b + PER_LAYER];
        LayerVars {
            wq: v[0],
            bq: v[1],
            wk: v[2],
            bk: v[3],
            wv: v[4],
            bv: v[5],
            wo: v[6],
            bo: v[7],
            ln1_gain: v[8],
            ln1_bias: v[9],
            w_in: v[10],
            b_in: v[11],
            w_out: v[12],
            b_out: v[13],
            ln2_gain: v[14],
            ln2_bias: v[15],
        }
    }

    pub(crate) fn head(&self, num_layers: usize) -> &[Var] {
        &self.vars[2 + num_layers * PER_LAYER..]
    }

    /// Gradients of every parameter, zeros where the backward pass never reached.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(v).numel()],
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w_in: Var,
    pub b_in: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}
