//! Closed-form FLOPs for one forward pass under a length configuration.
//!
//! Charges follow [`crate::tensor::cost`], so the totals here equal what the
//! tape's instrumented counter records for the same forward pass. Embedding
//! lookups, extraction bookkeeping (significance sums, sorting) and
//! gathers are free; the token + position embedding sum is charged. LayerDrop is a training-only regularizer and is not
//! modelled.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LengthConfig, Model, ModelConfig, TaskKind};
use crate::tensor::cost;
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub n_in: usize,
    pub n_out: usize,
    /// QKV and output projections with biases, scores, scaling, softmax, context.
    pub attention_flops: u64,
    /// Both FFN projections with biases, and GELU.
    pub ffn_flops: u64,
    /// Two residual adds and two layer norms.
    pub norm_residual_flops: u64,
}

impl LayerCost {
    pub fn total(&self) -> u64 {
        self.attention_flops + self.ffn_flops + self.norm_residual_flops
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub lengths: Vec<usize>,
    pub n_actual: usize,
    /// Token + position embedding sum.
    pub embedding_flops: u64,
    pub layers: Vec<LayerCost>,
    pub head_flops: u64,
    pub total: u64,
    /// `total` over the total of the full-length configuration.
    pub relative: f64,
}

/// Query, key, value and output projection products over `n_in` vectors, biases excluded.
pub fn projection_flops(n_in: usize, cfg: &ModelConfig) -> u64 {
    let h = cfg.hidden as u64;
    4 * cost::MAC * n_in as u64 * h * h
}

/// FLOPs of one block whose self-attention sees `n_in` word vectors and whose
/// feed-forward sees the `n_out` survivors of extraction.
pub fn layer_flops(n_in: usize, n_out: usize, cfg: &ModelConfig) -> Result<LayerCost> {
    if n_out == 0 || n_out > n_in {
        return Err(Error::contract(format!(
            "layer keeps {n_out} of {n_in} word vectors"
        )));
    }
    let (n, m) = (n_in as u64, n_out as u64);
    let h = cfg.hidden as u64;
    let f = cfg.ffn_dim as u64;
    let heads = cfg.num_heads as u64;

    let projections = projection_flops(n_in, cfg);
    let proj_bias = 4 * cost::ELEMENTWISE * n * h;
    let scores = cost::MAC * n * n * h + cost::ELEMENTWISE * heads * n * n;
    let softmax = cost::SOFTMAX * heads * n * n;
    let context = cost::MAC * n * n * h;

    let ffn_in = cost::MAC * m * h * f + cost::ELEMENTWISE * m * f;
    let gelu = cost::GELU * m * f;
    let ffn_out = cost::MAC * m * f * h + cost::ELEMENTWISE * m * h;

    let norm_residual = (cost::ELEMENTWISE + cost::LAYER_NORM) * h * (n + m);

    Ok(LayerCost {
        n_in,
        n_out,
        attention_flops: projections + proj_bias + scores + softmax + context,
        ffn_flops: ffn_in + gelu + ffn_out,
        norm_residual_flops: norm_residual,
    })
}

pub fn embedding_flops(cfg: &ModelConfig, n_actual: usize) -> u64 {
    cost::ELEMENTWISE * (n_actual * cfg.hidden) as u64
}

/// Task-head FLOPs for an input of `n_actual` real tokens.
pub fn head_flops(cfg: &ModelConfig, n_actual: usize) -> u64 {
    let h = cfg.hidden as u64;
    match cfg.task {
        TaskKind::SequenceClassification => {
            let c = cfg.num_classes as u64;
            cost::MAC * h * c + cost::ELEMENTWISE * c
        }
        TaskKind::SpanExtraction => cost::MAC * 2 * h * n_actual as u64,
    }
}

fn raw_total(
    lengths: &LengthConfig,
    cfg: &ModelConfig,
    n_actual: usize,
) -> Result<(Vec<LayerCost>, u64)> {
    let mut layers = Vec::with_capacity(lengths.num_layers());
    let mut n_in = n_actual;
    for &l in lengths.lengths() {
        let n_out = l.min(n_actual);
        layers.push(layer_flops(n_in, n_out, cfg)?);
        n_in = n_out;
    }
    let total = embedding_flops(cfg, n_actual)
        + layers.iter().map(LayerCost::total).sum::<u64>()
        + head_flops(cfg, n_actual);
    Ok((layers, total))
}

/// Cost of a forward pass over `n_actual` real tokens. Attention at layer `j`
/// runs on `min(l_{j-1}, n_actual)` vectors with `l_0 = n_actual`.
pub fn total_flops(
    lengths: &LengthConfig,
    cfg: &ModelConfig,
    n_actual: usize,
) -> Result<CostBreakdown> {
    if n_actual == 0 || n_actual > cfg.max_len {
        return Err(Error::contract(format!(
            "input length {n_actual} outside 1..={}",
            cfg.max_len
        )));
    }
    lengths.check_against(cfg.max_len, cfg.num_layers)?;
    let (layers, total) = raw_total(lengths, cfg, n_actual)?;
    let (_, full) = raw_total(&cfg.full_lengths(), cfg, n_actual)?;
    Ok(CostBreakdown {
        lengths: lengths.lengths().to_vec(),
        n_actual,
        embedding_flops: embedding_flops(cfg, n_actual),
        layers,
        head_flops: head_flops(cfg, n_actual),
        total,
        relative: total as f64 / full as f64,
    })
}

/// Wall-clock statistics in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub lengths: Vec<usize>,
    pub batch_size: usize,
    pub repeats: usize,
    pub median: f64,
    /// Interquartile range (q3 - q1).
    pub iqr: f64,
    pub samples: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summarizes timing samples: median and IQR with linear interpolation.
pub fn summarize(samples: &[f64]) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    (quantile(&s, 0.5), quantile(&s, 0.75) - quantile(&s, 0.25))
}

/// Times inference forward passes over `inputs` (one batch) on the calling
/// thread. `warmup` passes run first and are discarded.
pub fn measure_latency(
    model: &Model,
    lengths: &LengthConfig,
    inputs: &[Vec<u32>],
    warmup: usize,
    repeats: usize,
) -> Result<LatencyStats> {
    if repeats == 0 || inputs.is_empty() {
        return Err(Error::contract(
            "latency measurement needs inputs and at least one repeat",
        ));
    }
    let run = || -> Result<()> {
        for ids in inputs {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, false);
            let out = model.forward(&mut tape, &p, ids, lengths, None)?;
            std::hint::black_box(tape.value(out.logits));
        }
        Ok(())
    };
    for _ in 0..warmup {
        run()?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        run()?;
        samples.push(t.elapsed().as_secs_f64());
    }
    let (median, iqr) = summarize(&samples);
    Ok(LatencyStats {
        lengths: lengths.lengths().to_vec(),
        batch_size: inputs.len(),
        repeats,
        median,
        iqr,
        samples,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden: 8,
            num_heads: 2,
            ffn_dim: 16,
            vocab_size: 12,
            max_len: 8,
            task: TaskKind::SequenceClassification,
            num_classes: 2,
            layer_norm_eps: 1e-12,
        }
    }

    #[test]
    fn halving_output_only_changes_ffn_and_second_norm() {
        let c = cfg();
        let full = layer_flops(6, 6, &c).unwrap();
        let half = layer_flops(6, 3, &c).unwrap();
        assert_eq!(full.attention_flops, half.attention_flops);
        assert!(half.ffn_flops < full.ffn_flops);
        assert_eq!(full.ffn_flops, 2 * half.ffn_flops);
        let h = c.hidden as u64;
        assert_eq!(
            full.norm_residual_flops - half.norm_residual_flops,
            3 * 6 * h
        );
        assert!(layer_flops(3, 4, &c).is_err());
    }

    #[test]
    fn full_config_is_relative_one() {
        let c = cfg();
        let b = total_flops(&c.full_lengths(), &c, 8).unwrap();
        assert_eq!(b.relative, 1.0);
        let sum: u64 =
            b.embedding_flops + b.layers.iter().map(LayerCost::total).sum::<u64>() + b.head_flops;
        assert_eq!(sum, b.total);
    }

    #[test]
    fn projection_terms_scale_with_hidden_squared() {
        let mut c = cfg();
        let a = projection_flops(5, &c);
        c.hidden *= 2;
        assert_eq!(projection_flops(5, &c), 4 * a);
    }

    #[test]
    fn smaller_lengths_cost_strictly_less() {
        let c = cfg();
        let base = total_flops(&LengthConfig::new(vec![6, 4]).unwrap(), &c, 8)
            .unwrap()
            .total;
        for l in [vec![5, 4], vec![6, 3]] {
            let t = total_flops(&LengthConfig::new(l).unwrap(), &c, 8)
                .unwrap()
                .total;
            assert!(t < base);
        }
    }

    #[test]
    fn quantiles() {
        assert_eq!(summarize(&[3.0]), (3.0, 0.0));
        let (m, iqr) = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!(m, 3.0);
        assert_eq!(iqr, 2.0);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }
}
