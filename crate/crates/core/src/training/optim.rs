use serde::{Deserialize, Serialize};

use crate::model::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    /// beta1 = 0.9, beta2 = 0.999, eps = 1e-8, no weight decay.
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Constant learning-rate optimizer over a [`Params`] set.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &Params) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Optimizer {
            kind,
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let w = params.tensor_mut(i).data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in w.iter_mut().zip(g) {
                        *w -= self.lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for k in 0..w.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        w[k] -= self.lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}
