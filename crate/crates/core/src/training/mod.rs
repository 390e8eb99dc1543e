//! Two-phase training: plain supervised fine-tuning, then LengthDrop with
//! the sandwich rule and inplace distillation.
//!
//! Every phase-two step runs the full model (teacher, task loss), `n_s`
//! randomly sampled sub-models and the smallest sub-model. Each sub-model
//! receives the KL divergence to the detached teacher output and an
//! independent LayerDrop mask. One length configuration is drawn per
//! sub-model per batch, with `l_0` set to the longest real sequence.

mod distill;
mod optim;
mod sampling;

pub use distill::distillation_loss;
pub use optim::{Optimizer, OptimizerKind};
pub use sampling::{
    constant_ratio_config, sample_layerdrop_mask, sample_length_config, shrink, smallest_config,
};

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, Metrics};
use crate::exec::Execution;
use crate::model::{LengthConfig, Model};
use crate::rng::{self, Rng};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub p_lengthdrop: f64,
    pub p_layerdrop: f64,
    /// Randomly sampled sub-models per step (`n_s`).
    pub sandwiches: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub supervised_epochs: usize,
    pub lengthdrop_epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            p_lengthdrop: 0.2,
            p_layerdrop: 0.2,
            sandwiches: 2,
            learning_rate: 1e-3,
            batch_size: 32,
            supervised_epochs: 3,
            lengthdrop_epochs: 3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_lengthdrop", self.p_lengthdrop),
            ("p_layerdrop", self.p_layerdrop),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::contract(format!(
                    "{name} must be in [0, 1), got {p}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Supervised,
    LengthDrop,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Supervised => "supervised",
            Phase::LengthDrop => "lengthdrop",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    pub lengths: LengthConfig,
    pub layerdrop: Vec<bool>,
}

/// What one step trains: the full model plus any distilled sub-models.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub full: LengthConfig,
    pub sandwiches: Vec<SubModel>,
    pub smallest: Option<SubModel>,
}

impl StepPlan {
    pub fn supervised(l0: usize, num_layers: usize) -> Self {
        StepPlan {
            full: LengthConfig::full(l0, num_layers),
            sandwiches: Vec::new(),
            smallest: None,
        }
    }
}

/// Batch means of each loss component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub task: f64,
    pub sandwich: Vec<f64>,
    pub smallest: Option<f64>,
    /// `task + sum(sandwich) + smallest`, summed in that order.
    pub total: f64,
}

impl StepLosses {
    fn from_parts(task: f64, sandwich: Vec<f64>, smallest: Option<f64>) -> Self {
        let mut total = task;
        for s in &sandwich {
            total += s;
        }
        if let Some(s) = smallest {
            total += s;
        }
        StepLosses {
            task,
            sandwich,
            smallest,
            total,
        }
    }
}

struct ExampleResult {
    grads: Vec<Vec<f64>>,
    task: f64,
    distill: Vec<f64>,
}

fn example_pass(
    model: &Model,
    ids: &[u32],
    label: &crate::data::Label,
    plan: &StepPlan,
) -> Result<ExampleResult> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let teacher = model.forward(&mut tape, &p, ids, &plan.full, None)?;
    let task = model.task_loss(&mut tape, &teacher, label)?;
    let teacher_logits = tape.value(teacher.logits).clone();

    let mut total = task;
    let mut distill = Vec::new();
    for sub in plan.sandwiches.iter().chain(plan.smallest.as_ref()) {
        let out = model.forward(&mut tape, &p, ids, &sub.lengths, Some(&sub.layerdrop))?;
        let kl = distillation_loss(&mut tape, out.logits, &teacher_logits)?;
        distill.push(tape.value(kl).item());
        total = tape.add(total, kl)?;
    }
    let task_value = tape.value(task).item();
    if tape.value(total).data().iter().all(|v| v.is_finite()) {
        tape.backward(total)?;
    }
    Ok(ExampleResult {
        grads: p.grads(&tape),
        task: task_value,
        distill,
    })
}

/// Loss components and mean gradients (in parameter order) for one batch
/// under `plan`. Examples run independently and are reduced in batch order.
pub fn compute_gradients(
    model: &Model,
    batch: &Batch,
    plan: &StepPlan,
    step: usize,
    exec: Execution,
) -> Result<(StepLosses, Vec<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let results = exec
        .map_indexed(batch.len(), |i| {
            example_pass(model, batch.real_tokens(i), &batch.labels[i], plan)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let b = results.len() as f64;
    let n_sub = plan.sandwiches.len() + usize::from(plan.smallest.is_some());
    let mut grads: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|(_, t)| vec![0.0; t.numel()])
        .collect();
    let mut task = 0.0;
    let mut distill = vec![0.0; n_sub];
    for r in &results {
        task += r.task;
        for (acc, d) in distill.iter_mut().zip(&r.distill) {
            *acc += d;
        }
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    for g in grads.iter_mut().flatten() {
        *g /= b;
    }
    task /= b;
    for d in distill.iter_mut() {
        *d /= b;
    }

    let check = |component: String, value: f64| -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss {
                step,
                component,
                value,
            })
        }
    };
    check("task".into(), task)?;
    let smallest = plan
        .smallest
        .as_ref()
        .map(|_| distill.pop().expect("smallest slot"));
    for (i, d) in distill.iter().enumerate() {
        check(format!("sandwich[{i}]"), *d)?;
    }
    if let Some(s) = smallest {
        check("smallest".into(), s)?;
    }
    Ok((StepLosses::from_parts(task, distill, smallest), grads))
}

/// Per-epoch summary. Losses are means over the epoch's steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub steps: usize,
    pub task_loss: f64,
    pub sandwich_loss: Vec<f64>,
    pub smallest_loss: Option<f64>,
    pub total_loss: f64,
    pub val_full: Option<Metrics>,
    pub val_smallest: Option<Metrics>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub sandwiches: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// One row per epoch. Wall-clock time is left out so reruns compare
    /// byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,epoch,steps,task_loss");
        for i in 0..self.sandwiches {
            out.push_str(&format!(",sandwich_{i}_loss"));
        }
        out.push_str(",smallest_loss,total_loss,val_full,val_smallest\n");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}",
                r.phase, r.epoch, r.steps, r.task_loss
            ));
            for i in 0..self.sandwiches {
                out.push(',');
                out.push_str(&opt(r.sandwich_loss.get(i).copied()));
            }
            out.push_str(&format!(
                ",{},{},{},{}\n",
                opt(r.smallest_loss),
                r.total_loss,
                opt(r.val_full.map(|m| m.score)),
                opt(r.val_smallest.map(|m| m.score)),
            ));
        }
        out
    }
}

/// Owns the model, optimizer state and random streams of one training run.
pub struct Trainer {
    model: Model,
    config: TrainConfig,
    optimizer: Optimizer,
    exec: Execution,
    shuffle_rng: Rng,
    length_rng: Rng,
    layer_rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, model.params());
        Ok(Trainer {
            shuffle_rng: rng::stream(config.seed, rng::stream::TRAIN),
            length_rng: rng::stream(config.seed, rng::stream::LENGTHDROP),
            layer_rng: rng::stream(config.seed, rng::stream::LAYERDROP),
            model,
            config,
            optimizer,
            exec,
            step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Draws the sub-models for one phase-two step.
    pub fn sample_plan(&mut self, l0: usize) -> StepPlan {
        let layers = self.model.config().num_layers;
        let c = &self.config;
        let sub = |lengths: LengthConfig, rng: &mut Rng| SubModel {
            lengths,
            layerdrop: sample_layerdrop_mask(layers, c.p_layerdrop, rng),
        };
        let mut sandwiches = Vec::with_capacity(c.sandwiches);
        for _ in 0..c.sandwiches {
            let lengths = sample_length_config(l0, layers, c.p_lengthdrop, &mut self.length_rng);
            sandwiches.push(sub(lengths, &mut self.layer_rng));
        }
        let smallest = sub(
            smallest_config(l0, layers, c.p_lengthdrop),
            &mut self.layer_rng,
        );
        StepPlan {
            full: LengthConfig::full(l0, layers),
            sandwiches,
            smallest: Some(smallest),
        }
    }

    /// One optimizer step on `batch`. A non-finite loss aborts before any
    /// parameter is touched.
    pub fn step(&mut self, batch: &Batch, phase: Phase) -> Result<StepLosses> {
        let layers = self.model.config().num_layers;
        let plan = match phase {
            Phase::Supervised => StepPlan::supervised(batch.max_len, layers),
            Phase::LengthDrop => self.sample_plan(batch.max_len),
        };
        let (losses, grads) = compute_gradients(&self.model, batch, &plan, self.step, self.exec)?;
        self.optimizer.step(self.model.params_mut(), &grads);
        self.model.params_mut().round_to_f32();
        self.step += 1;
        Ok(losses)
    }

    /// One pass over `train` in a freshly shuffled order.
    pub fn epoch(&mut self, train: &Dataset, phase: Phase) -> Result<Vec<StepLosses>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut out = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            let batch = Batch::from_examples(chunk.iter().map(|&i| &train.examples[i]));
            out.push(self.step(&batch, phase)?);
        }
        Ok(out)
    }

    /// Runs both phases. `on_phase_end` sees the model after each phase.
    pub fn run(
        &mut self,
        train: &Dataset,
        validation: &Dataset,
        on_phase_end: &mut dyn FnMut(Phase, &Model) -> Result<()>,
    ) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(Error::contract("empty training set"));
        }
        let mut report = TrainReport {
            sandwiches: self.config.sandwiches,
            epochs: Vec::new(),
        };
        let cfg = self.model.config().clone();
        let full = cfg.full_lengths();
        let smallest = smallest_config(cfg.max_len, cfg.num_layers, self.config.p_lengthdrop);
        let phases = [
            (Phase::Supervised, self.config.supervised_epochs),
            (Phase::LengthDrop, self.config.lengthdrop_epochs),
        ];
        for (phase, epochs) in phases {
            for epoch in 0..epochs {
                let t = Instant::now();
                let steps = self.epoch(train, phase)?;
                let n = steps.len() as f64;
                let mean = |f: &dyn Fn(&StepLosses) -> f64| steps.iter().map(f).sum::<f64>() / n;
                let sandwich_loss = match phase {
                    Phase::Supervised => Vec::new(),
                    Phase::LengthDrop => (0..self.config.sandwiches)
                        .map(|i| mean(&|s| s.sandwich[i]))
                        .collect(),
                };
                let smallest_loss =
                    (phase == Phase::LengthDrop).then(|| mean(&|s| s.smallest.unwrap_or(0.0)));
                let (val_full, val_smallest) = if validation.is_empty() {
                    (None, None)
                } else {
                    (
                        Some(evaluate_dataset(&self.model, validation, &full, self.exec)?),
                        Some(evaluate_dataset(
                            &self.model,
                            validation,
                            &smallest,
                            self.exec,
                        )?),
                    )
                };
                let record = EpochRecord {
                    phase,
                    epoch,
                    steps: steps.len(),
                    task_loss: mean(&|s| s.task),
                    sandwich_loss,
                    smallest_loss,
                    total_loss: mean(&|s| s.total),
                    val_full,
                    val_smallest,
                    seconds: t.elapsed().as_secs_f64(),
                };
                log::info!(
                    "{phase} epoch {epoch}: task {:.4} total {:.4} val full {} smallest {}",
                    record.task_loss,
                    record.total_loss,
                    val_full.map_or("-".into(), |m| format!("{:.4}", m.score)),
                    val_smallest.map_or("-".into(), |m| format!("{:.4}", m.score)),
                );
                report.epochs.push(record);
            }
            on_phase_end(phase, &self.model)?;
        }
        Ok(report)
    }
}
