//! Evolutionary search for the accuracy-FLOPs Pareto frontier of length
//! configurations.

mod operators;
mod pareto;

pub use operators::{crossover, init_population, mutate};
pub use pareto::{auc, pareto_front, Frontier, ParetoPoint};

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::exec::Execution;
use crate::flops::total_flops;
use crate::model::{LengthConfig, Model};
use crate::rng;
use crate::training::constant_ratio_config;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Iterations `G`.
    pub iterations: usize,
    /// Mutants per iteration `n_m`.
    pub mutations: usize,
    /// Crossovers per iteration `n_c`.
    pub crossovers: usize,
    /// Per-layer mutation probability `p_m`.
    pub p_mutation: f64,
    pub population_size_init: usize,
    /// Ratio of the cheapest initial config; also the left end of the AUC axis.
    pub smallest_ratio: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 30,
            mutations: 30,
            crossovers: 30,
            p_mutation: 0.5,
            population_size_init: 10,
            smallest_ratio: 0.2,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_mutation) || !(0.0..=1.0).contains(&self.smallest_ratio) {
            return Err(Error::contract("search probabilities must lie in [0, 1]"));
        }
        if self.mutations == 0 || self.crossovers == 0 || self.population_size_init < 2 {
            return Err(Error::contract(
                "mutations and crossovers must be positive and the initial population at least 2",
            ));
        }
        Ok(())
    }
}

/// Scores length configurations. Implementations must be deterministic.
pub trait ConfigEvaluator: Sync {
    fn accuracy(&self, lengths: &LengthConfig) -> Result<f64>;
    fn flops(&self, lengths: &LengthConfig) -> Result<u64>;
    /// Identifies the data the accuracies come from.
    fn dataset_id(&self) -> String;
    /// Input length the configurations start from.
    fn l0(&self) -> usize;
    fn num_layers(&self) -> usize;
}

/// Validation accuracy (F1 for span tasks) and FLOPs at `max_len` of a
/// trained model.
pub struct ModelEvaluator<'a> {
    model: &'a Model,
    examples: &'a [Example],
    id: String,
}

impl<'a> ModelEvaluator<'a> {
    pub fn new(model: &'a Model, examples: &'a [Example]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::contract("search needs a nonempty validation set"));
        }
        let mut h: Vec<u8> = Vec::new();
        for e in examples {
            for t in &e.token_ids {
                h.extend_from_slice(&t.to_le_bytes());
            }
            h.push(0xff);
        }
        let id = format!("{}x{:016x}", examples.len(), rng::fnv1a(&h));
        Ok(ModelEvaluator {
            model,
            examples,
            id,
        })
    }
}

impl ConfigEvaluator for ModelEvaluator<'_> {
    fn accuracy(&self, lengths: &LengthConfig) -> Result<f64> {
        Ok(evaluate(self.model, self.examples, lengths, Execution::Sequential)?.score)
    }

    fn flops(&self, lengths: &LengthConfig) -> Result<u64> {
        let cfg = self.model.config();
        Ok(total_flops(lengths, cfg, cfg.max_len)?.total)
    }

    fn dataset_id(&self) -> String {
        self.id.clone()
    }

    fn l0(&self) -> usize {
        self.model.config().max_len
    }

    fn num_layers(&self) -> usize {
        self.model.config().num_layers
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub auc: f64,
    pub frontier_size: usize,
    /// Distinct configurations evaluated so far.
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub frontier: Frontier,
    /// Entry 0 is the initial population.
    pub log: Vec<IterationLog>,
    pub flops_min: u64,
    pub flops_max: u64,
    pub evaluations: usize,
}

fn point(eval: &dyn ConfigEvaluator, lengths: &LengthConfig, full: u64) -> Result<ParetoPoint> {
    let accuracy = eval.accuracy(lengths)?;
    if !accuracy.is_finite() {
        return Err(Error::contract(format!(
            "non-finite accuracy for {lengths}"
        )));
    }
    let flops = eval.flops(lengths)?;
    Ok(ParetoPoint {
        lengths: lengths.clone(),
        flops,
        relative_flops: flops as f64 / full as f64,
        accuracy,
        evaluated_on: eval.dataset_id(),
    })
}

/// Evaluates each configuration not yet in `cache`, in parallel, and returns
/// the successful new points in input order.
fn evaluate_new(
    eval: &dyn ConfigEvaluator,
    candidates: Vec<LengthConfig>,
    cache: &mut HashMap<LengthConfig, Option<ParetoPoint>>,
    full: u64,
    exec: Execution,
) -> Vec<ParetoPoint> {
    let mut fresh: Vec<LengthConfig> = Vec::new();
    for c in candidates {
        if !cache.contains_key(&c) && !fresh.contains(&c) {
            fresh.push(c);
        }
    }
    let results = exec.map(&fresh, |c| point(eval, c, full));
    let mut out = Vec::new();
    for (c, r) in fresh.into_iter().zip(results) {
        match r {
            Ok(p) => {
                out.push(p.clone());
                cache.insert(c, Some(p));
            }
            Err(e) => {
                log::warn!("discarding {c}: {e}");
                cache.insert(c, None);
            }
        }
    }
    out
}

/// Runs the search. Iteration `t` draws from its own random sub-stream, so
/// parallel evaluation does not change the result.
pub fn evolve(
    eval: &dyn ConfigEvaluator,
    cfg: &SearchConfig,
    exec: Execution,
) -> Result<SearchResult> {
    cfg.validate()?;
    let (l0, layers) = (eval.l0(), eval.num_layers());
    let full_cfg = LengthConfig::full(l0, layers);
    let flops_max = eval.flops(&full_cfg)?;
    let flops_min = eval.flops(&constant_ratio_config(l0, layers, cfg.smallest_ratio))?;
    let flops_of = |c: &LengthConfig| eval.flops(c).unwrap_or(u64::MAX);
    let init = init_population(
        l0,
        layers,
        cfg.population_size_init,
        cfg.smallest_ratio,
        &flops_of,
    )?;

    let mut cache: HashMap<LengthConfig, Option<ParetoPoint>> = HashMap::new();
    let initial = evaluate_new(eval, init, &mut cache, flops_max, exec);
    if initial.is_empty() {
        return Err(Error::contract(
            "every initial configuration failed to evaluate",
        ));
    }
    let mut frontier = pareto_front(&initial)?;
    let area = |f: &Frontier| {
        if flops_max > flops_min {
            auc(&f.points, flops_min, flops_max)
        } else {
            Ok(f.most_accurate().map_or(0.0, |p| p.accuracy))
        }
    };
    let mut log = vec![IterationLog {
        iteration: 0,
        auc: area(&frontier)?,
        frontier_size: frontier.len(),
        evaluations: cache.len(),
    }];

    for t in 1..=cfg.iterations {
        let mut rng = rng::substream(cfg.seed, rng::stream::SEARCH, t as u64);
        let parents = &frontier.points;
        let mut candidates = Vec::with_capacity(cfg.mutations + cfg.crossovers);
        for _ in 0..cfg.mutations {
            let parent = &parents[rng.random_range(0..parents.len())];
            candidates.push(mutate(&parent.lengths, l0, cfg.p_mutation, &mut rng));
        }
        if parents.len() >= 2 {
            for _ in 0..cfg.crossovers {
                let pair = index::sample(&mut rng, parents.len(), 2);
                candidates.push(crossover(
                    &parents[pair.index(0)].lengths,
                    &parents[pair.index(1)].lengths,
                )?);
            }
        }
        let new = evaluate_new(eval, candidates, &mut cache, flops_max, exec);
        if !new.is_empty() {
            let mut merged = frontier.points.clone();
            merged.extend(new);
            frontier = pareto_front(&merged)?;
        }
        log.push(IterationLog {
            iteration: t,
            auc: area(&frontier)?,
            frontier_size: frontier.len(),
            evaluations: cache.len(),
        });
    }
    Ok(SearchResult {
        frontier,
        log,
        flops_min,
        flops_max,
        evaluations: cache.len(),
    })
}

/// Search over a model's validation accuracy with `l_0 = max_len`.
pub fn search_model(
    model: &Model,
    validation: &[Example],
    cfg: &SearchConfig,
    exec: Execution,
) -> Result<SearchResult> {
    evolve(&ModelEvaluator::new(model, validation)?, cfg, exec)
}

/// Evenly spaced ratios `0, p/(k-1), ..., p`.
pub fn ratio_grid(p: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..k).map(|i| p * i as f64 / (k - 1) as f64).collect(),
    }
}

/// Every constant-ratio configuration for `ratios`, deduplicated, evaluated
/// in parallel. All points are returned, dominated or not.
pub fn constant_ratio_curve(
    eval: &dyn ConfigEvaluator,
    ratios: &[f64],
    exec: Execution,
) -> Result<Vec<ParetoPoint>> {
    let (l0, layers) = (eval.l0(), eval.num_layers());
    let full = eval.flops(&LengthConfig::full(l0, layers))?;
    let mut configs: Vec<LengthConfig> = Vec::new();
    for &r in ratios {
        let c = constant_ratio_config(l0, layers, r);
        if !configs.contains(&c) {
            configs.push(c);
        }
    }
    exec.map(&configs, |c| point(eval, c, full))
        .into_iter()
        .collect()
}

/// `flops,relative_flops,accuracy,l_1,...,l_L`
pub fn points_to_csv(points: &[ParetoPoint]) -> String {
    let layers = points.first().map_or(0, |p| p.lengths.num_layers());
    let mut out = String::from("flops,relative_flops,accuracy");
    for i in 1..=layers {
        let _ = write!(out, ",l_{i}");
    }
    out.push('\n');
    for p in points {
        let _ = write!(out, "{},{},{}", p.flops, p.relative_flops, p.accuracy);
        for l in p.lengths.lengths() {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
    }
    out
}

pub fn log_to_csv(log: &[IterationLog]) -> String {
    let mut out = String::from("iteration,auc,frontier_size,evaluations\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.iteration, r.auc, r.frontier_size, r.evaluations
        );
    }
    out
}
