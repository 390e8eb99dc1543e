//! Pareto front, AUC and evolutionary search against brute-force oracles.

use std::collections::HashMap;
use std::sync::Mutex;

use lat_core::flops::total_flops;
use lat_core::search::{
    auc, evolve, init_population, pareto_front, ConfigEvaluator, ParetoPoint, SearchConfig,
};
use lat_core::training::constant_ratio_config;
use lat_core::{rng, Error, Execution, LengthConfig, ModelConfig, Result};
use proptest::prelude::*;
use rand::Rng;

fn point(flops: u64, accuracy: f64, tag: usize) -> ParetoPoint {
    ParetoPoint {
        lengths: LengthConfig::new(vec![tag + 1]).unwrap(),
        flops,
        relative_flops: 0.0,
        accuracy,
        evaluated_on: String::new(),
    }
}

fn brute_front(points: &[ParetoPoint]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .map(|p| (p.flops, p.accuracy.to_bits()))
        .collect();
    out.sort();
    out.dedup();
    out
}

#[test]
fn pareto_front_matches_brute_force() {
    let mut r = rng::stream(41, "pareto");
    for instance in 0..500 {
        let n = r.random_range(1..=200);
        // Coarse grids force plenty of ties.
        let grid = if instance % 2 == 0 { 20 } else { 1000 };
        let points: Vec<ParetoPoint> = (0..n)
            .map(|i| {
                point(
                    r.random_range(0..grid),
                    r.random_range(0..grid) as f64 / grid as f64,
                    i,
                )
            })
            .collect();
        let front = pareto_front(&points).unwrap();
        let got: Vec<(u64, u64)> = front
            .iter()
            .map(|p| (p.flops, p.accuracy.to_bits()))
            .collect();
        assert_eq!(got, brute_front(&points), "instance {instance}");
        assert!(front
            .points
            .windows(2)
            .all(|w| w[0].flops < w[1].flops && w[0].accuracy < w[1].accuracy));

        for _ in 0..10 {
            let budget = r.random_range(0..grid + 5);
            let oracle = front
                .iter()
                .filter(|p| p.flops <= budget)
                .max_by(|a, b| a.accuracy.total_cmp(&b.accuracy));
            match (front.select_for_budget(budget), oracle) {
                (Ok(p), Some(o)) => assert_eq!(p, o),
                (Err(Error::NoFeasibleConfig { cheapest, .. }), None) => {
                    assert_eq!(cheapest, front.cheapest().unwrap().flops)
                }
                (got, want) => panic!("budget {budget}: {got:?} vs {want:?}"),
            }
        }
    }
}

/// The step function the AUC integrates, evaluated at `f`.
fn step(points: &[ParetoPoint], f: f64) -> f64 {
    let cheapest = points.iter().min_by_key(|p| p.flops).unwrap();
    points
        .iter()
        .filter(|p| p.flops as f64 <= f)
        .map(|p| p.accuracy)
        .fold(cheapest.accuracy, f64::max)
}

fn arb_points() -> impl Strategy<Value = Vec<(u64, f64)>> {
    prop::collection::vec((0u64..1000, 0.0f64..1.0), 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn auc_matches_riemann_sum(raw in arb_points()) {
        let points: Vec<ParetoPoint> = raw.iter().enumerate().map(|(i, &(f, a))| point(f, a, i)).collect();
        let (lo, hi) = (100u64, 900u64);
        // Midpoint sum on unit cells is exact for a step function with integer breakpoints.
        let riemann: f64 = (lo..hi).map(|x| step(&points, x as f64 + 0.5)).sum::<f64>() / (hi - lo) as f64;
        let a = auc(&points, lo, hi).unwrap();
        prop_assert!((a - riemann).abs() < 1e-9, "{} vs {}", a, riemann);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn auc_is_monotone_under_insertion(raw in arb_points(), extra in (0u64..1000, 0.0f64..1.0), anchor in 0.0f64..1.0) {
        // Some point sits at the left end of the axis, as the search guarantees.
        let mut points: Vec<ParetoPoint> = vec![point(100, anchor, 0)];
        points.extend(raw.iter().enumerate().map(|(i, &(f, a))| point(f, a, i + 1)));
        let before = auc(&points, 100, 900).unwrap();
        points.push(point(extra.0, extra.1, 99));
        let after = auc(&points, 100, 900).unwrap();
        prop_assert!(after >= before - 1e-12);
        let front = pareto_front(&points).unwrap();
        prop_assert!((auc(&front.points, 100, 900).unwrap() - after).abs() < 1e-12);
    }
}

fn toy_config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden: 8,
        num_heads: 2,
        ffn_dim: 16,
        vocab_size: 12,
        max_len: 8,
        ..ModelConfig::default()
    }
}

/// Deterministic accuracy that rises with cost plus a length-dependent wobble.
struct Toy {
    cfg: ModelConfig,
    calls: Mutex<HashMap<LengthConfig, usize>>,
}

impl Toy {
    fn new(cfg: ModelConfig) -> Self {
        Toy {
            cfg,
            calls: Mutex::new(HashMap::new()),
        }
    }
}

impl ConfigEvaluator for Toy {
    fn accuracy(&self, lengths: &LengthConfig) -> Result<f64> {
        *self
            .calls
            .lock()
            .unwrap()
            .entry(lengths.clone())
            .or_default() += 1;
        let f = self.flops(lengths)? as f64 / self.flops(&self.cfg.full_lengths())? as f64;
        let wobble = lengths
            .lengths()
            .iter()
            .fold(7u64, |h, &l| (h * 31 + l as u64) % 97) as f64
            / 97.0;
        Ok(0.5 + 0.4 * f + 0.1 * wobble)
    }

    fn flops(&self, lengths: &LengthConfig) -> Result<u64> {
        Ok(total_flops(lengths, &self.cfg, self.cfg.max_len)?.total)
    }

    fn dataset_id(&self) -> String {
        "toy".into()
    }

    fn l0(&self) -> usize {
        self.cfg.max_len
    }

    fn num_layers(&self) -> usize {
        self.cfg.num_layers
    }
}

fn all_configs(l0: usize) -> Vec<LengthConfig> {
    (1..=l0)
        .flat_map(|a| (1..=a).map(move |b| LengthConfig::new(vec![a, b]).unwrap()))
        .collect()
}

#[test]
fn search_recovers_exhaustive_frontier() {
    let toy = Toy::new(toy_config());
    let everything: Vec<ParetoPoint> = all_configs(8)
        .iter()
        .map(|c| ParetoPoint {
            lengths: c.clone(),
            flops: toy.flops(c).unwrap(),
            relative_flops: 0.0,
            accuracy: toy.accuracy(c).unwrap(),
            evaluated_on: String::new(),
        })
        .collect();
    assert_eq!(everything.len(), 36);
    let exhaustive = pareto_front(&everything).unwrap();
    let toy = Toy::new(toy_config());
    let result = evolve(&toy, &SearchConfig::default(), Execution::Sequential).unwrap();
    let key = |p: &ParetoPoint| (p.flops, p.accuracy.to_bits());
    assert_eq!(
        result.frontier.iter().map(key).collect::<Vec<_>>(),
        exhaustive.iter().map(key).collect::<Vec<_>>()
    );
    assert!(result.log.windows(2).all(|w| w[1].auc >= w[0].auc));
    assert_eq!(result.log.len(), 31);
}

#[test]
fn search_is_deterministic_and_memoized() {
    let cfg = ModelConfig {
        max_len: 24,
        num_layers: 3,
        ..toy_config()
    };
    let search = SearchConfig {
        iterations: 8,
        ..SearchConfig::default()
    };
    let a = Toy::new(cfg.clone());
    let first = evolve(&a, &search, Execution::Parallel).unwrap();
    let b = Toy::new(cfg);
    let second = evolve(&b, &search, Execution::Sequential).unwrap();
    assert_eq!(first, second);
    let calls = a.calls.lock().unwrap();
    assert!(
        calls.values().all(|&n| n == 1),
        "a configuration was evaluated twice"
    );
    assert_eq!(calls.len(), first.evaluations);
    assert!(first
        .log
        .windows(2)
        .all(|w| w[1].auc >= w[0].auc && w[1].evaluations >= w[0].evaluations));
}

#[test]
fn different_seeds_explore_differently() {
    let cfg = ModelConfig {
        max_len: 24,
        num_layers: 3,
        ..toy_config()
    };
    let run = |seed| {
        let s = SearchConfig {
            iterations: 3,
            seed,
            ..SearchConfig::default()
        };
        let toy = Toy::new(cfg.clone());
        evolve(&toy, &s, Execution::Sequential).unwrap();
        let mut seen: Vec<LengthConfig> = toy.calls.into_inner().unwrap().into_keys().collect();
        seen.sort();
        seen
    };
    assert_ne!(run(1), run(2));
}

#[test]
fn initial_population_spans_cost_range() {
    let cfg = ModelConfig {
        max_len: 128,
        num_layers: 6,
        hidden: 16,
        ..toy_config()
    };
    let flops = |c: &LengthConfig| total_flops(c, &cfg, 128).unwrap().total;
    for k in [4, 8, 10, 20] {
        let pop = init_population(128, 6, k, 0.2, &flops).unwrap();
        assert_eq!(pop.first().unwrap(), &cfg.full_lengths());
        assert_eq!(pop.last().unwrap(), &constant_ratio_config(128, 6, 0.2));
        let mut costs: Vec<f64> = pop.iter().map(|c| flops(c) as f64).collect();
        costs.sort_by(f64::total_cmp);
        let span = costs.last().unwrap() - costs[0];
        let widest = costs
            .windows(2)
            .map(|w| (w[1] - w[0]) / span)
            .fold(0.0, f64::max);
        assert!(widest < 2.0 / k as f64, "k={k}: widest gap {widest}");
    }
}
