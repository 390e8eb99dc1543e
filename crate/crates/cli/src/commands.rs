use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lat_core::data::{self, Dataset, Splits, Vocab};
use lat_core::eval::{evaluate_dataset, Metrics};
use lat_core::flops::{measure_latency, spearman, total_flops, CostBreakdown, LatencyStats};
use lat_core::search::{
    auc, constant_ratio_curve, evolve, log_to_csv, pareto_front, points_to_csv, ratio_grid,
    Frontier, ModelEvaluator, ParetoPoint, SearchResult,
};
use lat_core::training::{Phase, Trainer};
use lat_core::{io, rng, Execution, LengthConfig, Model, ModelConfig, TaskKind};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{SearchFile, TrainFile};
use crate::error::{CliError, Result};
use crate::manifest::{hash_inputs, RunManifest};

pub const TRAIN_SPLIT: &str = "train.jsonl";
pub const VALIDATION_SPLIT: &str = "validation.jsonl";
pub const TEST_SPLIT: &str = "test.jsonl";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<PathBuf> {
    io::write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

fn load_split(dir: &Path, file: &str, cfg: &ModelConfig) -> Result<Dataset> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "missing data split {}",
            path.display()
        )));
    }
    let ds = data::load_jsonl(&path, cfg.task, Vocab::new(cfg.vocab_size), cfg.max_len)?;
    Ok(ds)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub report_csv: PathBuf,
    pub manifest: PathBuf,
}

/// Two-phase training. `model.lat` always holds the latest good parameters
/// (initial ones before any phase finishes); `supervised.lat` keeps the
/// end of phase one for comparisons.
pub fn cmd_train(
    config: &Path,
    data_dir: &Path,
    out_dir: &Path,
    exec: Execution,
) -> Result<TrainOutputs> {
    let t0 = Instant::now();
    let text = read_text(config)?;
    let file = TrainFile::parse(&text, &config.display().to_string())?;
    create_dir(out_dir)?;
    let train = load_split(data_dir, TRAIN_SPLIT, &file.model)?;
    let validation = load_split(data_dir, VALIDATION_SPLIT, &file.model)?;

    let model = Model::init(file.model.clone(), file.train.seed)?;
    let ckpt_path = out_dir.join("model.lat");
    let phase_ckpt = |model: &Model, phase: &str| Checkpoint {
        model: model.clone(),
        train_config: file.train.clone(),
        phase: phase.to_string(),
        seed: file.train.seed,
    };
    phase_ckpt(&model, "init").save(&ckpt_path)?;

    let mut outputs = vec![ckpt_path.clone()];
    let supervised_path = out_dir.join("supervised.lat");
    let epochs = [file.train.supervised_epochs, file.train.lengthdrop_epochs];
    let mut trainer = Trainer::new(model, file.train.clone(), exec)?;
    let mut hook = |phase: Phase, model: &Model| -> lat_core::Result<()> {
        let ran = match phase {
            Phase::Supervised => epochs[0] > 0,
            Phase::LengthDrop => epochs[1] > 0,
        };
        let save = |path: &Path| {
            phase_ckpt(model, &phase.to_string())
                .save(path)
                .map_err(|e| lat_core::Error::Contract(format!("saving checkpoint: {e}")))
        };
        if phase == Phase::Supervised {
            save(&supervised_path)?;
        }
        if ran {
            save(&ckpt_path)?;
        }
        Ok(())
    };
    let report = trainer.run(&train, &validation, &mut hook)?;
    outputs.push(supervised_path);

    let report_csv = write(&out_dir.join("train_report.csv"), &report.to_csv())?;
    let report_json = write(
        &out_dir.join("train_report.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    outputs.extend([report_csv.clone(), report_json]);
    let inputs = vec![
        config.to_path_buf(),
        data_dir.join(TRAIN_SPLIT),
        data_dir.join(VALIDATION_SPLIT),
    ];
    let manifest = RunManifest {
        command: "train".into(),
        config: file.to_text(),
        input_hash: hash_inputs(&inputs)?,
        inputs,
        outputs,
        seconds: t0.elapsed().as_secs_f64(),
    }
    .write(out_dir)?;
    Ok(TrainOutputs {
        checkpoint: ckpt_path,
        report_csv,
        manifest,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchSummary {
    pub search_auc: f64,
    pub baseline_auc: f64,
    pub flops_min: u64,
    pub flops_max: u64,
    pub evaluations: usize,
    pub frontier_size: usize,
}

pub struct SearchOutputs {
    pub result: SearchResult,
    pub baseline: Vec<ParetoPoint>,
    pub summary: SearchSummary,
    pub frontier_csv: PathBuf,
    pub auc_csv: PathBuf,
    pub baseline_csv: PathBuf,
}

/// Evolutionary search on the validation split plus the constant-ratio
/// curve over the same ratio range, both scored on one FLOPs axis.
pub fn cmd_search(
    checkpoint: &Path,
    data_dir: &Path,
    config: &Path,
    out_dir: &Path,
    exec: Execution,
) -> Result<SearchOutputs> {
    let t0 = Instant::now();
    let ckpt = load_checkpoint(checkpoint)?;
    let text = read_text(config)?;
    let file = SearchFile::parse(&text, &config.display().to_string())?;
    create_dir(out_dir)?;
    let validation = load_split(data_dir, VALIDATION_SPLIT, ckpt.model.config())?;
    let evaluator = ModelEvaluator::new(&ckpt.model, &validation.examples)?;

    let result = evolve(&evaluator, &file.search, exec)?;
    let ratios = ratio_grid(file.search.smallest_ratio, file.baseline_points);
    let baseline = constant_ratio_curve(&evaluator, &ratios, exec)?;
    let baseline_front = pareto_front(&baseline)?;
    let summary = SearchSummary {
        search_auc: result.log.last().map_or(0.0, |l| l.auc),
        baseline_auc: axis_auc(&baseline_front, result.flops_min, result.flops_max)?,
        flops_min: result.flops_min,
        flops_max: result.flops_max,
        evaluations: result.evaluations,
        frontier_size: result.frontier.len(),
    };

    let frontier_csv = write(
        &out_dir.join("frontier.csv"),
        &points_to_csv(&result.frontier.points),
    )?;
    let frontier_json = write(
        &out_dir.join("frontier.json"),
        &(serde_json::to_string_pretty(&result)? + "\n"),
    )?;
    let auc_csv = write(&out_dir.join("auc_log.csv"), &log_to_csv(&result.log))?;
    let baseline_csv = write(&out_dir.join("baseline.csv"), &points_to_csv(&baseline))?;
    let summary_json = write(
        &out_dir.join("search_summary.json"),
        &(serde_json::to_string_pretty(&summary)? + "\n"),
    )?;
    let inputs = vec![
        checkpoint.to_path_buf(),
        config.to_path_buf(),
        data_dir.join(VALIDATION_SPLIT),
    ];
    RunManifest {
        command: "search".into(),
        config: file.to_text(),
        input_hash: hash_inputs(&inputs)?,
        inputs,
        outputs: vec![
            frontier_csv.clone(),
            frontier_json,
            auc_csv.clone(),
            baseline_csv.clone(),
            summary_json,
        ],
        seconds: t0.elapsed().as_secs_f64(),
    }
    .write(out_dir)?;
    Ok(SearchOutputs {
        result,
        baseline,
        summary,
        frontier_csv,
        auc_csv,
        baseline_csv,
    })
}

fn axis_auc(front: &Frontier, lo: u64, hi: u64) -> Result<f64> {
    if hi > lo {
        Ok(auc(&front.points, lo, hi)?)
    } else {
        Ok(front.most_accurate().map_or(0.0, |p| p.accuracy))
    }
}

/// How `cmd_eval` picks the configuration.
#[derive(Clone, Debug)]
pub enum EvalTarget {
    Full,
    Lengths(Vec<usize>),
    Budget { flops: u64, frontier: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub lengths: Vec<usize>,
    pub metrics: Metrics,
    pub flops: u64,
    pub relative_flops: f64,
}

fn checked_lengths(lengths: Vec<usize>, cfg: &ModelConfig) -> Result<LengthConfig> {
    if lengths.len() != cfg.num_layers {
        return Err(CliError::Usage(format!(
            "expected {} lengths (one per layer), got {}",
            cfg.num_layers,
            lengths.len()
        )));
    }
    let c = LengthConfig::new(lengths)?;
    c.check_against(cfg.max_len, cfg.num_layers)?;
    Ok(c)
}

pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    split: &str,
    target: EvalTarget,
    out: Option<&Path>,
    exec: Execution,
) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = ckpt.model.config();
    let file = match split {
        "train" => TRAIN_SPLIT,
        "validation" => VALIDATION_SPLIT,
        "test" => TEST_SPLIT,
        other => return Err(CliError::Usage(format!("unknown split `{other}`"))),
    };
    let ds = load_split(data_dir, file, cfg)?;
    let lengths = match target {
        EvalTarget::Full => cfg.full_lengths(),
        EvalTarget::Lengths(l) => checked_lengths(l, cfg)?,
        EvalTarget::Budget { flops, frontier } => {
            let result: SearchResult = serde_json::from_str(&read_text(&frontier)?)?;
            result.frontier.select_for_budget(flops)?.lengths.clone()
        }
    };
    let metrics = evaluate_dataset(&ckpt.model, &ds, &lengths, exec)?;
    let cost = total_flops(&lengths, cfg, cfg.max_len)?;
    let report = EvalReport {
        split: split.to_string(),
        lengths: lengths.lengths().to_vec(),
        metrics,
        flops: cost.total,
        relative_flops: cost.relative,
    };
    if let Some(out) = out {
        write(out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(report)
}

/// Model source for `cmd_flops`: a checkpoint or a training config.
pub fn load_model_config(checkpoint: Option<&Path>, config: Option<&Path>) -> Result<ModelConfig> {
    match (checkpoint, config) {
        (Some(c), None) => Ok(load_checkpoint(c)?.model.config().clone()),
        (None, Some(p)) => Ok(TrainFile::parse(&read_text(p)?, &p.display().to_string())?.model),
        _ => Err(CliError::Usage(
            "give exactly one of a checkpoint or a config file".into(),
        )),
    }
}

pub fn cmd_flops(
    cfg: &ModelConfig,
    lengths: Option<Vec<usize>>,
    n_actual: Option<usize>,
) -> Result<CostBreakdown> {
    let lengths = match lengths {
        Some(l) => checked_lengths(l, cfg)?,
        None => cfg.full_lengths(),
    };
    Ok(total_flops(&lengths, cfg, n_actual.unwrap_or(cfg.max_len))?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<(u64, LatencyStats)>,
    /// Between FLOPs and median latency; present with two or more configs.
    pub spearman: Option<f64>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lengths,flops,batch_size,repeats,median_s,iqr_s\n");
        for (flops, s) in &self.rows {
            let lengths: Vec<String> = s.lengths.iter().map(|l| l.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                lengths.join(" "),
                flops,
                s.batch_size,
                s.repeats,
                s.median,
                s.iqr
            ));
        }
        out
    }
}

/// Times full-length random inputs under each configuration on the calling
/// thread.
pub fn bench_model(
    model: &Model,
    configs: &[LengthConfig],
    batch: usize,
    warmup: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport> {
    let cfg = model.config();
    let mut r = rng::stream(seed, "bench");
    let inputs: Vec<Vec<u32>> = (0..batch)
        .map(|_| {
            let mut ids: Vec<u32> = (0..cfg.max_len)
                .map(|_| r.random_range(data::FIRST_WORD..cfg.vocab_size as u32))
                .collect();
            ids[0] = data::CLS;
            ids
        })
        .collect();
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let flops = total_flops(c, cfg, cfg.max_len)?.total;
        rows.push((flops, measure_latency(model, c, &inputs, warmup, repeats)?));
    }
    let spearman = (rows.len() >= 2).then(|| {
        let f: Vec<f64> = rows.iter().map(|(f, _)| *f as f64).collect();
        let t: Vec<f64> = rows.iter().map(|(_, s)| s.median).collect();
        spearman(&f, &t)
    });
    Ok(BenchReport { rows, spearman })
}

pub fn cmd_bench(
    checkpoint: &Path,
    lengths: &[Vec<usize>],
    batch: usize,
    warmup: usize,
    repeats: usize,
    out: Option<&Path>,
) -> Result<BenchReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = ckpt.model.config();
    let configs = if lengths.is_empty() {
        vec![cfg.full_lengths()]
    } else {
        lengths
            .iter()
            .map(|l| checked_lengths(l.clone(), cfg))
            .collect::<Result<Vec<_>>>()?
    };
    let report = bench_model(&ckpt.model, &configs, batch, warmup, repeats, ckpt.seed)?;
    if let Some(out) = out {
        write(out, &report.to_csv())?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ExportSpec {
    pub task: TaskKind,
    pub seed: u64,
    pub count: usize,
    pub len_range: (usize, usize),
    pub vocab_size: usize,
    pub validation_frac: f64,
    pub test_frac: f64,
}

/// Writes a synthetic dataset as `train.jsonl`, `validation.jsonl` and
/// `test.jsonl`.
pub fn cmd_export_data(spec: &ExportSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let ds = match spec.task {
        TaskKind::SequenceClassification => {
            data::gen_sequence_task(spec.seed, spec.count, spec.len_range, spec.vocab_size)?
        }
        TaskKind::SpanExtraction => {
            data::gen_span_task(spec.seed, spec.count, spec.len_range, spec.vocab_size)?
        }
    };
    let splits = Splits::from_dataset(ds, spec.validation_frac, spec.test_frac, spec.seed)?;
    let vocab = Vocab::new(spec.vocab_size);
    let mut written = Vec::new();
    for (name, part) in [
        (TRAIN_SPLIT, &splits.train),
        (VALIDATION_SPLIT, &splits.validation),
        (TEST_SPLIT, &splits.test),
    ] {
        let path = out_dir.join(name);
        data::write_jsonl(part, vocab, &path)?;
        written.push(path);
    }
    Ok(written)
}
