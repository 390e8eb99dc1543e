//! Flat `key = value` configuration files.
//!
//! Grammar: one assignment per line, `#` starts a comment, blank lines are
//! ignored, keys are `section.name`. Unknown and repeated keys are errors
//! that name the offending line. Keys left out take their default.

use std::fmt::Write as _;
use std::str::FromStr;

use lat_core::model::{ModelConfig, TaskKind};
use lat_core::search::SearchConfig;
use lat_core::training::{OptimizerKind, TrainConfig};
use lat_core::Error;

#[derive(Clone, Debug)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    used: bool,
}

/// Parsed assignments in file order.
#[derive(Clone, Debug)]
pub struct KvFile {
    origin: String,
    entries: Vec<Entry>,
}

fn parse_err(origin: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: msg.into(),
    }
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> lat_core::Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                parse_err(
                    origin,
                    line,
                    format!("expected `key = value`, got `{content}`"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(parse_err(origin, line, format!("invalid key `{key}`")));
            }
            if value.is_empty() {
                return Err(parse_err(
                    origin,
                    line,
                    format!("missing value for `{key}`"),
                ));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(parse_err(
                    origin,
                    line,
                    format!("duplicate key `{key}` (first set on line {})", prev.line),
                ));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
                used: false,
            });
        }
        Ok(KvFile {
            origin: origin.to_string(),
            entries,
        })
    }

    fn take<T: FromStr>(&mut self, key: &str, default: T) -> lat_core::Result<T> {
        let origin = self.origin.clone();
        match self.entries.iter_mut().find(|e| e.key == key) {
            None => Ok(default),
            Some(e) => {
                e.used = true;
                e.value.parse().map_err(|_| {
                    parse_err(
                        &origin,
                        e.line,
                        format!("invalid value `{}` for `{key}`", e.value),
                    )
                })
            }
        }
    }

    fn take_with<T>(
        &mut self,
        key: &str,
        default: T,
        f: impl Fn(&str) -> Option<T>,
    ) -> lat_core::Result<T> {
        let origin = self.origin.clone();
        match self.entries.iter_mut().find(|e| e.key == key) {
            None => Ok(default),
            Some(e) => {
                e.used = true;
                f(&e.value).ok_or_else(|| {
                    parse_err(
                        &origin,
                        e.line,
                        format!("invalid value `{}` for `{key}`", e.value),
                    )
                })
            }
        }
    }

    fn finish(self) -> lat_core::Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            Some(e) => Err(parse_err(
                &self.origin,
                e.line,
                format!("unknown key `{}`", e.key),
            )),
            None => Ok(()),
        }
    }
}

fn optimizer_name(o: OptimizerKind) -> &'static str {
    match o {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

fn parse_optimizer(s: &str) -> Option<OptimizerKind> {
    match s {
        "sgd" => Some(OptimizerKind::Sgd),
        "adam" => Some(OptimizerKind::Adam),
        _ => None,
    }
}

/// Contents of a training config: the model to build and how to train it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrainFile {
    pub fn parse(text: &str, origin: &str) -> lat_core::Result<Self> {
        let mut kv = KvFile::parse(text, origin)?;
        let (m, t) = (ModelConfig::default(), TrainConfig::default());
        let model = ModelConfig {
            num_layers: kv.take("model.num_layers", m.num_layers)?,
            hidden: kv.take("model.hidden", m.hidden)?,
            num_heads: kv.take("model.num_heads", m.num_heads)?,
            ffn_dim: kv.take("model.ffn_dim", m.ffn_dim)?,
            vocab_size: kv.take("model.vocab_size", m.vocab_size)?,
            max_len: kv.take("model.max_len", m.max_len)?,
            task: kv.take_with("model.task", m.task, TaskKind::parse)?,
            num_classes: kv.take("model.num_classes", m.num_classes)?,
            layer_norm_eps: kv.take("model.layer_norm_eps", m.layer_norm_eps)?,
        };
        let train = TrainConfig {
            p_lengthdrop: kv.take("train.p_lengthdrop", t.p_lengthdrop)?,
            p_layerdrop: kv.take("train.p_layerdrop", t.p_layerdrop)?,
            sandwiches: kv.take("train.sandwiches", t.sandwiches)?,
            learning_rate: kv.take("train.learning_rate", t.learning_rate)?,
            batch_size: kv.take("train.batch_size", t.batch_size)?,
            supervised_epochs: kv.take("train.supervised_epochs", t.supervised_epochs)?,
            lengthdrop_epochs: kv.take("train.lengthdrop_epochs", t.lengthdrop_epochs)?,
            optimizer: kv.take_with("train.optimizer", t.optimizer, parse_optimizer)?,
            seed: kv.take("train.seed", t.seed)?,
        };
        kv.finish()?;
        model.validate()?;
        train.validate()?;
        Ok(TrainFile { model, train })
    }

    /// Every key, in a stable order.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let _ = writeln!(s, "model.num_layers = {}", m.num_layers);
        let _ = writeln!(s, "model.hidden = {}", m.hidden);
        let _ = writeln!(s, "model.num_heads = {}", m.num_heads);
        let _ = writeln!(s, "model.ffn_dim = {}", m.ffn_dim);
        let _ = writeln!(s, "model.vocab_size = {}", m.vocab_size);
        let _ = writeln!(s, "model.max_len = {}", m.max_len);
        let _ = writeln!(s, "model.task = {}", m.task.as_str());
        let _ = writeln!(s, "model.num_classes = {}", m.num_classes);
        let _ = writeln!(s, "model.layer_norm_eps = {:e}", m.layer_norm_eps);
        let _ = writeln!(s, "train.p_lengthdrop = {}", t.p_lengthdrop);
        let _ = writeln!(s, "train.p_layerdrop = {}", t.p_layerdrop);
        let _ = writeln!(s, "train.sandwiches = {}", t.sandwiches);
        let _ = writeln!(s, "train.learning_rate = {:e}", t.learning_rate);
        let _ = writeln!(s, "train.batch_size = {}", t.batch_size);
        let _ = writeln!(s, "train.supervised_epochs = {}", t.supervised_epochs);
        let _ = writeln!(s, "train.lengthdrop_epochs = {}", t.lengthdrop_epochs);
        let _ = writeln!(s, "train.optimizer = {}", optimizer_name(t.optimizer));
        let _ = writeln!(s, "train.seed = {}", t.seed);
        s
    }
}

/// Contents of a search config.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchFile {
    pub search: SearchConfig,
    /// Points on the constant-ratio comparison curve.
    pub baseline_points: usize,
}

impl Default for SearchFile {
    fn default() -> Self {
        SearchFile {
            search: SearchConfig::default(),
            baseline_points: 11,
        }
    }
}

impl SearchFile {
    pub fn parse(text: &str, origin: &str) -> lat_core::Result<Self> {
        let mut kv = KvFile::parse(text, origin)?;
        let d = SearchFile::default();
        let s = &d.search;
        let search = SearchConfig {
            iterations: kv.take("search.iterations", s.iterations)?,
            mutations: kv.take("search.mutations", s.mutations)?,
            crossovers: kv.take("search.crossovers", s.crossovers)?,
            p_mutation: kv.take("search.p_mutation", s.p_mutation)?,
            population_size_init: kv.take("search.population_size_init", s.population_size_init)?,
            smallest_ratio: kv.take("search.smallest_ratio", s.smallest_ratio)?,
            seed: kv.take("search.seed", s.seed)?,
        };
        let baseline_points = kv.take("search.baseline_points", d.baseline_points)?;
        kv.finish()?;
        search.validate()?;
        Ok(SearchFile {
            search,
            baseline_points,
        })
    }

    pub fn to_text(&self) -> String {
        let s = &self.search;
        let mut out = String::new();
        let _ = writeln!(out, "search.iterations = {}", s.iterations);
        let _ = writeln!(out, "search.mutations = {}", s.mutations);
        let _ = writeln!(out, "search.crossovers = {}", s.crossovers);
        let _ = writeln!(out, "search.p_mutation = {}", s.p_mutation);
        let _ = writeln!(
            out,
            "search.population_size_init = {}",
            s.population_size_init
        );
        let _ = writeln!(out, "search.smallest_ratio = {}", s.smallest_ratio);
        let _ = writeln!(out, "search.seed = {}", s.seed);
        let _ = writeln!(out, "search.baseline_points = {}", self.baseline_points);
        out
    }
}
