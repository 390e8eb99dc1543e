use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// One label per sequence, read from position 0.
    SequenceClassification,
    /// Start/end logits at every position.
    SpanExtraction,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SequenceClassification => "sequence",
            TaskKind::SpanExtraction => "span",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sequence" | "sequence_classification" => Some(TaskKind::SequenceClassification),
            "span" | "span_extraction" => Some(TaskKind::SpanExtraction),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Padded input length, the `l_0` every [`LengthConfig`] is defined against.
    pub max_len: usize,
    pub task: TaskKind,
    pub num_classes: usize,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 2,
            hidden: 32,
            num_heads: 2,
            ffn_dim: 64,
            vocab_size: 32,
            max_len: 32,
            task: TaskKind::SequenceClassification,
            num_classes: 2,
            layer_norm_eps: 1e-12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_layers", self.num_layers),
            ("hidden", self.hidden),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::ModelConfig(format!("{name} must be positive")));
            }
        }
        if !self.hidden.is_multiple_of(self.num_heads) {
            return Err(Error::ModelConfig(format!(
                "hidden {} is not divisible by num_heads {}",
                self.hidden, self.num_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::ModelConfig("max_len must be at least 2".into()));
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(Error::ModelConfig("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }

    /// The no-drop configuration `(l_0, ..., l_0)`.
    pub fn full_lengths(&self) -> LengthConfig {
        LengthConfig::full(self.max_len, self.num_layers)
    }
}

/// Per-layer retained lengths `(l_1, ..., l_L)`, nonincreasing and at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LengthConfig(Vec<usize>);

impl LengthConfig {
    pub fn new(lengths: Vec<usize>) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::LengthConfig("no layers".into()));
        }
        if lengths.contains(&0) {
            return Err(Error::LengthConfig(format!(
                "{lengths:?} contains a zero length"
            )));
        }
        if lengths.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::LengthConfig(format!(
                "{lengths:?} is not nonincreasing"
            )));
        }
        Ok(LengthConfig(lengths))
    }

    pub fn full(l0: usize, num_layers: usize) -> Self {
        LengthConfig(vec![l0.max(1); num_layers])
    }

    pub fn lengths(&self) -> &[usize] {
        &self.0
    }

    pub fn num_layers(&self) -> usize {
        self.0.len()
    }

    /// Checks `l_1 <= l0` and the layer count.
    pub fn check_against(&self, l0: usize, num_layers: usize) -> Result<()> {
        if self.0.len() != num_layers {
            return Err(Error::LengthConfig(format!(
                "expected {num_layers} lengths, got {}",
                self.0.len()
            )));
        }
        if self.0[0] > l0 {
            return Err(Error::LengthConfig(format!(
                "l_1 = {} exceeds the input length {l0}",
                self.0[0]
            )));
        }
        Ok(())
    }

    /// Lengths actually retained for an input of `n_actual` real tokens.
    pub fn effective(&self, n_actual: usize) -> Vec<usize> {
        self.0.iter().map(|&l| l.min(n_actual)).collect()
    }

    pub fn is_full(&self, l0: usize) -> bool {
        self.0.iter().all(|&l| l >= l0)
    }
}

impl TryFrom<Vec<usize>> for LengthConfig {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        LengthConfig::new(v)
    }
}

impl From<LengthConfig> for Vec<usize> {
    fn from(c: LengthConfig) -> Self {
        c.0
    }
}

impl fmt::Display for LengthConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_increasing_and_zero() {
        assert!(LengthConfig::new(vec![3, 4]).is_err());
        assert!(LengthConfig::new(vec![3, 0]).is_err());
        assert!(LengthConfig::new(vec![]).is_err());
        assert!(LengthConfig::new(vec![4, 4, 1]).is_ok());
    }

    #[test]
    fn checks_first_length_against_input() {
        let c = LengthConfig::new(vec![9, 2]).unwrap();
        assert!(c.check_against(8, 2).is_err());
        assert!(c.check_against(9, 3).is_err());
        assert!(c.check_against(9, 2).is_ok());
        assert_eq!(c.effective(5), vec![5, 2]);
    }

    #[test]
    fn heads_must_divide_hidden() {
        let cfg = ModelConfig {
            hidden: 10,
            num_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn serde_rejects_invalid_lengths() {
        assert!(serde_json::from_str::<LengthConfig>("[2,3]").is_err());
        let c: LengthConfig = serde_json::from_str("[3,2]").unwrap();
        assert_eq!(c.to_string(), "(3, 2)");
    }
}
