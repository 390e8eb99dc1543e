//! Length-adaptive transformer: a post-norm encoder that drops word vectors
//! layer by layer, trained once with LengthDrop and then searched for the
//! accuracy-FLOPs frontier of length configurations.

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod flops;
pub mod io;
pub mod model;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{LengthConfig, Model, ModelConfig, TaskKind};
pub use tensor::{Tape, Tensor, Var};
