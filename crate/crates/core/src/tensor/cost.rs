//! FLOP charges per kernel. The tape's instrumented counter and the closed-form
//! cost model in [`crate::flops`] both read these constants.
//!
//! A multiply-accumulate counts as 2. Gathers, scatters, column slicing and
//! embedding lookups are memory movement and cost nothing.

/// Per multiply-accumulate in a matrix product.
pub const MAC: u64 = 2;
/// Per output element of an elementwise add, multiply or scale.
pub const ELEMENTWISE: u64 = 1;
/// Per element of a row softmax: max, subtract, exp, sum, divide.
pub const SOFTMAX: u64 = 5;
/// Per element of a row log-softmax.
pub const LOG_SOFTMAX: u64 = 5;
/// Per element of layer normalization: mean, center, variance, scale, affine.
pub const LAYER_NORM: u64 = 5;
/// Per element of the tanh-approximated GELU.
pub const GELU: u64 = 8;
/// Per logit of a cross-entropy loss.
pub const CROSS_ENTROPY: u64 = 5;
