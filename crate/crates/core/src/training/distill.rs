use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{Tape, Tensor, Var};

/// Inplace-distillation loss `KL(softmax(teacher) || softmax(student))` at
/// temperature 1, averaged over rows. Span logits `[2, n]` therefore average
/// the start and end divergences.
///
/// The teacher enters as constants: nothing flows back into it.
pub fn distillation_loss(tape: &mut Tape, student: Var, teacher: &Tensor) -> Result<Var> {
    if tape.shape(student) != teacher.shape() {
        return Err(Error::Shape {
            op: "distillation_loss",
            lhs: tape.shape(student).to_vec(),
            rhs: teacher.shape().to_vec(),
        });
    }
    let c = teacher.cols();
    let rows = teacher.rows();
    let mut log_p = vec![0.0; teacher.numel()];
    for (src, dst) in teacher.data().chunks(c).zip(log_p.chunks_mut(c)) {
        kernels::log_softmax_row(src, dst);
    }
    let p: Vec<f64> = log_p.iter().map(|v| v.exp()).collect();
    let shape = teacher.shape().to_vec();
    let p = tape.constant(Tensor::new(shape.clone(), p)?);
    let log_p = tape.constant(Tensor::new(shape, log_p)?);

    let log_q = tape.log_softmax_rows(student)?;
    let neg_log_q = tape.scale(log_q, -1.0)?;
    let diff = tape.add(log_p, neg_log_q)?;
    let weighted = tape.mul(p, diff)?;
    let total = tape.sum(weighted)?;
    tape.scale(total, 1.0 / rows as f64)
}
