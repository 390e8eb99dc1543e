//! Reverse-mode gradients against central finite differences.

use lat_core::data::Label;
use lat_core::rng;
use lat_core::training::{distillation_loss, StepPlan, SubModel};
use lat_core::{LengthConfig, Model, ModelConfig, Tape, TaskKind, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "grad-test");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Checks `d/dx sum(w * f(x...))` for every input of a tape expression.
fn check_op(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let w = random(tape.shape(out), 99);
        let w = tape.constant(w);
        let m = tape.mul(out, w).unwrap();
        let s = tape.sum(m).unwrap();
        tape.value(s).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let w = random(tape.shape(out), 99);
    let w = tape.constant(w);
    let m = tape.mul(out, w).unwrap();
    let s = tape.sum(m).unwrap();
    tape.backward(s).unwrap();

    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).expect("input reached").to_vec();
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let tol = 1e-6 * (1.0 + numeric.abs());
            assert!(
                (analytic[i] - numeric).abs() < tol,
                "input {k} element {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }
}

#[test]
fn matmul_family() {
    check_op(vec![random(&[3, 4], 1), random(&[4, 2], 2)], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    });
    check_op(vec![random(&[3, 4], 3), random(&[5, 4], 4)], |t, v| {
        t.matmul_nt(v[0], v[1]).unwrap()
    });
}

#[test]
fn elementwise_family() {
    check_op(vec![random(&[2, 3], 5), random(&[2, 3], 6)], |t, v| {
        t.add(v[0], v[1]).unwrap()
    });
    check_op(vec![random(&[2, 3], 7), random(&[2, 3], 8)], |t, v| {
        t.mul(v[0], v[1]).unwrap()
    });
    check_op(vec![random(&[2, 3], 9), random(&[3], 10)], |t, v| {
        t.add_row(v[0], v[1]).unwrap()
    });
    check_op(vec![random(&[2, 3], 11)], |t, v| {
        t.scale(v[0], -0.7).unwrap()
    });
    check_op(vec![random(&[2, 3], 12)], |t, v| {
        t.add_scalar(v[0], 2.5).unwrap()
    });
    check_op(vec![random(&[2, 5], 13)], |t, v| t.gelu(v[0]).unwrap());
}

#[test]
fn normalizers() {
    check_op(vec![random(&[3, 4], 14)], |t, v| {
        t.softmax_rows(v[0]).unwrap()
    });
    check_op(vec![random(&[3, 4], 15)], |t, v| {
        t.log_softmax_rows(v[0]).unwrap()
    });
    check_op(
        vec![random(&[3, 6], 16), random(&[6], 17), random(&[6], 18)],
        |t, v| t.layer_norm(v[0], v[1], v[2], 1e-12).unwrap(),
    );
}

#[test]
fn indexing_ops() {
    check_op(vec![random(&[5, 3], 19)], |t, v| {
        t.embedding(v[0], &[4, 0, 4, 2]).unwrap()
    });
    check_op(vec![random(&[5, 3], 20)], |t, v| {
        t.gather_rows(v[0], &[3, 1, 1]).unwrap()
    });
    check_op(vec![random(&[4, 6], 21)], |t, v| {
        t.slice_cols(v[0], 2, 3).unwrap()
    });
    check_op(vec![random(&[2, 3], 22), random(&[2, 2], 23)], |t, v| {
        t.concat_cols(&[v[0], v[1]]).unwrap()
    });
    check_op(vec![random(&[2, 3], 24), random(&[3, 3], 25)], |t, v| {
        t.assemble_rows(&[(v[1], 2), (v[0], 0), (v[1], 0), (v[0], 1)])
            .unwrap()
    });
}

#[test]
fn losses() {
    check_op(vec![random(&[2, 5], 26)], |t, v| {
        t.cross_entropy(v[0], &[3, 0]).unwrap()
    });
    let teacher = random(&[2, 5], 27);
    check_op(vec![random(&[2, 5], 28)], move |t, v| {
        distillation_loss(t, v[0], &teacher).unwrap()
    });
}

fn model(cfg: ModelConfig, seed: u64) -> Model {
    let mut m = Model::init(cfg, seed).unwrap();
    // Larger weights than the default init so attention is far from uniform.
    let mut r = rng::stream(seed, "inflate");
    for i in 0..m.params().len() {
        for w in m.params_mut().tensor_mut(i).data_mut() {
            *w += 0.3 * r.random_range(-1.0..1.0);
        }
    }
    m
}

fn small(task: TaskKind) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden: 8,
        num_heads: 2,
        ffn_dim: 12,
        vocab_size: 10,
        max_len: 7,
        task,
        num_classes: 3,
        layer_norm_eps: 1e-12,
    }
}

/// Loss of one example under `plan`, built exactly as a training step does.
/// The teacher output is a constant to the students, so finite differences
/// must hold it at `fixed_teacher` rather than recompute it.
fn plan_loss(
    model: &Model,
    ids: &[u32],
    label: &Label,
    plan: &StepPlan,
    fixed_teacher: Option<&Tensor>,
) -> (f64, Vec<Vec<f64>>, Tensor) {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, true);
    let teacher = model.forward(&mut tape, &p, ids, &plan.full, None).unwrap();
    let mut total = model.task_loss(&mut tape, &teacher, label).unwrap();
    let t = fixed_teacher
        .cloned()
        .unwrap_or_else(|| tape.value(teacher.logits).clone());
    for sub in plan.sandwiches.iter().chain(plan.smallest.as_ref()) {
        let out = model
            .forward(&mut tape, &p, ids, &sub.lengths, Some(&sub.layerdrop))
            .unwrap();
        let kl = distillation_loss(&mut tape, out.logits, &t).unwrap();
        total = tape.add(total, kl).unwrap();
    }
    tape.backward(total).unwrap();
    (tape.value(total).item(), p.grads(&tape), t)
}

fn lengthdrop_plan() -> StepPlan {
    StepPlan {
        full: LengthConfig::full(7, 2),
        sandwiches: vec![SubModel {
            lengths: LengthConfig::new(vec![5, 3]).unwrap(),
            layerdrop: vec![false, false],
        }],
        smallest: Some(SubModel {
            lengths: LengthConfig::new(vec![4, 2]).unwrap(),
            layerdrop: vec![true, false],
        }),
    }
}

fn check_sampled(task: TaskKind, label: Label) {
    let m = model(small(task), 3);
    let ids = [1u32, 6, 4, 9, 5, 7, 2];
    let plan = lengthdrop_plan();
    let (_, grads, teacher) = plan_loss(&m, &ids, &label, &plan, None);
    let loss = |m: &Model| plan_loss(m, &ids, &label, &plan, Some(&teacher)).0;
    let mut r = rng::stream(4, "pick");
    let h = 1e-6;
    for i in 0..m.params().len() {
        for _ in 0..3 {
            let k = r.random_range(0..m.params().tensor(i).numel());
            let mut plus = m.clone();
            plus.params_mut().tensor_mut(i).data_mut()[k] += h;
            let mut minus = m.clone();
            minus.params_mut().tensor_mut(i).data_mut()[k] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let tol = 1e-5 * (1.0 + numeric.abs());
            assert!(
                (grads[i][k] - numeric).abs() < tol,
                "{}[{k}]: analytic {} numeric {numeric}",
                m.params().name(i),
                grads[i][k]
            );
        }
    }
}

#[test]
fn full_model_sequence_task() {
    check_sampled(TaskKind::SequenceClassification, Label::Class(2));
}

#[test]
fn full_model_span_task() {
    check_sampled(TaskKind::SpanExtraction, Label::Span { start: 3, end: 4 });
}

/// Relative error `|a - n| / max(|a|, |n|)` for every parameter element.
/// Pairs where both sides are below `floor` are compared absolutely instead.
fn worst_relative_error(task: TaskKind, label: Label) -> (f64, String) {
    let cfg = ModelConfig {
        hidden: 16,
        ffn_dim: 32,
        ..small(task)
    };
    let mut m = model(cfg, 5);
    let ids = [1u32, 6, 4, 9, 5, 7, 2];
    let plan = lengthdrop_plan();
    let (_, grads, teacher) = plan_loss(&m, &ids, &label, &plan, None);
    let (h, floor) = (1e-5, 1e-6);
    let mut worst = (0.0, String::new());
    for i in 0..m.params().len() {
        for k in 0..m.params().tensor(i).numel() {
            let x = m.params().tensor(i).data()[k];
            m.params_mut().tensor_mut(i).data_mut()[k] = x + h;
            let up = plan_loss(&m, &ids, &label, &plan, Some(&teacher)).0;
            m.params_mut().tensor_mut(i).data_mut()[k] = x - h;
            let down = plan_loss(&m, &ids, &label, &plan, Some(&teacher)).0;
            m.params_mut().tensor_mut(i).data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let scale = grads[i][k].abs().max(numeric.abs());
            let err = if scale < floor {
                (grads[i][k] - numeric).abs() / floor
            } else {
                (grads[i][k] - numeric).abs() / scale
            };
            if err > worst.0 {
                worst = (err, format!("{}[{k}]", m.params().name(i)));
            }
        }
    }
    worst
}

#[test]
fn every_element_sequence_task() {
    let (err, at) = worst_relative_error(TaskKind::SequenceClassification, Label::Class(1));
    assert!(err < 1e-4, "relative error {err:e} at {at}");
}

#[test]
fn every_element_span_task() {
    let (err, at) =
        worst_relative_error(TaskKind::SpanExtraction, Label::Span { start: 2, end: 4 });
    assert!(err < 1e-4, "relative error {err:e} at {at}");
}
