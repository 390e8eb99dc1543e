//! Synthetic generators, JSONL ingestion and splits.

use std::collections::HashSet;

use lat_core::data::{
    contains_trigger, gen_sequence_task, gen_span_task, parse_jsonl, span_start_distribution,
    to_jsonl, Batch, Label, Splits, Vocab, CLS, UNK,
};
use lat_core::eval::{best_span, MAX_ANSWER_LEN};
use lat_core::training::{constant_ratio_config, TrainConfig, Trainer};
use lat_core::{Error, Execution, Model, ModelConfig, Tape, TaskKind};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn generators_are_pure() {
    assert_eq!(
        gen_sequence_task(3, 500, (4, 20), 16).unwrap(),
        gen_sequence_task(3, 500, (4, 20), 16).unwrap()
    );
    assert_eq!(
        gen_span_task(3, 500, (4, 20), 16).unwrap(),
        gen_span_task(3, 500, (4, 20), 16).unwrap()
    );
    assert_ne!(
        gen_sequence_task(3, 500, (4, 20), 16).unwrap(),
        gen_sequence_task(4, 500, (4, 20), 16).unwrap()
    );
    assert!(gen_sequence_task(0, 10, (4, 20), 7).is_err());
}

#[test]
fn sequence_labels_match_a_rescan_and_are_balanced() {
    let ds = gen_sequence_task(5, 10_000, (3, 40), 32).unwrap();
    let mut positives = 0;
    for e in &ds.examples {
        assert_eq!(e.token_ids[0], CLS);
        assert!(e.token_ids.iter().all(|&t| t < 32));
        let scanned = e.token_ids.windows(2).any(|w| w == [4, 5]);
        assert_eq!(scanned, contains_trigger(&e.token_ids));
        assert_eq!(e.label, Label::Class(usize::from(scanned)));
        positives += usize::from(scanned);
    }
    let frac = positives as f64 / ds.len() as f64;
    assert!((frac - 0.5).abs() <= 0.02, "positive fraction {frac}");
}

#[test]
fn span_labels_are_in_range_and_start_positions_follow_the_generator() {
    let range = (8, 24);
    let ds = gen_span_task(6, 10_000, range, 32).unwrap();
    let mut counts = vec![0usize; range.1];
    for e in &ds.examples {
        let Label::Span { start, end } = e.label else {
            panic!("span label expected")
        };
        assert!(start <= end && end < e.len());
        assert_eq!(e.token_ids[start - 1], lat_core::data::MARKER);
        counts[start] += 1;
    }
    let expected = span_start_distribution(range);
    let n = ds.len() as f64;
    let cells: Vec<(f64, f64)> = counts
        .iter()
        .zip(&expected)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| (o as f64, p * n))
        .collect();
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let p_value = 1.0 - ChiSquared::new((cells.len() - 1) as f64).unwrap().cdf(stat);
    assert!(
        p_value > 0.01,
        "chi-square {stat} on {} cells, p = {p_value}",
        cells.len()
    );
    // Every position a span can start at is actually used.
    assert!(cells.iter().all(|(o, _)| *o > 0.0));
}

#[test]
fn jsonl_round_trip() {
    let vocab = Vocab::new(32);
    for ds in [
        gen_sequence_task(7, 200, (3, 30), 32).unwrap(),
        gen_span_task(7, 200, (3, 30), 32).unwrap(),
    ] {
        let text = to_jsonl(&ds, vocab).unwrap();
        let back = parse_jsonl(&text, "mem", ds.task, vocab, 64).unwrap();
        assert_eq!(back, ds);
    }
}

#[test]
fn malformed_line_is_named() {
    let text =
        "{\"text\": \"t4 t5\", \"label\": 1}\n{\"text\": \"t6\", \"label\": 0}\n{\"text\": 3}\n";
    match parse_jsonl(
        text,
        "d.jsonl",
        TaskKind::SequenceClassification,
        Vocab::new(16),
        8,
    ) {
        Err(e @ Error::Parse { line: 3, .. }) => assert!(e.to_string().starts_with("d.jsonl:3:")),
        other => panic!("expected a line-3 parse error, got {other:?}"),
    }
    assert!(parse_jsonl(
        "\n\n",
        "e",
        TaskKind::SequenceClassification,
        Vocab::new(16),
        8
    )
    .is_err());
}

#[test]
fn truncation_keeps_the_classification_token_and_maps_unknowns() {
    let text = "{\"text\": \"t4 t5 t6 t7 t8 t9 zebra\", \"label\": 0}\n{\"text\": \"zebra\", \"label\": 1}\n";
    let ds = parse_jsonl(
        text,
        "t",
        TaskKind::SequenceClassification,
        Vocab::new(16),
        4,
    )
    .unwrap();
    assert_eq!(ds.examples[0].token_ids, vec![CLS, 4, 5, 6]);
    assert_eq!(ds.examples[1].token_ids, vec![CLS, UNK]);
}

#[test]
fn splits_are_disjoint_and_stable() {
    let ds = gen_sequence_task(8, 2000, (4, 16), 16).unwrap();
    let a = Splits::from_dataset(ds.clone(), 0.2, 0.1, 1).unwrap();
    let b = Splits::from_dataset(ds, 0.2, 0.1, 1).unwrap();
    assert_eq!(a, b);
    let ids = |d: &lat_core::data::Dataset| d.examples.iter().cloned().collect::<HashSet<_>>();
    let (tr, va, te) = (ids(&a.train), ids(&a.validation), ids(&a.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!(tr.len(), a.train.len());
}

#[test]
fn batch_masks_mark_real_tokens() {
    let ds = gen_span_task(9, 40, (3, 12), 16).unwrap();
    let b = Batch::from_examples(&ds.examples);
    for (i, e) in ds.examples.iter().enumerate() {
        assert_eq!(b.mask[i].iter().filter(|&&m| m).count(), e.len());
        assert_eq!(b.real_tokens(i), e.token_ids.as_slice());
        assert_eq!(b.tokens[i].len(), b.max_len);
    }
}

#[test]
fn span_answers_need_restored_positions() {
    let cfg = ModelConfig {
        num_layers: 2,
        hidden: 32,
        num_heads: 4,
        ffn_dim: 64,
        vocab_size: 24,
        max_len: 16,
        task: TaskKind::SpanExtraction,
        num_classes: 2,
        layer_norm_eps: 1e-12,
    };
    let ds = gen_span_task(10, 3000, (8, 16), 24).unwrap();
    let splits = Splits::from_dataset(ds, 0.1, 0.0, 10).unwrap();
    let train = TrainConfig {
        learning_rate: 2e-3,
        supervised_epochs: 6,
        lengthdrop_epochs: 2,
        p_lengthdrop: 0.5,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(
        Model::init(cfg.clone(), 10).unwrap(),
        train,
        Execution::Parallel,
    )
    .unwrap();
    let empty = lat_core::data::Dataset {
        task: TaskKind::SpanExtraction,
        examples: Vec::new(),
    };
    t.run(&splits.train, &empty, &mut |_, _| Ok(())).unwrap();
    let model = t.into_model();

    let lengths = constant_ratio_config(16, 2, 0.5);
    let (mut with_restore, mut without) = (0usize, 0usize);
    for e in &splits.validation.examples {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, false);
        let out = model
            .forward(&mut tape, &p, &e.token_ids, &lengths, None)
            .unwrap();
        let v = tape.value(out.logits);
        let gold = match e.label {
            Label::Span { start, end } => (start, end),
            _ => unreachable!(),
        };
        with_restore += usize::from(best_span(v.row(0), v.row(1), MAX_ANSWER_LEN) == gold);
        // Ablation: restored positions get no logits and cannot be predicted.
        let kept = out.trace.final_kept();
        let mask = |row: &[f64]| -> Vec<f64> {
            row.iter()
                .enumerate()
                .map(|(i, &x)| {
                    if kept.contains(&i) {
                        x
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        };
        without += usize::from(best_span(&mask(v.row(0)), &mask(v.row(1)), MAX_ANSWER_LEN) == gold);
    }
    let n = splits.validation.len() as f64;
    let (em, em_ablated) = (with_restore as f64 / n, without as f64 / n);
    assert!(
        em - em_ablated > 0.2,
        "exact match {em:.3} with restore, {em_ablated:.3} without"
    );
}
