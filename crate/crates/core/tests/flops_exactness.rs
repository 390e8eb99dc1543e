//! Closed-form FLOPs against the tape's instrumented counter.

use lat_core::flops::total_flops;
use lat_core::rng;
use lat_core::{LengthConfig, Model, ModelConfig, Tape, TaskKind};
use rand::Rng;

fn counted(m: &Model, ids: &[u32], lengths: &LengthConfig) -> u64 {
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, false);
    tape.reset_flops();
    m.forward(&mut tape, &p, ids, lengths, None).unwrap();
    tape.flops()
}

#[test]
fn closed_form_equals_counter() {
    let mut r = rng::stream(21, "flops");
    let mut pairs = 0;
    for trial in 0..8 {
        let heads = [1, 2, 4][trial % 3];
        let cfg = ModelConfig {
            num_layers: r.random_range(1..=4),
            hidden: heads * r.random_range(2..=6),
            num_heads: heads,
            ffn_dim: r.random_range(4..=24),
            vocab_size: 12,
            max_len: r.random_range(4..=20),
            task: if trial % 2 == 0 {
                TaskKind::SequenceClassification
            } else {
                TaskKind::SpanExtraction
            },
            num_classes: r.random_range(2..=4),
            layer_norm_eps: 1e-12,
        };
        let m = Model::init(cfg.clone(), trial as u64).unwrap();
        for _ in 0..4 {
            let n = r.random_range(1..=cfg.max_len);
            let mut ids: Vec<u32> = (0..n).map(|_| r.random_range(4..12)).collect();
            ids[0] = 1;
            let mut prev = cfg.max_len;
            let lengths = LengthConfig::new(
                (0..cfg.num_layers)
                    .map(|_| {
                        prev = r.random_range(1..=prev);
                        prev
                    })
                    .collect(),
            )
            .unwrap();
            let want = total_flops(&lengths, &cfg, n).unwrap().total;
            assert_eq!(counted(&m, &ids, &lengths), want, "{cfg:?} {lengths} n={n}");
            pairs += 1;
        }
    }
    assert!(pairs >= 20);
}

#[test]
fn full_pass_counts_match_breakdown_sum() {
    let cfg = ModelConfig {
        num_layers: 2,
        hidden: 8,
        num_heads: 2,
        ffn_dim: 16,
        vocab_size: 12,
        max_len: 10,
        ..ModelConfig::default()
    };
    let m = Model::init(cfg.clone(), 0).unwrap();
    let ids = [1, 5, 6, 7, 8, 9, 10, 11];
    let b = total_flops(&cfg.full_lengths(), &cfg, ids.len()).unwrap();
    let layers: u64 = b.layers.iter().map(|l| l.total()).sum();
    assert_eq!(b.embedding_flops + layers + b.head_flops, b.total);
    assert_eq!(counted(&m, &ids, &cfg.full_lengths()), b.total);
}

#[test]
fn hand_count_for_one_layer() {
    // H=4, one head, FFN 8, n=3 kept in full, two classes.
    let cfg = ModelConfig {
        num_layers: 1,
        hidden: 4,
        num_heads: 1,
        ffn_dim: 8,
        vocab_size: 12,
        max_len: 3,
        task: TaskKind::SequenceClassification,
        num_classes: 2,
        layer_norm_eps: 1e-12,
    };
    let (n, h, f) = (3u64, 4u64, 8u64);
    let projections = 4 * 2 * n * h * h + 4 * n * h;
    let scores = 2 * n * n * h + n * n + 5 * n * n;
    let context = 2 * n * n * h;
    let ffn = 2 * n * h * f + n * f + 8 * n * f + 2 * n * f * h + n * h;
    let norms = 2 * (n * h + 5 * n * h);
    let embed = n * h;
    let head = 2 * h * 2 + 2;
    let want = embed + projections + scores + context + ffn + norms + head;
    assert_eq!(
        total_flops(&cfg.full_lengths(), &cfg, 3).unwrap().total,
        want
    );
}
