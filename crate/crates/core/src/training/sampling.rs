use rand::Rng;

use crate::model::LengthConfig;

/// `max(1, ceil((1 - p) * l))`, with a small guard so products that land on an
/// integer in exact arithmetic are not pushed up by rounding noise.
pub fn shrink(l: usize, p: f64) -> usize {
    let x = (1.0 - p) * l as f64;
    ((x - 1e-9).ceil() as usize).clamp(1, l.max(1))
}

/// LengthDrop: `l_{i+1}` uniform on `[max(1, ceil((1-p) l_i)), l_i]`, sampled
/// sequentially from `l_0`.
pub fn sample_length_config<R: Rng + ?Sized>(
    l0: usize,
    num_layers: usize,
    p: f64,
    rng: &mut R,
) -> LengthConfig {
    assert!(l0 >= 1 && (0.0..1.0).contains(&p), "l0 >= 1 and 0 <= p < 1");
    let mut prev = l0;
    let lengths = (0..num_layers)
        .map(|_| {
            let lo = shrink(prev, p);
            prev = if lo == prev {
                prev
            } else {
                rng.random_range(lo..=prev)
            };
            prev
        })
        .collect();
    LengthConfig::new(lengths).expect("sampled lengths are monotone and positive")
}

/// The smallest sub-model LengthDrop can produce.
pub fn smallest_config(l0: usize, num_layers: usize, p: f64) -> LengthConfig {
    constant_ratio_config(l0, num_layers, p)
}

/// `l_{i+1} = max(1, ceil((1 - r) l_i))` for a fixed ratio `r` in `[0, 1]`.
pub fn constant_ratio_config(l0: usize, num_layers: usize, r: f64) -> LengthConfig {
    let mut prev = l0.max(1);
    let lengths = (0..num_layers)
        .map(|_| {
            prev = shrink(prev, r);
            prev
        })
        .collect();
    LengthConfig::new(lengths).expect("ceil recurrence is monotone and positive")
}

/// LayerDrop: each layer skipped independently with probability `p`.
pub fn sample_layerdrop_mask<R: Rng + ?Sized>(num_layers: usize, p: f64, rng: &mut R) -> Vec<bool> {
    assert!((0.0..1.0).contains(&p), "0 <= p < 1");
    (0..num_layers)
        .map(|_| p > 0.0 && rng.random_bool(p))
        .collect()
}
