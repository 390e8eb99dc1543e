use rand::Rng;

use crate::error::{Error, Result};
use crate::model::LengthConfig;
use crate::training::constant_ratio_config;

/// Constant-ratio configurations whose costs are spread evenly between the
/// ratio-`p` config and the full config. Each target cost picks its ratio in
/// `[0, p]` by bisection. Collisions (common at small `l0`) are dropped, so
/// fewer than `k` configs may come back.
pub fn init_population(
    l0: usize,
    num_layers: usize,
    k: usize,
    p: f64,
    flops: &dyn Fn(&LengthConfig) -> u64,
) -> Result<Vec<LengthConfig>> {
    if k < 2 {
        return Err(Error::contract(format!(
            "initial population needs k >= 2, got {k}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::contract(format!(
            "smallest ratio must be in [0, 1], got {p}"
        )));
    }
    let cost = |r: f64| flops(&constant_ratio_config(l0, num_layers, r)) as f64;
    let (full, small) = (cost(0.0), cost(p));
    let mut out: Vec<LengthConfig> = Vec::with_capacity(k);
    for i in 0..k {
        let target = full - (full - small) * i as f64 / (k - 1) as f64;
        let (mut lo, mut hi) = (0.0, p);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cost(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let r = if (cost(lo) - target).abs() <= (cost(hi) - target).abs() {
            lo
        } else {
            hi
        };
        let r = match i {
            0 => 0.0,
            _ if i == k - 1 => p,
            _ => r,
        };
        let c = constant_ratio_config(l0, num_layers, r);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Sweeps the layers; with probability `p_m` layer `i` is resampled
/// uniformly between `l'_{i-1}` and `l_{i+1}` (1 at the last layer),
/// otherwise it becomes `min(l_i, l'_{i-1})`.
pub fn mutate<R: Rng + ?Sized>(
    config: &LengthConfig,
    l0: usize,
    p_m: f64,
    rng: &mut R,
) -> LengthConfig {
    let l = config.lengths();
    let mut prev = l0;
    let mut out = Vec::with_capacity(l.len());
    for i in 0..l.len() {
        let v = if p_m > 0.0 && rng.random_bool(p_m.min(1.0)) {
            let other = l.get(i + 1).copied().unwrap_or(1);
            let (a, b) = (other.min(prev), other.max(prev));
            rng.random_range(a..=b).min(prev)
        } else {
            l[i].min(prev)
        };
        out.push(v);
        prev = v;
    }
    LengthConfig::new(out).expect("mutation keeps lengths monotone and positive")
}

/// Layer-wise mean, rounded half up.
pub fn crossover(a: &LengthConfig, b: &LengthConfig) -> Result<LengthConfig> {
    if a.num_layers() != b.num_layers() {
        return Err(Error::contract(format!(
            "crossover of {} and {} layers",
            a.num_layers(),
            b.num_layers()
        )));
    }
    let out: Vec<usize> = a
        .lengths()
        .iter()
        .zip(b.lengths())
        .map(|(x, y)| (x + y).div_ceil(2))
        .collect();
    let c = LengthConfig::new(out)?;
    debug_assert!(c.lengths().windows(2).all(|w| w[0] >= w[1]));
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn lc(v: &[usize]) -> LengthConfig {
        LengthConfig::new(v.to_vec()).unwrap()
    }

    #[test]
    fn crossover_examples() {
        assert_eq!(
            crossover(&lc(&[10, 8, 6]), &lc(&[6, 4, 2])).unwrap(),
            lc(&[8, 6, 4])
        );
        assert_eq!(crossover(&lc(&[9, 4]), &lc(&[6, 5])).unwrap(), lc(&[8, 5]));
        assert_eq!(crossover(&lc(&[5, 3]), &lc(&[5, 3])).unwrap(), lc(&[5, 3]));
        assert!(crossover(&lc(&[5]), &lc(&[5, 3])).is_err());
    }

    #[test]
    fn zero_probability_is_identity() {
        let mut r = rng::stream(1, "m");
        let c = lc(&[8, 6, 4]);
        assert_eq!(mutate(&c, 10, 0.0, &mut r), c);
    }

    #[test]
    fn certain_mutation_respects_bounds() {
        let mut r = rng::stream(2, "m");
        let c = lc(&[8, 6, 4]);
        for _ in 0..500 {
            let m = mutate(&c, 10, 1.0, &mut r);
            let l = m.lengths();
            assert!(l[0] <= 10 && l[0] >= 6);
            assert!(l[1] <= l[0] && l[1] >= 4.min(l[0]));
            assert!(l[2] >= 1 && l[2] <= l[1]);
        }
    }
}
