use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LengthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub lengths: LengthConfig,
    pub flops: u64,
    /// `flops` over the full-length cost.
    pub relative_flops: f64,
    pub accuracy: f64,
    pub evaluated_on: String,
}

impl ParetoPoint {
    /// Cheaper-or-equal and at least as accurate, strictly better in one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.flops <= other.flops
            && self.accuracy >= other.accuracy
            && (self.flops < other.flops || self.accuracy > other.accuracy)
    }
}

/// Nondominated points sorted by ascending FLOPs, with strictly increasing
/// accuracy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub points: Vec<ParetoPoint>,
}

impl Frontier {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ParetoPoint> {
        self.points.iter()
    }

    pub fn cheapest(&self) -> Option<&ParetoPoint> {
        self.points.first()
    }

    pub fn most_accurate(&self) -> Option<&ParetoPoint> {
        self.points.last()
    }

    /// Highest-accuracy point whose FLOPs fit in `budget` (inclusive).
    pub fn select_for_budget(&self, budget: u64) -> Result<&ParetoPoint> {
        let cheapest = self
            .cheapest()
            .ok_or_else(|| Error::contract("empty frontier"))?;
        self.points
            .iter()
            .take_while(|p| p.flops <= budget)
            .last()
            .ok_or(Error::NoFeasibleConfig {
                budget,
                cheapest: cheapest.flops,
            })
    }
}

/// The nondominated subset of `points`. Equal FLOPs keep the higher
/// accuracy; exact (flops, accuracy) duplicates keep the lexicographically
/// smallest length tuple.
pub fn pareto_front(points: &[ParetoPoint]) -> Result<Frontier> {
    if points.is_empty() {
        return Err(Error::contract("pareto_front of an empty set"));
    }
    if let Some(p) = points.iter().find(|p| !p.accuracy.is_finite()) {
        return Err(Error::contract(format!(
            "non-finite accuracy for {}",
            p.lengths
        )));
    }
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.flops
            .cmp(&b.flops)
            .then(b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| a.lengths.cmp(&b.lengths))
    });
    let mut out: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        if out.last().is_none_or(|last| p.accuracy > last.accuracy) {
            out.push(p.clone());
        }
    }
    Ok(Frontier { points: out })
}

/// Area under the lower step curve `f -> max{acc : flops <= f}` over
/// `[flops_min, flops_max]`, divided by the span. Left of the cheapest point
/// the curve takes that point's accuracy.
///
/// Adding a point never lowers the curve at or right of the cheapest point,
/// so the area is monotone whenever some point costs at most `flops_min`.
pub fn auc(points: &[ParetoPoint], flops_min: u64, flops_max: u64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::contract("auc of an empty frontier"));
    }
    if flops_max <= flops_min {
        return Err(Error::contract(format!(
            "empty FLOPs axis [{flops_min}, {flops_max}]"
        )));
    }
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.flops as f64, p.accuracy))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (flops_min as f64, flops_max as f64);

    let mut level = pts[0].1;
    let mut i = 0;
    while i < pts.len() && pts[i].0 <= lo {
        level = level.max(pts[i].1);
        i += 1;
    }
    let mut x = lo;
    let mut area = 0.0;
    while i < pts.len() && pts[i].0 < hi {
        area += level * (pts[i].0 - x);
        x = pts[i].0;
        level = level.max(pts[i].1);
        i += 1;
    }
    area += level * (hi - x);
    Ok(area / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(flops: u64, accuracy: f64) -> ParetoPoint {
        ParetoPoint {
            lengths: LengthConfig::new(vec![1]).unwrap(),
            flops,
            relative_flops: 0.0,
            accuracy,
            evaluated_on: String::new(),
        }
    }

    #[test]
    fn dominated_point_removed() {
        let f = pareto_front(&[pt(10, 0.9), pt(12, 0.8)]).unwrap();
        assert_eq!(f.points, vec![pt(10, 0.9)]);
        assert!(pareto_front(&[]).is_err());
    }

    #[test]
    fn equal_flops_keep_higher_accuracy() {
        let f = pareto_front(&[pt(10, 0.5), pt(10, 0.7), pt(20, 0.9)]).unwrap();
        assert_eq!(f.points, vec![pt(10, 0.7), pt(20, 0.9)]);
    }

    #[test]
    fn budget_selection() {
        let f = pareto_front(&[pt(10, 0.5), pt(20, 0.7), pt(30, 0.9)]).unwrap();
        assert_eq!(f.select_for_budget(u64::MAX).unwrap().flops, 30);
        assert_eq!(f.select_for_budget(20).unwrap().flops, 20);
        assert!(matches!(
            f.select_for_budget(9),
            Err(Error::NoFeasibleConfig {
                budget: 9,
                cheapest: 10
            })
        ));
    }

    #[test]
    fn auc_steps() {
        assert_eq!(auc(&[pt(7, 0.6)], 0, 100).unwrap(), 0.6);
        // lower step: [0, 50) at 0.8 by extension, [50, 100) at 0.8, the
        // 1.0 point only covers the right end
        assert!((auc(&[pt(50, 0.8), pt(100, 1.0)], 0, 100).unwrap() - 0.8).abs() < 1e-12);
        assert!((auc(&[pt(0, 0.8), pt(50, 1.0)], 0, 100).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn cheaper_point_can_lower_uncovered_axis() {
        let before = auc(&[pt(50, 0.8)], 0, 100).unwrap();
        let after = auc(&[pt(50, 0.8), pt(10, 0.2)], 0, 100).unwrap();
        assert!(after < before);
    }
}
