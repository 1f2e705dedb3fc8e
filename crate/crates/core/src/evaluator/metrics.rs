//! Pure metric kernels. Inputs are plain ids, counts and vectors so each
//! kernel can be checked against a brute-force reference.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::cosine;
use crate::error::MetricError;

pub const METRIC_NAMES: [&str; 5] = ["reusability", "fitness", "coverage", "parsimony", "consistency"];
pub const EQUAL_WEIGHTS: [f64; 5] = [0.2; 5];

/// Share of codebook codes assigned to at least one test chunk. Assigned ids
/// outside `codebook` are ignored.
pub fn reusability<'a>(codebook: &BTreeSet<String>, assigned: impl IntoIterator<Item = &'a str>) -> Result<f64, MetricError> {
    if codebook.is_empty() {
        return Err(MetricError::EmptyCodebook);
    }
    let used: BTreeSet<&str> = assigned.into_iter().filter(|id| codebook.contains(*id)).collect();
    Ok(used.len() as f64 / codebook.len() as f64)
}

/// Maps a 1..=10 judge score onto [0, 1].
pub fn rescale_judge(score: u8) -> f64 {
    (f64::from(score.clamp(1, 10)) - 1.0) / 9.0
}

/// One minus the mean pairwise cosine over all unordered pairs, clamped to
/// [0, 1]. A single code scores 1.0.
pub fn parsimony(vectors: &[Vec<f64>]) -> Result<f64, MetricError> {
    match vectors.len() {
        0 => return Err(MetricError::EmptyCodebook),
        1 => {
            tracing::info!("parsimony of a single-code codebook is 1.0 by convention");
            return Ok(1.0);
        }
        _ => {}
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            sum += cosine(&vectors[i], &vectors[j])?;
            pairs += 1;
        }
    }
    let raw = 1.0 - sum / pairs as f64;
    let clamped = raw.clamp(0.0, 1.0);
    if clamped != raw {
        tracing::info!(raw, "parsimony clamped to [0, 1]");
    }
    Ok(clamped)
}

/// Base-2 Jensen-Shannon divergence between the distributions obtained by
/// normalising two count maps over the union of their keys.
///
/// Terms with support on one side only contribute exactly their mass, summed
/// in count space, so disjoint supports give exactly 1 and equal
/// distributions give exactly 0.
pub fn jsd(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> Result<f64, MetricError> {
    let tp: f64 = p.values().sum();
    let tq: f64 = q.values().sum();
    if p.values().chain(q.values()).any(|c| *c < 0.0 || !c.is_finite()) || tp <= 0.0 || tq <= 0.0 {
        return Err(MetricError::EmptyDistribution);
    }
    let keys: BTreeSet<&String> = p.keys().chain(q.keys()).collect();
    let (mut only_p, mut only_q, mut shared) = (0.0, 0.0, 0.0);
    for k in keys {
        let cp = p.get(k).copied().unwrap_or(0.0);
        let cq = q.get(k).copied().unwrap_or(0.0);
        match (cp > 0.0, cq > 0.0) {
            (true, false) => only_p += cp,
            (false, true) => only_q += cq,
            (true, true) => {
                let (x, y) = (cp / tp, cq / tq);
                let m = 0.5 * (x + y);
                shared += 0.5 * x * (x / m).log2() + 0.5 * y * (y / m).log2();
            }
            (false, false) => {}
        }
    }
    Ok((0.5 * (only_p / tp) + 0.5 * (only_q / tq) + shared).clamp(0.0, 1.0))
}

/// `1 - JSD(P, Q)`.
pub fn consistency(train: &BTreeMap<String, f64>, test: &BTreeMap<String, f64>) -> Result<f64, MetricError> {
    Ok(1.0 - jsd(train, test)?)
}

/// Weighted sum of the five metrics. Weights must be non-negative and sum to 1.
pub fn composite(values: [f64; 5], weights: [f64; 5]) -> Result<f64, MetricError> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(MetricError::WeightSumInvalid(sum));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub reusability: f64,
    pub fitness: f64,
    pub coverage: f64,
    pub parsimony: f64,
    pub consistency: f64,
    pub composite: f64,
    pub judge_sample_size: usize,
}

impl MetricReport {
    pub fn from_values(values: [f64; 5], weights: [f64; 5], judge_sample_size: usize) -> Result<Self, MetricError> {
        let [reusability, fitness, coverage, parsimony, consistency] = values;
        Ok(Self { reusability, fitness, coverage, parsimony, consistency, composite: composite(values, weights)?, judge_sample_size })
    }

    /// Metric values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 5] {
        [self.reusability, self.fitness, self.coverage, self.parsimony, self.consistency]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(items: &[(&str, f64)]) -> BTreeMap<String, f64> {
        items.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn ids(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn reusability_arithmetic() {
        let cb = ids(10);
        assert_eq!(reusability(&cb, ["c0", "c1", "c2", "c1"]).unwrap(), 0.3);
        assert_eq!(reusability(&cb, cb.iter().map(String::as_str)).unwrap(), 1.0);
        assert_eq!(reusability(&cb, []).unwrap(), 0.0);
        assert_eq!(reusability(&cb, ["zzz"]).unwrap(), 0.0);
        assert_eq!(reusability(&BTreeSet::new(), ["c0"]), Err(MetricError::EmptyCodebook));
    }

    #[test]
    fn judge_rescaling() {
        assert_eq!(rescale_judge(1), 0.0);
        assert_eq!(rescale_judge(10), 1.0);
        let scores = [6u8, 7, 8, 7, 6];
        let mean = scores.iter().map(|s| rescale_judge(*s)).sum::<f64>() / 5.0;
        // (5 + 6 + 7 + 6 + 5) / 9 / 5 = 29 / 45
        assert!((mean - 29.0 / 45.0).abs() < 1e-12);
        assert!((mean - 0.6444).abs() < 1e-4);
    }

    #[test]
    fn parsimony_fixtures() {
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        assert_eq!(parsimony(&[e1.clone(), e1.clone()]).unwrap(), 0.0);
        assert_eq!(parsimony(&[e1.clone(), e2.clone()]).unwrap(), 1.0);
        // cosines {1, 0, 0}
        let p = parsimony(&[e1.clone(), e1.clone(), e2.clone()]).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(parsimony(std::slice::from_ref(&e1)).unwrap(), 1.0);
        assert_eq!(parsimony(&[]), Err(MetricError::EmptyCodebook));
        // Negative mean cosine clamps at 1.
        assert_eq!(parsimony(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap(), 1.0);
    }

    #[test]
    fn consistency_fixtures() {
        let p = counts(&[("a", 3.0), ("b", 1.0)]);
        assert_eq!(consistency(&p, &p).unwrap(), 1.0);
        assert_eq!(consistency(&counts(&[("a", 1.0), ("b", 2.0), ("c", 4.0)]), &counts(&[("d", 5.0), ("e", 1.0)])).unwrap(), 0.0);
        let c = consistency(&counts(&[("a", 1.0), ("b", 0.0)]), &counts(&[("a", 1.0), ("b", 1.0)])).unwrap();
        // M = (3/4, 1/4): KL(P||M) = log2(4/3), KL(Q||M) = (log2(2/3) + 1) / 2
        let oracle = 1.0 - 0.5 * ((4.0f64 / 3.0).log2() + 0.5 * ((2.0f64 / 3.0).log2() + 1.0));
        assert!((c - oracle).abs() < 1e-12);
        assert!((c - 0.68872).abs() < 1e-5);
        assert_eq!(consistency(&counts(&[]), &p), Err(MetricError::EmptyDistribution));
        assert_eq!(consistency(&p, &counts(&[("a", 0.0)])), Err(MetricError::EmptyDistribution));
    }

    #[test]
    fn composite_rules() {
        assert_eq!(composite([0.0; 5], EQUAL_WEIGHTS).unwrap(), 0.0);
        let v = composite([0.119, 0.702, 0.600, 0.569, 0.362], EQUAL_WEIGHTS).unwrap();
        assert!((v - 0.4704).abs() < 1e-9);
        assert!(matches!(composite([0.5; 5], [0.3; 5]), Err(MetricError::WeightSumInvalid(_))));
        assert!(matches!(composite([0.5; 5], [1.2, -0.2, 0.0, 0.0, 0.0]), Err(MetricError::WeightSumInvalid(_))));
    }

    fn dist() -> impl Strategy<Value = BTreeMap<String, f64>> {
        prop::collection::btree_map("[a-f]", 0u32..6, 1..6)
            .prop_filter("non-empty mass", |m| m.values().any(|v| *v > 0))
            .prop_map(|m| m.into_iter().map(|(k, v)| (k, f64::from(v))).collect())
    }

    proptest! {
        #[test]
        fn consistency_symmetric_and_bounded(p in dist(), q in dist()) {
            let a = consistency(&p, &q).unwrap();
            let b = consistency(&q, &p).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn reusability_monotone(used in prop::collection::vec(0usize..12, 0..20), extra in 0usize..12) {
            let cb = ids(10);
            let names: Vec<String> = used.iter().map(|i| format!("c{i}")).collect();
            let before = reusability(&cb, names.iter().map(String::as_str)).unwrap();
            let extra = format!("c{extra}");
            let after = reusability(&cb, names.iter().map(String::as_str).chain([extra.as_str()])).unwrap();
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }

        #[test]
        fn composite_within_min_max(v in prop::array::uniform5(0.0f64..=1.0)) {
            let c = composite(v, EQUAL_WEIGHTS).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
        }

        #[test]
        fn identical_representations_have_zero_parsimony(x in prop::collection::vec(-1.0f64..1.0, 4), n in 2usize..6) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
            let vs = vec![x; n];
            prop_assert!(parsimony(&vs).unwrap().abs() < 1e-12);
        }
    }
}
