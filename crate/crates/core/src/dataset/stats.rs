//! Composition statistics and ratio-targeted subsampling.

use super::{BehaviorDataset, DatasetError};
use crate::mbti::Dimension;
use crate::util::stable_hash;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};

/// Per-dimension instruction counts and ratios. Each instruction counts
/// once, not per record. Ratios are `None` for an empty dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositionStats {
    pub counts: BTreeMap<Dimension, usize>,
    pub ratios: Option<BTreeMap<Dimension, f64>>,
}

impl CompositionStats {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Counts distinct instructions per dimension.
pub fn composition_stats(dataset: &BehaviorDataset) -> CompositionStats {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut counts: BTreeMap<Dimension, usize> = Dimension::ALL.iter().map(|&d| (d, 0)).collect();
    for record in dataset.iter() {
        if seen.insert(&record.id) {
            *counts.get_mut(&record.dimension).expect("all dimensions") += 1;
        }
    }
    let total: usize = counts.values().sum();
    let ratios = if total == 0 {
        None
    } else {
        Some(
            counts
                .iter()
                .map(|(&d, &c)| (d, c as f64 / total as f64))
                .collect(),
        )
    };
    CompositionStats { counts, ratios }
}

/// Subsamples the dataset towards target per-dimension ratios.
///
/// The result uses the largest total for which every dimension's demand can
/// be met without upsampling; realized ratios then deviate from the target
/// by at most `1/total`. Instructions are sampled as units so response
/// pairs stay together, and selection is a pure function of the seed.
pub fn rebalance(
    dataset: &BehaviorDataset,
    targets: &BTreeMap<Dimension, f64>,
    seed: u64,
) -> Result<BehaviorDataset, DatasetError> {
    let sum: f64 = targets.values().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidRatios {
            reason: format!("ratios sum to {sum}, expected 1"),
        });
    }
    if targets.values().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(DatasetError::InvalidRatios {
            reason: "each ratio must lie in [0, 1]".into(),
        });
    }
    let ratio = |d: Dimension| targets.get(&d).copied().unwrap_or(0.0);

    // Distinct instructions per dimension, in first-occurrence order.
    let mut per_dim: BTreeMap<Dimension, Vec<String>> =
        Dimension::ALL.iter().map(|&d| (d, Vec::new())).collect();
    let mut seen = HashSet::new();
    for r in dataset.iter() {
        if seen.insert(r.id.clone()) {
            per_dim.get_mut(&r.dimension).unwrap().push(r.id.clone());
        }
    }
    let capacity = |d: Dimension| per_dim[&d].len();

    // Largest feasible total under the targets.
    let mut total = usize::MAX;
    for d in Dimension::ALL {
        let r = ratio(d);
        if r > 0.0 {
            total = total.min((capacity(d) as f64 / r).floor() as usize);
        }
    }
    if total == 0 || total == usize::MAX {
        return Err(DatasetError::UnachievableRatios {
            reason: "no dimension can supply the requested share".into(),
        });
    }

    // Largest-remainder apportionment, shrinking the total if rounding ever
    // oversubscribes a dimension.
    let demands = loop {
        match apportion(total, &ratio, &capacity) {
            Some(d) => break d,
            None => {
                total -= 1;
                if total == 0 {
                    return Err(DatasetError::UnachievableRatios {
                        reason: "rounding cannot satisfy the targets".into(),
                    });
                }
            }
        }
    };

    // Deterministic per-dimension choice: order by seeded hash of the id.
    let mut keep: HashSet<String> = HashSet::new();
    for d in Dimension::ALL {
        let mut ids = per_dim[&d].clone();
        ids.sort_by_key(|id| stable_hash(seed, &["rebalance", id]));
        for id in ids.into_iter().take(demands[&d]) {
            keep.insert(id);
        }
    }

    let mut out = BehaviorDataset::new();
    for r in dataset.iter() {
        if keep.contains(&r.id) {
            out.push(r.clone());
        }
    }
    Ok(out)
}

fn apportion(
    total: usize,
    ratio: &impl Fn(Dimension) -> f64,
    capacity: &impl Fn(Dimension) -> usize,
) -> Option<BTreeMap<Dimension, usize>> {
    let mut demands: BTreeMap<Dimension, usize> = BTreeMap::new();
    let mut remainders: Vec<(Dimension, f64)> = Vec::new();
    let mut assigned = 0;
    for d in Dimension::ALL {
        let exact = ratio(d) * total as f64;
        let floor = exact.floor() as usize;
        demands.insert(d, floor);
        assigned += floor;
        remainders.push((d, exact - floor as f64));
    }
    // Stable tie-break: canonical dimension order within equal remainders.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut leftover = total - assigned;
    for (d, _) in remainders {
        if leftover == 0 {
            break;
        }
        if demands[&d] < capacity(d) && ratio(d) > 0.0 {
            *demands.get_mut(&d).unwrap() += 1;
            leftover -= 1;
        }
    }
    if leftover > 0 {
        return None;
    }
    for d in Dimension::ALL {
        if demands[&d] > capacity(d) {
            return None;
        }
    }
    Some(demands)
}
