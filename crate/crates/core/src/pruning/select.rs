use serde::{Deserialize, Serialize};

use super::schedule::floor_tol;
use crate::error::{Error, Result};

/// Filters newly selected as weak at one prune event, split into those
/// removed outright and those zeroed but kept.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub hard: Vec<usize>,
    pub soft: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.hard.len() + self.soft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Indices of `scores` sorted by ascending score, ties by lower index.
pub fn rank_ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Picks the `n_wc - already_hard_removed` weakest filters and hard-removes
/// the lowest `floor(k_new * r)` of them; the rest are soft-pruned.
pub fn select_partition(scores: &[f64], n_wc: usize, already_hard_removed: usize, r: f64) -> Result<Partition> {
    if n_wc < already_hard_removed {
        return Err(Error::InvalidSchedule(format!(
            "weak count {n_wc} fell below the {already_hard_removed} filters already removed"
        )));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidSchedule(format!("r must be in [0, 1], got {r}")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::InvalidSchedule(format!("score of filter {i} is NaN")));
    }
    let k_new = n_wc - already_hard_removed;
    if k_new > scores.len() {
        return Err(Error::OverPruning {
            requested: k_new,
            live: scores.len(),
        });
    }
    let order = rank_ascending(scores);
    let n_hard = floor_tol(k_new as f64 * r).min(k_new);
    let mut hard = order[..n_hard].to_vec();
    let mut soft = order[n_hard..k_new].to_vec();
    hard.sort_unstable();
    soft.sort_unstable();
    Ok(Partition { hard, soft })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let p = select_partition(&[5., 1., 3., 2., 4.], 2, 0, 0.5).unwrap();
        assert_eq!(p.hard, vec![1]);
        assert_eq!(p.soft, vec![3]);
    }

    #[test]
    fn removal_ratio_extremes() {
        let s = [5., 1., 3., 2., 4.];
        let all_hard = select_partition(&s, 3, 0, 1.0).unwrap();
        assert!(all_hard.soft.is_empty());
        assert_eq!(all_hard.hard, vec![1, 2, 3]);
        let all_soft = select_partition(&s, 3, 0, 0.0).unwrap();
        assert!(all_soft.hard.is_empty());
        assert_eq!(all_soft.soft, vec![1, 2, 3]);
    }

    #[test]
    fn accounts_for_removed_and_rejects_over_pruning() {
        // 6 original filters, 2 already gone: weak count 3 means one new pick.
        let p = select_partition(&[0.5, 0.1, 0.9, 0.3], 3, 2, 1.0).unwrap();
        assert_eq!(p.hard, vec![1]);
        assert!(matches!(
            select_partition(&[1.0, 2.0], 5, 0, 0.5),
            Err(Error::OverPruning { requested: 5, live: 2 })
        ));
        assert!(select_partition(&[1.0], 0, 1, 0.5).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let p = select_partition(&[1.0, 1.0, 1.0, 1.0], 2, 0, 0.5).unwrap();
        assert_eq!(p.hard, vec![0]);
        assert_eq!(p.soft, vec![1]);
    }

    proptest! {
        #[test]
        fn partition_invariants(
            scores in proptest::collection::vec(0.0f64..100.0, 1..40),
            frac in 0.0f64..=1.0,
            r in 0.0f64..=1.0,
            c in 1e-3f64..1e3,
        ) {
            let k = ((scores.len() as f64) * frac) as usize;
            let p = select_partition(&scores, k, 0, r).unwrap();
            prop_assert_eq!(p.len(), k);
            prop_assert!(p.hard.iter().all(|h| !p.soft.contains(h)));
            prop_assert_eq!(p.hard.len(), floor_tol(k as f64 * r));
            // every weak filter scores no higher than every survivor
            let weak: Vec<usize> = p.hard.iter().chain(&p.soft).copied().collect();
            let max_weak = weak.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
            for i in (0..scores.len()).filter(|i| !weak.contains(i)) {
                prop_assert!(scores[i] >= max_weak);
            }
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            prop_assert_eq!(select_partition(&scaled, k, 0, r).unwrap(), p);
        }
    }
}
