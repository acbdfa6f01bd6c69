//! Distance metrics and the attack success rate.
//!
//! The panel quantifies how far an adversarial sequence moved from its
//! original along several views: aggregated feature space (L1, L2, earth
//! mover's distance), control flow (edit distance with transpositions,
//! longest common prefix) and the learned latent space (Euclidean).

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::encoding::{AggregatedVector, ActivityVocabulary};

/// Errors raised by metric computations.
#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("activity {activity:?} is not in the vocabulary")]
    UnknownActivity { activity: String },
}

/// The full distance panel for one adversarial pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPanel {
    pub latent_euclidean: f64,
    pub l1: f64,
    pub l2: f64,
    pub emd: f64,
    pub dl_edit: usize,
    pub lcp: usize,
}

/// Fraction of attacked prefixes whose prediction flipped. Empty input
/// yields 0 by convention (logged, since it usually signals an upstream
/// problem).
pub fn success_rate(flipped: &[bool]) -> f64 {
    if flipped.is_empty() {
        log::warn!("success rate over an empty result set; returning 0 by convention");
        return 0.0;
    }
    flipped.iter().filter(|&&f| f).count() as f64 / flipped.len() as f64
}

/// L1 (taxicab) distance between aggregated count vectors.
pub fn l1_distance(a: &AggregatedVector, b: &AggregatedVector) -> Result<f64, MetricsError> {
    check_dims(a.counts.len(), b.counts.len())?;
    Ok(a.counts
        .iter()
        .zip(b.counts.iter())
        .map(|(&x, &y)| (x as i64 - y as i64).unsigned_abs() as f64)
        .sum())
}

/// L2 (Euclidean) distance between aggregated count vectors.
pub fn l2_distance(a: &AggregatedVector, b: &AggregatedVector) -> Result<f64, MetricsError> {
    check_dims(a.counts.len(), b.counts.len())?;
    let sum_sq: f64 = a
        .counts
        .iter()
        .zip(b.counts.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum_sq.sqrt())
}

/// Euclidean distance between equal-length real vectors (used for latent
/// coordinates).
pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    check_dims(a.len(), b.len())?;
    let sum_sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum_sq.sqrt())
}

/// 1-D earth mover's distance between unnormalized count histograms whose
/// bins sit at integer positions (ground distance `|i - j|`), computed by
/// the cumulative-difference form `sum_k |cumsum(a - b)[k]|`. For equal
/// total masses this is the exact minimum transport cost; for unequal
/// masses it is taken as the definition.
pub fn emd_counts(a: &[u32], b: &[u32]) -> Result<f64, MetricsError> {
    check_dims(a.len(), b.len())?;
    let mut cumulative: i64 = 0;
    let mut total: u64 = 0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        cumulative += x as i64 - y as i64;
        total += cumulative.unsigned_abs();
    }
    Ok(total as f64)
}

/// Earth mover's distance between the activity-count histograms of two
/// sequences, with bins in vocabulary order.
pub fn emd_sequences(
    a: &[String],
    b: &[String],
    vocab: &ActivityVocabulary,
) -> Result<f64, MetricsError> {
    let histogram = |seq: &[String]| -> Result<Vec<u32>, MetricsError> {
        let mut counts = vec![0u32; vocab.n_activities()];
        for activity in seq {
            let rank = vocab
                .rank_of(activity)
                .ok_or_else(|| MetricsError::UnknownActivity { activity: activity.clone() })?;
            counts[rank] += 1;
        }
        Ok(counts)
    };
    emd_counts(&histogram(a)?, &histogram(b)?)
}

/// Edit distance with unit-cost insertions, deletions, substitutions and
/// adjacent transpositions, where later edits may touch the transposed
/// region (the unrestricted variant, not optimal string alignment).
pub fn dl_edit<T: Eq + Hash>(a: &[T], b: &[T]) -> usize {
    let n = a.len();
    let m = b.len();
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    let max_dist = n + m;
    // d[i + 1][j + 1] is the distance between a[..i] and b[..j]; the extra
    // leading row and column hold the sentinel for the transposition case.
    let mut d = vec![vec![max_dist; m + 2]; n + 2];
    for i in 0..=n {
        d[i + 1][1] = i;
    }
    for j in 0..=m {
        d[1][j + 1] = j;
    }
    // Last row (1-based) in which each symbol of `a` occurred.
    let mut last_row: HashMap<&T, usize> = HashMap::new();
    for i in 1..=n {
        let mut last_col = 0usize; // last column j' < j with b[j'] == a[i]
        for j in 1..=m {
            let k = *last_row.get(&b[j - 1]).unwrap_or(&0);
            let l = last_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_col = j;
                0
            } else {
                1
            };
            let substitution = d[i][j] + cost;
            let insertion = d[i + 1][j] + 1;
            let deletion = d[i][j + 1] + 1;
            let transposition = d[k][l] + (i - k - 1) + 1 + (j - l - 1);
            d[i + 1][j + 1] = substitution.min(insertion).min(deletion).min(transposition);
        }
        last_row.insert(&a[i - 1], i);
    }
    d[n + 1][m + 1]
}

/// Length of the longest common prefix of two sequences.
pub fn lcp<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count()
}

fn check_dims(left: usize, right: usize) -> Result<(), MetricsError> {
    if left == right {
        Ok(())
    } else {
        Err(MetricsError::DimensionMismatch { left, right })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn agg(counts: &[u32]) -> AggregatedVector {
        AggregatedVector { counts: counts.to_vec() }
    }

    #[test]
    fn success_rate_counts_flips() {
        assert_eq!(success_rate(&[true, false, true, true]), 0.75);
        assert_eq!(success_rate(&[false]), 0.0);
        assert_eq!(success_rate(&[]), 0.0);
    }

    #[test]
    fn l1_and_l2_on_single_substitution_footprint() {
        // Replacing one activity by another moves two count slots by one
        // each: L1 = 2, L2 = sqrt(2).
        let a = agg(&[2, 1, 0]);
        let b = agg(&[2, 0, 1]);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        assert!((l2_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(l1_distance(&a, &agg(&[1, 1])).is_err());
    }

    #[test]
    fn euclidean_handles_latent_coordinates() {
        assert_eq!(euclidean(&[0.0, 3.0], &[4.0, 0.0]).unwrap(), 5.0);
        assert!(euclidean(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn edit_distance_basic_identities() {
        let empty: [u8; 0] = [];
        assert_eq!(dl_edit(&empty, &empty), 0);
        assert_eq!(dl_edit(&[1u8, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(dl_edit(&empty, &[1u8, 2]), 2);
        assert_eq!(dl_edit(&[1u8, 2], &empty), 2);
        // Adjacent transposition costs one edit.
        assert_eq!(dl_edit(&[1u8, 2, 3], &[1, 3, 2]), 1);
        // Substitution of the last element costs one edit.
        assert_eq!(dl_edit(&[1u8, 2, 3], &[1, 2, 9]), 1);
    }

    #[test]
    fn edit_distance_works_over_string_sequences() {
        let a: Vec<String> = ["register", "review", "decide"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["register", "decide", "review"].iter().map(|s| s.to_string()).collect();
        assert_eq!(dl_edit(&a, &b), 1);
    }

    #[test]
    fn lcp_counts_shared_head() {
        assert_eq!(lcp(&[1u8, 2, 3, 4], &[1, 2, 9, 4]), 2);
        assert_eq!(lcp(&[1u8, 2], &[1, 2]), 2);
        assert_eq!(lcp(&[3u8], &[1, 2]), 0);
        let empty: [u8; 0] = [];
        assert_eq!(lcp(&empty, &[1u8]), 0);
    }

    #[test]
    fn emd_respects_bin_distance() {
        // Mass moved further costs proportionally more.
        assert_eq!(emd_counts(&[1, 0, 0], &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(emd_counts(&[1, 0, 0], &[0, 0, 1]).unwrap(), 2.0);
    }

    #[test]
    fn emd_over_sequences_uses_vocabulary_bins() {
        let vocab = ActivityVocabulary::from_activities(vec!["a".into(), "b".into(), "c".into()]);
        let seq = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        // [a, a] vs [a, c]: one unit moves from bin 0 to bin 2.
        assert_eq!(emd_sequences(&seq(&["a", "a"]), &seq(&["a", "c"]), &vocab).unwrap(), 2.0);
        let err = emd_sequences(&seq(&["a"]), &seq(&["zz"]), &vocab).unwrap_err();
        assert!(matches!(err, MetricsError::UnknownActivity { .. }));
    }

    proptest! {
        #[test]
        fn distances_are_symmetric_and_zero_on_identity(
            a in proptest::collection::vec(0u8..4, 0..7),
            b in proptest::collection::vec(0u8..4, 0..7),
        ) {
            prop_assert_eq!(dl_edit(&a, &b), dl_edit(&b, &a));
            prop_assert_eq!(dl_edit(&a, &a), 0);
            prop_assert_eq!(lcp(&a, &b), lcp(&b, &a));

            let mut ca = vec![0u32; 4];
            for &x in &a { ca[x as usize] += 1; }
            let mut cb = vec![0u32; 4];
            for &x in &b { cb[x as usize] += 1; }
            prop_assert_eq!(emd_counts(&ca, &cb).unwrap(), emd_counts(&cb, &ca).unwrap());
            prop_assert_eq!(emd_counts(&ca, &ca).unwrap(), 0.0);
        }

        #[test]
        fn edit_distance_obeys_the_triangle_inequality(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
            c in proptest::collection::vec(0u8..3, 0..6),
        ) {
            prop_assert!(dl_edit(&a, &c) <= dl_edit(&a, &b) + dl_edit(&b, &c));
        }

        #[test]
        fn edit_distance_bounded_by_length_sum(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
        ) {
            let d = dl_edit(&a, &b);
            prop_assert!(d <= a.len().max(b.len()));
            let diff = a.len().abs_diff(b.len());
            prop_assert!(d >= diff);
        }

        #[test]
        fn lcp_is_bounded_by_shorter_length(
            a in proptest::collection::vec(0u8..3, 0..6),
            b in proptest::collection::vec(0u8..3, 0..6),
        ) {
            prop_assert!(lcp(&a, &b) <= a.len().min(b.len()));
        }
    }
}
