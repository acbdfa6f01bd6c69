//! Cluster profiles for adversarial results.
//!
//! Each evaluated attack is summarized by its DL edit distance and earth
//! mover's distance, both normalized by the original prefix length, and
//! assigned one of five profiles using quartile thresholds computed over
//! the evaluated population: Subtle (both low), Aggressive (both high),
//! Sequence Perturbation (heavy reordering with little distributional
//! change), Distribution Shift (the reverse), and Others.
//!
//! The rules overlap at the boundaries, so they are evaluated in a fixed
//! order to keep assignment total and deterministic.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::metrics::MetricPanel;

/// Length-normalized view of one adversarial result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAttackMetrics {
    /// DL edit distance divided by the original prefix length.
    pub dl_norm: f64,
    /// Earth mover's distance divided by the original prefix length.
    pub emd_norm: f64,
    /// Whether the attack flipped the prediction.
    pub success: bool,
}

/// Normalizes a distance panel by the original prefix length.
pub fn normalize_metrics(
    panel: &MetricPanel,
    original_length: usize,
    success: bool,
) -> NormalizedAttackMetrics {
    let length = original_length.max(1) as f64;
    NormalizedAttackMetrics {
        dl_norm: panel.dl_edit as f64 / length,
        emd_norm: panel.emd / length,
        success,
    }
}

/// Quartile thresholds of the evaluated population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileThresholds {
    pub dl_q1: f64,
    pub dl_med: f64,
    pub dl_q3: f64,
    pub emd_q1: f64,
    pub emd_med: f64,
    pub emd_q3: f64,
}

/// The five attack profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterProfile {
    Aggressive,
    Subtle,
    SequencePerturbation,
    DistributionShift,
    Others,
}

impl ClusterProfile {
    pub const ALL: [ClusterProfile; 5] = [
        ClusterProfile::Aggressive,
        ClusterProfile::Subtle,
        ClusterProfile::SequencePerturbation,
        ClusterProfile::DistributionShift,
        ClusterProfile::Others,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClusterProfile::Aggressive => "aggressive",
            ClusterProfile::Subtle => "subtle",
            ClusterProfile::SequencePerturbation => "sequence_perturbation",
            ClusterProfile::DistributionShift => "distribution_shift",
            ClusterProfile::Others => "others",
        }
    }

    pub fn parse(text: &str) -> Option<ClusterProfile> {
        ClusterProfile::ALL.into_iter().find(|p| p.name() == text)
    }
}

impl fmt::Display for ClusterProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Errors raised while profiling.
#[derive(Debug, thiserror::Error)]
pub enum ProfilingError {
    #[error("profiling needs at least 4 evaluated results, got {size}")]
    PopulationTooSmall { size: usize },
}

/// Quantile by inclusive linear interpolation between order statistics:
/// rank `(n - 1) * p` interpolated between its neighbors. `values` must be
/// sorted ascending and non-empty; `p` in [0, 1].
pub fn quantile_inclusive(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty slice");
    assert!((0.0..=1.0).contains(&p), "quantile level out of range");
    let rank = (sorted.len() - 1) as f64 * p;
    let low = rank.floor() as usize;
    let fraction = rank - low as f64;
    if low + 1 < sorted.len() {
        sorted[low] + fraction * (sorted[low + 1] - sorted[low])
    } else {
        sorted[low]
    }
}

/// Computes the quartile thresholds of a population of at least 4 results.
pub fn compute_quartiles(
    population: &[NormalizedAttackMetrics],
) -> Result<QuartileThresholds, ProfilingError> {
    if population.len() < 4 {
        return Err(ProfilingError::PopulationTooSmall { size: population.len() });
    }
    let mut dl: Vec<f64> = population.iter().map(|m| m.dl_norm).collect();
    let mut emd: Vec<f64> = population.iter().map(|m| m.emd_norm).collect();
    dl.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    emd.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    Ok(QuartileThresholds {
        dl_q1: quantile_inclusive(&dl, 0.25),
        dl_med: quantile_inclusive(&dl, 0.50),
        dl_q3: quantile_inclusive(&dl, 0.75),
        emd_q1: quantile_inclusive(&emd, 0.25),
        emd_med: quantile_inclusive(&emd, 0.50),
        emd_q3: quantile_inclusive(&emd, 0.75),
    })
}

/// Assigns the profile of one result. The rules are checked in a fixed
/// order — Subtle, Aggressive, Sequence Perturbation, Distribution Shift —
/// and the first match wins; anything left is Others.
pub fn assign_profile(
    m: &NormalizedAttackMetrics,
    t: &QuartileThresholds,
) -> ClusterProfile {
    if m.dl_norm <= t.dl_q1 && m.emd_norm <= t.emd_q1 {
        return ClusterProfile::Subtle;
    }
    if m.dl_norm >= t.dl_q3 && m.emd_norm >= t.emd_q3 {
        return ClusterProfile::Aggressive;
    }
    if m.dl_norm >= t.dl_q3 && m.emd_norm < t.emd_med {
        return ClusterProfile::SequencePerturbation;
    }
    if m.emd_norm >= t.emd_q3 && m.dl_norm < t.dl_q3 {
        return ClusterProfile::DistributionShift;
    }
    ClusterProfile::Others
}

/// Profiles a whole population against its own quartiles.
pub fn profile_population(
    population: &[NormalizedAttackMetrics],
) -> Result<(QuartileThresholds, Vec<ClusterProfile>), ProfilingError> {
    let thresholds = compute_quartiles(population)?;
    let profiles = population.iter().map(|m| assign_profile(m, &thresholds)).collect();
    Ok((thresholds, profiles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn metrics(dl: f64, emd: f64) -> NormalizedAttackMetrics {
        NormalizedAttackMetrics { dl_norm: dl, emd_norm: emd, success: false }
    }

    #[test]
    fn quartiles_of_one_to_four_follow_inclusive_interpolation() {
        let population: Vec<NormalizedAttackMetrics> =
            [1.0, 2.0, 3.0, 4.0].iter().map(|&v| metrics(v, v)).collect();
        let t = compute_quartiles(&population).unwrap();
        assert!((t.dl_q1 - 1.75).abs() < 1e-12);
        assert!((t.dl_med - 2.5).abs() < 1e-12);
        assert!((t.dl_q3 - 3.25).abs() < 1e-12);
        assert_eq!(t.dl_q1, t.emd_q1);
        assert_eq!(t.dl_q3, t.emd_q3);
    }

    #[test]
    fn constant_population_collapses_the_thresholds() {
        let population: Vec<NormalizedAttackMetrics> =
            (0..6).map(|_| metrics(2.0, 5.0)).collect();
        let t = compute_quartiles(&population).unwrap();
        assert_eq!((t.dl_q1, t.dl_med, t.dl_q3), (2.0, 2.0, 2.0));
        assert_eq!((t.emd_q1, t.emd_med, t.emd_q3), (5.0, 5.0, 5.0));
    }

    #[test]
    fn too_small_population_is_an_error() {
        let population: Vec<NormalizedAttackMetrics> =
            (0..3).map(|i| metrics(i as f64, i as f64)).collect();
        assert!(matches!(
            compute_quartiles(&population),
            Err(ProfilingError::PopulationTooSmall { size: 3 })
        ));
    }

    #[test]
    fn quartiles_are_monotone_under_adding_a_maximal_element() {
        let mut rng = crate::seeding::stream_rng(3, "profiling-test");
        for _ in 0..50 {
            let n = rng.gen_range(4..40);
            let mut population: Vec<NormalizedAttackMetrics> = (0..n)
                .map(|_| metrics(rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)))
                .collect();
            let before = compute_quartiles(&population).unwrap();
            let max_dl = population.iter().map(|m| m.dl_norm).fold(0.0, f64::max);
            let max_emd = population.iter().map(|m| m.emd_norm).fold(0.0, f64::max);
            population.push(metrics(max_dl + 1.0, max_emd + 1.0));
            let after = compute_quartiles(&population).unwrap();
            assert!(after.dl_q1 >= before.dl_q1 - 1e-12);
            assert!(after.dl_med >= before.dl_med - 1e-12);
            assert!(after.dl_q3 >= before.dl_q3 - 1e-12);
            assert!(after.emd_q1 >= before.emd_q1 - 1e-12);
            assert!(after.emd_med >= before.emd_med - 1e-12);
            assert!(after.emd_q3 >= before.emd_q3 - 1e-12);
        }
    }

    /// 20 points whose dl and emd multisets are both five copies each of
    /// {1, 2, 3, 4}, so both metrics share the hand-computed thresholds
    /// q1 = 1.75, median = 2.5, q3 = 3.25. Expectations are hand-applied
    /// rules, written out pair by pair.
    fn hand_population() -> Vec<(NormalizedAttackMetrics, ClusterProfile)> {
        use ClusterProfile::*;
        let pairs: [(f64, f64, ClusterProfile); 20] = [
            (1.0, 1.0, Subtle),
            (1.0, 4.0, DistributionShift),
            (1.0, 1.0, Subtle),
            (1.0, 2.0, Others),
            (1.0, 3.0, Others),
            (2.0, 2.0, Others),
            (2.0, 2.0, Others),
            (2.0, 3.0, Others),
            (2.0, 1.0, Others),
            (2.0, 4.0, DistributionShift),
            (3.0, 3.0, Others),
            (3.0, 4.0, DistributionShift),
            (3.0, 2.0, Others),
            (3.0, 1.0, Others),
            (3.0, 3.0, Others),
            (4.0, 4.0, Aggressive),
            (4.0, 1.0, SequencePerturbation),
            (4.0, 2.0, SequencePerturbation),
            (4.0, 3.0, Others),
            (4.0, 4.0, Aggressive),
        ];
        pairs.iter().map(|&(dl, emd, expected)| (metrics(dl, emd), expected)).collect()
    }

    #[test]
    fn hand_population_matches_the_rule_table_and_hits_all_profiles() {
        let labeled = hand_population();
        let population: Vec<NormalizedAttackMetrics> =
            labeled.iter().map(|&(m, _)| m).collect();
        let (thresholds, profiles) = profile_population(&population).unwrap();
        assert!((thresholds.dl_q1 - 1.75).abs() < 1e-12);
        assert!((thresholds.emd_med - 2.5).abs() < 1e-12);
        assert!((thresholds.dl_q3 - 3.25).abs() < 1e-12);
        for ((m, expected), got) in labeled.iter().zip(&profiles) {
            assert_eq!(
                got, expected,
                "dl {} emd {} misprofiled",
                m.dl_norm, m.emd_norm
            );
        }
        for profile in ClusterProfile::ALL {
            assert!(profiles.contains(&profile), "{profile} never assigned");
        }
    }

    #[test]
    fn assignment_is_invariant_under_population_permutation() {
        let labeled = hand_population();
        let mut rng = crate::seeding::stream_rng(9, "profiling-perm");
        for _ in 0..20 {
            let mut shuffled = labeled.clone();
            shuffled.shuffle(&mut rng);
            let population: Vec<NormalizedAttackMetrics> =
                shuffled.iter().map(|&(m, _)| m).collect();
            let (_, profiles) = profile_population(&population).unwrap();
            for ((m, expected), got) in shuffled.iter().zip(&profiles) {
                assert_eq!(got, expected, "dl {} emd {}", m.dl_norm, m.emd_norm);
            }
        }
    }

    #[test]
    fn boundary_points_follow_the_fixed_rule_order() {
        let t = QuartileThresholds {
            dl_q1: 1.75,
            dl_med: 2.5,
            dl_q3: 3.25,
            emd_q1: 1.75,
            emd_med: 2.5,
            emd_q3: 3.25,
        };
        // Exactly at q3 on both axes: Aggressive (inclusive bounds).
        assert_eq!(assign_profile(&metrics(3.25, 3.25), &t), ClusterProfile::Aggressive);
        // Exactly at q1 on both axes: Subtle.
        assert_eq!(assign_profile(&metrics(1.75, 1.75), &t), ClusterProfile::Subtle);
        // High dl with emd exactly at the median: the sequence-perturbation
        // rule requires strictly-below-median emd, and the shift rule
        // requires dl below q3, so the point falls through to Others.
        assert_eq!(assign_profile(&metrics(4.0, 2.5), &t), ClusterProfile::Others);
        // Success plays no role in assignment.
        let successful = NormalizedAttackMetrics { dl_norm: 1.0, emd_norm: 1.0, success: true };
        assert_eq!(assign_profile(&successful, &t), ClusterProfile::Subtle);
    }

    #[test]
    fn normalization_divides_by_the_original_length() {
        let panel = MetricPanel {
            latent_euclidean: 0.0,
            l1: 2.0,
            l2: 2.0f64.sqrt(),
            emd: 3.0,
            dl_edit: 2,
            lcp: 1,
        };
        let normalized = normalize_metrics(&panel, 4, true);
        assert!((normalized.dl_norm - 0.5).abs() < 1e-12);
        assert!((normalized.emd_norm - 0.75).abs() < 1e-12);
        assert!(normalized.success);
    }
}
