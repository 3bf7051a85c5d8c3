//! Worst-first correction priority for cases and slices.

use serde::{Deserialize, Serialize};

use crate::metrics::{Metric, QualityEstimate};
use crate::tta;
use crate::volume::ProbabilityVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    MetricEstimate,
    ErrorSum,
    Entropy,
    Random,
    RandomNonEmpty,
    Sequential,
    Optimal,
}

impl RankPolicy {
    pub fn name(self) -> &'static str {
        match self {
            RankPolicy::MetricEstimate => "metric_estimate",
            RankPolicy::ErrorSum => "error_sum",
            RankPolicy::Entropy => "entropy",
            RankPolicy::Random => "random",
            RankPolicy::RandomNonEmpty => "random_non_empty",
            RankPolicy::Sequential => "sequential",
            RankPolicy::Optimal => "optimal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry<I> {
    pub id: I,
    pub score: f64,
    /// 0 is corrected first.
    pub rank: usize,
}

/// Identifiers in correction order with their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList<I> {
    pub policy: RankPolicy,
    pub entries: Vec<RankEntry<I>>,
}

/// Sort direction of a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Lowest score first.
    Ascending,
    /// Highest score first.
    Descending,
}

impl<I: Ord + Clone> RankedList<I> {
    /// Sorts `(id, score)` pairs in `direction`, breaking ties by id.
    pub fn from_scores(
        policy: RankPolicy,
        scored: impl IntoIterator<Item = (I, f64)>,
        direction: Direction,
    ) -> Self {
        let mut scored: Vec<(I, f64)> = scored.into_iter().collect();
        scored.sort_by(|a, b| {
            let by_score = match direction {
                Direction::Ascending => a.1.total_cmp(&b.1),
                Direction::Descending => b.1.total_cmp(&a.1),
            };
            by_score.then_with(|| a.0.cmp(&b.0))
        });
        Self::from_order(policy, scored)
    }

    /// Keeps the given order as is.
    pub fn from_order(policy: RankPolicy, ordered: impl IntoIterator<Item = (I, f64)>) -> Self {
        Self {
            policy,
            entries: ordered
                .into_iter()
                .enumerate()
                .map(|(rank, (id, score))| RankEntry { id, score, rank })
                .collect(),
        }
    }

    pub fn ids(&self) -> Vec<I> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Direction that puts the worst case first.
pub fn worst_first(metric: Metric) -> Direction {
    match metric {
        Metric::Dice | Metric::Iou => Direction::Ascending,
        Metric::Arvd => Direction::Descending,
    }
}

/// Orders cases by an estimated metric: lowest overlap or highest ARVD first.
pub fn rank_cases<'a>(
    estimates: impl IntoIterator<Item = (&'a str, &'a QualityEstimate)>,
    metric: Metric,
) -> RankedList<String> {
    RankedList::from_scores(
        RankPolicy::MetricEstimate,
        estimates
            .into_iter()
            .map(|(id, q)| (id.to_string(), q.metric3d(metric))),
        worst_first(metric),
    )
}

/// Orders cases by the summed estimated error `Σê` (largest first).
pub fn rank_cases_error_sum<'a>(
    errors: impl IntoIterator<Item = (&'a str, &'a ProbabilityVolume)>,
) -> RankedList<String> {
    RankedList::from_scores(
        RankPolicy::ErrorSum,
        errors
            .into_iter()
            .map(|(id, e)| (id.to_string(), e.values().iter().map(|&v| v as f64).sum())),
        Direction::Descending,
    )
}

fn slice_sums(e: &ProbabilityVolume) -> Vec<f64> {
    e.slices()
        .map(|s| s.as_slice().iter().map(|&v| v as f64).sum())
        .collect()
}

/// Orders slices by `Σê` on the slice, largest first; ties by slice index.
pub fn rank_slices_error_sum(e_hat: &ProbabilityVolume) -> RankedList<usize> {
    RankedList::from_scores(
        RankPolicy::ErrorSum,
        slice_sums(e_hat).into_iter().enumerate(),
        Direction::Descending,
    )
}

/// Orders slices by summed voxel entropy, largest first.
pub fn rank_slices_entropy(p: &ProbabilityVolume) -> RankedList<usize> {
    RankedList::from_scores(
        RankPolicy::Entropy,
        tta::slice_entropy(p).into_iter().enumerate(),
        Direction::Descending,
    )
}
