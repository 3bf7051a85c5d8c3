//! Correction curves: mean cohort quality as a function of the fraction of
//! cases (3D) or slices (2D) corrected in a given order.
//!
//! 3D: a corrected case scores 1, the rest keep their true quality.
//! 2D: the top-q% ranked slices of each mask are replaced by the ground-truth
//! slices and the repaired mask's 3D Dice is averaged over cases.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::OverlapCounts;
use crate::ranking::{Direction, RankPolicy, RankedList};
use crate::volume::BinaryMask;

/// Default number of shuffles averaged for random policies.
pub const DEFAULT_RANDOM_SEEDS: usize = 20;

/// 0, 5, …, 100 percent.
pub fn default_percent_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 5.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionCurve {
    pub policy: RankPolicy,
    /// Fraction corrected, in `[0, 1]`.
    pub x: Vec<f64>,
    /// Mean quality at each fraction.
    pub y: Vec<f64>,
    pub seeds_averaged: usize,
}

impl CorrectionCurve {
    /// Pointwise `self ≥ other − tol` on curves sharing `x`.
    pub fn dominates(&self, other: &CorrectionCurve, tol: f64) -> bool {
        self.x == other.x && self.y.iter().zip(&other.y).all(|(a, b)| *a >= b - tol)
    }
}

fn rng_for(seed: u64, round: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn average_curves(policy: RankPolicy, curves: Vec<CorrectionCurve>) -> CorrectionCurve {
    let n = curves.len();
    let mut y = vec![0.0; curves[0].y.len()];
    for c in &curves {
        for (acc, v) in y.iter_mut().zip(&c.y) {
            *acc += v;
        }
    }
    y.iter_mut().for_each(|v| *v /= n as f64);
    CorrectionCurve {
        policy,
        x: curves[0].x.clone(),
        y,
        seeds_averaged: n,
    }
}

// ---------------------------------------------------------------------------
// 3D
// ---------------------------------------------------------------------------

/// Ascending true quality, ties by id.
pub fn optimal_case_ranking(truth: &[(String, f64)]) -> RankedList<String> {
    RankedList::from_scores(RankPolicy::Optimal, truth.iter().cloned(), Direction::Ascending)
}

/// `y(k/N)` for `k = 0..=N`, correcting cases in ranking order.
pub fn correction_curve_3d(truth: &[(String, f64)], ranking: &RankedList<String>) -> Result<CorrectionCurve> {
    if truth.is_empty() {
        return Err(Error::InvalidParameter("no cases for a correction curve".into()));
    }
    let quality: HashMap<&str, f64> = truth.iter().map(|(id, q)| (id.as_str(), *q)).collect();
    if quality.len() != truth.len() {
        return Err(Error::InvalidParameter("duplicate case ids".into()));
    }
    let mut position = HashMap::new();
    for (i, e) in ranking.entries.iter().enumerate() {
        if !quality.contains_key(e.id.as_str()) || position.insert(e.id.as_str(), i).is_some() {
            return Err(Error::InvalidParameter(format!(
                "ranking is not a permutation of the cases (at {:?})",
                e.id
            )));
        }
    }
    if position.len() != truth.len() {
        return Err(Error::InvalidParameter("ranking misses some cases".into()));
    }
    let n = truth.len();
    let mut x = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    for k in 0..=n {
        // summed in input order so that equal-quality swaps give identical sums
        let total: f64 = truth
            .iter()
            .map(|(id, q)| if position[id.as_str()] < k { 1.0 } else { *q })
            .sum();
        x.push(k as f64 / n as f64);
        y.push(total / n as f64);
    }
    Ok(CorrectionCurve {
        policy: ranking.policy,
        x,
        y,
        seeds_averaged: 1,
    })
}

/// Random correction order averaged over `seeds` shuffles.
pub fn random_correction_curve_3d(truth: &[(String, f64)], seeds: usize, seed: u64) -> Result<CorrectionCurve> {
    if seeds == 0 {
        return Err(Error::InvalidParameter("seeds must be >= 1".into()));
    }
    let curves = (0..seeds)
        .map(|round| {
            let mut ids: Vec<String> = truth.iter().map(|(id, _)| id.clone()).collect();
            ids.shuffle(&mut rng_for(seed, round));
            let ranking = RankedList::from_order(RankPolicy::Random, ids.into_iter().map(|id| (id, 0.0)));
            correction_curve_3d(truth, &ranking)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_curves(RankPolicy::Random, curves))
}

// ---------------------------------------------------------------------------
// 2D
// ---------------------------------------------------------------------------

/// Per-slice counts of a `(mask, truth)` pair.
#[derive(Debug, Clone)]
pub struct SliceTable {
    slices: Vec<OverlapCounts>,
}

impl SliceTable {
    pub fn new(m: &BinaryMask, t: &BinaryMask) -> Result<Self> {
        m.geometry().check_compatible(t.geometry())?;
        Ok(Self {
            slices: m
                .slices()
                .zip(t.slices())
                .map(|(a, b)| OverlapCounts::from_slices(a.as_slice(), b.as_slice()))
                .collect(),
        })
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    /// 3D Dice after replacing the listed slices of the mask by the truth.
    pub fn repaired_dice(&self, corrected: &[usize]) -> f64 {
        let mut fixed = vec![false; self.slices.len()];
        for &k in corrected {
            fixed[k] = true;
        }
        let (mut inter, mut mask, mut truth) = (0u64, 0u64, 0u64);
        for (c, &f) in self.slices.iter().zip(&fixed) {
            truth += c.truth;
            if f {
                inter += c.truth;
                mask += c.truth;
            } else {
                inter += c.intersection;
                mask += c.mask;
            }
        }
        if mask + truth == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (mask + truth) as f64
        }
    }

    fn nonempty(&self) -> Vec<usize> {
        (0..self.slices.len())
            .filter(|&k| self.slices[k].mask + self.slices[k].truth > 0)
            .collect()
    }
}

/// Slices by true `|T − M|` voxel count, largest first.
pub fn optimal_slice_ranking(m: &BinaryMask, t: &BinaryMask) -> Result<RankedList<usize>> {
    let table = SliceTable::new(m, t)?;
    Ok(RankedList::from_scores(
        RankPolicy::Optimal,
        table.slices.iter().enumerate().map(|(k, c)| (k, c.difference as f64)),
        Direction::Descending,
    ))
}

pub fn sequential_slice_ranking(n_slices: usize) -> RankedList<usize> {
    RankedList::from_order(RankPolicy::Sequential, (0..n_slices).map(|k| (k, k as f64)))
}

fn random_slice_ranking(table: &SliceTable, non_empty_only: bool, rng: &mut ChaCha8Rng) -> RankedList<usize> {
    let mut order: Vec<usize> = if non_empty_only {
        table.nonempty()
    } else {
        (0..table.n_slices()).collect()
    };
    order.shuffle(rng);
    let policy = if non_empty_only {
        RankPolicy::RandomNonEmpty
    } else {
        RankPolicy::Random
    };
    RankedList::from_order(policy, order.into_iter().map(|k| (k, 0.0)))
}

fn check_percents(percents: &[f64]) -> Result<()> {
    if percents.is_empty() {
        return Err(Error::InvalidParameter("empty percentage grid".into()));
    }
    if let Some(p) = percents.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(Error::InvalidParameter(format!("percentage {p} outside [0, 100]")));
    }
    Ok(())
}

/// Number of slices covered by `q` percent of `n`, rounded up.
pub fn slices_for_percent(q: f64, n: usize) -> usize {
    ((q * n as f64 / 100.0) - 1e-9).ceil().max(0.0) as usize
}

fn curve_2d_from_tables(
    tables: &[SliceTable],
    rankings: &[RankedList<usize>],
    percents: &[f64],
    policy: RankPolicy,
) -> Result<CorrectionCurve> {
    let mut y = Vec::with_capacity(percents.len());
    for &q in percents {
        let mut total = 0.0;
        for (table, ranking) in tables.iter().zip(rankings) {
            let take = slices_for_percent(q, table.n_slices()).min(ranking.len());
            let corrected: Vec<usize> = ranking.entries[..take].iter().map(|e| e.id).collect();
            if let Some(&bad) = corrected.iter().find(|&&k| k >= table.n_slices()) {
                return Err(Error::SliceOutOfRange {
                    index: bad,
                    n_slices: table.n_slices(),
                });
            }
            total += table.repaired_dice(&corrected);
        }
        y.push(total / tables.len() as f64);
    }
    Ok(CorrectionCurve {
        policy,
        x: percents.iter().map(|q| q / 100.0).collect(),
        y,
        seeds_averaged: 1,
    })
}

/// 2D curve for given per-case slice rankings.
pub fn correction_curve_2d(
    cases: &[(BinaryMask, BinaryMask)],
    slice_rankings: &[RankedList<usize>],
    percents: &[f64],
) -> Result<CorrectionCurve> {
    check_percents(percents)?;
    if cases.is_empty() || cases.len() != slice_rankings.len() {
        return Err(Error::InvalidParameter(format!(
            "{} cases but {} slice rankings",
            cases.len(),
            slice_rankings.len()
        )));
    }
    let tables = cases
        .iter()
        .map(|(m, t)| SliceTable::new(m, t))
        .collect::<Result<Vec<_>>>()?;
    curve_2d_from_tables(&tables, slice_rankings, percents, slice_rankings[0].policy)
}

/// Random slice order (all slices, or only slices where `M` or `T` is
/// non-empty) averaged over `seeds` shuffles.
pub fn random_correction_curve_2d(
    cases: &[(BinaryMask, BinaryMask)],
    non_empty_only: bool,
    percents: &[f64],
    seeds: usize,
    seed: u64,
) -> Result<CorrectionCurve> {
    check_percents(percents)?;
    if cases.is_empty() || seeds == 0 {
        return Err(Error::InvalidParameter("need at least one case and one seed".into()));
    }
    let tables = cases
        .iter()
        .map(|(m, t)| SliceTable::new(m, t))
        .collect::<Result<Vec<_>>>()?;
    let policy = if non_empty_only {
        RankPolicy::RandomNonEmpty
    } else {
        RankPolicy::Random
    };
    let curves = (0..seeds)
        .map(|round| {
            let mut rng = rng_for(seed, round);
            let rankings: Vec<_> = tables
                .iter()
                .map(|t| random_slice_ranking(t, non_empty_only, &mut rng))
                .collect();
            curve_2d_from_tables(&tables, &rankings, percents, policy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_curves(policy, curves))
}
