//! Bin-balanced selection of scan–mask pairs by Dice quality.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationSpec {
    /// Ascending cut-points in `[0, 1]`; `n` edges give `n − 1` bins.
    pub bin_edges: Vec<f64>,
    pub per_bin: usize,
}

impl StratificationSpec {
    pub fn new(bin_edges: Vec<f64>, per_bin: usize) -> Result<Self> {
        let spec = Self { bin_edges, per_bin };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_edges.len() < 2 {
            return Err(Error::InvalidParameter("need at least two bin edges".into()));
        }
        if self.bin_edges.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidParameter("bin edges must lie in [0, 1]".into()));
        }
        if self.bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("bin edges must be strictly ascending".into()));
        }
        if self.per_bin == 0 {
            return Err(Error::InvalidParameter("per_bin must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    /// Bin index of `dice`: `[lo, hi)` with the top bin closed.
    pub fn bin_of(&self, dice: f64) -> Option<usize> {
        let n = self.n_bins();
        (0..n).find(|&b| {
            let (lo, hi) = (self.bin_edges[b], self.bin_edges[b + 1]);
            dice >= lo && (dice < hi || (b == n - 1 && dice <= hi))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub case_id: String,
    pub mask_id: String,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub bin: usize,
    pub candidate: Candidate,
}

/// Picks `per_bin` candidates per bin. Within a bin the candidates are
/// shuffled with the seed, then scanned once taking only case_ids not yet in
/// the bin, then again to fill the remaining slots.
pub fn stratified_select(candidates: &[Candidate], spec: &StratificationSpec, seed: u64) -> Result<Vec<Selection>> {
    spec.validate()?;
    let mut bins: Vec<Vec<&Candidate>> = vec![Vec::new(); spec.n_bins()];
    for c in candidates {
        if let Some(b) = spec.bin_of(c.dice) {
            bins[b].push(c);
        }
    }
    let mut out = Vec::with_capacity(spec.per_bin * spec.n_bins());
    for (b, mut pool) in bins.into_iter().enumerate() {
        if pool.len() < spec.per_bin {
            return Err(Error::Precondition(format!(
                "bin {b} [{}, {}] has {} candidates, needs {}",
                spec.bin_edges[b],
                spec.bin_edges[b + 1],
                pool.len(),
                spec.per_bin
            )));
        }
        // canonical order first so the result does not depend on input order
        pool.sort_by(|a, c| {
            (&a.case_id, &a.mask_id)
                .cmp(&(&c.case_id, &c.mask_id))
                .then(a.dice.total_cmp(&c.dice))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (b as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        pool.shuffle(&mut rng);

        let mut taken = vec![false; pool.len()];
        let mut seen: HashSet<&str> = HashSet::new();
        let mut chosen = Vec::with_capacity(spec.per_bin);
        for (i, c) in pool.iter().enumerate() {
            if chosen.len() == spec.per_bin {
                break;
            }
            if seen.insert(c.case_id.as_str()) {
                taken[i] = true;
                chosen.push(*c);
            }
        }
        for (i, c) in pool.iter().enumerate() {
            if chosen.len() == spec.per_bin {
                break;
            }
            if !taken[i] {
                chosen.push(*c);
            }
        }
        out.extend(chosen.into_iter().map(|c| Selection {
            bin: b,
            candidate: c.clone(),
        }));
    }
    Ok(out)
}
