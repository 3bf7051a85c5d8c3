//! Unsupervised quality baseline from an ensemble of test-time-augmentation
//! masks: member-vs-median agreement for 3D metrics, voxel entropy of the
//! mean prediction for slices.

use crate::error::{Error, Result};
use crate::metrics::{Metric, OverlapCounts};
use crate::volume::{BinaryMask, ProbabilityVolume, VolumeGeometry};

pub const MIN_ENSEMBLE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskEnsemble {
    members: Vec<BinaryMask>,
}

impl MaskEnsemble {
    pub fn new(members: Vec<BinaryMask>) -> Result<Self> {
        if members.len() < MIN_ENSEMBLE_SIZE {
            return Err(Error::InvalidParameter(format!(
                "an ensemble needs at least {MIN_ENSEMBLE_SIZE} members, got {}",
                members.len()
            )));
        }
        let g = members[0].geometry();
        for m in &members[1..] {
            g.check_compatible(m.geometry())?;
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[BinaryMask] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        self.members[0].geometry()
    }

    fn votes(&self) -> Vec<u32> {
        let mut votes = vec![0u32; self.geometry().voxel_count()];
        for m in &self.members {
            for (v, &x) in votes.iter_mut().zip(m.values()) {
                *v += x as u32;
            }
        }
        votes
    }
}

/// Voxelwise majority vote; an even split resolves to 1.
pub fn median_mask(ensemble: &MaskEnsemble) -> BinaryMask {
    let k = ensemble.len() as u32;
    let values = ensemble.votes().into_iter().map(|v| (2 * v >= k) as u8).collect();
    BinaryMask::new(*ensemble.geometry(), values).expect("votes produce a binary mask")
}

/// Mean over members of `metric(member, median)`.
pub fn tta_metric_estimate(ensemble: &MaskEnsemble, metric: Metric) -> Result<f64> {
    let median = median_mask(ensemble);
    let mut sum = 0.0;
    for member in ensemble.members() {
        let c = OverlapCounts::from_slices(member.values(), median.values());
        sum += c.metric(metric).ok_or_else(|| {
            Error::Precondition("tta arvd estimate needs a non-empty median mask".into())
        })?;
    }
    Ok(sum / ensemble.len() as f64)
}

/// Per-slice member-vs-median estimate, `None` where the metric is undefined
/// on the slice (every member and the median empty, or an empty median for ARVD).
pub fn tta_slice_estimates(ensemble: &MaskEnsemble, metric: Metric) -> Vec<Option<f64>> {
    let median = median_mask(ensemble);
    median
        .slices()
        .map(|ms| {
            let mut sum = 0.0;
            for member in ensemble.members() {
                let view = member.slice(ms.index()).expect("same geometry");
                let c = OverlapCounts::from_slices(view.as_slice(), ms.as_slice());
                sum += c.metric(metric)?;
            }
            let any = ensemble
                .members()
                .iter()
                .any(|m| m.slice(ms.index()).expect("same geometry").as_slice().contains(&1));
            (any || ms.as_slice().contains(&1)).then(|| sum / ensemble.len() as f64)
        })
        .collect()
}

/// Voxelwise mean of the members.
pub fn mean_probability(ensemble: &MaskEnsemble) -> ProbabilityVolume {
    let k = ensemble.len() as f32;
    let values = ensemble.votes().into_iter().map(|v| v as f32 / k).collect();
    ProbabilityVolume::new(*ensemble.geometry(), values).expect("vote fractions lie in [0, 1]")
}

/// Voxelwise mean of arbitrary masks; errors on an empty list. Unlike
/// [`mean_probability`] this accepts fewer than three masks.
pub fn mean_of_masks(masks: &[BinaryMask]) -> Result<ProbabilityVolume> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot average an empty set of masks".into()))?;
    let mut sums = vec![0u32; first.geometry().voxel_count()];
    for m in masks {
        first.geometry().check_compatible(m.geometry())?;
        for (s, &x) in sums.iter_mut().zip(m.values()) {
            *s += x as u32;
        }
    }
    let k = masks.len() as f32;
    ProbabilityVolume::new(*first.geometry(), sums.into_iter().map(|s| s as f32 / k).collect())
}

/// Binary entropy in nats with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }
}

/// Sum of voxel entropies on each slice.
pub fn slice_entropy(p: &ProbabilityVolume) -> Vec<f64> {
    p.slices()
        .map(|s| s.as_slice().iter().map(|&v| binary_entropy(v as f64)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> VolumeGeometry {
        VolumeGeometry::unit(4, 4, 1).unwrap()
    }

    fn mask(points: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::zeros(geom());
        for &(r, c) in points {
            m.set(0, r, c, 1);
        }
        m
    }

    const SQUARE: [(usize, usize); 4] = [(1, 1), (1, 2), (2, 1), (2, 2)];

    #[test]
    fn ensemble_size_and_geometry() {
        assert!(MaskEnsemble::new(vec![mask(&[]), mask(&[])]).is_err());
        let other = BinaryMask::zeros(VolumeGeometry::unit(4, 4, 2).unwrap());
        assert!(MaskEnsemble::new(vec![mask(&[]), mask(&[]), other]).is_err());
    }

    #[test]
    fn median_votes() {
        let m = mask(&SQUARE);
        let e = MaskEnsemble::new(vec![m.clone(), m.clone(), m.clone()]).unwrap();
        assert_eq!(median_mask(&e), m);

        let e = MaskEnsemble::new(vec![mask(&[(0, 0)]), mask(&[(0, 0)]), mask(&[])]).unwrap();
        assert_eq!(median_mask(&e).get(0, 0, 0), 1);

        let e = MaskEnsemble::new(vec![mask(&[(0, 0)]), mask(&[(0, 0)]), mask(&[]), mask(&[])]).unwrap();
        assert_eq!(median_mask(&e).get(0, 0, 0), 1);
    }

    #[test]
    fn dice_estimate_examples() {
        let sq = mask(&SQUARE);
        let e = MaskEnsemble::new(vec![sq.clone(), sq.clone(), sq.clone()]).unwrap();
        assert_eq!(tta_metric_estimate(&e, Metric::Dice).unwrap(), 1.0);

        let sub = mask(&SQUARE[..3]);
        let e = MaskEnsemble::new(vec![sq.clone(), sq.clone(), sub]).unwrap();
        let est = tta_metric_estimate(&e, Metric::Dice).unwrap();
        assert!((est - 20.0 / 21.0).abs() < 1e-12);

        let e = MaskEnsemble::new(vec![mask(&[(0, 0)]), mask(&[(1, 1)]), mask(&[(2, 2)])]).unwrap();
        assert!(median_mask(&e).is_empty_mask());
        assert_eq!(tta_metric_estimate(&e, Metric::Dice).unwrap(), 0.0);
        assert!(tta_metric_estimate(&e, Metric::Arvd).unwrap_err().is_precondition());
    }

    #[test]
    fn mean_probability_cases() {
        let one = BinaryMask::filled(geom(), 1).unwrap();
        let e = MaskEnsemble::new(vec![one.clone(), one.clone(), one.clone()]).unwrap();
        assert!(mean_probability(&e).values().iter().all(|&p| p == 1.0));

        let p = mean_of_masks(&[mask(&[(0, 0)]), mask(&[])]).unwrap();
        assert_eq!(p.get(0, 0, 0), 0.5);
        assert!(mean_of_masks(&[]).is_err());
    }

    #[test]
    fn entropy_values() {
        let g = VolumeGeometry::unit(4, 4, 2).unwrap();
        let mut v = vec![0.0f32; 32];
        v[3] = 1.0;
        let p = ProbabilityVolume::new(g, v.clone()).unwrap();
        assert_eq!(slice_entropy(&p), vec![0.0, 0.0]);

        v[20] = 0.5;
        let p = ProbabilityVolume::new(g, v.clone()).unwrap();
        let h = slice_entropy(&p);
        assert_eq!(h[0], 0.0);
        assert!((h[1] - std::f64::consts::LN_2).abs() < 1e-12);

        v[21] = 0.5;
        let p = ProbabilityVolume::new(g, v).unwrap();
        assert!((slice_entropy(&p)[1] - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn slice_estimates_skip_empty_slices() {
        let g = VolumeGeometry::unit(4, 4, 2).unwrap();
        let mut a = BinaryMask::zeros(g);
        a.set(1, 1, 1, 1);
        let e = MaskEnsemble::new(vec![a.clone(), a.clone(), a]).unwrap();
        assert_eq!(tta_slice_estimates(&e, Metric::Dice), vec![None, Some(1.0)]);
        assert_eq!(tta_slice_estimates(&e, Metric::Arvd), vec![None, Some(0.0)]);
    }
}
