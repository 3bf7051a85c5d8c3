//! Estimated-error extraction.
//!
//! Each slice of a difference (or thresholded error) mask is cleaned in three
//! steps: a dilation/erosion band around the band source is computed, the band
//! is removed from the slice, and 8-connected components smaller than a size
//! threshold are deleted. The removed band stands in for boundary-localised
//! observer variability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{self, Plane};
use crate::volume::{BinaryMask, ProbabilityVolume, VolumeGeometry};

/// Whose contour the removed band surrounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSource {
    /// The band around the input mask's own contour.
    #[default]
    #[serde(rename = "self")]
    SelfMask,
    /// The band around the segmentation mask `M`, removed from the input.
    Mask,
}

impl std::str::FromStr for BandSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(Self::SelfMask),
            "mask" => Ok(Self::Mask),
            other => Err(Error::InvalidParameter(format!("unknown band source {other:?}"))),
        }
    }
}

/// Small-component threshold; components strictly smaller are removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", content = "value", rename_all = "lowercase")]
pub enum MinComponent {
    Voxels(f64),
    Mm2(f64),
}

impl MinComponent {
    pub fn value(&self) -> f64 {
        match *self {
            MinComponent::Voxels(v) | MinComponent::Mm2(v) => v,
        }
    }

    /// Whether a component of `area_vox` pixels is kept.
    pub fn keeps(&self, area_vox: usize, geometry: &VolumeGeometry) -> bool {
        match *self {
            MinComponent::Voxels(v) => area_vox as f64 >= v,
            MinComponent::Mm2(v) => area_vox as f64 * geometry.pixel_area_mm2() >= v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionParams {
    pub radius: usize,
    pub iterations: usize,
    pub min_component: MinComponent,
    pub band_source: BandSource,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        Self {
            radius: 1,
            iterations: 1,
            min_component: MinComponent::Voxels(10.0),
            band_source: BandSource::SelfMask,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 || self.iterations < 1 {
            return Err(Error::InvalidParameter(format!(
                "radius and iterations must be >= 1, got {} and {}",
                self.radius, self.iterations
            )));
        }
        let v = self.min_component.value();
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("min_component must be > 0, got {v}")));
        }
        Ok(())
    }
}

/// Voxelwise `|t − m|`.
pub fn difference_volume(m: &BinaryMask, t: &BinaryMask) -> Result<BinaryMask> {
    m.geometry().check_compatible(t.geometry())?;
    let values = m.values().iter().zip(t.values()).map(|(&a, &b)| a ^ b).collect();
    BinaryMask::new(*m.geometry(), values)
}

/// Ground-truth error for corrections data: the plain difference volume, since
/// a corrected mask carries little observer variability.
pub fn corrections_ground_truth_error(m: &BinaryMask, t: &BinaryMask) -> Result<BinaryMask> {
    difference_volume(m, t)
}

/// Voxel set iff `ê ≥ th`.
pub fn binarize(e_hat: &ProbabilityVolume, th: f64) -> Result<BinaryMask> {
    if !(th > 0.0 && th < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold must lie in (0, 1), got {th}")));
    }
    let values = e_hat.values().iter().map(|&e| (e as f64 >= th) as u8).collect();
    BinaryMask::new(*e_hat.geometry(), values)
}

fn plane_of(mask: &BinaryMask, k: usize) -> Plane {
    let g = mask.geometry();
    let view = mask.slice(k).expect("slice index within geometry");
    Plane::new(g.rows(), g.cols(), view.as_slice().to_vec())
}

/// Steps (1) and (2) for one slice.
pub fn remove_band(x: &Plane, band_source: &Plane, radius: usize, iterations: usize) -> Plane {
    x.minus(&morphology::band(band_source, radius, iterations))
}

/// Step (3) over every slice of a volume.
pub fn remove_small_components(x: &BinaryMask, min_component: MinComponent) -> BinaryMask {
    let g = *x.geometry();
    let mut out = BinaryMask::zeros(g);
    for k in 0..g.n_slices() {
        let kept = morphology::filter_components(&plane_of(x, k), |c| min_component.keeps(c.area, &g));
        out.set_slice(k, kept.data()).expect("plane matches slice");
    }
    out
}

/// Runs the three-step extraction independently on every slice of `x`.
pub fn extract_estimated_error(
    x: &BinaryMask,
    params: &ExtractionParams,
    mask: Option<&BinaryMask>,
) -> Result<BinaryMask> {
    params.validate()?;
    let source = match (params.band_source, mask) {
        (BandSource::SelfMask, _) => None,
        (BandSource::Mask, Some(m)) => {
            x.geometry().check_compatible(m.geometry())?;
            Some(m)
        }
        (BandSource::Mask, None) => {
            return Err(Error::InvalidParameter(
                "band source 'mask' requires the segmentation mask".into(),
            ))
        }
    };
    let g = *x.geometry();
    let mut out = BinaryMask::zeros(g);
    for k in 0..g.n_slices() {
        let plane = plane_of(x, k);
        if plane.count() == 0 {
            continue;
        }
        let banded = match source {
            None => remove_band(&plane, &plane, params.radius, params.iterations),
            Some(m) => remove_band(&plane, &plane_of(m, k), params.radius, params.iterations),
        };
        let kept = morphology::filter_components(&banded, |c| params.min_component.keeps(c.area, &g));
        out.set_slice(k, kept.data())?;
    }
    Ok(out)
}
