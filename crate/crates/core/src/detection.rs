//! Error-region boxes: connected components → bounding boxes → proximity
//! unification → area filter → oversized-box discard.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{self, Plane};
use crate::volume::{BinaryMask, VolumeGeometry};

/// Box unification distance in voxels.
pub const DEFAULT_MIN_D: usize = 5;
/// Minimum error-region area.
pub const DEFAULT_MIN_AREA_MM2: f64 = 100.0;
/// Binarisation threshold applied to error probabilities upstream of detection.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Axis-aligned box on one slice; `row1`/`col1` are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox2D {
    #[serde(rename = "slice")]
    pub slice_index: usize,
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
    pub area_vox: usize,
    pub area_mm2: f64,
}

impl BoundingBox2D {
    pub fn new(
        slice_index: usize,
        (row0, col0): (usize, usize),
        (row1, col1): (usize, usize),
        geometry: &VolumeGeometry,
    ) -> Result<Self> {
        if row1 <= row0 || col1 <= col0 {
            return Err(Error::InvalidParameter(format!(
                "empty box [{row0},{col0})–[{row1},{col1})"
            )));
        }
        if row1 > geometry.rows() || col1 > geometry.cols() || slice_index >= geometry.n_slices() {
            return Err(Error::InvalidParameter(format!(
                "box [{row0},{col0})–[{row1},{col1}) on slice {slice_index} exceeds the volume"
            )));
        }
        Ok(Self::unchecked(slice_index, row0, col0, row1, col1, geometry.pixel_area_mm2()))
    }

    fn unchecked(slice_index: usize, row0: usize, col0: usize, row1: usize, col1: usize, px: f64) -> Self {
        let area_vox = (row1 - row0) * (col1 - col0);
        Self {
            slice_index,
            row0,
            col0,
            row1,
            col1,
            area_vox,
            area_mm2: area_vox as f64 * px,
        }
    }

    fn pixel_area(&self) -> f64 {
        self.area_mm2 / self.area_vox as f64
    }

    /// Chebyshev gap between two boxes on the same slice: the number of empty
    /// rows or columns separating them (negative when they overlap).
    pub fn gap(&self, other: &Self) -> isize {
        let row_gap = (other.row0 as isize - self.row1 as isize).max(self.row0 as isize - other.row1 as isize);
        let col_gap = (other.col0 as isize - self.col1 as isize).max(self.col0 as isize - other.col1 as isize);
        row_gap.max(col_gap)
    }

    /// `self` grown by `min_d` on every side intersects `other`.
    pub fn is_near(&self, other: &Self, min_d: usize) -> bool {
        self.slice_index == other.slice_index && self.gap(other) < min_d as isize
    }

    pub fn hull(&self, other: &Self) -> Self {
        Self::unchecked(
            self.slice_index,
            self.row0.min(other.row0),
            self.col0.min(other.col0),
            self.row1.max(other.row1),
            self.col1.max(other.col1),
            self.pixel_area(),
        )
    }

    pub fn intersection_area(&self, other: &Self) -> usize {
        if self.slice_index != other.slice_index {
            return 0;
        }
        let rows = self.row1.min(other.row1).saturating_sub(self.row0.max(other.row0));
        let cols = self.col1.min(other.col1).saturating_sub(self.col0.max(other.col0));
        rows * cols
    }

    /// Box IoU in voxels; 0 across slices.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0 {
            return 0.0;
        }
        inter as f64 / (self.area_vox + other.area_vox - inter) as f64
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }

    fn sort_key(&self) -> (usize, usize, usize, usize, usize) {
        (self.slice_index, self.row0, self.col0, self.row1, self.col1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub min_d: usize,
    pub min_area_mm2: f64,
    pub discard_half_slice: bool,
    /// Ground-truth boxes; when present the oversized rule also requires the
    /// box to exceed twice the largest of these.
    #[serde(default)]
    pub gt_context: Option<Vec<BoundingBox2D>>,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            min_d: DEFAULT_MIN_D,
            min_area_mm2: DEFAULT_MIN_AREA_MM2,
            discard_half_slice: true,
            gt_context: None,
        }
    }
}

fn sort_boxes(boxes: &mut [BoundingBox2D]) {
    boxes.sort_by_key(|b| b.sort_key());
}

/// Tight boxes around every 8-connected component of every slice, ordered by
/// slice, then `row0`, then `col0`.
pub fn boxes_from_mask(e: &BinaryMask) -> Vec<BoundingBox2D> {
    let g = e.geometry();
    let px = g.pixel_area_mm2();
    let mut boxes = Vec::new();
    for view in e.slices() {
        if view.as_slice().iter().all(|&v| v == 0) {
            continue;
        }
        let plane = Plane::new(g.rows(), g.cols(), view.as_slice().to_vec());
        let (_, comps) = morphology::label_components(&plane);
        boxes.extend(
            comps
                .iter()
                .map(|c| BoundingBox2D::unchecked(view.index(), c.row0, c.col0, c.row1, c.col1, px)),
        );
    }
    sort_boxes(&mut boxes);
    boxes
}

/// Merges boxes on the same slice whose gap is below `min_d` into their hull,
/// repeating until no two boxes are near each other.
pub fn unify_boxes(boxes: &[BoundingBox2D], min_d: usize) -> Vec<BoundingBox2D> {
    let mut current: Vec<BoundingBox2D> = boxes.to_vec();
    sort_boxes(&mut current);
    loop {
        let mut merged = false;
        let mut next: Vec<BoundingBox2D> = Vec::with_capacity(current.len());
        for b in current {
            let mut acc = b;
            // absorb every already-placed box near the accumulated hull
            while let Some(i) = next.iter().position(|o| o.is_near(&acc, min_d)) {
                acc = acc.hull(&next.swap_remove(i));
                merged = true;
            }
            next.push(acc);
        }
        sort_boxes(&mut next);
        current = next;
        if !merged {
            return current;
        }
    }
}

/// Full detection pipeline on a binary error mask.
pub fn detect_error_regions(e: &BinaryMask, params: &DetectionParams) -> Result<Vec<BoundingBox2D>> {
    if !(params.min_area_mm2 >= 0.0 && params.min_area_mm2.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "min_area_mm2 must be >= 0, got {}",
            params.min_area_mm2
        )));
    }
    let g = e.geometry();
    let half_slice = g.slice_len() as f64 / 2.0;
    let gt_limit = params
        .gt_context
        .as_ref()
        .map(|gt| 2.0 * gt.iter().map(|b| b.area_vox).max().unwrap_or(0) as f64);
    let boxes = unify_boxes(&boxes_from_mask(e), params.min_d);
    Ok(boxes
        .into_iter()
        .filter(|b| b.area_mm2 >= params.min_area_mm2)
        .filter(|b| {
            if !params.discard_half_slice {
                return true;
            }
            let area = b.area_vox as f64;
            let oversized = match gt_limit {
                None => area > half_slice,
                Some(limit) => area > half_slice && area > limit,
            };
            !oversized
        })
        .collect())
}

pub fn write_boxes_json(boxes: &[BoundingBox2D], out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, boxes)?;
    Ok(())
}

pub fn write_boxes_csv(boxes: &[BoundingBox2D], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in boxes {
        w.serialize(b)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
