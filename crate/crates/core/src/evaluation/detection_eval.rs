//! Precision/recall of predicted error boxes against ground-truth error boxes
//! over a grid of IoU thresholds.
//!
//! Boxes carry no confidence, so matching is greedy by IoU: same-slice
//! (prediction, ground truth) pairs are visited in descending IoU and matched
//! when both are free and IoU ≥ τ. Counts are pooled over every case.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detection::{self, BoundingBox2D, DetectionParams};
use crate::error::{Error, Result};
use crate::volume::BinaryMask;

pub const DEFAULT_IOU_GRID: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub thresholds: Vec<ThresholdResult>,
}

impl DetectionReport {
    pub fn at(&self, tau: f64) -> Option<&ThresholdResult> {
        self.thresholds.iter().find(|r| (r.tau - tau).abs() < 1e-12)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty IoU grid".into()));
    }
    if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::InvalidParameter(format!("IoU threshold {t} outside (0, 1]")));
    }
    Ok(())
}

/// Same-slice pairs with positive IoU, sorted by IoU descending then index.
fn candidate_pairs(pred: &[BoundingBox2D], gt: &[BoundingBox2D]) -> Vec<(f64, usize, usize)> {
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let iou = p.iou(g);
            if iou > 0.0 {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pairs
}

fn greedy_matches(pairs: &[(f64, usize, usize)], n_pred: usize, n_gt: usize, tau: f64) -> usize {
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut tp = 0;
    for &(iou, i, j) in pairs {
        if iou < tau {
            break;
        }
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            tp += 1;
        }
    }
    tp
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluation pooled over several cases; each entry is `(predicted, ground truth)`.
pub fn detection_eval_pooled(
    cases: &[(Vec<BoundingBox2D>, Vec<BoundingBox2D>)],
    grid: &[f64],
) -> Result<DetectionReport> {
    check_grid(grid)?;
    let matched: Vec<_> = cases
        .iter()
        .map(|(p, g)| (candidate_pairs(p, g), p.len(), g.len()))
        .collect();
    let n_pred: usize = cases.iter().map(|(p, _)| p.len()).sum();
    let n_gt: usize = cases.iter().map(|(_, g)| g.len()).sum();
    let thresholds = grid
        .iter()
        .map(|&tau| {
            let tp: usize = matched
                .iter()
                .map(|(pairs, np, ng)| greedy_matches(pairs, *np, *ng, tau))
                .sum();
            ThresholdResult {
                tau,
                precision: ratio(tp, n_pred),
                recall: ratio(tp, n_gt),
                tp,
                fp: n_pred - tp,
                fn_: n_gt - tp,
            }
        })
        .collect();
    Ok(DetectionReport { thresholds })
}

pub fn detection_eval(pred: &[BoundingBox2D], gt: &[BoundingBox2D], grid: &[f64]) -> Result<DetectionReport> {
    detection_eval_pooled(&[(pred.to_vec(), gt.to_vec())], grid)
}

/// Ground-truth error regions: components → unification → area filter.
/// The oversized-box rule is not applied to ground truth.
pub fn gt_error_boxes(e_gt: &BinaryMask, min_d: usize, min_area_mm2: f64) -> Result<Vec<BoundingBox2D>> {
    detection::detect_error_regions(
        e_gt,
        &DetectionParams {
            min_d,
            min_area_mm2,
            discard_half_slice: false,
            gt_context: None,
        },
    )
}

/// One row per `(method, τ)`.
pub fn write_report_csv<'a>(
    reports: impl IntoIterator<Item = (&'a str, &'a DetectionReport)>,
    out: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "tau", "precision", "recall", "tp", "fp", "fn"])?;
    for (method, report) in reports {
        for r in &report.thresholds {
            w.write_record([
                method.to_string(),
                format!("{:.2}", r.tau),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.recall),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    fn g() -> VolumeGeometry {
        VolumeGeometry::unit(100, 100, 2).unwrap()
    }

    fn bx(k: usize, r0: usize, c0: usize, r1: usize, c1: usize) -> BoundingBox2D {
        BoundingBox2D::new(k, (r0, c0), (r1, c1), &g()).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let b = [bx(0, 10, 10, 20, 20)];
        let r = detection_eval(&b, &b, &DEFAULT_IOU_GRID).unwrap();
        for t in &r.thresholds {
            assert_eq!((t.precision, t.recall), (1.0, 1.0));
        }
    }

    #[test]
    fn threshold_sweep_between_010_and_015() {
        // 5×10 boxes offset by 8 columns: overlap 10, union 90
        let gt = [bx(0, 0, 0, 5, 10)];
        let pred = [bx(0, 0, 8, 5, 18)];
        let iou = pred[0].iou(&gt[0]);
        assert!((iou - 10.0 / 90.0).abs() < 1e-12);
        let r = detection_eval(&pred, &gt, &DEFAULT_IOU_GRID).unwrap();
        assert_eq!(r.at(0.05).unwrap().tp, 1);
        assert_eq!(r.at(0.10).unwrap().tp, 1);
        assert_eq!(r.at(0.15).unwrap().fp, 1);
        assert_eq!(r.at(0.20).unwrap().fp, 1);
    }

    #[test]
    fn no_predictions() {
        let r = detection_eval(&[], &[bx(0, 0, 0, 5, 5)], &DEFAULT_IOU_GRID).unwrap();
        for t in &r.thresholds {
            assert_eq!((t.precision, t.recall, t.fn_), (0.0, 0.0, 1));
        }
    }

    #[test]
    fn matching_is_within_slice_and_one_to_one() {
        let gt = [bx(0, 0, 0, 10, 10)];
        let pred = [bx(1, 0, 0, 10, 10), bx(0, 0, 0, 10, 10), bx(0, 0, 0, 10, 9)];
        let r = detection_eval(&pred, &gt, &[0.05]).unwrap();
        let t = r.thresholds[0];
        assert_eq!((t.tp, t.fp, t.fn_), (1, 2, 0));
    }

    #[test]
    fn grid_validation() {
        assert!(detection_eval(&[], &[], &[]).is_err());
        assert!(detection_eval(&[], &[], &[0.0]).is_err());
        assert!(detection_eval(&[], &[], &[1.5]).is_err());
    }

    #[test]
    fn gt_boxes_skip_oversized_rule() {
        let m = BinaryMask::filled(VolumeGeometry::unit(16, 16, 1).unwrap(), 1).unwrap();
        assert_eq!(gt_error_boxes(&m, 5, 100.0).unwrap().len(), 1);
    }

    #[test]
    fn csv_layout() {
        let r = detection_eval(&[], &[], &DEFAULT_IOU_GRID).unwrap();
        let mut out = Vec::new();
        write_report_csv([("segqc", &r)], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "method,tau,precision,recall,tp,fp,fn");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("segqc,0.05,"));
        assert!(lines[4].starts_with("segqc,0.20,"));
    }
}
