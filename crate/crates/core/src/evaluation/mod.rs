//! Evaluation harness: agreement statistics, correction curves, box
//! detection scores and stratified case selection.

pub mod curves;
pub mod detection_eval;
pub mod stats;
pub mod stratify;

pub use curves::{
    correction_curve_2d, correction_curve_3d, default_percent_grid, optimal_case_ranking, optimal_slice_ranking,
    random_correction_curve_2d, random_correction_curve_3d, sequential_slice_ranking, slices_for_percent,
    CorrectionCurve, SliceTable, DEFAULT_RANDOM_SEEDS,
};
pub use detection_eval::{
    detection_eval, detection_eval_pooled, gt_error_boxes, DetectionReport, ThresholdResult, DEFAULT_IOU_GRID,
};
pub use stats::{mae, paired_t_test, pearson, student_t_two_sided_p, TTest, SIGNIFICANCE_LEVEL};
pub use stratify::{stratified_select, Candidate, Selection, StratificationSpec};
