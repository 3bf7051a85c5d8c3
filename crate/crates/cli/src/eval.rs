//! Batch evaluation over a manifest: metric agreement tables, detection
//! precision/recall and correction curves.

use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use segqc_core::detection::{self, DetectionParams};
use segqc_core::evaluation::{
    self, correction_curve_2d, correction_curve_3d, detection_eval_pooled, gt_error_boxes, mae,
    optimal_case_ranking, optimal_slice_ranking, paired_t_test, pearson, random_correction_curve_2d,
    random_correction_curve_3d, sequential_slice_ranking, CorrectionCurve, DEFAULT_RANDOM_SEEDS,
};
use segqc_core::extraction::{self, BandSource};
use segqc_core::manifest::{CaseEntry, Manifest};
use segqc_core::metrics::{self, estimate_all, true_metrics, Metric};
use segqc_core::ranking::{self, Direction, RankPolicy, RankedList};
use segqc_core::tta::{self, MaskEnsemble};
use segqc_core::volume::{read_mask, read_probability, BinaryMask, ProbabilityVolume};

use crate::case::{detection_params, read_ensemble_masks};
use crate::output::{emit, fmt_f, parse_grid};
use crate::{usage, DetectOpts, ExtractOpts, MetricArg, MetricOpts};

struct Loaded {
    id: String,
    mask: BinaryMask,
    truth: BinaryMask,
    error: ProbabilityVolume,
    ensemble: Option<Vec<BinaryMask>>,
}

fn load_case(c: &CaseEntry, with_ensemble: bool) -> Result<Loaded> {
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| usage(format!("case {} has no {what}", c.case_id)))
    };
    let ensemble = match (&c.ensemble_dir, with_ensemble) {
        (Some(dir), true) => Some(read_ensemble_masks(dir)?),
        _ => None,
    };
    Ok(Loaded {
        id: c.case_id.clone(),
        mask: read_mask(&c.mask_path)?,
        truth: read_mask(need(&c.gt_path, "gt_path")?)?,
        error: read_probability(need(&c.error_path, "error_path")?)?,
        ensemble,
    })
}

fn csv_text(rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

// ---------------------------------------------------------------------------
// eval-metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalMetricsArgs {
    /// Case manifest with `gt_path` and `error_path` for every case.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub metric: MetricOpts,
    /// Skip the TTA baseline even when ensembles are listed.
    #[arg(long)]
    pub no_tta: bool,
    /// Optional per-case CSV with true and estimated 3D metrics.
    #[arg(long)]
    pub per_case: Option<PathBuf>,
    /// Summary table path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `(estimate, truth)` pairs for one metric.
type Pairs = Vec<(f64, f64)>;

struct CaseEval {
    id: String,
    truth3d: [Option<f64>; 3],
    est3d: [Option<f64>; 3],
    est2d: [Pairs; 3],
    tta3d: Option<[Option<f64>; 3]>,
    tta2d: Option<[Pairs; 3]>,
}

fn evaluate_case(l: &Loaded, cfg: &metrics::MetricConfig) -> Result<CaseEval> {
    let est = estimate_all(&l.mask, &l.error, cfg)?;
    let truth = true_metrics(&l.mask, &l.truth)?;
    let truth3d = Metric::ALL.map(|m| truth.metric3d(m));
    let est3d = Metric::ALL.map(|m| Some(est.metric3d(m)));
    let est2d = Metric::ALL.map(|m| {
        est.per_slice
            .iter()
            .zip(&truth.slices)
            .filter_map(|(e, t)| Some((e.metric(m)?, t.metric(m)?)))
            .collect()
    });
    let (tta3d, tta2d) = match &l.ensemble {
        Some(members) => {
            let ens = MaskEnsemble::new(members.clone())
                .with_context(|| format!("ensemble of case {}", l.id))?;
            let three = Metric::ALL.map(|m| tta::tta_metric_estimate(&ens, m).ok());
            let two = Metric::ALL.map(|m| {
                tta::tta_slice_estimates(&ens, m)
                    .into_iter()
                    .zip(&truth.slices)
                    .filter_map(|(e, t)| Some((e?, t.metric(m)?)))
                    .collect()
            });
            (Some(three), Some(two))
        }
        None => (None, None),
    };
    Ok(CaseEval {
        id: l.id.clone(),
        truth3d,
        est3d,
        est2d,
        tta3d,
        tta2d,
    })
}

fn stats_row(metric: Metric, dim: &str, method: &str, pairs: &[(f64, f64)]) -> Vec<String> {
    let (est, truth): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let m = mae(&est, &truth).ok();
    let r = pearson(&est, &truth).ok();
    let t = paired_t_test(&est, &truth).ok();
    vec![
        metric.name().to_string(),
        dim.to_string(),
        method.to_string(),
        pairs.len().to_string(),
        fmt_f(m),
        fmt_f(r),
        fmt_f(t.map(|t| t.t)),
        fmt_f(t.map(|t| t.p)),
        t.map_or("NaN".into(), |t| t.is_significant().to_string()),
    ]
}

pub fn eval_metrics(a: &EvalMetricsArgs) -> Result<()> {
    let cfg = a.metric.config()?;
    let manifest = Manifest::load(&a.manifest)?;
    let evals: Vec<CaseEval> = manifest
        .cases
        .par_iter()
        .map(|c| evaluate_case(&load_case(c, !a.no_tta)?, &cfg))
        .collect::<Result<_>>()?;
    let with_tta = evals.iter().all(|e| e.tta3d.is_some()) && !evals.is_empty();

    let mut rows = vec![["metric", "dimension", "method", "n", "mae", "pearson", "t", "p", "significant"]
        .map(String::from)
        .to_vec()];
    for (mi, metric) in Metric::ALL.into_iter().enumerate() {
        let pairs_3d = |pick: &dyn Fn(&CaseEval) -> Option<f64>| -> Pairs {
            evals
                .iter()
                .filter_map(|e| Some((pick(e)?, e.truth3d[mi]?)))
                .collect()
        };
        rows.push(stats_row(metric, "3d", "segqc", &pairs_3d(&|e| e.est3d[mi])));
        if with_tta {
            rows.push(stats_row(metric, "3d", "tta", &pairs_3d(&|e| e.tta3d.as_ref()?[mi])));
        }
        let pooled: Pairs = evals.iter().flat_map(|e| e.est2d[mi].iter().copied()).collect();
        rows.push(stats_row(metric, "2d", "segqc", &pooled));
        if with_tta {
            let pooled: Pairs = evals
                .iter()
                .flat_map(|e| e.tta2d.as_ref().map(|t| t[mi].clone()).unwrap_or_default())
                .collect();
            rows.push(stats_row(metric, "2d", "tta", &pooled));
        }
    }
    emit(a.out.as_deref(), &csv_text(&rows))?;

    if let Some(path) = &a.per_case {
        let mut rows = vec![[
            "case_id", "dice_true", "dice_est", "iou_true", "iou_est", "arvd_true", "arvd_est", "dice_tta", "iou_tta",
            "arvd_tta",
        ]
        .map(String::from)
        .to_vec()];
        for e in &evals {
            let tta = |i: usize| e.tta3d.as_ref().and_then(|t| t[i]);
            rows.push(vec![
                e.id.clone(),
                fmt_f(e.truth3d[0]),
                fmt_f(e.est3d[0]),
                fmt_f(e.truth3d[1]),
                fmt_f(e.est3d[1]),
                fmt_f(e.truth3d[2]),
                fmt_f(e.est3d[2]),
                fmt_f(tta(0)),
                fmt_f(tta(1)),
                fmt_f(tta(2)),
            ]);
        }
        emit(Some(path), &csv_text(&rows))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-detect
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractionMode {
    On,
    Off,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalDetectArgs {
    /// Case manifest with `gt_path` and `error_path` for every case.
    #[arg(long)]
    pub manifest: PathBuf,
    /// IoU thresholds, comma separated.
    #[arg(long, default_value = "0.05,0.10,0.15,0.20")]
    pub grid: String,
    /// Run with the estimated-error extraction step, without it, or both.
    #[arg(long, value_enum, default_value = "both")]
    pub extraction: ExtractionMode,
    #[command(flatten)]
    pub detect: DetectOpts,
    #[command(flatten)]
    pub extract: ExtractOpts,
    /// Table path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

type BoxPairs = Vec<(Vec<detection::BoundingBox2D>, Vec<detection::BoundingBox2D>)>;

pub fn eval_detect(a: &EvalDetectArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    let manifest = Manifest::load(&a.manifest)?;
    let modes: Vec<(&str, bool)> = match a.extraction {
        ExtractionMode::On => vec![("with_extraction", true)],
        ExtractionMode::Off => vec![("without_extraction", false)],
        ExtractionMode::Both => vec![("with_extraction", true), ("without_extraction", false)],
    };
    let params = a.extract.params();
    let per_case: Vec<Vec<(Vec<_>, Vec<_>)>> = manifest
        .cases
        .par_iter()
        .map(|c| -> Result<_> {
            let l = load_case(c, false)?;
            let gt_err = extraction::corrections_ground_truth_error(&l.mask, &l.truth)?;
            let gt_boxes = gt_error_boxes(&gt_err, a.detect.min_d, a.detect.min_area_mm2)?;
            let binary = extraction::binarize(&l.error, a.detect.threshold)?;
            let det = DetectionParams {
                gt_context: Some(gt_boxes.clone()),
                ..detection_params(&a.detect)
            };
            modes
                .iter()
                .map(|&(_, extract)| {
                    let x = if extract {
                        let source = (params.band_source == BandSource::Mask).then_some(&l.mask);
                        extraction::extract_estimated_error(&binary, &params, source)?
                    } else {
                        binary.clone()
                    };
                    Ok((detection::detect_error_regions(&x, &det)?, gt_boxes.clone()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (i, (label, _)) in modes.iter().enumerate() {
        let pairs: BoxPairs = per_case.iter().map(|c| c[i].clone()).collect();
        reports.push((*label, detection_eval_pooled(&pairs, &grid)?));
    }
    let mut buf = Vec::new();
    evaluation::detection_eval::write_report_csv(reports.iter().map(|(l, r)| (*l, r)), &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

// ---------------------------------------------------------------------------
// eval-correction
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvalCorrectionArgs {
    /// Case manifest with `gt_path` and `error_path` for every case.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Seed for the random baselines.
    #[arg(long)]
    pub seed: u64,
    /// Number of shuffles averaged for random baselines.
    #[arg(long, default_value_t = DEFAULT_RANDOM_SEEDS)]
    pub seeds: usize,
    /// Percentages of slices corrected for the 2D curves, comma separated
    /// (default: 0, 5, ..., 100).
    #[arg(long)]
    pub percents: Option<String>,
    /// Estimated metric used by the metric-estimate case ranking.
    #[arg(long, value_enum, default_value = "dice")]
    pub metric: MetricArg,
    #[command(flatten)]
    pub metric_opts: MetricOpts,
    /// Directory receiving `curves_3d.csv` and `curves_2d.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn curve_rows(rows: &mut Vec<Vec<String>>, label: &str, c: &CorrectionCurve, scale: f64) {
    for (x, y) in c.x.iter().zip(&c.y) {
        rows.push(vec![label.to_string(), format!("{:.6}", x * scale), format!("{y:.12}")]);
    }
}

pub fn eval_correction(a: &EvalCorrectionArgs) -> Result<()> {
    let cfg = a.metric_opts.config()?;
    let percents = match &a.percents {
        Some(s) => parse_grid(s)?,
        None => evaluation::default_percent_grid(),
    };
    let manifest = Manifest::load(&a.manifest)?;
    if manifest.cases.is_empty() {
        return Err(usage("manifest lists no cases"));
    }
    let metric: Metric = a.metric.into();
    let cases: Vec<Loaded> = manifest
        .cases
        .par_iter()
        .map(|c| load_case(c, true))
        .collect::<Result<_>>()?;
    let with_tta = cases.iter().all(|c| c.ensemble.is_some());

    // 3D
    let truth: Vec<(String, f64)> = cases
        .iter()
        .map(|c| Ok((c.id.clone(), metrics::dice(&c.mask, &c.truth)?)))
        .collect::<Result<_>>()?;
    let estimates: Vec<f64> = cases
        .par_iter()
        .map(|c| Ok(estimate_all(&c.mask, &c.error, &cfg)?.metric3d(metric)))
        .collect::<Result<_>>()?;
    let mut curves3d = vec![
        ("optimal", correction_curve_3d(&truth, &optimal_case_ranking(&truth))?),
        (
            "metric_estimate",
            correction_curve_3d(
                &truth,
                &RankedList::from_scores(
                    RankPolicy::MetricEstimate,
                    truth.iter().map(|(id, _)| id.clone()).zip(estimates),
                    ranking::worst_first(metric),
                ),
            )?,
        ),
        (
            "error_sum",
            correction_curve_3d(
                &truth,
                &ranking::rank_cases_error_sum(cases.iter().map(|c| (c.id.as_str(), &c.error))),
            )?,
        ),
    ];
    if with_tta {
        let scores: Vec<(String, f64)> = cases
            .par_iter()
            .map(|c| {
                let ens = MaskEnsemble::new(c.ensemble.clone().unwrap_or_default())?;
                Ok((c.id.clone(), tta::tta_metric_estimate(&ens, Metric::Dice)?))
            })
            .collect::<Result<_>>()?;
        let ranked = RankedList::from_scores(RankPolicy::MetricEstimate, scores, Direction::Ascending);
        curves3d.push(("tta", correction_curve_3d(&truth, &ranked)?));
    }
    curves3d.push(("random", random_correction_curve_3d(&truth, a.seeds, a.seed)?));

    // 2D
    let pairs: Vec<(BinaryMask, BinaryMask)> = cases.iter().map(|c| (c.mask.clone(), c.truth.clone())).collect();
    let optimal: Vec<_> = cases
        .iter()
        .map(|c| optimal_slice_ranking(&c.mask, &c.truth))
        .collect::<segqc_core::Result<_>>()?;
    let error_sum: Vec<_> = cases.iter().map(|c| ranking::rank_slices_error_sum(&c.error)).collect();
    let sequential: Vec<_> = cases
        .iter()
        .map(|c| sequential_slice_ranking(c.mask.geometry().n_slices()))
        .collect();
    let mut curves2d = vec![
        ("optimal", correction_curve_2d(&pairs, &optimal, &percents)?),
        ("error_sum", correction_curve_2d(&pairs, &error_sum, &percents)?),
    ];
    if with_tta {
        let entropy: Vec<_> = cases
            .par_iter()
            .map(|c| {
                let p = tta::mean_of_masks(c.ensemble.as_deref().unwrap_or_default())?;
                Ok(ranking::rank_slices_entropy(&p))
            })
            .collect::<Result<_>>()?;
        curves2d.push(("entropy", correction_curve_2d(&pairs, &entropy, &percents)?));
    }
    curves2d.push(("sequential", correction_curve_2d(&pairs, &sequential, &percents)?));
    curves2d.push(("random", random_correction_curve_2d(&pairs, false, &percents, a.seeds, a.seed)?));
    curves2d.push((
        "random_non_empty",
        random_correction_curve_2d(&pairs, true, &percents, a.seeds, a.seed)?,
    ));

    let mut rows = vec![vec!["policy".into(), "fraction".into(), "mean_dice".into()]];
    for (label, c) in &curves3d {
        curve_rows(&mut rows, label, c, 1.0);
    }
    emit(Some(&a.out_dir.join("curves_3d.csv")), &csv_text(&rows))?;

    let mut rows = vec![vec!["policy".into(), "percent".into(), "mean_dice".into()]];
    for (label, c) in &curves2d {
        curve_rows(&mut rows, label, c, 100.0);
    }
    emit(Some(&a.out_dir.join("curves_2d.csv")), &csv_text(&rows))?;
    println!("{}", a.out_dir.display());
    Ok(())
}
