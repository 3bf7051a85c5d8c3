//! Commands working on a single case (plus `rank`, which scores every case
//! of a manifest).

use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use segqc_core::detection::{self, DetectionParams};
use segqc_core::evaluation::gt_error_boxes;
use segqc_core::extraction::{extract_estimated_error, BandSource};
use segqc_core::manifest::{ensemble_members, Manifest};
use segqc_core::metrics::{estimate_all, true_metrics, Metric, QualityReport};
use segqc_core::ranking::{self, RankedList};
use segqc_core::tta::{self, MaskEnsemble};
use segqc_core::volume::{read_mask, read_probability, write_volume, ProbabilityVolume};
use serde::Serialize;

use crate::output::{emit, emit_json, read_error_mask, resolve_format, unix_time, Format};
use crate::{usage, Context, DetectOpts, ExtractOpts, MetricArg, MetricOpts};

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Binary segmentation mask.
    #[arg(long)]
    pub mask: PathBuf,
    /// Voxel error probability volume.
    #[arg(long)]
    pub error: PathBuf,
    /// Ground-truth mask; adds true metrics to the report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Identifier written into the report (default: mask file name).
    #[arg(long)]
    pub case_id: Option<String>,
    #[command(flatten)]
    pub metric: MetricOpts,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    [".sqv.json", ".sqv.raw", ".sqv"]
        .iter()
        .find_map(|s| name.strip_suffix(s))
        .unwrap_or(&name)
        .to_string()
}

pub fn metrics(a: &MetricsArgs, ctx: Context) -> Result<()> {
    let cfg = a.metric.config()?;
    let m = read_mask(&a.mask)?;
    let e = read_probability(&a.error)?;
    let est = estimate_all(&m, &e, &cfg)?;
    let mut report = QualityReport::new(a.case_id.clone().unwrap_or_else(|| stem(&a.mask)), &est, &cfg);
    if let Some(gt) = &a.gt {
        report = report.with_truth(true_metrics(&m, &read_mask(gt)?)?);
    }
    if !ctx.no_timestamp {
        report.generated_at = unix_time();
    }
    emit_json(a.out.as_deref(), &report)
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Binary error mask or error probability volume.
    #[arg(long)]
    pub input: PathBuf,
    /// Threshold applied to probability input.
    #[arg(long, default_value_t = segqc_core::detection::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Segmentation mask, required with `--band-source mask`.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub extract: ExtractOpts,
    /// Output mask path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn extract_error(a: &ExtractArgs) -> Result<()> {
    let x = read_error_mask(&a.input, a.threshold)?;
    let mask = match (a.extract.band_source, &a.mask) {
        (BandSource::Mask, None) => return Err(usage("--band-source mask requires --mask")),
        (BandSource::Mask, Some(p)) => Some(read_mask(p)?),
        (BandSource::SelfMask, _) => None,
    };
    let out = extract_estimated_error(&x, &a.extract.params(), mask.as_ref())?;
    write_volume(&out, &a.out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Binary error mask or error probability volume.
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth error mask; switches the oversized-box rule to evaluation mode.
    #[arg(long)]
    pub gt_error: Option<PathBuf>,
    #[command(flatten)]
    pub detect: DetectOpts,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Boxes path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn detection_params(opts: &DetectOpts) -> DetectionParams {
    DetectionParams {
        min_d: opts.min_d,
        min_area_mm2: opts.min_area_mm2,
        discard_half_slice: !opts.keep_oversized,
        gt_context: None,
    }
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    let e = read_error_mask(&a.input, a.detect.threshold)?;
    let mut params = detection_params(&a.detect);
    if let Some(gt) = &a.gt_error {
        let gt = read_mask(gt)?;
        params.gt_context = Some(gt_error_boxes(&gt, a.detect.min_d, a.detect.min_area_mm2)?);
    }
    let boxes = detection::detect_error_regions(&e, &params)?;
    let mut buf = Vec::new();
    match resolve_format(a.format, a.out.as_ref()) {
        Format::Json => {
            detection::write_boxes_json(&boxes, &mut buf)?;
            buf.push(b'\n');
        }
        Format::Csv => detection::write_boxes_csv(&boxes, &mut buf)?,
    }
    emit(a.out.as_deref(), &buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CasePolicy {
    /// Estimated metric of the case.
    MetricEstimate,
    /// Summed error probability of the case.
    ErrorSum,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Case manifest; every case needs an `error_path`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "dice")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "metric-estimate")]
    pub policy: CasePolicy,
    #[command(flatten)]
    pub metric_opts: MetricOpts,
    /// Ranking path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn rank(a: &RankArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let cfg = a.metric_opts.config()?;
    let policy = a.policy;
    let scored: Vec<(String, f64)> = manifest
        .cases
        .par_iter()
        .map(|c| -> Result<(String, f64)> {
            let err_path = c
                .error_path
                .as_ref()
                .ok_or_else(|| usage(format!("case {} has no error_path", c.case_id)))?;
            let e = read_probability(err_path)?;
            let score = match policy {
                CasePolicy::ErrorSum => e.values().iter().map(|&v| v as f64).sum(),
                CasePolicy::MetricEstimate => {
                    let m = read_mask(&c.mask_path)?;
                    estimate_all(&m, &e, &cfg)?.metric3d(a.metric.into())
                }
            };
            Ok((c.case_id.clone(), score))
        })
        .collect::<Result<_>>()?;
    let ranked = match policy {
        CasePolicy::MetricEstimate => RankedList::from_scores(
            ranking::RankPolicy::MetricEstimate,
            scored,
            ranking::worst_first(a.metric.into()),
        ),
        CasePolicy::ErrorSum => {
            RankedList::from_scores(ranking::RankPolicy::ErrorSum, scored, ranking::Direction::Descending)
        }
    };
    emit_json(a.out.as_deref(), &ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SlicePolicy {
    /// Summed error probability per slice (needs `--error`).
    ErrorSum,
    /// Summed voxel entropy of the mean ensemble prediction (needs
    /// `--ensemble-dir` or `--probability`).
    Entropy,
}

#[derive(Debug, Args)]
pub struct RankSlicesArgs {
    #[arg(long, value_enum, default_value = "error-sum")]
    pub policy: SlicePolicy,
    /// Error probability volume.
    #[arg(long)]
    pub error: Option<PathBuf>,
    /// Directory of ensemble member masks.
    #[arg(long)]
    pub ensemble_dir: Option<PathBuf>,
    /// Foreground probability volume.
    #[arg(long)]
    pub probability: Option<PathBuf>,
    /// Ranking path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn read_ensemble_masks(dir: &Path) -> Result<Vec<segqc_core::BinaryMask>> {
    let members = ensemble_members(dir)?;
    if members.is_empty() {
        anyhow::bail!("no *.sqv.json volumes in {}", dir.display());
    }
    members
        .iter()
        .map(|p| read_mask(p).with_context(|| format!("reading ensemble member {}", p.display())))
        .collect()
}

pub fn rank_slices(a: &RankSlicesArgs) -> Result<()> {
    let ranked = match a.policy {
        SlicePolicy::ErrorSum => {
            let e = a
                .error
                .as_ref()
                .ok_or_else(|| usage("--policy error-sum requires --error"))?;
            ranking::rank_slices_error_sum(&read_probability(e)?)
        }
        SlicePolicy::Entropy => {
            let p: ProbabilityVolume = match (&a.ensemble_dir, &a.probability) {
                (Some(dir), None) => tta::mean_of_masks(&read_ensemble_masks(dir)?)?,
                (None, Some(p)) => read_probability(p)?,
                _ => return Err(usage("--policy entropy requires exactly one of --ensemble-dir, --probability")),
            };
            ranking::rank_slices_entropy(&p)
        }
    };
    emit_json(a.out.as_deref(), &ranked)
}

#[derive(Debug, Args)]
pub struct TtaArgs {
    /// Directory of ensemble member masks (at least three).
    #[arg(long)]
    pub ensemble_dir: PathBuf,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TtaSlice {
    k: usize,
    dice: Option<f64>,
    iou: Option<f64>,
    arvd: Option<f64>,
    entropy: f64,
}

#[derive(Debug, Serialize)]
struct TtaReport {
    members: usize,
    dice: f64,
    iou: f64,
    /// `null` when the median mask is empty.
    arvd: Option<f64>,
    slices: Vec<TtaSlice>,
}

pub fn tta_estimate(a: &TtaArgs) -> Result<()> {
    let ensemble = MaskEnsemble::new(read_ensemble_masks(&a.ensemble_dir)?)?;
    let arvd = match tta::tta_metric_estimate(&ensemble, Metric::Arvd) {
        Ok(v) => Some(v),
        Err(e) if e.is_precondition() => {
            log::warn!("{e}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let per = |m| tta::tta_slice_estimates(&ensemble, m);
    let (d, i, r) = (per(Metric::Dice), per(Metric::Iou), per(Metric::Arvd));
    let entropy = tta::slice_entropy(&tta::mean_probability(&ensemble));
    let report = TtaReport {
        members: ensemble.len(),
        dice: tta::tta_metric_estimate(&ensemble, Metric::Dice)?,
        iou: tta::tta_metric_estimate(&ensemble, Metric::Iou)?,
        arvd,
        slices: (0..d.len())
            .map(|k| TtaSlice {
                k,
                dice: d[k],
                iou: i[k],
                arvd: r[k],
                entropy: entropy[k],
            })
            .collect(),
    };
    emit_json(a.out.as_deref(), &report)
}
