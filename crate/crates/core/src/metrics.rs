//! Ground-truth overlap metrics and their estimates from a voxel error map.
//!
//! Given a mask `M` and an estimated error probability `Ê`, the estimated
//! truth is `T̂ = M·(1 − Ê) + (1 − M)·Ê` and the estimated intersection is
//! `Σ m·(1 − ê)`. Dice, IoU, RVD and ARVD are then evaluated with `T̂` in
//! place of `T`. With the binary oracle `Ê = |T − M|` the estimates equal the
//! true metrics exactly (at `ε = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, ProbabilityVolume};

pub const DEFAULT_EPSILON: f64 = 1e-7;

/// Denominator used by the Dice estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiceEstMode {
    /// `2·Σm(1−ê) / (Σm + Σt̂ + ε)`; exact under the oracle.
    #[default]
    Standard,
    /// `2·Σm(1−ê) / (2·Σm + Σt̂ + ε)`, the printed variant.
    PaperLiteral,
}

impl std::str::FromStr for DiceEstMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "paper-literal" => Ok(Self::PaperLiteral),
            other => Err(Error::InvalidParameter(format!("unknown dice mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DiceEstMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::PaperLiteral => "paper-literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub epsilon: f64,
    pub dice_est_mode: DiceEstMode,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            dice_est_mode: DiceEstMode::Standard,
        }
    }
}

impl MetricConfig {
    pub fn new(epsilon: f64, dice_est_mode: DiceEstMode) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(Self {
            epsilon,
            dice_est_mode,
        })
    }

    /// Zero smoothing; used for exactness checks.
    pub fn exact() -> Self {
        Self {
            epsilon: 0.0,
            dice_est_mode: DiceEstMode::Standard,
        }
    }
}

/// Which overlap/size metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dice,
    Iou,
    Arvd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dice, Metric::Iou, Metric::Arvd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Iou => "iou",
            Metric::Arvd => "arvd",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dice" => Ok(Metric::Dice),
            "iou" => Ok(Metric::Iou),
            "arvd" | "avdr" => Ok(Metric::Arvd),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Voxel counts of a binary mask pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub mask: u64,
    pub truth: u64,
    pub intersection: u64,
    /// `Σ|m − t|`
    pub difference: u64,
}

impl OverlapCounts {
    pub fn from_slices(m: &[u8], t: &[u8]) -> Self {
        let mut c = Self::default();
        for (&m, &t) in m.iter().zip(t) {
            let (m, t) = (m as u64, t as u64);
            c.mask += m;
            c.truth += t;
            c.intersection += m & t;
            c.difference += m ^ t;
        }
        c
    }

    /// Both-empty pairs score 1.
    pub fn dice(&self) -> f64 {
        let den = self.mask + self.truth;
        if den == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / den as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let den = self.mask + self.truth - self.intersection;
        if den == 0 {
            1.0
        } else {
            self.intersection as f64 / den as f64
        }
    }

    /// `None` when the ground truth is empty.
    pub fn arvd(&self) -> Option<f64> {
        (self.truth > 0).then(|| self.difference as f64 / self.truth as f64)
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dice => Some(self.dice()),
            Metric::Iou => Some(self.iou()),
            Metric::Arvd => self.arvd(),
        }
    }

    fn add(&mut self, other: &Self) {
        self.mask += other.mask;
        self.truth += other.truth;
        self.intersection += other.intersection;
        self.difference += other.difference;
    }
}

pub fn overlap_counts(m: &BinaryMask, t: &BinaryMask) -> Result<OverlapCounts> {
    m.geometry().check_compatible(t.geometry())?;
    Ok(OverlapCounts::from_slices(m.values(), t.values()))
}

/// `2|M∩T| / (|M| + |T|)`; 1 when both masks are empty.
pub fn dice(m: &BinaryMask, t: &BinaryMask) -> Result<f64> {
    Ok(overlap_counts(m, t)?.dice())
}

/// `|M∩T| / |M∪T|`; 1 when both masks are empty.
pub fn iou(m: &BinaryMask, t: &BinaryMask) -> Result<f64> {
    Ok(overlap_counts(m, t)?.iou())
}

/// `Σ|m − t| / Σt`. Not symmetric in its arguments.
pub fn arvd(m: &BinaryMask, t: &BinaryMask) -> Result<f64> {
    overlap_counts(m, t)?
        .arvd()
        .ok_or_else(|| Error::Precondition("arvd needs a non-empty ground truth".into()))
}

/// True metrics of one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceTruth {
    pub k: usize,
    pub dice: f64,
    pub iou: f64,
    pub arvd: Option<f64>,
    /// Whether `M` or `T` has any voxel on this slice.
    pub nonempty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMetrics {
    pub dice3d: f64,
    pub iou3d: f64,
    pub arvd3d: Option<f64>,
    pub slices: Vec<SliceTruth>,
}

impl TrueMetrics {
    pub fn metric3d(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dice => Some(self.dice3d),
            Metric::Iou => Some(self.iou3d),
            Metric::Arvd => self.arvd3d,
        }
    }
}

impl SliceTruth {
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dice => self.nonempty.then_some(self.dice),
            Metric::Iou => self.nonempty.then_some(self.iou),
            Metric::Arvd => self.arvd,
        }
    }
}

pub fn true_metrics(m: &BinaryMask, t: &BinaryMask) -> Result<TrueMetrics> {
    m.geometry().check_compatible(t.geometry())?;
    let mut total = OverlapCounts::default();
    let slices = m
        .slices()
        .zip(t.slices())
        .map(|(ms, ts)| {
            let c = OverlapCounts::from_slices(ms.as_slice(), ts.as_slice());
            total.add(&c);
            SliceTruth {
                k: ms.index(),
                dice: c.dice(),
                iou: c.iou(),
                arvd: c.arvd(),
                nonempty: c.mask + c.truth > 0,
            }
        })
        .collect();
    Ok(TrueMetrics {
        dice3d: total.dice(),
        iou3d: total.iou(),
        arvd3d: total.arvd(),
        slices,
    })
}

// ---------------------------------------------------------------------------
// Estimates
// ---------------------------------------------------------------------------

/// `t̂ = m·(1 − ê) + (1 − m)·ê`
#[inline]
pub fn estimated_truth_voxel(m: u8, e: f64) -> f64 {
    if m != 0 {
        1.0 - e
    } else {
        e
    }
}

pub fn estimated_truth(m: &BinaryMask, e_hat: &ProbabilityVolume) -> Result<ProbabilityVolume> {
    m.geometry().check_compatible(e_hat.geometry())?;
    let values = m
        .values()
        .iter()
        .zip(e_hat.values())
        .map(|(&m, &e)| if m != 0 { 1.0 - e } else { e })
        .collect();
    ProbabilityVolume::new(*m.geometry(), values)
}

/// Running sums shared by all estimated metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimateSums {
    /// `Σm`
    pub mask: f64,
    /// `Σt̂`
    pub truth: f64,
    /// `Σm(1 − ê)`
    pub intersection: f64,
    /// `Σ(m − t̂)`
    pub signed_diff: f64,
    /// `Σ|m − t̂|`
    pub abs_diff: f64,
    /// `Σê`
    pub error: f64,
}

impl EstimateSums {
    pub fn from_slices(m: &[u8], e: &[f32]) -> Self {
        let mut s = Self::default();
        for (&m, &e) in m.iter().zip(e) {
            let e = e as f64;
            let mf = m as f64;
            let t = estimated_truth_voxel(m, e);
            s.mask += mf;
            s.truth += t;
            s.intersection += mf * (1.0 - e);
            s.signed_diff += mf - t;
            s.abs_diff += (mf - t).abs();
            s.error += e;
        }
        s
    }

    pub fn add(&mut self, o: &Self) {
        self.mask += o.mask;
        self.truth += o.truth;
        self.intersection += o.intersection;
        self.signed_diff += o.signed_diff;
        self.abs_diff += o.abs_diff;
        self.error += o.error;
    }

    pub fn dice(&self, cfg: &MetricConfig) -> f64 {
        let mask_term = match cfg.dice_est_mode {
            DiceEstMode::Standard => self.mask,
            DiceEstMode::PaperLiteral => 2.0 * self.mask,
        };
        ratio(2.0 * self.intersection, mask_term + self.truth + cfg.epsilon, 1.0)
    }

    pub fn iou(&self, cfg: &MetricConfig) -> f64 {
        ratio(
            self.intersection,
            self.mask + self.truth - self.intersection + cfg.epsilon,
            1.0,
        )
    }

    pub fn rvd(&self, cfg: &MetricConfig) -> f64 {
        ratio(self.signed_diff, self.truth + cfg.epsilon, 0.0)
    }

    pub fn arvd(&self, cfg: &MetricConfig) -> f64 {
        ratio(self.abs_diff, self.truth + cfg.epsilon, 0.0)
    }

    /// `Σê / (Σt̂ + ε)`; equals [`Self::arvd`] for binary masks.
    pub fn arvd_simplified(&self, cfg: &MetricConfig) -> f64 {
        ratio(self.error, self.truth + cfg.epsilon, 0.0)
    }

    /// The dice/iou denominator is positive beyond smoothing.
    pub fn is_defined(&self, cfg: &MetricConfig) -> bool {
        self.mask + self.truth > cfg.epsilon
    }
}

/// `num / den`; a zero denominator (only reachable with `ε = 0`) gives
/// `empty` for a zero numerator and `+∞` otherwise.
fn ratio(num: f64, den: f64, empty: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        empty
    } else {
        f64::INFINITY
    }
}

pub fn estimate_sums(m: &BinaryMask, e_hat: &ProbabilityVolume) -> Result<EstimateSums> {
    m.geometry().check_compatible(e_hat.geometry())?;
    let mut total = EstimateSums::default();
    for (ms, es) in m.slices().zip(e_hat.slices()) {
        total.add(&EstimateSums::from_slices(ms.as_slice(), es.as_slice()));
    }
    Ok(total)
}

pub fn dice_est(m: &BinaryMask, e_hat: &ProbabilityVolume, cfg: &MetricConfig) -> Result<f64> {
    Ok(estimate_sums(m, e_hat)?.dice(cfg))
}

pub fn iou_est(m: &BinaryMask, e_hat: &ProbabilityVolume, cfg: &MetricConfig) -> Result<f64> {
    Ok(estimate_sums(m, e_hat)?.iou(cfg))
}

pub fn rvd_est(m: &BinaryMask, e_hat: &ProbabilityVolume, cfg: &MetricConfig) -> Result<f64> {
    Ok(estimate_sums(m, e_hat)?.rvd(cfg))
}

pub fn arvd_est(m: &BinaryMask, e_hat: &ProbabilityVolume, cfg: &MetricConfig) -> Result<f64> {
    Ok(estimate_sums(m, e_hat)?.arvd(cfg))
}

pub fn arvd_est_simplified(
    m: &BinaryMask,
    e_hat: &ProbabilityVolume,
    cfg: &MetricConfig,
) -> Result<f64> {
    Ok(estimate_sums(m, e_hat)?.arvd_simplified(cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceEstimate {
    pub slice_index: usize,
    pub dice_est: f64,
    pub iou_est: f64,
    /// `None` when `Σt̂ ≤ ε` on this slice.
    pub arvd_est: Option<f64>,
    pub defined: bool,
}

impl SliceEstimate {
    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dice => self.defined.then_some(self.dice_est),
            Metric::Iou => self.defined.then_some(self.iou_est),
            Metric::Arvd => self.arvd_est,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityEstimate {
    pub dice_est: f64,
    pub iou_est: f64,
    pub rvd_est: f64,
    pub arvd_est: f64,
    pub arvd_est_simplified: f64,
    pub per_slice: Vec<SliceEstimate>,
}

/// Mean of per-slice estimates over `defined` slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceAggregate {
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub arvd: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
}

impl QualityEstimate {
    pub fn metric3d(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Dice => self.dice_est,
            Metric::Iou => self.iou_est,
            Metric::Arvd => self.arvd_est,
        }
    }

    pub fn aggregate_2d(&self) -> SliceAggregate {
        fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
            let (n, s) = it.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
            (n > 0).then(|| s / n as f64)
        }
        let defined = || self.per_slice.iter().filter(|s| s.defined);
        let n_defined = defined().count();
        SliceAggregate {
            dice: mean(defined().map(|s| s.dice_est)),
            iou: mean(defined().map(|s| s.iou_est)),
            arvd: mean(defined().filter_map(|s| s.arvd_est)),
            n_defined,
            n_undefined: self.per_slice.len() - n_defined,
        }
    }
}

/// 3D and per-slice estimates. The 3D sums are the index-ordered sum of the
/// slice sums, so every 3D value is consistent with its slices.
pub fn estimate_all(
    m: &BinaryMask,
    e_hat: &ProbabilityVolume,
    cfg: &MetricConfig,
) -> Result<QualityEstimate> {
    m.geometry().check_compatible(e_hat.geometry())?;
    let mut total = EstimateSums::default();
    let per_slice = m
        .slices()
        .zip(e_hat.slices())
        .map(|(ms, es)| {
            let s = EstimateSums::from_slices(ms.as_slice(), es.as_slice());
            total.add(&s);
            SliceEstimate {
                slice_index: ms.index(),
                dice_est: s.dice(cfg),
                iou_est: s.iou(cfg),
                arvd_est: (s.truth > cfg.epsilon).then(|| s.arvd(cfg)),
                defined: s.is_defined(cfg),
            }
        })
        .collect();
    Ok(QualityEstimate {
        dice_est: total.dice(cfg),
        iou_est: total.iou(cfg),
        rvd_est: total.rvd(cfg),
        arvd_est: total.arvd(cfg),
        arvd_est_simplified: total.arvd_simplified(cfg),
        per_slice,
    })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub k: usize,
    pub dice: f64,
    pub iou: f64,
    pub arvd: Option<f64>,
    pub defined: bool,
}

/// JSON report for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub case_id: String,
    pub mode: DiceEstMode,
    pub epsilon: f64,
    pub dice3d: f64,
    pub iou3d: f64,
    pub rvd3d: f64,
    pub arvd3d: f64,
    pub arvd3d_simplified: f64,
    pub slices: Vec<SliceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TrueMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

impl QualityReport {
    pub fn new(case_id: impl Into<String>, estimate: &QualityEstimate, cfg: &MetricConfig) -> Self {
        Self {
            case_id: case_id.into(),
            mode: cfg.dice_est_mode,
            epsilon: cfg.epsilon,
            dice3d: estimate.dice_est,
            iou3d: estimate.iou_est,
            rvd3d: estimate.rvd_est,
            arvd3d: estimate.arvd_est,
            arvd3d_simplified: estimate.arvd_est_simplified,
            slices: estimate
                .per_slice
                .iter()
                .map(|s| SliceReport {
                    k: s.slice_index,
                    dice: s.dice_est,
                    iou: s.iou_est,
                    arvd: s.arvd_est,
                    defined: s.defined,
                })
                .collect(),
            truth: None,
            generated_at: None,
        }
    }

    pub fn with_truth(mut self, truth: TrueMetrics) -> Self {
        self.truth = Some(truth);
        self
    }
}
