use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use segqc_core::manifest::{CaseEntry, Manifest};
use segqc_core::synth::{self, DetectionCaseSpec, SynthSpec, DEFAULT_ENSEMBLE_SIZE};
use segqc_core::volume::{write_volume, ScalarVolume};

use crate::output::parse_grid;
use crate::usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    /// Ellipsoid phantoms with masks perturbed to target Dice values.
    Phantom,
    /// Cylinders with blob errors and a boundary ribbon in the error estimate.
    Detection,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub n_cases: usize,
    /// `cols,rows,slices`.
    #[arg(long, default_value = "64,64,64")]
    pub dims: String,
    /// Voxel spacing in mm, `x,y,z`.
    #[arg(long, default_value = "1,1,1")]
    pub spacing: String,
    /// Target Dice values, cycled over cases.
    #[arg(long, default_value = "0.6,0.7,0.8,0.85,0.9,0.95")]
    pub targets: String,
    /// Error-predictor degradation in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = DEFAULT_ENSEMBLE_SIZE)]
    pub ensemble_size: usize,
    #[arg(long, value_enum, default_value = "phantom")]
    pub kind: DatasetKind,
    /// Blob errors per detection case.
    #[arg(long, default_value_t = 2)]
    pub blobs: usize,
    /// In-plane blob radius in voxels for detection cases.
    #[arg(long, default_value_t = 5)]
    pub blob_radius: usize,
    /// Leave the boundary ribbon out of detection error estimates.
    #[arg(long)]
    pub no_ribbon: bool,
}

fn triple<T: Copy>(v: &[T], what: &str) -> Result<[T; 3]> {
    <[T; 3]>::try_from(v).map_err(|_| usage(format!("{what} needs three comma-separated values")))
}

fn write_detection_case(
    spec: &DetectionCaseSpec,
    seed: u64,
    index: usize,
    root: &Path,
) -> Result<CaseEntry> {
    let c = synth::generate_detection_case(spec, synth::derive_seed(seed, 5, index as u64))?;
    let id = synth::case_id(index);
    let dir = root.join(&id);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let scan = ScalarVolume::new(
        *c.truth.geometry(),
        c.truth.values().iter().map(|&v| if v == 1 { 200.0 } else { 50.0 }).collect(),
    )?;
    write_volume(&scan, dir.join("scan.sqv"))?;
    write_volume(&c.truth, dir.join("gt.sqv"))?;
    write_volume(&c.mask, dir.join("mask.sqv"))?;
    write_volume(&c.error_estimate, dir.join("error.sqv"))?;
    let rel = Path::new(&id);
    Ok(CaseEntry {
        case_id: id.clone(),
        scan_path: rel.join("scan.sqv.json"),
        mask_path: rel.join("mask.sqv.json"),
        error_path: Some(rel.join("error.sqv.json")),
        gt_path: Some(rel.join("gt.sqv.json")),
        ensemble_dir: None,
        target_dice: None,
        achieved_dice: Some(segqc_core::metrics::dice(&c.mask, &c.truth)?),
    })
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let dims_f = parse_grid(&a.dims)?;
    if dims_f.iter().any(|d| d.fract() != 0.0 || *d < 1.0) {
        return Err(usage("--dims must be positive integers"));
    }
    let dims = triple(&dims_f, "--dims")?.map(|d| d as usize);
    let spacing_mm = triple(&parse_grid(&a.spacing)?, "--spacing")?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let cases: Vec<CaseEntry> = match a.kind {
        DatasetKind::Phantom => {
            let spec = SynthSpec {
                seed: a.seed,
                dims,
                spacing_mm,
                n_cases: a.n_cases,
                quality_targets: parse_grid(&a.targets)?,
                noise_level: a.noise,
                ensemble_size: a.ensemble_size,
            };
            spec.validate()?;
            (0..spec.n_cases)
                .into_par_iter()
                .map(|i| Ok(synth::write_case(&synth::generate_case(&spec, i)?, &a.out)?))
                .collect::<Result<_>>()?
        }
        DatasetKind::Detection => {
            let spec = DetectionCaseSpec {
                dims,
                spacing_mm,
                n_blobs: a.blobs,
                blob_radius: a.blob_radius,
                ribbon: !a.no_ribbon,
            };
            (0..a.n_cases)
                .into_par_iter()
                .map(|i| write_detection_case(&spec, a.seed, i, &a.out))
                .collect::<Result<_>>()?
        }
    };
    let path = a.out.join("manifest.json");
    Manifest { cases }.save(&path)?;
    println!("{}", path.display());
    Ok(())
}
