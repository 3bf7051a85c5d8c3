//! Synthetic data: ellipsoid phantoms, masks perturbed to a target Dice,
//! oracle and degraded error predictors, simulated TTA ensembles and
//! corrections-style cases for detection.
//!
//! Every function is a pure function of its inputs and seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction;
use crate::manifest::CaseEntry;
use crate::metrics;
use crate::tta::MaskEnsemble;
use crate::volume::{write_volume, BinaryMask, ProbabilityVolume, ScalarVolume, VolumeGeometry};

const STREAM_PHANTOM: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_TTA: u64 = 4;

/// Cap on generated perturbation operations.
const MAX_OPS: usize = 200_000;
/// Stop once this many consecutive operations flip nothing new.
const MAX_IDLE_OPS: usize = 2_000;
/// Chebyshev radius of the boundary region where the noisy predictor errs.
pub const NOISE_BAND_RADIUS: usize = 2;
/// Flip probability per band voxel at noise level 1.
pub const NOISE_FLIP_RATE: f64 = 0.3;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

const FOREGROUND_INTENSITY: f64 = 200.0;
const BACKGROUND_INTENSITY: f64 = 50.0;
const INTENSITY_NOISE_SD: f64 = 10.0;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seed for `(stream, index)`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(stream)) ^ index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// `[cols, rows, slices]`.
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub n_cases: usize,
    /// Target Dice per case, cycled when shorter than `n_cases`.
    pub quality_targets: Vec<f64>,
    /// Error-predictor degradation in `[0, 1]`.
    pub noise_level: f64,
    pub ensemble_size: usize,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        VolumeGeometry::new(self.dims, self.spacing_mm)?;
        if self.quality_targets.is_empty() {
            return Err(Error::InvalidParameter("no quality targets".into()));
        }
        if let Some(q) = self.quality_targets.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
            return Err(Error::InvalidParameter(format!("quality target {q} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::InvalidParameter(format!(
                "noise level {} outside [0, 1]",
                self.noise_level
            )));
        }
        if self.ensemble_size < crate::tta::MIN_ENSEMBLE_SIZE {
            return Err(Error::InvalidParameter(format!(
                "ensemble size {} below {}",
                self.ensemble_size,
                crate::tta::MIN_ENSEMBLE_SIZE
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<VolumeGeometry> {
        VolumeGeometry::new(self.dims, self.spacing_mm)
    }

    pub fn target(&self, case_index: usize) -> f64 {
        self.quality_targets[case_index % self.quality_targets.len()]
    }
}

// ---------------------------------------------------------------------------
// voxel-grid helpers
// ---------------------------------------------------------------------------

fn coords(dims: [usize; 3], idx: usize) -> [usize; 3] {
    let [nx, ny, _] = dims;
    [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
}

fn for_each_neighbour6(dims: [usize; 3], idx: usize, mut f: impl FnMut(Option<usize>)) {
    let [nx, ny, nz] = dims;
    let [x, y, z] = coords(dims, idx);
    let plane = nx * ny;
    f((x > 0).then(|| idx - 1));
    f((x + 1 < nx).then(|| idx + 1));
    f((y > 0).then(|| idx - nx));
    f((y + 1 < ny).then(|| idx + nx));
    f((z > 0).then(|| idx - plane));
    f((z + 1 < nz).then(|| idx + plane));
}

/// Inner shell (foreground with a background 6-neighbour or on the volume
/// border) and outer shell (background with a foreground 6-neighbour).
fn shells(m: &BinaryMask) -> (Vec<usize>, Vec<usize>) {
    let dims = m.geometry().dims();
    let v = m.values();
    let (mut inner, mut outer) = (Vec::new(), Vec::new());
    for (i, &x) in v.iter().enumerate() {
        let mut differs = false;
        for_each_neighbour6(dims, i, |n| {
            let nv = n.map_or(0, |j| v[j]);
            differs |= nv != x;
        });
        if differs {
            if x == 1 {
                inner.push(i);
            } else {
                outer.push(i);
            }
        }
    }
    (inner, outer)
}

/// Separable box maximum of radius `r`; voxels outside the grid read `outside`.
fn box_max(values: &[u8], dims: [usize; 3], r: usize, outside: u8) -> Vec<u8> {
    let mut cur = values.to_vec();
    let strides = [1, dims[0], dims[0] * dims[1]];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        let mut next = cur.clone();
        for (i, out) in next.iter_mut().enumerate() {
            let p = coords(dims, i)[axis];
            let mut m = if p < r || p + r >= n { outside } else { 0 };
            let lo = p.saturating_sub(r);
            let hi = (p + r).min(n - 1);
            for q in lo..=hi {
                m = m.max(cur[i - p * stride + q * stride]);
            }
            *out = m;
        }
        cur = next;
    }
    cur
}

/// Voxels within Chebyshev distance `r` of the mask's boundary:
/// `dilate(M) − erode(M)` with a `(2r+1)³` cube.
fn boundary_band(m: &BinaryMask, r: usize) -> Vec<bool> {
    let dims = m.geometry().dims();
    let dil = box_max(m.values(), dims, r, 0);
    let inv: Vec<u8> = m.values().iter().map(|&v| 1 - v).collect();
    let inv_dil = box_max(&inv, dims, r, 1);
    dil.iter().zip(&inv_dil).map(|(&d, &e)| d == 1 && e == 1).collect()
}

// ---------------------------------------------------------------------------
// phantom
// ---------------------------------------------------------------------------

/// Union of one to three ellipsoids with bright intensity over a dark
/// background plus Gaussian noise. Deterministic per `(spec.seed, case_index)`.
pub fn generate_phantom(spec: &SynthSpec, case_index: usize) -> Result<(ScalarVolume, BinaryMask)> {
    let g = spec.geometry()?;
    let dims = g.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_PHANTOM, case_index as u64));
    let n_ellipsoids = rng.random_range(1..=3usize);
    let mut ellipsoids = Vec::with_capacity(n_ellipsoids);
    for _ in 0..n_ellipsoids {
        let mut c = [0.0; 3];
        let mut r = [0.0; 3];
        for a in 0..3 {
            let n = dims[a] as f64;
            c[a] = (n - 1.0) * rng.random_range(0.4..0.6);
            r[a] = (n * rng.random_range(0.12..0.25)).max(1.0);
        }
        ellipsoids.push((c, r));
    }

    let mut truth = BinaryMask::zeros(g);
    for (i, v) in truth.values_mut().iter_mut().enumerate() {
        let p = coords(dims, i);
        let border = (0..3).any(|a| p[a] == 0 || p[a] + 1 == dims[a]);
        let inside = ellipsoids.iter().any(|(c, r)| {
            (0..3)
                .map(|a| ((p[a] as f64 - c[a]) / r[a]).powi(2))
                .sum::<f64>()
                <= 1.0
        });
        *v = (inside && !border) as u8;
    }
    if truth.is_empty_mask() {
        // degenerate grids: keep at least the central voxel
        let c = dims.map(|n| n / 2);
        truth.set(c[2], c[1], c[0], 1);
    }

    let noise = Normal::new(0.0, INTENSITY_NOISE_SD).expect("positive standard deviation");
    let scan_values = truth
        .values()
        .iter()
        .map(|&t| {
            let base = if t == 1 { FOREGROUND_INTENSITY } else { BACKGROUND_INTENSITY };
            (base + noise.sample(&mut rng)) as f32
        })
        .collect();
    Ok((ScalarVolume::new(g, scan_values)?, truth))
}

// ---------------------------------------------------------------------------
// perturbation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub mask: BinaryMask,
    pub target_dice: f64,
    pub achieved_dice: f64,
    pub flipped_voxels: usize,
    pub operations: usize,
}

/// Dice of `T xor U` from `|T|`, `a = |U ∩ T|` and `b = |U \ T|`.
fn dice_after_flips(t: usize, a: usize, b: usize) -> f64 {
    let num = 2 * (t - a);
    let den = 2 * t - a + b;
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

struct OpGenerator<'a> {
    truth: &'a BinaryMask,
    inner: Vec<usize>,
    outer: Vec<usize>,
    inner_set: Vec<bool>,
    outer_set: Vec<bool>,
    max_radius: i64,
    rng: ChaCha8Rng,
}

impl<'a> OpGenerator<'a> {
    fn new(truth: &'a BinaryMask, seed: u64) -> Self {
        let (inner, outer) = shells(truth);
        let n = truth.values().len();
        let mut inner_set = vec![false; n];
        let mut outer_set = vec![false; n];
        inner.iter().for_each(|&i| inner_set[i] = true);
        outer.iter().for_each(|&i| outer_set[i] = true);
        // scale blob size with the structure so single operations stay small
        let size = (truth.count() as f64).cbrt();
        let max_radius = ((size / 6.0).round() as i64).clamp(1, 4);
        Self {
            truth,
            inner,
            outer,
            inner_set,
            outer_set,
            max_radius,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn sphere(&self, centre: usize, radius: i64, mut f: impl FnMut(usize)) {
        let dims = self.truth.geometry().dims();
        let c = coords(dims, centre).map(|v| v as i64);
        for dz in -radius..=radius {
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    if dx * dx + dy * dy + dz * dz > radius * radius {
                        continue;
                    }
                    let p = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < dims[a]) {
                        f(p[0] as usize + dims[0] * (p[1] as usize + dims[1] * p[2] as usize));
                    }
                }
            }
        }
    }

    /// Voxels flipped by the next operation: a one-voxel-thick boundary patch
    /// (erosion or dilation) or a blob addition or deletion.
    fn next(&mut self, out: &mut Vec<usize>) {
        out.clear();
        let t = self.truth.values();
        let patch = self.rng.random_bool(0.5);
        let use_inner = if self.outer.is_empty() {
            true
        } else if self.inner.is_empty() {
            false
        } else {
            self.rng.random_bool(0.5)
        };
        let shell = if use_inner { &self.inner } else { &self.outer };
        if shell.is_empty() {
            return;
        }
        let centre = shell[self.rng.random_range(0..shell.len())];
        if patch {
            let radius = self.rng.random_range(2..=3 + self.max_radius);
            let set = if use_inner { &self.inner_set } else { &self.outer_set };
            self.sphere(centre, radius, |i| {
                if set[i] {
                    out.push(i);
                }
            });
        } else {
            let radius = self.rng.random_range((self.max_radius / 2).max(1)..=self.max_radius);
            let value = if self.rng.random_bool(0.5) { 1 } else { 0 };
            self.sphere(centre, radius, |i| {
                if t[i] == value {
                    out.push(i);
                }
            });
        }
    }
}

/// Perturbs `truth` with seeded boundary patches and blobs until its Dice
/// against `truth` is as close as possible to `target_dice`.
///
/// The operation sequence is fixed by the seed; the number of operations is
/// found by binary search on the (non-increasing) Dice after each prefix.
/// Unreachable targets return the closest achieved value.
pub fn perturb_mask(truth: &BinaryMask, target_dice: f64, seed: u64) -> Result<Perturbation> {
    if !(target_dice > 0.0 && target_dice <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target dice {target_dice} outside (0, 1]"
        )));
    }
    let t_count = truth.count();
    if target_dice >= 1.0 || t_count == 0 {
        return Ok(Perturbation {
            mask: truth.clone(),
            target_dice,
            achieved_dice: 1.0,
            flipped_voxels: 0,
            operations: 0,
        });
    }

    let t = truth.values();
    let mut flipped = vec![false; t.len()];
    let mut op_voxels: Vec<Vec<usize>> = Vec::new();
    let mut dice_after = vec![1.0];
    let (mut a, mut b) = (0usize, 0usize);
    let mut idle = 0;
    let mut generator = OpGenerator::new(truth, seed);
    let mut buf = Vec::new();
    while *dice_after.last().unwrap() > target_dice && op_voxels.len() < MAX_OPS && idle < MAX_IDLE_OPS {
        generator.next(&mut buf);
        let fresh: Vec<usize> = buf.iter().copied().filter(|&i| !flipped[i]).collect();
        for &i in &fresh {
            flipped[i] = true;
            if t[i] == 1 {
                a += 1;
            } else {
                b += 1;
            }
        }
        idle = if fresh.is_empty() { idle + 1 } else { 0 };
        op_voxels.push(fresh);
        dice_after.push(dice_after_flips(t_count, a, b));
    }

    let first_below = dice_after.partition_point(|&d| d > target_dice);
    let n = if first_below >= dice_after.len() {
        dice_after.len() - 1
    } else if first_below > 0
        && (dice_after[first_below - 1] - target_dice).abs() < (dice_after[first_below] - target_dice).abs()
    {
        first_below - 1
    } else {
        first_below
    };

    let mut values = t.to_vec();
    let mut flipped_voxels = 0;
    for op in &op_voxels[..n] {
        for &i in op {
            values[i] ^= 1;
        }
        flipped_voxels += op.len();
    }
    let mask = BinaryMask::new(*truth.geometry(), values)?;
    Ok(Perturbation {
        achieved_dice: metrics::dice(&mask, truth)?,
        mask,
        target_dice,
        flipped_voxels,
        operations: n,
    })
}

// ---------------------------------------------------------------------------
// error predictors
// ---------------------------------------------------------------------------

/// The ideal predictor `ê = |t − m|`.
pub fn oracle_error(m: &BinaryMask, t: &BinaryMask) -> Result<ProbabilityVolume> {
    Ok(ProbabilityVolume::from_mask(&extraction::difference_volume(m, t)?))
}

/// Oracle error degraded near the mask boundary: voxels within
/// [`NOISE_BAND_RADIUS`] of the boundary of `m` are flipped with probability
/// `NOISE_FLIP_RATE · noise_level` and then pulled toward 0.5 by
/// `noise_level`. Voxels away from the boundary keep the oracle value.
pub fn noisy_error(m: &BinaryMask, t: &BinaryMask, noise_level: f64, seed: u64) -> Result<ProbabilityVolume> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::InvalidParameter(format!("noise level {noise_level} outside [0, 1]")));
    }
    let mut e = oracle_error(m, t)?;
    if noise_level == 0.0 {
        return Ok(e);
    }
    let band = boundary_band(m, NOISE_BAND_RADIUS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flip = NOISE_FLIP_RATE * noise_level;
    for (v, &in_band) in e.values_mut().iter_mut().zip(&band) {
        if !in_band {
            continue;
        }
        let mut x = *v as f64;
        if rng.random_bool(flip) {
            x = 1.0 - x;
        }
        *v = ((1.0 - noise_level) * x + noise_level * 0.5).clamp(0.0, 1.0) as f32;
    }
    Ok(e)
}

/// `k` independent perturbations of `truth` at `quality`.
pub fn simulate_tta_ensemble(truth: &BinaryMask, quality: f64, k: usize, seed: u64) -> Result<MaskEnsemble> {
    if k < crate::tta::MIN_ENSEMBLE_SIZE {
        return Err(Error::InvalidParameter(format!(
            "an ensemble needs at least {} members, got {k}",
            crate::tta::MIN_ENSEMBLE_SIZE
        )));
    }
    let members = (0..k)
        .map(|j| perturb_mask(truth, quality, derive_seed(seed, STREAM_TTA, j as u64)).map(|p| p.mask))
        .collect::<Result<Vec<_>>>()?;
    MaskEnsemble::new(members)
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthCase {
    pub case_id: String,
    pub scan: ScalarVolume,
    pub truth: BinaryMask,
    pub mask: BinaryMask,
    pub error: ProbabilityVolume,
    pub ensemble: MaskEnsemble,
    pub target_dice: f64,
    pub achieved_dice: f64,
}

pub fn case_id(case_index: usize) -> String {
    format!("case_{case_index:03}")
}

/// Generates case `case_index` of `spec`. Cases are independent, so callers
/// may generate them in parallel.
pub fn generate_case(spec: &SynthSpec, case_index: usize) -> Result<SynthCase> {
    spec.validate()?;
    let i = case_index as u64;
    let (scan, truth) = generate_phantom(spec, case_index)?;
    let target = spec.target(case_index);
    let p = perturb_mask(&truth, target, derive_seed(spec.seed, STREAM_PERTURB, i))?;
    let error = noisy_error(&p.mask, &truth, spec.noise_level, derive_seed(spec.seed, STREAM_NOISE, i))?;
    let ensemble = simulate_tta_ensemble(&truth, target, spec.ensemble_size, derive_seed(spec.seed, STREAM_TTA, i))?;
    Ok(SynthCase {
        case_id: case_id(case_index),
        scan,
        truth,
        mask: p.mask,
        error,
        ensemble,
        target_dice: target,
        achieved_dice: p.achieved_dice,
    })
}

/// Writes a case below `root/<case_id>/` and returns its manifest entry with
/// paths relative to `root`.
pub fn write_case(case: &SynthCase, root: &Path) -> Result<CaseEntry> {
    let rel = Path::new(&case.case_id);
    let dir = root.join(rel);
    let ens = dir.join("ensemble");
    std::fs::create_dir_all(&ens).map_err(|e| Error::io(&ens, e))?;
    write_volume(&case.scan, dir.join("scan.sqv"))?;
    write_volume(&case.truth, dir.join("gt.sqv"))?;
    write_volume(&case.mask, dir.join("mask.sqv"))?;
    write_volume(&case.error, dir.join("error.sqv"))?;
    for (j, m) in case.ensemble.members().iter().enumerate() {
        write_volume(m, ens.join(format!("member_{j:02}.sqv")))?;
    }
    Ok(CaseEntry {
        case_id: case.case_id.clone(),
        scan_path: rel.join("scan.sqv.json"),
        mask_path: rel.join("mask.sqv.json"),
        error_path: Some(rel.join("error.sqv.json")),
        gt_path: Some(rel.join("gt.sqv.json")),
        ensemble_dir: Some(rel.join("ensemble")),
        target_dice: Some(case.target_dice),
        achieved_dice: Some(case.achieved_dice),
    })
}

// ---------------------------------------------------------------------------
// corrections-style detection cases
// ---------------------------------------------------------------------------

/// A case whose ground-truth error consists of blobs only, while the error
/// estimate also flags a one-voxel ribbon along part of the structure boundary.
#[derive(Debug, Clone)]
pub struct DetectionCase {
    /// Corrected mask.
    pub truth: BinaryMask,
    /// Mask with blob errors.
    pub mask: BinaryMask,
    /// `|truth − mask|`: the blobs.
    pub gt_error: BinaryMask,
    /// Blobs plus the boundary ribbon.
    pub error_estimate: ProbabilityVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCaseSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub n_blobs: usize,
    /// In-plane blob radius in voxels.
    pub blob_radius: usize,
    pub ribbon: bool,
}

impl Default for DetectionCaseSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 16],
            spacing_mm: [1.5, 1.5, 3.0],
            n_blobs: 2,
            blob_radius: 5,
            ribbon: true,
        }
    }
}

fn disk(plane: &mut [u8], cols: usize, rows: usize, (cy, cx): (f64, f64), radius: f64) {
    for r in 0..rows {
        for c in 0..cols {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            if dx * dx + dy * dy <= radius * radius {
                plane[r * cols + c] = 1;
            }
        }
    }
}

/// Cylinder structure with `n_blobs` z-extruded disk errors in the background
/// corners. Blobs sit at least `min_d`-scale distances from the structure and
/// from each other, so their boxes never unify with anything else.
pub fn generate_detection_case(spec: &DetectionCaseSpec, seed: u64) -> Result<DetectionCase> {
    let g = VolumeGeometry::new(spec.dims, spec.spacing_mm)?;
    let [cols, rows, slices] = spec.dims;
    if spec.n_blobs > 4 {
        return Err(Error::InvalidParameter("at most four blobs fit the corners".into()));
    }
    let min_side = cols.min(rows) as f64;
    let structure_radius = 0.2 * min_side;
    let blob_r = spec.blob_radius as f64;
    let corner_offset = blob_r + 2.0;
    // corners must clear the structure by more than the unification distance
    let centre = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
    let corner_gap = (centre.0 - corner_offset).min(centre.1 - corner_offset) * std::f64::consts::SQRT_2
        - structure_radius
        - blob_r;
    if corner_gap < 8.0 || slices < 6 {
        return Err(Error::InvalidParameter("volume too small for a detection case".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane_len = rows * cols;
    let mut structure = vec![0u8; plane_len];
    disk(&mut structure, cols, rows, centre, structure_radius);

    // one-voxel outer ring on a random 120° sector
    let mut ribbon = vec![0u8; plane_len];
    if spec.ribbon {
        let start = rng.random_range(0.0..std::f64::consts::TAU);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if structure[i] == 1 {
                    continue;
                }
                let touches = (r.saturating_sub(1)..=(r + 1).min(rows - 1))
                    .any(|rr| (c.saturating_sub(1)..=(c + 1).min(cols - 1)).any(|cc| structure[rr * cols + cc] == 1));
                let angle = (r as f64 - centre.0).atan2(c as f64 - centre.1);
                let rel = (angle - start).rem_euclid(std::f64::consts::TAU);
                if touches && rel < std::f64::consts::TAU / 3.0 {
                    ribbon[i] = 1;
                }
            }
        }
    }

    let corners = [
        (corner_offset, corner_offset),
        (corner_offset, cols as f64 - 1.0 - corner_offset),
        (rows as f64 - 1.0 - corner_offset, corner_offset),
        (rows as f64 - 1.0 - corner_offset, cols as f64 - 1.0 - corner_offset),
    ];
    let mut order = [0usize, 1, 2, 3];
    for i in (1..4).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut blobs = Vec::with_capacity(spec.n_blobs);
    for &corner in &order[..spec.n_blobs] {
        let mut plane = vec![0u8; plane_len];
        disk(&mut plane, cols, rows, corners[corner], blob_r);
        let z0 = rng.random_range(1..slices / 2);
        let z1 = rng.random_range(z0 + 2..slices);
        blobs.push((plane, z0, z1));
    }

    let mut truth = BinaryMask::zeros(g);
    let mut mask = BinaryMask::zeros(g);
    let mut gt_error = BinaryMask::zeros(g);
    let mut estimate = vec![0f32; g.voxel_count()];
    for k in 1..slices - 1 {
        let off = k * plane_len;
        truth.values_mut()[off..off + plane_len].copy_from_slice(&structure);
        mask.values_mut()[off..off + plane_len].copy_from_slice(&structure);
        for (i, &v) in ribbon.iter().enumerate() {
            if v == 1 {
                estimate[off + i] = 1.0;
            }
        }
    }
    for (plane, z0, z1) in &blobs {
        for k in *z0..*z1 {
            let off = k * plane_len;
            for (i, &v) in plane.iter().enumerate() {
                if v == 1 {
                    mask.values_mut()[off + i] = 1;
                    gt_error.values_mut()[off + i] = 1;
                    estimate[off + i] = 1.0;
                }
            }
        }
    }
    Ok(DetectionCase {
        truth,
        mask,
        gt_error,
        error_estimate: ProbabilityVolume::new(g, estimate)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{dice, estimate_all, true_metrics, MetricConfig};
    use crate::tta::{median_mask, tta_metric_estimate};
    use crate::metrics::Metric;

    fn spec(dim: usize) -> SynthSpec {
        SynthSpec {
            seed: 7,
            dims: [dim, dim, dim],
            spacing_mm: [1.0; 3],
            n_cases: 4,
            quality_targets: vec![0.9, 0.7],
            noise_level: 0.0,
            ensemble_size: 3,
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(16);
        assert!(s.validate().is_ok());
        s.quality_targets = vec![0.0];
        assert!(s.validate().is_err());
        s.quality_targets = vec![1.1];
        assert!(s.validate().is_err());
        s = spec(16);
        s.noise_level = 1.5;
        assert!(s.validate().is_err());
        s = spec(16);
        s.ensemble_size = 2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn phantom_is_deterministic_and_inside() {
        let s = spec(32);
        let (a_scan, a) = generate_phantom(&s, 3).unwrap();
        let (b_scan, b) = generate_phantom(&s, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a_scan, b_scan);
        assert!(!a.is_empty_mask());
        let dims = a.geometry().dims();
        for (i, &v) in a.values().iter().enumerate() {
            if v == 1 {
                let p = coords(dims, i);
                assert!((0..3).all(|ax| p[ax] > 0 && p[ax] + 1 < dims[ax]));
            }
        }
    }

    #[test]
    fn phantoms_differ_across_cases() {
        let s = spec(24);
        let masks: Vec<_> = (0..20).map(|i| generate_phantom(&s, i).unwrap().1).collect();
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                assert_ne!(masks[i], masks[j], "cases {i} and {j}");
            }
        }
    }

    #[test]
    fn perturb_identity_and_target() {
        let (_, t) = generate_phantom(&spec(64), 0).unwrap();
        let p = perturb_mask(&t, 1.0, 1).unwrap();
        assert_eq!(p.mask, t);
        assert_eq!(p.achieved_dice, 1.0);

        let p = perturb_mask(&t, 0.9, 1).unwrap();
        assert!((p.achieved_dice - 0.9).abs() <= 0.03, "{}", p.achieved_dice);
        assert_eq!(p.achieved_dice, dice(&p.mask, &t).unwrap());
        assert!(perturb_mask(&t, 0.0, 1).is_err());
    }

    #[test]
    fn lower_target_flips_more() {
        let (_, t) = generate_phantom(&spec(48), 2).unwrap();
        let hi = perturb_mask(&t, 0.9, 5).unwrap();
        let lo = perturb_mask(&t, 0.7, 5).unwrap();
        assert!(lo.flipped_voxels > hi.flipped_voxels);
        assert!(lo.achieved_dice < hi.achieved_dice);
    }

    #[test]
    fn oracle_error_values() {
        let g = VolumeGeometry::unit(4, 4, 1).unwrap();
        let mut m = BinaryMask::zeros(g);
        let mut t = BinaryMask::zeros(g);
        for (r, c) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            m.set(0, r, c, 1);
        }
        for (r, c) in [(1, 1), (1, 2), (2, 1), (3, 0)] {
            t.set(0, r, c, 1);
        }
        let e = oracle_error(&m, &t).unwrap();
        let ones: Vec<_> = (0..16).filter(|&i| e.values()[i] == 1.0).collect();
        assert_eq!(ones, vec![2 * 4 + 2, 3 * 4]);
        assert!(oracle_error(&m, &m).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(e.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn oracle_reproduces_true_metrics() {
        let (_, t) = generate_phantom(&spec(32), 1).unwrap();
        let m = perturb_mask(&t, 0.8, 3).unwrap().mask;
        let q = estimate_all(&m, &oracle_error(&m, &t).unwrap(), &MetricConfig::exact()).unwrap();
        let truth = true_metrics(&m, &t).unwrap();
        assert!((q.dice_est - truth.dice3d).abs() < 1e-9);
        assert!((q.iou_est - truth.iou3d).abs() < 1e-9);
    }

    #[test]
    fn noisy_error_limits() {
        let (_, t) = generate_phantom(&spec(24), 0).unwrap();
        let m = perturb_mask(&t, 0.8, 3).unwrap().mask;
        let oracle = oracle_error(&m, &t).unwrap();
        assert_eq!(noisy_error(&m, &t, 0.0, 1).unwrap(), oracle);

        let full = noisy_error(&m, &t, 1.0, 1).unwrap();
        let band = boundary_band(&m, NOISE_BAND_RADIUS);
        for ((&v, &o), &b) in full.values().iter().zip(oracle.values()).zip(&band) {
            assert_eq!(v, if b { 0.5 } else { o });
        }
        let half = noisy_error(&m, &t, 0.5, 9).unwrap();
        assert!(half.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(half, noisy_error(&m, &t, 0.5, 9).unwrap());
        assert!(noisy_error(&m, &t, 1.2, 1).is_err());
    }

    #[test]
    fn box_max_matches_brute_force() {
        let dims = [5, 4, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<u8> = (0..60).map(|_| rng.random_bool(0.2) as u8).collect();
        for outside in [0u8, 1] {
            let fast = box_max(&v, dims, 1, outside);
            for (i, &got) in fast.iter().enumerate() {
                let p = coords(dims, i).map(|x| x as i64);
                let mut m = 0;
                for dz in -1..=1i64 {
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let q = [p[0] + dx, p[1] + dy, p[2] + dz];
                            if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64) {
                                m = m.max(v[(q[0] + 5 * (q[1] + 4 * q[2])) as usize]);
                            } else {
                                m = m.max(outside);
                            }
                        }
                    }
                }
                assert_eq!(got, m, "voxel {i} outside {outside}");
            }
        }
    }

    #[test]
    fn tta_ensemble_quality() {
        let (_, t) = generate_phantom(&spec(32), 0).unwrap();
        let e = simulate_tta_ensemble(&t, 1.0, 3, 4).unwrap();
        assert!(e.members().iter().all(|m| *m == t));
        assert_eq!(tta_metric_estimate(&e, Metric::Dice).unwrap(), 1.0);
        assert!(simulate_tta_ensemble(&t, 0.9, 2, 4).is_err());

        let mean = |q: f64| -> f64 {
            (0..3)
                .map(|s| tta_metric_estimate(&simulate_tta_ensemble(&t, q, 5, s).unwrap(), Metric::Dice).unwrap())
                .sum::<f64>()
                / 3.0
        };
        let (a, b, c) = (mean(1.0), mean(0.9), mean(0.7));
        assert!(a > b && b > c, "{a} {b} {c}");
        assert!(!median_mask(&simulate_tta_ensemble(&t, 0.9, 3, 0).unwrap()).is_empty_mask());
    }

    #[test]
    fn detection_case_layout() {
        let c = generate_detection_case(&DetectionCaseSpec::default(), 3).unwrap();
        assert_eq!(extraction::difference_volume(&c.mask, &c.truth).unwrap(), c.gt_error);
        assert!(!c.gt_error.is_empty_mask());
        // the estimate covers the gt error and more
        let est_count = c.error_estimate.values().iter().filter(|&&v| v == 1.0).count();
        assert!(est_count > c.gt_error.count());
        for (&e, &g) in c.error_estimate.values().iter().zip(c.gt_error.values()) {
            assert!(g == 0 || e == 1.0);
        }
    }
}
