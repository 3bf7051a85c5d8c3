//! Voxel grids and the SQV on-disk format.
//!
//! All volumes are stored slice-major: index `(slice, row, col)` maps to
//! `slice * rows * cols + row * cols + col`. A "2D" operation always works on
//! a single z-slice.
//!
//! An SQV volume is a pair of files sharing a stem:
//!
//! * `<name>.sqv.json`: header with `dims` `[cols, rows, slices]`,
//!   `spacing_mm` `[sx, sy, sz]`, `dtype` (`"f32"` or `"u8"`) and
//!   `order` (always `"slice-major"`). An optional `kind` field
//!   (`"scalar"`, `"mask"`, `"probability"`) disambiguates `f32` payloads.
//! * `<name>.sqv.raw`: little-endian payload, no padding.

use std::fs;
use std::ops::Deref;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities within this distance of `[0, 1]` are clamped on read.
pub const PROBABILITY_READ_SLACK: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    /// `[n_cols, n_rows, n_slices]`
    dims: [usize; 3],
    /// `[sx, sy, sz]` in mm per voxel
    spacing_mm: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Geometry(format!("every dim must be >= 1, got {dims:?}")));
        }
        if spacing_mm.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Geometry(format!(
                "spacing must be finite and > 0, got {spacing_mm:?}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Geometry(format!("voxel count overflows for {dims:?}")))?;
        let geometry = Self { dims, spacing_mm };
        let area = geometry.slice_area_mm2();
        if !area.is_finite() || area <= 0.0 {
            return Err(Error::Geometry(format!("slice area {area} mm² is not positive")));
        }
        Ok(geometry)
    }

    /// Isotropic 1 mm geometry; convenient for tests and synthetic data.
    pub fn unit(cols: usize, rows: usize, slices: usize) -> Result<Self> {
        Self::new([cols, rows, slices], [1.0, 1.0, 1.0])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn cols(&self) -> usize {
        self.dims[0]
    }

    pub fn rows(&self) -> usize {
        self.dims[1]
    }

    pub fn n_slices(&self) -> usize {
        self.dims[2]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn voxel_count(&self) -> usize {
        self.slice_len() * self.dims[2]
    }

    /// In-plane area of one voxel in mm².
    pub fn pixel_area_mm2(&self) -> f64 {
        self.spacing_mm[0] * self.spacing_mm[1]
    }

    pub fn slice_area_mm2(&self) -> f64 {
        self.slice_len() as f64 * self.pixel_area_mm2()
    }

    #[inline]
    pub fn index(&self, slice: usize, row: usize, col: usize) -> usize {
        (slice * self.dims[1] + row) * self.dims[0] + col
    }

    /// Dims must match exactly; a spacing mismatch is only logged.
    pub fn check_compatible(&self, other: &VolumeGeometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GeometryMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        if self.spacing_mm != other.spacing_mm {
            log::warn!(
                "spacing mismatch between volumes: {:?} vs {:?}",
                self.spacing_mm,
                other.spacing_mm
            );
        }
        Ok(())
    }
}

mod sealed {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for u8 {}
}

/// Element types a [`Volume`] can hold.
pub trait Voxel: sealed::Sealed + Copy + PartialEq + Default + std::fmt::Debug + Send + Sync {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn is_valid(self) -> bool;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn is_valid(self) -> bool {
        self.is_finite()
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Voxel for u8 {
    const DTYPE: &'static str = "u8";
    const BYTES: usize = 1;

    fn is_valid(self) -> bool {
        self <= 1
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// A dense voxel grid with physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    geometry: VolumeGeometry,
    values: Vec<T>,
}

/// Scan intensities.
pub type ScalarVolume = Volume<f32>;
/// Binary mask with voxels in `{0, 1}`.
pub type BinaryMask = Volume<u8>;

impl<T: Voxel> Volume<T> {
    pub fn new(geometry: VolumeGeometry, values: Vec<T>) -> Result<Self> {
        let volume = Self { geometry, values };
        volume.validate()?;
        Ok(volume)
    }

    pub fn filled(geometry: VolumeGeometry, value: T) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.voxel_count()])
    }

    pub fn zeros(geometry: VolumeGeometry) -> Self {
        Self {
            geometry,
            values: vec![T::default(); geometry.voxel_count()],
        }
    }

    /// Checks length and per-voxel invariants.
    pub fn validate(&self) -> Result<()> {
        let expected = self.geometry.voxel_count();
        if self.values.len() != expected {
            return Err(Error::RawLengthMismatch {
                expected: expected * T::BYTES,
                found: self.values.len() * T::BYTES,
            });
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_valid()) {
            return Err(Error::ValueRange {
                index,
                value: self.values[index].as_f64(),
            });
        }
        Ok(())
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable access to the voxels. Invariants are re-checked on write.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> T {
        self.values[self.geometry.index(slice, row, col)]
    }

    pub fn set(&mut self, slice: usize, row: usize, col: usize, value: T) {
        let i = self.geometry.index(slice, row, col);
        self.values[i] = value;
    }

    pub fn slice(&self, k: usize) -> Result<SliceView<'_, T>> {
        let n_slices = self.geometry.n_slices();
        if k >= n_slices {
            return Err(Error::SliceOutOfRange { index: k, n_slices });
        }
        let len = self.geometry.slice_len();
        Ok(SliceView {
            index: k,
            rows: self.geometry.rows(),
            cols: self.geometry.cols(),
            data: &self.values[k * len..(k + 1) * len],
        })
    }

    pub fn slices(&self) -> impl ExactSizeIterator<Item = SliceView<'_, T>> + '_ {
        let rows = self.geometry.rows();
        let cols = self.geometry.cols();
        self.values
            .chunks_exact(self.geometry.slice_len())
            .enumerate()
            .map(move |(index, data)| SliceView {
                index,
                rows,
                cols,
                data,
            })
    }

    /// Replaces slice `k` with `plane` (row-major, `rows * cols` long).
    pub fn set_slice(&mut self, k: usize, plane: &[T]) -> Result<()> {
        let n_slices = self.geometry.n_slices();
        if k >= n_slices {
            return Err(Error::SliceOutOfRange { index: k, n_slices });
        }
        let len = self.geometry.slice_len();
        if plane.len() != len {
            return Err(Error::InvalidParameter(format!(
                "plane has {} voxels, slice needs {len}",
                plane.len()
            )));
        }
        self.values[k * len..(k + 1) * len].copy_from_slice(plane);
        Ok(())
    }
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }
}

/// Read-only view of one z-slice.
#[derive(Debug, Clone, Copy)]
pub struct SliceView<'a, T> {
    index: usize,
    rows: usize,
    cols: usize,
    data: &'a [T],
}

impl<'a, T: Copy> SliceView<'a, T> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &'a [T] {
        self.data
    }
}

/// Voxelwise probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume(Volume<f32>);

impl ProbabilityVolume {
    pub fn new(geometry: VolumeGeometry, values: Vec<f32>) -> Result<Self> {
        Self::try_from(Volume::new(geometry, values)?)
    }

    pub fn filled(geometry: VolumeGeometry, value: f32) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.voxel_count()])
    }

    pub fn zeros(geometry: VolumeGeometry) -> Self {
        Self(Volume::zeros(geometry))
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self(Volume {
            geometry: mask.geometry,
            values: mask.values.iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.0.validate()?;
        check_unit_range(&self.0.values)
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        self.0.values_mut()
    }

    pub fn into_inner(self) -> Volume<f32> {
        self.0
    }
}

impl Deref for ProbabilityVolume {
    type Target = Volume<f32>;

    fn deref(&self) -> &Volume<f32> {
        &self.0
    }
}

impl TryFrom<Volume<f32>> for ProbabilityVolume {
    type Error = Error;

    fn try_from(volume: Volume<f32>) -> Result<Self> {
        check_unit_range(&volume.values)?;
        Ok(Self(volume))
    }
}

fn check_unit_range(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::ValueRange {
            index,
            value: values[index] as f64,
        }),
        None => Ok(()),
    }
}

/// What an SQV file holds. Only needed to tell scalar and probability `f32`
/// payloads apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Scalar,
    Mask,
    Probability,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SqvHeader {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<VolumeKind>,
}

/// A volume read without knowing its kind in advance.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume),
    Mask(BinaryMask),
    Probability(ProbabilityVolume),
}

impl AnyVolume {
    pub fn kind(&self) -> VolumeKind {
        match self {
            AnyVolume::Scalar(_) => VolumeKind::Scalar,
            AnyVolume::Mask(_) => VolumeKind::Mask,
            AnyVolume::Probability(_) => VolumeKind::Probability,
        }
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        match self {
            AnyVolume::Scalar(v) => v.geometry(),
            AnyVolume::Mask(v) => v.geometry(),
            AnyVolume::Probability(v) => v.geometry(),
        }
    }
}

/// Resolves `<stem>`, `<stem>.sqv`, `<stem>.sqv.json` or `<stem>.sqv.raw`
/// to the header and payload paths.
pub fn sqv_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    let s = path.to_string_lossy();
    let stem = [".sqv.json", ".sqv.raw", ".sqv"]
        .iter()
        .find_map(|suffix| s.strip_suffix(suffix))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.sqv.json")),
        PathBuf::from(format!("{stem}.sqv.raw")),
    )
}

fn read_header(path: &Path) -> Result<(SqvHeader, VolumeGeometry, PathBuf)> {
    let (header_path, raw_path) = sqv_paths(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: SqvHeader = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: header_path.clone(),
        reason: e.to_string(),
    })?;
    if header.order != "slice-major" {
        return Err(Error::Header {
            path: header_path,
            reason: format!("unsupported order {:?}", header.order),
        });
    }
    let geometry = VolumeGeometry::new(header.dims, header.spacing_mm).map_err(|e| Error::Header {
        path: header_path.clone(),
        reason: e.to_string(),
    })?;
    Ok((header, geometry, raw_path))
}

fn read_payload<T: Voxel>(raw_path: &Path, geometry: &VolumeGeometry) -> Result<Vec<T>> {
    let bytes = fs::read(raw_path).map_err(|e| Error::io(raw_path, e))?;
    let expected = geometry.voxel_count() * T::BYTES;
    if bytes.len() != expected {
        return Err(Error::RawLengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

/// Reads an SQV volume. `dtype` selects mask vs. real payload; for `f32`
/// the optional `kind` field selects scalar vs. probability (scalar when absent).
pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let (header, geometry, raw_path) = read_header(path.as_ref())?;
    match (header.dtype.as_str(), header.kind) {
        ("u8", None | Some(VolumeKind::Mask)) => {
            Ok(AnyVolume::Mask(Volume::new(geometry, read_payload(&raw_path, &geometry)?)?))
        }
        ("f32", None | Some(VolumeKind::Scalar)) => {
            Ok(AnyVolume::Scalar(Volume::new(geometry, read_payload(&raw_path, &geometry)?)?))
        }
        ("f32", Some(VolumeKind::Probability)) => {
            let values = read_payload::<f32>(&raw_path, &geometry)?;
            Ok(AnyVolume::Probability(probability_from_raw(geometry, values)?))
        }
        (dtype, kind) => Err(Error::Header {
            path: sqv_paths(path).0,
            reason: format!("unsupported dtype/kind combination {dtype:?}/{kind:?}"),
        }),
    }
}

fn probability_from_raw(geometry: VolumeGeometry, mut values: Vec<f32>) -> Result<ProbabilityVolume> {
    for (index, v) in values.iter_mut().enumerate() {
        if !v.is_finite() || *v < -PROBABILITY_READ_SLACK || *v > 1.0 + PROBABILITY_READ_SLACK {
            return Err(Error::ValueRange {
                index,
                value: *v as f64,
            });
        }
        *v = v.clamp(0.0, 1.0);
    }
    ProbabilityVolume::new(geometry, values)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    match read_volume(path.as_ref())? {
        AnyVolume::Mask(m) => Ok(m),
        other => Err(Error::Header {
            path: sqv_paths(path).0,
            reason: format!("expected a mask, found {:?}", other.kind()),
        }),
    }
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    match read_volume(path.as_ref())? {
        AnyVolume::Scalar(v) => Ok(v),
        AnyVolume::Probability(p) => Ok(p.into_inner()),
        other => Err(Error::Header {
            path: sqv_paths(path).0,
            reason: format!("expected a scalar volume, found {:?}", other.kind()),
        }),
    }
}

/// Reads an `f32` volume as probabilities regardless of its declared kind.
/// Values more than [`PROBABILITY_READ_SLACK`] outside `[0, 1]` are rejected.
pub fn read_probability(path: impl AsRef<Path>) -> Result<ProbabilityVolume> {
    let (header, geometry, raw_path) = read_header(path.as_ref())?;
    if header.dtype != "f32" || header.kind == Some(VolumeKind::Mask) {
        return Err(Error::Header {
            path: sqv_paths(path).0,
            reason: format!("expected an f32 probability volume, found dtype {:?}", header.dtype),
        });
    }
    probability_from_raw(geometry, read_payload(&raw_path, &geometry)?)
}

/// Volumes that can be written as SQV.
pub trait SqvWrite {
    fn kind(&self) -> VolumeKind;
    fn checked_parts(&self) -> Result<(&VolumeGeometry, &'static str, Vec<u8>)>;
}

fn encode<T: Voxel>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut out);
    }
    out
}

impl SqvWrite for ScalarVolume {
    fn kind(&self) -> VolumeKind {
        VolumeKind::Scalar
    }

    fn checked_parts(&self) -> Result<(&VolumeGeometry, &'static str, Vec<u8>)> {
        self.validate()?;
        Ok((self.geometry(), f32::DTYPE, encode(self.values())))
    }
}

impl SqvWrite for BinaryMask {
    fn kind(&self) -> VolumeKind {
        VolumeKind::Mask
    }

    fn checked_parts(&self) -> Result<(&VolumeGeometry, &'static str, Vec<u8>)> {
        self.validate()?;
        Ok((self.geometry(), u8::DTYPE, encode(self.values())))
    }
}

impl SqvWrite for ProbabilityVolume {
    fn kind(&self) -> VolumeKind {
        VolumeKind::Probability
    }

    fn checked_parts(&self) -> Result<(&VolumeGeometry, &'static str, Vec<u8>)> {
        ProbabilityVolume::validate(self)?;
        Ok((self.geometry(), f32::DTYPE, encode(self.values())))
    }
}

impl SqvWrite for AnyVolume {
    fn kind(&self) -> VolumeKind {
        AnyVolume::kind(self)
    }

    fn checked_parts(&self) -> Result<(&VolumeGeometry, &'static str, Vec<u8>)> {
        match self {
            AnyVolume::Scalar(v) => v.checked_parts(),
            AnyVolume::Mask(v) => v.checked_parts(),
            AnyVolume::Probability(v) => v.checked_parts(),
        }
    }
}

/// Writes `<stem>.sqv.json` and `<stem>.sqv.raw`. Invalid volumes are
/// refused before anything touches the disk.
pub fn write_volume<V: SqvWrite + ?Sized>(volume: &V, path: impl AsRef<Path>) -> Result<()> {
    let (geometry, dtype, payload) = volume.checked_parts()?;
    let header = SqvHeader {
        dims: geometry.dims(),
        spacing_mm: geometry.spacing_mm(),
        dtype: dtype.to_string(),
        order: "slice-major".to_string(),
        kind: Some(volume.kind()),
    };
    let (header_path, raw_path) = sqv_paths(path);
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(&header_path, text).map_err(|e| Error::io(&header_path, e))?;
    fs::write(&raw_path, payload).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}
