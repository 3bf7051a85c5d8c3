//! Case manifest: the JSON list of cases consumed by the batch commands.
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::sqv_paths;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub scan_path: PathBuf,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<CaseEntry>,
}

fn require_volume(path: &Path, case_id: &str) -> Result<()> {
    let (header, raw) = sqv_paths(path);
    for p in [&header, &raw] {
        if !p.is_file() {
            return Err(Error::Header {
                path: p.clone(),
                reason: format!("file referenced by case {case_id:?} does not exist"),
            });
        }
    }
    Ok(())
}

impl Manifest {
    /// Reads a manifest, resolves relative paths and checks that every
    /// referenced file exists and every case id is unique.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut ids = HashSet::new();
        for c in &mut manifest.cases {
            if !ids.insert(c.case_id.clone()) {
                return Err(Error::Header {
                    path: path.to_path_buf(),
                    reason: format!("duplicate case id {:?}", c.case_id),
                });
            }
            for p in [Some(&mut c.scan_path), Some(&mut c.mask_path), c.error_path.as_mut(), c.gt_path.as_mut()]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                require_volume(p, &c.case_id)?;
            }
            if let Some(d) = c.ensemble_dir.as_mut() {
                if d.is_relative() {
                    *d = base.join(&*d);
                }
                if !d.is_dir() {
                    return Err(Error::Header {
                        path: d.clone(),
                        reason: format!("ensemble directory of case {:?} does not exist", c.case_id),
                    });
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Header files (`*.sqv.json`) in `dir`, sorted by name.
pub fn ensemble_members(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.to_string_lossy().ends_with(".sqv.json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
