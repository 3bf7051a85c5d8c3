use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use segqc_core::volume::{read_volume, AnyVolume, BinaryMask, ProbabilityVolume};
use serde::Serialize;

use crate::usage;

/// Writes `bytes` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn emit_json<T: Serialize + ?Sized>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    emit(path, &text)
}

pub fn unix_time() -> Option<u64> {
    SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
}

/// Reads an error volume as a binary mask: masks are taken as is, probability
/// volumes (or unlabelled scalar volumes within `[0, 1]`) are thresholded.
pub fn read_error_mask(path: &Path, threshold: f64) -> Result<BinaryMask> {
    Ok(match read_volume(path)? {
        AnyVolume::Mask(m) => m,
        AnyVolume::Probability(p) => segqc_core::extraction::binarize(&p, threshold)?,
        AnyVolume::Scalar(s) => {
            let p = ProbabilityVolume::try_from(s)
                .with_context(|| format!("{} is not a probability volume", path.display()))?;
            segqc_core::extraction::binarize(&p, threshold)?
        }
    })
}

/// `csv` or `json`, chosen by flag or by the output extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

pub fn resolve_format(flag: Option<Format>, out: Option<&PathBuf>) -> Format {
    flag.unwrap_or_else(|| match out.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some("csv") => Format::Csv,
        _ => Format::Json,
    })
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("not a number in list: {s:?}")))
        })
        .collect()
}

/// Formats an optional value; missing or non-finite values print as `NaN`.
pub fn fmt_f(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.9}"),
        Some(x) if x.is_infinite() => (if x > 0.0 { "inf" } else { "-inf" }).to_string(),
        _ => "NaN".to_string(),
    }
}
