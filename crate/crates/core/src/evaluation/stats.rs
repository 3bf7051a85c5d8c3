//! MAE, Pearson correlation and the paired two-sided t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// p-values below this are reported as significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.01;

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "sequences differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < min_len {
        return Err(Error::Precondition(format!(
            "need at least {min_len} pairs, got {}",
            a.len()
        )));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mean absolute error.
pub fn mae(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_pair(estimates, truths, 1)?;
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / estimates.len() as f64)
}

/// Sample Pearson correlation. Constant input is an error, not 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Precondition("pearson correlation of a constant sequence".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

impl TTest {
    pub fn is_significant(&self) -> bool {
        self.p < SIGNIFICANCE_LEVEL
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom:
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Paired two-sided t-test on `d = a − b` with `n − 1` degrees of freedom.
///
/// Zero-variance differences give `t = 0, p = 1` when their mean is zero and
/// `t = ±∞, p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    check_pair(a, b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let md = mean(&d);
    let var = d.iter().map(|v| (v - md).powi(2)).sum::<f64>() / (n - 1.0);
    let df = d.len() - 1;
    if var == 0.0 {
        return Ok(if md == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: md.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = md / (var.sqrt() / n.sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, df as f64),
        df,
    })
}
