//! Linear scaling-law fits, `AUROC = α·x + β`, where `x` is a parameter
//! count, a number of scales or `log₂` of a token count.

use thiserror::Error;

use crate::metrics::EvalReport;

/// Above this AUROC the attack saturates and the linear trend breaks down.
pub const SATURATION_AUROC: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("all x values are equal; slope is undetermined")]
    DegenerateX,
    #[error("point {0} is not finite")]
    NonFinite(usize),
    #[error("log2 transform needs positive x, got {0}")]
    NonPositiveX(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub n: usize,
}

impl FitResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares with Pearson correlation. A horizontal data set
/// (`Syy = 0`) fits exactly and reports `r = 1`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<FitResult, FitError> {
    let n = points.len();
    if n < 2 {
        return Err(FitError::TooFewPoints(n));
    }
    if let Some(i) = points.iter().position(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(FitError::NonFinite(i));
    }
    let nf = n as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(FitError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let flat = points.iter().all(|p| p.1 == points[0].1);
    let (slope, intercept) = if flat { (0.0, points[0].1) } else { (slope, intercept) };
    let pearson_r = if flat || syy == 0.0 { 1.0 } else { (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0) };
    Ok(FitResult { slope, intercept, pearson_r, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XTransform {
    #[default]
    Identity,
    Log2,
}

impl std::str::FromStr for XTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" | "none" => Ok(XTransform::Identity),
            "log2" => Ok(XTransform::Log2),
            other => Err(format!("unknown x transform `{other}`")),
        }
    }
}

impl XTransform {
    pub fn apply(&self, x: f64) -> Result<f64, FitError> {
        match self {
            XTransform::Identity => Ok(x),
            XTransform::Log2 if x > 0.0 => Ok(x.log2()),
            XTransform::Log2 => Err(FitError::NonPositiveX(x)),
        }
    }
}

/// `(x, auroc)` pairs in input order, with `x` transformed.
pub fn series_from_reports(reports: &[(f64, EvalReport)], transform: XTransform) -> Result<Vec<(f64, f64)>, FitError> {
    reports.iter().map(|(x, r)| Ok((transform.apply(*x)?, r.auroc))).collect()
}

/// Drops points whose AUROC exceeds `max_auroc`.
pub fn drop_saturated(points: &[(f64, f64)], max_auroc: f64) -> Vec<(f64, f64)> {
    points.iter().copied().filter(|&(_, y)| y <= max_auroc).collect()
}
