//! ROC analysis: AUROC, ROC points, TPR at a fixed FPR budget and the attack
//! success rate with a calibrated threshold.
//!
//! All functions take scores already oriented so that higher means member;
//! the decision rule is `score >= τ ⇒ member`.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::attacks::{Direction, ScoredSample};
use crate::records::{CalibrationSplit, Label};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no {0} samples")]
    EmptyClass(&'static str),
    #[error("sample `{0}` has label `unknown`")]
    UnknownLabel(String),
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("FPR budget {0} must lie in (0, 1]")]
    BadBudget(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledScore {
    pub score: f64,
    pub is_member: bool,
}

impl LabeledScore {
    pub fn new(score: f64, is_member: bool) -> Self {
        LabeledScore { score, is_member }
    }
}

/// Summary of one attack on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    /// `(fpr_budget, tpr)` pairs.
    pub tpr_at_fpr: Vec<(f64, f64)>,
    pub asr: f64,
    /// Threshold calibrated on the calibration split.
    pub threshold: f64,
    pub roc: Vec<(f64, f64)>,
    pub n_member: usize,
    pub n_nonmember: usize,
}

/// Flips `lower_is_member` scores so that higher always means member.
pub fn orient(scores: &[ScoredSample]) -> Result<Vec<LabeledScore>, MetricsError> {
    scores
        .iter()
        .map(|s| {
            let is_member = match s.label {
                Label::Member => true,
                Label::Nonmember => false,
                Label::Unknown => return Err(MetricsError::UnknownLabel(s.sample_id.clone())),
            };
            let score = match s.direction {
                Direction::HigherIsMember => s.score,
                Direction::LowerIsMember => -s.score,
            };
            Ok(LabeledScore { score, is_member })
        })
        .collect()
}

fn class_counts(data: &[LabeledScore]) -> Result<(usize, usize), MetricsError> {
    if let Some(bad) = data.iter().find(|d| !d.score.is_finite()) {
        return Err(MetricsError::NonFinite(bad.score));
    }
    let n_pos = data.iter().filter(|d| d.is_member).count();
    let n_neg = data.len() - n_pos;
    if n_pos == 0 {
        return Err(MetricsError::EmptyClass("member"));
    }
    if n_neg == 0 {
        return Err(MetricsError::EmptyClass("nonmember"));
    }
    Ok((n_pos, n_neg))
}

/// Groups of tied scores, sorted ascending: `(score, members, nonmembers)`.
fn tie_groups(data: &[LabeledScore], descending: bool) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&LabeledScore> = data.iter().collect();
    sorted.sort_by(|a, b| {
        let ord = a.score.total_cmp(&b.score);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for d in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == d.score => {
                if d.is_member {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((d.score, d.is_member as usize, !d.is_member as usize)),
        }
    }
    groups
}

/// Mann-Whitney AUROC with midranks for ties.
///
/// Twice the rank sum is accumulated in integers, so the result equals the
/// half-credit pair count `Σ [1(s_m > s_n) + ½·1(s_m = s_n)] / (n_pos·n_neg)`
/// exactly.
pub fn auroc(data: &[LabeledScore]) -> Result<f64, MetricsError> {
    let (n_pos, n_neg) = class_counts(data)?;
    let mut twice_rank_sum: u128 = 0;
    let mut below = 0usize;
    for (_, pos, neg) in tie_groups(data, false) {
        let size = pos + neg;
        // Midrank of ranks below+1 ..= below+size is (2·below + size + 1) / 2.
        twice_rank_sum += pos as u128 * (2 * below + size + 1) as u128;
        below += size;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}

/// Step ROC curve from sweeping τ down through the distinct scores,
/// starting at `(0, 0)` and ending at `(1, 1)`.
pub fn roc_points(data: &[LabeledScore]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let (n_pos, n_neg) = class_counts(data)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, pos, neg) in tie_groups(data, true) {
        tp += pos;
        fp += neg;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    if points.last() != Some(&(1.0, 1.0)) {
        points.push((1.0, 1.0));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline given in increasing-x order.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Largest TPR over realizable thresholds whose FPR stays within `budget`.
pub fn tpr_at_fpr(data: &[LabeledScore], budget: f64) -> Result<f64, MetricsError> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(MetricsError::BadBudget(budget));
    }
    Ok(roc_points(data)?.into_iter().filter(|&(fpr, _)| fpr <= budget).map(|(_, tpr)| tpr).fold(0.0, f64::max))
}

/// Fraction of samples classified correctly by `score >= threshold`.
pub fn accuracy_at(data: &[LabeledScore], threshold: f64) -> f64 {
    let correct = data.iter().filter(|d| (d.score >= threshold) == d.is_member).count();
    correct as f64 / data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub accuracy: f64,
}

/// Accuracy-maximizing threshold among `min - 1`, midpoints of adjacent
/// distinct scores, and `max + 1`. Ties go to the smallest threshold.
pub fn calibrate_threshold(calib: &[LabeledScore]) -> Result<Calibration, MetricsError> {
    let (n_pos, _) = class_counts(calib)?;
    let groups = tie_groups(calib, false);
    let n = calib.len();
    // τ below every score: everything is predicted member.
    let mut correct = n_pos;
    let mut best = (correct, groups[0].0 - 1.0);
    for (j, &(score, pos, neg)) in groups.iter().enumerate() {
        // Moving τ above this group turns its members wrong and its nonmembers right.
        correct = correct + neg - pos;
        let threshold = match groups.get(j + 1) {
            Some(&(next, _, _)) => score + (next - score) / 2.0,
            None => score + 1.0,
        };
        if correct > best.0 {
            best = (correct, threshold);
        }
    }
    Ok(Calibration { threshold: best.1, accuracy: best.0 as f64 / n as f64 })
}

/// Calibrates τ on `calib` and reports accuracy on `eval`: `(asr, τ)`.
pub fn asr(calib: &[LabeledScore], eval: &[LabeledScore]) -> Result<(f64, f64), MetricsError> {
    let Calibration { threshold, .. } = calibrate_threshold(calib)?;
    if eval.is_empty() {
        return Err(MetricsError::EmptyClass("evaluation"));
    }
    Ok((accuracy_at(eval, threshold), threshold))
}

/// Full report for one attack. AUROC, TPR@FPR and the ROC curve use every
/// sample; the ASR threshold is fit on `split.calibration` and applied to
/// the remaining samples.
pub fn evaluate(
    scores: &[ScoredSample],
    split: &CalibrationSplit,
    fpr_budgets: &[f64],
) -> Result<EvalReport, MetricsError> {
    let oriented = orient(scores)?;
    let (n_member, n_nonmember) = class_counts(&oriented)?;
    let calibration_ids: &BTreeSet<String> = &split.calibration;
    let (mut calib, mut eval) = (Vec::new(), Vec::new());
    for (s, o) in scores.iter().zip(&oriented) {
        if calibration_ids.contains(&s.sample_id) {
            calib.push(*o);
        } else {
            eval.push(*o);
        }
    }
    let (asr, threshold) = asr(&calib, &eval)?;
    let tpr_at_fpr =
        fpr_budgets.iter().map(|&b| Ok((b, tpr_at_fpr(&oriented, b)?))).collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(EvalReport {
        auroc: auroc(&oriented)?,
        tpr_at_fpr,
        asr,
        threshold,
        roc: roc_points(&oriented)?,
        n_member,
        n_nonmember,
    })
}
