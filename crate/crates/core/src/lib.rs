//! Membership-inference toolkit for conditional autoregressive image generators.
//!
//! The crate scores query samples from per-token model observations
//! (conditional and unconditional log-probabilities plus vocabulary
//! statistics), evaluates the scores with ROC-based metrics, and ships a
//! small logit-table target model that produces member/hold-out records with
//! a controllable amount of memorization.
//!
//! Module map:
//!
//! * [`records`]: wire format, validation and the calibration split.
//! * [`stats`]: sufficient statistics of a categorical distribution.
//! * [`attacks`]: the implicit-classifier score with adaptive aggregation and
//!   the Loss / Min-k% / Min-k%++ / Rényi baselines.
//! * [`metrics`]: AUROC, ROC curves, TPR at a fixed FPR and attack success rate.
//! * [`toymodel`]: synthetic world, dataset sampling, training and emission.
//! * [`fit`]: linear scaling-law fits of AUROC against model size.

pub mod attacks;
pub mod fit;
pub mod metrics;
pub mod records;
pub mod stats;
pub mod toymodel;

pub use attacks::{AttackConfig, Direction, ScaleFilter, ScoredSample};
pub use metrics::{EvalReport, LabeledScore};
pub use records::{Label, SampleRecord, ScaleLayout, TokenObservation};
pub use stats::{RenyiOrder, VocabStats};

/// `⌈fraction · n⌉`, snapping products that are within rounding noise of an
/// integer (`0.7 · 10` evaluates to `7.000000000000001`).
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}
