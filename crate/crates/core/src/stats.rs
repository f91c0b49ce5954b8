//! Sufficient statistics of a token's conditional distribution.
//!
//! Everything here works on normalized log-probability vectors. The
//! statistics feed the Min-k%++ (mean / standard deviation of the log-prob)
//! and Rényi (entropy of order α) baselines.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::records::{FullDistributionRecord, FullToken, SampleRecord, TokenObservation};

/// Tolerance on `|logsumexp(lp)|` for a vector to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("log-probabilities are not normalized (logsumexp = {0:e})")]
    NotNormalized(f64),
    #[error("invalid Rényi order `{0}`: must be a positive number or `inf`")]
    InvalidOrder(String),
    #[error("token {token}: ground-truth id {gt} outside vocabulary of size {vocab}")]
    GroundTruthOutOfRange { token: usize, gt: u32, vocab: usize },
    #[error("summarized record failed validation: {0}")]
    Invalid(#[from] crate::records::ValidationError),
}

/// Order α of a Rényi entropy. `α = 1` (Shannon) and `α = ∞` (min-entropy)
/// are evaluated by their closed forms, never as limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenyiOrder {
    Finite(f64),
    Infinite,
}

impl RenyiOrder {
    pub fn finite(alpha: f64) -> Result<Self, StatsError> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(RenyiOrder::Finite(alpha))
        } else {
            Err(StatsError::InvalidOrder(alpha.to_string()))
        }
    }

    /// Canonical map key: shortest round-trip decimal, or `"inf"`.
    pub fn key(&self) -> String {
        match self {
            RenyiOrder::Finite(a) => format!("{a}"),
            RenyiOrder::Infinite => "inf".to_string(),
        }
    }

    /// Parses a key and additionally requires it to be in canonical form,
    /// so `"2.0"` and `"2"` cannot both appear in one map.
    pub fn parse_canonical(key: &str) -> Result<Self, StatsError> {
        let order: RenyiOrder = key.parse()?;
        if order.key() == key {
            Ok(order)
        } else {
            Err(StatsError::InvalidOrder(key.to_string()))
        }
    }
}

impl FromStr for RenyiOrder {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(RenyiOrder::Infinite);
        }
        let alpha: f64 = t.parse().map_err(|_| StatsError::InvalidOrder(s.to_string()))?;
        RenyiOrder::finite(alpha).map_err(|_| StatsError::InvalidOrder(s.to_string()))
    }
}

impl fmt::Display for RenyiOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl Serialize for RenyiOrder {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for RenyiOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(a) => RenyiOrder::finite(a).map_err(serde::de::Error::custom),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Vocabulary statistics of one conditional distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabStats {
    pub vocab_mean: f64,
    pub vocab_std: f64,
    pub renyi: BTreeMap<String, f64>,
    pub max_cond_lp: f64,
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooShort(values.len()));
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(StatsError::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log Σ exp(x)` with a max shift. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = max_of(values);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Turns logits into log-probabilities: `x - logsumexp(x)`.
pub fn log_normalize(logits: &[f64]) -> Result<Vec<f64>, StatsError> {
    check_finite(logits)?;
    let max = max_of(logits);
    let log_z = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|v| (v - max) - log_z).collect())
}

fn check_normalized(logprobs: &[f64]) -> Result<(), StatsError> {
    check_finite(logprobs)?;
    let lse = log_sum_exp(logprobs);
    if lse.abs() > NORMALIZATION_TOL {
        return Err(StatsError::NotNormalized(lse));
    }
    Ok(())
}

/// Mean and population standard deviation of `log p(x)` under `x ~ p`.
///
/// Deviations are taken from the max entry and the weights are renormalized,
/// so a uniform vector yields exactly `(lp, 0)`.
pub fn vocab_mean_std(logprobs: &[f64]) -> Result<(f64, f64), StatsError> {
    check_normalized(logprobs)?;
    let max = max_of(logprobs);
    let mut mass = 0.0;
    let mut shifted = 0.0;
    for &lp in logprobs {
        let p = lp.exp();
        mass += p;
        shifted += p * (lp - max);
    }
    let mean = max + shifted / mass;
    let var = logprobs
        .iter()
        .map(|&lp| {
            let d = lp - mean;
            lp.exp() * d * d
        })
        .sum::<f64>()
        / mass;
    Ok((mean, var.max(0.0).sqrt()))
}

/// Rényi entropy `H_α = log(Σ p^α) / (1 - α)` in nats.
pub fn renyi_entropy(logprobs: &[f64], order: RenyiOrder) -> Result<f64, StatsError> {
    check_normalized(logprobs)?;
    let h = match order {
        RenyiOrder::Infinite => -max_of(logprobs),
        RenyiOrder::Finite(alpha) if !(alpha.is_finite() && alpha > 0.0) => {
            return Err(StatsError::InvalidOrder(alpha.to_string()));
        }
        RenyiOrder::Finite(1.0) => -logprobs.iter().map(|&lp| lp.exp() * lp).sum::<f64>(),
        RenyiOrder::Finite(alpha) => {
            let scaled: Vec<f64> = logprobs.iter().map(|lp| alpha * lp).collect();
            log_sum_exp(&scaled) / (1.0 - alpha)
        }
    };
    Ok(h.max(0.0))
}

/// All statistics of one normalized conditional distribution.
pub fn vocab_stats(logprobs: &[f64], orders: &[RenyiOrder]) -> Result<VocabStats, StatsError> {
    let (vocab_mean, vocab_std) = vocab_mean_std(logprobs)?;
    let max_cond_lp = max_of(logprobs);
    let mut renyi = BTreeMap::new();
    for &order in orders {
        let h = match order {
            // Stored as the exact negation so the record invariant holds bit-for-bit.
            RenyiOrder::Infinite => -max_cond_lp,
            _ => renyi_entropy(logprobs, order)?,
        };
        renyi.insert(order.key(), h);
    }
    Ok(VocabStats { vocab_mean, vocab_std, renyi, max_cond_lp })
}

/// Converts one full-distribution token into its compact observation.
pub fn summarize_token(index: usize, token: &FullToken, orders: &[RenyiOrder]) -> Result<TokenObservation, StatsError> {
    let vocab = token.clp_vec.len();
    let gt = token.gt as usize;
    if gt >= vocab {
        return Err(StatsError::GroundTruthOutOfRange { token: index, gt: token.gt, vocab });
    }
    let stats = vocab_stats(&token.clp_vec, orders)?;
    Ok(TokenObservation {
        scale: token.scale,
        position: token.position,
        cond_lp: token.clp_vec[gt],
        uncond_lp: token.uncond_lp,
        vocab_mean: stats.vocab_mean,
        vocab_std: stats.vocab_std,
        renyi: stats.renyi,
        max_cond_lp: stats.max_cond_lp,
    })
}

/// Converts a debug full-distribution record into the canonical record format.
pub fn summarize(full: &FullDistributionRecord, orders: &[RenyiOrder]) -> Result<SampleRecord, StatsError> {
    let tokens =
        full.tokens.iter().enumerate().map(|(i, t)| summarize_token(i, t, orders)).collect::<Result<Vec<_>, _>>()?;
    let record = SampleRecord {
        sample_id: full.sample_id.clone(),
        label: full.label,
        condition: full.condition.clone(),
        layout: full.layout.clone(),
        tokens,
    };
    record.validate()?;
    Ok(record)
}
