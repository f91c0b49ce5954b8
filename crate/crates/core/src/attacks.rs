//! Membership scores.
//!
//! The implicit-classifier score of a token is `log p(x_i | c) - log p(x_i)`.
//! A sample score sums token scores, either plainly or with the adaptive
//! weights `ω = 1 / (a + exp(b · s))`, which shrink the contribution of
//! tokens that score high and keep low-scoring tokens dominant.
//!
//! The reference-free baselines work on the same records:
//!
//! | attack   | token score                         | aggregation               |
//! |----------|-------------------------------------|---------------------------|
//! | Loss     | `log p(x_i | c)`                    | sum over all tokens       |
//! | Min-k%   | `log p(x_i | c)`                    | sum of the lowest k%      |
//! | Min-k%++ | `(log p(x_i | c) - μ) / σ`          | sum of the lowest k%      |
//! | Rényi    | `H_α(p(· | c))`                     | sum of the highest k%     |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::{Label, SampleRecord, TokenObservation};
use crate::stats::RenyiOrder;

pub const DEFAULT_A: f64 = 1.75;
pub const DEFAULT_B: f64 = 1.3;
pub const DEFAULT_K_PERCENT: f64 = 20.0;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-6;
/// Cap on `b · s` inside the adaptive weight; `exp(700)` is still finite.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttackError {
    #[error("scale filter selects no tokens")]
    EmptySelection,
    #[error("scale {scale} is outside 1..={num_scales}")]
    ScaleOutOfRange { scale: u32, num_scales: usize },
    #[error("record has no Rényi entropy of order α = {0}")]
    MissingRenyi(String),
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("attack produced a non-finite score")]
    NonFinite,
    #[error("sample `{sample_id}`: {source}")]
    Sample { sample_id: String, source: Box<AttackError> },
}

/// Which side of the threshold indicates membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsMember,
    LowerIsMember,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::HigherIsMember => "higher_is_member",
            Direction::LowerIsMember => "lower_is_member",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "higher_is_member" | "higher" => Ok(Direction::HigherIsMember),
            "lower_is_member" | "lower" => Ok(Direction::LowerIsMember),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcasConfig {
    pub a: f64,
    pub b: f64,
    /// `false` gives the plain sum of token scores.
    pub adaptive: bool,
}

impl Default for IcasConfig {
    fn default() -> Self {
        IcasConfig { a: DEFAULT_A, b: DEFAULT_B, adaptive: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinKConfig {
    pub k_percent: f64,
}

impl Default for MinKConfig {
    fn default() -> Self {
        MinKConfig { k_percent: DEFAULT_K_PERCENT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinKppConfig {
    pub k_percent: f64,
    pub sigma_floor: f64,
}

impl Default for MinKppConfig {
    fn default() -> Self {
        MinKppConfig { k_percent: DEFAULT_K_PERCENT, sigma_floor: DEFAULT_SIGMA_FLOOR }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenyiConfig {
    pub alpha: RenyiOrder,
    pub k_percent: f64,
    pub direction: Direction,
}

impl Default for RenyiConfig {
    fn default() -> Self {
        RenyiConfig {
            alpha: RenyiOrder::Finite(2.0),
            k_percent: DEFAULT_K_PERCENT,
            direction: Direction::LowerIsMember,
        }
    }
}

/// An attack and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttackConfig {
    Icas(IcasConfig),
    Loss,
    MinK(MinKConfig),
    MinKpp(MinKppConfig),
    Renyi(RenyiConfig),
}

fn check_k(k: f64) -> Result<(), AttackError> {
    if k > 0.0 && k <= 100.0 {
        Ok(())
    } else {
        Err(AttackError::InvalidConfig(format!("k_percent {k} must lie in (0, 100]")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), AttackError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(AttackError::InvalidConfig(format!("{name} = {v} must be positive")))
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        match self {
            AttackConfig::Icas(c) => {
                check_positive("a", c.a)?;
                check_positive("b", c.b)
            }
            AttackConfig::Loss => Ok(()),
            AttackConfig::MinK(c) => check_k(c.k_percent),
            AttackConfig::MinKpp(c) => {
                check_k(c.k_percent)?;
                check_positive("sigma_floor", c.sigma_floor)
            }
            AttackConfig::Renyi(c) => {
                if let RenyiOrder::Finite(a) = c.alpha {
                    check_positive("alpha", a)?;
                }
                check_k(c.k_percent)
            }
        }
    }

    /// File-name friendly identifier, e.g. `icas`, `icas_sum`, `mink_k20`.
    pub fn slug(&self) -> String {
        match self {
            AttackConfig::Icas(c) => {
                let mut s = if c.adaptive { "icas".to_string() } else { "icas_sum".to_string() };
                if c.adaptive && (c.a != DEFAULT_A || c.b != DEFAULT_B) {
                    s.push_str(&format!("_a{}_b{}", c.a, c.b));
                }
                s
            }
            AttackConfig::Loss => "loss".into(),
            AttackConfig::MinK(c) => format!("mink_k{}", c.k_percent),
            AttackConfig::MinKpp(c) => format!("minkpp_k{}", c.k_percent),
            AttackConfig::Renyi(c) => {
                let dir = match c.direction {
                    Direction::LowerIsMember => "",
                    Direction::HigherIsMember => "_hi",
                };
                format!("renyi_a{}_k{}{dir}", c.alpha, c.k_percent)
            }
        }
    }

    pub fn score(&self, record: &SampleRecord, filter: &ScaleFilter) -> Result<ScoredSample, AttackError> {
        match self {
            AttackConfig::Icas(c) => score_icas(record, c, filter),
            AttackConfig::Loss => score_loss(record, filter),
            AttackConfig::MinK(c) => score_mink(record, c, filter),
            AttackConfig::MinKpp(c) => score_minkpp(record, c, filter),
            AttackConfig::Renyi(c) => score_renyi(record, c, filter),
        }
    }
}

impl fmt::Display for AttackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackConfig::Icas(c) if c.adaptive => write!(f, "ICAS (a={}, b={})", c.a, c.b),
            AttackConfig::Icas(_) => write!(f, "ICAS w/o AS"),
            AttackConfig::Loss => write!(f, "Loss"),
            AttackConfig::MinK(c) => write!(f, "Min-k% (k={})", c.k_percent),
            AttackConfig::MinKpp(c) => write!(f, "Min-k%++ (k={})", c.k_percent),
            AttackConfig::Renyi(c) => write!(f, "Rényi (α={}, k={})", c.alpha, c.k_percent),
        }
    }
}

/// Parses the compact form `kind[:key=value,...]`, e.g. `icas:adaptive=false`,
/// `mink:k=20`, `renyi:alpha=inf,k=10,direction=higher`.
impl FromStr for AttackConfig {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params: Vec<(&str, &str)> = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| AttackError::InvalidConfig(format!("expected key=value, got `{item}`")))?;
            params.push((k.trim(), v.trim()));
        }
        let bad = |k: &str, v: &str| AttackError::InvalidConfig(format!("bad value `{v}` for `{k}` in `{s}`"));
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(k, v));
        let unknown = |k: &str| AttackError::InvalidConfig(format!("unknown parameter `{k}` in `{s}`"));

        let cfg = match kind.trim().to_ascii_lowercase().as_str() {
            "icas" => {
                let mut c = IcasConfig::default();
                for (k, v) in params {
                    match k {
                        "a" => c.a = num(k, v)?,
                        "b" => c.b = num(k, v)?,
                        "adaptive" => c.adaptive = v.parse().map_err(|_| bad(k, v))?,
                        _ => return Err(unknown(k)),
                    }
                }
                AttackConfig::Icas(c)
            }
            "loss" => match params.first() {
                Some((k, _)) => return Err(unknown(k)),
                None => AttackConfig::Loss,
            },
            "mink" => {
                let mut c = MinKConfig::default();
                for (k, v) in params {
                    match k {
                        "k" | "k_percent" => c.k_percent = num(k, v)?,
                        _ => return Err(unknown(k)),
                    }
                }
                AttackConfig::MinK(c)
            }
            "minkpp" => {
                let mut c = MinKppConfig::default();
                for (k, v) in params {
                    match k {
                        "k" | "k_percent" => c.k_percent = num(k, v)?,
                        "floor" | "sigma_floor" => c.sigma_floor = num(k, v)?,
                        _ => return Err(unknown(k)),
                    }
                }
                AttackConfig::MinKpp(c)
            }
            "renyi" => {
                let mut c = RenyiConfig::default();
                for (k, v) in params {
                    match k {
                        "alpha" => c.alpha = v.parse().map_err(|_| bad(k, v))?,
                        "k" | "k_percent" => c.k_percent = num(k, v)?,
                        "direction" => c.direction = v.parse().map_err(|_| bad(k, v))?,
                        _ => return Err(unknown(k)),
                    }
                }
                AttackConfig::Renyi(c)
            }
            other => return Err(AttackError::InvalidConfig(format!("unknown attack `{other}`"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Restricts scoring to a subset of scale levels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ScaleFilter {
    #[default]
    All,
    Scales(BTreeSet<u32>),
}

impl ScaleFilter {
    /// Scales `1..=j`.
    pub fn first(j: u32) -> Self {
        ScaleFilter::Scales((1..=j).collect())
    }

    /// Selected tokens in `(scale, position)` order.
    pub fn select<'r>(&self, record: &'r SampleRecord) -> Result<Vec<&'r TokenObservation>, AttackError> {
        let mut tokens: Vec<&TokenObservation> = match self {
            ScaleFilter::All => record.tokens.iter().collect(),
            ScaleFilter::Scales(set) => {
                let num_scales = record.layout.num_scales();
                if let Some(&scale) = set.iter().find(|&&k| k == 0 || k as usize > num_scales) {
                    return Err(AttackError::ScaleOutOfRange { scale, num_scales });
                }
                record.tokens.iter().filter(|t| set.contains(&t.scale)).collect()
            }
        };
        if tokens.is_empty() {
            return Err(AttackError::EmptySelection);
        }
        if !tokens.windows(2).all(|w| w[0].key() <= w[1].key()) {
            tokens.sort_by_key(|t| t.key());
        }
        Ok(tokens)
    }
}

impl FromStr for ScaleFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(ScaleFilter::All);
        }
        let set = s
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|_| format!("bad scale `{p}` in `{s}`")))
            .collect::<Result<BTreeSet<_>, _>>()?;
        if set.is_empty() || set.contains(&0) {
            return Err(format!("scale list `{s}` must name scales ≥ 1"));
        }
        Ok(ScaleFilter::Scales(set))
    }
}

impl fmt::Display for ScaleFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScaleFilter::All => f.write_str("all"),
            ScaleFilter::Scales(set) => {
                let parts: Vec<String> = set.iter().map(u32::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// A sample-level score with its orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample_id: String,
    pub label: Label,
    pub score: f64,
    pub direction: Direction,
    /// Tokens that passed the scale filter.
    pub n_tokens: usize,
}

/// `log p(x_i | c) - log p(x_i)`.
pub fn icas_token_score(t: &TokenObservation) -> f64 {
    t.cond_lp - t.uncond_lp
}

/// `1 / (a + exp(b · s))`, with the exponent capped so it never overflows.
pub fn adaptive_weight(s: f64, a: f64, b: f64) -> f64 {
    1.0 / (a + (b * s).min(MAX_EXPONENT).exp())
}

/// `ω(s) · s`, computed as a single quotient.
pub fn adaptive_term(s: f64, a: f64, b: f64) -> f64 {
    s / (a + (b * s).min(MAX_EXPONENT).exp())
}

/// Number of tokens kept by a k% selection over `n` tokens: `max(1, ⌈k·n/100⌉)`.
pub fn selection_count(k_percent: f64, n: usize) -> usize {
    crate::ceil_count(k_percent / 100.0, n).clamp(1, n.max(1))
}

fn finish(
    record: &SampleRecord,
    score: f64,
    direction: Direction,
    n_tokens: usize,
) -> Result<ScoredSample, AttackError> {
    if !score.is_finite() {
        return Err(AttackError::NonFinite);
    }
    Ok(ScoredSample { sample_id: record.sample_id.clone(), label: record.label, score, direction, n_tokens })
}

/// Picks the `m` first values after sorting by `(value, scale, position)`,
/// ascending or with the value order reversed, and sums them in
/// `(scale, position)` order. At k = 100% this is the plain token-order sum.
fn select_sum(mut keyed: Vec<(f64, (u32, u32))>, k_percent: f64, largest: bool) -> f64 {
    let m = selection_count(k_percent, keyed.len());
    keyed.sort_by(|x, y| {
        let by_value = if largest { y.0.total_cmp(&x.0) } else { x.0.total_cmp(&y.0) };
        by_value.then(x.1.cmp(&y.1))
    });
    keyed.truncate(m);
    keyed.sort_by_key(|&(_, key)| key);
    keyed.iter().map(|(v, _)| v).sum()
}

pub fn score_icas(record: &SampleRecord, cfg: &IcasConfig, filter: &ScaleFilter) -> Result<ScoredSample, AttackError> {
    let tokens = filter.select(record)?;
    let score: f64 = if cfg.adaptive {
        tokens.iter().map(|t| adaptive_term(icas_token_score(t), cfg.a, cfg.b)).sum()
    } else {
        tokens.iter().map(|t| icas_token_score(t)).sum()
    };
    finish(record, score, Direction::HigherIsMember, tokens.len())
}

pub fn score_loss(record: &SampleRecord, filter: &ScaleFilter) -> Result<ScoredSample, AttackError> {
    let tokens = filter.select(record)?;
    let score: f64 = tokens.iter().map(|t| t.cond_lp).sum();
    finish(record, score, Direction::HigherIsMember, tokens.len())
}

pub fn score_mink(record: &SampleRecord, cfg: &MinKConfig, filter: &ScaleFilter) -> Result<ScoredSample, AttackError> {
    let tokens = filter.select(record)?;
    let keyed = tokens.iter().map(|t| (t.cond_lp, t.key())).collect();
    let score = select_sum(keyed, cfg.k_percent, false);
    finish(record, score, Direction::HigherIsMember, tokens.len())
}

/// Vocabulary-standardized token score `(log p(x_i | c) - μ) / max(σ, floor)`.
pub fn minkpp_token_score(t: &TokenObservation, sigma_floor: f64) -> f64 {
    (t.cond_lp - t.vocab_mean) / t.vocab_std.max(sigma_floor)
}

pub fn score_minkpp(
    record: &SampleRecord,
    cfg: &MinKppConfig,
    filter: &ScaleFilter,
) -> Result<ScoredSample, AttackError> {
    let tokens = filter.select(record)?;
    let keyed = tokens.iter().map(|t| (minkpp_token_score(t, cfg.sigma_floor), t.key())).collect();
    let score = select_sum(keyed, cfg.k_percent, false);
    finish(record, score, Direction::HigherIsMember, tokens.len())
}

/// Entropy of order `alpha` of the token's conditional distribution.
pub fn renyi_token_score(t: &TokenObservation, alpha: RenyiOrder) -> Result<f64, AttackError> {
    match alpha {
        RenyiOrder::Infinite => Ok(-t.max_cond_lp),
        RenyiOrder::Finite(_) => {
            let key = alpha.key();
            t.renyi.get(&key).copied().ok_or(AttackError::MissingRenyi(key))
        }
    }
}

pub fn score_renyi(
    record: &SampleRecord,
    cfg: &RenyiConfig,
    filter: &ScaleFilter,
) -> Result<ScoredSample, AttackError> {
    let tokens = filter.select(record)?;
    let keyed = tokens
        .iter()
        .map(|t| Ok((renyi_token_score(t, cfg.alpha)?, t.key())))
        .collect::<Result<Vec<_>, AttackError>>()?;
    let score = select_sum(keyed, cfg.k_percent, true);
    finish(record, score, cfg.direction, tokens.len())
}

/// Scores every record, preserving input order. Work is spread over the
/// current rayon pool; results do not depend on the worker count.
pub fn score_dataset(
    records: &[SampleRecord],
    cfg: &AttackConfig,
    filter: &ScaleFilter,
) -> Result<Vec<ScoredSample>, AttackError> {
    cfg.validate()?;
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.layout != first.layout) {
            log::warn!("dataset mixes scale layouts; raw sums are not comparable across samples");
        }
    }
    records
        .par_iter()
        .map(|r| {
            cfg.score(r, filter)
                .map_err(|e| AttackError::Sample { sample_id: r.sample_id.clone(), source: Box::new(e) })
        })
        .collect()
}
