//! Synthetic conditional autoregressive target.
//!
//! The world assigns every `(condition, token position)` a categorical
//! distribution drawn from a symmetric Dirichlet. The model is a pair of
//! logit tables: one conditional row per `(condition, position)` and one
//! unconditional row per position. Training minimizes the cross-entropy of
//! the member tokens with condition dropout taken in expectation: every
//! sample contributes `1 - p` of its gradient to the conditional table and
//! `p` to the unconditional one. A table model has no capacity limit, so it
//! memorizes its members as training proceeds.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::records::{FullDistributionRecord, FullToken, Label, SampleRecord, ScaleLayout, TokenObservation};
use crate::stats::{self, RenyiOrder, StatsError, VocabStats};

pub const DEFAULT_CONDITION_DROPOUT: f64 = 0.1;
/// Allowed loss increase between epochs before the step is halved.
const LOSS_SLACK: f64 = 1e-9;
const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("invalid toy configuration: {0}")]
    InvalidConfig(String),
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("step size collapsed at epoch {epoch} without decreasing the loss")]
    StepCollapsed { epoch: usize },
    #[error("sequence {index} does not fit the model: {reason}")]
    BadSequence { index: usize, reason: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorldConfig {
    pub n_conditions: usize,
    pub layout: ScaleLayout,
    pub vocab_size: usize,
    pub dirichlet_concentration: f64,
    pub seed: u64,
}

impl ToyWorldConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if self.n_conditions < 2 {
            return bad(format!("n_conditions = {} must be at least 2", self.n_conditions));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size = {} must be at least 2", self.vocab_size));
        }
        if !(self.dirichlet_concentration.is_finite() && self.dirichlet_concentration > 0.0) {
            return bad(format!("dirichlet_concentration = {} must be positive", self.dirichlet_concentration));
        }
        self.layout.validate().map_err(|e| ToyError::InvalidConfig(e.to_string()))
    }
}

/// Ground-truth token distributions `q(v | c, position)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    pub config: ToyWorldConfig,
    probs: Vec<f64>,
}

impl ToyWorld {
    pub fn n_tokens(&self) -> usize {
        self.config.layout.total_tokens()
    }

    pub fn q(&self, condition: usize, position: usize) -> &[f64] {
        let v = self.config.vocab_size;
        let start = (condition * self.n_tokens() + position) * v;
        &self.probs[start..start + v]
    }
}

/// Draws one `Dirichlet(α, …, α)` vector. Gamma variates are generated in
/// log space (`G(α+1) · U^{1/α}`) so small concentrations do not underflow.
fn dirichlet(rng: &mut ChaCha8Rng, concentration: f64, dim: usize) -> Vec<f64> {
    let gamma = Gamma::new(concentration + 1.0, 1.0).expect("shape and scale are positive");
    let logs: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>();
            g.ln() + (1.0 - u).ln() / concentration
        })
        .collect();
    let lse = stats::log_sum_exp(&logs);
    let p: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
    let total: f64 = p.iter().sum();
    p.into_iter().map(|x| x / total).collect()
}

pub fn sample_world(cfg: &ToyWorldConfig) -> Result<ToyWorld, ToyError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cells = cfg.n_conditions * cfg.layout.total_tokens();
    let mut probs = Vec::with_capacity(cells * cfg.vocab_size);
    for _ in 0..cells {
        probs.extend(dirichlet(&mut rng, cfg.dirichlet_concentration, cfg.vocab_size));
    }
    Ok(ToyWorld { config: cfg.clone(), probs })
}

/// A flattened token sequence of length `N` under one condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySequence {
    pub condition: usize,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyDataset {
    pub members: Vec<ToySequence>,
    pub nonmembers: Vec<ToySequence>,
}

/// Independent member and hold-out draws from the same world, grouped by
/// condition (all members of condition 0 first, and so on).
pub fn draw_dataset(
    world: &ToyWorld,
    n_member_per_cond: usize,
    n_nonmember_per_cond: usize,
    seed: u64,
) -> Result<ToyDataset, ToyError> {
    if n_member_per_cond == 0 || n_nonmember_per_cond == 0 {
        return Err(ToyError::InvalidConfig("per-condition sample counts must be at least 1".into()));
    }
    let n = world.n_tokens();
    let samplers: Vec<WeightedIndex<f64>> = (0..world.config.n_conditions)
        .flat_map(|c| (0..n).map(move |pos| (c, pos)))
        .map(|(c, pos)| WeightedIndex::new(world.q(c, pos)).expect("Dirichlet draws are valid weights"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<ToySequence> {
        let mut out = Vec::with_capacity(count * world.config.n_conditions);
        for c in 0..world.config.n_conditions {
            for _ in 0..count {
                let tokens = (0..n).map(|pos| samplers[c * n + pos].sample(&mut rng) as u32).collect();
                out.push(ToySequence { condition: c, tokens });
            }
        }
        out
    };
    let members = draw(n_member_per_cond);
    let nonmembers = draw(n_nonmember_per_cond);
    Ok(ToyDataset { members, nonmembers })
}

/// Conditional and unconditional logit tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub n_conditions: usize,
    pub n_tokens: usize,
    pub vocab_size: usize,
    /// Shape `[n_conditions, n_tokens, vocab_size]`, row-major.
    pub cond_logits: Vec<f64>,
    /// Shape `[n_tokens, vocab_size]`.
    pub uncond_logits: Vec<f64>,
}

impl ToyModelParams {
    /// All-zero logits: the uniform model.
    pub fn zeros(n_conditions: usize, n_tokens: usize, vocab_size: usize) -> Self {
        ToyModelParams {
            n_conditions,
            n_tokens,
            vocab_size,
            cond_logits: vec![0.0; n_conditions * n_tokens * vocab_size],
            uncond_logits: vec![0.0; n_tokens * vocab_size],
        }
    }

    pub fn for_world(world: &ToyWorld) -> Self {
        Self::zeros(world.config.n_conditions, world.n_tokens(), world.config.vocab_size)
    }

    /// Adds `scale · N(0, 1)` noise to every logit, drawn from a seeded stream.
    pub fn perturb(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in self.cond_logits.iter_mut().chain(self.uncond_logits.iter_mut()) {
            let z: f64 = rng.sample(StandardNormal);
            *x += scale * z;
        }
    }

    pub fn cond_row(&self, condition: usize, position: usize) -> &[f64] {
        let start = (condition * self.n_tokens + position) * self.vocab_size;
        &self.cond_logits[start..start + self.vocab_size]
    }

    pub fn uncond_row(&self, position: usize) -> &[f64] {
        let start = position * self.vocab_size;
        &self.uncond_logits[start..start + self.vocab_size]
    }

    /// `n_conditions · N · V + N · V`.
    pub fn param_count(&self) -> usize {
        self.cond_logits.len() + self.uncond_logits.len()
    }

    fn check_sequences(&self, seqs: &[ToySequence]) -> Result<(), ToyError> {
        for (index, s) in seqs.iter().enumerate() {
            let reason = if s.condition >= self.n_conditions {
                format!("condition {} >= {}", s.condition, self.n_conditions)
            } else if s.tokens.len() != self.n_tokens {
                format!("{} tokens, model has {}", s.tokens.len(), self.n_tokens)
            } else if let Some(t) = s.tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
                format!("token {t} outside vocabulary of {}", self.vocab_size)
            } else {
                continue;
            };
            return Err(ToyError::BadSequence { index, reason });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub condition_dropout: f64,
    pub label_smoothing: f64,
    /// Standard deviation of the seeded noise added to the initial logits.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 0,
            learning_rate: 0.5,
            condition_dropout: DEFAULT_CONDITION_DROPOUT,
            label_smoothing: 0.0,
            init_noise: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.condition_dropout) {
            return bad(format!("condition_dropout = {} must lie in [0, 1)", self.condition_dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing = {} must lie in [0, 1)", self.label_smoothing));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return bad(format!("init_noise = {} must be non-negative", self.init_noise));
        }
        Ok(())
    }

    /// Zero tables, plus the configured seeded noise.
    pub fn init_params(&self, world: &ToyWorld) -> ToyModelParams {
        let mut params = ToyModelParams::for_world(world);
        if self.init_noise > 0.0 {
            params.perturb(self.init_noise, self.seed);
        }
        params
    }
}

/// Cross-entropy `-Σ_v target_v · log softmax(logits)_v` for an unnormalized
/// target (a count vector).
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> Result<f64, StatsError> {
    let lp = stats::log_normalize(logits)?;
    Ok(-lp.iter().zip(target).map(|(l, t)| l * t).sum::<f64>())
}

/// Gradient of [`cross_entropy`]: `(Σ target) · softmax(logits) - target`.
pub fn cross_entropy_grad(logits: &[f64], target: &[f64]) -> Result<Vec<f64>, StatsError> {
    let lp = stats::log_normalize(logits)?;
    let mass: f64 = target.iter().sum();
    Ok(lp.iter().zip(target).map(|(l, t)| mass * l.exp() - t).collect())
}

/// Smoothed target counts for every table row, with the row's loss weight.
struct Targets {
    cond: Vec<f64>,
    uncond: Vec<f64>,
    cond_weight: f64,
    uncond_weight: f64,
}

fn build_targets(params: &ToyModelParams, members: &[ToySequence], cfg: &TrainConfig) -> Targets {
    let (n, v) = (params.n_tokens, params.vocab_size);
    let mut cond = vec![0.0; params.cond_logits.len()];
    let mut uncond = vec![0.0; params.uncond_logits.len()];
    let keep = 1.0 - cfg.label_smoothing;
    let spread = cfg.label_smoothing / v as f64;
    for s in members {
        for (pos, &tok) in s.tokens.iter().enumerate() {
            let crow = (s.condition * n + pos) * v;
            let urow = pos * v;
            cond[crow + tok as usize] += keep;
            uncond[urow + tok as usize] += keep;
            if spread > 0.0 {
                cond[crow..crow + v].iter_mut().for_each(|x| *x += spread);
                uncond[urow..urow + v].iter_mut().for_each(|x| *x += spread);
            }
        }
    }
    let m = members.len() as f64;
    Targets { cond, uncond, cond_weight: (1.0 - cfg.condition_dropout) / m, uncond_weight: cfg.condition_dropout / m }
}

fn table_loss(logits: &[f64], targets: &[f64], v: usize, weight: f64) -> Result<f64, StatsError> {
    if weight == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, t) in logits.chunks(v).zip(targets.chunks(v)) {
        if t.iter().any(|&x| x != 0.0) {
            total += cross_entropy(row, t)?;
        }
    }
    Ok(weight * total)
}

fn table_grad(logits: &[f64], targets: &[f64], v: usize, weight: f64) -> Result<Vec<f64>, StatsError> {
    let mut grad = vec![0.0; logits.len()];
    if weight == 0.0 {
        return Ok(grad);
    }
    for ((row, t), g) in logits.chunks(v).zip(targets.chunks(v)).zip(grad.chunks_mut(v)) {
        if t.iter().any(|&x| x != 0.0) {
            for (gi, d) in g.iter_mut().zip(cross_entropy_grad(row, t)?) {
                *gi = weight * d;
            }
        }
    }
    Ok(grad)
}

fn objective(params: &ToyModelParams, t: &Targets) -> Result<f64, StatsError> {
    let v = params.vocab_size;
    Ok(table_loss(&params.cond_logits, &t.cond, v, t.cond_weight)?
        + table_loss(&params.uncond_logits, &t.uncond, v, t.uncond_weight)?)
}

/// Training trace: the objective before the first epoch and after each one.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub final_learning_rate: f64,
}

/// Full-batch gradient descent on the expected condition-dropout objective
/// `(1/M) Σ_i Σ_pos [(1-p)·CE(cond[c_i, pos]) + p·CE(uncond[pos])]`.
///
/// The objective never increases by more than 1e-9 between epochs: a step
/// that would increase it is retried with half the learning rate.
pub fn train(
    params: &ToyModelParams,
    members: &[ToySequence],
    cfg: &TrainConfig,
) -> Result<(ToyModelParams, TrainLog), ToyError> {
    cfg.validate()?;
    if members.is_empty() {
        return Err(ToyError::InvalidConfig("training needs at least one member".into()));
    }
    params.check_sequences(members)?;
    let targets = build_targets(params, members, cfg);
    let v = params.vocab_size;
    let mut current = params.clone();
    let mut loss = objective(&current, &targets)?;
    let mut lr = cfg.learning_rate;
    let mut losses = vec![loss];
    for epoch in 1..=cfg.epochs {
        let g_cond = table_grad(&current.cond_logits, &targets.cond, v, targets.cond_weight)?;
        let g_uncond = table_grad(&current.uncond_logits, &targets.uncond, v, targets.uncond_weight)?;
        let mut halvings = 0;
        loop {
            let mut next = current.clone();
            next.cond_logits.iter_mut().zip(&g_cond).for_each(|(x, g)| *x -= lr * g);
            next.uncond_logits.iter_mut().zip(&g_uncond).for_each(|(x, g)| *x -= lr * g);
            let next_loss = objective(&next, &targets)?;
            if !next_loss.is_finite() {
                return Err(ToyError::NonFiniteLoss { epoch });
            }
            if next_loss <= loss + LOSS_SLACK {
                current = next;
                loss = next_loss;
                break;
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(ToyError::StepCollapsed { epoch });
            }
            lr /= 2.0;
        }
        losses.push(loss);
    }
    Ok((current, TrainLog { losses, final_learning_rate: lr }))
}

struct CellView {
    logprobs: Vec<f64>,
    stats: VocabStats,
}

fn sample_id(label: Label, index: usize) -> String {
    let prefix = match label {
        Label::Member => "m",
        Label::Nonmember => "n",
        Label::Unknown => "u",
    };
    format!("{prefix}-{index:06}")
}

pub fn condition_name(condition: usize) -> String {
    format!("class-{condition}")
}

/// Canonical records for `sequences` under the model. Row statistics are
/// computed once per table row with [`stats::vocab_stats`], which is the
/// path [`stats::summarize`] takes on the equivalent full-distribution record.
pub fn emit_records(
    params: &ToyModelParams,
    layout: &ScaleLayout,
    sequences: &[ToySequence],
    label: Label,
    orders: &[RenyiOrder],
) -> Result<Vec<SampleRecord>, ToyError> {
    if layout.total_tokens() != params.n_tokens {
        return Err(ToyError::InvalidConfig(format!(
            "layout holds {} tokens, model has {}",
            layout.total_tokens(),
            params.n_tokens
        )));
    }
    params.check_sequences(sequences)?;
    let n = params.n_tokens;
    let cond_cells = (0..params.n_conditions * n)
        .into_par_iter()
        .map(|cell| {
            let logprobs = stats::log_normalize(params.cond_row(cell / n, cell % n))?;
            let stats = stats::vocab_stats(&logprobs, orders)?;
            Ok(CellView { logprobs, stats })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;
    let uncond_rows =
        (0..n).map(|pos| stats::log_normalize(params.uncond_row(pos))).collect::<Result<Vec<_>, StatsError>>()?;
    let positions: Vec<(u32, u32)> = (0..n).map(|i| layout.locate(i).expect("index below N")).collect();

    let records = sequences
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let tokens = s
                .tokens
                .iter()
                .enumerate()
                .map(|(pos, &tok)| {
                    let cell = &cond_cells[s.condition * n + pos];
                    let (scale, position) = positions[pos];
                    TokenObservation {
                        scale,
                        position,
                        cond_lp: cell.logprobs[tok as usize],
                        uncond_lp: uncond_rows[pos][tok as usize],
                        vocab_mean: cell.stats.vocab_mean,
                        vocab_std: cell.stats.vocab_std,
                        renyi: cell.stats.renyi.clone(),
                        max_cond_lp: cell.stats.max_cond_lp,
                    }
                })
                .collect();
            SampleRecord {
                sample_id: sample_id(label, index),
                label,
                condition: condition_name(s.condition),
                layout: layout.clone(),
                tokens,
            }
        })
        .collect();
    Ok(records)
}

/// Debug records carrying every conditional log-prob vector.
pub fn emit_full_records(
    params: &ToyModelParams,
    layout: &ScaleLayout,
    sequences: &[ToySequence],
    label: Label,
) -> Result<Vec<FullDistributionRecord>, ToyError> {
    params.check_sequences(sequences)?;
    sequences
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let tokens = s
                .tokens
                .iter()
                .enumerate()
                .map(|(pos, &tok)| {
                    let (scale, position) = layout.locate(pos).expect("index below N");
                    let uncond = stats::log_normalize(params.uncond_row(pos))?;
                    Ok(FullToken {
                        scale,
                        position,
                        gt: tok,
                        clp_vec: stats::log_normalize(params.cond_row(s.condition, pos))?,
                        uncond_lp: uncond[tok as usize],
                    })
                })
                .collect::<Result<Vec<_>, StatsError>>()?;
            Ok(FullDistributionRecord {
                sample_id: sample_id(label, index),
                label,
                condition: condition_name(s.condition),
                layout: layout.clone(),
                tokens,
            })
        })
        .collect()
}
