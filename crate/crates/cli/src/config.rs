//! TOML run configuration. Every section is optional; missing keys take the
//! defaults below, unknown keys are rejected.

use std::path::{Path, PathBuf};

use icas_audit::attacks::{AttackConfig, IcasConfig, MinKConfig, MinKppConfig, RenyiConfig, ScaleFilter};
use icas_audit::records::ScaleLayout;
use icas_audit::stats::RenyiOrder;
use icas_audit::toymodel::{ToyWorldConfig, TrainConfig, DEFAULT_CONDITION_DROPOUT};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub world: WorldSection,
    pub train: TrainSection,
    #[serde(rename = "attack")]
    pub attacks: Vec<AttackConfig>,
    pub eval: EvalSection,
    pub data: DataSection,
    pub fit: FitSection,
    pub convert: ConvertSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("icas-out"),
            seed: 0,
            world: WorldSection::default(),
            train: TrainSection::default(),
            attacks: default_attacks(),
            eval: EvalSection::default(),
            data: DataSection::default(),
            fit: FitSection::default(),
            convert: ConvertSection::default(),
        }
    }
}

/// ICAS, ICAS without adaptive aggregation, and the four baselines.
pub fn default_attacks() -> Vec<AttackConfig> {
    vec![
        AttackConfig::Icas(IcasConfig::default()),
        AttackConfig::Icas(IcasConfig { adaptive: false, ..IcasConfig::default() }),
        AttackConfig::Loss,
        AttackConfig::MinK(MinKConfig::default()),
        AttackConfig::MinKpp(MinKppConfig::default()),
        AttackConfig::Renyi(RenyiConfig::default()),
    ]
}

pub fn default_orders() -> Vec<RenyiOrder> {
    vec![RenyiOrder::Finite(0.5), RenyiOrder::Finite(1.0), RenyiOrder::Finite(2.0), RenyiOrder::Infinite]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub n_conditions: usize,
    pub layout: Vec<(u32, u32)>,
    pub vocab_size: usize,
    pub dirichlet_concentration: f64,
    pub members_per_condition: usize,
    pub nonmembers_per_condition: usize,
    pub renyi_orders: Vec<RenyiOrder>,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection {
            n_conditions: 4,
            layout: vec![(1, 1), (2, 2), (3, 3), (4, 4)],
            vocab_size: 64,
            dirichlet_concentration: 0.1,
            members_per_condition: 25,
            nonmembers_per_condition: 25,
            renyi_orders: default_orders(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub condition_dropout: f64,
    pub label_smoothing: f64,
    pub init_noise: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 200,
            learning_rate: 0.5,
            condition_dropout: DEFAULT_CONDITION_DROPOUT,
            label_smoothing: 0.0,
            init_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fpr: Vec<f64>,
    /// Falls back to the manifest's value.
    pub calibration_fraction: Option<f64>,
    pub scales: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { fpr: vec![0.05], calibration_fraction: None, scales: "all".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Defaults to `<out_dir>/manifest.toml`.
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub input: Option<PathBuf>,
    pub x_transform: String,
    pub max_auroc: Option<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { input: None, x_transform: "identity".into(), max_auroc: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvertSection {
    pub input: Option<PathBuf>,
    /// Defaults to `<out_dir>/records.jsonl`.
    pub output: Option<PathBuf>,
    /// Defaults to `world.renyi_orders`.
    pub alphas: Option<Vec<RenyiOrder>>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub attacks: Vec<AttackConfig>,
    pub fpr: Vec<f64>,
    pub calibration_fraction: Option<f64>,
    pub scales: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(dir) = o.out_dir {
            self.out_dir = dir;
        }
        if !o.attacks.is_empty() {
            self.attacks = o.attacks;
        }
        if !o.fpr.is_empty() {
            self.eval.fpr = o.fpr;
        }
        if o.calibration_fraction.is_some() {
            self.eval.calibration_fraction = o.calibration_fraction;
        }
        if let Some(scales) = o.scales {
            self.eval.scales = scales;
        }
    }

    pub fn world_config(&self) -> Result<ToyWorldConfig, CliError> {
        let layout =
            ScaleLayout::new(self.world.layout.clone()).map_err(|e| CliError::Config(format!("world.layout: {e}")))?;
        let cfg = ToyWorldConfig {
            n_conditions: self.world.n_conditions,
            layout,
            vocab_size: self.world.vocab_size,
            dirichlet_concentration: self.world.dirichlet_concentration,
            seed: self.seed,
        };
        cfg.validate().map_err(|e| CliError::Config(format!("world: {e}")))?;
        if self.world.members_per_condition == 0 || self.world.nonmembers_per_condition == 0 {
            return Err(CliError::Config("world: per-condition sample counts must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            condition_dropout: self.train.condition_dropout,
            label_smoothing: self.train.label_smoothing,
            init_noise: self.train.init_noise,
            seed: self.init_noise_seed(),
        };
        cfg.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }

    /// The world uses `seed`; the member/hold-out draw and the initial
    /// noise use the next two values so the three streams are distinct.
    pub fn dataset_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn init_noise_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn scale_filter(&self) -> Result<ScaleFilter, CliError> {
        self.eval.scales.parse().map_err(|e| CliError::Config(format!("eval.scales: {e}")))
    }

    pub fn validated_attacks(&self) -> Result<&[AttackConfig], CliError> {
        if self.attacks.is_empty() {
            return Err(CliError::Config("attack: at least one attack is required".into()));
        }
        for (i, a) in self.attacks.iter().enumerate() {
            a.validate().map_err(|e| CliError::Config(format!("attack[{i}]: {e}")))?;
        }
        let mut slugs: Vec<String> = self.attacks.iter().map(AttackConfig::slug).collect();
        slugs.sort();
        if let Some(w) = slugs.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Config(format!("attack: `{}` is configured twice", w[0])));
        }
        Ok(&self.attacks)
    }

    pub fn fpr_budgets(&self) -> Result<&[f64], CliError> {
        if let Some((i, b)) = self.eval.fpr.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b <= 1.0)) {
            return Err(CliError::Config(format!("eval.fpr[{i}] = {b} must lie in (0, 1]")));
        }
        Ok(&self.eval.fpr)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data.manifest.clone().unwrap_or_else(|| self.out_dir.join("manifest.toml"))
    }
}
