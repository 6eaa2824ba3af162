use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{make_dataset, ClassConditionalDataset, DatasetSpec, Layout};
use crate::error::{Error, Result};
use crate::nets::ArchConfig;
use crate::objective::Formulation;
use crate::schedule::TransitionSchedule;

/// Offsets added to the master seed for each random stream.
pub const DATA_SEED_OFFSET: u64 = 0x0101;
pub const SUBSET_SEED_OFFSET: u64 = 0x0202;
pub const INIT_SEED_OFFSET: u64 = 0x0303;
pub const TRAIN_SEED_OFFSET: u64 = 0x0404;
pub const EVAL_SEED_OFFSET: u64 = 0x0505;
pub const DUMP_SEED_OFFSET: u64 = 0x0606;

/// Training regime, including the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unconditional,
    Conditional,
    Transitional,
    NoTransition,
    TransitionGOnly,
    TransitionLossOnly,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Unconditional,
        Mode::Conditional,
        Mode::Transitional,
        Mode::NoTransition,
        Mode::TransitionGOnly,
        Mode::TransitionLossOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unconditional => "unconditional",
            Mode::Conditional => "conditional",
            Mode::Transitional => "transitional",
            Mode::NoTransition => "no_transition",
            Mode::TransitionGOnly => "transition_g_only",
            Mode::TransitionLossOnly => "transition_loss_only",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown mode '{s}'")))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flat run configuration; the JSON form uses exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub t_start: i64,
    pub t_end: i64,
    pub t_max: i64,
    pub clip_max: f64,
    pub formulation: Formulation,

    pub num_classes: usize,
    pub samples_per_class: usize,
    pub modes_per_class: usize,
    pub mode_sigma: f64,
    pub layout: Layout,
    pub data_dim: usize,
    pub subset_classes: Option<usize>,
    pub subset_per_class: Option<usize>,

    pub latent_dim: usize,
    pub embed_dim: usize,
    pub mapping_layers: usize,
    pub mapping_units: usize,
    pub synthesis_layers: usize,
    pub synthesis_units: usize,
    pub trunk_layers: usize,
    pub trunk_units: usize,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub r1_weight: f64,

    pub eval_every: u64,
    /// 0 disables sample dumps.
    pub sample_dump_every: u64,
    /// Intermediate checkpoint interval; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub eval_classwise: bool,
    pub seed: u64,
    pub output_dir: Option<String>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let s = TransitionSchedule::default();
        let a = ArchConfig::default();
        Self {
            mode: Mode::Transitional,
            t_start: s.t_start,
            t_end: s.t_end,
            t_max: s.t_max,
            clip_max: s.clip_max,
            formulation: Formulation::Additive,
            num_classes: 8,
            samples_per_class: 20,
            modes_per_class: 4,
            mode_sigma: 0.05,
            layout: Layout::Ring,
            data_dim: 2,
            subset_classes: None,
            subset_per_class: None,
            latent_dim: a.latent_dim,
            embed_dim: a.embed_dim,
            mapping_layers: a.mapping_layers,
            mapping_units: a.mapping_units,
            synthesis_layers: a.synthesis_layers,
            synthesis_units: a.synthesis_units,
            trunk_layers: a.trunk_layers,
            trunk_units: a.trunk_units,
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            batch_size: 64,
            d_steps_per_g_step: 1,
            r1_weight: 0.1,
            eval_every: 500,
            sample_dump_every: 0,
            checkpoint_every: 0,
            eval_classwise: false,
            seed: 0,
            output_dir: None,
        }
    }
}

impl TrainingConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn schedule(&self) -> TransitionSchedule {
        TransitionSchedule {
            t_start: self.t_start,
            t_end: self.t_end,
            t_max: self.t_max,
            clip_max: self.clip_max,
        }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            num_classes: self.num_classes,
            samples_per_class: self.samples_per_class,
            modes_per_class: self.modes_per_class,
            mode_sigma: self.mode_sigma,
            layout: self.layout,
            seed: self.seed.wrapping_add(DATA_SEED_OFFSET),
            dim: self.data_dim,
        }
    }

    /// Class count seen by the networks (after any subsetting).
    pub fn effective_classes(&self) -> usize {
        self.subset_classes.unwrap_or(self.num_classes)
    }

    pub fn effective_per_class(&self) -> usize {
        self.subset_per_class.unwrap_or(self.samples_per_class)
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            data_dim: self.data_dim,
            num_classes: self.effective_classes(),
            latent_dim: self.latent_dim,
            embed_dim: self.embed_dim,
            mapping_layers: self.mapping_layers,
            mapping_units: self.mapping_units,
            synthesis_layers: self.synthesis_layers,
            synthesis_units: self.synthesis_units,
            trunk_layers: self.trunk_layers,
            trunk_units: self.trunk_units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.dataset_spec().validate()?;
        self.arch().validate()?;
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if self.d_steps_per_g_step < 1 {
            return Err(Error::Config("d_steps_per_g_step must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        if !(self.r1_weight >= 0.0) {
            return Err(Error::Config("r1_weight must be >= 0".into()));
        }
        if let Some(c) = self.subset_classes {
            if c == 0 || c > self.num_classes {
                return Err(Error::Config(format!(
                    "subset_classes {c} must lie in 1..={}",
                    self.num_classes
                )));
            }
        }
        if let Some(p) = self.subset_per_class {
            if p == 0 || p > self.samples_per_class {
                return Err(Error::Config(format!(
                    "subset_per_class {p} must lie in 1..={}",
                    self.samples_per_class
                )));
            }
        }
        // each class needs more evaluation samples than dimensions for FID
        if self.effective_per_class() * self.effective_classes() <= self.data_dim {
            return Err(Error::Config("dataset too small to evaluate".into()));
        }
        Ok(())
    }

    /// Builds the training dataset: the full draw, then the optional subset.
    pub fn build_dataset(&self) -> Result<ClassConditionalDataset> {
        let full = make_dataset(&self.dataset_spec())?;
        if self.subset_classes.is_none() && self.subset_per_class.is_none() {
            return Ok(full);
        }
        full.subset(
            self.effective_classes(),
            self.effective_per_class(),
            self.seed.wrapping_add(SUBSET_SEED_OFFSET),
        )
    }
}

/// Conditioning weights and loss formulation in effect at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedMode {
    pub generator_lambda: f64,
    pub loss_lambda: f64,
    pub formulation: Formulation,
}

/// Effective `(generator λ, loss λ)` at iteration `t`.
///
/// `conditional` trains on the conditional objective alone, expressed as
/// the convex formulation at λ = 1. `no_transition` keeps the unconditional
/// term alongside a fully weighted conditional one.
pub fn resolve_mode(config: &TrainingConfig, t: i64) -> ResolvedMode {
    let scheduled = config.schedule().lambda_at(t);
    let (generator_lambda, loss_lambda, formulation) = match config.mode {
        Mode::Unconditional => (0.0, 0.0, config.formulation),
        Mode::Conditional => (1.0, 1.0, Formulation::Convex),
        Mode::Transitional => (scheduled, scheduled, config.formulation),
        Mode::NoTransition => (1.0, 1.0, config.formulation),
        Mode::TransitionGOnly => (scheduled, 1.0, config.formulation),
        Mode::TransitionLossOnly => (1.0, scheduled, config.formulation),
    };
    ResolvedMode {
        generator_lambda,
        loss_lambda,
        formulation,
    }
}
