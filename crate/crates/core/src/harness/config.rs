use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptConfig, LossWeights};
use crate::domains::{gen_gaussian_ring, gen_two_moons_shift, load_csv, CsvSchema, DomainSpec, LabeledSet};
use crate::error::{Error, Result};
use crate::model::{Activation, ModelDims, SgdConfig};
use crate::sampling::{CasConfig, Strategy};

/// Where source and target data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    GaussianRing(DomainSpec),
    TwoMoons(DomainSpec),
    Csv {
        source: PathBuf,
        target: PathBuf,
        #[serde(default = "default_true")]
        has_header: bool,
        classes: usize,
    },
}

fn default_true() -> bool {
    true
}

impl DatasetConfig {
    /// Source and target sets.
    pub fn load(&self) -> Result<(LabeledSet, LabeledSet)> {
        match self {
            DatasetConfig::GaussianRing(spec) => gen_gaussian_ring(spec),
            DatasetConfig::TwoMoons(spec) => gen_two_moons_shift(spec),
            DatasetConfig::Csv {
                source,
                target,
                has_header,
                classes,
            } => {
                let schema = CsvSchema {
                    has_header: *has_header,
                    classes: *classes,
                };
                Ok((load_csv(source, &schema)?, load_csv(target, &schema)?))
            }
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetConfig::GaussianRing(spec) | DatasetConfig::TwoMoons(spec) => spec.classes,
            DatasetConfig::Csv { classes, .. } => *classes,
        }
    }
}

/// Total label budget: an absolute count or a fraction of the adaptation pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    Count(usize),
    Fraction(f64),
}

impl Budget {
    /// Label count for a pool of `pool_size`; fractions round half up.
    pub fn resolve(&self, pool_size: usize) -> Result<usize> {
        match *self {
            Budget::Count(n) => Ok(n),
            Budget::Fraction(f) if f > 0.0 && f <= 1.0 => Ok((f * pool_size as f64 + 0.5).floor() as usize),
            Budget::Fraction(f) => Err(Error::Config(format!("budget fraction {f} outside (0, 1]"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    /// Skip training and start from this checkpoint.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.05,
            batch_size: 64,
            val_fraction: 0.1,
            checkpoint: None,
        }
    }
}

/// Extractor shape; input width and class count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub bottleneck: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            bottleneck: 16,
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, input_dim: usize, classes: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden: self.hidden.clone(),
            bottleneck: self.bottleneck,
            classes,
        }
    }
}

/// A full experiment, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub budget: Budget,
    pub rounds: usize,
    pub strategy: Strategy,
    pub cas: CasConfig,
    pub loss_weights: LossWeights,
    pub adapt: AdaptConfig,
    pub sgd: SgdConfig,
    /// Base learning rate of target adaptation.
    pub lr: f64,
    pub seed: u64,
    pub pretrain: PretrainConfig,
    pub model: ModelConfig,
    /// Share of the target held out for evaluation.
    pub test_fraction: f64,
    /// Evaluate on the whole target instead of a held-out split.
    pub eval_on_pool: bool,
    /// Keep per-round checkpoints and audit the probability cache against them.
    pub retain_checkpoints: bool,
    pub export_embeddings: bool,
}

/// The desk-scale benchmark: 8 rotated Gaussian classes with skewed target priors.
pub fn benchmark_domain(seed: u64) -> DomainSpec {
    DomainSpec {
        classes: 8,
        n_source: 2000,
        n_target: 2000,
        rotation: 35f64.to_radians(),
        noise_source: 0.2,
        noise_target: 0.2,
        class_priors_target: vec![0.3, 0.2, 0.14, 0.1, 0.08, 0.07, 0.06, 0.05],
        translation: [0.0, 0.0],
        seed,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::GaussianRing(benchmark_domain(0)),
            budget: Budget::Fraction(0.05),
            rounds: 10,
            strategy: Strategy::Cas,
            cas: CasConfig::default(),
            loss_weights: LossWeights::default(),
            adapt: AdaptConfig::default(),
            sgd: SgdConfig::default(),
            lr: 0.01,
            seed: 0,
            pretrain: PretrainConfig::default(),
            model: ModelConfig::default(),
            test_fraction: 0.2,
            eval_on_pool: false,
            retain_checkpoints: false,
            export_embeddings: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if let Budget::Count(n) = self.budget {
            if n < self.rounds {
                return Err(Error::Config(format!(
                    "budget {n} is smaller than {} rounds",
                    self.rounds
                )));
            }
        }
        self.budget.resolve(1)?;
        self.cas.validate().map_err(cfg)?;
        self.loss_weights.validate().map_err(cfg)?;
        self.adapt.validate()?;
        if !(self.lr > 0.0) || !(self.pretrain.lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.pretrain.epochs == 0 || self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretrain epochs and batch size must be positive".into()));
        }
        if !(self.pretrain.val_fraction > 0.0 && self.pretrain.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        if !self.eval_on_pool && !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        self.model.dims(1, self.dataset.classes()).validate().map_err(cfg)?;
        match &self.dataset {
            DatasetConfig::GaussianRing(spec) => spec.validate().map_err(cfg),
            DatasetConfig::TwoMoons(spec) if spec.classes != 2 => {
                Err(Error::Config("two_moons needs exactly 2 classes".into()))
            }
            DatasetConfig::TwoMoons(spec) => spec.validate().map_err(cfg),
            DatasetConfig::Csv { classes, .. } if *classes < 2 => Err(Error::Config("need at least 2 classes".into())),
            DatasetConfig::Csv { .. } => Ok(()),
        }
    }
}
