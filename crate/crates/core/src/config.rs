//! Run configuration: TOML file with `[data]`, `[corruption]`,
//! `[model.<kind>]`, `[tuning]`, and `[harness]` sections, all optional.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, TrainOptions};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub corruption: CorruptionConfig,
    /// Per-kind hyperparameter overrides, keyed by the kind name.
    pub model: BTreeMap<String, ModelOverride>,
    pub tuning: TuningConfig,
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Field delimiter of the raw input file.
    pub delimiter: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            delimiter: ",".into(),
        }
    }
}

impl DataConfig {
    pub fn delimiter_byte(&self) -> Result<u8> {
        let bytes = self.delimiter.as_bytes();
        if bytes.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "delimiter must be a single byte, got `{}`",
                self.delimiter
            )));
        }
        Ok(bytes[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Corruption rates used by augmentation and evaluation.
    pub rates: Vec<f64>,
    /// Masked copies appended per training day.
    pub augment_copies: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            rates: vec![0.2, 0.4, 0.6, 0.8],
            augment_copies: 4,
        }
    }
}

/// Partial hyperparameter override for one model kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverride {
    pub filters_external: Option<usize>,
    pub filters_internal: Option<usize>,
    pub kernel: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
}

impl ModelOverride {
    pub fn apply(&self, mut spec: ModelSpec) -> ModelSpec {
        if let Some(v) = self.filters_external {
            spec.filters_external = v;
        }
        if let Some(v) = self.filters_internal {
            spec.filters_internal = v;
        }
        if let Some(v) = self.kernel {
            spec.kernel = v;
        }
        if let Some(v) = self.learning_rate {
            spec.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            spec.batch_size = v;
        }
        spec
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        ModelOverride {
            filters_external: Some(spec.filters_external),
            filters_internal: Some(spec.filters_internal),
            kernel: Some(spec.kernel),
            learning_rate: Some(spec.learning_rate),
            batch_size: Some(spec.batch_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Random-search trials per (model kind, corruption rate).
    pub budget: usize,
    /// Epoch cap of each budgeted tuning run.
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            budget: 25,
            max_epochs: 60,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub split_seeds: u64,
    pub restarts: u64,
    pub training_rates: Vec<f64>,
    pub corruption_rates: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub knn_k: usize,
    pub physics_weight: f64,
    pub workers: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        // Desk scale: small grid that exercises every code path. The
        // epoch budget leaves room for the physics term to anneal from
        // its all-ones coefficient start.
        HarnessConfig {
            split_seeds: 3,
            restarts: 3,
            training_rates: vec![0.1, 0.5],
            corruption_rates: vec![0.2, 0.8],
            max_epochs: 250,
            patience: 40,
            min_delta: 0.0,
            knn_k: 5,
            physics_weight: 1.0,
            workers: 0, // 0 = all cores
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Malformed(format!("config: {e}")))
    }

    /// Restore the full experimental grid.
    pub fn apply_paper_scale(&mut self) {
        self.harness.split_seeds = 10;
        self.harness.restarts = 10;
        self.harness.training_rates = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        self.harness.corruption_rates = vec![0.2, 0.4, 0.6, 0.8];
        self.harness.max_epochs = 1000;
        self.tuning.budget = 200;
    }

    /// Hyperparameters for one kind: desk defaults plus file overrides.
    pub fn spec_for(&self, kind: ModelKind) -> Result<ModelSpec> {
        let spec = ModelSpec::desk_default(kind);
        let spec = match self.model.get(kind.name()) {
            Some(overrides) => overrides.apply(spec),
            None => spec,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn specs(&self) -> Result<BTreeMap<ModelKind, ModelSpec>> {
        let mut specs = BTreeMap::new();
        for name in self.model.keys() {
            if ModelKind::parse(name).is_none() {
                return Err(Error::Malformed(format!("config: unknown model `{name}`")));
            }
        }
        for kind in ModelKind::ALL {
            specs.insert(kind, self.spec_for(kind)?);
        }
        Ok(specs)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_epochs: self.harness.max_epochs,
            patience: self.harness.patience,
            min_delta: self.harness.min_delta,
            cr_set: self.corruption.rates.clone(),
            physics_weight: self.harness.physics_weight,
        }
    }
}
