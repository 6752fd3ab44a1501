//! JSON run configuration with a versioned schema.
//!
//! Unknown keys are rejected rather than warned about, so a typo in an init
//! scheme or optimizer field fails loudly before any compute happens.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DssError, Result};
use crate::init::InitScheme;
use crate::layer::MixSizing;
use crate::model::{BlockConfig, BlockVariant, EncoderConfig};
use crate::tasks::{TaskKind, ToyTaskSpec};

pub const SPEC_VERSION: u32 = 1;

fn default_bidirectional() -> bool {
    true
}

fn default_depthwise_kernel() -> usize {
    31
}

fn default_lambda_lr_scale() -> f64 {
    1.0
}

fn default_floor_frac() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec_version: u32,
    pub model: ModelSection,
    pub task: TaskSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub dss_states: usize,
    pub layers: usize,
    /// dss_module | depthwise_conv | dss_replaces_mhsa
    pub variant: String,
    /// hippo | exp-random | s4d-inv | s4d-lin | linear
    pub init_scheme: String,
    #[serde(default = "default_bidirectional")]
    pub bidirectional: bool,
    #[serde(default = "default_depthwise_kernel")]
    pub depthwise_kernel: usize,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// freq_classify | delayed_echo | adding
    pub task: String,
    pub sequence_length: usize,
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default)]
    pub delay: usize,
    #[serde(default)]
    pub noise: f64,
    pub seed: u64,
    pub train_samples: usize,
    pub eval_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub peak_lr: f64,
    /// Starting rate of the warmup ramp; defaults to peak_lr / 10.
    #[serde(default)]
    pub floor_lr: Option<f64>,
    pub warmup_frac: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    #[serde(default = "default_lambda_lr_scale")]
    pub lambda_lr_scale: f64,
    /// Steps between eigenvalue snapshots; 0 records only start and end.
    #[serde(default)]
    pub snapshot_interval: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    #[serde(default)]
    pub trajectory: Option<PathBuf>,
}

impl OptimizerSection {
    pub fn floor_lr(&self) -> f64 {
        self.floor_lr.unwrap_or(self.peak_lr * default_floor_frac())
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| DssError::Config(format!("failed to parse config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DssError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec_version != SPEC_VERSION {
            return Err(DssError::Config(format!(
                "unsupported spec_version {} (expected {SPEC_VERSION})",
                self.spec_version
            )));
        }
        self.scheme()?;
        BlockVariant::parse(&self.model.variant)?;
        TaskKind::parse(&self.task.task)?;
        if self.optimizer.batch_size == 0 {
            return Err(DssError::Config("batch_size must be >= 1".into()));
        }
        if self.optimizer.peak_lr <= 0.0 {
            return Err(DssError::Config("peak_lr must be positive".into()));
        }
        self.block_config()?.validate()?;
        self.task_spec()?.validate()?;
        Ok(())
    }

    pub fn scheme(&self) -> Result<InitScheme> {
        InitScheme::parse(&self.model.init_scheme, self.model.seed)
    }

    pub fn block_config(&self) -> Result<BlockConfig> {
        Ok(BlockConfig {
            model_dim: self.model.model_dim,
            ffn_dim: self.model.ffn_dim,
            heads: self.model.heads,
            head_dim: self.model.head_dim,
            dss_states: self.model.dss_states,
            variant: BlockVariant::parse(&self.model.variant)?,
            dropout: self.model.dropout,
            bidirectional: self.model.bidirectional,
            depthwise_kernel: self.model.depthwise_kernel,
            mix_sizing: MixSizing::GluDoubled,
        })
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            input_dim: self.task_spec()?.input_dim(),
            layers: self.model.layers,
            block: self.block_config()?,
        })
    }

    pub fn task_spec(&self) -> Result<ToyTaskSpec> {
        Ok(ToyTaskSpec {
            task: TaskKind::parse(&self.task.task)?,
            sequence_length: self.task.sequence_length,
            num_classes: self.task.num_classes,
            delay: self.task.delay,
            noise: self.task.noise,
            seed: self.task.seed,
            train_samples: self.task.train_samples,
            eval_samples: self.task.eval_samples,
        })
    }
}
