//! JSON run configuration.
//!
//! Every key is optional and falls back to [`SequenceConfig::default`];
//! unknown keys are rejected. A complete document:
//!
//! ```json
//! {
//!   "seed": 0,
//!   "out_dir": "runs/example",
//!   "data": {
//!     "height": 32, "width": 32, "classes": 5,
//!     "train_per_domain": 64, "val_per_domain": 32,
//!     "domain_count": 3, "require_opposing_pair": true,
//!     "domains": null
//!   },
//!   "arch": { "encoder_channels": [16, 16, 32], "segmenter_width": 24 },
//!   "training": {
//!     "pretrain_steps": 2000, "initial_decoder_steps": 1500,
//!     "decoder_steps": 500, "segmenter_steps": 1000, "batch_size": 2,
//!     "lambda": 1.0, "skip_weight": 10.0,
//!     "decoder_lr": 0.003, "segmenter_lr": 0.05,
//!     "momentum": 0.9, "weight_decay": 0.0005,
//!     "hflip": true, "pretrain_jitter": 0.0
//!   },
//!   "memory": "full",
//!   "transfer": "class_conditional",
//!   "replay": true,
//!   "moment_source": "pseudo_labels"
//! }
//! ```
//!
//! `memory` is `"full"`, `"gaussian"` or `{"subsample": p}`. `transfer` is
//! one of `class_conditional`, `global`, `jitter_only`, `none`.
//! `moment_source` is `pseudo_labels` or `true_labels`. When `domains` is
//! null the built-in sequence of `domain_count` domains is used; otherwise
//! it lists the target domains in arrival order:
//!
//! ```json
//! { "name": "fog", "gain": [[[1,0,0],[0,1,0],[0,0,1]], ...],
//!   "bias": [[0,0,0], ...], "noise": [0.01, ...], "tint": [0,0,0] }
//! ```
//!
//! with one `gain`, `bias` and `noise` entry per class.

use std::path::PathBuf;

use cace_core::style_memory::StorageMode;
use cace_core::synth_domains::{default_domains, DomainSpec, Mat3};
use cace_core::trainer::{MomentSource, SequenceConfig, TransferMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub arch: ArchSection,
    pub training: TrainingSection,
    pub memory: MemoryMode,
    pub transfer: Transfer,
    pub replay: bool,
    pub moment_source: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub train_per_domain: usize,
    pub val_per_domain: usize,
    pub domain_count: usize,
    pub require_opposing_pair: bool,
    pub domains: Option<Vec<DomainJson>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainJson {
    pub name: String,
    pub gain: Vec<Mat3>,
    pub bias: Vec<[f64; 3]>,
    pub noise: Vec<f64>,
    #[serde(default)]
    pub tint: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub encoder_channels: [usize; 3],
    pub segmenter_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub pretrain_steps: usize,
    pub initial_decoder_steps: usize,
    pub decoder_steps: usize,
    pub segmenter_steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub skip_weight: f64,
    pub decoder_lr: f64,
    pub segmenter_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hflip: bool,
    pub pretrain_jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MemoryMode {
    #[default]
    Full,
    Gaussian,
    Subsample(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    #[default]
    ClassConditional,
    Global,
    JitterOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Moments {
    #[default]
    PseudoLabels,
    TrueLabels,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_sequence(&SequenceConfig::default())
    }
}

impl Default for DataSection {
    fn default() -> Self {
        RunConfig::default().data
    }
}

impl Default for ArchSection {
    fn default() -> Self {
        RunConfig::default().arch
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        RunConfig::default().training
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.to_sequence()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Mirror of a core configuration. Domains equal to the built-in
    /// sequence are written as `null`.
    pub fn from_sequence(seq: &SequenceConfig) -> Self {
        let d = &seq.data;
        let builtin = default_domains(d.scene.classes, d.domains.len());
        let domains = (d.domains != builtin).then(|| {
            d.domains
                .iter()
                .map(|s| DomainJson {
                    name: s.name.clone(),
                    gain: s.gain.clone(),
                    bias: s.bias.clone(),
                    noise: s.noise.clone(),
                    tint: s.tint,
                })
                .collect()
        });
        Self {
            seed: seq.seed,
            out_dir: None,
            data: DataSection {
                height: d.scene.height,
                width: d.scene.width,
                classes: d.scene.classes,
                train_per_domain: d.train_per_domain,
                val_per_domain: d.val_per_domain,
                domain_count: d.domains.len(),
                require_opposing_pair: d.require_opposing_pair,
                domains,
            },
            arch: ArchSection {
                encoder_channels: seq.arch.encoder_channels,
                segmenter_width: seq.arch.segmenter_width,
            },
            training: TrainingSection {
                pretrain_steps: seq.pretrain_steps,
                initial_decoder_steps: seq.initial_decoder_steps,
                decoder_steps: seq.decoder_steps,
                segmenter_steps: seq.segmenter_steps,
                batch_size: seq.batch_size,
                lambda: seq.lambda,
                skip_weight: seq.skip_weight,
                decoder_lr: seq.decoder_lr,
                segmenter_lr: seq.segmenter_lr,
                momentum: seq.momentum,
                weight_decay: seq.weight_decay,
                hflip: seq.hflip,
                pretrain_jitter: seq.pretrain_jitter,
            },
            memory: match seq.memory {
                StorageMode::Full => MemoryMode::Full,
                StorageMode::Gaussian => MemoryMode::Gaussian,
                StorageMode::Subsample(p) => MemoryMode::Subsample(p),
            },
            transfer: match seq.transfer {
                TransferMode::ClassConditional => Transfer::ClassConditional,
                TransferMode::Global => Transfer::Global,
                TransferMode::JitterOnly => Transfer::JitterOnly,
                TransferMode::None => Transfer::None,
            },
            replay: seq.replay,
            moment_source: match seq.moment_source {
                MomentSource::PseudoLabels => Moments::PseudoLabels,
                MomentSource::TrueLabels => Moments::TrueLabels,
            },
        }
    }

    /// Validated core configuration.
    pub fn to_sequence(&self) -> Result<SequenceConfig, ConfigError> {
        let mut seq = SequenceConfig::default();
        let d = &self.data;
        seq.data.scene.height = d.height;
        seq.data.scene.width = d.width;
        seq.data.scene.classes = d.classes;
        seq.data.train_per_domain = d.train_per_domain;
        seq.data.val_per_domain = d.val_per_domain;
        seq.data.require_opposing_pair = d.require_opposing_pair;
        seq.data.seed = self.seed;
        seq.data.domains = match &d.domains {
            None => {
                if d.domain_count == 0 {
                    return Err(ConfigError::Invalid("domain_count must be at least 1".into()));
                }
                default_domains(d.classes, d.domain_count)
            }
            Some(list) => {
                if list.is_empty() {
                    return Err(ConfigError::Invalid("domains must not be empty".into()));
                }
                list.iter()
                    .enumerate()
                    .map(|(i, j)| DomainSpec {
                        domain_id: i as u32 + 1,
                        name: j.name.clone(),
                        gain: j.gain.clone(),
                        bias: j.bias.clone(),
                        noise: j.noise.clone(),
                        tint: j.tint,
                    })
                    .collect()
            }
        };
        seq.arch.encoder_channels = self.arch.encoder_channels;
        seq.arch.segmenter_width = self.arch.segmenter_width;
        let t = &self.training;
        seq.pretrain_steps = t.pretrain_steps;
        seq.initial_decoder_steps = t.initial_decoder_steps;
        seq.decoder_steps = t.decoder_steps;
        seq.segmenter_steps = t.segmenter_steps;
        seq.batch_size = t.batch_size;
        seq.lambda = t.lambda;
        seq.skip_weight = t.skip_weight;
        seq.decoder_lr = t.decoder_lr;
        seq.segmenter_lr = t.segmenter_lr;
        seq.momentum = t.momentum;
        seq.weight_decay = t.weight_decay;
        seq.hflip = t.hflip;
        seq.pretrain_jitter = t.pretrain_jitter;
        seq.memory = match self.memory {
            MemoryMode::Full => StorageMode::Full,
            MemoryMode::Gaussian => StorageMode::Gaussian,
            MemoryMode::Subsample(p) => StorageMode::Subsample(p),
        };
        seq.transfer = match self.transfer {
            Transfer::ClassConditional => TransferMode::ClassConditional,
            Transfer::Global => TransferMode::Global,
            Transfer::JitterOnly => TransferMode::JitterOnly,
            Transfer::None => TransferMode::None,
        };
        seq.replay = self.replay;
        seq.moment_source = match self.moment_source {
            Moments::PseudoLabels => MomentSource::PseudoLabels,
            Moments::TrueLabels => MomentSource::TrueLabels,
        };
        seq.seed = self.seed;
        seq.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_configuration() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.to_sequence().unwrap(), SequenceConfig::default());
    }

    #[test]
    fn readme_example_is_the_toy_profile() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```json\n").unwrap() + 8;
        let len = readme[start..].find("```").unwrap();
        let cfg = RunConfig::from_json(&readme[start..start + len]).unwrap();
        assert_eq!(cfg.to_sequence().unwrap(), SequenceConfig::toy());
    }

    #[test]
    fn full_roundtrip_through_json() {
        let mut cfg = RunConfig {
            memory: MemoryMode::Subsample(0.25),
            transfer: Transfer::Global,
            ..RunConfig::default()
        };
        cfg.data.domains = Some(vec![DomainJson {
            name: "dark".into(),
            gain: vec![[[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]]; 5],
            bias: vec![[0.0; 3]; 5],
            noise: vec![0.0; 5],
            tint: [0.0; 3],
        }]);
        cfg.data.require_opposing_pair = false;
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(text.contains("\"subsample\": 0.25"));
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        let seq = back.to_sequence().unwrap();
        assert_eq!(seq.memory, StorageMode::Subsample(0.25));
        assert_eq!(seq.data.domains[0].domain_id, 1);
    }

    #[test]
    fn builtin_domains_serialize_as_null() {
        let cfg = RunConfig::from_sequence(&SequenceConfig::default());
        assert!(cfg.data.domains.is_none());
    }

    #[test]
    fn rejects_unknown_keys_at_every_level() {
        for doc in [
            r#"{"sed": 1}"#,
            r#"{"data": {"hieght": 16}}"#,
            r#"{"training": {"lr": 0.1}}"#,
            r#"{"arch": {"depth": 3}}"#,
            r#"{"memory": {"subsample": 0.5, "extra": 1}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(doc), Err(ConfigError::Json(_))), "{doc}");
        }
    }

    #[test]
    fn rejects_invalid_values() {
        for doc in [
            r#"{"training": {"batch_size": 3}}"#,
            r#"{"training": {"segmenter_steps": 0}}"#,
            r#"{"memory": {"subsample": 1.5}}"#,
            r#"{"transfer": "jitter_only"}"#,
            r#"{"data": {"height": 18}}"#,
            r#"{"data": {"domain_count": 0}}"#,
            r#"{"data": {"domains": []}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(doc), Err(ConfigError::Invalid(_))), "{doc}");
        }
        assert!(matches!(RunConfig::from_json(r#"{"transfer": "cyclegan"}"#), Err(ConfigError::Json(_))));
        assert!(matches!(RunConfig::from_json("{"), Err(ConfigError::Json(_))));
    }
}
