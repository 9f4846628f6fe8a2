//! JSON run configuration: one document with a section per module, every
//! key defaulted, unknown keys rejected. The resolved (fully defaulted)
//! config is written next to every run's outputs and its hash is embedded in
//! every JSON report for provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use partcc_core::cluster::{AgglomerativeConfig, Linkage};
use partcc_core::consensus::ConsensusLinkage;
use partcc_core::embedder::TrainerConfig;
use partcc_core::losses::LossWeights;
use partcc_core::pseudolabel::PipelineConfig;
use partcc_core::synth::SynthConfig;

use crate::AppError;

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: String,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub cluster: ClusterSection,
    pub consensus: ConsensusSection,
    pub pseudolabel: PseudolabelSection,
    pub trainer: TrainerSection,
    pub losses: LossesSection,
    pub eval: EvalSection,
    pub data: DataSection,
}

/// Optional paths to pre-generated inputs. When `features` and `labels` are
/// both set, the pipeline consumes them instead of generating a synthetic
/// training pool; `eval_features` / `eval_labels` likewise replace the
/// generated held-out split.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub features: Option<String>,
    pub labels: Option<String>,
    pub eval_features: Option<String>,
    pub eval_labels: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_identities: usize,
    pub images_per_identity: usize,
    pub n_parts: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub part_confusion: f64,
    pub raw_dim: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SynthConfig::default();
        SynthSection {
            n_identities: c.n_identities,
            images_per_identity: c.images_per_identity,
            n_parts: c.n_parts,
            dim: c.dim,
            noise_sigma: c.noise_sigma,
            part_confusion: c.part_confusion,
            raw_dim: c.raw_dim,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_identities: self.n_identities,
            images_per_identity: self.images_per_identity,
            n_parts: self.n_parts,
            dim: self.dim,
            noise_sigma: self.noise_sigma,
            part_confusion: self.part_confusion,
            raw_dim: self.raw_dim,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub labeled_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            labeled_fraction: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub linkage: Linkage,
    pub distance_threshold: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        let c = AgglomerativeConfig::default();
        ClusterSection {
            linkage: c.linkage,
            distance_threshold: c.distance_threshold,
        }
    }
}

impl ClusterSection {
    pub fn to_core(&self) -> AgglomerativeConfig {
        AgglomerativeConfig {
            linkage: self.linkage,
            distance_threshold: self.distance_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusSection {
    /// Required agreeing parts; `null` means all parts.
    pub agree: Option<usize>,
    pub linkage: ConsensusLinkage,
}

impl Default for ConsensusSection {
    fn default() -> Self {
        ConsensusSection {
            agree: None,
            linkage: ConsensusLinkage::Average,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PseudolabelSection {
    pub min_cluster_size: usize,
    pub n_iterations: usize,
}

impl Default for PseudolabelSection {
    fn default() -> Self {
        PseudolabelSection {
            min_cluster_size: 5,
            n_iterations: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_p: usize,
    pub batch_k: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let c = TrainerConfig::default();
        TrainerSection {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            decay_epochs: c.decay_epochs,
            decay_factor: c.decay_factor,
            batch_p: c.batch_p,
            batch_k: c.batch_k,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossesSection {
    pub lambda_ce: f64,
    pub lambda_t: f64,
    pub lambda_pm: f64,
    pub margin: f64,
    /// Maximum parts replaced by part-mixup; `null` means one less than the
    /// part count.
    pub pm_max_replaced: Option<usize>,
    pub pm_hinge: bool,
}

impl Default for LossesSection {
    fn default() -> Self {
        let w = LossWeights::default();
        LossesSection {
            lambda_ce: w.cross_entropy,
            lambda_t: w.triplet,
            lambda_pm: w.part_mixup,
            margin: w.margin,
            pm_max_replaced: None,
            pm_hinge: true,
        }
    }
}

impl LossesSection {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            cross_entropy: self.lambda_ce,
            triplet: self.lambda_t,
            part_mixup: self.lambda_pm,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out identities generated for pipeline evaluation; 0 disables.
    pub n_identities: usize,
    pub queries_per_identity: usize,
    pub camera_filter: bool,
    pub max_rank: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_identities: 80,
            queries_per_identity: 2,
            camera_filter: true,
            max_rank: 20,
        }
    }
}

impl RunConfig {
    /// Load a config file, or the all-defaults config when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, AppError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| AppError::io(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| AppError::validation(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn trainer_config(&self, seed: u64, n_parts: usize) -> TrainerConfig {
        TrainerConfig {
            epochs: self.trainer.epochs,
            learning_rate: self.trainer.learning_rate,
            decay_epochs: self.trainer.decay_epochs.clone(),
            decay_factor: self.trainer.decay_factor,
            batch_p: self.trainer.batch_p,
            batch_k: self.trainer.batch_k,
            beta1: self.trainer.beta1,
            beta2: self.trainer.beta2,
            epsilon: self.trainer.epsilon,
            weights: self.losses.weights(),
            pm_max_replaced: Some(
                self.losses
                    .pm_max_replaced
                    .unwrap_or_else(|| (n_parts - 1).max(1)),
            ),
            pm_hinge: self.losses.pm_hinge,
            seed,
        }
    }

    pub fn pipeline_config(&self, n_parts: usize) -> PipelineConfig {
        PipelineConfig {
            min_cluster_size: self.pseudolabel.min_cluster_size,
            n_iterations: self.pseudolabel.n_iterations,
            agreement: self.consensus.agree,
            consensus_linkage: self.consensus.linkage,
            cluster: self.cluster.to_core(),
            trainer: self.trainer_config(self.seed, n_parts),
            seed: self.seed,
        }
    }

    /// Canonical pretty-printed JSON of the resolved config.
    pub fn canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Provenance hash over the canonical bytes (FNV-1a, hex).
    pub fn hash(&self) -> String {
        format!("fnv1a64:{:016x}", fnv1a64(self.canonical_json().as_bytes()))
    }

    /// Write `resolved_config.json` into the output directory.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), AppError> {
        fs::create_dir_all(dir).map_err(|e| AppError::io(format!("{}: {e}", dir.display())))?;
        let path = dir.join("resolved_config.json");
        fs::write(&path, self.canonical_json())
            .map_err(|e| AppError::io(format!("{}: {e}", path.display())))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_document() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.synth.n_parts, 6);
        assert_eq!(c.cluster.distance_threshold, 2.0);
        assert_eq!(c.pseudolabel.min_cluster_size, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"sneaky": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sneaky"));
        let err =
            serde_json::from_str::<RunConfig>(r#"{"cluster": {"linkage": "ward", "typo": 2}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("typo"));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c: RunConfig =
            serde_json::from_str(r#"{"cluster": {"distance_threshold": 1.5}}"#).unwrap();
        assert_eq!(c.cluster.distance_threshold, 1.5);
        assert_eq!(c.cluster.linkage, Linkage::Ward);
        assert_eq!(c.synth.n_identities, 50);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
