//! Pipeline configuration: every tunable of a run, serialized as JSON.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::downstream::MlpTrainConfig;
use crate::error::{Error, Result};
use crate::features::{EmbeddingConfig, TfidfConfig, Tokenizer};
use crate::label_model::LabelModelKind;
use crate::lf::LfCategory;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    OfflineSeeded {
        #[serde(default = "default_top_t")]
        top_t: usize,
    },
    /// Endpoint, model and key come from the environment.
    RemoteLlm {
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_top_t() -> usize {
    5
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::OfflineSeeded { top_t: 5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceConfig {
    pub provider: ProviderConfig,
    /// Seed examples shown per generation request; `None` shows all of them.
    /// Each round draws a fresh sample.
    pub prompt_examples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuralConfig {
    /// Cycled round-robin across candidates.
    pub ngram_ranges: Vec<(usize, usize)>,
    /// L2 strengths, cycled round-robin across candidates.
    pub l2: Vec<f64>,
    pub min_df: usize,
    pub subsample_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for StructuralConfig {
    fn default() -> Self {
        Self {
            ngram_ranges: vec![(1, 2), (1, 1)],
            l2: vec![1e-3, 1e-2],
            min_df: 1,
            subsample_fraction: 0.8,
            epochs: 300,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemanticConfig {
    pub embedding: EmbeddingConfig,
    /// Head widths cycled across candidates; 0 is a logistic head, anything
    /// else a one-hidden-layer ReLU head of that width.
    pub head_widths: Vec<usize>,
    pub l2: f64,
    pub subsample_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Optimizer settings for hidden-layer heads.
    pub mlp_head: MlpTrainConfig,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            head_widths: vec![0, 32],
            l2: 1e-3,
            subsample_fraction: 0.8,
            epochs: 300,
            learning_rate: 0.5,
            mlp_head: MlpTrainConfig {
                hidden: 32,
                epochs: 100,
                batch_size: 32,
                ..MlpTrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub train: MlpTrainConfig,
    pub tfidf: TfidfConfig,
    pub include_uncovered: bool,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self {
            train: MlpTrainConfig::default(),
            tfidf: TfidfConfig {
                ngram_range: (1, 1),
                min_df: 2,
            },
            include_uncovered: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub task_description: String,
    /// Label order; inferred (sorted) from the dataset when absent.
    pub class_names: Option<Vec<String>>,
    pub categories: Vec<LfCategory>,
    pub alpha: f64,
    pub beta: f64,
    pub k_per_category: BTreeMap<LfCategory, usize>,
    pub candidates_per_round: usize,
    pub max_rounds: usize,
    pub base_seed: u64,
    pub grid_step: f64,
    pub tau_dup: BTreeMap<LfCategory, f64>,
    pub dedup_sample: usize,
    pub abstain_enabled: bool,
    pub label_model: LabelModelKind,
    pub tokenizer: Tokenizer,
    pub surface: SurfaceConfig,
    pub structural: StructuralConfig,
    pub semantic: SemanticConfig,
    pub downstream: DownstreamConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            task_description: "Classify each text into one of the available labels.".into(),
            class_names: None,
            categories: LfCategory::ALL.to_vec(),
            alpha: 0.9,
            beta: 0.1,
            k_per_category: LfCategory::ALL.iter().map(|&c| (c, 20)).collect(),
            candidates_per_round: 8,
            max_rounds: 10,
            base_seed: 0,
            grid_step: 0.01,
            tau_dup: [
                (LfCategory::Surface, 0.9),
                (LfCategory::Structural, 0.98),
                (LfCategory::Semantic, 0.98),
            ]
            .into_iter()
            .collect(),
            dedup_sample: 500,
            abstain_enabled: true,
            label_model: LabelModelKind::MajorityVote,
            tokenizer: Tokenizer::default(),
            surface: SurfaceConfig::default(),
            structural: StructuralConfig::default(),
            semantic: SemanticConfig::default(),
            downstream: DownstreamConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn with_k(mut self, k: usize) -> Self {
        for c in LfCategory::ALL {
            self.k_per_category.insert(c, k);
        }
        self
    }

    pub fn k_for(&self, category: LfCategory) -> usize {
        self.k_per_category.get(&category).copied().unwrap_or(20)
    }

    pub fn tau_for(&self, category: LfCategory) -> f64 {
        self.tau_dup.get(&category).copied().unwrap_or(match category {
            LfCategory::Surface => 0.9,
            _ => 0.98,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 1.0) {
            return bad(format!("grid_step must be in (0, 1], got {}", self.grid_step));
        }
        if self.categories.is_empty() {
            return bad("at least one LF category must be enabled".into());
        }
        for &c in &self.categories {
            if self.k_for(c) == 0 {
                return bad(format!("k for {c} must be >= 1"));
            }
            let tau = self.tau_for(c);
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("tau_dup for {c} must be in (0, 1], got {tau}"));
            }
        }
        if self.candidates_per_round == 0 || self.max_rounds == 0 {
            return bad("candidates_per_round and max_rounds must be >= 1".into());
        }
        if self.structural.ngram_ranges.is_empty()
            || self.structural.l2.is_empty()
            || self.semantic.head_widths.is_empty()
        {
            return bad("variation lists must be non-empty".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(compact.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.alpha, 0.9);
        assert_eq!(c.beta, 0.1);
        assert_eq!(c.k_for(LfCategory::Semantic), 20);
        assert_eq!(c.candidates_per_round, 8);
        assert_eq!(c.max_rounds, 10);
        assert_eq!(c.grid_step, 0.01);
        assert!(c.abstain_enabled);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = PipelineConfig::from_json(r#"{"alpha": 0.5, "k_per_category": {"surface": 3}}"#)
            .unwrap();
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.k_for(LfCategory::Surface), 3);
        assert_eq!(c.beta, 0.1);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(PipelineConfig::from_json(r#"{"alpha": 1.5}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"beta": -1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"grid_step": 0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"schema_version": 7}"#).is_err());
    }

    #[test]
    fn round_trip_and_stable_hash() {
        let c = PipelineConfig::default().with_k(5);
        let back = PipelineConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.alpha = 0.7;
        assert_ne!(d.hash(), c.hash());
    }
}
