//! Model configuration: every hyperparameter pinned in one place.
//!
//! The default configuration is the reference setup (d = 100, d_E = 200,
//! 2 attention heads) whose trainable parameter count lands at ~12M.
//! Tests and the synthetic benchmark shrink the dimensions through
//! [`ModelConfig::tiny`].

use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{PrnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full model: dynamic relational entity memory.
    Prn,
    /// Attention-flow baseline without any entity path.
    Bidaf,
    /// Entity path present but memory never updated after initialization.
    BidafStaticMemory,
}

impl Variant {
    pub fn has_entity_path(&self) -> bool {
        !matches!(self, Variant::Bidaf)
    }

    pub fn updates_memory(&self) -> bool {
        matches!(self, Variant::Prn)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Prn => "PRN",
            Variant::Bidaf => "BIDAF",
            Variant::BidafStaticMemory => "BIDAF_STATIC_MEMORY",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub version: u32,
    /// Directional hidden width of the recurrent text encoders; contextual
    /// embeddings have width 2d.
    pub d: usize,
    /// Width of each entity memory row.
    pub d_e: usize,
    /// Self-attention heads in the memory core; must divide d_e.
    pub heads: usize,
    /// Attention + feed-forward blocks per memory update.
    pub memory_blocks: usize,
    pub glove_dim: usize,
    pub char_dim: usize,
    pub char_filter_widths: Vec<usize>,
    pub char_filters_per_width: usize,
    pub max_token_chars: usize,
    pub highway_layers: usize,
    /// Dimension of the precomputed image feature vectors.
    pub feature_dim: usize,
    /// Hidden widths of the image MLPs (question and answer paths).
    pub image_mlp_hidden: Vec<usize>,
    pub output_mlp_hidden: usize,
    pub output_mlp_final_tanh: bool,
    /// Encode question/answer images from recurrent memory cells (true) or
    /// hidden states (false).
    pub use_cell_state: bool,
    /// Hinge ranking margin.
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Cap on extracted entities per recipe.
    pub k_max: usize,
    pub variant: Variant,
    pub tasks: Vec<Task>,
    /// Experimental: softmax cross-entropy over candidate scores instead of
    /// the hinge ranking loss. Off by default.
    pub use_softmax_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            version: 1,
            d: 100,
            d_e: 200,
            heads: 2,
            memory_blocks: 1,
            glove_dim: 100,
            char_dim: 16,
            char_filter_widths: vec![5],
            char_filters_per_width: 100,
            max_token_chars: 16,
            highway_layers: 2,
            feature_dim: 2048,
            image_mlp_hidden: vec![1024, 1024],
            output_mlp_hidden: 200,
            output_mlp_final_tanh: true,
            use_cell_state: true,
            gamma: 0.5,
            learning_rate: 1e-4,
            batch_size: 32,
            patience: 10,
            max_epochs: 100,
            grad_clip_norm: 5.0,
            seed: 13,
            k_max: 30,
            variant: Variant::Prn,
            tasks: vec![Task::Cloze, Task::Coherence, Task::Ordering],
            use_softmax_loss: false,
        }
    }
}

impl ModelConfig {
    /// The reference configuration (paper-scale dimensions).
    pub fn reference() -> Self {
        ModelConfig::default()
    }

    /// A small configuration for tests and desk-scale training. `d_e` is
    /// kept at `2d` so the entity attention path needs no projection.
    pub fn tiny(d: usize, feature_dim: usize, seed: u64) -> Self {
        ModelConfig {
            d,
            d_e: 2 * d,
            heads: 2,
            glove_dim: d,
            char_dim: 8,
            char_filter_widths: vec![3],
            char_filters_per_width: d,
            max_token_chars: 12,
            feature_dim,
            image_mlp_hidden: vec![2 * d],
            output_mlp_hidden: 2 * d,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_e == 0 || self.glove_dim == 0 || self.char_dim == 0 {
            return Err(PrnError::Config("dimensions must be positive".into()));
        }
        if self.heads == 0 || self.d_e % self.heads != 0 {
            return Err(PrnError::Config(format!(
                "heads ({}) must be positive and divide d_e ({})",
                self.heads, self.d_e
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 2.0) {
            return Err(PrnError::Config(format!(
                "margin gamma must lie in (0, 2], got {}",
                self.gamma
            )));
        }
        if self.char_filter_widths.is_empty()
            || self
                .char_filter_widths
                .iter()
                .any(|&w| w == 0 || w > self.max_token_chars)
        {
            return Err(PrnError::Config(
                "char filter widths must be in [1, max_token_chars]".into(),
            ));
        }
        if self.batch_size == 0 || self.k_max == 0 {
            return Err(PrnError::Config(
                "batch_size and k_max must be positive".into(),
            ));
        }
        if self.tasks.is_empty() {
            return Err(PrnError::Config("at least one task required".into()));
        }
        Ok(())
    }

    /// Width of the per-token character embedding produced by the CharCNN.
    pub fn char_out_dim(&self) -> usize {
        self.char_filter_widths.len() * self.char_filters_per_width
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PrnError::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| PrnError::io(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let cfg = ModelConfig::default();
        let json = cfg.to_json().unwrap();
        let back = ModelConfig::from_json(&json).unwrap();
        assert_eq!(back.d, cfg.d);
        assert_eq!(back.variant, cfg.variant);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = ModelConfig::from_json(r#"{"d": 4, "d_e": 8, "glove_dim": 4}"#).unwrap();
        assert_eq!(cfg.d, 4);
        assert_eq!(cfg.heads, 2);
    }

    #[test]
    fn bad_margin_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.gamma = 3.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn heads_must_divide_de() {
        let mut cfg = ModelConfig::default();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
    }
}
