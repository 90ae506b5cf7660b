use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divisor applied to query–key dot products before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionScale {
    /// `√E`, the full embedding width.
    #[default]
    Embed,
    /// `√(E / heads)`, the per-head width used by most transformer code.
    Head,
}

/// Hyperparameters of a decoder instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub num_queries: usize,
    pub num_keys: usize,
    pub num_classes: usize,
    pub ffn_dim: usize,
    #[serde(default)]
    pub scale: AttentionScale,
}

impl DecoderConfig {
    /// StreamPETR-sized decoder at 1600×640 (VoVNet): 24000 keys, 900 queries.
    pub fn streampetr() -> Self {
        Self {
            layers: 6,
            embed_dim: 256,
            heads: 8,
            num_queries: 900,
            num_keys: 24000,
            num_classes: 10,
            ffn_dim: 2048,
            scale: AttentionScale::Embed,
        }
    }

    /// OPEN-sized decoder at 1408×512 (ResNet101): 16896 keys.
    pub fn open() -> Self {
        Self {
            num_keys: 16896,
            ..Self::streampetr()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("num_queries", self.num_queries),
            ("num_keys", self.num_keys),
            ("num_classes", self.num_classes),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not a multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}
