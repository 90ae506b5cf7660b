use serde::{Deserialize, Serialize};

use super::DecoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_init, Mat, Scalar};

/// Projections of one attention module, each `E × E`, no biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights<T> {
    pub w_q: Mat<T>,
    pub w_k: Mat<T>,
    pub w_v: Mat<T>,
    pub w_o: Mat<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormWeights<T> {
    pub gain: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward<T> {
    /// `E × ffn_dim`
    pub w1: Mat<T>,
    pub b1: Vec<T>,
    /// `ffn_dim × E`
    pub w2: Mat<T>,
    pub b2: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights<T> {
    pub self_attn: AttentionWeights<T>,
    pub norm_self: NormWeights<T>,
    pub cross_attn: AttentionWeights<T>,
    pub norm_cross: NormWeights<T>,
    pub ffn: FeedForward<T>,
    pub norm_ffn: NormWeights<T>,
}

/// Affine classification head shared by every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights<T> {
    /// `E × num_classes`
    pub weight: Mat<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderWeights<T> {
    pub layers: Vec<LayerWeights<T>>,
    pub classifier: ClassifierWeights<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn seeded(embed_dim: usize, seed: u64, scale: f64) -> Self {
        let e = embed_dim;
        Self {
            w_q: seeded_init(e, e, derive_seed(seed, 1), scale),
            w_k: seeded_init(e, e, derive_seed(seed, 2), scale),
            w_v: seeded_init(e, e, derive_seed(seed, 3), scale),
            w_o: seeded_init(e, e, derive_seed(seed, 4), scale),
        }
    }

    pub fn identity(embed_dim: usize) -> Self {
        Self {
            w_q: Mat::identity(embed_dim),
            w_k: Mat::identity(embed_dim),
            w_v: Mat::identity(embed_dim),
            w_o: Mat::identity(embed_dim),
        }
    }

    fn check(&self, e: usize, what: &str) -> Result<()> {
        for (name, m) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ] {
            if m.shape() != (e, e) {
                return Err(Error::Config(format!(
                    "{what}.{name} has shape {:?}, expected ({e}, {e})",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> NormWeights<T> {
    pub fn unit(dim: usize) -> Self {
        Self {
            gain: vec![T::one(); dim],
            bias: vec![T::zero(); dim],
        }
    }

    fn check(&self, e: usize, what: &str) -> Result<()> {
        if self.gain.len() != e || self.bias.len() != e {
            return Err(Error::Config(format!("{what} gain/bias length must be {e}")));
        }
        Ok(())
    }
}

impl<T: Scalar> FeedForward<T> {
    pub fn seeded(embed_dim: usize, ffn_dim: usize, seed: u64, scale: f64) -> Self {
        Self {
            w1: seeded_init(embed_dim, ffn_dim, derive_seed(seed, 1), scale),
            b1: vec![T::zero(); ffn_dim],
            w2: seeded_init(ffn_dim, embed_dim, derive_seed(seed, 2), scale),
            b2: vec![T::zero(); embed_dim],
        }
    }

    pub fn zero(embed_dim: usize, ffn_dim: usize) -> Self {
        Self {
            w1: Mat::zeros(embed_dim, ffn_dim),
            b1: vec![T::zero(); ffn_dim],
            w2: Mat::zeros(ffn_dim, embed_dim),
            b2: vec![T::zero(); embed_dim],
        }
    }
}

impl<T: Scalar> DecoderWeights<T> {
    /// Random weights for `config`. Projection entries have standard deviation
    /// `1 / √fan_in`; norms start at unit gain and zero bias.
    pub fn seeded(config: &DecoderConfig, seed: u64) -> Self {
        let e = config.embed_dim;
        let layers = (0..config.layers)
            .map(|l| {
                let s = derive_seed(seed, 100 + l as u64);
                LayerWeights {
                    self_attn: AttentionWeights::seeded(e, derive_seed(s, 1), 1.0),
                    norm_self: NormWeights::unit(e),
                    cross_attn: AttentionWeights::seeded(e, derive_seed(s, 2), 1.0),
                    norm_cross: NormWeights::unit(e),
                    ffn: FeedForward::seeded(e, config.ffn_dim, derive_seed(s, 3), 1.0),
                    norm_ffn: NormWeights::unit(e),
                }
            })
            .collect();
        Self {
            layers,
            classifier: ClassifierWeights {
                weight: seeded_init(e, config.num_classes, derive_seed(seed, 7), 1.0),
                bias: vec![T::zero(); config.num_classes],
            },
        }
    }

    pub fn check(&self, config: &DecoderConfig) -> Result<()> {
        let e = config.embed_dim;
        if self.layers.len() != config.layers {
            return Err(Error::Config(format!(
                "weights hold {} layers, config expects {}",
                self.layers.len(),
                config.layers
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.self_attn.check(e, &format!("layer {i} self_attn"))?;
            l.cross_attn.check(e, &format!("layer {i} cross_attn"))?;
            l.norm_self.check(e, &format!("layer {i} norm_self"))?;
            l.norm_cross.check(e, &format!("layer {i} norm_cross"))?;
            l.norm_ffn.check(e, &format!("layer {i} norm_ffn"))?;
            let f = config.ffn_dim;
            if l.ffn.w1.shape() != (e, f)
                || l.ffn.w2.shape() != (f, e)
                || l.ffn.b1.len() != f
                || l.ffn.b2.len() != e
            {
                return Err(Error::Config(format!("layer {i} ffn shapes inconsistent with ({e}, {f})")));
            }
        }
        let c = &self.classifier;
        if c.weight.shape() != (e, config.num_classes) || c.bias.len() != config.num_classes {
            return Err(Error::Config("classifier shape inconsistent with config".into()));
        }
        Ok(())
    }
}
