//! Sequence encoders over backbone frames and the CTC logits head.

pub mod bilstm;
pub mod grcl;
pub mod self_attention;

use serde::{Deserialize, Serialize};

pub use bilstm::{BiLstmConfig, BiLstmParams};
pub use grcl::{GrclConfig, GrclParams};
pub use self_attention::{Positional, SelfAttnConfig, SelfAttnEncoderParams, SelfAttnLayerParams};

use crate::error::{Error, Result};
use crate::tensor::{linear, Rng, Tensor};
use crate::weights::{Params, WeightSpec, WeightStore};

pub(crate) fn default_input_dim() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderConfig {
    SelfAttention(SelfAttnConfig),
    Grcl(GrclConfig),
    #[serde(rename = "bilstm")]
    BiLstm(BiLstmConfig),
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::SelfAttention(c) => c.validate(),
            Self::Grcl(c) => c.validate(),
            Self::BiLstm(c) => c.validate(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Self::SelfAttention(c) => c.input_dim,
            Self::Grcl(c) => c.input_dim,
            Self::BiLstm(c) => c.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Self::SelfAttention(_) => self_attention::HIDDEN,
            Self::Grcl(_) => grcl::FILTERS[2],
            Self::BiLstm(_) => bilstm::OUTPUT,
        }
    }

    /// Short label such as `sa4`, `grcl2`, `lstm1`.
    pub fn label(&self) -> String {
        match self {
            Self::SelfAttention(c) => format!("sa{}", c.layers),
            Self::Grcl(c) => format!("grcl{}", c.blocks_per_set),
            Self::BiLstm(c) => format!("lstm{}", c.layers),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    SelfAttention(SelfAttnEncoderParams),
    Grcl(GrclParams),
    BiLstm(BiLstmParams),
}

impl Params for Encoder {
    type Config = EncoderConfig;

    fn specs(cfg: &EncoderConfig) -> Vec<WeightSpec> {
        match cfg {
            EncoderConfig::SelfAttention(c) => SelfAttnEncoderParams::specs(c),
            EncoderConfig::Grcl(c) => GrclParams::specs(c),
            EncoderConfig::BiLstm(c) => BiLstmParams::specs(c),
        }
    }

    fn load(store: &WeightStore, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg {
            EncoderConfig::SelfAttention(c) => Self::SelfAttention(SelfAttnEncoderParams::load(store, c)?),
            EncoderConfig::Grcl(c) => Self::Grcl(GrclParams::load(store, c)?),
            EncoderConfig::BiLstm(c) => Self::BiLstm(BiLstmParams::load(store, c)?),
        })
    }
}

impl Encoder {
    /// Maps `[n×input_dim]` backbone frames to `[n×output_dim]`; `n` is kept.
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        if frames.rank() != 2 {
            return Err(Error::Dimension(format!("encoder expects [n×d], got {:?}", frames.shape())));
        }
        match self {
            Self::SelfAttention(p) => p.encode(frames),
            Self::Grcl(p) => p.encode(frames),
            Self::BiLstm(p) => p.encode(frames),
        }
    }
}

/// Dense projection to per-frame class scores; the blank class is last.
#[derive(Clone, Debug)]
pub struct LogitsHead {
    pub w: Tensor,
    pub b: Tensor,
}

/// `(encoder output dim, alphabet size)`.
pub struct HeadShape(pub usize, pub usize);

impl Params for LogitsHead {
    type Config = HeadShape;

    fn specs(cfg: &HeadShape) -> Vec<WeightSpec> {
        let classes = cfg.1 + 1;
        vec![
            WeightSpec::new("head.logits.w", &[cfg.0, classes]),
            WeightSpec::new("head.logits.b", &[classes]),
        ]
    }

    fn load(store: &WeightStore, cfg: &HeadShape) -> Result<Self> {
        let specs = Self::specs(cfg);
        Ok(Self {
            w: store.fetch(&specs[0])?,
            b: store.fetch(&specs[1])?,
        })
    }
}

impl LogitsHead {
    /// Raw `[n×(A+1)]` scores.
    pub fn logits(&self, encoded: &Tensor) -> Result<Tensor> {
        linear(encoded, &self.w, Some(&self.b))
    }

    pub fn classes(&self) -> usize {
        self.b.len()
    }
}

pub fn random_encoder(cfg: &EncoderConfig, seed: u64) -> Encoder {
    Encoder::random(cfg, &mut Rng::new(seed))
}
