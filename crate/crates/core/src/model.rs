//! Model configuration and the `.tlrw` weight bundle.
//!
//! File layout (little-endian):
//!
//! ```text
//! "TLRW"  u32 version
//! u32 config length, UTF-8 JSON config
//! u32 tensor count
//! per tensor: u16 name length, UTF-8 name, u8 rank, u32 dims[rank], f32 data
//! ```
//!
//! Tensors are written in name order, so equal bundles give equal bytes.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::backbone::{receptive_field_radius, BackboneConfig, BackboneParams};
use crate::chunking::{ChunkConfig, CHUNK_WIDTH};
use crate::encoders::{Encoder, EncoderConfig, HeadShape, LogitsHead, SelfAttnConfig};
use crate::error::{map_eof, Error, Result};
use crate::tensor::{Rng, Tensor};
use crate::transformer::{TfmrConfig, TfmrDecoderParams, TfmrShape};
use crate::weights::{Params, WeightSpec, WeightStore};

const MAGIC: [u8; 4] = *b"TLRW";
const VERSION: u32 = 1;
pub const DEFAULT_MAX_WIDTH: usize = 1024;

/// Printable ASCII, space included.
pub fn default_alphabet() -> String {
    (' '..='~').collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DecoderConfig {
    Ctc,
    Transformer(TfmrConfig),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub alphabet: String,
    #[serde(default)]
    pub backbone: BackboneConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub chunk: ChunkConfig,
    /// Fixed input width of the Transformer path.
    #[serde(default = "default_max_width")]
    pub max_width: usize,
}

fn default_max_width() -> usize {
    DEFAULT_MAX_WIDTH
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, decoder: DecoderConfig) -> Self {
        Self {
            alphabet: default_alphabet(),
            backbone: BackboneConfig::default(),
            encoder,
            decoder,
            chunk: ChunkConfig::default(),
            max_width: DEFAULT_MAX_WIDTH,
        }
    }

    /// Four self-attention layers with CTC.
    pub fn default_ctc() -> Self {
        Self::new(EncoderConfig::SelfAttention(SelfAttnConfig::new(4)), DecoderConfig::Ctc)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        Alphabet::new(&self.alphabet).map_err(|e| Error::Config(e.to_string()))?;
        self.backbone.validate()?;
        self.encoder.validate()?;
        if self.encoder.input_dim() != self.backbone.channels {
            return Err(Error::Config(format!(
                "encoder expects {} channels, backbone produces {}",
                self.encoder.input_dim(),
                self.backbone.channels
            )));
        }
        let pad = self.chunk.pad_px;
        if pad % 4 != 0 || 2 * pad >= CHUNK_WIDTH {
            return Err(Error::Config(format!("chunk pad {pad} must be a multiple of 4 below 160")));
        }
        if self.max_width == 0 || self.max_width % 4 != 0 {
            return Err(Error::Config(format!("max_width {} must be a positive multiple of 4", self.max_width)));
        }
        if let DecoderConfig::Transformer(t) = &self.decoder {
            if t.max_positions == 0 {
                return Err(Error::Config("max_positions must be positive".into()));
            }
        }
        if pad < receptive_field_radius(&self.backbone) {
            log::warn!(
                "chunk pad {pad} px is below the backbone receptive field radius {} px",
                receptive_field_radius(&self.backbone)
            );
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Result<Alphabet> {
        Alphabet::new(&self.alphabet)
    }

    fn tfmr_shape(&self, t: &TfmrConfig) -> TfmrShape {
        TfmrShape {
            alphabet_len: self.alphabet.chars().count(),
            enc_dim: self.encoder.output_dim(),
            max_positions: t.max_positions,
        }
    }

    /// Every weight the config requires, in initialization order.
    pub fn weight_specs(&self) -> Vec<WeightSpec> {
        let mut specs = BackboneParams::specs(&self.backbone);
        specs.extend(Encoder::specs(&self.encoder));
        match &self.decoder {
            DecoderConfig::Ctc => specs.extend(LogitsHead::specs(&HeadShape(
                self.encoder.output_dim(),
                self.alphabet.chars().count(),
            ))),
            DecoderConfig::Transformer(t) => specs.extend(TfmrDecoderParams::specs(&self.tfmr_shape(t))),
        }
        specs
    }

    /// Short description such as `sa4/ctc` or `grcl2/transformer`.
    pub fn label(&self) -> String {
        let dec = match self.decoder {
            DecoderConfig::Ctc => "ctc",
            DecoderConfig::Transformer(_) => "transformer",
        };
        format!("{}/{dec}", self.encoder.label())
    }
}

#[derive(Clone, Debug)]
pub enum DecoderParams {
    Ctc(LogitsHead),
    Transformer(TfmrDecoderParams),
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub alphabet: Alphabet,
    pub weights: WeightStore,
    pub backbone: BackboneParams,
    pub encoder: Encoder,
    pub decoder: DecoderParams,
}

impl ModelBundle {
    /// Checks `weights` against `config` and builds the network.
    pub fn from_parts(config: ModelConfig, weights: WeightStore) -> Result<Self> {
        config.validate()?;
        let specs = config.weight_specs();
        weights.validate(&specs)?;
        if weights.len() != specs.len() {
            let extra = weights
                .iter()
                .map(|(n, _)| n)
                .find(|n| !specs.iter().any(|s| s.name == *n))
                .unwrap_or_default();
            return Err(Error::Format(format!("unexpected weight `{extra}`")));
        }
        let alphabet = config.alphabet()?;
        let backbone = BackboneParams::load(&weights, &config.backbone)?;
        let encoder = Encoder::load(&weights, &config.encoder)?;
        let decoder = match &config.decoder {
            DecoderConfig::Ctc => DecoderParams::Ctc(LogitsHead::load(
                &weights,
                &HeadShape(config.encoder.output_dim(), alphabet.len()),
            )?),
            DecoderConfig::Transformer(t) => {
                DecoderParams::Transformer(TfmrDecoderParams::load(&weights, &config.tfmr_shape(t))?)
            }
        };
        Ok(Self {
            config,
            alphabet,
            weights,
            backbone,
            encoder,
            decoder,
        })
    }

    /// Uniform `[-0.08, 0.08)` weights drawn in spec order from `seed`.
    /// Seed 0 is an ordinary seed.
    pub fn init_random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let weights = WeightStore::random(&config.weight_specs(), &mut Rng::new(seed));
        Self::from_parts(config, weights)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let json = self.config.to_json();
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(json.as_bytes())?;
        w.write_all(&(self.weights.len() as u32).to_le_bytes())?;
        for (name, t) in self.weights.iter() {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("weight name `{name}` too long")))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[t.rank() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(map_eof)?;
        if magic != MAGIC {
            return Err(Error::Magic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Version {
                expected: VERSION,
                found: version,
            });
        }
        let json_len = read_u32(&mut r)? as usize;
        let json = String::from_utf8(read_bytes(&mut r, json_len)?).map_err(|e| Error::Format(e.to_string()))?;
        let config = ModelConfig::from_json(&json)?;
        let count = read_u32(&mut r)?;
        let mut weights = WeightStore::new();
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2).map_err(map_eof)?;
            let name = String::from_utf8(read_bytes(&mut r, u16::from_le_bytes(b2) as usize)?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank).map_err(map_eof)?;
            let shape = (0..rank[0]).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = match numel {
                Some(n) if n > 0 && n <= 1 << 28 => n,
                _ => return Err(Error::Format(format!("weight `{name}` has implausible shape {shape:?}"))),
            };
            let raw = read_bytes(&mut r, 4 * numel)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if weights.contains(&name) {
                return Err(Error::Format(format!("weight `{name}` appears twice")));
            }
            weights.insert(&name, Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last tensor".into()));
        }
        Self::from_parts(config, weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn is_ctc(&self) -> bool {
        matches!(self.decoder, DecoderParams::Ctc(_))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(map_eof)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let got = r.take(n as u64).read_to_end(&mut buf)?;
    if got != n {
        return Err(Error::Format("unexpected end of file".into()));
    }
    Ok(buf)
}
