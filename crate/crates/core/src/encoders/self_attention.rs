use serde::{Deserialize, Serialize};

use crate::attention::{multi_head_attention, relative_bias, sinusoidal_positions, Mask};
use crate::error::{Error, Result};
use crate::tensor::{layer_norm, linear, Tensor, LAYER_NORM_EPS};
use crate::weights::{Params, WeightSpec, WeightStore};

pub const HIDDEN: usize = 256;
pub const HEADS: usize = 4;
pub const FFN_INNER: usize = 4 * HIDDEN;
pub const ALLOWED_DEPTHS: [usize; 5] = [4, 8, 12, 16, 20];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    /// Fixed sinusoidal bias on attention scores, a function of `i - j`.
    #[default]
    Relative,
    /// Sinusoidal encoding added to the projected inputs.
    Absolute,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfAttnConfig {
    pub layers: usize,
    #[serde(default)]
    pub positional: Positional,
    #[serde(default = "super::default_input_dim")]
    pub input_dim: usize,
}

impl SelfAttnConfig {
    pub fn new(layers: usize) -> Self {
        Self {
            layers,
            positional: Positional::Relative,
            input_dim: super::default_input_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_DEPTHS.contains(&self.layers) {
            return Err(Error::Config(format!(
                "self-attention depth {} not in {ALLOWED_DEPTHS:?}",
                self.layers
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttnLayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn1_w: Tensor,
    pub ffn1_b: Tensor,
    pub ffn2_w: Tensor,
    pub ffn2_b: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

pub(crate) fn layer_specs(prefix: &str) -> Vec<WeightSpec> {
    let d = HIDDEN;
    vec![
        WeightSpec::new(format!("{prefix}.wq"), &[d, d]),
        WeightSpec::new(format!("{prefix}.wk"), &[d, d]),
        WeightSpec::new(format!("{prefix}.wv"), &[d, d]),
        WeightSpec::new(format!("{prefix}.wo"), &[d, d]),
        WeightSpec::new(format!("{prefix}.ffn1.w"), &[d, FFN_INNER]),
        WeightSpec::new(format!("{prefix}.ffn1.b"), &[FFN_INNER]),
        WeightSpec::new(format!("{prefix}.ffn2.w"), &[FFN_INNER, d]),
        WeightSpec::new(format!("{prefix}.ffn2.b"), &[d]),
        WeightSpec::new(format!("{prefix}.ln1.gain"), &[d]),
        WeightSpec::new(format!("{prefix}.ln1.bias"), &[d]),
        WeightSpec::new(format!("{prefix}.ln2.gain"), &[d]),
        WeightSpec::new(format!("{prefix}.ln2.bias"), &[d]),
    ]
}

impl SelfAttnLayerParams {
    pub(crate) fn load(store: &WeightStore, prefix: &str) -> Result<Self> {
        let t: Vec<Tensor> = layer_specs(prefix)
            .iter()
            .map(|s| store.fetch(s))
            .collect::<Result<_>>()?;
        let mut it = t.into_iter();
        let mut next = || it.next().expect("spec count");
        Ok(Self {
            wq: next(),
            wk: next(),
            wv: next(),
            wo: next(),
            ffn1_w: next(),
            ffn1_b: next(),
            ffn2_w: next(),
            ffn2_b: next(),
            ln1_gain: next(),
            ln1_bias: next(),
            ln2_gain: next(),
            ln2_bias: next(),
        })
    }

    pub fn random(rng: &mut crate::tensor::Rng) -> Self {
        let specs = layer_specs("l");
        Self::load(&WeightStore::random(&specs, rng), "l").expect("specs and loader agree")
    }

    /// Pre-norm block: `h = x + MHA(LN1(x))`, `y = h + FFN(LN2(h))`.
    pub fn forward(&self, x: &Tensor, positional: Positional) -> Result<Tensor> {
        self.forward_inner(x, positional, false).map(|(y, _)| y)
    }

    /// Also returns the per-head `[n×n]` attention weights.
    pub fn forward_with_weights(&self, x: &Tensor, positional: Positional) -> Result<(Tensor, Vec<Tensor>)> {
        self.forward_inner(x, positional, true)
            .map(|(y, w)| (y, w.expect("weights requested")))
    }

    fn forward_inner(&self, x: &Tensor, positional: Positional, keep: bool) -> Result<(Tensor, Option<Vec<Tensor>>)> {
        if x.rank() != 2 || x.last_dim() != HIDDEN {
            return Err(Error::Dimension(format!(
                "self-attention layer expects [n×{HIDDEN}], got {:?}",
                x.shape()
            )));
        }
        let xn = layer_norm(x, &self.ln1_gain, &self.ln1_bias, LAYER_NORM_EPS)?;
        let q = linear(&xn, &self.wq, None)?;
        let k = linear(&xn, &self.wk, None)?;
        let v = linear(&xn, &self.wv, None)?;
        let rel = |h: usize, i: usize, j: usize| relative_bias(h, HEADS, i as i64 - j as i64);
        let bias: Option<&dyn Fn(usize, usize, usize) -> f32> = match positional {
            Positional::Relative => Some(&rel),
            _ => None,
        };
        let att = multi_head_attention(&q, &k, &v, HEADS, Mask::None, bias, keep)?;
        let h = x.add(&linear(&att.values, &self.wo, None)?)?;

        let hn = layer_norm(&h, &self.ln2_gain, &self.ln2_bias, LAYER_NORM_EPS)?;
        let f = linear(&hn, &self.ffn1_w, Some(&self.ffn1_b))?.relu();
        let f = linear(&f, &self.ffn2_w, Some(&self.ffn2_b))?;
        Ok((h.add(&f)?, att.weights))
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttnEncoderParams {
    pub config: SelfAttnConfig,
    pub input_w: Tensor,
    pub input_b: Tensor,
    pub layers: Vec<SelfAttnLayerParams>,
}

impl Params for SelfAttnEncoderParams {
    type Config = SelfAttnConfig;

    fn specs(cfg: &SelfAttnConfig) -> Vec<WeightSpec> {
        let mut specs = vec![
            WeightSpec::new("enc.sa.in.w", &[cfg.input_dim, HIDDEN]),
            WeightSpec::new("enc.sa.in.b", &[HIDDEN]),
        ];
        for i in 0..cfg.layers {
            specs.extend(layer_specs(&format!("enc.sa.L{i}")));
        }
        specs
    }

    fn load(store: &WeightStore, cfg: &SelfAttnConfig) -> Result<Self> {
        let specs = Self::specs(cfg);
        Ok(Self {
            config: cfg.clone(),
            input_w: store.fetch(&specs[0])?,
            input_b: store.fetch(&specs[1])?,
            layers: (0..cfg.layers)
                .map(|i| SelfAttnLayerParams::load(store, &format!("enc.sa.L{i}")))
                .collect::<Result<_>>()?,
        })
    }
}

impl SelfAttnEncoderParams {
    /// `[n×input_dim]` frames to `[n×256]` features.
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        self.encode_at(frames, 0)
    }

    /// Encodes with the first frame at absolute position `offset`. Only the
    /// absolute positional mode depends on `offset`.
    pub fn encode_at(&self, frames: &Tensor, offset: usize) -> Result<Tensor> {
        let mut x = linear(frames, &self.input_w, Some(&self.input_b))?;
        if self.config.positional == Positional::Absolute {
            x = x.add(&sinusoidal_positions(x.rows(), HIDDEN, offset))?;
        }
        for layer in &self.layers {
            x = layer.forward(&x, self.config.positional)?;
        }
        Ok(x)
    }
}
