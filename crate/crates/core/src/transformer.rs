//! Autoregressive Transformer decoder over encoded line features.
//!
//! Token ids: `0..A` are alphabet symbols, `A` is BOS and `A + 1` is EOS.
//! Each of the 8 pre-norm layers applies
//!
//! ```text
//! h = x + SelfAttn_causal(LN1(x))          4 heads
//! h = h + CrossAttn(LN2(h), encoded)       1 head
//! y = h + FFN(LN3(h))
//! ```
//!
//! followed by a final layer norm and a projection to `A + 2` logits. Target
//! positions carry absolute sinusoidal encodings.
//!
//! Generation caches the per-layer self-attention keys and values. Because
//! the kernels compute every row with the same summation order, the cached
//! path reproduces the uncached logits bit for bit.

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::attention::{multi_head_attention, sinusoidal_positions, Mask};
use crate::encoders::self_attention::{FFN_INNER, HEADS, HIDDEN};
use crate::error::{Error, Result};
use crate::tensor::{layer_norm, linear, Tensor, LAYER_NORM_EPS};
use crate::weights::{Params, WeightSpec, WeightStore};

pub const LAYERS: usize = 8;
pub const CROSS_HEADS: usize = 1;
pub const DEFAULT_MAX_POSITIONS: usize = 256;

/// Decoder options stored in the model config.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TfmrConfig {
    #[serde(default = "default_max_positions")]
    pub max_positions: usize,
}

fn default_max_positions() -> usize {
    DEFAULT_MAX_POSITIONS
}

impl Default for TfmrConfig {
    fn default() -> Self {
        Self {
            max_positions: DEFAULT_MAX_POSITIONS,
        }
    }
}

/// Everything needed to lay out the decoder weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TfmrShape {
    pub alphabet_len: usize,
    pub enc_dim: usize,
    pub max_positions: usize,
}

impl TfmrShape {
    pub fn vocab(&self) -> usize {
        self.alphabet_len + 2
    }

    pub fn bos(&self) -> usize {
        self.alphabet_len
    }

    pub fn eos(&self) -> usize {
        self.alphabet_len + 1
    }

    fn validate(&self) -> Result<()> {
        if self.alphabet_len == 0 || self.enc_dim == 0 || self.max_positions == 0 {
            return Err(Error::Config(format!("degenerate decoder shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TfmrLayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub self_wq: Tensor,
    pub self_wk: Tensor,
    pub self_wv: Tensor,
    pub self_wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub cross_wq: Tensor,
    pub cross_wk: Tensor,
    pub cross_wv: Tensor,
    pub cross_wo: Tensor,
    pub ln3_gain: Tensor,
    pub ln3_bias: Tensor,
    pub ffn1_w: Tensor,
    pub ffn1_b: Tensor,
    pub ffn2_w: Tensor,
    pub ffn2_b: Tensor,
}

fn layer_specs(prefix: &str, enc_dim: usize) -> Vec<WeightSpec> {
    let d = HIDDEN;
    let s = |n: &str, shape: &[usize]| WeightSpec::new(format!("{prefix}.{n}"), shape);
    vec![
        s("ln1.gain", &[d]),
        s("ln1.bias", &[d]),
        s("self.wq", &[d, d]),
        s("self.wk", &[d, d]),
        s("self.wv", &[d, d]),
        s("self.wo", &[d, d]),
        s("ln2.gain", &[d]),
        s("ln2.bias", &[d]),
        s("cross.wq", &[d, d]),
        s("cross.wk", &[enc_dim, d]),
        s("cross.wv", &[enc_dim, d]),
        s("cross.wo", &[d, d]),
        s("ln3.gain", &[d]),
        s("ln3.bias", &[d]),
        s("ffn1.w", &[d, FFN_INNER]),
        s("ffn1.b", &[FFN_INNER]),
        s("ffn2.w", &[FFN_INNER, d]),
        s("ffn2.b", &[d]),
    ]
}

impl TfmrLayerParams {
    fn load(store: &WeightStore, prefix: &str, enc_dim: usize) -> Result<Self> {
        let t: Vec<Tensor> = layer_specs(prefix, enc_dim)
            .iter()
            .map(|s| store.fetch(s))
            .collect::<Result<_>>()?;
        let mut it = t.into_iter();
        let mut next = || it.next().expect("spec count");
        Ok(Self {
            ln1_gain: next(),
            ln1_bias: next(),
            self_wq: next(),
            self_wk: next(),
            self_wv: next(),
            self_wo: next(),
            ln2_gain: next(),
            ln2_bias: next(),
            cross_wq: next(),
            cross_wk: next(),
            cross_wv: next(),
            cross_wo: next(),
            ln3_gain: next(),
            ln3_bias: next(),
            ffn1_w: next(),
            ffn1_b: next(),
            ffn2_w: next(),
            ffn2_b: next(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct TfmrDecoderParams {
    pub shape: TfmrShape,
    pub embed: Tensor,
    pub layers: Vec<TfmrLayerParams>,
    pub ln_f_gain: Tensor,
    pub ln_f_bias: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl Params for TfmrDecoderParams {
    type Config = TfmrShape;

    fn specs(shape: &TfmrShape) -> Vec<WeightSpec> {
        let v = shape.vocab();
        let mut specs = vec![WeightSpec::new("dec.tfmr.embed", &[v, HIDDEN])];
        for i in 0..LAYERS {
            specs.extend(layer_specs(&format!("dec.tfmr.L{i}"), shape.enc_dim));
        }
        specs.extend([
            WeightSpec::new("dec.tfmr.ln_f.gain", &[HIDDEN]),
            WeightSpec::new("dec.tfmr.ln_f.bias", &[HIDDEN]),
            WeightSpec::new("dec.tfmr.out.w", &[HIDDEN, v]),
            WeightSpec::new("dec.tfmr.out.b", &[v]),
        ]);
        specs
    }

    fn load(store: &WeightStore, shape: &TfmrShape) -> Result<Self> {
        shape.validate()?;
        let v = shape.vocab();
        let layers = (0..LAYERS)
            .map(|i| TfmrLayerParams::load(store, &format!("dec.tfmr.L{i}"), shape.enc_dim))
            .collect::<Result<_>>()?;
        Ok(Self {
            shape: shape.clone(),
            embed: store.get("dec.tfmr.embed", &[v, HIDDEN])?,
            layers,
            ln_f_gain: store.get("dec.tfmr.ln_f.gain", &[HIDDEN])?,
            ln_f_bias: store.get("dec.tfmr.ln_f.bias", &[HIDDEN])?,
            out_w: store.get("dec.tfmr.out.w", &[HIDDEN, v])?,
            out_b: store.get("dec.tfmr.out.b", &[v])?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationConfig {
    pub max_output_len: usize,
    pub bos: usize,
    pub eos: usize,
}

impl GenerationConfig {
    /// Longest output the position budget allows.
    pub fn for_shape(shape: &TfmrShape) -> Self {
        Self {
            max_output_len: shape.max_positions,
            bos: shape.bos(),
            eos: shape.eos(),
        }
    }
}

/// Per-layer keys and values for incremental decoding.
pub struct DecoderState<'a> {
    params: &'a TfmrDecoderParams,
    len: usize,
    self_k: Vec<Vec<f32>>,
    self_v: Vec<Vec<f32>>,
    cross_k: Vec<Tensor>,
    cross_v: Vec<Tensor>,
}

/// Logits for every fed position plus, per layer, the `[n×frames]`
/// cross-attention weights.
pub struct StepOutput {
    pub logits: Tensor,
    pub cross_weights: Vec<Tensor>,
}

impl TfmrDecoderParams {
    pub fn vocab(&self) -> usize {
        self.shape.vocab()
    }

    /// Starts a decode against `encoded[n×enc_dim]`.
    pub fn start<'a>(&'a self, encoded: &Tensor) -> Result<DecoderState<'a>> {
        if encoded.rank() != 2 || encoded.last_dim() != self.shape.enc_dim {
            return Err(Error::Dimension(format!(
                "decoder expects encoded [n×{}], got {:?}",
                self.shape.enc_dim,
                encoded.shape()
            )));
        }
        let mut cross_k = Vec::with_capacity(LAYERS);
        let mut cross_v = Vec::with_capacity(LAYERS);
        for l in &self.layers {
            cross_k.push(linear(encoded, &l.cross_wk, None)?);
            cross_v.push(linear(encoded, &l.cross_wv, None)?);
        }
        Ok(DecoderState {
            params: self,
            len: 0,
            self_k: vec![Vec::new(); LAYERS],
            self_v: vec![Vec::new(); LAYERS],
            cross_k,
            cross_v,
        })
    }

    /// Uncached pass over the whole token sequence.
    pub fn forward(&self, tokens: &[usize], encoded: &Tensor) -> Result<StepOutput> {
        self.start(encoded)?.feed(tokens)
    }

    /// Next-token logits after `tokens` (which normally start with BOS).
    pub fn decoder_step(&self, tokens: &[usize], encoded: &Tensor) -> Result<Vec<f32>> {
        let out = self.forward(tokens, encoded)?;
        Ok(out.logits.row(tokens.len() - 1).to_vec())
    }

    /// Argmax decoding with cached keys; BOS is never emitted.
    pub fn generate_ids(&self, encoded: &Tensor, g: &GenerationConfig) -> Result<Vec<usize>> {
        if g.max_output_len < 1 {
            return Err(Error::Parameter("max_output_len must be at least 1".into()));
        }
        let limit = g.max_output_len.min(self.shape.max_positions);
        let mut state = self.start(encoded)?;
        let mut next = g.bos;
        let mut out = Vec::new();
        while out.len() < limit {
            let step = state.feed(&[next])?;
            let row = step.logits.row(0);
            let mut best = None::<usize>;
            for (i, &v) in row.iter().enumerate() {
                if i != g.bos && best.is_none_or(|b| v > row[b]) {
                    best = Some(i);
                }
            }
            next = best.expect("vocabulary has non-BOS tokens");
            if next == g.eos {
                break;
            }
            out.push(next);
        }
        Ok(out)
    }

    pub fn greedy_generate(&self, encoded: &Tensor, alphabet: &Alphabet, g: &GenerationConfig) -> Result<String> {
        if alphabet.len() != self.shape.alphabet_len {
            return Err(Error::Config(format!(
                "decoder built for {} symbols, alphabet has {}",
                self.shape.alphabet_len,
                alphabet.len()
            )));
        }
        let ids = self.generate_ids(encoded, g)?;
        // EOS and BOS never reach `ids`, so every id is a symbol
        Ok(ids.into_iter().filter_map(|i| alphabet.symbol(i)).collect())
    }
}

impl DecoderState<'_> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `tokens` and returns their logits. An empty state runs them
    /// as one causal batch; otherwise they are fed one at a time.
    pub fn feed(&mut self, tokens: &[usize]) -> Result<StepOutput> {
        let p = self.params;
        if tokens.is_empty() {
            return Err(Error::Input("no tokens to decode".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= p.vocab()) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary of {}", p.vocab())));
        }
        if self.len + tokens.len() > p.shape.max_positions {
            return Err(Error::Capacity(format!(
                "{} target positions exceed the decoder's {}",
                self.len + tokens.len(),
                p.shape.max_positions
            )));
        }
        if self.len > 0 && tokens.len() > 1 {
            let mut logits = Vec::new();
            let mut cross: Vec<Vec<Tensor>> = vec![Vec::new(); LAYERS];
            for &t in tokens {
                let o = self.feed(&[t])?;
                logits.push(o.logits);
                for (acc, w) in cross.iter_mut().zip(o.cross_weights) {
                    acc.push(w);
                }
            }
            return Ok(StepOutput {
                logits: Tensor::concat_rows(&logits)?,
                cross_weights: cross.iter().map(|w| Tensor::concat_rows(w)).collect::<Result<_>>()?,
            });
        }

        let n = tokens.len();
        let emb = Tensor::new(
            vec![n, HIDDEN],
            tokens.iter().flat_map(|&t| p.embed.row(t).iter().copied()).collect(),
        )?;
        let mut x = emb.add(&sinusoidal_positions(n, HIDDEN, self.len))?;
        let mask = if self.len == 0 { Mask::Causal } else { Mask::None };
        let mut cross_weights = Vec::with_capacity(LAYERS);
        for (li, l) in p.layers.iter().enumerate() {
            let xn = layer_norm(&x, &l.ln1_gain, &l.ln1_bias, LAYER_NORM_EPS)?;
            let q = linear(&xn, &l.self_wq, None)?;
            self.self_k[li].extend_from_slice(linear(&xn, &l.self_wk, None)?.data());
            self.self_v[li].extend_from_slice(linear(&xn, &l.self_wv, None)?.data());
            let total = self.len + n;
            let k = Tensor::new(vec![total, HIDDEN], self.self_k[li].clone())?;
            let v = Tensor::new(vec![total, HIDDEN], self.self_v[li].clone())?;
            let att = multi_head_attention(&q, &k, &v, HEADS, mask, None, false)?;
            let h = x.add(&linear(&att.values, &l.self_wo, None)?)?;

            let hn = layer_norm(&h, &l.ln2_gain, &l.ln2_bias, LAYER_NORM_EPS)?;
            let cq = linear(&hn, &l.cross_wq, None)?;
            let catt = multi_head_attention(&cq, &self.cross_k[li], &self.cross_v[li], CROSS_HEADS, Mask::None, None, true)?;
            cross_weights.push(catt.weights.expect("requested").remove(0));
            let h = h.add(&linear(&catt.values, &l.cross_wo, None)?)?;

            let hn = layer_norm(&h, &l.ln3_gain, &l.ln3_bias, LAYER_NORM_EPS)?;
            let f = linear(&hn, &l.ffn1_w, Some(&l.ffn1_b))?.relu();
            x = h.add(&linear(&f, &l.ffn2_w, Some(&l.ffn2_b))?)?;
        }
        self.len += n;
        let xf = layer_norm(&x, &p.ln_f_gain, &p.ln_f_bias, LAYER_NORM_EPS)?;
        Ok(StepOutput {
            logits: linear(&xf, &p.out_w, Some(&p.out_b))?,
            cross_weights,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_uniform, Rng};

    fn shape(max_positions: usize) -> TfmrShape {
        TfmrShape {
            alphabet_len: 5,
            enc_dim: 256,
            max_positions,
        }
    }

    fn random_tokens(rng: &mut Rng, n: usize, vocab: usize) -> Vec<usize> {
        (0..n).map(|_| rng.below(vocab)).collect()
    }

    #[test]
    fn layout() {
        let s = shape(16);
        let specs = TfmrDecoderParams::specs(&s);
        assert_eq!(specs.len(), 1 + LAYERS * 18 + 4);
        let p = TfmrDecoderParams::random(&s, &mut Rng::new(1));
        assert_eq!(p.layers.len(), 8);
        assert_eq!(p.embed.shape(), &[7, 256]);
        let grcl = TfmrShape { enc_dim: 128, ..s };
        assert!(TfmrDecoderParams::specs(&grcl).iter().any(|w| w.shape == [128, 256]));
    }

    #[test]
    fn causal_and_cached_paths_agree() {
        let mut rng = Rng::new(2);
        let s = shape(32);
        for trial in 0..6 {
            let p = TfmrDecoderParams::random(&s, &mut rng);
            let enc = rng_uniform(&mut rng, &[9, 256], -1.0, 1.0).unwrap();
            let n = 2 + rng.below(11);
            let tokens = random_tokens(&mut rng, n, s.vocab());
            let full = p.forward(&tokens, &enc).unwrap().logits;
            let t = rng.below(n - 1);
            let mut altered = tokens.clone();
            for tok in altered[t + 1..].iter_mut() {
                *tok = (*tok + 1 + rng.below(4)) % s.vocab();
            }
            let alt = p.forward(&altered, &enc).unwrap().logits;
            assert_eq!(full.row(t), alt.row(t), "trial {trial}");
            assert_eq!(p.decoder_step(&tokens[..=t], &enc).unwrap(), full.row(t));

            let mut state = p.start(&enc).unwrap();
            for (i, &tok) in tokens.iter().enumerate() {
                let step = state.feed(&[tok]).unwrap();
                assert_eq!(step.logits.row(0), full.row(i), "trial {trial} step {i}");
            }
        }
    }

    #[test]
    fn cross_attention_is_a_distribution() {
        let mut rng = Rng::new(3);
        let s = shape(16);
        let p = TfmrDecoderParams::random(&s, &mut rng);
        let enc = rng_uniform(&mut rng, &[11, 256], -2.0, 2.0).unwrap();
        let out = p.forward(&[5, 0, 3, 1, 2], &enc).unwrap();
        assert_eq!(out.cross_weights.len(), LAYERS);
        for w in &out.cross_weights {
            for i in 0..5 {
                let sum: f64 = w.row(i).iter().map(|&x| x as f64).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
        let one = rng_uniform(&mut rng, &[1, 256], -1.0, 1.0).unwrap();
        for w in p.forward(&[5, 2], &one).unwrap().cross_weights {
            assert_eq!(w.data(), &[1.0, 1.0]);
        }
    }

    #[test]
    fn eos_bias_stops_immediately() {
        let s = shape(16);
        let mut store = WeightStore::filled(&TfmrDecoderParams::specs(&s), 0.0);
        let mut bias = vec![0.0; s.vocab()];
        bias[s.eos()] = 5.0;
        store.insert("dec.tfmr.out.b", Tensor::new(vec![s.vocab()], bias).unwrap());
        let p = TfmrDecoderParams::load(&store, &s).unwrap();
        let alphabet = Alphabet::new("abcde").unwrap();
        let enc = Tensor::full(&[4, 256], 0.5);
        let g = GenerationConfig::for_shape(&s);
        assert_eq!(p.greedy_generate(&enc, &alphabet, &g).unwrap(), "");
    }

    #[test]
    fn halts_at_max_length() {
        let s = shape(16);
        let mut store = WeightStore::filled(&TfmrDecoderParams::specs(&s), 0.0);
        let mut bias = vec![0.0; s.vocab()];
        bias[2] = 5.0;
        // BOS scores highest but may never be emitted
        bias[s.bos()] = 9.0;
        store.insert("dec.tfmr.out.b", Tensor::new(vec![s.vocab()], bias).unwrap());
        let p = TfmrDecoderParams::load(&store, &s).unwrap();
        let alphabet = Alphabet::new("abcde").unwrap();
        let enc = Tensor::full(&[4, 256], 0.5);
        let mut g = GenerationConfig::for_shape(&s);
        g.max_output_len = 6;
        assert_eq!(p.greedy_generate(&enc, &alphabet, &g).unwrap(), "cccccc");
        g.max_output_len = 100;
        assert_eq!(p.greedy_generate(&enc, &alphabet, &g).unwrap().len(), 16);
        g.max_output_len = 0;
        assert!(p.greedy_generate(&enc, &alphabet, &g).is_err());
    }

    #[test]
    fn deterministic_generation() {
        let mut rng = Rng::new(4);
        let s = shape(24);
        let p = TfmrDecoderParams::random(&s, &mut rng);
        let enc = rng_uniform(&mut rng, &[20, 256], -1.0, 1.0).unwrap();
        let alphabet = Alphabet::new("abcde").unwrap();
        let g = GenerationConfig::for_shape(&s);
        let a = p.greedy_generate(&enc, &alphabet, &g).unwrap();
        let b = p.greedy_generate(&enc, &alphabet, &g).unwrap();
        assert_eq!(a, b);
        assert!(a.chars().count() <= g.max_output_len);
    }

    #[test]
    fn errors() {
        let s = shape(4);
        let p = TfmrDecoderParams::random(&s, &mut Rng::new(5));
        let enc = Tensor::full(&[3, 256], 0.1);
        assert!(matches!(p.forward(&[5, 1, 2, 3, 4], &enc), Err(Error::Capacity(_))));
        assert!(p.forward(&[5, 1, 2, 3], &enc).is_ok());
        assert!(matches!(p.forward(&[9], &enc), Err(Error::Input(_))));
        assert!(matches!(p.forward(&[], &enc), Err(Error::Input(_))));
        assert!(matches!(p.forward(&[5], &Tensor::full(&[3, 128], 0.1)), Err(Error::Dimension(_))));
        let mut state = p.start(&enc).unwrap();
        state.feed(&[5, 1, 2]).unwrap();
        assert!(matches!(state.feed(&[1, 1]), Err(Error::Capacity(_))));
    }
}
