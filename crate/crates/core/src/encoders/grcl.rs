//! Gated recurrent convolution encoder.
//!
//! Three sets of blocks with `[384, 256, 128]` filters and 1-D kernel widths
//! `[3, 5, 7]` along the sequence. Every block is a gated unit unrolled for
//! [`ITERATIONS`] steps with its weights shared across steps:
//!
//! ```text
//! feed  = relu(nf(conv_feed(u)))                  // computed once
//! s_0   = 0
//! s_t   = feed ⊙ sigmoid(ng(conv_gate(u) + conv_rec(s_{t-1})))
//! ```
//!
//! `nf`/`ng` are per-channel affine folds of batch renormalization. A block's
//! output `s_T` feeds the next block; the first block of a set changes the
//! channel count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Padding, Tensor};
use crate::weights::{Params, WeightSpec, WeightStore};

pub const FILTERS: [usize; 3] = [384, 256, 128];
pub const KERNELS: [usize; 3] = [3, 5, 7];
pub const ITERATIONS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrclConfig {
    pub blocks_per_set: usize,
    #[serde(default = "super::default_input_dim")]
    pub input_dim: usize,
}

impl GrclConfig {
    pub fn new(blocks_per_set: usize) -> Self {
        Self {
            blocks_per_set,
            input_dim: super::default_input_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.blocks_per_set) {
            return Err(Error::Config(format!(
                "GRCL blocks per set must be in 1..=6, got {}",
                self.blocks_per_set
            )));
        }
        Ok(())
    }

    fn block_dims(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        let mut dims = Vec::new();
        let mut cin = self.input_dim;
        for s in 0..3 {
            for b in 0..self.blocks_per_set {
                dims.push((s, b, cin, FILTERS[s], KERNELS[s]));
                cin = FILTERS[s];
            }
        }
        dims
    }
}

#[derive(Clone, Debug)]
pub struct GrclBlockParams {
    pub feed_w: Tensor,
    pub feed_b: Tensor,
    pub feed_scale: Tensor,
    pub feed_shift: Tensor,
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub gate_rec_w: Tensor,
    pub gate_scale: Tensor,
    pub gate_shift: Tensor,
}

fn block_specs(s: usize, b: usize, cin: usize, cout: usize, k: usize) -> Vec<WeightSpec> {
    let p = format!("enc.grcl.S{s}.B{b}");
    vec![
        WeightSpec::new(format!("{p}.feed.w"), &[1, k, cin, cout]),
        WeightSpec::new(format!("{p}.feed.b"), &[cout]),
        WeightSpec::new(format!("{p}.feed.scale"), &[cout]),
        WeightSpec::new(format!("{p}.feed.shift"), &[cout]),
        WeightSpec::new(format!("{p}.gate.w"), &[1, k, cin, cout]),
        WeightSpec::new(format!("{p}.gate.b"), &[cout]),
        WeightSpec::new(format!("{p}.gate.rec"), &[1, k, cout, cout]),
        WeightSpec::new(format!("{p}.gate.scale"), &[cout]),
        WeightSpec::new(format!("{p}.gate.shift"), &[cout]),
    ]
}

impl GrclBlockParams {
    fn forward(&self, u: &Tensor) -> Result<Tensor> {
        let feed = conv2d(u, &self.feed_w, (1, 1), Padding::Same)?
            .add_bias(&self.feed_b)?
            .affine(&self.feed_scale, &self.feed_shift)?
            .relu();
        let gate_in = conv2d(u, &self.gate_w, (1, 1), Padding::Same)?.add_bias(&self.gate_b)?;
        let mut state = Tensor::zeros(feed.shape());
        for _ in 0..ITERATIONS {
            let rec = conv2d(&state, &self.gate_rec_w, (1, 1), Padding::Same)?;
            let gate = gate_in
                .add(&rec)?
                .affine(&self.gate_scale, &self.gate_shift)?
                .sigmoid();
            let mut next = feed.clone();
            for (v, g) in next.data_mut().iter_mut().zip(gate.data()) {
                *v *= g;
            }
            state = next;
        }
        Ok(state)
    }
}

#[derive(Clone, Debug)]
pub struct GrclParams {
    pub config: GrclConfig,
    /// Blocks in execution order, set-major.
    pub blocks: Vec<GrclBlockParams>,
}

impl Params for GrclParams {
    type Config = GrclConfig;

    fn specs(cfg: &GrclConfig) -> Vec<WeightSpec> {
        cfg.block_dims()
            .into_iter()
            .flat_map(|(s, b, cin, cout, k)| block_specs(s, b, cin, cout, k))
            .collect()
    }

    fn load(store: &WeightStore, cfg: &GrclConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = cfg
            .block_dims()
            .into_iter()
            .map(|(s, b, cin, cout, k)| {
                let t: Vec<Tensor> = block_specs(s, b, cin, cout, k)
                    .iter()
                    .map(|spec| store.fetch(spec))
                    .collect::<Result<_>>()?;
                let mut it = t.into_iter();
                let mut next = || it.next().expect("spec count");
                Ok(GrclBlockParams {
                    feed_w: next(),
                    feed_b: next(),
                    feed_scale: next(),
                    feed_shift: next(),
                    gate_w: next(),
                    gate_b: next(),
                    gate_rec_w: next(),
                    gate_scale: next(),
                    gate_shift: next(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            blocks,
        })
    }
}

impl GrclParams {
    /// `[n×input_dim]` to `[n×128]`.
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        if frames.rank() != 2 || frames.last_dim() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "GRCL expects [n×{}], got {:?}",
                self.config.input_dim,
                frames.shape()
            )));
        }
        let n = frames.rows();
        let mut x = frames.clone().reshape(vec![1, n, self.config.input_dim])?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        let c = x.last_dim();
        x.reshape(vec![n, c])
    }
}
