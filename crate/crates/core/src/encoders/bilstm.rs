use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, linear, sigmoid, Tensor};
use crate::weights::{Params, WeightSpec, WeightStore};

pub const HIDDEN: usize = 512;
pub const OUTPUT: usize = 256;
const GATES: [&str; 4] = ["i", "f", "c", "o"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiLstmConfig {
    pub layers: usize,
    #[serde(default = "super::default_input_dim")]
    pub input_dim: usize,
}

impl BiLstmConfig {
    pub fn new(layers: usize) -> Self {
        Self {
            layers,
            input_dim: super::default_input_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layers) {
            return Err(Error::Config(format!(
                "BiLSTM depth must be in 1..=3, got {}",
                self.layers
            )));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            2 * HIDDEN
        }
    }
}

/// Input (`w`), recurrent (`u`) and bias weights for the gates `i, f, c, o`.
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub w: [Tensor; 4],
    pub u: [Tensor; 4],
    pub b: [Tensor; 4],
}

fn cell_specs(prefix: &str, input: usize) -> Vec<WeightSpec> {
    let mut specs = Vec::new();
    for g in GATES {
        specs.push(WeightSpec::new(format!("{prefix}.W{g}"), &[input, HIDDEN]));
        specs.push(WeightSpec::new(format!("{prefix}.U{g}"), &[HIDDEN, HIDDEN]));
        specs.push(WeightSpec::new(format!("{prefix}.b{g}"), &[HIDDEN]));
    }
    specs
}

impl LstmCellParams {
    fn load(store: &WeightStore, prefix: &str, input: usize) -> Result<Self> {
        let t: Vec<Tensor> = cell_specs(prefix, input)
            .iter()
            .map(|s| store.fetch(s))
            .collect::<Result<_>>()?;
        let pick = |k: usize| -> [Tensor; 4] { std::array::from_fn(|g| t[g * 3 + k].clone()) };
        Ok(Self {
            w: pick(0),
            u: pick(1),
            b: pick(2),
        })
    }

    /// Runs the recurrence over `x[n×input]`, forward or reversed in time,
    /// returning hidden states in original frame order.
    fn run(&self, x: &Tensor, reverse: bool) -> Result<Vec<f32>> {
        let n = x.rows();
        let pre: Vec<Tensor> = (0..4)
            .map(|g| linear(x, &self.w[g], Some(&self.b[g])))
            .collect::<Result<_>>()?;
        let mut h = vec![0.0f32; HIDDEN];
        let mut c = vec![0.0f32; HIDDEN];
        let mut rec = [(); 4].map(|_| vec![0.0f32; HIDDEN]);
        let mut out = vec![0.0f32; n * HIDDEN];
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            for g in 0..4 {
                gemm(&h, self.u[g].data(), 1, HIDDEN, HIDDEN, &mut rec[g]);
            }
            for j in 0..HIDDEN {
                let i_g = sigmoid(pre[0].row(t)[j] + rec[0][j]);
                let f_g = sigmoid(pre[1].row(t)[j] + rec[1][j]);
                let cand = (pre[2].row(t)[j] + rec[2][j]).tanh();
                let o_g = sigmoid(pre[3].row(t)[j] + rec[3][j]);
                c[j] = f_g * c[j] + i_g * cand;
                h[j] = o_g * c[j].tanh();
            }
            out[t * HIDDEN..(t + 1) * HIDDEN].copy_from_slice(&h);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmParams {
    pub config: BiLstmConfig,
    /// `(forward, backward)` per layer.
    pub layers: Vec<(LstmCellParams, LstmCellParams)>,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

impl Params for BiLstmParams {
    type Config = BiLstmConfig;

    fn specs(cfg: &BiLstmConfig) -> Vec<WeightSpec> {
        let mut specs = Vec::new();
        for l in 0..cfg.layers {
            for dir in ["fwd", "bwd"] {
                specs.extend(cell_specs(&format!("enc.lstm.L{l}.{dir}"), cfg.layer_input(l)));
            }
        }
        specs.push(WeightSpec::new("enc.lstm.proj.w", &[2 * HIDDEN, OUTPUT]));
        specs.push(WeightSpec::new("enc.lstm.proj.b", &[OUTPUT]));
        specs
    }

    fn load(store: &WeightStore, cfg: &BiLstmConfig) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.layers)
            .map(|l| {
                let input = cfg.layer_input(l);
                Ok((
                    LstmCellParams::load(store, &format!("enc.lstm.L{l}.fwd"), input)?,
                    LstmCellParams::load(store, &format!("enc.lstm.L{l}.bwd"), input)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: cfg.clone(),
            layers,
            proj_w: store.get("enc.lstm.proj.w", &[2 * HIDDEN, OUTPUT])?,
            proj_b: store.get("enc.lstm.proj.b", &[OUTPUT])?,
        })
    }
}

impl BiLstmParams {
    /// `[n×input_dim]` to `[n×256]`; each layer concatenates (forward, backward).
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        if frames.rank() != 2 || frames.last_dim() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "BiLSTM expects [n×{}], got {:?}",
                self.config.input_dim,
                frames.shape()
            )));
        }
        let n = frames.rows();
        let mut x = frames.clone();
        for (fwd, bwd) in &self.layers {
            let hf = fwd.run(&x, false)?;
            let hb = bwd.run(&x, true)?;
            let mut cat = Vec::with_capacity(n * 2 * HIDDEN);
            for t in 0..n {
                cat.extend_from_slice(&hf[t * HIDDEN..(t + 1) * HIDDEN]);
                cat.extend_from_slice(&hb[t * HIDDEN..(t + 1) * HIDDEN]);
            }
            x = Tensor::new(vec![n, 2 * HIDDEN], cat)?;
        }
        linear(&x, &self.proj_w, Some(&self.proj_b))
    }

    /// Concatenated hidden states of the last layer, before projection.
    pub fn hidden_states(&self, frames: &Tensor) -> Result<Tensor> {
        let identity = Self {
            proj_w: Tensor::identity(2 * HIDDEN),
            proj_b: Tensor::zeros(&[2 * HIDDEN]),
            ..self.clone()
        };
        identity.encode(frames)
    }
}
