//! Error-rate tuning of the log-linear decoding weights.
//!
//! Coordinate descent over a fixed grid: each tunable weight in turn is
//! tried at 17 geometric multiples of its current value spanning
//! `1e-2..1e2` (multiples of 1 when the weight is 0) and at 0. A weight
//! moves only when some candidate strictly lowers the dev CER; among the
//! candidates reaching that lowest error the one with the smallest
//! magnitude wins. `λ_ctc` stays at 1 to fix the overall scale.

use rayon::prelude::*;

use crate::alphabet::Alphabet;
use crate::ctc::{decode_fused, FrameLogits, LogLinearWeights, DEFAULT_BEAM_WIDTH};
use crate::error::{Error, Result};
use crate::lm::CharNGramLM;
use crate::metrics::cer_counts;
use crate::tensor::Rng;

#[derive(Clone, Debug)]
pub struct DevExample {
    pub logits: FrameLogits,
    pub truth: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MertConfig {
    pub max_rounds: usize,
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub beam_width: usize,
    /// Indices into [`LogLinearWeights::NAMES`]; `ctc` (0) is never tuned.
    pub tunable: Vec<usize>,
}

impl Default for MertConfig {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            grid_points: 17,
            grid_lo: 1e-2,
            grid_hi: 1e2,
            beam_width: DEFAULT_BEAM_WIDTH,
            tunable: vec![1, 2, 3, 4, 5],
        }
    }
}

impl MertConfig {
    /// Candidate values for a weight currently at `current`, 0 included.
    pub fn grid(&self, current: f64) -> Vec<f64> {
        let scale = if current == 0.0 { 1.0 } else { current };
        let n = self.grid_points.max(2);
        let (lo, hi) = (self.grid_lo.ln(), self.grid_hi.ln());
        let mut g: Vec<f64> = (0..n)
            .map(|i| scale * (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
            .collect();
        g.push(0.0);
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneReport {
    pub weights: LogLinearWeights,
    pub before_cer: f64,
    pub after_cer: f64,
    /// Completed rounds, including the final one that changed nothing.
    pub rounds: usize,
    /// Dev CER before tuning and after each round.
    pub trajectory: Vec<f64>,
}

/// Pooled CER of fused decoding over the dev set.
pub fn dev_error(examples: &[DevExample], lm: &CharNGramLM, w: &LogLinearWeights, beam_width: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Input("dev set is empty".into()));
    }
    let counts = examples
        .par_iter()
        .map(|ex| decode_fused(&ex.logits, lm, w, beam_width).map(|pred| cer_counts(&pred, &ex.truth)))
        .collect::<Result<Vec<_>>>()?;
    let (d, n) = counts.iter().fold((0, 0), |(d, n), &(a, b)| (d + a, n + b));
    Ok(d as f64 / n as f64)
}

pub fn mert_tune(
    examples: &[DevExample],
    lm: &CharNGramLM,
    init: &LogLinearWeights,
    cfg: &MertConfig,
) -> Result<TuneReport> {
    init.validate()?;
    if init.ctc <= 0.0 {
        return Err(Error::Parameter("λ_ctc must be positive".into()));
    }
    if cfg.tunable.iter().any(|&k| k == 0 || k >= 6) {
        return Err(Error::Parameter("tunable weights are indices 1..=5".into()));
    }
    // ranking is unchanged by a positive rescale, so anchor λ_ctc at 1
    let mut w = init.to_array().map(|v| v / init.ctc);
    w[0] = 1.0;
    let eval = |w: &[f64; 6]| dev_error(examples, lm, &LogLinearWeights::from_array(*w), cfg.beam_width);

    let mut current = eval(&w)?;
    let before = current;
    let mut trajectory = vec![before];
    let mut rounds = 0;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let mut improved = false;
        for &k in &cfg.tunable {
            let mut best: Option<(f64, f64)> = None;
            for v in cfg.grid(w[k]) {
                let mut trial = w;
                trial[k] = v;
                let e = eval(&trial)?;
                let better = match best {
                    None => true,
                    Some((be, bv)) => e < be || (e == be && (v.abs(), v) < (bv.abs(), bv)),
                };
                if better {
                    best = Some((e, v));
                }
            }
            if let Some((e, v)) = best {
                if e < current {
                    w[k] = v;
                    current = e;
                    improved = true;
                }
            }
        }
        trajectory.push(current);
        if !improved {
            break;
        }
    }
    Ok(TuneReport {
        weights: LogLinearWeights::from_array(w),
        before_cer: before,
        after_cer: current,
        rounds,
        trajectory,
    })
}

/// Dev lines whose every character is confusable: each truth symbol gets
/// one frame where it and a random other symbol draw i.i.d. scores
/// `N(0, noise)` (everything else far below), then a blank frame. Without
/// context the two are a coin flip; a language model that knows the truths
/// can tell them apart.
pub fn planted_dev_set(truths: &[String], alphabet: &Alphabet, noise: f64, rng: &mut Rng) -> Result<Vec<DevExample>> {
    const LOW: f64 = -12.0;
    let classes = alphabet.len() + 1;
    if alphabet.len() < 2 {
        return Err(Error::Input("need at least two symbols to confuse".into()));
    }
    truths
        .iter()
        .map(|truth| {
            let mut scores = Vec::new();
            for c in truth.chars() {
                let idx = alphabet
                    .index_of(c)
                    .ok_or_else(|| Error::Input(format!("{c:?} not in alphabet")))?;
                let other = (idx + 1 + rng.below(alphabet.len() - 1)) % alphabet.len();
                let mut frame = vec![LOW; classes];
                frame[idx] = noise * rng.normal();
                frame[other] = noise * rng.normal();
                scores.extend(frame);
                let mut gap = vec![LOW; classes];
                gap[alphabet.blank()] = 0.0;
                scores.extend(gap);
            }
            if truth.is_empty() {
                let mut gap = vec![LOW; classes];
                gap[alphabet.blank()] = 0.0;
                scores.extend(gap);
            }
            let frames = scores.len() / classes;
            Ok(DevExample {
                logits: FrameLogits::new(scores, frames, alphabet.clone())?,
                truth: truth.clone(),
            })
        })
        .collect()
}
