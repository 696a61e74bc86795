//! CTC decoding: greedy best path, prefix beam search and log-linear fusion
//! with a character language model.
//!
//! All scores are natural-log probabilities merged with log-sum-exp. Costs
//! are negated scores; the fused decoder ranks hypotheses by
//!
//! ```text
//! λ_ctc·(−log P_ctc) + λ_lm·(−log S_lm) + λ_prior·(−Σ log S_unigram)
//!     + λ_new·n_new + λ_blank·n_blank + λ_repeat·n_repeat
//! ```
//!
//! where the three counts classify every frame of a path as emitting a new
//! character, a blank, or a repeat of the previous label. A prefix collects
//! many paths; its counts are taken from whichever contribution carried
//! the most probability when the paths merged. Terms with a zero weight are
//! skipped so that an infinite feature cannot poison the sum.
//!
//! Equal scores are broken toward the lexicographically smaller text.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::alphabet::Alphabet;
use crate::error::{Error, Result};
use crate::lm::{CharNGramLM, LmState};
use crate::tensor::Tensor;

pub const DEFAULT_BEAM_WIDTH: usize = 8;

/// Raw per-frame class scores; column `A` is the blank.
#[derive(Clone, Debug)]
pub struct FrameLogits {
    frames: usize,
    scores: Vec<f64>,
    alphabet: Alphabet,
}

impl FrameLogits {
    pub fn new(scores: Vec<f64>, frames: usize, alphabet: Alphabet) -> Result<Self> {
        let classes = alphabet.len() + 1;
        if frames == 0 {
            return Err(Error::Input("logits need at least one frame".into()));
        }
        if scores.len() != frames * classes {
            return Err(Error::Dimension(format!(
                "{} scores do not form {frames} frames of {classes} classes",
                scores.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame logits"));
        }
        Ok(Self { frames, scores, alphabet })
    }

    /// From a `[T×(A+1)]` tensor.
    pub fn from_tensor(t: &Tensor, alphabet: Alphabet) -> Result<Self> {
        if t.rank() != 2 || t.last_dim() != alphabet.len() + 1 {
            return Err(Error::Dimension(format!(
                "logits {:?} do not match {} classes",
                t.shape(),
                alphabet.len() + 1
            )));
        }
        Self::new(t.data().iter().map(|&v| v as f64).collect(), t.rows(), alphabet)
    }

    /// Per-frame probabilities; each row is turned into log-probabilities.
    pub fn from_probs(rows: &[Vec<f64>], alphabet: Alphabet) -> Result<Self> {
        let scores: Vec<f64> = rows.iter().flatten().map(|p| p.ln()).collect();
        Self::new(scores, rows.len(), alphabet)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.alphabet.len() + 1
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.classes();
        &self.scores[t * c..(t + 1) * c]
    }

    /// Row-wise log-softmax, flattened `[T×(A+1)]`.
    pub fn log_probs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scores.len());
        for t in 0..self.frames {
            let row = self.row(t);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        out
    }
}

/// Merges adjacent duplicates, then drops blanks.
pub fn collapse(path: &[usize], alphabet: &Alphabet) -> Result<String> {
    let blank = alphabet.blank();
    let mut out = String::new();
    let mut prev = None;
    for &label in path {
        if label > blank {
            return Err(Error::Input(format!("label {label} outside 0..={blank}")));
        }
        if prev != Some(label) && label != blank {
            out.push(alphabet.symbol(label).expect("checked range"));
        }
        prev = Some(label);
    }
    Ok(out)
}

/// Per-frame argmax, lowest index on ties.
pub fn best_path(logits: &FrameLogits) -> Vec<usize> {
    (0..logits.frames())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn greedy_decode(logits: &FrameLogits) -> String {
    collapse(&best_path(logits), logits.alphabet()).expect("argmax labels are in range")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLinearWeights {
    pub ctc: f64,
    pub lm: f64,
    pub prior: f64,
    pub new_char: f64,
    pub blank: f64,
    pub repeat: f64,
}

impl Default for LogLinearWeights {
    fn default() -> Self {
        Self::from_array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }
}

impl LogLinearWeights {
    pub const NAMES: [&'static str; 6] = ["ctc", "lm", "prior", "new_char", "blank", "repeat"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.ctc, self.lm, self.prior, self.new_char, self.blank, self.repeat]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            ctc: a[0],
            lm: a[1],
            prior: a[2],
            new_char: a[3],
            blank: a[4],
            repeat: a[5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("log-linear weights must be finite".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(s).map_err(|e| Error::Format(format!("weights: {e}")))?;
        w.validate()?;
        Ok(w)
    }
}

/// Language model plus weights attached to a beam search.
#[derive(Clone, Copy)]
pub struct Fusion<'a> {
    pub lm: &'a CharNGramLM,
    pub weights: &'a LogLinearWeights,
}

#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub prefix: Vec<usize>,
    pub text: String,
    pub log_p_blank: f64,
    pub log_p_nonblank: f64,
    pub lm_state: Option<LmState>,
    pub lm_logscore: f64,
    pub prior_logscore: f64,
    pub n_new: u32,
    pub n_blank: u32,
    pub n_repeat: u32,
    lead: f64,
}

impl Hypothesis {
    pub fn log_prob(&self) -> f64 {
        log_add(self.log_p_blank, self.log_p_nonblank)
    }

    pub fn cost(&self, w: &LogLinearWeights) -> f64 {
        let terms = [
            (w.ctc, -self.log_prob()),
            (w.lm, -self.lm_logscore),
            (w.prior, -self.prior_logscore),
            (w.new_char, self.n_new as f64),
            (w.blank, self.n_blank as f64),
            (w.repeat, self.n_repeat as f64),
        ];
        terms.iter().filter(|(l, _)| *l != 0.0).map(|(l, v)| l * v).sum()
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Clone, Copy)]
enum Step {
    Blank,
    Repeat,
    New,
}

struct Frontier {
    hyps: Vec<Hypothesis>,
    at: HashMap<Vec<usize>, usize>,
}

impl Frontier {
    fn new() -> Self {
        Self {
            hyps: Vec::new(),
            at: HashMap::new(),
        }
    }

    /// Adds `mass` to `prefix`, creating it from `make` when first seen.
    fn contribute(
        &mut self,
        prefix: Vec<usize>,
        step: Step,
        mass: f64,
        parent: &Hypothesis,
        make: impl FnOnce(Vec<usize>) -> Hypothesis,
    ) {
        let idx = match self.at.get(&prefix) {
            Some(&i) => i,
            None => {
                let mut h = make(prefix.clone());
                h.log_p_blank = f64::NEG_INFINITY;
                h.log_p_nonblank = f64::NEG_INFINITY;
                h.lead = f64::NEG_INFINITY;
                self.hyps.push(h);
                self.at.insert(prefix, self.hyps.len() - 1);
                self.hyps.len() - 1
            }
        };
        let h = &mut self.hyps[idx];
        match step {
            Step::Blank => h.log_p_blank = log_add(h.log_p_blank, mass),
            _ => h.log_p_nonblank = log_add(h.log_p_nonblank, mass),
        }
        if mass > h.lead {
            h.lead = mass;
            h.n_new = parent.n_new + matches!(step, Step::New) as u32;
            h.n_blank = parent.n_blank + matches!(step, Step::Blank) as u32;
            h.n_repeat = parent.n_repeat + matches!(step, Step::Repeat) as u32;
        }
    }
}

fn rank(hyps: &mut [Hypothesis], fusion: Option<&Fusion>) {
    match fusion {
        Some(f) => hyps.sort_by(|a, b| {
            a.cost(f.weights)
                .total_cmp(&b.cost(f.weights))
                .then_with(|| a.text.cmp(&b.text))
        }),
        None => hyps.sort_by(|a, b| b.log_prob().total_cmp(&a.log_prob()).then_with(|| a.text.cmp(&b.text))),
    }
}

/// Prefix beam search returning the surviving hypotheses, best first.
/// `beam_width == usize::MAX` keeps every prefix.
pub fn beam_search(logits: &FrameLogits, beam_width: usize, fusion: Option<&Fusion>) -> Result<Vec<Hypothesis>> {
    if beam_width < 1 {
        return Err(Error::Parameter("beam width must be at least 1".into()));
    }
    if let Some(f) = fusion {
        f.weights.validate()?;
    }
    let alphabet = logits.alphabet();
    let classes = logits.classes();
    let blank = alphabet.blank();
    let lp = logits.log_probs();

    let mut beam = vec![Hypothesis {
        prefix: Vec::new(),
        text: String::new(),
        log_p_blank: 0.0,
        log_p_nonblank: f64::NEG_INFINITY,
        lm_state: fusion.map(|f| f.lm.initial_state()),
        lm_logscore: 0.0,
        prior_logscore: 0.0,
        n_new: 0,
        n_blank: 0,
        n_repeat: 0,
        lead: 0.0,
    }];

    for t in 0..logits.frames() {
        let row = &lp[t * classes..(t + 1) * classes];
        let mut next = Frontier::new();
        for h in &beam {
            let total = h.log_prob();
            let stay = |prefix: Vec<usize>| Hypothesis { prefix, ..h.clone() };

            let mass = total + row[blank];
            if mass > f64::NEG_INFINITY {
                next.contribute(h.prefix.clone(), Step::Blank, mass, h, stay);
            }
            let last = h.prefix.last().copied();
            if let Some(l) = last {
                let mass = h.log_p_nonblank + row[l];
                if mass > f64::NEG_INFINITY {
                    next.contribute(h.prefix.clone(), Step::Repeat, mass, h, stay);
                }
            }
            for c in 0..blank {
                let base = if last == Some(c) { h.log_p_blank } else { total };
                let mass = base + row[c];
                if mass == f64::NEG_INFINITY {
                    continue;
                }
                let mut prefix = h.prefix.clone();
                prefix.push(c);
                next.contribute(prefix, Step::New, mass, h, |prefix| {
                    let ch = alphabet.symbol(c).expect("class below blank");
                    let mut text = h.text.clone();
                    text.push(ch);
                    let (lm_state, lm_logscore, prior_logscore) = match (fusion, &h.lm_state) {
                        (Some(f), Some(state)) => (
                            Some(f.lm.advance(state, ch)),
                            h.lm_logscore + f.lm.score(state, ch),
                            h.prior_logscore + f.lm.unigram(ch).ln(),
                        ),
                        _ => (None, 0.0, 0.0),
                    };
                    Hypothesis {
                        prefix,
                        text,
                        lm_state,
                        lm_logscore,
                        prior_logscore,
                        ..h.clone()
                    }
                });
            }
        }
        beam = next.hyps;
        rank(&mut beam, fusion);
        beam.truncate(beam_width);
    }
    Ok(beam)
}

/// Ranked `(text, score)`; the score is the log-probability, or the negated
/// fused cost when `fusion` is attached.
pub fn prefix_beam_search(
    logits: &FrameLogits,
    beam_width: usize,
    fusion: Option<&Fusion>,
) -> Result<Vec<(String, f64)>> {
    let hyps = beam_search(logits, beam_width, fusion)?;
    Ok(hyps
        .into_iter()
        .map(|h| {
            let score = match fusion {
                Some(f) => -h.cost(f.weights),
                None => h.log_prob(),
            };
            (h.text, score)
        })
        .collect())
}

/// Lowest-cost text under the log-linear combination.
pub fn decode_fused(
    logits: &FrameLogits,
    lm: &CharNGramLM,
    weights: &LogLinearWeights,
    beam_width: usize,
) -> Result<String> {
    if logits.alphabet().is_empty() {
        return Err(Error::Input("empty alphabet".into()));
    }
    let fusion = Fusion { lm, weights };
    let best = beam_search(logits, beam_width, Some(&fusion))?;
    Ok(best.into_iter().next().map(|h| h.text).unwrap_or_default())
}
