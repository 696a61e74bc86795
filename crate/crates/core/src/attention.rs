//! Scaled dot-product multi-head attention and sinusoidal position signals.

use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Tensor};

/// Number of frequencies averaged per head in the relative position bias.
const REL_BIAS_FREQS: usize = 16;

/// Fixed relative-position bias added to the pre-softmax score of query `i`
/// attending to key `j` in head `head`, with `delta = i - j`:
///
/// `b_h(δ) = mean_f cos(δ · 10000^(-(h·F + f) / (H·F)))`, `F = 16`.
///
/// Each head averages a disjoint band of frequencies, so low heads see a
/// sharply local bias and high heads a broad one. It is symmetric in `δ`,
/// equals 1 at `δ = 0`, and depends on positions only through their offset.
pub fn relative_bias(head: usize, heads: usize, delta: i64) -> f32 {
    let total = (heads * REL_BIAS_FREQS) as f64;
    let mut acc = 0.0f64;
    for f in 0..REL_BIAS_FREQS {
        let rate = 10000f64.powf(-((head * REL_BIAS_FREQS + f) as f64) / total);
        acc += (delta as f64 * rate).cos();
    }
    (acc / REL_BIAS_FREQS as f64) as f32
}

/// Absolute sinusoidal encoding for positions `offset..offset + n`:
/// even channels `sin(p / 10000^(2i/d))`, odd channels the matching `cos`.
pub fn sinusoidal_positions(n: usize, d: usize, offset: usize) -> Tensor {
    Tensor::from_fn(&[n, d], |idx| {
        let (p, c) = ((idx / d + offset) as f64, idx % d);
        let rate = 10000f64.powf(-((c / 2 * 2) as f64) / d as f64);
        if c % 2 == 0 {
            (p * rate).sin() as f32
        } else {
            (p * rate).cos() as f32
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    None,
    /// Query `i` sees keys `0..=i`.
    Causal,
}

pub struct AttentionOutput {
    /// `[nq × d]` concatenated head outputs.
    pub values: Tensor,
    /// Per head `[nq × nk]` weights, only when requested. Masked entries are 0.
    pub weights: Option<Vec<Tensor>>,
}

/// Multi-head attention of already-projected `q[nq×d]` against
/// `k[nk×d]`, `v[nk×d]`. Heads split `d` into contiguous slices; scores are
/// scaled by `1/sqrt(d/heads)`.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    mask: Mask,
    bias: Option<&dyn Fn(usize, usize, usize) -> f32>,
    keep_weights: bool,
) -> Result<AttentionOutput> {
    let (nq, d) = (q.rows(), q.last_dim());
    let nk = k.rows();
    if k.last_dim() != d || v.last_dim() != d || v.rows() != nk || heads == 0 || d % heads != 0 {
        return Err(Error::Dimension(format!(
            "attention q{:?} k{:?} v{:?} with {heads} heads",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut out = vec![0.0f32; nq * d];
    let mut weights = keep_weights.then(|| vec![vec![0.0f32; nq * nk]; heads]);
    let mut scores = vec![0.0f32; nk];

    for h in 0..heads {
        let lo = h * hd;
        for i in 0..nq {
            let visible = match mask {
                Mask::None => nk,
                Mask::Causal => (i + 1).min(nk),
            };
            let qi = &q.row(i)[lo..lo + hd];
            for (j, s) in scores[..visible].iter_mut().enumerate() {
                let kj = &k.row(j)[lo..lo + hd];
                let dot: f32 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                *s = dot * scale + bias.map_or(0.0, |b| b(h, i, j));
            }
            softmax_in_place(&mut scores[..visible]);
            let oi = &mut out[i * d + lo..i * d + lo + hd];
            for (j, &a) in scores[..visible].iter().enumerate() {
                let vj = &v.row(j)[lo..lo + hd];
                for (o, x) in oi.iter_mut().zip(vj) {
                    *o += a * x;
                }
            }
            if let Some(w) = weights.as_mut() {
                w[h][i * nk..i * nk + visible].copy_from_slice(&scores[..visible]);
            }
        }
    }

    let values = Tensor::new(vec![nq, d], out)?;
    let weights = weights
        .map(|ws| ws.into_iter().map(|w| Tensor::new(vec![nq, nk], w)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(AttentionOutput { values, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_uniform, Rng};

    #[test]
    fn singleton_attention_is_one() {
        let q = Tensor::full(&[1, 8], 0.3);
        let out = multi_head_attention(&q, &q, &q, 2, Mask::None, None, true).unwrap();
        for w in out.weights.unwrap() {
            assert_eq!(w.data(), &[1.0]);
        }
        assert_eq!(out.values, q);
    }

    #[test]
    fn causal_rows_ignore_future() {
        let mut rng = Rng::new(1);
        let q = rng_uniform(&mut rng, &[5, 8], -1.0, 1.0).unwrap();
        let k = rng_uniform(&mut rng, &[5, 8], -1.0, 1.0).unwrap();
        let v = rng_uniform(&mut rng, &[5, 8], -1.0, 1.0).unwrap();
        let out = multi_head_attention(&q, &k, &v, 2, Mask::Causal, None, true).unwrap();
        for w in out.weights.unwrap() {
            for i in 0..5 {
                let row = w.row(i);
                assert!(row[i + 1..].iter().all(|&x| x == 0.0));
                let s: f64 = row.iter().map(|&x| x as f64).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn relative_bias_shape() {
        for h in 0..4 {
            assert!((relative_bias(h, 4, 0) - 1.0).abs() < 1e-6);
            assert_eq!(relative_bias(h, 4, 7), relative_bias(h, 4, -7));
        }
        // higher heads decay more slowly
        assert!(relative_bias(3, 4, 5) > relative_bias(0, 4, 5));
    }

    #[test]
    fn sinusoid_first_position() {
        let pe = sinusoidal_positions(2, 4, 0);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.row(1)[0] - 1f32.sin()).abs() < 1e-7);
    }
}
