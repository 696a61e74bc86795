//! Character n-gram language model with stupid-backoff scoring.
//!
//! Every line is left-padded with `N - 1` [`BOS`] symbols and all character
//! n-grams of orders `1..=N` are counted. Scoring a character `c` after a
//! context uses the longest observed n-gram:
//!
//! ```text
//! S(c | ctx) = count(ctx·c) / count(ctx·*)    if count(ctx·c) > 0
//!            = α · S(c | ctx[1..])             otherwise
//! S(c)       = count(c) / total                (ε for unseen characters)
//! ```
//!
//! `count(ctx·*)` is the number of times `ctx` was followed by any
//! character, so fully observed contexts give a proper distribution.
//! Scores are returned as natural logs and are not normalized overall.
//!
//! Binary format (`.tllm`, little-endian): magic `TLLM`, `u32` version,
//! `u32` order, `f64` α, then for each order `1..=N` a `u64` entry count
//! followed by entries `(u32 len, UTF-8 context, u32 len, UTF-8 char, u64
//! count)` sorted by context then character.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{map_eof, Error, Result};

/// Context padding symbol (U+0002).
pub const BOS: char = '\u{2}';
pub const DEFAULT_ALPHA: f64 = 0.4;
pub const DEFAULT_ORDER: usize = 5;
/// Unigram score of a character never seen in training.
pub const UNSEEN_FLOOR: f64 = 1e-7;

const MAGIC: [u8; 4] = *b"TLLM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CharNGramLM {
    order: usize,
    alpha: f64,
    /// `ngrams[k-1]` maps a `k`-character string (context then target) to
    /// its count.
    ngrams: Vec<HashMap<String, u64>>,
    /// `contexts[k-1]` maps a `(k-1)`-character context to the total count
    /// of its continuations. `contexts[0][""]` is the unigram total.
    contexts: Vec<HashMap<String, u64>>,
}

/// The last `N - 1` symbols seen, `BOS`-padded at the start of a line.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LmState {
    history: Vec<char>,
}

impl LmState {
    pub fn history(&self) -> &[char] {
        &self.history
    }
}

impl CharNGramLM {
    pub fn train<S: AsRef<str>>(lines: &[S], order: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Parameter("n-gram order must be at least 1".into()));
        }
        if lines.is_empty() {
            return Err(Error::Input("language model corpus is empty".into()));
        }
        let mut ngrams = vec![HashMap::new(); order];
        for line in lines {
            let padded: Vec<char> = std::iter::repeat_n(BOS, order - 1)
                .chain(line.as_ref().chars())
                .collect();
            for pos in order - 1..padded.len() {
                for k in 1..=order {
                    let gram: String = padded[pos + 1 - k..=pos].iter().collect();
                    *ngrams[k - 1].entry(gram).or_insert(0) += 1;
                }
            }
        }
        Ok(Self::from_ngrams(order, DEFAULT_ALPHA, ngrams))
    }

    fn from_ngrams(order: usize, alpha: f64, ngrams: Vec<HashMap<String, u64>>) -> Self {
        let contexts = ngrams
            .iter()
            .map(|table| {
                let mut ctx: HashMap<String, u64> = HashMap::new();
                for (gram, &n) in table {
                    let mut g = gram.clone();
                    g.pop();
                    *ctx.entry(g).or_insert(0) += n;
                }
                ctx
            })
            .collect();
        Self {
            order,
            alpha,
            ngrams,
            contexts,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn total(&self) -> u64 {
        self.contexts[0].get("").copied().unwrap_or(0)
    }

    /// Count of an n-gram given as a string of 1..=N characters.
    pub fn count(&self, gram: &str) -> u64 {
        let k = gram.chars().count();
        if k == 0 || k > self.order {
            return 0;
        }
        self.ngrams[k - 1].get(gram).copied().unwrap_or(0)
    }

    /// Total continuations observed after `context` (length < N).
    pub fn context_count(&self, context: &str) -> u64 {
        let k = context.chars().count();
        if k >= self.order {
            return 0;
        }
        self.contexts[k].get(context).copied().unwrap_or(0)
    }

    /// Observed characters in scalar-value order.
    pub fn alphabet(&self) -> Vec<char> {
        let mut chars: Vec<char> = self.ngrams[0].keys().filter_map(|g| g.chars().next()).collect();
        chars.sort_unstable();
        chars
    }

    pub fn initial_state(&self) -> LmState {
        LmState {
            history: vec![BOS; self.order - 1],
        }
    }

    pub fn advance(&self, state: &LmState, c: char) -> LmState {
        let mut history = state.history.clone();
        if self.order > 1 {
            if history.len() == self.order - 1 {
                history.remove(0);
            }
            history.push(c);
        }
        LmState { history }
    }

    /// Stupid-backoff score of `c` after `state`, as a natural log.
    pub fn score(&self, state: &LmState, c: char) -> f64 {
        let hist = &state.history[state.history.len().saturating_sub(self.order - 1)..];
        let mut multiplier = 1.0f64;
        let mut key = String::with_capacity(4 * (hist.len() + 1));
        for start in 0..hist.len() {
            let ctx = &hist[start..];
            key.clear();
            key.extend(ctx);
            let ctx_total = self.contexts[ctx.len()].get(&key).copied().unwrap_or(0);
            key.push(c);
            let hit = self.ngrams[ctx.len()].get(&key).copied().unwrap_or(0);
            if hit > 0 {
                return (multiplier * (hit as f64 / ctx_total as f64)).ln();
            }
            multiplier *= self.alpha;
        }
        (multiplier * self.unigram(c)).ln()
    }

    /// Base-case unigram score `count(c)/total`, floored at [`UNSEEN_FLOOR`].
    pub fn unigram(&self, c: char) -> f64 {
        let mut buf = [0u8; 4];
        let n = self.ngrams[0].get(&*c.encode_utf8(&mut buf)).copied().unwrap_or(0);
        if n > 0 {
            n as f64 / self.total() as f64
        } else {
            UNSEEN_FLOOR
        }
    }

    /// Sum of per-character scores from the start-of-line state.
    pub fn sequence_logscore(&self, text: &str) -> f64 {
        self.sequence_logscore_from(&self.initial_state(), text).0
    }

    pub fn sequence_logscore_from(&self, state: &LmState, text: &str) -> (f64, LmState) {
        let mut state = state.clone();
        let mut total = 0.0;
        for c in text.chars() {
            total += self.score(&state, c);
            state = self.advance(&state, c);
        }
        (total, state)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        for table in &self.ngrams {
            let mut entries: Vec<(&String, &u64)> = table.iter().collect();
            entries.sort();
            w.write_all(&(entries.len() as u64).to_le_bytes())?;
            for (gram, &count) in entries {
                let split = gram.char_indices().last().map(|(i, _)| i).unwrap_or(0);
                let (ctx, ch) = gram.split_at(split);
                for part in [ctx, ch] {
                    w.write_all(&(part.len() as u32).to_le_bytes())?;
                    w.write_all(part.as_bytes())?;
                }
                w.write_all(&count.to_le_bytes())?;
            }
        }
        Ok(())
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
        let order = read_u32(&mut r)? as usize;
        if order == 0 || order > 64 {
            return Err(Error::Format(format!("implausible n-gram order {order}")));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8).map_err(map_eof)?;
        let alpha = f64::from_le_bytes(buf8);
        let mut ngrams = Vec::with_capacity(order);
        for k in 1..=order {
            r.read_exact(&mut buf8).map_err(map_eof)?;
            let entries = u64::from_le_bytes(buf8);
            let mut table = HashMap::new();
            for _ in 0..entries {
                let ctx = read_string(&mut r)?;
                let ch = read_string(&mut r)?;
                r.read_exact(&mut buf8).map_err(map_eof)?;
                let count = u64::from_le_bytes(buf8);
                if ctx.chars().count() != k - 1 || ch.chars().count() != 1 || count == 0 {
                    return Err(Error::Format(format!("malformed order-{k} entry {ctx:?}/{ch:?}")));
                }
                table.insert(ctx + &ch, count);
            }
            ngrams.push(table);
        }
        Ok(Self::from_ngrams(order, alpha, ngrams))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(map_eof)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("string length {len} too large")));
    }
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes).map_err(map_eof)?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
