//! Acceptance checks. One PASS/FAIL line per criterion; exits non-zero if
//! any fails.

use std::collections::HashMap;
use std::process::Command;
use std::time::{Duration, Instant};

use linerec::alphabet::Alphabet;
use linerec::backbone::{BackboneConfig, BackboneParams};
use linerec::chunking::{merge_valid, pad_image, plan_chunks, split, PaddingPolicy, DEFAULT_PAD};
use linerec::ctc::{decode_fused, greedy_decode, prefix_beam_search, FrameLogits, LogLinearWeights};
use linerec::encoders::self_attention::{HEADS, HIDDEN};
use linerec::encoders::{EncoderConfig, Positional, SelfAttnConfig, SelfAttnLayerParams};
use linerec::image::GrayImage;
use linerec::lm::CharNGramLM;
use linerec::mert::{dev_error, mert_tune, planted_dev_set, MertConfig};
use linerec::metrics::{bucketed_cer, char_distance, levenshtein, EvalRecord};
use linerec::model::{DecoderConfig, ModelBundle, ModelConfig};
use linerec::pipeline::{bench, BenchVariant, DecodeMode, RecognizeOptions};
use linerec::tensor::{rng_uniform, Rng, Tensor};
use linerec::transformer::{TfmrConfig, TfmrDecoderParams, TfmrShape};
use linerec::weights::Params;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, took: Duration) -> bool {
    took < limit
}

// 1 ------------------------------------------------------------------------

/// Collapse repeats, then drop blanks (index `blank`).
fn collapse_path(path: &[usize], blank: usize, symbols: &[char]) -> String {
    let mut out = String::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(symbols[s]);
        }
        prev = Some(s);
    }
    out
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Sums probability over all `(A+1)^T` paths per collapsed labeling.
fn enumerate_labelings(probs: &[Vec<f64>], symbols: &[char]) -> HashMap<String, f64> {
    let classes = symbols.len() + 1;
    let t = probs.len();
    let mut totals = HashMap::new();
    let mut path = vec![0usize; t];
    for code in 0..classes.pow(t as u32) {
        let mut c = code;
        let mut p = 1.0;
        for (i, slot) in path.iter_mut().enumerate() {
            *slot = c % classes;
            c /= classes;
            p *= probs[i][*slot];
        }
        *totals.entry(collapse_path(&path, symbols.len(), symbols)).or_insert(0.0) += p;
    }
    totals
}

fn ctc_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut matched = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = 1 + rng.below(6);
        let a = 1 + rng.below(3);
        let symbols: Vec<char> = "abc".chars().take(a).collect();
        let scores: Vec<f64> = (0..t * (a + 1)).map(|_| rng.uniform_f64(-3.0, 3.0)).collect();
        let probs: Vec<Vec<f64>> = scores.chunks(a + 1).map(softmax).collect();
        let totals = enumerate_labelings(&probs, &symbols);
        let (best, p) = totals
            .iter()
            .max_by(|x, y| x.1.total_cmp(y.1).then_with(|| y.0.cmp(x.0)))
            .map(|(s, p)| (s.clone(), *p))
            .unwrap();
        let alphabet = Alphabet::new(&symbols.iter().collect::<String>()).unwrap();
        let logits = FrameLogits::new(scores, t, alphabet).unwrap();
        let beam = prefix_beam_search(&logits, usize::MAX, None).unwrap();
        if beam[0].0 == best {
            matched += 1;
        }
        worst = worst.max((beam[0].1 - p.ln()).abs());
    }
    let took = start.elapsed();
    check(
        matched == 100 && worst <= 1e-9 && within(Duration::from_secs(10), took),
        format!("argmax {matched}/100, max |Δ log P| {worst:.2e} (tol 1e-9), {took:.2?} (limit 10s)"),
    )
}

// 2 ------------------------------------------------------------------------

fn greedy_vs_marginal() -> Outcome {
    let logits = FrameLogits::from_probs(&[vec![0.4, 0.6], vec![0.4, 0.6]], Alphabet::new("a").unwrap()).unwrap();
    let greedy = greedy_decode(&logits);
    let beam = prefix_beam_search(&logits, 8, None).unwrap();
    let p = beam[0].1.exp();
    check(
        greedy.is_empty() && beam[0].0 == "a" && (p - 0.64).abs() <= 1e-12,
        format!("greedy {greedy:?}, beam {:?} with P = {p:.15} (want 0.64 ± 1e-12)", beam[0].0),
    )
}

// 3 ------------------------------------------------------------------------

fn chunk_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = BackboneConfig::default();
    let bb = BackboneParams::random(&cfg, &mut Rng::new(31));
    let radius = bb.receptive_field_radius();
    let policy = PaddingPolicy::default();
    let mut frames = 0;
    let mut good = 0;
    let mut worst = 0.0f32;
    for (i, w) in [600usize, 1000, 1300].into_iter().enumerate() {
        let img = rng_uniform(&mut Rng::new(40 + i as u64), &[40, w, 1], -1.0, 1.0).unwrap();
        let plan = plan_chunks(w, DEFAULT_PAD).unwrap();
        let feats: Vec<Tensor> = split(&img, &plan, policy).unwrap().iter().map(|c| bb.forward(c).unwrap()).collect();
        let merged = merge_valid(&feats, &plan).unwrap();
        // whole line with the same border pixels the edge chunks read
        let full = bb.forward(&pad_image(&img, DEFAULT_PAD, DEFAULT_PAD, policy).unwrap()).unwrap();
        let full = full.slice_rows(DEFAULT_PAD / 4, DEFAULT_PAD / 4 + w / 4).unwrap();
        for f in 0..w / 4 {
            let scale = full.row(f).iter().fold(1.0f32, |m, v| m.max(v.abs()));
            let diff = merged.row(f).iter().zip(full.row(f)).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / scale);
            frames += 1;
            if diff <= 1e-5 * scale {
                good += 1;
            }
        }
    }
    let took = start.elapsed();
    check(
        radius <= DEFAULT_PAD && good == frames && within(Duration::from_secs(30), took),
        format!(
            "{good}/{frames} frames within 1e-5 relative (worst {worst:.2e}), radius {radius} <= P {DEFAULT_PAD}, {took:.2?} (limit 30s)"
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn frame_bookkeeping() -> Outcome {
    let mut rng = Rng::new(4);
    let mut bad = 0;
    for _ in 0..1000 {
        let w = 4 * (1 + rng.below(5000));
        let plan = plan_chunks(w, DEFAULT_PAD).unwrap();
        let sum: usize = plan.chunks.iter().map(|c| c.valid_frames.len()).sum();
        if sum != w / 4 || plan.total_frames != w / 4 {
            bad += 1;
        }
    }
    check(bad == 0, format!("{} of 1000 widths exact", 1000 - bad))
}

// 5 ------------------------------------------------------------------------

/// One pre-norm self-attention layer in f64 loops, one head at a time.
fn naive_self_attention(p: &SelfAttnLayerParams, x: &Tensor) -> Vec<Vec<f64>> {
    let n = x.rows();
    let d = HIDDEN;
    let at = |t: &Tensor, r: usize, c: usize| t.data()[r * t.shape()[1] + c] as f64;
    let norm = |rows: &[Vec<f64>], g: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mean = r.iter().sum::<f64>() / d as f64;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                (0..d)
                    .map(|c| (r[c] - mean) / (var + 1e-6).sqrt() * g.data()[c] as f64 + b.data()[c] as f64)
                    .collect()
            })
            .collect()
    };
    let matmul = |rows: &[Vec<f64>], m: &Tensor| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                (0..m.shape()[1])
                    .map(|c| {
                        let mut s = 0.0;
                        for (k, v) in r.iter().enumerate() {
                            s += v * at(m, k, c);
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    };
    let xs: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().map(|&v| v as f64).collect()).collect();
    let xn = norm(&xs, &p.ln1_gain, &p.ln1_bias);
    let q = matmul(&xn, &p.wq);
    let k = matmul(&xn, &p.wk);
    let v = matmul(&xn, &p.wv);
    let hd = d / HEADS;
    let mut heads_out = vec![vec![0.0; d]; n];
    for h in 0..HEADS {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let weights = softmax(&scores);
            for c in cols.clone() {
                heads_out[i][c] = (0..n).map(|j| weights[j] * v[j][c]).sum();
            }
        }
    }
    let o = matmul(&heads_out, &p.wo);
    let h1: Vec<Vec<f64>> = (0..n).map(|i| (0..d).map(|c| xs[i][c] + o[i][c]).collect()).collect();
    let hn = norm(&h1, &p.ln2_gain, &p.ln2_bias);
    let inner: Vec<Vec<f64>> = matmul(&hn, &p.ffn1_w)
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(c, v)| (v + p.ffn1_b.data()[c] as f64).max(0.0)).collect())
        .collect();
    let f = matmul(&inner, &p.ffn2_w);
    (0..n)
        .map(|i| (0..d).map(|c| h1[i][c] + f[i][c] + p.ffn2_b.data()[c] as f64).collect())
        .collect()
}

fn self_attention_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let p = SelfAttnLayerParams::random(&mut Rng::new(500 + trial));
        let x = rng_uniform(&mut Rng::new(600 + trial), &[4, HIDDEN], -1.0, 1.0).unwrap();
        let y = p.forward(&x, Positional::None).unwrap();
        let want = naive_self_attention(&p, &x);
        for (i, row) in want.iter().enumerate() {
            for (c, w) in row.iter().enumerate() {
                worst = worst.max((y.row(i)[c] as f64 - w).abs());
            }
        }
    }
    check(worst <= 1e-5, format!("10 trials, max |Δ| {worst:.2e} (tol 1e-5)"))
}

// 6 ------------------------------------------------------------------------

fn decoder_causality() -> Outcome {
    let mut rng = Rng::new(66);
    let mut identical = 0;
    for _ in 0..50 {
        let shape = TfmrShape {
            alphabet_len: 2 + rng.below(6),
            enc_dim: 16,
            max_positions: 16,
        };
        let dec = TfmrDecoderParams::random(&shape, &mut rng);
        let frames = 1 + rng.below(12);
        let enc = rng_uniform(&mut rng, &[frames, 16], -1.0, 1.0).unwrap();
        let len = 2 + rng.below(10);
        let mut tokens: Vec<usize> = (0..len).map(|_| rng.below(shape.vocab())).collect();
        tokens[0] = shape.bos();
        let cut = rng.below(len - 1);
        let before = dec.forward(&tokens, &enc).unwrap().logits;
        for t in &mut tokens[cut + 1..] {
            *t = (*t + 1 + rng.below(shape.vocab() - 1)) % shape.vocab();
        }
        let after = dec.forward(&tokens, &enc).unwrap().logits;
        if (0..=cut).all(|i| before.row(i) == after.row(i)) {
            identical += 1;
        }
    }
    check(identical == 50, format!("{identical}/50 trials bit-identical"))
}

// 7 ------------------------------------------------------------------------

fn lm_hand_counts() -> Outcome {
    let lm = CharNGramLM::train(&["abab"], 2).unwrap();
    let after_a = lm.advance(&lm.initial_state(), 'a');
    let s_b_a = lm.score(&after_a, 'b');
    let s_a = lm.unigram('a');
    let unseen = lm.score(&after_a, 'z');
    let want_unseen = (0.4f64 * 1e-7).ln();
    let doubled = CharNGramLM::train(&["abab", "abab"], 2).unwrap();
    let probes = ["ab", "ba", "bb", "aab", "zz", "abz", "babab"];
    let same = probes.iter().all(|p| doubled.sequence_logscore(p) == lm.sequence_logscore(p));
    check(
        s_b_a == 0.0 && s_a == 0.5 && unseen == want_unseen && same && lm.count("ab") == 2 && lm.count("ba") == 1,
        format!(
            "log S(b|a) = {s_b_a}, S(a) = {s_a}, unseen {unseen:.6} (want ln 4e-8 = {want_unseen:.6}), duplication invariant: {same}"
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn fused_reduction() -> Outcome {
    let lm = CharNGramLM::train(&["abc cab", "bca abc", "cc ba"], 3).unwrap();
    let alphabet = Alphabet::new("abc ").unwrap();
    let mut rng = Rng::new(88);
    let mut equal = 0;
    for _ in 0..50 {
        let t = 3 + rng.below(12);
        let scores: Vec<f64> = (0..t * 5).map(|_| rng.uniform_f64(-4.0, 4.0)).collect();
        let logits = FrameLogits::new(scores, t, alphabet.clone()).unwrap();
        let plain = prefix_beam_search(&logits, 8, None).unwrap().remove(0).0;
        let fused = decode_fused(&logits, &lm, &LogLinearWeights::default(), 8).unwrap();
        if plain == fused {
            equal += 1;
        }
    }
    check(equal == 50, format!("{equal}/50 identical strings"))
}

// 9 ------------------------------------------------------------------------

fn mert_planted() -> Outcome {
    let truths: Vec<String> = [
        "the cat sat on the mat",
        "a dog ran to the park",
        "we walked home slowly",
        "it rained all day long",
        "she read a good book",
        "he drank warm tea",
        "birds sing at dawn",
        "the sun set late",
        "my bike is red",
        "cold wind blew hard",
        "fish swim in ponds",
        "they sold old maps",
        "snow fell at night",
        "a kid drew a tree",
        "we ate fresh bread",
        "the bus was full",
        "lamps glow softly",
        "frogs jump high",
        "clocks tick on",
        "waves hit rocks",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let lm = CharNGramLM::train(&truths, 5).unwrap();
    let alphabet = Alphabet::new(&lm.alphabet().into_iter().collect::<String>()).unwrap();
    let dev = planted_dev_set(&truths, &alphabet, 1.0, &mut Rng::new(99)).unwrap();
    let cfg = MertConfig::default();
    let init = LogLinearWeights::default();

    // best CER reachable by moving any single weight along its grid
    let base = init.to_array();
    let mut oracle = dev_error(&dev, &lm, &init, cfg.beam_width).unwrap();
    for &k in &cfg.tunable {
        for v in cfg.grid(base[k]) {
            let mut w = base;
            w[k] = v;
            oracle = oracle.min(dev_error(&dev, &lm, &LogLinearWeights::from_array(w), cfg.beam_width).unwrap());
        }
    }
    let start = Instant::now();
    let rep = mert_tune(&dev, &lm, &init, &cfg).unwrap();
    let took = start.elapsed();
    check(
        rep.after_cer <= rep.before_cer && rep.after_cer <= oracle + 1e-9 && within(Duration::from_secs(60), took),
        format!(
            "CER {:.4} -> {:.4}, single-move grid oracle {:.4} (tol 1e-9), λ_lm = {:.3}, {} rounds, tuning {took:.2?} (limit 60s)",
            rep.before_cer, rep.after_cer, oracle, rep.weights.lm, rep.rounds
        ),
    )
}

// 10 -----------------------------------------------------------------------

fn memo_distance(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        memo_distance(&a[1..], &b[1..], memo)
    } else {
        1 + memo_distance(&a[1..], b, memo)
            .min(memo_distance(a, &b[1..], memo))
            .min(memo_distance(&a[1..], &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn random_word(rng: &mut Rng, max: usize) -> String {
    (0..rng.below(max + 1)).map(|_| ['a', 'b', 'c', 'd', 'e'][rng.below(5)]).collect()
}

fn metrics_oracle() -> Outcome {
    let mut rng = Rng::new(10);
    let mut agree = 0;
    for _ in 0..200 {
        let a: Vec<char> = random_word(&mut rng, 12).chars().collect();
        let b: Vec<char> = random_word(&mut rng, 12).chars().collect();
        if levenshtein(&a, &b) == memo_distance(&a, &b, &mut HashMap::new()) {
            agree += 1;
        }
    }
    let kitten = char_distance("kitten", "sitting");
    let mut axioms = 0;
    for _ in 0..200 {
        let (a, b, c) = (random_word(&mut rng, 10), random_word(&mut rng, 10), random_word(&mut rng, 10));
        let d = char_distance;
        if d(&a, &a) == 0
            && (d(&a, &b) == 0) == (a == b)
            && d(&a, &b) == d(&b, &a)
            && d(&a, &c) <= d(&a, &b) + d(&b, &c)
        {
            axioms += 1;
        }
    }
    check(
        agree == 200 && kitten == 3 && axioms == 200,
        format!("oracle agreement {agree}/200, kitten/sitting = {kitten}, axioms {axioms}/200"),
    )
}

// 11 -----------------------------------------------------------------------

fn bucket_identity() -> Outcome {
    let mut rng = Rng::new(11);
    let mut exact = 0;
    for _ in 0..200 {
        let records: Vec<EvalRecord> = (0..1 + rng.below(40))
            .map(|_| EvalRecord::new(random_word(&mut rng, 15), random_word(&mut rng, 15), 1 + rng.below(1500)))
            .collect();
        let rep = bucketed_cer(&records).unwrap();
        // Σ_b n_b · (d_b / n_b) / N reduces to Σ_b d_b / N; check it in integers
        let d: usize = rep.buckets.iter().map(|b| b.distance).sum();
        let n: usize = rep.buckets.iter().map(|b| b.truth_len).sum();
        let per_bucket = rep.buckets.iter().all(|b| b.cer == b.distance as f64 / b.truth_len as f64);
        if d == rep.distance && n == rep.truth_len && per_bucket && rep.cer == d as f64 / n as f64 {
            exact += 1;
        }
    }
    check(exact == 200, format!("{exact}/200 random reports exact"))
}

// 12 -----------------------------------------------------------------------

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    GrayImage::noise(320, 40, 12).save_pgm(d.join("line.pgm")).map_err(|e| e.to_string())?;
    let run = |args: &[&str]| -> Result<(String, Duration), String> {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_linerec"))
            .args(args)
            .current_dir(d)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(String::from_utf8_lossy(&out.stderr).into_owned());
        }
        Ok((String::from_utf8_lossy(&out.stdout).into_owned(), start.elapsed()))
    };
    run(&["init-random", "--seed", "12", "--out", "m.tlrw"])?;
    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for threads in ["1", "1", "1", "1", "1", "4"] {
        let (text, took) = run(&["recognize", "line.pgm", "--model", "m.tlrw", "--threads", threads])?;
        slowest = slowest.max(took);
        outputs.push(text);
    }
    let same = outputs.iter().all(|o| *o == outputs[0]);
    check(
        same && !outputs[0].is_empty() && within(Duration::from_secs(5), slowest),
        format!(
            "6 runs (threads 1 ×5, 4 ×1) identical: {same}, output {:?}, slowest {slowest:.2?} (limit 5s)",
            outputs[0].trim_end()
        ),
    )
}

// 13 -----------------------------------------------------------------------

fn bench_harness() -> Outcome {
    let enc = EncoderConfig::SelfAttention(SelfAttnConfig::new(4));
    let ctc = ModelBundle::init_random(ModelConfig::new(enc.clone(), DecoderConfig::Ctc), 13).unwrap();
    let tfmr = ModelBundle::init_random(ModelConfig::new(enc, DecoderConfig::Transformer(TfmrConfig::default())), 13)
        .unwrap();
    let variants = [
        BenchVariant::new(&ctc, RecognizeOptions::new(DecodeMode::Greedy)),
        BenchVariant::new(&tfmr, RecognizeOptions::new(DecodeMode::Transformer)),
    ];
    let table = bench(&variants, 320, 3, 13).map_err(|e| e.to_string())?;
    let csv = table.to_csv();
    for line in csv.lines() {
        println!("        {line}");
    }
    let (c, t) = (&table.rows[0], &table.rows[1]);
    let ratio = t.median.decoder.as_secs_f64() / c.median.decoder.as_secs_f64();
    check(
        table.rows.len() == 2
            && c.variant == "sa4/ctc-greedy"
            && t.variant == "sa4/transformer"
            && c.median.decoder < t.median.decoder,
        format!(
            "decoder stage {:.3} ms (CTC greedy) vs {:.3} ms (Transformer), ratio {ratio:.0}× on this machine",
            c.median.decoder.as_secs_f64() * 1e3,
            t.median.decoder.as_secs_f64() * 1e3
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("ctc-oracle-equivalence", ctc_oracle),
        ("greedy-vs-marginal", greedy_vs_marginal),
        ("chunk-backbone-equivalence", chunk_equivalence),
        ("frame-bookkeeping", frame_bookkeeping),
        ("self-attention-oracle", self_attention_oracle),
        ("decoder-causality", decoder_causality),
        ("lm-hand-counts", lm_hand_counts),
        ("fused-decode-reduction", fused_reduction),
        ("mert-planted-optimum", mert_planted),
        ("metrics-oracle", metrics_oracle),
        ("bucket-identity", bucket_identity),
        ("end-to-end-determinism", end_to_end),
        ("bench-harness", bench_harness),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{:.2?}]", i + 1, start.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
