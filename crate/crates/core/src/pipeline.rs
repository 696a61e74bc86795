//! End-to-end recognition, dataset evaluation and the latency bench.
//!
//! CTC models read a line in overlapping 320 px chunks and run the encoder
//! on each chunk separately; Transformer models see one fixed-width input
//! of `max_width` pixels, squeezed when the line is wider and padded
//! otherwise.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::chunking::{merge_valid, pad_image, plan_chunks, split, PaddingPolicy};
use crate::ctc::{decode_fused, greedy_decode, prefix_beam_search, FrameLogits, LogLinearWeights, DEFAULT_BEAM_WIDTH};
use crate::error::{Error, Result};
use crate::image::{load_line_image, resize_width, GrayImage, LineImage};
use crate::lm::CharNGramLM;
use crate::metrics::{bucketed_cer, EvalRecord, EvalReport};
use crate::model::{DecoderParams, ModelBundle};
use crate::tensor::Tensor;
use crate::transformer::GenerationConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam,
    Fused,
    Transformer,
}

impl DecodeMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Beam => "beam",
            Self::Fused => "fused",
            Self::Transformer => "transformer",
        }
    }

    /// The mode a model decodes with when none is requested.
    pub fn default_for(model: &ModelBundle) -> Self {
        if model.is_ctc() {
            Self::Greedy
        } else {
            Self::Transformer
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "greedy" => Self::Greedy,
            "beam" => Self::Beam,
            "fused" => Self::Fused,
            "transformer" => Self::Transformer,
            _ => return Err(Error::Parameter(format!("unknown decoder `{s}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RecognizeOptions<'a> {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub lm: Option<&'a CharNGramLM>,
    pub weights: LogLinearWeights,
}

impl RecognizeOptions<'_> {
    pub fn new(mode: DecodeMode) -> Self {
        Self {
            mode,
            beam_width: DEFAULT_BEAM_WIDTH,
            lm: None,
            weights: LogLinearWeights::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timing {
    pub backbone: Duration,
    pub encoder: Duration,
    /// Logits head plus decoding.
    pub decoder: Duration,
}

impl Timing {
    pub fn total(&self) -> Duration {
        self.backbone + self.encoder + self.decoder
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recognition {
    pub text: String,
    pub timing: Timing,
    /// Encoder frames the decoder saw.
    pub frames: usize,
}

fn check_mode(model: &ModelBundle, opts: &RecognizeOptions) -> Result<()> {
    match (model.is_ctc(), opts.mode) {
        (true, DecodeMode::Transformer) => Err(Error::Parameter("model has a CTC head, not a Transformer decoder".into())),
        (false, m) if m != DecodeMode::Transformer => {
            Err(Error::Parameter(format!("{m} decoding needs a CTC model")))
        }
        (_, DecodeMode::Fused) if opts.lm.is_none() => Err(Error::Parameter("fused decoding needs a language model".into())),
        _ => Ok(()),
    }
}

/// Per-frame class scores for a CTC model, chunk by chunk.
pub fn ctc_frame_logits(line: &Tensor, model: &ModelBundle) -> Result<(FrameLogits, Timing)> {
    let DecoderParams::Ctc(head) = &model.decoder else {
        return Err(Error::Parameter("model has no CTC head".into()));
    };
    let width = line.shape().get(1).copied().unwrap_or(0);
    let plan = plan_chunks(width, model.config.chunk.pad_px)?;
    let mut timing = Timing::default();
    let mut encoded = Vec::with_capacity(plan.len());
    for chunk in split(line, &plan, model.config.chunk.policy)? {
        let t = Instant::now();
        let frames = model.backbone.forward(&chunk)?;
        timing.backbone += t.elapsed();
        let t = Instant::now();
        encoded.push(model.encoder.encode(&frames)?);
        timing.encoder += t.elapsed();
    }
    let t = Instant::now();
    let merged = merge_valid(&encoded, &plan)?;
    let logits = FrameLogits::from_tensor(&head.logits(&merged)?, model.alphabet.clone())?;
    timing.decoder += t.elapsed();
    Ok((logits, timing))
}

/// The `[40×max_width×1]` input a Transformer model sees for `line`.
pub fn transformer_input(line: &Tensor, max_width: usize, policy: PaddingPolicy) -> Result<Tensor> {
    let width = line.shape().get(1).copied().unwrap_or(0);
    if width == 0 {
        return Err(Error::Input("line has zero width".into()));
    }
    if width > max_width {
        resize_width(line, max_width)
    } else {
        pad_image(line, 0, max_width - width, policy)
    }
}

pub fn recognize_line(img: &LineImage, model: &ModelBundle, opts: &RecognizeOptions) -> Result<Recognition> {
    check_mode(model, opts)?;
    let line = &img.tensor;
    if line.shape().get(1).copied().unwrap_or(0) == 0 {
        return Err(Error::Input("line has zero width".into()));
    }
    match &model.decoder {
        DecoderParams::Ctc(_) => {
            let (logits, mut timing) = ctc_frame_logits(line, model)?;
            let t = Instant::now();
            let text = match opts.mode {
                DecodeMode::Greedy => greedy_decode(&logits),
                DecodeMode::Beam => prefix_beam_search(&logits, opts.beam_width, None)?
                    .into_iter()
                    .next()
                    .map(|(s, _)| s)
                    .unwrap_or_default(),
                DecodeMode::Fused => decode_fused(&logits, opts.lm.expect("checked"), &opts.weights, opts.beam_width)?,
                DecodeMode::Transformer => unreachable!("checked"),
            };
            timing.decoder += t.elapsed();
            Ok(Recognition {
                text,
                timing,
                frames: logits.frames(),
            })
        }
        DecoderParams::Transformer(dec) => {
            let input = transformer_input(line, model.config.max_width, model.config.chunk.policy)?;
            let mut timing = Timing::default();
            let t = Instant::now();
            let frames = model.backbone.forward(&input)?;
            timing.backbone = t.elapsed();
            let t = Instant::now();
            let encoded = model.encoder.encode(&frames)?;
            timing.encoder = t.elapsed();
            let t = Instant::now();
            let text = dec.greedy_generate(&encoded, &model.alphabet, &GenerationConfig::for_shape(&dec.shape))?;
            timing.decoder = t.elapsed();
            Ok(Recognition {
                text,
                timing,
                frames: encoded.rows(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub truth: String,
}

/// Parses `path<TAB>transcription` lines. Relative paths are taken from
/// `base`; blank lines are skipped.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let (path, truth) = line
            .split_once('\t')
            .ok_or_else(|| Error::Input(format!("manifest line {}: expected `path<TAB>text`", n + 1)))?;
        out.push(ManifestRecord {
            path: base.join(path),
            truth: truth.to_string(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineResult {
    pub path: PathBuf,
    pub width_px: usize,
    pub truth: String,
    pub prediction: String,
    /// `ok`, or the error that stopped recognition.
    pub status: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub lines: Vec<LineResult>,
}

impl Evaluation {
    /// `path width_px truth prediction status`, tab-separated, manifest order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("path\twidth_px\ttruth\tprediction\tstatus\n");
        for l in &self.lines {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                l.path.display(),
                l.width_px,
                l.truth,
                l.prediction,
                l.status.replace(['\t', '\n'], " ")
            );
        }
        out
    }
}

fn recognize_record(rec: &ManifestRecord, model: &ModelBundle, opts: &RecognizeOptions) -> LineResult {
    let attempt = load_line_image(&rec.path).and_then(|img| {
        let r = recognize_line(&img, model, opts)?;
        Ok((img.content_width, r.text))
    });
    let (width_px, prediction, status) = match attempt {
        Ok((w, text)) => (w, text, "ok".to_string()),
        Err(e) => {
            log::error!("{}: {e}", rec.path.display());
            (0, String::new(), e.to_string())
        }
    };
    LineResult {
        path: rec.path.clone(),
        width_px,
        truth: rec.truth.clone(),
        prediction,
        status,
    }
}

/// Recognizes every record on a pool of `threads` workers (0 picks the
/// rayon default). A line that cannot be read or decoded counts as an
/// empty prediction and is flagged in the report.
pub fn evaluate(
    records: &[ManifestRecord],
    model: &ModelBundle,
    opts: &RecognizeOptions,
    threads: usize,
) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(Error::Input("manifest has no records".into()));
    }
    check_mode(model, opts)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let lines: Vec<LineResult> = pool.install(|| records.par_iter().map(|r| recognize_record(r, model, opts)).collect());
    let eval_records: Vec<EvalRecord> = lines
        .iter()
        .map(|l| EvalRecord {
            prediction: l.prediction.clone(),
            truth: l.truth.clone(),
            width_px: l.width_px,
            failed: l.status != "ok",
        })
        .collect();
    Ok(Evaluation {
        report: bucketed_cer(&eval_records)?,
        lines,
    })
}

pub struct BenchVariant<'a> {
    pub label: String,
    pub model: &'a ModelBundle,
    pub options: RecognizeOptions<'a>,
}

impl<'a> BenchVariant<'a> {
    /// Labelled `sa4/ctc-greedy`, `sa4/transformer` and so on.
    pub fn new(model: &'a ModelBundle, options: RecognizeOptions<'a>) -> Self {
        let label = if model.is_ctc() {
            format!("{}-{}", model.config.label(), options.mode)
        } else {
            model.config.label()
        };
        Self { label, model, options }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub width: usize,
    pub reps: usize,
    /// Median of each stage, taken independently.
    pub median: Timing,
    pub median_total: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,width,reps,backbone_ms,encoder_ms,decoder_ms,total_ms\n");
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.3},{:.3},{:.3},{:.3}",
                r.variant,
                r.width,
                r.reps,
                ms(r.median.backbone),
                ms(r.median.encoder),
                ms(r.median.decoder),
                ms(r.median_total)
            );
        }
        out
    }
}

fn median(mut xs: Vec<Duration>) -> Duration {
    xs.sort();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Median per-stage latency of each variant on one synthetic line of
/// `width` pixels. Every variant sees the same image.
pub fn bench(variants: &[BenchVariant], width: usize, reps: usize, seed: u64) -> Result<BenchTable> {
    if reps < 3 {
        return Err(Error::Parameter(format!("need at least 3 repetitions, got {reps}")));
    }
    if width == 0 || width % 4 != 0 {
        return Err(Error::Parameter(format!("bench width {width} must be a positive multiple of 4")));
    }
    let img = LineImage::from_gray(&GrayImage::noise(width, 40, seed))?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        // one untimed run to fault in caches
        recognize_line(&img, v.model, &v.options)?;
        let timings = (0..reps)
            .map(|_| recognize_line(&img, v.model, &v.options).map(|r| r.timing))
            .collect::<Result<Vec<_>>>()?;
        let stage = |f: fn(&Timing) -> Duration| median(timings.iter().map(f).collect());
        rows.push(BenchRow {
            variant: v.label.clone(),
            width,
            reps,
            median: Timing {
                backbone: stage(|t| t.backbone),
                encoder: stage(|t| t.encoder),
                decoder: stage(|t| t.decoder),
            },
            median_total: stage(Timing::total),
        });
    }
    Ok(BenchTable { rows })
}
