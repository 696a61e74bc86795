use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use linerec::ctc::LogLinearWeights;
use linerec::encoders::{EncoderConfig, SelfAttnConfig};
use linerec::image::load_line_image;
use linerec::lm::{CharNGramLM, DEFAULT_ORDER};
use linerec::mert::{mert_tune, DevExample, MertConfig};
use linerec::metrics::{bucketed_cer, EvalRecord};
use linerec::model::{DecoderConfig, ModelBundle, ModelConfig};
use linerec::pipeline::{
    bench, ctc_frame_logits, evaluate, read_manifest, recognize_line, BenchVariant, DecodeMode, RecognizeOptions,
};
use linerec::transformer::TfmrConfig;
use linerec::{Error, Result};

/// Text-line recognition toolkit.
#[derive(Parser)]
#[command(name = "linerec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transcribe one line image (PGM).
    Recognize {
        image: PathBuf,
        #[command(flatten)]
        opts: DecodeArgs,
        /// Print per-stage timings to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Recognize every line of a manifest and report CER/WPA.
    Evaluate {
        manifest: PathBuf,
        #[command(flatten)]
        opts: DecodeArgs,
        /// Per-line predictions TSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Median per-stage latency of one or more models.
    Bench {
        /// Models to time; without any, a random sa4/ctc and sa4/transformer pair.
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long, default_value_t = 320)]
        width: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        decoder: Option<DecodeMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a character n-gram LM from a text corpus (one line per sentence).
    LmTrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORDER)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune fused-decoding weights on a dev manifest.
    Mert {
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        /// Starting weights (JSON).
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        beam_width: usize,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a model with seeded random weights.
    InitRandom {
        /// Model config JSON; defaults to four self-attention layers.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `transformer` swaps the CTC head for the Transformer decoder.
        #[arg(long)]
        decoder: Option<DecodeMode>,
        #[arg(long)]
        max_width: Option<usize>,
        #[arg(long)]
        chunk_pad: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Width-bucketed CER from a predictions TSV written by `evaluate`.
    Buckets {
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    decoder: Option<DecodeMode>,
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Log-linear weights JSON for fused decoding.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    beam_width: usize,
    #[arg(long)]
    max_width: Option<usize>,
    #[arg(long)]
    chunk_pad: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

struct Loaded {
    model: ModelBundle,
    lm: Option<CharNGramLM>,
    mode: DecodeMode,
    weights: LogLinearWeights,
    beam_width: usize,
}

impl Loaded {
    fn options(&self) -> RecognizeOptions<'_> {
        RecognizeOptions {
            mode: self.mode,
            beam_width: self.beam_width,
            lm: self.lm.as_ref(),
            weights: self.weights,
        }
    }
}

fn load_model(path: &Path, max_width: Option<usize>, chunk_pad: Option<usize>) -> Result<ModelBundle> {
    let mut model = ModelBundle::load(path)?;
    if let Some(m) = max_width {
        model.config.max_width = m;
    }
    if let Some(p) = chunk_pad {
        model.config.chunk.pad_px = p;
    }
    model.config.validate()?;
    Ok(model)
}

fn load_weights(path: &Path) -> Result<LogLinearWeights> {
    LogLinearWeights::from_json(&std::fs::read_to_string(path)?)
}

fn load_decode(args: &DecodeArgs) -> Result<Loaded> {
    let model = load_model(&args.model, args.max_width, args.chunk_pad)?;
    let mode = args.decoder.unwrap_or_else(|| DecodeMode::default_for(&model));
    Ok(Loaded {
        lm: args.lm.as_deref().map(CharNGramLM::load).transpose()?,
        weights: match &args.weights {
            Some(p) => load_weights(p)?,
            None => LogLinearWeights::default(),
        },
        model,
        mode,
        beam_width: args.beam_width,
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Parameter(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Recognize { image, opts, timing } => {
            let loaded = load_decode(&opts)?;
            let img = load_line_image(&image)?;
            let r = pool(opts.threads)?.install(|| recognize_line(&img, &loaded.model, &loaded.options()))?;
            println!("{}", r.text);
            if timing {
                let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
                eprintln!(
                    "backbone {:.2} ms, encoder {:.2} ms, decoder {:.2} ms, {} frames",
                    ms(r.timing.backbone),
                    ms(r.timing.encoder),
                    ms(r.timing.decoder),
                    r.frames
                );
            }
        }
        Command::Evaluate { manifest, opts, out } => {
            let loaded = load_decode(&opts)?;
            let records = read_manifest(&manifest)?;
            let eval = evaluate(&records, &loaded.model, &loaded.options(), opts.threads.unwrap_or(0))?;
            if let Some(p) = out {
                std::fs::write(p, eval.to_tsv())?;
            }
            eprintln!("{}", eval.report.summary());
            print!("{}", eval.report.to_csv());
        }
        Command::Bench {
            model,
            width,
            reps,
            seed,
            decoder,
            out,
        } => {
            let models: Vec<ModelBundle> = if model.is_empty() {
                let enc = EncoderConfig::SelfAttention(SelfAttnConfig::new(4));
                vec![
                    ModelBundle::init_random(ModelConfig::new(enc.clone(), DecoderConfig::Ctc), seed)?,
                    ModelBundle::init_random(
                        ModelConfig::new(enc, DecoderConfig::Transformer(TfmrConfig::default())),
                        seed,
                    )?,
                ]
            } else {
                model.iter().map(|p| ModelBundle::load(p)).collect::<Result<_>>()?
            };
            let variants: Vec<BenchVariant> = models
                .iter()
                .map(|m| {
                    let mode = match decoder {
                        Some(d) if m.is_ctc() && d != DecodeMode::Transformer => d,
                        _ => DecodeMode::default_for(m),
                    };
                    BenchVariant::new(m, RecognizeOptions::new(mode))
                })
                .collect();
            let table = bench(&variants, width, reps, seed)?;
            write_or_print(out.as_deref(), &table.to_csv())?;
        }
        Command::LmTrain { input, order, out } => {
            let text = std::fs::read_to_string(&input)?;
            let lines: Vec<&str> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
            let lm = CharNGramLM::train(&lines, order)?;
            lm.save(&out)?;
            eprintln!("trained order-{order} LM on {} characters", lm.total());
        }
        Command::Mert {
            manifest,
            model,
            lm,
            weights,
            beam_width,
            threads,
            out,
        } => {
            let model = load_model(&model, None, None)?;
            let lm = CharNGramLM::load(&lm)?;
            let init = match weights {
                Some(p) => load_weights(&p)?,
                None => LogLinearWeights::default(),
            };
            let records = read_manifest(&manifest)?;
            let cfg = MertConfig {
                beam_width,
                ..Default::default()
            };
            let report = pool(threads)?.install(|| -> Result<_> {
                let dev = records
                    .par_iter()
                    .map(|r| {
                        let img = load_line_image(&r.path)?;
                        let (logits, _) = ctc_frame_logits(&img.tensor, &model)?;
                        Ok(DevExample {
                            logits,
                            truth: r.truth.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                mert_tune(&dev, &lm, &init, &cfg)
            })?;
            eprintln!(
                "dev CER {:.4} -> {:.4} after {} rounds",
                report.before_cer, report.after_cer, report.rounds
            );
            write_or_print(out.as_deref(), &(report.weights.to_json() + "\n"))?;
        }
        Command::InitRandom {
            config,
            decoder,
            max_width,
            chunk_pad,
            seed,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => ModelConfig::from_json(&std::fs::read_to_string(p)?)?,
                None => ModelConfig::default_ctc(),
            };
            if decoder == Some(DecodeMode::Transformer) {
                cfg.decoder = DecoderConfig::Transformer(TfmrConfig::default());
            }
            if let Some(m) = max_width {
                cfg.max_width = m;
            }
            if let Some(p) = chunk_pad {
                cfg.chunk.pad_px = p;
            }
            let bundle = ModelBundle::init_random(cfg, seed)?;
            bundle.save(&out)?;
            eprintln!(
                "{}: {} tensors, {} parameters",
                bundle.config.label(),
                bundle.weights.len(),
                bundle.weights.numel()
            );
        }
        Command::Buckets { predictions, out } => {
            let text = std::fs::read_to_string(&predictions)?;
            let records = parse_predictions(&text)?;
            let report = bucketed_cer(&records)?;
            eprintln!("{}", report.summary());
            write_or_print(out.as_deref(), &report.to_csv())?;
        }
    }
    Ok(())
}

/// Reads the `path width_px truth prediction status` TSV `evaluate` writes.
fn parse_predictions(text: &str) -> Result<Vec<EvalRecord>> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line.starts_with("path\t") || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::Input(format!("predictions line {}: expected 5 fields", n + 1)));
        }
        let width_px = f[1]
            .parse()
            .map_err(|_| Error::Input(format!("predictions line {}: bad width {:?}", n + 1, f[1])))?;
        records.push(EvalRecord {
            prediction: f[3].to_string(),
            truth: f[2].to_string(),
            width_px,
            failed: f[4] != "ok",
        });
    }
    Ok(records)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
