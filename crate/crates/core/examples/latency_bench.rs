//! Per-stage latency of a CTC and a Transformer model at width 320.

use linerec::encoders::{EncoderConfig, SelfAttnConfig};
use linerec::model::{DecoderConfig, ModelBundle, ModelConfig};
use linerec::pipeline::{bench, BenchVariant, DecodeMode, RecognizeOptions};
use linerec::transformer::TfmrConfig;

fn main() -> linerec::Result<()> {
    let enc = EncoderConfig::SelfAttention(SelfAttnConfig::new(4));
    let ctc = ModelBundle::init_random(ModelConfig::new(enc.clone(), DecoderConfig::Ctc), 0)?;
    let tfmr = ModelBundle::init_random(ModelConfig::new(enc, DecoderConfig::Transformer(TfmrConfig::default())), 0)?;
    let variants = [
        BenchVariant::new(&ctc, RecognizeOptions::new(DecodeMode::Greedy)),
        BenchVariant::new(&ctc, RecognizeOptions::new(DecodeMode::Beam)),
        BenchVariant::new(&tfmr, RecognizeOptions::new(DecodeMode::Transformer)),
    ];
    print!("{}", bench(&variants, 320, 3, 0)?.to_csv());
    Ok(())
}
