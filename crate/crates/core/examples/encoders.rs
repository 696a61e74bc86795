//! The three sequence encoders on the same backbone frames.

use std::time::Instant;

use linerec::encoders::{random_encoder, BiLstmConfig, EncoderConfig, GrclConfig, SelfAttnConfig};
use linerec::tensor::{rng_uniform, Rng};

fn main() -> linerec::Result<()> {
    let frames = rng_uniform(&mut Rng::new(2), &[80, 64], -1.0, 1.0)?;
    let configs = [
        EncoderConfig::SelfAttention(SelfAttnConfig::new(4)),
        EncoderConfig::Grcl(GrclConfig::new(1)),
        EncoderConfig::BiLstm(BiLstmConfig::new(1)),
    ];
    for cfg in configs {
        let enc = random_encoder(&cfg, 3);
        let t = Instant::now();
        let out = enc.encode(&frames)?;
        println!("{:<6} {:?} -> {:?} in {:?}", cfg.label(), frames.shape(), out.shape(), t.elapsed());
    }
    Ok(())
}
