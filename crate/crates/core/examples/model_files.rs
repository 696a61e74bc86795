//! Writing, reading and inspecting `.tlrw` model bundles.

use linerec::encoders::{EncoderConfig, GrclConfig};
use linerec::model::{DecoderConfig, ModelBundle, ModelConfig};

fn main() -> linerec::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = ModelConfig::new(EncoderConfig::Grcl(GrclConfig::new(1)), DecoderConfig::Ctc);
    println!("{}", cfg.to_json());

    let model = ModelBundle::init_random(cfg, 42)?;
    let path = dir.path().join("grcl.tlrw");
    model.save(&path)?;
    let back = ModelBundle::load(&path)?;
    println!(
        "{}: {} tensors, {} parameters, {} bytes on disk, round trip exact: {}",
        back.config.label(),
        back.weights.len(),
        back.weights.numel(),
        std::fs::metadata(&path)?.len(),
        back.to_bytes() == model.to_bytes()
    );

    let bytes = model.to_bytes();
    match ModelBundle::read_from(&bytes[..bytes.len() / 2]) {
        Ok(_) => println!("truncated file loaded?!"),
        Err(e) => println!("truncated file: {e} (exit code {})", e.exit_code()),
    }
    Ok(())
}
