//! Recognize a synthetic line with a randomly initialized model.
//!
//! Pass a PGM path to recognize that instead. Random weights give
//! gibberish, but the output is deterministic for a given seed.

use linerec::image::{load_line_image, GrayImage, LineImage};
use linerec::model::{ModelBundle, ModelConfig};
use linerec::pipeline::{recognize_line, DecodeMode, RecognizeOptions};

fn main() -> linerec::Result<()> {
    let img = match std::env::args().nth(1) {
        Some(path) => load_line_image(path)?,
        None => LineImage::from_gray(&GrayImage::noise(640, 80, 1))?,
    };
    println!("line: 40×{} (content {} px)", img.width(), img.content_width);

    let model = ModelBundle::init_random(ModelConfig::default_ctc(), 0)?;
    for mode in [DecodeMode::Greedy, DecodeMode::Beam] {
        let r = recognize_line(&img, &model, &RecognizeOptions::new(mode))?;
        println!(
            "{mode:>6}: {:?}\n        {} frames, backbone {:?}, encoder {:?}, decoder {:?}",
            r.text, r.frames, r.timing.backbone, r.timing.encoder, r.timing.decoder
        );
    }
    Ok(())
}
