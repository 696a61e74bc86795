//! Evaluate a model on a small manifest written to a temporary directory.

use linerec::image::GrayImage;
use linerec::model::{ModelBundle, ModelConfig};
use linerec::pipeline::{evaluate, read_manifest, DecodeMode, RecognizeOptions};

fn main() -> linerec::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut manifest = String::new();
    for (i, (w, truth)) in [(200, "short"), (480, "a bit longer line"), (900, "a long line of text here")]
        .into_iter()
        .enumerate()
    {
        let name = format!("line{i}.pgm");
        GrayImage::noise(w, 40, i as u64).save_pgm(dir.path().join(&name))?;
        manifest.push_str(&format!("{name}\t{truth}\n"));
    }
    manifest.push_str("absent.pgm\tnever read\n");
    let path = dir.path().join("dev.tsv");
    std::fs::write(&path, manifest)?;

    let model = ModelBundle::init_random(ModelConfig::default_ctc(), 1)?;
    let records = read_manifest(&path)?;
    let eval = evaluate(&records, &model, &RecognizeOptions::new(DecodeMode::Greedy), 0)?;
    println!("{}\n", eval.report.summary());
    print!("{}\n{}", eval.report.to_csv(), eval.to_tsv());
    Ok(())
}
