//! Overlapping chunks reproduce whole-line backbone features.
//!
//! Uses a shallow backbone so the whole-line pass stays quick.

use linerec::backbone::{BackboneConfig, BackboneParams};
use linerec::chunking::{merge_valid, pad_image, plan_chunks, split, PaddingPolicy, DEFAULT_PAD};
use linerec::tensor::{rng_uniform, Rng};
use linerec::weights::Params;

fn main() -> linerec::Result<()> {
    for w in [320, 600, 2000] {
        let plan = plan_chunks(w, DEFAULT_PAD)?;
        let cores: Vec<_> = plan.chunks.iter().map(|c| c.core.clone()).collect();
        println!("W={w}: {} chunks of core {} px, {} frames, cores {cores:?}", plan.len(), plan.core_px, plan.total_frames);
    }

    let cfg = BackboneConfig {
        layers: 4,
        channels: 16,
        expansion: 2,
    };
    let mut rng = Rng::new(5);
    let backbone = BackboneParams::random(&cfg, &mut rng);
    println!("\nreceptive field radius {} px, pad {DEFAULT_PAD} px", backbone.receptive_field_radius());

    let image = rng_uniform(&mut rng, &[40, 1000, 1], -1.0, 1.0)?;
    // the whole line gets the same border pixels the edge chunks read
    let policy = PaddingPolicy::EdgeReplicate;
    let whole = backbone.forward(&pad_image(&image, DEFAULT_PAD, DEFAULT_PAD, policy)?)?;
    let whole = whole.slice_rows(DEFAULT_PAD / 4, DEFAULT_PAD / 4 + 250)?;
    let plan = plan_chunks(1000, DEFAULT_PAD)?;
    let chunks = split(&image, &plan, policy)?;
    let feats = chunks.iter().map(|c| backbone.forward(c)).collect::<linerec::Result<Vec<_>>>()?;
    let merged = merge_valid(&feats, &plan)?;
    let scale = whole.data().iter().fold(0f32, |m, v| m.max(v.abs()));
    println!(
        "whole {:?}, merged {:?}, max |diff| {:.2e} against max |feature| {:.2e}",
        whole.shape(),
        merged.shape(),
        whole.max_abs_diff(&merged),
        scale
    );
    Ok(())
}
