//! Autoregressive Transformer decoding with a key/value cache.

use linerec::alphabet::Alphabet;
use linerec::tensor::{rng_uniform, Rng};
use linerec::transformer::{GenerationConfig, TfmrDecoderParams, TfmrShape};
use linerec::weights::Params;

fn main() -> linerec::Result<()> {
    let alphabet = Alphabet::new("abcdefgh ")?;
    let shape = TfmrShape {
        alphabet_len: alphabet.len(),
        enc_dim: 256,
        max_positions: 32,
    };
    let mut rng = Rng::new(8);
    let dec = TfmrDecoderParams::random(&shape, &mut rng);
    let encoded = rng_uniform(&mut rng, &[256, 256], -1.0, 1.0)?;

    let g = GenerationConfig::for_shape(&shape);
    let ids = dec.generate_ids(&encoded, &g)?;
    println!("generated {} tokens: {:?}", ids.len(), dec.greedy_generate(&encoded, &alphabet, &g)?);

    // the cached path and a full recomputation agree exactly
    let mut tokens = vec![g.bos];
    tokens.extend(ids.iter().take(5));
    let mut state = dec.start(&encoded)?;
    for (i, &tok) in tokens.iter().enumerate() {
        let cached = state.feed(&[tok])?.logits.row(0).to_vec();
        let full = dec.decoder_step(&tokens[..=i], &encoded)?;
        println!("step {i}: cached == uncached: {}", cached == full);
    }
    Ok(())
}
