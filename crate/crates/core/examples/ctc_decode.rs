//! Greedy best-path decoding against prefix beam search.
//!
//! Two frames, one symbol: every frame prefers blank, yet "a" has more
//! total probability than the empty string once all its paths are summed.

use linerec::alphabet::Alphabet;
use linerec::ctc::{greedy_decode, prefix_beam_search, FrameLogits};

fn main() -> linerec::Result<()> {
    let alphabet = Alphabet::new("a")?;
    // columns: a, blank
    let logits = FrameLogits::from_probs(&[vec![0.4, 0.6], vec![0.4, 0.6]], alphabet)?;

    println!("greedy: {:?}", greedy_decode(&logits));
    for (text, logp) in prefix_beam_search(&logits, 8, None)? {
        println!("beam:   {text:?}  P = {:.4}", logp.exp());
    }

    // a longer random instance
    let alphabet = Alphabet::new("abc")?;
    let mut rng = linerec::tensor::Rng::new(11);
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|_| {
            let raw: Vec<f64> = (0..4).map(|_| rng.uniform_f64(0.0, 1.0)).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|p| p / z).collect()
        })
        .collect();
    let logits = FrameLogits::from_probs(&rows, alphabet)?;
    println!("\n12 frames over {{a,b,c}}: greedy {:?}", greedy_decode(&logits));
    for width in [1, 4, 16, usize::MAX] {
        let best = &prefix_beam_search(&logits, width, None)?[0];
        let w = if width == usize::MAX { "all".to_string() } else { width.to_string() };
        println!("  beam {w:>3}: {:?} log P = {:.4}", best.0, best.1);
    }
    Ok(())
}
