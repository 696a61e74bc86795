//! Shallow fusion of a character n-gram LM into CTC beam search.
//!
//! Each character of the truth is confusable with one distractor; the
//! optical scores alone cannot tell them apart, the LM can.

use linerec::alphabet::Alphabet;
use linerec::ctc::{decode_fused, prefix_beam_search, LogLinearWeights};
use linerec::lm::CharNGramLM;
use linerec::mert::planted_dev_set;
use linerec::metrics::cer;
use linerec::tensor::Rng;

fn main() -> linerec::Result<()> {
    let corpus = ["a quick brown fox", "jumps over the lazy dog", "the dog sleeps"];
    let lm = CharNGramLM::train(&corpus, 5)?;
    println!(
        "LM: order {}, {} characters, log S(\"the\") = {:.3}",
        lm.order(),
        lm.total(),
        lm.sequence_logscore("the")
    );

    let alphabet = Alphabet::new(&lm.alphabet().into_iter().collect::<String>())?;
    let truths: Vec<String> = corpus.iter().map(|s| s.to_string()).collect();
    let dev = planted_dev_set(&truths, &alphabet, 1.0, &mut Rng::new(4))?;

    let fused = LogLinearWeights {
        lm: 2.0,
        new_char: -0.5,
        ..Default::default()
    };
    for ex in &dev {
        let plain = prefix_beam_search(&ex.logits, 8, None)?.remove(0).0;
        let with_lm = decode_fused(&ex.logits, &lm, &fused, 8)?;
        println!("truth  {:?}", ex.truth);
        println!("  ctc  {:?} (CER {:.3})", plain, cer(&plain, &ex.truth));
        println!("  +lm  {:?} (CER {:.3})", with_lm, cer(&with_lm, &ex.truth));
    }
    println!("weights: {}", fused.to_json());
    Ok(())
}
