//! Tuning the fused-decoding weights by grid coordinate descent on a
//! synthetic dev set.

use linerec::alphabet::Alphabet;
use linerec::ctc::LogLinearWeights;
use linerec::lm::CharNGramLM;
use linerec::mert::{mert_tune, planted_dev_set, MertConfig};
use linerec::tensor::Rng;

fn main() -> linerec::Result<()> {
    let corpus: Vec<String> = [
        "the cat sat on the mat",
        "a dog ran in the park",
        "we went home early",
        "it rained all day",
        "she read a long book",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let lm = CharNGramLM::train(&corpus, 5)?;
    let alphabet = Alphabet::new(&lm.alphabet().into_iter().collect::<String>())?;
    let dev = planted_dev_set(&corpus, &alphabet, 1.0, &mut Rng::new(9))?;

    let report = mert_tune(&dev, &lm, &LogLinearWeights::default(), &MertConfig::default())?;
    println!("dev CER before {:.4}, after {:.4}", report.before_cer, report.after_cer);
    println!("per-round CER: {:?}", report.trajectory);
    for (name, v) in LogLinearWeights::NAMES.iter().zip(report.weights.to_array()) {
        println!("  λ_{name:<8} {v:.4}");
    }
    Ok(())
}
