//! Character error rate, word accuracy and the width-bucketed report.

use linerec::metrics::{bucketed_cer, cer, char_distance, EvalRecord};

fn main() -> linerec::Result<()> {
    println!("d(kitten, sitting) = {}", char_distance("kitten", "sitting"));
    println!("CER(helo | hello) = {}", cer("helo", "hello"));

    let records = [
        EvalRecord::new("the quick brown fox", "The quick brown fox", 180),
        EvalRecord::new("jumps ovr the", "jumps over the", 150),
        EvalRecord::new("lazy dgo", "lazy dog", 90),
        EvalRecord::new("", "", 40),
    ];
    let report = bucketed_cer(&records)?;
    println!("{}", report.summary());
    print!("{}", report.to_csv());
    Ok(())
}
