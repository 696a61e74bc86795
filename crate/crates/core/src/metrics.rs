//! Character error rate, word prediction accuracy and width-bucketed CER.
//!
//! Aggregates pool edit distances and truth lengths over all records before
//! dividing. A record with an empty truth counts as length 1 in every
//! denominator, so its CER is `len(pred)`; such records are flagged.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Width of one report bucket in pixels.
pub const BUCKET_PX: usize = 100;

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

/// Levenshtein distance over Unicode scalar values.
pub fn char_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

/// Truth length used as a CER denominator.
fn denominator(truth: &str) -> usize {
    truth.chars().count().max(1)
}

pub fn cer(pred: &str, truth: &str) -> f64 {
    let (d, n) = cer_counts(pred, truth);
    d as f64 / n as f64
}

/// `(edit distance, denominator)` for pooling.
pub fn cer_counts(pred: &str, truth: &str) -> (usize, usize) {
    (char_distance(pred, truth), denominator(truth))
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalRecord {
    pub prediction: String,
    pub truth: String,
    /// Height-normalized image width.
    pub width_px: usize,
    /// The line could not be recognized; `prediction` is empty.
    pub failed: bool,
}

impl EvalRecord {
    pub fn new(prediction: impl Into<String>, truth: impl Into<String>, width_px: usize) -> Self {
        Self {
            prediction: prediction.into(),
            truth: truth.into(),
            width_px,
            failed: false,
        }
    }
}

/// Case-insensitive word accuracy `1 - WER` over whitespace tokens.
pub fn wpa(records: &[EvalRecord]) -> Result<f64> {
    let mut dist = 0usize;
    let mut total = 0usize;
    for r in records {
        let t = words(&r.truth);
        dist += levenshtein(&words(&r.prediction), &t);
        total += t.len();
    }
    if total == 0 {
        return Err(Error::Input("no truth words to score".into()));
    }
    Ok(1.0 - dist as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub start_px: usize,
    pub count: usize,
    pub distance: usize,
    pub truth_len: usize,
    pub cer: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: usize,
    pub distance: usize,
    pub truth_len: usize,
    pub cer: f64,
    /// `None` when the truths contain no words at all.
    pub wpa: Option<f64>,
    /// Non-empty buckets in increasing width order.
    pub buckets: Vec<Bucket>,
    pub empty_truths: usize,
    pub failed: usize,
}

pub fn bucketed_cer(records: &[EvalRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Input("no records to evaluate".into()));
    }
    let mut buckets: Vec<Bucket> = Vec::new();
    let (mut distance, mut truth_len) = (0, 0);
    for r in records {
        if r.width_px == 0 && !r.failed {
            return Err(Error::Input("record width must be positive".into()));
        }
        let (d, n) = cer_counts(&r.prediction, &r.truth);
        distance += d;
        truth_len += n;
        let start_px = r.width_px / BUCKET_PX * BUCKET_PX;
        let idx = match buckets.binary_search_by_key(&start_px, |b| b.start_px) {
            Ok(i) => i,
            Err(i) => {
                buckets.insert(
                    i,
                    Bucket {
                        start_px,
                        count: 0,
                        distance: 0,
                        truth_len: 0,
                        cer: 0.0,
                    },
                );
                i
            }
        };
        let b = &mut buckets[idx];
        b.count += 1;
        b.distance += d;
        b.truth_len += n;
    }
    for b in &mut buckets {
        b.cer = b.distance as f64 / b.truth_len as f64;
    }
    Ok(EvalReport {
        records: records.len(),
        distance,
        truth_len,
        cer: distance as f64 / truth_len as f64,
        wpa: wpa(records).ok(),
        buckets,
        empty_truths: records.iter().filter(|r| r.truth.is_empty()).count(),
        failed: records.iter().filter(|r| r.failed).count(),
    })
}

impl EvalReport {
    /// `bucket_start_px,count,cer` rows followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start_px,count,cer\n");
        for b in &self.buckets {
            let _ = writeln!(out, "{},{},{:.6}", b.start_px, b.count, b.cer);
        }
        let _ = writeln!(out, "total,{},{:.6}", self.records, self.cer);
        out
    }

    pub fn summary(&self) -> String {
        let wpa = self.wpa.map_or("n/a".to_string(), |w| format!("{w:.4}"));
        let mut s = format!("records={} cer={:.4} wpa={wpa}", self.records, self.cer);
        if self.empty_truths > 0 {
            let _ = write!(s, " empty_truths={}", self.empty_truths);
        }
        if self.failed > 0 {
            let _ = write!(s, " failed={}", self.failed);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use std::collections::HashMap;

    /// Textbook recursion with memoization.
    fn memo(a: &[char], b: &[char], i: usize, j: usize, seen: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = seen.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            memo(a, b, i + 1, j + 1, seen)
        } else {
            1 + memo(a, b, i + 1, j, seen)
                .min(memo(a, b, i, j + 1, seen))
                .min(memo(a, b, i + 1, j + 1, seen))
        };
        seen.insert((i, j), v);
        v
    }

    fn random_string(rng: &mut Rng, max: usize) -> Vec<char> {
        let n = rng.below(max + 1);
        (0..n).map(|_| ['a', 'b', 'c', 'd'][rng.below(4)]).collect()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(char_distance("kitten", "sitting"), 3);
        assert_eq!(char_distance("", "ab"), 2);
        assert_eq!(char_distance("ab", ""), 2);
        assert_eq!(char_distance("same", "same"), 0);
        assert_eq!(char_distance("naïve", "naive"), 1);
    }

    #[test]
    fn matches_recursive_oracle() {
        let mut rng = Rng::new(1);
        for _ in 0..200 {
            let a = random_string(&mut rng, 12);
            let b = random_string(&mut rng, 12);
            assert_eq!(levenshtein(&a, &b), memo(&a, &b, 0, 0, &mut HashMap::new()));
        }
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc"), 0.0);
        assert_eq!(cer("hello", "helo"), 0.25);
        assert_eq!(cer("aaaaaa", "a"), 5.0);
        assert_eq!(cer("", ""), 0.0);
        assert_eq!(cer("xy", ""), 2.0);
    }

    #[test]
    fn wpa_examples() {
        let r = |p: &str, t: &str| EvalRecord::new(p, t, 50);
        assert_eq!(wpa(&[r("Foo Bar", "foo bar")]).unwrap(), 1.0);
        assert_eq!(wpa(&[r("a b", "a c")]).unwrap(), 0.5);
        assert_eq!(wpa(&[r("", "one"), r("", "two")]).unwrap(), 0.0);
        assert_eq!(wpa(&[r("x y z", "w")]).unwrap(), -2.0);
        assert!(wpa(&[r("a", "  ")]).is_err());
    }

    #[test]
    fn buckets_by_hand() {
        let records = [
            EvalRecord::new("helo", "hello", 50),    // d=1, n=5
            EvalRecord::new("wrld", "world", 150),   // d=1, n=5
            EvalRecord::new("xyz!", "xyz", 199),     // d=1, n=3
        ];
        let rep = bucketed_cer(&records).unwrap();
        assert_eq!(rep.distance, 3);
        assert_eq!(rep.truth_len, 13);
        assert_eq!(rep.cer, 3.0 / 13.0);
        assert_eq!(rep.buckets.len(), 2);
        assert_eq!((rep.buckets[0].start_px, rep.buckets[0].count), (0, 1));
        assert_eq!(rep.buckets[0].cer, 0.2);
        assert_eq!((rep.buckets[1].start_px, rep.buckets[1].count), (100, 2));
        assert_eq!(rep.buckets[1].cer, 2.0 / 8.0);
        // every one of the 3 truth words is wrong
        assert_eq!(rep.wpa, Some(0.0));
        assert_eq!(
            rep.to_csv(),
            "bucket_start_px,count,cer\n0,1,0.200000\n100,2,0.250000\ntotal,3,0.230769\n"
        );

        let single = bucketed_cer(&records[..1]).unwrap();
        assert_eq!(single.cer, cer("helo", "hello"));
        assert_eq!(single.buckets[0].cer, single.cer);
    }

    #[test]
    fn report_flags_and_errors() {
        assert!(bucketed_cer(&[]).is_err());
        assert!(bucketed_cer(&[EvalRecord::new("a", "a", 0)]).is_err());
        let mut failed = EvalRecord::new("", "abc", 320);
        failed.failed = true;
        let rep = bucketed_cer(&[failed, EvalRecord::new("q", "", 10)]).unwrap();
        assert_eq!((rep.failed, rep.empty_truths), (1, 1));
        assert_eq!(rep.cer, 4.0 / 4.0);
        assert!(rep.summary().contains("failed=1"));
    }

    proptest! {
        #[test]
        fn metric_axioms(a in "[abc]{0,10}", b in "[abc]{0,10}", c in "[abc]{0,10}") {
            let d = char_distance;
            prop_assert_eq!(d(&a, &a), 0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &b) == 0, a == b);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
        }

        #[test]
        fn bucket_identity(rows in prop::collection::vec(("[ab ]{0,8}", "[ab ]{0,8}", 1usize..1000), 1..30)) {
            let records: Vec<EvalRecord> = rows.iter().map(|(p, t, w)| EvalRecord::new(p.as_str(), t.as_str(), *w)).collect();
            let rep = bucketed_cer(&records).unwrap();
            let d: usize = rep.buckets.iter().map(|b| b.distance).sum();
            let n: usize = rep.buckets.iter().map(|b| b.truth_len).sum();
            prop_assert_eq!((d, n), (rep.distance, rep.truth_len));
            prop_assert_eq!(rep.buckets.iter().map(|b| b.count).sum::<usize>(), records.len());
            let weighted: f64 = rep.buckets.iter().map(|b| b.truth_len as f64 * b.cer).sum::<f64>() / n as f64;
            prop_assert!((weighted - rep.cer).abs() <= 1e-12);
        }
    }
}
