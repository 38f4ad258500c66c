//! ROUGE-1, ROUGE-2, and ROUGE-L F1 at the restored-word level.
//!
//! Scores are computed per sentence pair and macro-averaged over the corpus.
//! Tokenization is lowercase plus whitespace split; no stemming or stopword
//! removal is applied.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_pr(precision: f64, recall: f64) -> RougeScore {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore { precision, recall, f1 }
    }
}

/// Lowercase and split on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    line.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts<'a>(words: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if words.len() >= n {
        for gram in words.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap F1 (n = 1 or 2). Either side lacking any n-gram
/// yields an all-zero score.
pub fn rouge_n(sys: &[String], reference: &[String], n: usize) -> Result<RougeScore> {
    if n != 1 && n != 2 {
        return Err(Error::contract(format!("rouge_n supports n in {{1, 2}}, got {n}")));
    }
    let sys_grams = ngram_counts(sys, n);
    let ref_grams = ngram_counts(reference, n);
    let sys_total: usize = sys_grams.values().sum();
    let ref_total: usize = ref_grams.values().sum();
    if sys_total == 0 || ref_total == 0 {
        return Ok(RougeScore::default());
    }
    let overlap: usize = sys_grams
        .iter()
        .map(|(gram, &c)| c.min(*ref_grams.get(gram).unwrap_or(&0)))
        .sum();
    Ok(RougeScore::from_pr(
        overlap as f64 / sys_total as f64,
        overlap as f64 / ref_total as f64,
    ))
}

/// Length of the longest common subsequence, by dynamic programming.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence F1.
pub fn rouge_l(sys: &[String], reference: &[String]) -> RougeScore {
    if sys.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let lcs = lcs_len(sys, reference) as f64;
    RougeScore::from_pr(lcs / sys.len() as f64, lcs / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusRouge {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    /// Pairs where either side was empty (scored zero, counted here).
    pub degenerate_pairs: usize,
}

impl CorpusRouge {
    /// Three metric rows: name, precision, recall, F1.
    pub fn to_tsv(&self) -> String {
        let row = |name: &str, s: &RougeScore| {
            format!("{name}\t{:.6}\t{:.6}\t{:.6}\n", s.precision, s.recall, s.f1)
        };
        let mut out = String::from("metric\tprecision\trecall\tf1\n");
        out.push_str(&row("rouge-1", &self.rouge1));
        out.push_str(&row("rouge-2", &self.rouge2));
        out.push_str(&row("rouge-l", &self.rouge_l));
        out
    }
}

/// Macro-average over sentence pairs of (system, reference) word lists.
pub fn corpus_rouge(pairs: &[(Vec<String>, Vec<String>)]) -> Result<CorpusRouge> {
    if pairs.is_empty() {
        return Err(Error::data("corpus_rouge on an empty pair list"));
    }
    let mut acc = [RougeScore::default(); 3];
    let mut degenerate = 0usize;
    for (sys, reference) in pairs {
        if sys.is_empty() || reference.is_empty() {
            degenerate += 1;
        }
        let scores = [
            rouge_n(sys, reference, 1)?,
            rouge_n(sys, reference, 2)?,
            rouge_l(sys, reference),
        ];
        for (a, s) in acc.iter_mut().zip(scores) {
            a.precision += s.precision;
            a.recall += s.recall;
            a.f1 += s.f1;
        }
    }
    let n = pairs.len() as f64;
    for a in acc.iter_mut() {
        a.precision /= n;
        a.recall /= n;
        a.f1 /= n;
    }
    Ok(CorpusRouge {
        rouge1: acc[0],
        rouge2: acc[1],
        rouge_l: acc[2],
        degenerate_pairs: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        tokenize(s)
    }

    /// Independent LCS oracle: plain recursion, no DP table.
    fn lcs_recursive(a: &[String], b: &[String]) -> usize {
        match (a.split_last(), b.split_last()) {
            (Some((xa, ra)), Some((xb, rb))) => {
                if xa == xb {
                    1 + lcs_recursive(ra, rb)
                } else {
                    lcs_recursive(ra, b).max(lcs_recursive(a, rb))
                }
            }
            _ => 0,
        }
    }

    #[test]
    fn identity_scores_one() {
        let s = words("a b c");
        assert_eq!(rouge_n(&s, &s, 1).unwrap().f1, 1.0);
        assert_eq!(rouge_n(&s, &s, 2).unwrap().f1, 1.0);
        assert_eq!(rouge_l(&s, &s).f1, 1.0);
    }

    #[test]
    fn hand_counted_unigram_case() {
        let score = rouge_n(&words("a b"), &words("a c"), 1).unwrap();
        assert_eq!(score.precision, 0.5);
        assert_eq!(score.recall, 0.5);
        assert_eq!(score.f1, 0.5);
    }

    #[test]
    fn bigram_on_single_word_is_zero() {
        let score = rouge_n(&words("a"), &words("a b"), 2).unwrap();
        assert_eq!(score, RougeScore::default());
    }

    #[test]
    fn clipped_counts_limit_repeats() {
        // sys repeats "a" three times; ref has it once -> overlap clipped to 1
        let score = rouge_n(&words("a a a"), &words("a b"), 1).unwrap();
        assert!((score.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(score.recall, 0.5);
    }

    #[test]
    fn lcs_hand_case() {
        // "a c b" vs "a b c": LCS length 2
        let score = rouge_l(&words("a c b"), &words("a b c"));
        assert!((score.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((score.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((score.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_vocabulary_scores_zero() {
        let s = words("x y z");
        let r = words("a b c");
        assert_eq!(rouge_n(&s, &r, 1).unwrap(), RougeScore::default());
        assert_eq!(rouge_n(&s, &r, 2).unwrap(), RougeScore::default());
        assert_eq!(rouge_l(&s, &r), RougeScore::default());
    }

    #[test]
    fn empty_sides_score_zero() {
        let s = words("a b");
        let empty: Vec<String> = vec![];
        assert_eq!(rouge_n(&s, &empty, 1).unwrap(), RougeScore::default());
        assert_eq!(rouge_n(&empty, &s, 1).unwrap(), RougeScore::default());
        assert_eq!(rouge_l(&empty, &s), RougeScore::default());
    }

    #[test]
    fn unsupported_n_rejected() {
        assert!(rouge_n(&words("a"), &words("a"), 3).is_err());
        assert!(rouge_n(&words("a"), &words("a"), 0).is_err());
    }

    #[test]
    fn corpus_macro_average() {
        let one = (words("a b"), words("a b"));
        let zero = (words("x"), words("y"));
        let c = corpus_rouge(&[one.clone()]).unwrap();
        assert_eq!(c.rouge1.f1, 1.0);

        let c = corpus_rouge(&[one.clone(), one.clone()]).unwrap();
        assert_eq!(c.rouge1.f1, 1.0);
        assert_eq!(c.rouge_l.f1, 1.0);

        let c = corpus_rouge(&[one, zero]).unwrap();
        assert_eq!(c.rouge1.f1, 0.5);
        assert_eq!(c.rouge_l.f1, 0.5);

        assert!(corpus_rouge(&[]).is_err());
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("The  Cat\tSAT"), vec!["the", "cat", "sat"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn tsv_has_three_metric_rows() {
        let c = corpus_rouge(&[(words("a b"), words("a b"))]).unwrap();
        let tsv = c.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("rouge-1\t"));
        assert!(lines[3].starts_with("rouge-l\t1.000000"));
    }

    proptest! {
        /// Bounds hold for arbitrary short word lists.
        #[test]
        fn scores_bounded(
            sys in proptest::collection::vec("[abc]{1,2}", 0..8),
            reference in proptest::collection::vec("[abc]{1,2}", 0..8),
        ) {
            for score in [
                rouge_n(&sys, &reference, 1).unwrap(),
                rouge_n(&sys, &reference, 2).unwrap(),
                rouge_l(&sys, &reference),
            ] {
                prop_assert!((0.0..=1.0).contains(&score.precision));
                prop_assert!((0.0..=1.0).contains(&score.recall));
                prop_assert!((0.0..=1.0).contains(&score.f1));
            }
        }

        /// Self-comparison is perfect whenever an n-gram exists.
        #[test]
        fn self_rouge_is_one(sys in proptest::collection::vec("[abc]{1,2}", 2..8)) {
            prop_assert_eq!(rouge_n(&sys, &sys, 1).unwrap().f1, 1.0);
            prop_assert_eq!(rouge_n(&sys, &sys, 2).unwrap().f1, 1.0);
            prop_assert_eq!(rouge_l(&sys, &sys).f1, 1.0);
        }

        /// DP LCS equals the recursive oracle on short sequences.
        #[test]
        fn lcs_matches_recursive_oracle(
            a in proptest::collection::vec("[ab]{1}", 0..8),
            b in proptest::collection::vec("[ab]{1}", 0..8),
        ) {
            prop_assert_eq!(lcs_len(&a, &b), lcs_recursive(&a, &b));
        }
    }
}
