//! Synthetic copy-with-deletion corpora.
//!
//! Each source line is a sequence of single-character words; the target is
//! the same sequence with the droppable words deleted. Single-character
//! words mean a zero-merge subword vocabulary segments every word into
//! exactly one token, so source length in tokens equals length in words and
//! the planted kept/deleted structure is visible to the model unchanged.
//!
//! Deletion is by word type: one fixed subset of the inventory, drawn per
//! corpus, is never kept. A model can therefore recover every planted
//! correspondence from the text alone, the way droppable word classes work
//! in headline compression; per-position random deletion would leave the
//! deletion pattern unlearnable no matter how long the model trains.
//!
//! Every pair keeps at least one word and deletes at least one, so the
//! framed target always fits the padding rule (J + 1 <= I).

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const ALPHABET: [char; 52] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r',
    's', 't', 'u', 'v', 'w', 'x', 'y', 'z', 'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J',
    'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z',
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    /// Number of distinct word types (drawn from a fixed 52-letter alphabet).
    pub vocab: usize,
    pub pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of word types designated droppable, exclusive of 0 and 1.
    /// Matches the expected token-level deletion rate, since words are drawn
    /// uniformly.
    pub delete_rate: f64,
    pub seed: u64,
}

impl ToySpec {
    fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.vocab > ALPHABET.len() {
            return Err(Error::contract(format!(
                "toy vocab must be in 2..={}, got {}",
                ALPHABET.len(),
                self.vocab
            )));
        }
        if self.pairs == 0 {
            return Err(Error::contract("toy corpus needs at least one pair"));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::contract(format!(
                "toy lengths need 2 <= min <= max, got {}..={}",
                self.min_len, self.max_len
            )));
        }
        if !(self.delete_rate > 0.0 && self.delete_rate < 1.0) {
            return Err(Error::contract(format!(
                "delete_rate must lie strictly between 0 and 1, got {}",
                self.delete_rate
            )));
        }
        Ok(())
    }

    /// Number of droppable types: proportional, but always leaving at least
    /// one droppable and one kept type.
    fn droplist_size(&self) -> usize {
        ((self.vocab as f64 * self.delete_rate).round() as usize).clamp(1, self.vocab - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyPair {
    /// Space-joined single-character words.
    pub src: String,
    pub tgt: String,
    /// Per source position: true when the word survives into the target.
    pub kept: Vec<bool>,
}

impl ToyPair {
    pub fn src_tokens(&self) -> Vec<&str> {
        self.src.split(' ').collect()
    }

    /// Word types whose every source occurrence was deleted. These are the
    /// types the target carries no trace of.
    pub fn fully_deleted_types(&self) -> BTreeSet<&str> {
        let tokens = self.src_tokens();
        let mut deleted: BTreeSet<&str> = BTreeSet::new();
        let mut survivors: BTreeSet<&str> = BTreeSet::new();
        for (tok, &keep) in tokens.iter().zip(&self.kept) {
            if keep {
                survivors.insert(tok);
            } else {
                deleted.insert(tok);
            }
        }
        deleted.difference(&survivors).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyCorpus {
    pub pairs: Vec<ToyPair>,
}

impl ToyCorpus {
    pub fn src_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.src.clone()).collect()
    }

    pub fn tgt_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.tgt.clone()).collect()
    }

    pub fn write(&self, src_path: &Path, tgt_path: &Path) -> Result<()> {
        let render = |lines: Vec<String>| {
            let mut text = lines.join("\n");
            text.push('\n');
            text
        };
        std::fs::write(src_path, render(self.src_lines()))?;
        std::fs::write(tgt_path, render(self.tgt_lines()))?;
        Ok(())
    }
}

/// The corpus-wide droppable types, drawn once from the corpus seed stream.
pub fn droplist(spec: &ToySpec, rng: &mut ChaCha8Rng) -> BTreeSet<char> {
    let mut inventory: Vec<char> = ALPHABET[..spec.vocab].to_vec();
    for i in 0..spec.droplist_size() {
        let j = rng.gen_range(i..inventory.len());
        inventory.swap(i, j);
    }
    inventory[..spec.droplist_size()].iter().copied().collect()
}

/// Generate a corpus with pairwise-distinct source lines. Lines that would
/// keep everything or delete everything are redrawn, so every pair has at
/// least one padding step and a nonempty target.
pub fn generate(spec: &ToySpec) -> Result<ToyCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let drop = droplist(spec, &mut rng);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut pairs = Vec::with_capacity(spec.pairs);
    let mut attempts = 0usize;
    let budget = spec.pairs.saturating_mul(10_000);
    while pairs.len() < spec.pairs {
        attempts += 1;
        if attempts > budget {
            return Err(Error::data(format!(
                "could not draw {} distinct sources from vocab {} and lengths {}..={}",
                spec.pairs, spec.vocab, spec.min_len, spec.max_len
            )));
        }
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let tokens: Vec<char> =
            (0..len).map(|_| ALPHABET[rng.gen_range(0..spec.vocab)]).collect();
        let kept: Vec<bool> = tokens.iter().map(|c| !drop.contains(c)).collect();
        if kept.iter().all(|&k| k) || kept.iter().all(|&k| !k) {
            continue;
        }
        let src: String =
            tokens.iter().map(char::to_string).collect::<Vec<_>>().join(" ");
        if seen.contains(&src) {
            continue;
        }
        let tgt: String = tokens
            .iter()
            .zip(&kept)
            .filter(|(_, &k)| k)
            .map(|(c, _)| c.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        seen.insert(src.clone());
        pairs.push(ToyPair { src, tgt, kept });
    }
    Ok(ToyCorpus { pairs })
}

/// Specification of the bundled 32-pair corpus (data/toy32.*).
pub const TOY32_SPEC: ToySpec = ToySpec {
    vocab: 12,
    pairs: 32,
    min_len: 4,
    max_len: 7,
    delete_rate: 0.35,
    seed: 32,
};

/// The bundled 32-pair memorization corpus, regenerated from its spec.
pub fn toy32() -> ToyCorpus {
    generate(&TOY32_SPEC).expect("fixed spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::ingest_lines;
    use crate::vocab::Vocabulary;

    fn demo_spec() -> ToySpec {
        ToySpec { vocab: 10, pairs: 40, min_len: 4, max_len: 9, delete_rate: 0.3, seed: 5 }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&demo_spec()).unwrap(), generate(&demo_spec()).unwrap());
        let other = ToySpec { seed: 6, ..demo_spec() };
        assert_ne!(generate(&demo_spec()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn every_pair_keeps_and_deletes_something() {
        let spec = demo_spec();
        let corpus = generate(&spec).unwrap();
        assert_eq!(corpus.pairs.len(), spec.pairs);
        for pair in &corpus.pairs {
            let tokens = pair.src_tokens();
            assert!((spec.min_len..=spec.max_len).contains(&tokens.len()));
            assert_eq!(tokens.len(), pair.kept.len());
            assert!(pair.kept.iter().any(|&k| k), "all deleted: {}", pair.src);
            assert!(pair.kept.iter().any(|&k| !k), "none deleted: {}", pair.src);
            let expected: Vec<&str> = tokens
                .iter()
                .zip(&pair.kept)
                .filter(|(_, &k)| k)
                .map(|(t, _)| *t)
                .collect();
            assert_eq!(pair.tgt.split(' ').collect::<Vec<_>>(), expected);
            for tok in tokens {
                assert_eq!(tok.chars().count(), 1);
                let c = tok.chars().next().unwrap();
                assert!(ALPHABET[..spec.vocab].contains(&c), "out-of-vocab {c}");
            }
        }
    }

    #[test]
    fn sources_are_distinct() {
        let corpus = generate(&demo_spec()).unwrap();
        let set: BTreeSet<&String> = corpus.pairs.iter().map(|p| &p.src).collect();
        assert_eq!(set.len(), corpus.pairs.len());
    }

    #[test]
    fn deletion_is_consistent_by_type_across_the_corpus() {
        let spec = demo_spec();
        let corpus = generate(&spec).unwrap();
        let mut kept_types: BTreeSet<String> = BTreeSet::new();
        let mut deleted_types: BTreeSet<String> = BTreeSet::new();
        for pair in &corpus.pairs {
            for (tok, &keep) in pair.src_tokens().iter().zip(&pair.kept) {
                if keep {
                    kept_types.insert(tok.to_string());
                } else {
                    deleted_types.insert(tok.to_string());
                }
            }
        }
        assert!(
            kept_types.is_disjoint(&deleted_types),
            "a type was kept in one pair and deleted in another"
        );
        assert_eq!(deleted_types.len(), 3, "round(10 * 0.3) droppable types");
    }

    #[test]
    fn corpus_survives_ingest_without_drops() {
        // the kept/deleted guarantees mean no pair is dropped downstream
        let corpus = generate(&demo_spec()).unwrap();
        let voc = Vocabulary::learn(&corpus.src_lines(), 0).unwrap();
        let ds = ingest_lines(&corpus.src_lines(), &corpus.tgt_lines(), &voc).unwrap();
        assert_eq!(ds.len(), corpus.pairs.len());
        assert_eq!(ds.dropped_long, 0);
        assert_eq!(ds.dropped_empty, 0);
        for (pair, toy) in ds.pairs.iter().zip(&corpus.pairs) {
            // one subword per single-character word
            assert_eq!(pair.src.len(), toy.src_tokens().len());
            assert_eq!(pair.target_len(), toy.kept.iter().filter(|&&k| k).count());
        }
    }

    #[test]
    fn fully_deleted_types_exclude_survivors() {
        let pair = ToyPair {
            src: "a b a c".to_string(),
            tgt: "a c".to_string(),
            kept: vec![true, false, false, true],
        };
        // "a" is deleted at position 3 but kept at position 1
        let deleted = pair.fully_deleted_types();
        assert_eq!(deleted.into_iter().collect::<Vec<_>>(), vec!["b"]);
    }

    #[test]
    fn invalid_specs_rejected() {
        let good = demo_spec();
        for bad in [
            ToySpec { vocab: 1, ..good },
            ToySpec { vocab: 53, ..good },
            ToySpec { pairs: 0, ..good },
            ToySpec { min_len: 1, ..good },
            ToySpec { min_len: 8, max_len: 7, ..good },
            ToySpec { delete_rate: 0.0, ..good },
            ToySpec { delete_rate: 1.0, ..good },
        ] {
            assert!(generate(&bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn bundled_corpus_matches_checked_in_files() {
        let corpus = toy32();
        assert_eq!(corpus.pairs.len(), 32);
        let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");
        let src = std::fs::read_to_string(format!("{root}/data/toy32.src")).unwrap();
        let tgt = std::fs::read_to_string(format!("{root}/data/toy32.tgt")).unwrap();
        assert_eq!(src.lines().collect::<Vec<_>>(), corpus.src_lines());
        assert_eq!(tgt.lines().collect::<Vec<_>>(), corpus.tgt_lines());
    }

    #[test]
    fn write_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&demo_spec()).unwrap();
        let src_path = dir.path().join("x.src");
        let tgt_path = dir.path().join("x.tgt");
        corpus.write(&src_path, &tgt_path).unwrap();
        let src = std::fs::read_to_string(&src_path).unwrap();
        assert_eq!(src.lines().collect::<Vec<_>>(), corpus.src_lines());
        assert!(src.ends_with('\n'));
    }
}
