//! Joint subword vocabulary learned with byte-pair encoding.
//!
//! One inventory serves both source and target sides. Merge rules are
//! learned greedily (most frequent adjacent symbol pair, ties broken
//! lexicographically) and never cross a word boundary. The end-of-word
//! marker is a suffix glyph reserved outside the corpus alphabet, so
//! restoring text is a pure concatenate-and-split.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// End-of-word marker appended to the final character symbol of each word.
/// Must not occur in corpus text; learning rejects corpora that contain it.
pub const WORD_END: char = '\u{2581}';

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Reserved ids, fixed across every vocabulary.
pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];

/// Which side of a pair a token sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Encoded line: vocabulary ids plus the side they belong to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub side: Side,
}

/// Shared source/target subword inventory with its ordered merge table.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Learn `num_merges` BPE rules from whitespace-pretokenized lines.
    pub fn learn<S: AsRef<str>>(lines: &[S], num_merges: usize) -> Result<Vocabulary> {
        // unique words with corpus frequencies
        let mut word_freq: HashMap<&str, u64> = HashMap::new();
        for line in lines {
            for word in line.as_ref().split_whitespace() {
                *word_freq.entry(word).or_insert(0) += 1;
            }
        }
        if word_freq.is_empty() {
            return Err(Error::data("cannot learn a vocabulary from an empty corpus"));
        }

        let mut words: Vec<(Vec<String>, u64)> = Vec::with_capacity(word_freq.len());
        let mut inventory: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        for (word, freq) in word_freq {
            if word.contains(WORD_END) {
                return Err(Error::data(format!(
                    "corpus word {word:?} contains the reserved end-of-word marker {WORD_END:?}"
                )));
            }
            let symbols = initial_symbols(word);
            for s in &symbols {
                inventory.insert(s.clone());
            }
            words.push((symbols, freq));
        }
        // deterministic iteration order for pair counting
        words.sort_by(|a, b| a.0.cmp(&b.0));

        let mut merges = Vec::with_capacity(num_merges);
        for _ in 0..num_merges {
            let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
            for (symbols, freq) in &words {
                for pair in symbols.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_insert(0) += freq;
                }
            }
            // most frequent pair, ties broken by lexicographically smallest
            let best = counts.iter().fold(None, |acc, (&pair, &count)| match acc {
                None => Some((pair, count)),
                Some((bp, bc)) => {
                    if count > bc || (count == bc && pair < bp) {
                        Some((pair, count))
                    } else {
                        Some((bp, bc))
                    }
                }
            });
            let Some(((left, right), _)) = best else {
                break; // every word is a single symbol
            };
            let (left, right) = (left.to_string(), right.to_string());
            let merged = format!("{left}{right}");
            for (symbols, _) in &mut words {
                merge_all(symbols, &left, &right, &merged);
            }
            inventory.insert(merged);
            merges.push((left, right));
        }

        for special in SPECIALS {
            if inventory.contains(special) {
                return Err(Error::data(format!(
                    "corpus produces a token colliding with reserved special {special:?}"
                )));
            }
        }

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(inventory); // BTreeSet iterates in sorted order
        Ok(Vocabulary::from_parts(merges, id_to_token)?)
    }

    fn from_parts(merges: Vec<(String, String)>, id_to_token: Vec<String>) -> Result<Vocabulary> {
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, token) in id_to_token.iter().enumerate() {
            if token_to_id.insert(token.clone(), id).is_some() {
                return Err(Error::format(format!("duplicate token {token:?} in vocabulary")));
            }
        }
        for (id, special) in SPECIALS.iter().enumerate() {
            if token_to_id.get(*special) != Some(&id) {
                return Err(Error::format(format!(
                    "special {special:?} must have id {id}"
                )));
            }
        }
        let merge_rank = merges
            .iter()
            .cloned()
            .enumerate()
            .map(|(rank, pair)| (pair, rank))
            .collect();
        Ok(Vocabulary {
            merges,
            merge_rank,
            token_to_id,
            id_to_token,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Segment one whitespace-pretokenized line into subword ids.
    /// Symbols outside the inventory map to the ⟨unk⟩ id.
    pub fn encode(&self, line: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        let mut cache: HashMap<&str, Vec<usize>> = HashMap::new();
        for word in line.split_whitespace() {
            let word_ids = cache
                .entry(word)
                .or_insert_with(|| self.encode_word(word))
                .clone();
            ids.extend(word_ids);
        }
        ids
    }

    pub fn encode_line(&self, line: &str, side: Side) -> TokenSequence {
        TokenSequence {
            ids: self.encode(line),
            side,
        }
    }

    fn encode_word(&self, word: &str) -> Vec<usize> {
        let mut symbols = initial_symbols(word);
        // repeatedly apply the earliest-learned rule present anywhere in the
        // word; equivalent to replaying the merge table in learned order
        loop {
            let mut best: Option<(usize, (String, String))> = None;
            for pair in symbols.windows(2) {
                let key = (pair[0].clone(), pair[1].clone());
                if let Some(&rank) = self.merge_rank.get(&key) {
                    if best.as_ref().is_none_or(|(r, _)| rank < *r) {
                        best = Some((rank, key));
                    }
                }
            }
            let Some((_, (left, right))) = best else { break };
            let merged = format!("{left}{right}");
            merge_all(&mut symbols, &left, &right, &merged);
        }
        symbols
            .iter()
            .map(|s| self.id(s).unwrap_or(UNK_ID))
            .collect()
    }

    /// Undo subword segmentation: strip specials, concatenate subwords, and
    /// split words at end-of-word markers.
    pub fn restore(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut word = String::new();
        for &id in ids {
            if self.is_special(id) {
                continue;
            }
            let Some(token) = self.token(id) else { continue };
            for ch in token.chars() {
                if ch == WORD_END {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(&word);
                    word.clear();
                } else {
                    word.push(ch);
                }
            }
        }
        if !word.is_empty() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&word);
        }
        out
    }

    /// Write the merge table ("left right" per line, application order) and
    /// the token map ("token\tid" per line).
    pub fn save(&self, merges_path: &Path, vocab_path: &Path) -> Result<()> {
        let mut merges = String::new();
        for (left, right) in &self.merges {
            writeln!(merges, "{left} {right}").expect("string write");
        }
        fs::write(merges_path, merges)?;
        let mut vocab = String::new();
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(vocab, "{token}\t{id}").expect("string write");
        }
        fs::write(vocab_path, vocab)?;
        Ok(())
    }

    pub fn load(merges_path: &Path, vocab_path: &Path) -> Result<Vocabulary> {
        let merges_text = fs::read_to_string(merges_path)?;
        let mut merges = Vec::new();
        for (lineno, line) in merges_text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(left), Some(right), None) if !left.is_empty() && !right.is_empty() => {
                    merges.push((left.to_string(), right.to_string()));
                }
                _ => {
                    return Err(Error::format(format!(
                        "{}:{}: expected \"left right\"",
                        merges_path.display(),
                        lineno + 1
                    )));
                }
            }
        }

        let vocab_text = fs::read_to_string(vocab_path)?;
        let mut entries = Vec::new();
        for (lineno, line) in vocab_text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || {
                Error::format(format!(
                    "{}:{}: expected \"token\\tid\"",
                    vocab_path.display(),
                    lineno + 1
                ))
            };
            let (token, id) = line.split_once('\t').ok_or_else(bad)?;
            let id: usize = id.parse().map_err(|_| bad())?;
            entries.push((token.to_string(), id));
        }
        let mut id_to_token = vec![None; entries.len()];
        for (token, id) in entries {
            let slot = id_to_token.get_mut(id).ok_or_else(|| {
                Error::format(format!(
                    "{}: id {id} out of range (ids must be dense from 0)",
                    vocab_path.display()
                ))
            })?;
            if slot.replace(token).is_some() {
                return Err(Error::format(format!(
                    "{}: id {id} assigned twice",
                    vocab_path.display()
                )));
            }
        }
        let id_to_token: Vec<String> = id_to_token
            .into_iter()
            .map(|t| t.expect("dense ids with no gaps"))
            .collect();
        Vocabulary::from_parts(merges, id_to_token)
    }
}

/// Character decomposition of a word, marker fused onto the last character.
fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if i + 1 == n {
                format!("{c}{WORD_END}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Replace every adjacent (left, right) with the merged symbol, left to
/// right, non-overlapping.
fn merge_all(symbols: &mut Vec<String>, left: &str, right: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = merged.to_string();
            symbols.remove(i + 1);
        }
        i += 1;
    }
}
