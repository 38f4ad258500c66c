//! Generation diagnostics: repetition and length-deficit counters for system
//! output, plus alignment extraction from a trained model.
//!
//! Alignment extraction runs a teacher-forced pass over the padded gold
//! target and records, per decode step, the attention row over source
//! positions and the source-prediction row over source tokens. The
//! highest-probability entry of each row names the aligned token.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tape;
use crate::train::{build_padded_target, Pair};
use crate::vocab::Vocabulary;

/// Counts how many surplus occurrences the system output has beyond the
/// reference's own surplus, summed over token types. A token appearing k
/// times contributes max(0, k - 1) surplus; only system surplus exceeding
/// the reference surplus for the same type is counted.
pub fn repeat_count(sys: &[String], reference: &[String]) -> usize {
    let mut sys_counts: HashMap<&String, usize> = HashMap::new();
    for w in sys {
        *sys_counts.entry(w).or_insert(0) += 1;
    }
    let mut ref_counts: HashMap<&String, usize> = HashMap::new();
    for w in reference {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    sys_counts
        .iter()
        .map(|(w, &c)| {
            let sys_excess = c.saturating_sub(1);
            let ref_excess = ref_counts.get(*w).copied().unwrap_or(0).saturating_sub(1);
            sys_excess.saturating_sub(ref_excess)
        })
        .sum()
}

/// Reference length minus system length; negative when the system overshoots.
pub fn length_deficit(sys: &[String], reference: &[String]) -> i64 {
    reference.len() as i64 - sys.len() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceDiagnostic {
    pub repeat_count: usize,
    pub length_deficit: i64,
}

#[derive(Debug, Clone, Default)]
pub struct OddGenReport {
    pub rows: Vec<SentenceDiagnostic>,
}

impl OddGenReport {
    pub fn total_repeats(&self) -> usize {
        self.rows.iter().map(|r| r.repeat_count).sum()
    }

    pub fn total_deficit(&self) -> i64 {
        self.rows.iter().map(|r| r.length_deficit).sum()
    }

    /// One line per sentence plus a closing aggregate line. The header
    /// states the repeat-count convention so readers of the raw file see it.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "# repeat_count: per-type surplus occurrences beyond the reference's own surplus\n",
        );
        out.push_str("sentence\trepeat_count\tlength_deficit\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", i + 1, row.repeat_count, row.length_deficit);
        }
        let _ = writeln!(out, "total\t{}\t{}", self.total_repeats(), self.total_deficit());
        out
    }
}

/// Diagnose line-aligned system and reference text (lowercase, whitespace
/// tokenized, matching the scoring convention).
pub fn diagnose<S: AsRef<str>>(sys_lines: &[S], ref_lines: &[S]) -> Result<OddGenReport> {
    if sys_lines.len() != ref_lines.len() {
        return Err(Error::data(format!(
            "system has {} lines but reference has {}",
            sys_lines.len(),
            ref_lines.len()
        )));
    }
    let rows = sys_lines
        .iter()
        .zip(ref_lines)
        .map(|(s, r)| {
            let sys = crate::rouge::tokenize(s.as_ref());
            let reference = crate::rouge::tokenize(r.as_ref());
            SentenceDiagnostic {
                repeat_count: repeat_count(&sys, &reference),
                length_deficit: length_deficit(&sys, &reference),
            }
        })
        .collect();
    Ok(OddGenReport { rows })
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A labeled step-by-row probability matrix ready for TSV export.
#[derive(Debug, Clone)]
pub struct AlignmentMatrix {
    /// Top-left corner cell of the TSV.
    pub corner: String,
    pub col_labels: Vec<String>,
    /// "step:emitted-token(aligned-token)" per decode step.
    pub row_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AlignmentMatrix {
    pub fn to_tsv(&self) -> String {
        let mut out = self.corner.clone();
        for label in &self.col_labels {
            out.push('\t');
            out.push_str(label);
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.rows) {
            out.push_str(label);
            for v in row {
                let _ = write!(out, "\t{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Attention and source-prediction alignments for one sentence pair.
#[derive(Debug, Clone)]
pub struct Alignments {
    pub attention: AlignmentMatrix,
    pub prediction: AlignmentMatrix,
    /// Per step, the attention argmax as a source position (0-based).
    pub attn_argmax: Vec<usize>,
    /// Per step, the prediction-head argmax as a vocabulary id.
    pub pred_argmax: Vec<usize>,
}

fn token_label(voc: &Vocabulary, id: usize) -> String {
    voc.token(id).map(str::to_string).unwrap_or_else(|| format!("#{id}"))
}

/// Teacher-force the padded gold target and collect both row sets.
///
/// The attention matrix has one column per source position. The prediction
/// matrix has one column per distinct source token (first-occurrence order)
/// plus a trailing "elsewhere" column holding the argmax probability when
/// the argmax token does not occur in the source.
pub fn extract_alignments(
    params: &ModelParams,
    voc: &Vocabulary,
    src_ids: &[usize],
    framed_tgt: &[usize],
) -> Result<Alignments> {
    if params.cfg.vocab_src != voc.size() || params.cfg.vocab_tgt != voc.size() {
        return Err(Error::contract(format!(
            "model vocabularies {}x{} do not match the joint vocabulary of {}",
            params.cfg.vocab_src,
            params.cfg.vocab_tgt,
            voc.size()
        )));
    }
    let source_len = src_ids.len();
    let yprime = build_padded_target(framed_tgt, source_len)?;

    let mut src_cols: Vec<usize> = Vec::new();
    for &id in src_ids {
        if !src_cols.contains(&id) {
            src_cols.push(id);
        }
    }

    let tape = Tape::inference();
    let enc = params.encode(&tape, src_ids, 0.0, None)?;
    let mut state = params.init_decoder(&tape, &enc)?;

    let mut attention = AlignmentMatrix {
        corner: "step".to_string(),
        col_labels: src_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| format!("{}:{}", i + 1, token_label(voc, id)))
            .collect(),
        row_labels: Vec::with_capacity(source_len),
        rows: Vec::with_capacity(source_len),
    };
    let mut prediction = AlignmentMatrix {
        corner: "step".to_string(),
        col_labels: src_cols
            .iter()
            .map(|&id| token_label(voc, id))
            .chain(std::iter::once("elsewhere".to_string()))
            .collect(),
        row_labels: Vec::with_capacity(source_len),
        rows: Vec::with_capacity(source_len),
    };
    let mut attn_argmax = Vec::with_capacity(source_len);
    let mut pred_argmax = Vec::with_capacity(source_len);

    for j in 1..=source_len {
        let out = params.decode_step(&tape, yprime.ids[j - 1], &state, &enc, 0.0, None)?;
        let emitted = token_label(voc, yprime.ids[j]);

        let alpha = out.attn.value();
        let pos = argmax(&alpha);
        attn_argmax.push(pos);
        attention
            .row_labels
            .push(format!("{j}:{emitted}({})", token_label(voc, src_ids[pos])));
        attention.rows.push(alpha);

        let q = out
            .probs_src
            .as_ref()
            .expect("training-path step evaluates the source head")
            .value();
        let best = argmax(&q);
        pred_argmax.push(best);
        let mut row: Vec<f64> = src_cols.iter().map(|&id| q[id]).collect();
        row.push(if src_cols.contains(&best) { 0.0 } else { q[best] });
        prediction
            .row_labels
            .push(format!("{j}:{emitted}({})", token_label(voc, best)));
        prediction.rows.push(row);

        state = out.state;
    }

    Ok(Alignments { attention, prediction, attn_argmax, pred_argmax })
}

/// One (gold target id, prediction-head argmax id) pair per decode step.
pub fn harvest_step_pairs(params: &ModelParams, pair: &Pair) -> Result<Vec<(usize, usize)>> {
    let source_len = pair.src.len();
    let yprime = build_padded_target(&pair.tgt, source_len)?;
    let tape = Tape::inference();
    let enc = params.encode(&tape, &pair.src, 0.0, None)?;
    let mut state = params.init_decoder(&tape, &enc)?;
    let mut out_pairs = Vec::with_capacity(source_len);
    for j in 1..=source_len {
        let out = params.decode_step(&tape, yprime.ids[j - 1], &state, &enc, 0.0, None)?;
        let q = out
            .probs_src
            .as_ref()
            .expect("training-path step evaluates the source head")
            .value();
        out_pairs.push((yprime.ids[j], argmax(&q)));
        state = out.state;
    }
    Ok(out_pairs)
}

/// Harvest over a corpus sample; duplicates are preserved.
pub fn harvest_corpus(params: &ModelParams, pairs: &[Pair]) -> Result<Vec<(usize, usize)>> {
    let mut all = Vec::new();
    for pair in pairs {
        all.extend(harvest_step_pairs(params, pair)?);
    }
    Ok(all)
}

/// Frequency table sorted by count descending, then item ascending.
pub fn frequency_table<T: Ord + Hash + Clone>(items: &[T]) -> Vec<(T, usize)> {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for item in items {
        *counts.entry(item).or_insert(0) += 1;
    }
    let mut table: Vec<(T, usize)> = counts.into_iter().map(|(k, v)| (k.clone(), v)).collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table
}
