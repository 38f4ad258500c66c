//! Shrinking-beam search over the target head.
//!
//! The live width starts at `beam_size` and permanently shrinks by one each
//! time a hypothesis emits eos and retires to the finished pool; search
//! halts when the width reaches zero or `max_steps` is exhausted. The source
//! head is never evaluated here: decoding runs on the target-only step, so
//! inference cost matches a model trained without the auxiliary head.

use crate::error::{Error, Result};
use crate::model::{DecoderState, ModelParams};
use crate::tensor::Tape;
use crate::vocab::{BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Clone)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Decode-step budget; defaults to the source length.
    pub max_steps: Option<usize>,
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 20,
            max_steps: None,
            length_normalize: true,
        }
    }
}

/// A live or finished decoding path.
#[derive(Clone)]
pub struct Hypothesis {
    /// Emitted token ids (bos never appears; eos only as the last element).
    pub ids: Vec<usize>,
    /// Sum of token log-probabilities; never positive.
    pub logp: f64,
    pub state: DecoderState,
    pub finished: bool,
}

/// Ranking score: mean token log-probability when normalizing (bos is not
/// emitted and never counts), raw sum otherwise.
pub fn score(logp: f64, emitted_len: usize, length_normalize: bool) -> f64 {
    if length_normalize && emitted_len > 0 {
        logp / emitted_len as f64
    } else {
        logp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Emitted ids; ends with eos unless truncated.
    pub ids: Vec<usize>,
    pub logp: f64,
    /// Set when no hypothesis finished within the step budget and the best
    /// live path was returned instead.
    pub truncated: bool,
}

impl DecodeResult {
    pub fn score(&self, length_normalize: bool) -> f64 {
        score(self.logp, self.ids.len(), length_normalize)
    }
}

/// Candidate ordering for expansion: higher log-probability first, then
/// lower token id, then earlier parent (all deterministic).
fn better_candidate(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> std::cmp::Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

/// Final ranking: higher score first, ties to the lexicographically smaller
/// id sequence.
fn pick_best<'a>(
    hyps: impl Iterator<Item = &'a Hypothesis>,
    length_normalize: bool,
) -> Option<&'a Hypothesis> {
    hyps.fold(None, |best: Option<&Hypothesis>, h| match best {
        None => Some(h),
        Some(b) => {
            let sb = score(b.logp, b.ids.len(), length_normalize);
            let sh = score(h.logp, h.ids.len(), length_normalize);
            if sh > sb || (sh == sb && h.ids < b.ids) {
                Some(h)
            } else {
                Some(b)
            }
        }
    })
}

/// Decode one source sequence. Pure in (params, src, cfg): repeated calls
/// return identical results.
pub fn beam_search(params: &ModelParams, src: &[usize], cfg: &BeamConfig) -> Result<DecodeResult> {
    if cfg.beam_size == 0 {
        return Err(Error::contract("beam_size must be at least 1"));
    }
    let tape = Tape::inference();
    let enc = params.encode(&tape, src, 0.0, None)?;
    let init = params.init_decoder(&tape, &enc)?;
    let max_steps = cfg.max_steps.unwrap_or(src.len());

    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        logp: 0.0,
        state: init,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut width = cfg.beam_size;

    for _ in 0..max_steps {
        if width == 0 || live.is_empty() {
            break;
        }
        // expand every live hypothesis over the full target vocabulary
        let mut expansions: Vec<(f64, usize, usize)> = Vec::new(); // (logp, token, parent)
        let mut states: Vec<DecoderState> = Vec::with_capacity(live.len());
        for (parent, hyp) in live.iter().enumerate() {
            let prev = *hyp.ids.last().unwrap_or(&BOS_ID);
            let out = params.decode_step_target(&tape, prev, &hyp.state, &enc)?;
            let probs = out.probs_tgt.value();
            for (token, &p) in probs.iter().enumerate() {
                if token == PAD_ID || token == BOS_ID {
                    continue; // never emitted
                }
                expansions.push((hyp.logp + p.ln(), token, parent));
            }
            states.push(out.state);
        }
        expansions.sort_by(better_candidate);
        expansions.truncate(width);

        let mut next_live = Vec::with_capacity(width);
        for (logp, token, parent) in expansions {
            let mut ids = live[parent].ids.clone();
            ids.push(token);
            let hyp = Hypothesis {
                ids,
                logp,
                state: states[parent].clone(),
                finished: token == EOS_ID,
            };
            if hyp.finished {
                finished.push(hyp);
                width -= 1; // the beam shrinks for good
            } else {
                next_live.push(hyp);
            }
        }
        // the survivors number exactly (old width - newly finished) = width
        live = next_live;
    }

    if let Some(best) = pick_best(finished.iter(), cfg.length_normalize) {
        return Ok(DecodeResult {
            ids: best.ids.clone(),
            logp: best.logp,
            truncated: false,
        });
    }
    // nothing finished inside the budget: surface the best live path
    match pick_best(live.iter(), cfg.length_normalize) {
        Some(best) => Ok(DecodeResult {
            ids: best.ids.clone(),
            logp: best.logp,
            truncated: true,
        }),
        None => Ok(DecodeResult {
            ids: Vec::new(),
            logp: 0.0,
            truncated: true,
        }),
    }
}

/// Greedy argmax decoding: the beam_size = 1 special case, written directly.
/// Exists as an oracle for tests and a fast path for bulk evaluation.
pub fn greedy_decode(
    params: &ModelParams,
    src: &[usize],
    max_steps: Option<usize>,
) -> Result<DecodeResult> {
    let tape = Tape::inference();
    let enc = params.encode(&tape, src, 0.0, None)?;
    let mut state = params.init_decoder(&tape, &enc)?;
    let max_steps = max_steps.unwrap_or(src.len());
    let mut ids = Vec::new();
    let mut logp = 0.0;
    let mut prev = BOS_ID;
    for _ in 0..max_steps {
        let out = params.decode_step_target(&tape, prev, &state, &enc)?;
        let probs = out.probs_tgt.value();
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (token, &p) in probs.iter().enumerate() {
            if token == PAD_ID || token == BOS_ID {
                continue;
            }
            if p > best.0 || (p == best.0 && token < best.1) {
                best = (p, token);
            }
        }
        ids.push(best.1);
        logp += best.0.ln();
        if best.1 == EOS_ID {
            return Ok(DecodeResult {
                ids,
                logp,
                truncated: false,
            });
        }
        prev = best.1;
        state = out.state;
    }
    Ok(DecodeResult {
        ids,
        logp,
        truncated: true,
    })
}
