//! Encoder-decoder with bilinear attention and dual output heads.
//!
//! Encoder: stacked bidirectional LSTM layers; at every layer the forward
//! and backward outputs are summed elementwise, and attention reads the top
//! layer. Decoder: stacked LSTM with input feeding (previous mixed state
//! concatenated to the previous token embedding), bilinear attention scores
//! h_i^T W_attn z_dec, and a mixed state z = tanh(W_mix [context; z_dec]).
//! Two softmax heads read the same z: the next-target distribution and the
//! source-content distribution used by the auxiliary reconstruction loss.
//!
//! Dropout (inverted) sits between stacked layers and on z before the heads;
//! the stored encoder outputs keep the exact forward+backward sum so the
//! h_i invariant holds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// Architecture dimensions. `layers` counts stacked LSTM layers on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim_embed: usize,
    pub dim_hidden: usize,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub layers: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_embed == 0
            || self.dim_hidden == 0
            || self.vocab_src == 0
            || self.vocab_tgt == 0
            || self.layers == 0
        {
            return Err(Error::contract(format!(
                "model dimensions must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One LSTM cell: pre-activations W_ih x + W_hh h + b, gates stacked
/// [input; forget; cell; output] along the first axis.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_ih: Tensor, // [4H, in_dim]
    pub w_hh: Tensor, // [4H, H]
    pub b: Tensor,    // [4H]
}

impl LstmCell {
    fn init(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize) -> LstmCell {
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
        };
        let w_ih = Tensor::param(uniform(4 * hidden * in_dim), &[4 * hidden, in_dim]).unwrap();
        let w_hh = Tensor::param(uniform(4 * hidden * hidden), &[4 * hidden, hidden]).unwrap();
        // forget-gate bias starts at 1 so early training keeps cell memory
        let mut bias = vec![0.0; 4 * hidden];
        for slot in bias.iter_mut().skip(hidden).take(hidden) {
            *slot = 1.0;
        }
        let b = Tensor::param(bias, &[4 * hidden]).unwrap();
        LstmCell { w_ih, w_hh, b }
    }

    /// One recurrence step: returns (hidden', cell').
    fn step(&self, tape: &Tape, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let hidden = h.numel();
        let pre = tape.add(
            &tape.add(&tape.matvec(&self.w_ih, x)?, &tape.matvec(&self.w_hh, h)?)?,
            &self.b,
        )?;
        let i = tape.sigmoid(&tape.slice(&pre, 0, hidden)?);
        let f = tape.sigmoid(&tape.slice(&pre, hidden, hidden)?);
        let g = tape.tanh(&tape.slice(&pre, 2 * hidden, hidden)?);
        let o = tape.sigmoid(&tape.slice(&pre, 3 * hidden, hidden)?);
        let c_next = tape.add(&tape.mul(&f, c)?, &tape.mul(&i, &g)?)?;
        let h_next = tape.mul(&o, &tape.tanh(&c_next))?;
        Ok((h_next, c_next))
    }
}

/// All trainable tensors. Dimensions follow [`ModelConfig`]; embeddings are
/// stored one row per token id.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub e_src: Tensor, // [V_s, D]
    pub e_tgt: Tensor, // [V_t, D]
    pub enc_fwd: Vec<LstmCell>,
    pub enc_bwd: Vec<LstmCell>,
    pub dec: Vec<LstmCell>,
    pub w_attn: Tensor, // [H, H]
    pub w_mix: Tensor,  // [H, 2H]
    pub w_out: Tensor,  // [V_t, H]
    pub b_out: Tensor,  // [V_t]
    pub w_src: Tensor,  // [V_s, H]
    pub b_src: Tensor,  // [V_s]
}

impl ModelParams {
    /// Fresh parameters, uniform in [-0.1, 0.1], forget biases at 1.
    pub fn init(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
        cfg.validate()?;
        let (d, h) = (cfg.dim_embed, cfg.dim_hidden);
        let mut uniform = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
        };
        let e_src = Tensor::param(uniform(cfg.vocab_src * d), &[cfg.vocab_src, d])?;
        let e_tgt = Tensor::param(uniform(cfg.vocab_tgt * d), &[cfg.vocab_tgt, d])?;
        let w_attn = Tensor::param(uniform(h * h), &[h, h])?;
        let w_mix = Tensor::param(uniform(h * 2 * h), &[h, 2 * h])?;
        let w_out = Tensor::param(uniform(cfg.vocab_tgt * h), &[cfg.vocab_tgt, h])?;
        let b_out = Tensor::param(vec![0.0; cfg.vocab_tgt], &[cfg.vocab_tgt])?;
        let w_src = Tensor::param(uniform(cfg.vocab_src * h), &[cfg.vocab_src, h])?;
        let b_src = Tensor::param(vec![0.0; cfg.vocab_src], &[cfg.vocab_src])?;

        let mut enc_fwd = Vec::with_capacity(cfg.layers);
        let mut enc_bwd = Vec::with_capacity(cfg.layers);
        let mut dec = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let enc_in = if layer == 0 { d } else { h };
            enc_fwd.push(LstmCell::init(rng, enc_in, h));
            enc_bwd.push(LstmCell::init(rng, enc_in, h));
            // decoder layer 0 sees [token embedding; input feed]
            let dec_in = if layer == 0 { d + h } else { h };
            dec.push(LstmCell::init(rng, dec_in, h));
        }
        Ok(ModelParams {
            cfg,
            e_src,
            e_tgt,
            enc_fwd,
            enc_bwd,
            dec,
            w_attn,
            w_mix,
            w_out,
            b_out,
            w_src,
            b_src,
        })
    }

    /// Every trainable tensor with a stable name, in a fixed order shared by
    /// the optimizer and the checkpoint format.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("e_src".to_string(), self.e_src.clone()),
            ("e_tgt".to_string(), self.e_tgt.clone()),
        ];
        for (prefix, cells) in [
            ("enc_fwd", &self.enc_fwd),
            ("enc_bwd", &self.enc_bwd),
            ("dec", &self.dec),
        ] {
            for (i, cell) in cells.iter().enumerate() {
                out.push((format!("{prefix}{i}.w_ih"), cell.w_ih.clone()));
                out.push((format!("{prefix}{i}.w_hh"), cell.w_hh.clone()));
                out.push((format!("{prefix}{i}.b"), cell.b.clone()));
            }
        }
        out.push(("w_attn".to_string(), self.w_attn.clone()));
        out.push(("w_mix".to_string(), self.w_mix.clone()));
        out.push(("w_out".to_string(), self.w_out.clone()));
        out.push(("b_out".to_string(), self.b_out.clone()));
        out.push(("w_src".to_string(), self.w_src.clone()));
        out.push(("b_src".to_string(), self.b_src.clone()));
        out
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named() {
            t.zero_grad();
        }
    }
}

/// Encoder output: per-position states (top layer, directions summed) plus
/// the boundary states that seed the decoder.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    /// h_i = fwd_i + bwd_i, top layer.
    pub hs: Vec<Tensor>,
    /// The same states stacked as rows of an [I, H] matrix for attention.
    pub mat: Tensor,
    /// Forward chain at the last position, top layer.
    pub fwd_last: Tensor,
    /// Backward chain at the first position, top layer.
    pub bwd_first: Tensor,
    /// Full top-layer directional sequences (diagnostics and tests).
    pub fwd_seq: Vec<Tensor>,
    pub bwd_seq: Vec<Tensor>,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.hs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hs.is_empty()
    }
}

/// Decoder recurrence carry: per-layer hidden/cell plus the input feed
/// (previous step's mixed state).
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub hidden: Vec<Tensor>,
    pub cell: Vec<Tensor>,
    pub feed: Tensor,
}

/// Everything one decode step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Mixed state z (attention context folded into the decoder state).
    pub mixed: Tensor,
    /// Distribution over the target vocabulary.
    pub probs_tgt: Tensor,
    /// Distribution over the source vocabulary; absent on the
    /// inference-only path, which never evaluates the source head.
    pub probs_src: Option<Tensor>,
    /// Attention weights over source positions.
    pub attn: Tensor,
    pub state: DecoderState,
}

fn maybe_dropout(
    tape: &Tape,
    x: &Tensor,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let rng = rng.ok_or_else(|| Error::contract("dropout requires an RNG"))?;
    tape.dropout(x, rate, rng)
}

impl ModelParams {
    /// Run the bidirectional encoder over source ids. `dropout` is applied
    /// between stacked layers only (pass 0 outside training).
    pub fn encode(
        &self,
        tape: &Tape,
        ids: &[usize],
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderStates> {
        if ids.is_empty() {
            return Err(Error::contract("encode: empty source sequence"));
        }
        for &id in ids {
            if id >= self.cfg.vocab_src {
                return Err(Error::contract(format!(
                    "encode: source id {id} out of range for vocabulary {}",
                    self.cfg.vocab_src
                )));
            }
        }
        let h = self.cfg.dim_hidden;
        let n = ids.len();
        let mut layer_in: Vec<Tensor> = ids
            .iter()
            .map(|&id| tape.embed_row(&self.e_src, id))
            .collect::<Result<_>>()?;

        let mut top_fwd: Vec<Tensor> = Vec::new();
        let mut top_bwd: Vec<Tensor> = Vec::new();
        let mut summed: Vec<Tensor> = Vec::new();
        for layer in 0..self.cfg.layers {
            let mut fwd = Vec::with_capacity(n);
            let (mut hh, mut cc) = (Tensor::zeros(&[h]), Tensor::zeros(&[h]));
            for x in &layer_in {
                let (h2, c2) = self.enc_fwd[layer].step(tape, x, &hh, &cc)?;
                fwd.push(h2.clone());
                hh = h2;
                cc = c2;
            }
            let mut bwd = vec![Tensor::zeros(&[h]); n];
            let (mut hh, mut cc) = (Tensor::zeros(&[h]), Tensor::zeros(&[h]));
            for i in (0..n).rev() {
                let (h2, c2) = self.enc_bwd[layer].step(tape, &layer_in[i], &hh, &cc)?;
                bwd[i] = h2.clone();
                hh = h2;
                cc = c2;
            }
            summed = fwd
                .iter()
                .zip(bwd.iter())
                .map(|(f, b)| tape.add(f, b))
                .collect::<Result<_>>()?;
            let last_layer = layer + 1 == self.cfg.layers;
            if last_layer {
                top_fwd = fwd;
                top_bwd = bwd;
            } else {
                layer_in = summed
                    .iter()
                    .map(|s| maybe_dropout(tape, s, dropout, rng.as_deref_mut()))
                    .collect::<Result<_>>()?;
            }
        }

        let mat = tape.stack_rows(&summed.iter().collect::<Vec<_>>())?;
        Ok(EncoderStates {
            fwd_last: top_fwd[n - 1].clone(),
            bwd_first: top_bwd[0].clone(),
            fwd_seq: top_fwd,
            bwd_seq: top_bwd,
            hs: summed,
            mat,
        })
    }

    /// First decoder state: layer-0 hidden seeded with fwd_last + bwd_first,
    /// everything else zero (cells, upper hiddens, input feed).
    pub fn init_decoder(&self, tape: &Tape, enc: &EncoderStates) -> Result<DecoderState> {
        let h = self.cfg.dim_hidden;
        let mut hidden = vec![Tensor::zeros(&[h]); self.cfg.layers];
        hidden[0] = tape.add(&enc.fwd_last, &enc.bwd_first)?;
        Ok(DecoderState {
            hidden,
            cell: vec![Tensor::zeros(&[h]); self.cfg.layers],
            feed: Tensor::zeros(&[h]),
        })
    }

    fn step_core(
        &self,
        tape: &Tape,
        prev_id: usize,
        state: &DecoderState,
        enc: &EncoderStates,
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor, DecoderState)> {
        if prev_id >= self.cfg.vocab_tgt {
            return Err(Error::contract(format!(
                "decode_step: target id {prev_id} out of range for vocabulary {}",
                self.cfg.vocab_tgt
            )));
        }
        let emb = tape.embed_row(&self.e_tgt, prev_id)?;
        let mut x = tape.concat(&[&emb, &state.feed])?;
        let mut hidden = Vec::with_capacity(self.cfg.layers);
        let mut cell = Vec::with_capacity(self.cfg.layers);
        for layer in 0..self.cfg.layers {
            let (h2, c2) =
                self.dec[layer].step(tape, &x, &state.hidden[layer], &state.cell[layer])?;
            hidden.push(h2.clone());
            cell.push(c2);
            x = if layer + 1 < self.cfg.layers {
                maybe_dropout(tape, &h2, dropout, rng.as_deref_mut())?
            } else {
                h2
            };
        }
        let z_dec = hidden[self.cfg.layers - 1].clone();

        // bilinear attention over the encoder matrix
        let key = tape.matvec(&self.w_attn, &z_dec)?;
        let scores = tape.matvec(&enc.mat, &key)?;
        let attn = tape.softmax(&scores)?;
        let context = tape.matvec_t(&enc.mat, &attn)?;

        let u = tape.concat(&[&context, &z_dec])?;
        let mixed = tape.tanh(&tape.matvec(&self.w_mix, &u)?);
        let next = DecoderState {
            hidden,
            cell,
            feed: mixed.clone(),
        };
        Ok((mixed, attn, next))
    }

    fn target_head(&self, tape: &Tape, z: &Tensor) -> Result<Tensor> {
        tape.softmax(&tape.add(&tape.matvec(&self.w_out, z)?, &self.b_out)?)
    }

    fn source_head(&self, tape: &Tape, z: &Tensor) -> Result<Tensor> {
        tape.softmax(&tape.add(&tape.matvec(&self.w_src, z)?, &self.b_src)?)
    }

    /// One training/diagnostic decode step: both heads evaluated from the
    /// same mixed state. The recurrence feed always carries the clean z;
    /// dropout touches only the copy the heads read.
    pub fn decode_step(
        &self,
        tape: &Tape,
        prev_id: usize,
        state: &DecoderState,
        enc: &EncoderStates,
        dropout: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StepOutput> {
        let (mixed, attn, next) =
            self.step_core(tape, prev_id, state, enc, dropout, rng.as_deref_mut())?;
        let z_head = maybe_dropout(tape, &mixed, dropout, rng)?;
        let probs_tgt = self.target_head(tape, &z_head)?;
        let probs_src = self.source_head(tape, &z_head)?;
        Ok(StepOutput {
            mixed,
            probs_tgt,
            probs_src: Some(probs_src),
            attn,
            state: next,
        })
    }

    /// Inference decode step: identical arithmetic through the target
    /// distribution, source head never evaluated.
    pub fn decode_step_target(
        &self,
        tape: &Tape,
        prev_id: usize,
        state: &DecoderState,
        enc: &EncoderStates,
    ) -> Result<StepOutput> {
        let (mixed, attn, next) = self.step_core(tape, prev_id, state, enc, 0.0, None)?;
        let probs_tgt = self.target_head(tape, &mixed)?;
        Ok(StepOutput {
            mixed,
            probs_tgt,
            probs_src: None,
            attn,
            state: next,
        })
    }
}
