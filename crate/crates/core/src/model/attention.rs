//! Plain multi-head self-attention and the temporal-channel (TCM) variant.
//!
//! TCM summarizes each of the `H` channel segments of the sequence as a
//! "head token", lets the temporal tokens and head tokens attend to each other
//! in one `T+H+1` long attention call, and finally folds the mean head token
//! and mean temporal token back into the CLS row. Input and output are both
//! `(T+1)×D`.

use super::config::ModelConfig;
use super::layers::linear;
use super::params::{AttentionParams, HeadTokenParams, MhsaParams};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// `(T+1)×D` activations with the classification token at row 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Var,
    /// Number of temporal tokens `T` (rows after CLS).
    pub len: usize,
}

impl TokenSequence {
    pub fn rows(&self) -> usize {
        self.len + 1
    }
}

/// Concatenates the CLS vector in front of `x[T×D]`.
pub fn prepend_cls(tape: &mut Tape, x: Var, cls: Var) -> Result<TokenSequence> {
    let (t, d) = match tape.shape(x) {
        &[t, d] => (t, d),
        s => {
            return Err(Error::Rank {
                op: "prepend_cls",
                expected: "rank 2",
                shape: s.to_vec(),
            })
        }
    };
    if tape.value(cls).numel() != d {
        return Err(Error::Dimension {
            op: "prepend_cls",
            lhs: vec![t, d],
            rhs: tape.shape(cls).to_vec(),
        });
    }
    let cls_row = tape.reshape(cls, &[1, d])?;
    let tokens = tape.concat(&[cls_row, x], 0)?;
    Ok(TokenSequence { tokens, len: t })
}

/// Multi-head attention: per-head softmax(QKᵀ/√d)·V, heads
/// concatenated, then the output projection.
pub fn mhsa_forward(tape: &mut Tape, x: Var, p: &MhsaParams<Var>, heads: usize) -> Result<Var> {
    let q = linear(tape, x, &p.query)?;
    let k = linear(tape, x, &p.key)?;
    let v = linear(tape, x, &p.value)?;
    let o = tape.attention(q, k, v, heads)?;
    linear(tape, o, &p.output)
}

/// Builds the `H×D` head tokens.
///
/// The channel axis is split into `H` contiguous segments of `d = D/H`; each
/// segment is averaged over the tokens, passed through the shared `d→D`
/// affine map and GeLU, and (optionally) offset by its row of the learnable
/// head-token embedding.
pub fn generate_head_tokens(
    tape: &mut Tape,
    seq: &TokenSequence,
    p: &HeadTokenParams<Var>,
    cfg: &ModelConfig,
) -> Result<Var> {
    let d_model = tape.shape(seq.tokens)[1];
    let heads = cfg.heads;
    if heads == 0 || !d_model.is_multiple_of(heads) {
        return Err(Error::config(format!(
            "model dim {d_model} not divisible by {heads} heads"
        )));
    }
    let pooled_src = if cfg.head_pool_includes_cls || seq.len == 0 {
        seq.tokens
    } else {
        tape.slice(seq.tokens, 0, 1, seq.rows())?
    };
    let pooled = tape.mean_rows(pooled_src)?;
    let segments = tape.reshape(pooled, &[heads, d_model / heads])?;
    let projected = linear(tape, segments, &p.proj)?;
    let tokens = tape.gelu(projected);
    if !cfg.toggles.ht_embedding {
        return Ok(tokens);
    }
    let emb = p
        .embedding
        .ok_or_else(|| Error::config("ht_embedding is on but the model has no head-token embedding"))?;
    tape.add(tokens, emb)
}

/// Runs MHSA over the temporal tokens, with the head tokens appended when
/// `ht_in_mhsa` is on. Returns `(temporal_out[(T+1)×D], head_out[H×D])`;
/// with `ht_in_mhsa` off the head tokens come back untouched.
pub fn tcm_attention(
    tape: &mut Tape,
    seq: &TokenSequence,
    head_tokens: Var,
    p: &MhsaParams<Var>,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    if !cfg.toggles.ht_in_mhsa {
        let out = mhsa_forward(tape, seq.tokens, p, cfg.heads)?;
        return Ok((out, head_tokens));
    }
    let h = tape.shape(head_tokens)[0];
    let joint = tape.concat(&[seq.tokens, head_tokens], 0)?;
    let out = mhsa_forward(tape, joint, p, cfg.heads)?;
    let temporal = tape.slice(out, 0, 0, seq.rows())?;
    let head = tape.slice(out, 0, seq.rows(), seq.rows() + h)?;
    Ok((temporal, head))
}

/// Adds the mean head token and/or mean temporal token to the CLS row and
/// drops the head tokens.
pub fn enrich_cls(
    tape: &mut Tape,
    temporal_out: Var,
    head_out: Var,
    len: usize,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    let t = cfg.toggles;
    if !t.add_mean_ht_to_cls && !t.add_mean_tt_to_cls {
        return Ok(TokenSequence {
            tokens: temporal_out,
            len,
        });
    }
    let d = tape.shape(temporal_out)[1];
    let mut cls = tape.slice(temporal_out, 0, 0, 1)?;
    if t.add_mean_ht_to_cls {
        let m = tape.mean_rows(head_out)?;
        let m = tape.reshape(m, &[1, d])?;
        cls = tape.add(cls, m)?;
    }
    if t.add_mean_tt_to_cls {
        let first = if cfg.mean_tt_includes_cls { 0 } else { 1 };
        // With no temporal tokens there is nothing to average.
        if len + 1 > first {
            let rows = tape.slice(temporal_out, 0, first, len + 1)?;
            let m = tape.mean_rows(rows)?;
            let m = tape.reshape(m, &[1, d])?;
            cls = tape.add(cls, m)?;
        }
    }
    let rest = tape.slice(temporal_out, 0, 1, len + 1)?;
    let tokens = tape.concat(&[cls, rest], 0)?;
    Ok(TokenSequence { tokens, len })
}

/// Head-token generation → joint attention → CLS enrichment.
pub fn tcm_forward(
    tape: &mut Tape,
    seq: &TokenSequence,
    mhsa: &MhsaParams<Var>,
    head_params: &HeadTokenParams<Var>,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    let head_tokens = generate_head_tokens(tape, seq, head_params, cfg)?;
    let (temporal, head) = tcm_attention(tape, seq, head_tokens, mhsa, cfg)?;
    enrich_cls(tape, temporal, head, seq.len, cfg)
}

/// The attention sub-layer of a block: TCM when enabled, plain MHSA otherwise.
pub fn attention_forward(
    tape: &mut Tape,
    seq: &TokenSequence,
    p: &AttentionParams<Var>,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    match (&p.head_tokens, cfg.toggles.use_tcm) {
        (Some(hp), true) => tcm_forward(tape, seq, &p.mhsa, hp, cfg),
        (None, true) => Err(Error::config(
            "use_tcm is on but the block has no head-token parameters",
        )),
        (_, false) => {
            let tokens = mhsa_forward(tape, seq.tokens, &p.mhsa, cfg.heads)?;
            Ok(TokenSequence { tokens, len: seq.len })
        }
    }
}
