use super::attention::{attention_forward, TokenSequence};
use super::config::ModelConfig;
use super::layers::{feed_forward, linear, norm, Activation, Dropout};
use super::params::{
    AttentionParams, BlockParams, ConformerParams, ConvModuleParams, FeedForwardParams, Norm, TransformerParams,
};
use crate::error::Result;
use crate::tensor::{Tape, Var};

/// `LN → pointwise D→2D → GLU → depthwise conv → LN → swish → pointwise D→D`.
pub fn conv_module(tape: &mut Tape, x: Var, p: &ConvModuleParams<Var>, eps: f64) -> Result<Var> {
    let d = tape.shape(x)[1];
    let h = norm(tape, x, &p.norm, eps)?;
    let h = linear(tape, h, &p.pointwise_in)?;
    let lhs = tape.slice(h, 1, 0, d)?;
    let gate = tape.slice(h, 1, d, 2 * d)?;
    let gate = tape.sigmoid(gate);
    let h = tape.mul(lhs, gate)?;
    let h = tape.depthwise_conv1d(h, p.depthwise)?;
    let h = tape.add_row(h, p.depthwise_bias)?;
    let h = norm(tape, h, &p.depthwise_norm, eps)?;
    let h = tape.silu(h);
    linear(tape, h, &p.pointwise_out)
}

fn half_step_ffn(
    tape: &mut Tape,
    x: Var,
    p: &FeedForwardParams<Var>,
    cfg: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<Var> {
    let h = feed_forward(tape, x, p, Activation::Swish, cfg.layer_norm_eps)?;
    let h = dropout.apply(tape, h)?;
    let h = tape.scale(h, 0.5);
    tape.add(x, h)
}

fn attention_residual(
    tape: &mut Tape,
    seq: &TokenSequence,
    pre_norm: &Norm<Var>,
    attention: &AttentionParams<Var>,
    cfg: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<Var> {
    let normed = TokenSequence {
        tokens: norm(tape, seq.tokens, pre_norm, cfg.layer_norm_eps)?,
        len: seq.len,
    };
    let a = attention_forward(tape, &normed, attention, cfg)?;
    let a = dropout.apply(tape, a.tokens)?;
    tape.add(seq.tokens, a)
}

/// Macaron Conformer block: ½FFN, attention, conv module, ½FFN, each with a
/// residual, then a final layer norm. The attention sub-layer is TCM or
/// plain MHSA per the toggles.
pub fn conformer_block_forward(
    tape: &mut Tape,
    seq: &TokenSequence,
    p: &ConformerParams<Var>,
    cfg: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<TokenSequence> {
    let eps = cfg.layer_norm_eps;
    let x = half_step_ffn(tape, seq.tokens, &p.ffn1, cfg, dropout)?;
    let x = TokenSequence {
        tokens: x,
        len: seq.len,
    };
    let x = attention_residual(tape, &x, &p.attn_norm, &p.attention, cfg, dropout)?;
    let c = conv_module(tape, x, &p.conv, eps)?;
    let x = tape.add(x, c)?;
    let x = half_step_ffn(tape, x, &p.ffn2, cfg, dropout)?;
    let tokens = norm(tape, x, &p.final_norm, eps)?;
    Ok(TokenSequence { tokens, len: seq.len })
}

/// Pre-norm Transformer encoder block with a GeLU feed-forward.
pub fn transformer_block_forward(
    tape: &mut Tape,
    seq: &TokenSequence,
    p: &TransformerParams<Var>,
    cfg: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<TokenSequence> {
    let x = attention_residual(tape, seq, &p.attn_norm, &p.attention, cfg, dropout)?;
    let f = feed_forward(tape, x, &p.ffn, Activation::Gelu, cfg.layer_norm_eps)?;
    let f = dropout.apply(tape, f)?;
    let tokens = tape.add(x, f)?;
    Ok(TokenSequence { tokens, len: seq.len })
}

pub fn block_forward(
    tape: &mut Tape,
    seq: &TokenSequence,
    p: &BlockParams<Var>,
    cfg: &ModelConfig,
    dropout: &mut Dropout,
) -> Result<TokenSequence> {
    match p {
        BlockParams::Conformer(c) => conformer_block_forward(tape, seq, c, cfg, dropout),
        BlockParams::Transformer(t) => transformer_block_forward(tape, seq, t, cfg, dropout),
    }
}
