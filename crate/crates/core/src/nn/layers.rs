//! Layer building blocks recorded on a [`Tape`].

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the model.
pub const LN_EPS: f64 = 1e-5;

/// `y = x·W + b`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xs = tape.value(x).shape().to_vec();
    let ws = tape.value(w).shape().to_vec();
    let bs = tape.value(b).shape().to_vec();
    let ok = xs.len() == 2 && ws.len() == 2 && xs[1] == ws[0] && bs.last() == Some(&ws[1]);
    if !ok {
        return Err(Error::dims("linear", &xs, &ws));
    }
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Single-head attention with the projections inside the product:
/// `Softmax(Q·Wq·(K·Wk)ᵀ / √C) · V·Wv`, where `C` is the projected query/key width.
///
/// Returns the output and the attention-weight matrix `[nq, nk]`.
pub fn scaled_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    wq: Var,
    wk: Var,
    wv: Var,
) -> Result<(Var, Var)> {
    if tape.value(k).rows() == 0 || tape.value(v).rows() == 0 {
        return Err(Error::EmptyInput("attention memory has no keys".into()));
    }
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::dims(
            "scaled_attention",
            tape.value(k).shape(),
            tape.value(v).shape(),
        ));
    }
    let qp = tape.matmul(q, wq)?;
    let kp = tape.matmul(k, wk)?;
    let vp = tape.matmul(v, wv)?;
    attend_projected(tape, qp, kp, vp)
}

fn attend_projected(tape: &mut Tape, qp: Var, kp: Var, vp: Var) -> Result<(Var, Var)> {
    let c = tape.value(qp).cols();
    let logits = tape.matmul_nt(qp, kp)?;
    let logits = tape.scale(logits, 1.0 / (c as f64).sqrt());
    let weights = tape.softmax_rows(logits)?;
    let out = tape.matmul(weights, vp)?;
    Ok((out, weights))
}

/// Projection weights of one multi-head attention block.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head attention: full-width projections are split column-wise into
/// `heads` slices, each slice attends independently with its own `√C_head`
/// scale, and the concatenated heads go through the output projection.
///
/// Residual and normalization are left to the caller. Returns the output and
/// the per-head attention weights.
pub fn multi_head(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    p: &MultiHeadVars,
) -> Result<(Var, Vec<Var>)> {
    if tape.value(k).rows() == 0 {
        return Err(Error::EmptyInput("attention memory has no keys".into()));
    }
    let width = tape.value(p.wq).cols();
    if heads == 0 || width % heads != 0 {
        return Err(Error::Config(format!(
            "attention width {width} is not divisible by {heads} heads"
        )));
    }
    let hd = width / heads;
    let qp = tape.matmul(q, p.wq)?;
    let kp = tape.matmul(k, p.wk)?;
    let vp = tape.matmul(v, p.wv)?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * hd, (h + 1) * hd);
        let (qh, kh, vh) = if heads == 1 {
            (qp, kp, vp)
        } else {
            (
                tape.slice_cols(qp, a, b)?,
                tape.slice_cols(kp, a, b)?,
                tape.slice_cols(vp, a, b)?,
            )
        };
        let (o, w) = attend_projected(tape, qh, kh, vh)?;
        outs.push(o);
        weights.push(w);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    let out = linear(tape, cat, p.wo, p.bo)?;
    Ok((out, weights))
}

/// Post-norm residual: `LN(x + sub)`.
pub fn residual_norm(tape: &mut Tape, x: Var, sub: Var, scale: Var, shift: Var) -> Result<Var> {
    let s = tape.add(x, sub)?;
    tape.layer_norm(s, scale, shift, LN_EPS)
}
