//! Autoregressive decoder with a knowledge sub-layer, semantic enhancement of the
//! decoder output, token prediction, the combined objective, and search.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::composer::embed_ids;
use crate::model::Model;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};
use crate::text::{BOS_ID, EOS_ID};

/// Decoder states for every prefix position, `n×D`. Row `j` only depends on
/// `prefix[..=j]`. The knowledge sub-layer is skipped when `e_k` has no rows.
pub fn decode_states(tape: &mut Tape, model: &Model, t_c: Var, e_k: Var, prefix: &[usize]) -> Result<Var> {
    if prefix.is_empty() {
        return Err(TensorError::Invalid("empty decoder prefix".into()));
    }
    let store = &model.store;
    let scaled = model.scaled();
    let has_knowledge = tape.shape(e_k).0 > 0;
    let mut x = embed_ids(tape, model, prefix, 0)?;
    for block in &model.decoder {
        let a = block.self_attn.apply(tape, store, x, x, scaled, true)?;
        let h = tape.add(x, a.output)?;
        x = block.ln_self.apply(tape, store, h)?;
        if has_knowledge {
            let a = block.knowledge_attn.apply(tape, store, x, e_k, scaled, false)?;
            let h = tape.add(x, a.output)?;
            x = block.ln_knowledge.apply(tape, store, h)?;
        }
        let a = block.cross_attn.apply(tape, store, x, t_c, scaled, false)?;
        let h = tape.add(x, a.output)?;
        x = block.ln_cross.apply(tape, store, h)?;
        let m = block.mlp.apply(tape, store, x)?;
        let h = tape.add(x, m)?;
        x = block.ln_mlp.apply(tape, store, h)?;
    }
    Ok(x)
}

/// `z̄_j`: the final-block state at the last prefix position.
pub fn decode_step(tape: &mut Tape, model: &Model, t_c: Var, e_k: Var, prefix: &[usize]) -> Result<Var> {
    let states = decode_states(tape, model, t_c, e_k, prefix)?;
    tape.slice_rows(states, prefix.len() - 1, 1)
}

/// `LN(z̄ + attn(z̄, T̃))`, row-wise for any number of decoder states.
pub fn semantic_enhance(tape: &mut Tape, model: &Model, z: Var, t_tilde: Var) -> Result<Var> {
    let a = model.enhance_attn.apply(tape, &model.store, z, t_tilde, model.scaled(), false)?;
    let h = tape.add(z, a.output)?;
    model.enhance_ln.apply(tape, &model.store, h)
}

/// `softmax(ẑ·W_y + b_y)` per row.
pub fn predict_token(tape: &mut Tape, model: &Model, z_hat: Var) -> Result<Var> {
    let w = tape.param(&model.store, model.head.w);
    let b = tape.param(&model.store, model.head.b);
    let logits = tape.linear(z_hat, w, b)?;
    Ok(tape.softmax_rows(logits))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(lambda: f64, gamma: f64, beta: f64) -> std::result::Result<Self, String> {
        let all = [lambda, gamma, beta];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err("loss weights must be non-negative".into());
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err("loss weights cannot all be zero".into());
        }
        Ok(Self { lambda, gamma, beta })
    }
}

/// `λ·ce + γ·reg + β·Σθ²` where the penalty covers every tensor in the model's store.
pub fn total_loss(tape: &mut Tape, model: &Model, ce: Var, reg: Var, w: LossWeights) -> Result<Var> {
    let mut loss = tape.scale(ce, w.lambda);
    let r = tape.scale(reg, w.gamma);
    loss = tape.add(loss, r)?;
    if w.beta != 0.0 {
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let p = tape.param(&model.store, id);
            let sq = tape.sum_sq(p);
            let sq = tape.scale(sq, w.beta);
            loss = tape.add(loss, sq)?;
        }
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Greedy
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "greedy" {
            return Ok(Strategy::Greedy);
        }
        let width = s
            .strip_prefix("beam:")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| *k >= 1)
            .ok_or_else(|| format!("unknown strategy {s:?}; expected greedy or beam:k"))?;
        Ok(if width == 1 { Strategy::Greedy } else { Strategy::Beam(width) })
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Greedy => write!(f, "greedy"),
            Strategy::Beam(k) => write!(f, "beam:{k}"),
        }
    }
}

/// Fixed inputs of a generation: values of `T_c`, `E_k` and `T̃_c`.
#[derive(Clone, Debug)]
pub struct DecodeContext {
    pub t_c: Tensor,
    pub e_k: Tensor,
    pub t_tilde: Tensor,
}

/// Next-token distribution after `prefix`, evaluated on a fresh tape.
pub fn next_distribution(model: &Model, ctx: &DecodeContext, prefix: &[usize]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let t_c = tape.constant(ctx.t_c.clone());
    let e_k = tape.constant(ctx.e_k.clone());
    let t_tilde = tape.constant(ctx.t_tilde.clone());
    let z = decode_step(&mut tape, model, t_c, e_k, prefix)?;
    let z_hat = semantic_enhance(&mut tape, model, z, t_tilde)?;
    let p = predict_token(&mut tape, model, z_hat)?;
    Ok(tape.value(p).data().to_vec())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Decodes from the begin token until the end token or `max_len` tokens. The
/// returned ids exclude both markers.
pub fn generate(model: &Model, ctx: &DecodeContext, max_len: usize, strategy: Strategy) -> Result<Vec<usize>> {
    match strategy {
        Strategy::Greedy => greedy(model, ctx, max_len),
        Strategy::Beam(k) => beam(model, ctx, max_len, k),
    }
}

fn greedy(model: &Model, ctx: &DecodeContext, max_len: usize) -> Result<Vec<usize>> {
    let mut prefix = vec![BOS_ID];
    while prefix.len() <= max_len {
        let next = argmax(&next_distribution(model, ctx, &prefix)?);
        if next == EOS_ID {
            break;
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
}

/// Higher score first, then lexicographically smaller tokens.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens))
}

fn beam(model: &Model, ctx: &DecodeContext, max_len: usize, width: usize) -> Result<Vec<usize>> {
    let mut live = vec![Hypothesis { tokens: vec![BOS_ID], log_prob: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..=max_len {
        let mut candidates = Vec::new();
        for hyp in &live {
            let dist = next_distribution(model, ctx, &hyp.tokens)?;
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&i, &j| dist[j].total_cmp(&dist[i]).then(i.cmp(&j)));
            for &tok in order.iter().take(width) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok);
                let log_prob = hyp.log_prob + dist[tok].max(f64::MIN_POSITIVE).ln();
                candidates.push(Hypothesis { tokens, log_prob });
            }
        }
        candidates.sort_by(rank);
        live.clear();
        for c in candidates.into_iter().take(width) {
            if c.tokens.last() == Some(&EOS_ID) || c.tokens.len() > max_len {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live);
    finished.sort_by(rank);
    let best = finished.into_iter().next().map(|h| h.tokens).unwrap_or_default();
    Ok(best.into_iter().filter(|&t| t != BOS_ID && t != EOS_ID).collect())
}
