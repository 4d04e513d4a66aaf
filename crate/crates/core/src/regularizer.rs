//! Projection of token-level representations into a fixed set of latent slots, and
//! the distance between the slots of the composed context and of the ground truth.

use crate::composer::{embed_ids, encode};
use crate::model::{Model, SemanticProjection};
use crate::tensor::{Result, Tape, TensorError, Var};

/// `T̄ = attn(P_g, T)` followed by `T̃ = T̄ + MLP(T̄)`. The output always has `N_P` rows.
pub fn project_semantic(tape: &mut Tape, model: &Model, proj: &SemanticProjection, t: Var) -> Result<Var> {
    let queries = tape.param(&model.store, model.latent_queries);
    let att = proj.attn.apply(tape, &model.store, queries, t, model.scaled(), false)?;
    let m = proj.mlp.apply(tape, &model.store, att.output)?;
    tape.add(att.output, m)
}

/// Encodes the ground-truth response with the shared context encoder.
pub fn encode_ground_truth(tape: &mut Tape, model: &Model, response_ids: &[usize]) -> Result<Var> {
    if response_ids.is_empty() {
        return Err(TensorError::Invalid("empty ground-truth response".into()));
    }
    let e = embed_ids(tape, model, response_ids, 0)?;
    encode(tape, model, e)
}

/// Projections of both sides: `(T̃_c, T̃_r)`.
pub fn semantic_pair(tape: &mut Tape, model: &Model, t_c: Var, response_ids: &[usize]) -> Result<(Var, Var)> {
    let composed = project_semantic(tape, model, &model.composed_projection, t_c)?;
    let t_r = encode_ground_truth(tape, model, response_ids)?;
    let truth = project_semantic(tape, model, &model.ground_truth_projection, t_r)?;
    Ok((composed, truth))
}

/// `‖T̃_r − T̃_c‖²_F`.
pub fn regularization_loss(tape: &mut Tape, composed: Var, truth: Var) -> Result<Var> {
    tape.frobenius_distance_sq(truth, composed)
}
