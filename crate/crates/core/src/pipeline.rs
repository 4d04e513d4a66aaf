//! Glue from raw dialog pairs to token ids and from token ids to losses.

use serde::{Deserialize, Serialize};

use crate::acquisition::{acquire, linearize_tuple, AcquiredKnowledge, AcquisitionConfig, DialogContext, RelationTuple};
use crate::composer::{compose, ComposedRepresentation, ContextInputs};
use crate::decoder::{decode_states, predict_token, semantic_enhance, total_loss, DecodeContext, LossWeights};
use crate::kb::{build_graph, KnowledgeBase, KnowledgeGraph};
use crate::model::Model;
use crate::regularizer::{project_semantic, regularization_loss, semantic_pair};
use crate::tensor::{Result, Tape, TensorError, Var};
use crate::text::{tokenize, Vocabulary, BOS_ID, EOS_ID};

/// A context and its ground-truth response tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogPair {
    pub context: DialogContext,
    pub response: Vec<String>,
}

impl DialogPair {
    pub fn new<S: AsRef<str>>(utterances: &[S], image_features: Vec<Vec<f64>>, response: &str) -> Self {
        Self { context: DialogContext::from_utterances(utterances, image_features), response: tokenize(response) }
    }
}

/// One pair after acquisition and indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub inputs: ContextInputs,
    pub tuples: Vec<RelationTuple>,
    pub response_ids: Vec<usize>,
}

impl Example {
    /// Decoder input `[BOS] + response`.
    pub fn decoder_prefix(&self) -> Vec<usize> {
        std::iter::once(BOS_ID).chain(self.response_ids.iter().copied()).collect()
    }

    /// Decoder targets `response + [EOS]`.
    pub fn targets(&self) -> Vec<usize> {
        self.response_ids.iter().copied().chain(std::iter::once(EOS_ID)).collect()
    }
}

/// Every token a model over this KB and corpus may need to read or emit.
pub fn build_vocabulary(kb: &KnowledgeBase, pairs: &[DialogPair]) -> Vocabulary {
    let mut tokens: Vec<String> = vec![":".into(), ";".into()];
    for e in kb.entities() {
        tokens.extend(tokenize(&e.name));
        for p in &e.attributes {
            tokens.extend(tokenize(&p.attribute_type));
            tokens.extend(tokenize(&p.value));
        }
    }
    for pair in pairs {
        tokens.extend(pair.context.text_tokens.iter().cloned());
        tokens.extend(pair.response.iter().cloned());
    }
    Vocabulary::build(tokens)
}

/// Image feature width for a model over this KB and corpus: the KB's, else the
/// first context image's, else 1. Mismatched context images are an error.
pub fn feature_dim_for(kb: &KnowledgeBase, pairs: &[DialogPair]) -> std::result::Result<usize, String> {
    let mut dim = kb.feature_dim();
    for (i, p) in pairs.iter().enumerate() {
        for f in &p.context.image_features {
            if dim == 0 {
                dim = f.len();
            }
            if f.len() != dim || dim == 0 {
                return Err(format!("pair {}: image feature of width {} where {dim} is expected", i + 1, f.len()));
            }
        }
    }
    Ok(dim.max(1))
}

/// Knowledge base, its graph and acquisition settings.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub kb: KnowledgeBase,
    pub graph: KnowledgeGraph,
    pub acquisition: AcquisitionConfig,
}

impl Pipeline {
    pub fn new(kb: KnowledgeBase, acquisition: AcquisitionConfig) -> Self {
        let graph = build_graph(&kb);
        Self { kb, graph, acquisition }
    }

    pub fn acquire(&self, ctx: &DialogContext) -> AcquiredKnowledge {
        acquire(ctx, &self.kb, &self.graph, &self.acquisition)
    }

    pub fn context_inputs(&self, vocab: &Vocabulary, ctx: &DialogContext) -> (ContextInputs, Vec<RelationTuple>) {
        let acquired = self.acquire(ctx);
        let tuple_ids = acquired
            .tuples
            .iter()
            .map(|t| {
                let toks: Vec<String> = linearize_tuple(t).iter().flat_map(|w| tokenize(w)).collect();
                vocab.ids(&toks)
            })
            .filter(|ids| !ids.is_empty())
            .collect();
        let inputs = ContextInputs {
            knowledge_ids: vocab.ids(&acquired.attributes.linearize()),
            text_ids: vocab.ids(&ctx.text_tokens),
            image_features: ctx.image_features.clone(),
            tuple_ids,
        };
        (inputs, acquired.tuples)
    }

    /// Indexes a pair. Responses longer than the position table allows are cut.
    pub fn prepare(&self, vocab: &Vocabulary, pair: &DialogPair, max_positions: usize) -> Example {
        let (inputs, tuples) = self.context_inputs(vocab, &pair.context);
        let mut response_ids = vocab.ids(&pair.response);
        let limit = max_positions.saturating_sub(1);
        if response_ids.len() > limit {
            log::warn!("response of {} tokens truncated to {limit}", response_ids.len());
            response_ids.truncate(limit);
        }
        Example { inputs, tuples, response_ids }
    }

    pub fn prepare_all(&self, vocab: &Vocabulary, pairs: &[DialogPair], max_positions: usize) -> Vec<Example> {
        pairs.iter().map(|p| self.prepare(vocab, p, max_positions)).collect()
    }
}

/// Handles produced by one teacher-forced training pass.
#[derive(Clone, Copy, Debug)]
pub struct TrainingPass {
    pub composed: ComposedRepresentation,
    pub semantic_composed: Var,
    pub semantic_truth: Var,
    pub ce: Var,
    pub reg: Var,
    pub loss: Var,
}

/// Compose, project both sides, decode the ground-truth prefixes with `T̃_r` and
/// combine the three loss terms.
pub fn training_pass(tape: &mut Tape, model: &Model, ex: &Example, w: LossWeights) -> Result<TrainingPass> {
    if ex.response_ids.is_empty() {
        return Err(TensorError::Invalid("empty response".into()));
    }
    let composed = compose(tape, model, &ex.inputs)?;
    let (semantic_composed, semantic_truth) = semantic_pair(tape, model, composed.t_c, &ex.response_ids)?;
    let reg = regularization_loss(tape, semantic_composed, semantic_truth)?;
    let states = decode_states(tape, model, composed.t_c, composed.e_k, &ex.decoder_prefix())?;
    let enhanced = semantic_enhance(tape, model, states, semantic_truth)?;
    let probs = predict_token(tape, model, enhanced)?;
    let ce = tape.cross_entropy_loss(probs, &ex.targets())?;
    let loss = total_loss(tape, model, ce, reg, w)?;
    Ok(TrainingPass { composed, semantic_composed, semantic_truth, ce, reg, loss })
}

/// Composition and `T̃_c` for inference, with the values pulled off the tape.
pub fn inference_context(model: &Model, inputs: &ContextInputs) -> Result<(DecodeContext, Tape, ComposedRepresentation)> {
    let mut tape = Tape::new();
    let composed = compose(&mut tape, model, inputs)?;
    let t_tilde = project_semantic(&mut tape, model, &model.composed_projection, composed.t_c)?;
    let ctx = DecodeContext {
        t_c: tape.value(composed.t_c).clone(),
        e_k: tape.value(composed.e_k).clone(),
        t_tilde: tape.value(t_tilde).clone(),
    };
    Ok((ctx, tape, composed))
}

/// Teacher-forced next-token predictions with inference-side enhancement (`T̃_c`).
/// Returns `(correct, total)` over the response positions and the end token.
pub fn teacher_forced_hits(model: &Model, ex: &Example) -> Result<(usize, usize)> {
    let mut tape = Tape::new();
    let composed = compose(&mut tape, model, &ex.inputs)?;
    let t_tilde = project_semantic(&mut tape, model, &model.composed_projection, composed.t_c)?;
    let states = decode_states(&mut tape, model, composed.t_c, composed.e_k, &ex.decoder_prefix())?;
    let enhanced = semantic_enhance(&mut tape, model, states, t_tilde)?;
    let probs = predict_token(&mut tape, model, enhanced)?;
    let p = tape.value(probs);
    let targets = ex.targets();
    let correct = targets
        .iter()
        .enumerate()
        .filter(|(i, &t)| crate::decoder::argmax(p.row_slice(*i)) == t)
        .count();
    Ok((correct, targets.len()))
}

/// Held-out `‖T̃_r − T̃_c‖²_F` for one example under the model's own projections.
pub fn semantic_distance(model: &Model, ex: &Example) -> Result<f64> {
    let mut tape = Tape::new();
    let composed = compose(&mut tape, model, &ex.inputs)?;
    let (c, r) = semantic_pair(&mut tape, model, composed.t_c, &ex.response_ids)?;
    let d = regularization_loss(&mut tape, c, r)?;
    Ok(tape.value(d).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainingConfig;
    use crate::kb::{AttributeValuePair, Entity};
    use crate::model::ModelShape;

    fn toy() -> (Pipeline, Vec<DialogPair>) {
        let kb = KnowledgeBase::from_entities(vec![
            Entity::new("Inaniwa Yosuke", vec![AttributeValuePair::new("near", "Wisma Atria"), AttributeValuePair::new("domain", "restaurant")]),
            Entity::new("Wisma Atria", vec![AttributeValuePair::new("domain", "mall")]),
        ])
        .unwrap();
        let pairs = vec![
            DialogPair::new(&["Is there a mall near Inaniwa Yosuke?"], vec![], "Yes, Wisma Atria."),
            DialogPair::new(&["Hello"], vec![], "Hi!"),
        ];
        (Pipeline::new(kb, TrainingConfig::default().acquisition()), pairs)
    }

    #[test]
    fn prepare_indexes_knowledge_and_tuples() {
        let (p, pairs) = toy();
        let vocab = build_vocabulary(&p.kb, &pairs);
        let ex = p.prepare(&vocab, &pairs[0], 256);
        assert_eq!(ex.tuples.len(), 2);
        let words: Vec<&str> = ex.inputs.tuple_ids[1].iter().map(|&i| vocab.token(i)).collect();
        assert!(words.contains(&"wisma") && words.contains(&"mall"));
        assert!(!ex.inputs.knowledge_ids.is_empty());
        assert_eq!(ex.decoder_prefix()[0], BOS_ID);
        assert_eq!(*ex.targets().last().unwrap(), EOS_ID);
        assert_eq!(ex.decoder_prefix().len(), ex.targets().len());

        let open = p.prepare(&vocab, &pairs[1], 256);
        assert!(open.tuples.is_empty() && open.inputs.knowledge_ids.is_empty());
        let short = p.prepare(&vocab, &pairs[0], 3);
        assert_eq!(short.response_ids.len(), 2);
    }

    #[test]
    fn feature_dim_resolution() {
        let (p, mut pairs) = toy();
        assert_eq!(feature_dim_for(&p.kb, &pairs), Ok(1));
        pairs[0].context.image_features = vec![vec![0.1, 0.2, 0.3]];
        assert_eq!(feature_dim_for(&p.kb, &pairs), Ok(3));
        pairs[1].context.image_features = vec![vec![0.1]];
        assert!(feature_dim_for(&p.kb, &pairs).is_err());
    }

    #[test]
    fn training_pass_is_finite_and_positive() {
        let (p, pairs) = toy();
        let vocab = build_vocabulary(&p.kb, &pairs);
        let cfg = TrainingConfig { d_model: 8, mlp_hidden: 8, n_p: 2, max_positions: 64, ..Default::default() };
        let model = Model::new(&cfg, ModelShape { vocab_size: vocab.len(), feature_dim: 1 });
        for pair in &pairs {
            let ex = p.prepare(&vocab, pair, 64);
            let mut tape = Tape::new();
            let pass = training_pass(&mut tape, &model, &ex, LossWeights::new(1.0, 0.1, 1e-6).unwrap()).unwrap();
            let loss = tape.value(pass.loss).item();
            assert!(loss.is_finite() && loss > 0.0);
            tape.backward(pass.loss).unwrap();
            let queries = tape.param(&model.store, model.latent_queries);
            let g = tape.grad(queries).unwrap();
            assert!(g.sum_sq() > 0.0);
            let (hit, total) = teacher_forced_hits(&model, &ex).unwrap();
            assert!(hit <= total && total == ex.response_ids.len() + 1);
            assert!(semantic_distance(&model, &ex).unwrap() >= 0.0);
        }
    }
}
