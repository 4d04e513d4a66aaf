//! Parameter layout of the full model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainingConfig;
use crate::tensor::{AttentionParams, GradCheckReport, LayerNormParams, MlpParams, ParamId, ParamStore, Result, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    pub attn: AttentionParams,
    pub ln_attn: LayerNormParams,
    pub mlp: MlpParams,
    pub ln_mlp: LayerNormParams,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderBlock {
    pub self_attn: AttentionParams,
    pub ln_self: LayerNormParams,
    pub knowledge_attn: AttentionParams,
    pub ln_knowledge: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln_cross: LayerNormParams,
    pub mlp: MlpParams,
    pub ln_mlp: LayerNormParams,
}

/// Weights of the attention-based fusion of `T_t` and the reorganized relations.
#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub w_t: ParamId,
    pub b_t: ParamId,
    pub w_h: ParamId,
    pub b_h: ParamId,
    /// `D×1` query vector scoring each side.
    pub a: ParamId,
}

/// Attention from the latent queries plus the residual MLP.
#[derive(Clone, Copy, Debug)]
pub struct SemanticProjection {
    pub attn: AttentionParams,
    pub mlp: MlpParams,
}

#[derive(Clone, Copy, Debug)]
pub struct OutputHead {
    pub w: ParamId,
    pub b: ParamId,
}

/// Static shape information needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: TrainingConfig,
    pub shape: ModelShape,
    pub store: ParamStore,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub image_w: ParamId,
    pub image_b: ParamId,
    pub image_ln: LayerNormParams,
    pub encoder: Vec<EncoderBlock>,
    pub relation_attn: AttentionParams,
    pub fusion: FusionParams,
    pub latent_queries: ParamId,
    pub composed_projection: SemanticProjection,
    pub ground_truth_projection: SemanticProjection,
    pub decoder: Vec<DecoderBlock>,
    pub enhance_attn: AttentionParams,
    pub enhance_ln: LayerNormParams,
    pub head: OutputHead,
}

impl Model {
    /// Registers every parameter in a fixed order. Weights are uniform in
    /// `[-init_scale, init_scale]` from a ChaCha stream seeded with `cfg.seed`;
    /// layer-norm gains start at one and their biases at zero.
    pub fn new(cfg: &TrainingConfig, shape: ModelShape) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let rng = &mut rng;
        let d = cfg.d_model;
        let s = cfg.init_scale;
        let h = cfg.mlp_hidden;
        let mut store = ParamStore::new();

        let token_embedding = store.add("embed.tokens", Tensor::uniform(shape.vocab_size, d, s, rng));
        let position_embedding = store.add("embed.positions", Tensor::uniform(cfg.max_positions, d, s, rng));
        let image_w = store.add("image.w", Tensor::uniform(shape.feature_dim, d, s, rng));
        let image_b = store.add("image.b", Tensor::uniform(1, d, s, rng));
        let image_ln = LayerNormParams::register(&mut store, "image.ln", d);

        let encoder = (0..cfg.l_enc)
            .map(|i| {
                let p = format!("encoder.{i}");
                EncoderBlock {
                    attn: AttentionParams::register(&mut store, &format!("{p}.attn"), d, s, rng),
                    ln_attn: LayerNormParams::register(&mut store, &format!("{p}.ln_attn"), d),
                    mlp: MlpParams::register(&mut store, &format!("{p}.mlp"), d, h, s, rng),
                    ln_mlp: LayerNormParams::register(&mut store, &format!("{p}.ln_mlp"), d),
                }
            })
            .collect();

        let relation_attn = AttentionParams::register(&mut store, "relation.attn", d, s, rng);
        let fusion = FusionParams {
            w_t: store.add("fusion.w_t", Tensor::uniform(d, d, s, rng)),
            b_t: store.add("fusion.b_t", Tensor::uniform(1, d, s, rng)),
            w_h: store.add("fusion.w_h", Tensor::uniform(d, d, s, rng)),
            b_h: store.add("fusion.b_h", Tensor::uniform(1, d, s, rng)),
            a: store.add("fusion.a", Tensor::uniform(d, 1, s, rng)),
        };

        let latent_queries = store.add("semantic.latent_queries", Tensor::uniform(cfg.n_p, d, s, rng));
        let mut projection = |side: &str, store: &mut ParamStore| SemanticProjection {
            attn: AttentionParams::register(store, &format!("semantic.{side}.attn"), d, s, rng),
            mlp: MlpParams::register(store, &format!("semantic.{side}.mlp"), d, h, s, rng),
        };
        let composed_projection = projection("composed", &mut store);
        let ground_truth_projection = projection("ground_truth", &mut store);

        let decoder = (0..cfg.l_dec)
            .map(|i| {
                let p = format!("decoder.{i}");
                DecoderBlock {
                    self_attn: AttentionParams::register(&mut store, &format!("{p}.self_attn"), d, s, rng),
                    ln_self: LayerNormParams::register(&mut store, &format!("{p}.ln_self"), d),
                    knowledge_attn: AttentionParams::register(&mut store, &format!("{p}.knowledge_attn"), d, s, rng),
                    ln_knowledge: LayerNormParams::register(&mut store, &format!("{p}.ln_knowledge"), d),
                    cross_attn: AttentionParams::register(&mut store, &format!("{p}.cross_attn"), d, s, rng),
                    ln_cross: LayerNormParams::register(&mut store, &format!("{p}.ln_cross"), d),
                    mlp: MlpParams::register(&mut store, &format!("{p}.mlp"), d, h, s, rng),
                    ln_mlp: LayerNormParams::register(&mut store, &format!("{p}.ln_mlp"), d),
                }
            })
            .collect();

        let enhance_attn = AttentionParams::register(&mut store, "enhance.attn", d, s, rng);
        let enhance_ln = LayerNormParams::register(&mut store, "enhance.ln", d);
        let head = OutputHead {
            w: store.add("output.w", Tensor::uniform(d, shape.vocab_size, s, rng)),
            b: store.add("output.b", Tensor::uniform(1, shape.vocab_size, s, rng)),
        };

        Self {
            cfg: cfg.clone(),
            shape,
            store,
            token_embedding,
            position_embedding,
            image_w,
            image_b,
            image_ln,
            encoder,
            relation_attn,
            fusion,
            latent_queries,
            composed_projection,
            ground_truth_projection,
            decoder,
            enhance_attn,
            enhance_ln,
            head,
        }
    }

    /// Central finite-difference check of a scalar function of this model's
    /// parameters and of `inputs`. Only parameters the function actually binds are
    /// probed; in the report, input `k` is `inputs[k]` and input `inputs.len() + i`
    /// is parameter `i`.
    pub fn check_gradients<F>(&self, inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &Model, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
        let out = f(&mut tape, self, &vars)?;
        tape.backward(out)?;
        let input_grads: Vec<Option<Tensor>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
        let param_grads: Vec<(ParamId, Option<Tensor>)> =
            tape.bound_params().into_iter().map(|(id, v)| (id, tape.grad(v).cloned())).collect();

        let eval = |m: &Model, probe: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
            let out = f(&mut tape, m, &vars)?;
            Ok(tape.value(out).item())
        };
        let grad_at = |g: &Option<Tensor>, j: usize| g.as_ref().map_or(0.0, |g| g.data()[j]);

        let mut report = GradCheckReport::new();
        let mut probe = inputs.to_vec();
        for (i, g) in input_grads.iter().enumerate() {
            for j in 0..probe[i].len() {
                let orig = probe[i].data()[j];
                probe[i].data_mut()[j] = orig + step;
                let plus = eval(self, &probe)?;
                probe[i].data_mut()[j] = orig - step;
                let minus = eval(self, &probe)?;
                probe[i].data_mut()[j] = orig;
                report.record(i, j, grad_at(g, j), (plus - minus) / (2.0 * step));
            }
        }
        let mut m = self.clone();
        for (id, g) in &param_grads {
            for j in 0..m.store.get(*id).len() {
                let orig = m.store.get(*id).data()[j];
                m.store.get_mut(*id).data_mut()[j] = orig + step;
                let plus = eval(&m, inputs)?;
                m.store.get_mut(*id).data_mut()[j] = orig - step;
                let minus = eval(&m, inputs)?;
                m.store.get_mut(*id).data_mut()[j] = orig;
                report.record(inputs.len() + id.index(), j, grad_at(g, j), (plus - minus) / (2.0 * step));
            }
        }
        Ok(report)
    }

    pub fn d_model(&self) -> usize {
        self.cfg.d_model
    }

    pub fn scaled(&self) -> bool {
        self.cfg.attention_scaling
    }
}
