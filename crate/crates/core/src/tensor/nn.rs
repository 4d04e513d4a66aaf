//! Composite layers built from tape primitives, and their parameter bundles.

use rand::Rng;

use super::{ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

impl Tape {
    /// `x · w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Single-head attention `softmax((q_src·W_Q)(kv_src·W_K)ᵀ)·(kv_src·W_V)`.
    ///
    /// With `scaled` the scores are divided by `√D`. With `causal` query row `i`
    /// only attends to key rows `0..=i`.
    #[allow(clippy::too_many_arguments)]
    pub fn cross_attention(
        &mut self,
        q_src: Var,
        kv_src: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        scaled: bool,
        causal: bool,
    ) -> Result<AttentionOutput> {
        if self.shape(kv_src).0 == 0 {
            return Err(TensorError::Invalid("attention over zero keys".into()));
        }
        let q = self.matmul(q_src, wq)?;
        let k = self.matmul(kv_src, wk)?;
        let v = self.matmul(kv_src, wv)?;
        let mut scores = self.matmul_nt(q, k)?;
        if scaled {
            let d = self.shape(k).1 as f64;
            scores = self.scale(scores, 1.0 / d.sqrt());
        }
        let weights = if causal {
            self.causal_softmax_rows(scores)
        } else {
            self.softmax_rows(scores)
        };
        let output = self.matmul(weights, v)?;
        Ok(AttentionOutput { output, weights })
    }

    /// Two-layer perceptron `tanh(x·W1 + b1)·W2 + b2`.
    pub fn mlp(&mut self, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
        let h = self.linear(x, w1, b1)?;
        let h = self.tanh(h);
        self.linear(h, w2, b2)
    }

    /// `Σ (a − b)²` as a `1×1` node.
    pub fn frobenius_distance_sq(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.sub(a, b)?;
        Ok(self.sum_sq(diff))
    }

    /// Mean negative log-likelihood of the targets under row-wise distributions.
    pub fn cross_entropy_loss(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        self.nll(probs, targets)
    }
}

/// Result of an attention call; `weights` is the `queries × keys` probability matrix.
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// Query/key/value projections of one attention site.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl AttentionParams {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, scale: f64, rng: &mut R) -> Self {
        Self {
            wq: store.add(format!("{prefix}.w_q"), Tensor::uniform(d, d, scale, rng)),
            wk: store.add(format!("{prefix}.w_k"), Tensor::uniform(d, d, scale, rng)),
            wv: store.add(format!("{prefix}.w_v"), Tensor::uniform(d, d, scale, rng)),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        q_src: Var,
        kv_src: Var,
        scaled: bool,
        causal: bool,
    ) -> Result<AttentionOutput> {
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        tape.cross_attention(q_src, kv_src, wq, wk, wv, scaled, causal)
    }
}

/// Gain and bias of a layer normalization. Gains start at one, biases at zero.
#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.gain"), Tensor::filled(1, d, 1.0)),
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(1, d)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), Tensor::uniform(d, hidden, scale, rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::uniform(1, hidden, scale, rng)),
            w2: store.add(format!("{prefix}.w2"), Tensor::uniform(hidden, d, scale, rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::uniform(1, d, scale, rng)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        tape.mlp(x, w1, b1, w2, b2)
    }
}
