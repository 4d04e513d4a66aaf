//! Adam and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decoder::LossWeights;
use crate::model::Model;
use crate::pipeline::{training_pass, Example};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, pair {pair}: ce={ce}, reg={reg}, loss={loss}")]
    NonFinite { epoch: usize, pair: usize, ce: f64, reg: f64, loss: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to parameter `i`; `None` means zero.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let id = ParamId(i);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.as_ref().map_or(0.0, |g| g.data()[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_ce: f64,
    pub mean_reg: f64,
}

struct PairResult {
    loss: f64,
    ce: f64,
    reg: f64,
    grads: Vec<Option<Tensor>>,
}

fn run_pair(model: &Model, ex: &Example, w: LossWeights) -> Result<PairResult, TensorError> {
    let mut tape = Tape::new();
    let pass = training_pass(&mut tape, model, ex, w)?;
    let loss = tape.value(pass.loss).item();
    let ce = tape.value(pass.ce).item();
    let reg = tape.value(pass.reg).item();
    let mut grads = vec![None; model.store.len()];
    if loss.is_finite() {
        tape.backward(pass.loss)?;
        for (id, var) in tape.bound_params() {
            grads[id.index()] = tape.grad(var).cloned();
        }
    }
    Ok(PairResult { loss, ce, reg, grads })
}

fn accumulate(total: &mut [Option<Tensor>], part: Vec<Option<Tensor>>) {
    for (t, p) in total.iter_mut().zip(part) {
        match (t.as_mut(), p) {
            (Some(t), Some(p)) => t.add_assign(&p),
            (None, Some(p)) => *t = Some(p),
            _ => {}
        }
    }
}

/// Trains in place. Pairs are visited in a seeded shuffled order each epoch; the
/// gradient of a batch is the mean of its per-pair gradients, summed in pair order,
/// so results do not depend on thread scheduling. `on_epoch` sees each report as it
/// is produced.
pub fn train(model: &mut Model, examples: &[Example], mut on_epoch: impl FnMut(&EpochReport)) -> Result<Vec<EpochReport>, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    model.cfg.validate().map_err(TrainError::Config)?;
    let cfg = model.cfg.clone();
    let weights = LossWeights::new(cfg.lambda, cfg.gamma, cfg.beta).map_err(TrainError::Config)?;
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut ce_sum, mut reg_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let snapshot: &Model = model;
            let results: Vec<Result<PairResult, TensorError>> =
                batch.par_iter().map(|&i| run_pair(snapshot, &examples[i], weights)).collect();
            let mut total: Vec<Option<Tensor>> = vec![None; model.store.len()];
            for (&i, r) in batch.iter().zip(results) {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(TrainError::NonFinite { epoch, pair: i, ce: r.ce, reg: r.reg, loss: r.loss });
                }
                loss_sum += r.loss;
                ce_sum += r.ce;
                reg_sum += r.reg;
                accumulate(&mut total, r.grads);
            }
            if batch.len() > 1 {
                let scale = 1.0 / batch.len() as f64;
                for g in total.iter_mut().flatten() {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
            adam.update(&mut model.store, &total);
        }
        let n = examples.len() as f64;
        let report = EpochReport { epoch, mean_loss: loss_sum / n, mean_ce: ce_sum / n, mean_reg: reg_sum / n };
        log::info!("epoch {epoch}: loss {:.6} ce {:.6} reg {:.6}", report.mean_loss, report.mean_ce, report.mean_reg);
        on_epoch(&report);
        history.push(report);
    }
    Ok(history)
}

/// Mean total loss over `examples` under the current parameters, without updating.
pub fn mean_loss(model: &Model, examples: &[Example]) -> Result<f64, TrainError> {
    let weights = LossWeights::new(model.cfg.lambda, model.cfg.gamma, model.cfg.beta).map_err(TrainError::Config)?;
    let losses: Vec<Result<f64, TensorError>> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let pass = training_pass(&mut tape, model, ex, weights)?;
            Ok(tape.value(pass.loss).item())
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len().max(1) as f64)
}
