//! Central finite-difference checking of tape gradients.

use super::{Result, Tape, Tensor, Var};

/// Magnitude below which gradients are compared absolutely instead of relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)` seen.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input, flat index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub(crate) fn new() -> Self {
        Self { max_rel_error: 0.0, max_abs_error: 0.0, worst: (0, 0), checked: 0 }
    }

    pub(crate) fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > self.max_rel_error {
            self.max_rel_error = rel;
            self.worst = (input, index);
        }
        self.max_abs_error = self.max_abs_error.max(abs);
        self.checked += 1;
    }
}

/// Compares reverse-mode gradients of a scalar function of `inputs` against
/// central differences with the given step.
///
/// `f` rebuilds the computation on a fresh tape each time; it receives the
/// inputs bound as tracked leaves, in order.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport::new();
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + step;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;

            report.record(i, j, analytic[i].data()[j], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}
