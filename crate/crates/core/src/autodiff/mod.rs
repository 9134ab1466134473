//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation of one forward pass; `backward`
//! replays the tape in reverse. Parameters live outside the graph and are
//! copied in by name with [`Graph::param`], so a model can be shared while
//! each pass builds its own graph.

mod graph;
mod kernels;
mod tensor;

pub use graph::{BatchStats, Gradients, Graph, NormMode, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Running per-channel estimates maintained by a batch normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Zero mean, unit variance.
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        for (r, b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization that also maintains `stats`: training mode normalizes
/// with batch statistics and folds them into the running estimates, eval
/// mode normalizes with the running estimates.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<Var> {
    match mode {
        Mode::Train => {
            let (y, batch) = g.batchnorm(x, gamma, beta, NormMode::Train, eps)?;
            if let Some(b) = batch {
                stats.update(&b, momentum);
            }
            Ok(y)
        }
        Mode::Eval => {
            let norm = NormMode::Eval {
                mean: &stats.mean,
                var: &stats.var,
            };
            Ok(g.batchnorm(x, gamma, beta, norm, eps)?.0)
        }
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst disagreement.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Denominator floor for the relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Compares `backward` against central finite differences of a scalar
/// function of `inputs`. The numeric side only evaluates forward passes.
///
/// Relative error per element is `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn gradcheck<F>(inputs: &[Tensor], f: F, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, var) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[ti].numel()];
        let analytic = grads.get(*var).unwrap_or(&zeros).to_vec();
        for i in 0..inputs[ti].numel() {
            let orig = inputs[ti].data()[i];
            probe[ti].data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe[ti].data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (ti, i);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
