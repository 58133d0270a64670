//! Local loss functions and their exact gradients.
//!
//! Three families: convex quadratics (the two- and three-client toy scenes),
//! softmax regression, and a two-layer MLP with hand-written backprop. Every
//! analytic gradient is checked against the central-difference oracle in
//! `numkit`.

mod mlp;
mod quadratic;
mod softmax;

pub use mlp::MlpObjective;
pub use quadratic::QuadraticObjective;
pub use softmax::SoftmaxRegression;

use crate::error::{Error, Result};
use crate::numkit::{ParamVector, SeedPath};

/// A mini-batch view borrowing feature rows from a dataset.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    features: Vec<&'a [f64]>,
    labels: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(features: Vec<&'a [f64]>, labels: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::config("batch", "batch must be non-empty"));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        Ok(Batch { features, labels })
    }

    /// Marker batch for objectives that evaluate their full implicit dataset
    /// every step (quadratics). Statistical objectives reject it.
    pub fn whole() -> Self {
        Batch {
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[&'a [f64]] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// A local objective f_i: loss and exact gradient at a parameter vector.
///
/// Implementations are immutable after construction; evaluation is pure and
/// safe to call from many workers at once.
pub trait Objective: Send + Sync {
    fn param_len(&self) -> usize;

    /// Mean loss over the batch (quadratics ignore the batch).
    fn loss(&self, x: &ParamVector, batch: &Batch<'_>) -> Result<f64>;

    /// Exact analytic gradient of [`Objective::loss`] with respect to `x`.
    fn grad(&self, x: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector>;

    /// Whether local training draws mini-batches. False for quadratics,
    /// which have a deterministic full gradient.
    fn uses_batches(&self) -> bool {
        true
    }

    /// Deterministic parameter initialization.
    fn init_params(&self, seed: &SeedPath) -> ParamVector;

    /// Per-class scores for classification objectives; `None` otherwise.
    fn class_scores(&self, x: &ParamVector, features: &[f64]) -> Option<Vec<f64>> {
        let _ = (x, features);
        None
    }
}

fn check_params(obj: &dyn Objective, x: &ParamVector) -> Result<()> {
    x.check_len(obj.param_len())
}

fn require_batch(batch: &Batch<'_>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::config(
            "batch",
            "statistical objective requires a non-empty batch",
        ));
    }
    Ok(())
}

/// Numerically stable log(sum(exp(z))) together with the shifted max.
fn log_sum_exp(logits: &[f64]) -> (f64, f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z));
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    (max, sum.ln())
}

/// Softmax probabilities in place: logits -> probabilities.
fn softmax_in_place(logits: &mut [f64]) {
    let (max, lse) = log_sum_exp(logits);
    for z in logits.iter_mut() {
        *z = (*z - max - lse).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{finite_diff_gradient, gradient_rel_error, rng_for};
    use rand::Rng;

    // Shared gradient-check harness: analytic gradient vs central differences
    // at `n_points` random parameter vectors.
    pub(crate) fn check_gradients(
        obj: &dyn Objective,
        batch: &Batch<'_>,
        seed: u64,
        n_points: usize,
        tol: f64,
    ) {
        let mut rng = rng_for(&SeedPath::new(seed).child("gradcheck", 0));
        for point in 0..n_points {
            let x = ParamVector::new(
                (0..obj.param_len())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();
            let analytic = obj.grad(&x, batch).unwrap();
            let numeric =
                finite_diff_gradient(|p| obj.loss(p, batch).unwrap(), &x, 1e-5).unwrap();
            let err = gradient_rel_error(&analytic, &numeric);
            assert!(
                err < tol,
                "gradient mismatch at point {point}: rel error {err:.3e}"
            );
        }
    }

    #[test]
    fn batch_rejects_empty() {
        assert!(Batch::new(vec![], vec![]).is_err());
    }

    #[test]
    fn batch_rejects_length_mismatch() {
        let row = [0.0f64, 1.0];
        assert!(Batch::new(vec![&row], vec![0, 1]).is_err());
    }
}
