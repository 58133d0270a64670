//! Multinomial logistic regression with mean cross-entropy loss.

use rand::Rng;

use super::{check_params, log_sum_exp, require_batch, softmax_in_place, Batch, Objective};
use crate::error::{Error, Result};
use crate::numkit::{ParamVector, SeedPath};

/// Linear classifier: logits = W x + b, loss = mean cross-entropy.
///
/// Parameter layout: W row-major (class-major), then the bias vector.
#[derive(Debug, Clone)]
pub struct SoftmaxRegression {
    n_features: usize,
    n_classes: usize,
}

impl SoftmaxRegression {
    pub fn new(n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || n_classes < 2 {
            return Err(Error::config(
                "model",
                "softmax needs n_features >= 1 and n_classes >= 2",
            ));
        }
        Ok(SoftmaxRegression {
            n_features,
            n_classes,
        })
    }

    fn logits(&self, x: &ParamVector, features: &[f64], out: &mut [f64]) {
        let bias_off = self.n_classes * self.n_features;
        for (c, z) in out.iter_mut().enumerate() {
            let row = &x.as_slice()[c * self.n_features..(c + 1) * self.n_features];
            *z = x.as_slice()[bias_off + c]
                + row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
        }
    }

    /// Predicted class probabilities for one sample.
    pub fn probabilities(&self, x: &ParamVector, features: &[f64]) -> Result<Vec<f64>> {
        check_params(self, x)?;
        let mut p = vec![0.0; self.n_classes];
        self.logits(x, features, &mut p);
        softmax_in_place(&mut p);
        Ok(p)
    }
}

impl Objective for SoftmaxRegression {
    fn param_len(&self) -> usize {
        self.n_classes * self.n_features + self.n_classes
    }

    fn loss(&self, x: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
        check_params(self, x)?;
        require_batch(batch)?;
        let mut z = vec![0.0; self.n_classes];
        let mut total = 0.0;
        for (features, &label) in batch.features().iter().zip(batch.labels()) {
            self.logits(x, features, &mut z);
            let (max, lse) = log_sum_exp(&z);
            total += max + lse - z[label];
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "softmax loss".to_string(),
            });
        }
        Ok(loss)
    }

    fn grad(&self, x: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
        check_params(self, x)?;
        require_batch(batch)?;
        let bias_off = self.n_classes * self.n_features;
        let mut g = ParamVector::zeros(self.param_len());
        let mut p = vec![0.0; self.n_classes];
        let inv_n = 1.0 / batch.len() as f64;
        for (features, &label) in batch.features().iter().zip(batch.labels()) {
            self.logits(x, features, &mut p);
            softmax_in_place(&mut p);
            for c in 0..self.n_classes {
                let delta = (p[c] - if c == label { 1.0 } else { 0.0 }) * inv_n;
                let row = &mut g.as_mut_slice()[c * self.n_features..(c + 1) * self.n_features];
                for (gw, f) in row.iter_mut().zip(features.iter()) {
                    *gw += delta * f;
                }
                g[bias_off + c] += delta;
            }
        }
        g.ensure_finite("softmax gradient")?;
        Ok(g)
    }

    fn init_params(&self, seed: &SeedPath) -> ParamVector {
        let mut rng = crate::numkit::rng_for(seed);
        let bound = 1.0 / (self.n_features as f64).sqrt();
        ParamVector::new(
            (0..self.param_len())
                .map(|_| rng.random_range(-bound..=bound))
                .collect(),
        )
        .expect("uniform init is finite")
    }

    fn class_scores(&self, x: &ParamVector, features: &[f64]) -> Option<Vec<f64>> {
        let mut z = vec![0.0; self.n_classes];
        self.logits(x, features, &mut z);
        Some(z)
    }
}
