//! Two-layer perceptron: linear -> relu -> linear -> softmax cross-entropy.

use rand::Rng;

use super::{check_params, log_sum_exp, require_batch, softmax_in_place, Batch, Objective};
use crate::error::{Error, Result};
use crate::numkit::{ParamVector, SeedPath};

/// Fully connected 2-layer network with rectifier hidden activation.
///
/// Parameter layout, flattened into one vector:
/// W1 (hidden x in, row-major), b1, W2 (out x hidden, row-major), b2.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl MlpObjective {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 || n_out < 2 {
            return Err(Error::config(
                "model",
                "mlp needs n_in >= 1, n_hidden >= 1, n_out >= 2",
            ));
        }
        Ok(MlpObjective {
            n_in,
            n_hidden,
            n_out,
        })
    }

    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + self.n_in * self.n_hidden;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_hidden * self.n_out;
        Layout { w1, b1, w2, b2 }
    }

    /// Forward pass for one sample: fills hidden pre-activations and output
    /// logits. Hidden activations are relu(hidden).
    fn forward(&self, x: &ParamVector, features: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let lo = self.layout();
        let p = x.as_slice();
        for h in 0..self.n_hidden {
            let row = &p[lo.w1 + h * self.n_in..lo.w1 + (h + 1) * self.n_in];
            hidden[h] = p[lo.b1 + h] + row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>();
        }
        for o in 0..self.n_out {
            let row = &p[lo.w2 + o * self.n_hidden..lo.w2 + (o + 1) * self.n_hidden];
            logits[o] = p[lo.b2 + o]
                + row
                    .iter()
                    .zip(hidden.iter())
                    .map(|(w, z)| w * z.max(0.0))
                    .sum::<f64>();
        }
    }
}

impl Objective for MlpObjective {
    fn param_len(&self) -> usize {
        self.n_in * self.n_hidden + self.n_hidden + self.n_hidden * self.n_out + self.n_out
    }

    fn loss(&self, x: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
        check_params(self, x)?;
        require_batch(batch)?;
        let mut hidden = vec![0.0; self.n_hidden];
        let mut logits = vec![0.0; self.n_out];
        let mut total = 0.0;
        for (features, &label) in batch.features().iter().zip(batch.labels()) {
            self.forward(x, features, &mut hidden, &mut logits);
            let (max, lse) = log_sum_exp(&logits);
            total += max + lse - logits[label];
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "mlp loss".to_string(),
            });
        }
        Ok(loss)
    }

    fn grad(&self, x: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
        check_params(self, x)?;
        require_batch(batch)?;
        let lo = self.layout();
        let p = x.as_slice();
        let mut g = ParamVector::zeros(self.param_len());
        let mut hidden = vec![0.0; self.n_hidden];
        let mut probs = vec![0.0; self.n_out];
        let mut dhidden = vec![0.0; self.n_hidden];
        let inv_n = 1.0 / batch.len() as f64;
        for (features, &label) in batch.features().iter().zip(batch.labels()) {
            self.forward(x, features, &mut hidden, &mut probs);
            softmax_in_place(&mut probs);

            // d loss / d logits = p - onehot(label), scaled by the batch mean.
            for o in 0..self.n_out {
                let dz = (probs[o] - if o == label { 1.0 } else { 0.0 }) * inv_n;
                let gw2 = &mut g.as_mut_slice()[lo.w2 + o * self.n_hidden..lo.w2 + (o + 1) * self.n_hidden];
                for (gw, z) in gw2.iter_mut().zip(hidden.iter()) {
                    *gw += dz * z.max(0.0);
                }
                g[lo.b2 + o] += dz;
            }
            // Backprop into the hidden layer through the relu mask.
            for h in 0..self.n_hidden {
                let mut acc = 0.0;
                for o in 0..self.n_out {
                    let dz = (probs[o] - if o == label { 1.0 } else { 0.0 }) * inv_n;
                    acc += dz * p[lo.w2 + o * self.n_hidden + h];
                }
                dhidden[h] = if hidden[h] > 0.0 { acc } else { 0.0 };
            }
            for h in 0..self.n_hidden {
                if dhidden[h] == 0.0 {
                    continue;
                }
                let gw1 = &mut g.as_mut_slice()[lo.w1 + h * self.n_in..lo.w1 + (h + 1) * self.n_in];
                for (gw, f) in gw1.iter_mut().zip(features.iter()) {
                    *gw += dhidden[h] * f;
                }
                g[lo.b1 + h] += dhidden[h];
            }
        }
        g.ensure_finite("mlp gradient")?;
        Ok(g)
    }

    fn init_params(&self, seed: &SeedPath) -> ParamVector {
        let mut rng = crate::numkit::rng_for(seed);
        let lo = self.layout();
        let b_in = 1.0 / (self.n_in as f64).sqrt();
        let b_hidden = 1.0 / (self.n_hidden as f64).sqrt();
        let mut values = vec![0.0; self.param_len()];
        for (i, v) in values.iter_mut().enumerate() {
            let bound = if i < lo.w2 { b_in } else { b_hidden };
            *v = rng.random_range(-bound..=bound);
        }
        ParamVector::new(values).expect("uniform init is finite")
    }

    fn class_scores(&self, x: &ParamVector, features: &[f64]) -> Option<Vec<f64>> {
        let mut hidden = vec![0.0; self.n_hidden];
        let mut logits = vec![0.0; self.n_out];
        self.forward(x, features, &mut hidden, &mut logits);
        Some(logits)
    }
}
