//! Local training loops and server update rules.
//!
//! A round is: broadcast (x_hat, d_hat) -> each participant runs
//! [`local_train`] -> [`aggregate_weighted`] -> [`server_apply`] ->
//! [`update_direction`]. Penalties compose by gradient addition only, so
//! FedCos stacks on top of any base method.

use serde::{Deserialize, Serialize};

use crate::data::{EpochSampler, LabeledDataset};
use crate::error::{Error, Result};
use crate::numkit::ParamVector;
use crate::objectives::{Batch, Objective};
use crate::penalties::{
    cos_penalty_grad, prox_penalty_grad, DirectionAnchor, PenaltyConfig,
};

/// Any parameter magnitude beyond this aborts the run as divergent; the
/// reference scenes all stay below 1e3.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

/// Client-side hyperparameters for one round of local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPlan {
    /// Local learning rate.
    pub eta: f64,
    /// Number of SGD steps per round (K).
    pub steps_per_round: usize,
    pub batch_size: usize,
    pub penalties: PenaltyConfig,
}

impl LocalPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("sim.eta", "must be finite and > 0"));
        }
        if self.steps_per_round == 0 {
            return Err(Error::config("sim.steps_per_round", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("sim.batch_size", "must be >= 1"));
        }
        self.penalties.validate()
    }
}

/// A trained local model plus its sample count, sent client -> server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParamVector,
    pub n_samples: usize,
}

/// Mini-batch source for one client's local phase.
pub enum ClientData<'a> {
    /// Statistical objective: draw batches from the client's split.
    Batched {
        dataset: &'a LabeledDataset,
        sampler: &'a mut EpochSampler,
    },
    /// Deterministic full-gradient objective (quadratics): no batches.
    Whole,
}

/// Runs exactly K local SGD steps from `start`, composing the base gradient
/// with the configured penalty gradients:
///
///   x <- x - eta * (grad f + mu_cos * grad g_cos + mu_prox * grad g_prox)
///
/// The anchor is frozen for the whole phase. Inputs are not modified.
pub fn local_train(
    objective: &dyn Objective,
    start: &ParamVector,
    anchor: &DirectionAnchor,
    plan: &LocalPlan,
    data: ClientData<'_>,
    client_id: usize,
) -> Result<ClientUpdate> {
    plan.validate()?;
    start.check_len(objective.param_len())?;
    anchor.x_hat.check_len(start.len())?;
    let (dataset, mut sampler) = match data {
        ClientData::Batched { dataset, sampler } => (Some(dataset), Some(sampler)),
        ClientData::Whole => (None, None),
    };
    let n_samples = sampler.as_ref().map_or(1, |s| s.len());
    let mut x = start.clone();
    for step in 0..plan.steps_per_round {
        let batch = match (&dataset, &mut sampler) {
            (Some(ds), Some(sampler)) => {
                let indices = sampler.next_indices(plan.batch_size)?;
                ds.gather(&indices)?
            }
            _ => Batch::whole(),
        };
        let mut grad = objective.grad(&x, &batch)?;
        // Skip inert penalties entirely so a zero weight is bit-identical to
        // the base method, not merely close.
        if plan.penalties.mu_cos > 0.0 {
            grad.add_scaled(&cos_penalty_grad(&x, anchor)?, plan.penalties.mu_cos)?;
        }
        if plan.penalties.mu_prox > 0.0 {
            grad.add_scaled(&prox_penalty_grad(&x, &anchor.x_hat)?, plan.penalties.mu_prox)?;
        }
        x.add_scaled(&grad, -plan.eta)?;
        if x.ensure_finite("local step").is_err() || x.max_abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                round: None,
                client: None,
                step,
            });
        }
    }
    Ok(ClientUpdate {
        client_id,
        params: x,
        n_samples,
    })
}

/// Sample-count-weighted average of client models. Summation runs in
/// ascending client id order regardless of input order, for bit
/// reproducibility.
pub fn aggregate_weighted(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let first = updates.first().ok_or(Error::EmptyAggregation)?;
    if updates.len() == 1 {
        return Ok(first.params.clone());
    }
    let dim = first.params.len();
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let total: f64 = updates.iter().map(|u| u.n_samples as f64).sum();
    if total <= 0.0 {
        return Err(Error::config("n_samples", "total sample count must be positive"));
    }
    let mut acc = ParamVector::zeros(dim);
    for &i in &order {
        let u = &updates[i];
        u.params.check_len(dim)?;
        acc.add_scaled(&u.params, u.n_samples as f64 / total)?;
    }
    Ok(acc)
}

/// How the server turns the weighted average into the next global model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerRule {
    /// Plain FedAvg: the aggregate is the next model.
    Average,
    /// Momentum on the server pseudo-gradient delta = x_prev - aggregated:
    /// v <- beta v + delta; x <- x_prev - v.
    Momentum {
        beta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        velocity: Option<ParamVector>,
    },
    /// Scaled global step: x <- x_prev - eta_g * delta.
    Scaled { eta_g: f64 },
}

impl ServerRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            ServerRule::Average => Ok(()),
            ServerRule::Momentum { beta, .. } => {
                if !(beta.is_finite() && (0.0..1.0).contains(beta)) {
                    Err(Error::config("strategy.base_param", "beta must be in [0, 1)"))
                } else {
                    Ok(())
                }
            }
            ServerRule::Scaled { eta_g } => {
                if !(eta_g.is_finite() && *eta_g > 0.0) {
                    Err(Error::config("strategy.base_param", "eta_g must be > 0"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Applies the server rule, returning the next global model and mutating any
/// rule state (the momentum buffer).
///
/// beta = 0 and eta_g = 1 reduce bit-exactly to the plain average.
pub fn server_apply(
    rule: &mut ServerRule,
    x_prev: &ParamVector,
    aggregated: &ParamVector,
) -> Result<ParamVector> {
    aggregated.check_len(x_prev.len())?;
    match rule {
        ServerRule::Average => Ok(aggregated.clone()),
        ServerRule::Momentum { beta, velocity } => {
            let delta = x_prev.sub(aggregated)?;
            let v = match velocity.take() {
                Some(mut v) => {
                    v.check_len(x_prev.len())?;
                    let mut scaled = v.scaled(*beta);
                    scaled.add_scaled(&delta, 1.0)?;
                    scaled
                }
                None => delta,
            };
            let next = if *beta == 0.0 {
                // x_prev - delta computed directly would re-round; keep the
                // degeneration to plain averaging exact.
                aggregated.clone()
            } else {
                x_prev.sub(&v)?
            };
            *velocity = Some(v);
            Ok(next)
        }
        ServerRule::Scaled { eta_g } => {
            if *eta_g == 1.0 {
                return Ok(aggregated.clone());
            }
            let delta = x_prev.sub(aggregated)?;
            let mut next = x_prev.clone();
            next.add_scaled(&delta, -*eta_g)?;
            Ok(next)
        }
    }
}

/// Global direction for the next round: the movement the global model just
/// made. Round 0 uses the zero vector instead.
pub fn update_direction(x_new: &ParamVector, x_prev: &ParamVector) -> Result<ParamVector> {
    x_new.sub(x_prev)
}
