//! Direction and proximity penalties composable onto any local objective.
//!
//! The cosine penalty 1 - cos(theta) scores the angle between a client's
//! in-progress displacement (x - x_hat) and the broadcast global direction
//! d_hat. It constrains orientation only: its gradient is orthogonal to the
//! displacement and never points backward along the global direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::ParamVector;

/// Below this displacement norm the penalty is treated as degenerate (value
/// 0, gradient 0): the true penalty is non-differentiable at x = x_hat and
/// the 1/||x-x_hat||^3 factor would blow up.
pub const DEGENERATE_DISPLACEMENT_NORM: f64 = 1e-12;

/// Round-start state broadcast to every client: the global model x_hat and
/// the global direction d_hat (previous round's movement; zero at round 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionAnchor {
    pub x_hat: ParamVector,
    pub d_hat: ParamVector,
    pub round: usize,
}

impl DirectionAnchor {
    pub fn new(x_hat: ParamVector, d_hat: ParamVector, round: usize) -> Result<Self> {
        d_hat.check_len(x_hat.len())?;
        Ok(DirectionAnchor {
            x_hat,
            d_hat,
            round,
        })
    }

    /// Round-0 anchor: zero direction, so the cosine penalty is inert and
    /// the first round is identical to plain FedAvg.
    pub fn initial(x_hat: ParamVector) -> Self {
        let d_hat = ParamVector::zeros(x_hat.len());
        DirectionAnchor {
            x_hat,
            d_hat,
            round: 0,
        }
    }
}

/// Penalty weights for local training. Both zero reproduces plain FedAvg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub mu_cos: f64,
    pub mu_prox: f64,
}

impl PenaltyConfig {
    pub fn none() -> Self {
        PenaltyConfig {
            mu_cos: 0.0,
            mu_prox: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu_cos.is_finite() || self.mu_cos < 0.0 {
            return Err(Error::config("fedcos_mu", "must be finite and >= 0"));
        }
        if !self.mu_prox.is_finite() || self.mu_prox < 0.0 {
            return Err(Error::config("mu_prox", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// 1 - cos(theta) between (x - x_hat) and d_hat, in [0, 2].
///
/// Degenerate displacements or a zero global direction score 0 (cos defined
/// as 1), so the penalty vanishes instead of erroring.
pub fn cos_penalty_value(x: &ParamVector, anchor: &DirectionAnchor) -> Result<f64> {
    x.check_len(anchor.x_hat.len())?;
    let u = x.sub(&anchor.x_hat)?;
    let un = u.norm();
    let dn = anchor.d_hat.norm();
    if un < DEGENERATE_DISPLACEMENT_NORM || dn == 0.0 {
        return Ok(0.0);
    }
    let cos = (u.dot(&anchor.d_hat)? / (un * dn)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Gradient of [`cos_penalty_value`] with respect to x:
///
///   -( d_hat * ||u||^2 - <u, d_hat> * u ) / ( ||d_hat|| * ||u||^3 ),
///
/// where u = x - x_hat. Zero at the degenerate points.
pub fn cos_penalty_grad(x: &ParamVector, anchor: &DirectionAnchor) -> Result<ParamVector> {
    x.check_len(anchor.x_hat.len())?;
    let u = x.sub(&anchor.x_hat)?;
    let un = u.norm();
    let dn = anchor.d_hat.norm();
    if un < DEGENERATE_DISPLACEMENT_NORM || dn == 0.0 {
        return Ok(ParamVector::zeros(x.len()));
    }
    let proj = u.dot(&anchor.d_hat)?;
    let scale = -1.0 / (dn * un * un * un);
    let mut g = anchor.d_hat.scaled(scale * un * un);
    g.add_scaled(&u, -scale * proj)?;
    g.ensure_finite("cosine penalty gradient")?;
    Ok(g)
}

/// Squared distance to the round-start global model: ||x - x_hat||^2.
pub fn prox_penalty_value(x: &ParamVector, x_hat: &ParamVector) -> Result<f64> {
    let d = x.sub(x_hat)?;
    Ok(d.dot(&d)?)
}

/// Gradient of [`prox_penalty_value`]: 2 (x - x_hat). The weight is applied
/// by the strategy composition, and the factor 2 comes from the squared norm
/// as written (no 1/2 convention).
pub fn prox_penalty_grad(x: &ParamVector, x_hat: &ParamVector) -> Result<ParamVector> {
    Ok(x.sub(x_hat)?.scaled(2.0))
}
