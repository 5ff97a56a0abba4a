//! Server-side aggregation, client sampling, and the server optimizer.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerRule {
    Gd,
    #[serde(rename = "adagrad")]
    AdaGrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOptSpec {
    pub rule: ServerRule,
    /// Server learning rate `α`.
    pub lr: f64,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl ServerOptSpec {
    pub fn gd(lr: f64) -> Self {
        Self {
            rule: ServerRule::Gd,
            lr,
            eps: 1e-3,
            beta1: 0.0,
            beta2: 0.0,
        }
    }

    pub fn adagrad(lr: f64, eps: f64) -> Self {
        Self {
            rule: ServerRule::AdaGrad,
            eps,
            ..Self::gd(lr)
        }
    }

    pub fn adam(lr: f64, eps: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            rule: ServerRule::Adam,
            lr,
            eps,
            beta1,
            beta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("server lr must be > 0, got {}", self.lr)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("server eps must be > 0, got {}", self.eps)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("server {name} must be in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// Persistent server optimizer state. Unlike client state, this carries
/// across rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub round: usize,
}

impl ServerState {
    /// `m = 0`, `v = ε_s²`, matching the client convention.
    pub fn new(spec: &ServerOptSpec, dim: usize) -> Self {
        Self {
            m: ParamVector::zeros(dim),
            v: ParamVector::filled(dim, spec.eps * spec.eps),
            round: 0,
        }
    }
}

/// `Σ w_iΔ_i`, summed in the given (ascending client id) order.
pub fn aggregate(deltas: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    let first = deltas.first().ok_or(Error::Empty("client deltas"))?;
    if weights.len() != deltas.len() {
        return Err(Error::DimensionMismatch {
            expected: deltas.len(),
            got: weights.len(),
        });
    }
    let mut acc = ParamVector::zeros(first.len());
    for (d, &w) in deltas.iter().zip(weights) {
        d.ensure_dim(first.len())?;
        acc.axpy(w, d);
    }
    Ok(acc)
}

/// Applies the server optimizer with learning rate `alpha` to the
/// pseudo-gradient.
pub fn server_step(
    spec: &ServerOptSpec,
    state: &mut ServerState,
    x: &ParamVector,
    pseudo_grad: &ParamVector,
    alpha: f64,
) -> Result<ParamVector> {
    pseudo_grad.ensure_dim(x.len())?;
    x.ensure_finite("server model")?;
    pseudo_grad.ensure_finite("pseudo-gradient")?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite("server learning rate"));
    }
    let next = match spec.rule {
        ServerRule::Gd => {
            let mut next = x.clone();
            next.axpy(-alpha, pseudo_grad);
            next
        }
        ServerRule::AdaGrad | ServerRule::Adam => {
            let (beta1, beta2) = match spec.rule {
                ServerRule::AdaGrad => (0.0, None),
                _ => (spec.beta1, Some(spec.beta2)),
            };
            let mut out = Vec::with_capacity(x.len());
            let (m, v) = (state.m.as_mut_slice(), state.v.as_mut_slice());
            for j in 0..x.len() {
                let g = pseudo_grad[j];
                v[j] = match beta2 {
                    None => v[j] + g * g,
                    Some(b2) => b2 * v[j] + (1.0 - b2) * g * g,
                };
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                out.push(x[j] - alpha * m[j] / v[j].sqrt());
            }
            ParamVector::new(out)
        }
    };
    next.ensure_finite("server model")?;
    state.round += 1;
    Ok(next)
}

/// Uniform sample of `sample_size` distinct ids from `0..population`,
/// ascending.
pub fn sample_clients(population: usize, sample_size: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
    if sample_size == 0 || sample_size > population {
        return Err(Error::config(format!(
            "clients per round must be in 1..={population}, got {sample_size}"
        )));
    }
    if sample_size == population {
        return Ok((0..population).collect());
    }
    let mut ids = index::sample(rng, population, sample_size).into_vec();
    ids.sort_unstable();
    Ok(ids)
}
