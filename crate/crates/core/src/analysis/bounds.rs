use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form contraction constant of `k` SGD steps on a `μ`-strongly
/// convex client: `(1 − ημ)^{2k}`. Valid for `η(μ + L) < 2`.
pub fn sgd_h(lr: f64, mu: f64, k: usize) -> f64 {
    (1.0 - lr * mu).powi(2 * k as i32)
}

/// Cumulative variance factor of `k` SGD steps, `kη²` (per unit σ²).
pub fn sgd_q(lr: f64, k: usize) -> f64 {
    k as f64 * lr * lr
}

/// Inputs of the round-complexity bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub h: Vec<f64>,
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    pub sigma: f64,
    /// `‖x⁰ − x̃‖²`
    pub x0_err: f64,
    pub rounds: usize,
}

impl BoundInputs {
    /// `Σ w_ih_i`
    pub fn mean_contraction(&self) -> f64 {
        self.w.iter().zip(&self.h).map(|(w, h)| w * h).sum()
    }
}

/// Explicit-constant convergence bound
/// `32‖x⁰ − x̃‖²/(1 − Σwh)·(Σwh)^{T/2} + 36σ²Σw²q/(T(1 − Σwh)²)`.
pub fn convergence_bound(inputs: &BoundInputs) -> Result<f64> {
    let n = inputs.w.len();
    if n == 0 {
        return Err(Error::Empty("bound clients"));
    }
    if inputs.h.len() != n || inputs.q.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: inputs.h.len().min(inputs.q.len()),
        });
    }
    if inputs.rounds == 0 {
        return Err(Error::config("bound needs T >= 1"));
    }
    let s = inputs.mean_contraction();
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::config(format!(
            "bound undefined: Σ w_i h_i = {s} outside (0, 1)"
        )));
    }
    let t = inputs.rounds as f64;
    let wq: f64 = inputs.w.iter().zip(&inputs.q).map(|(w, q)| w * w * q).sum();
    let bias = 32.0 * inputs.x0_err / (1.0 - s) * s.powf(t / 2.0);
    let variance = 36.0 * inputs.sigma * inputs.sigma * wq / (t * (1.0 - s) * (1.0 - s));
    Ok(bias + variance)
}

/// Measured error against the bound, one entry per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub rounds: Vec<usize>,
    pub measured: Vec<f64>,
    pub bound: Vec<f64>,
    pub satisfied: bool,
}

/// Client and server learning rates for local correction with common
/// `η`, `τ`: `η = min{1/(τL), (D/(L²ΛG²))^{1/3}/(τT^{1/3})}`, `α = ητ`.
pub fn local_correction_lr(
    local_steps: usize,
    smoothness: f64,
    lambda: f64,
    grad_bound: f64,
    initial_gap: f64,
    rounds: usize,
) -> Result<(f64, f64)> {
    if local_steps == 0 || rounds == 0 {
        return Err(Error::config("local steps and rounds must be >= 1"));
    }
    for (name, v) in [
        ("L", smoothness),
        ("Λ", lambda),
        ("G", grad_bound),
        ("D", initial_gap),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config(format!("{name} must be > 0, got {v}")));
        }
    }
    let tau = local_steps as f64;
    let smooth_cap = 1.0 / (tau * smoothness);
    let horizon = (initial_gap / (smoothness * smoothness * lambda * grad_bound * grad_bound))
        .cbrt()
        / (tau * (rounds as f64).cbrt());
    let lr = smooth_cap.min(horizon);
    Ok((lr, lr * tau))
}

/// Decaying server learning rate `α_t = 2/[(1 − (1 − ημ)^{2τ})(t + β)]`.
pub fn decaying_server_lr(round: usize, lr: f64, mu: f64, local_steps: usize, beta: f64) -> f64 {
    let contraction = 1.0 - sgd_h(lr, mu, local_steps);
    2.0 / (contraction * (round as f64 + beta))
}

/// `z(x) = 2xτ/(1 − (1 − x)^{2τ})`, the factor relating the τ-step SGD
/// rate to the single-step one.
pub fn rate_factor(x: f64, local_steps: usize) -> f64 {
    let tau = local_steps as f64;
    2.0 * x * tau / (1.0 - (1.0 - x).powi(2 * local_steps as i32))
}
