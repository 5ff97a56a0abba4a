//! Client optimizers with per-round restart.
//!
//! All rules share one update, `x ← x − η P m` with
//! `m ← β₁m + (1 − β₁)g`, and differ only in how the diagonal preconditioner
//! `P` evolves:
//!
//! | rule        | second moment `v`                          | `P`      |
//! |-------------|--------------------------------------------|----------|
//! | SGD         | unused                                     | `I`      |
//! | PrecondGD   | unused                                     | fixed    |
//! | AdaGrad     | `v ← v + g²`                               | `v^-1/2` |
//! | Adam        | `v ← β₂v + (1 − β₂)g²`                     | `v^-1/2` |
//! | Yogi        | `v ← v − (1 − β₂)·sign(v − g²)·g²`         | `v^-1/2` |
//!
//! On restart `m = 0` and `v = ε²`, i.e. the preconditioner restarts at the
//! constant `1/ε`. No bias correction is applied.

use serde::{Deserialize, Serialize};

use crate::correction::CorrectionAccumulator;
use crate::error::{Error, Result};
use crate::linalg::{DiagMatrix, ParamVector};
use crate::problems::GradientOracle;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientRule {
    Sgd,
    PrecondGd(DiagMatrix),
    AdaGrad,
    Adam,
    Yogi,
}

impl ClientRule {
    pub fn is_adaptive(&self) -> bool {
        matches!(self, ClientRule::AdaGrad | ClientRule::Adam | ClientRule::Yogi)
    }
}

/// A client optimizer and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientOptSpec {
    pub rule: ClientRule,
    /// Client learning rate `η_i`.
    pub lr: f64,
    /// Local steps `τ_i`.
    pub local_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl ClientOptSpec {
    pub fn new(rule: ClientRule, lr: f64, local_steps: usize) -> Self {
        Self {
            rule,
            lr,
            local_steps,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-7,
        }
    }

    pub fn sgd(lr: f64, local_steps: usize) -> Self {
        Self::new(ClientRule::Sgd, lr, local_steps)
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("client lr must be > 0, got {}", self.lr)));
        }
        if self.local_steps == 0 {
            return Err(Error::config(
                "local_steps must be >= 1 (zero steps makes every point a fixed point)",
            ));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if let ClientRule::PrecondGd(p) = &self.rule {
            if !p.is_positive() {
                return Err(Error::config("fixed preconditioner must be positive"));
            }
        }
        Ok(())
    }

    /// Momentum coefficient in effect; the non-adaptive rules run without
    /// momentum.
    pub fn effective_beta1(&self) -> f64 {
        if self.rule.is_adaptive() {
            self.beta1
        } else {
            0.0
        }
    }

    /// Preconditioner in effect right after a restart.
    pub fn restart_preconditioner(&self, dim: usize) -> DiagMatrix {
        match &self.rule {
            ClientRule::Sgd => DiagMatrix::identity(dim),
            ClientRule::PrecondGd(p) => p.clone(),
            _ => DiagMatrix::constant(dim, 1.0 / self.eps),
        }
    }
}

/// Optimizer state within one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub step_count: usize,
}

/// Result of one client's local run.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRunResult {
    /// `Δ_i = x⁰ − x^{(τ_i)}`
    pub delta: ParamVector,
    /// `N_i`, scaled by the client learning rate.
    pub n_matrix: DiagMatrix,
    pub iterates: Option<Vec<ParamVector>>,
    pub preconditioner_trace: Option<Vec<DiagMatrix>>,
}

/// Fresh state: zero momentum, `v = ε²`.
pub fn reset_state(spec: &ClientOptSpec, dim: usize) -> ClientOptState {
    ClientOptState {
        m: ParamVector::zeros(dim),
        v: ParamVector::filled(dim, spec.eps * spec.eps),
        step_count: 0,
    }
}

/// One local step. Returns the new iterate and the preconditioner `B_k` used.
pub fn step(
    spec: &ClientOptSpec,
    state: &mut ClientOptState,
    x: &ParamVector,
    g: &ParamVector,
) -> Result<(ParamVector, DiagMatrix)> {
    let dim = x.len();
    g.ensure_dim(dim)?;
    state.m.ensure_dim(dim)?;
    state.v.ensure_dim(dim)?;
    x.ensure_finite("iterate")?;
    g.ensure_finite("gradient")?;

    let beta1 = spec.effective_beta1();
    let beta2 = spec.beta2;
    let v = state.v.as_mut_slice();
    let precond: Vec<f64> = match &spec.rule {
        ClientRule::Sgd => vec![1.0; dim],
        ClientRule::PrecondGd(p) => {
            p.ensure_dim(dim)?;
            p.diag().to_vec()
        }
        rule => {
            for (vj, gj) in v.iter_mut().zip(g.iter()) {
                let g2 = gj * gj;
                *vj = match rule {
                    ClientRule::AdaGrad => *vj + g2,
                    ClientRule::Adam => beta2 * *vj + (1.0 - beta2) * g2,
                    ClientRule::Yogi => *vj - (1.0 - beta2) * sign(*vj - g2) * g2,
                    _ => unreachable!(),
                };
            }
            v.iter().map(|vj| 1.0 / vj.sqrt()).collect()
        }
    };
    let precond = DiagMatrix::new(precond);
    if !precond.is_positive() {
        return Err(Error::NonFinite("preconditioner"));
    }

    let m = state.m.as_mut_slice();
    for (mj, gj) in m.iter_mut().zip(g.iter()) {
        *mj = beta1 * *mj + (1.0 - beta1) * gj;
    }
    let next = ParamVector::new(
        x.iter()
            .zip(precond.iter())
            .zip(state.m.iter())
            .map(|((xj, pj), mj)| xj - spec.lr * pj * mj)
            .collect(),
    );
    next.ensure_finite("iterate")?;
    state.step_count += 1;
    Ok((next, precond))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs `steps` restarted local steps from `x0` and returns the final iterate.
/// This is the local operator `A_i(x0; steps)`.
pub fn apply_operator(
    spec: &ClientOptSpec,
    oracle: &dyn GradientOracle,
    client: usize,
    x0: &ParamVector,
    steps: usize,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    let mut state = reset_state(spec, x0.len());
    let mut x = x0.clone();
    for _ in 0..steps {
        let g = oracle.gradient(client, &x, rng)?;
        x = step(spec, &mut state, &x, &g)?.0;
    }
    Ok(x)
}

/// Restarts the optimizer, takes `τ_i` local steps, and accumulates the
/// correction matrix.
pub fn run_local(
    spec: &ClientOptSpec,
    oracle: &dyn GradientOracle,
    client: usize,
    x0: &ParamVector,
    rng: &mut SimRng,
    record: bool,
) -> Result<LocalRunResult> {
    spec.validate()?;
    x0.ensure_dim(oracle.dim())?;
    x0.ensure_finite("start point")?;
    let dim = x0.len();
    let beta1 = spec.effective_beta1();
    let mut state = reset_state(spec, dim);
    let mut acc = CorrectionAccumulator::new(dim);
    let mut x = x0.clone();
    let mut iterates = record.then(|| vec![x.clone()]);
    let mut trace = record.then(Vec::new);

    for _ in 0..spec.local_steps {
        let g = oracle.gradient(client, &x, rng)?;
        let (next, b) = step(spec, &mut state, &x, &g)?;
        acc.accumulate(&b, beta1);
        if let Some(t) = trace.as_mut() {
            t.push(b);
        }
        x = next;
        if let Some(it) = iterates.as_mut() {
            it.push(x.clone());
        }
    }

    Ok(LocalRunResult {
        delta: x0.sub(&x),
        n_matrix: acc.n.scale(spec.lr),
        iterates,
        preconditioner_trace: trace,
    })
}
