//! Problem families and gradient oracles.

mod logreg;
mod noise;
mod quadratic;

pub use logreg::{make_logreg, LogRegShard, LogRegSpec, LogRegTask};
pub use noise::{noisy_grad, NoiseModel};
pub use quadratic::{
    fixed_point_closed_form, limiting_fixed_point, skew_residual, LinearClientRule,
    QuadraticClient, QuadraticFamily, DEFAULT_MAX_DIM,
};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::rng::SimRng;

/// Per-client (possibly stochastic) gradient access.
///
/// Implementations must be pure given the rng stream so that client runs can
/// execute concurrently.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;

    fn num_clients(&self) -> usize;

    fn gradient(&self, client: usize, x: &ParamVector, rng: &mut SimRng) -> Result<ParamVector>;
}

/// A deterministic objective `F = Σ w_i F_i`.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticFamily),
    LogReg(LogRegTask),
}

impl Problem {
    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.dim(),
            Problem::LogReg(l) => l.dim(),
        }
    }

    pub fn num_clients(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.num_clients(),
            Problem::LogReg(l) => l.num_clients(),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            Problem::Quadratic(q) => q.weights(),
            Problem::LogReg(l) => l.weights().to_vec(),
        }
    }

    pub fn client_loss(&self, client: usize, x: &ParamVector) -> f64 {
        match self {
            Problem::Quadratic(q) => q.loss(client, x),
            Problem::LogReg(l) => l.loss(client, x),
        }
    }

    pub fn client_grad(&self, client: usize, x: &ParamVector) -> ParamVector {
        match self {
            Problem::Quadratic(q) => q.grad(client, x),
            Problem::LogReg(l) => l.full_grad(client, x),
        }
    }

    /// Global objective `Σ w_i F_i(x)`.
    pub fn loss(&self, x: &ParamVector) -> f64 {
        self.weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.client_loss(i, x))
            .sum()
    }

    /// Global gradient, reduced in ascending client order.
    pub fn grad(&self, x: &ParamVector) -> ParamVector {
        let mut g = ParamVector::zeros(self.dim());
        for (i, w) in self.weights().iter().enumerate() {
            g.axpy(*w, &self.client_grad(i, x));
        }
        g
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticFamily> {
        match self {
            Problem::Quadratic(q) => Some(q),
            Problem::LogReg(_) => None,
        }
    }
}

/// A problem together with the noise model of its gradient oracle.
#[derive(Debug, Clone)]
pub struct Task {
    pub problem: Problem,
    pub noise: NoiseModel,
}

impl Task {
    pub fn new(problem: Problem, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        if let (Problem::Quadratic(_), NoiseModel::Minibatch { .. }) = (&problem, &noise) {
            return Err(Error::config(
                "minibatch noise requires a data-backed problem (logreg)",
            ));
        }
        Ok(Self { problem, noise })
    }

    pub fn deterministic(problem: Problem) -> Self {
        Self {
            problem,
            noise: NoiseModel::None,
        }
    }

    /// Assumption-level variance bound `E‖g − ∇F_i‖² ≤ σ²`, returned as σ.
    /// Only defined for additive Gaussian noise (and trivially for none).
    pub fn gradient_noise_std(&self) -> Option<f64> {
        match self.noise {
            NoiseModel::None => Some(0.0),
            NoiseModel::Gaussian { sigma } => Some(sigma * (self.problem.dim() as f64).sqrt()),
            NoiseModel::Minibatch { .. } => None,
        }
    }
}

impl GradientOracle for Task {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn num_clients(&self) -> usize {
        self.problem.num_clients()
    }

    fn gradient(&self, client: usize, x: &ParamVector, rng: &mut SimRng) -> Result<ParamVector> {
        if client >= self.num_clients() {
            return Err(Error::config(format!("client {client} out of range")));
        }
        x.ensure_dim(self.dim())?;
        let g = match (&self.problem, &self.noise) {
            (Problem::LogReg(task), NoiseModel::Minibatch { batch_size }) => {
                task.minibatch_grad(client, x, *batch_size, rng)?
            }
            (problem, NoiseModel::Gaussian { sigma }) => {
                noisy_grad(&problem.client_grad(client, x), *sigma, rng)
            }
            (problem, _) => problem.client_grad(client, x),
        };
        g.ensure_finite("gradient")?;
        Ok(g)
    }
}
