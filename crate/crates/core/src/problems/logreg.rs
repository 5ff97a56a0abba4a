//! Synthetic federated logistic regression.
//!
//! Features are Gaussian around `±μ` depending on the label, with an
//! optional per-coordinate scale decay for ill-conditioning. Label skew moves
//! each client's positive-class fraction away from 1/2 towards a client
//! specific draw from `Beta(0.5, 0.5)` (a two-class Dirichlet).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::rng::{stream, SimRng};

fn default_lambda() -> f64 {
    1e-3
}

fn default_separation() -> f64 {
    1.0
}

fn default_scale_decay() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegSpec {
    pub seed: u64,
    pub clients: usize,
    pub n_per_client: usize,
    pub dim: usize,
    /// Label-distribution heterogeneity in `[0, 1]`; 0 is IID.
    pub skew: f64,
    /// L2 regularization `λ ≥ 0`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Norm of the class-mean offset `μ`.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Coordinate `j` is scaled by `scale_decay^j`.
    #[serde(default = "default_scale_decay")]
    pub scale_decay: f64,
}

impl LogRegSpec {
    pub fn new(seed: u64, clients: usize, n_per_client: usize, dim: usize, skew: f64) -> Self {
        Self {
            seed,
            clients,
            n_per_client,
            dim,
            skew,
            lambda: default_lambda(),
            separation: default_separation(),
            scale_decay: default_scale_decay(),
        }
    }
}

/// One client's data. Labels are in `{0, 1}`; features are row-major.
#[derive(Debug, Clone)]
pub struct LogRegShard {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub positive_fraction: f64,
}

impl LogRegShard {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, r: usize, dim: usize) -> &[f64] {
        &self.features[r * dim..(r + 1) * dim]
    }
}

#[derive(Debug, Clone)]
pub struct LogRegTask {
    spec: LogRegSpec,
    shards: Vec<LogRegShard>,
    weights: Vec<f64>,
}

/// Builds the task deterministically from `spec.seed`.
pub fn make_logreg(spec: &LogRegSpec) -> Result<LogRegTask> {
    if spec.clients == 0 {
        return Err(Error::Empty("logreg clients"));
    }
    if spec.n_per_client == 0 {
        return Err(Error::Empty("client shard"));
    }
    if spec.dim == 0 {
        return Err(Error::config("logreg dimension must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.skew) {
        return Err(Error::config(format!("skew {} outside [0, 1]", spec.skew)));
    }
    if !(spec.lambda >= 0.0 && spec.lambda.is_finite()) {
        return Err(Error::config("lambda must be >= 0"));
    }
    if !(spec.scale_decay > 0.0 && spec.separation.is_finite()) {
        return Err(Error::config("scale_decay must be > 0 and separation finite"));
    }

    let mut shared = stream(spec.seed, &[0]);
    let direction: Vec<f64> = (0..spec.dim).map(|_| shared.sample(StandardNormal)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let scales: Vec<f64> = (0..spec.dim).map(|j| spec.scale_decay.powi(j as i32)).collect();
    let mean: Vec<f64> = direction
        .iter()
        .zip(&scales)
        .map(|(v, s)| spec.separation * v / norm * s)
        .collect();
    let beta = Beta::new(0.5, 0.5).expect("valid beta parameters");

    let shards = (0..spec.clients)
        .map(|i| {
            let mut rng = stream(spec.seed, &[1, i as u64]);
            let draw: f64 = beta.sample(&mut rng);
            let p = 0.5 * (1.0 - spec.skew) + spec.skew * draw;
            let mut features = Vec::with_capacity(spec.n_per_client * spec.dim);
            let mut labels = Vec::with_capacity(spec.n_per_client);
            for _ in 0..spec.n_per_client {
                let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                let sign = 2.0 * y - 1.0;
                for j in 0..spec.dim {
                    let z: f64 = rng.sample(StandardNormal);
                    features.push(sign * mean[j] + scales[j] * z);
                }
                labels.push(y);
            }
            LogRegShard {
                features,
                labels,
                positive_fraction: p,
            }
        })
        .collect();

    Ok(LogRegTask {
        spec: spec.clone(),
        shards,
        weights: vec![1.0 / spec.clients as f64; spec.clients],
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogRegTask {
    pub fn spec(&self) -> &LogRegSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, i: usize) -> &LogRegShard {
        &self.shards[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.spec.lambda
    }

    /// Mean log-loss on client `i` plus `λ/2 ‖x‖²`.
    pub fn loss(&self, i: usize, x: &ParamVector) -> f64 {
        let shard = &self.shards[i];
        let dim = self.dim();
        let data: f64 = (0..shard.len())
            .map(|r| {
                let z: f64 = shard.row(r, dim).iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                softplus(z) - shard.labels[r] * z
            })
            .sum();
        data / shard.len() as f64 + 0.5 * self.spec.lambda * x.norm_sq()
    }

    fn grad_over(&self, i: usize, x: &ParamVector, rows: impl Iterator<Item = usize>) -> ParamVector {
        let shard = &self.shards[i];
        let dim = self.dim();
        let mut g = vec![0.0; dim];
        let mut count = 0usize;
        for r in rows {
            let row = shard.row(r, dim);
            let z: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            let residual = sigmoid(z) - shard.labels[r];
            for (gj, aj) in g.iter_mut().zip(row) {
                *gj += residual * aj;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        ParamVector::new(
            g.iter()
                .zip(x.iter())
                .map(|(gj, xj)| gj * inv + self.spec.lambda * xj)
                .collect(),
        )
    }

    /// Full-batch gradient of client `i`.
    pub fn full_grad(&self, i: usize, x: &ParamVector) -> ParamVector {
        self.grad_over(i, x, 0..self.shards[i].len())
    }

    /// Minibatch gradient over `batch` rows drawn without replacement.
    /// `batch ≥ n` returns the full-batch gradient without touching `rng`.
    pub fn minibatch_grad(
        &self,
        i: usize,
        x: &ParamVector,
        batch: usize,
        rng: &mut SimRng,
    ) -> Result<ParamVector> {
        let n = self.shards[i].len();
        if batch == 0 {
            return Err(Error::config("minibatch size must be >= 1"));
        }
        if batch >= n {
            return Ok(self.full_grad(i, x));
        }
        let mut rows = index::sample(rng, n, batch).into_vec();
        rows.sort_unstable();
        Ok(self.grad_over(i, x, rows.into_iter()))
    }

    /// Smoothness constant `max_i λ_max(A_iᵀA_i)/(4n) + λ` over clients.
    pub fn smoothness(&self) -> f64 {
        let dim = self.dim();
        self.shards
            .iter()
            .map(|s| {
                let a = DMatrix::from_row_slice(s.len(), dim, &s.features);
                let gram = a.transpose() * &a / (4.0 * s.len() as f64);
                SymmetricEigen::new(gram).eigenvalues.max()
            })
            .fold(0.0, f64::max)
            + self.spec.lambda
    }
}
