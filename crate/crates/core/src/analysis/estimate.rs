use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{sgd_h, sgd_q};
use crate::client_opt::{apply_operator, ClientOptSpec, ClientRule};
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::problems::{GradientOracle, Problem, Task};
use crate::rng::{stream, SimRng};

/// Empirical contraction of the expected local operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub k: usize,
    pub h_hat: f64,
    /// `(1 − ημ)^{2k}` when the client runs SGD on an isotropic quadratic.
    pub h_closed_form: Option<f64>,
    /// Per-trial `‖A(x) − A(y)‖²/‖x − y‖²` under a shared random stream.
    pub ratios: Vec<f64>,
}

/// Empirical cumulative variance of the local operator, per unit `σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub k: usize,
    pub q_hat: f64,
    /// `kη²`
    pub q_bound: f64,
    pub sigma: f64,
    pub standard_error: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub x: ParamVector,
    pub residual: f64,
}

/// Curvature `μ` when client `i` is a quadratic with `H_i = μI`.
fn isotropic_curvature(problem: &Problem, client: usize) -> Option<f64> {
    let family = problem.as_quadratic()?;
    let h = &family.client(client).h;
    let mu = h[(0, 0)];
    let isotropic = (0..h.nrows())
        .all(|r| (0..h.ncols()).all(|c| h[(r, c)] == if r == c { mu } else { 0.0 }));
    isotropic.then_some(mu)
}

fn trial_outputs(
    trials: usize,
    seed: u64,
    f: impl Fn(&mut SimRng) -> Result<Vec<ParamVector>> + Sync,
) -> Result<Vec<Vec<ParamVector>>> {
    if trials == 0 {
        return Err(Error::config("trials must be >= 1"));
    }
    (0..trials)
        .into_par_iter()
        .map(|t| f(&mut stream(seed, &[t as u64])))
        .collect()
}

/// Monte-Carlo estimate of `‖E[A_i(x; k)] − E[A_i(y; k)]‖²/‖x − y‖²`.
///
/// The x-run and y-run of each trial consume identical random streams, so
/// with minibatch noise both traverse the same batch sequence.
#[allow(clippy::too_many_arguments)]
pub fn estimate_h(
    spec: &ClientOptSpec,
    task: &Task,
    client: usize,
    k: usize,
    x: &ParamVector,
    y: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<ContractionReport> {
    spec.validate()?;
    x.ensure_dim(task.dim())?;
    y.ensure_dim(task.dim())?;
    let gap = x.dist_sq(y);
    if !(gap > 0.0) {
        return Err(Error::config("contraction estimate needs x != y"));
    }
    let pairs = trial_outputs(trials, seed, |rng| {
        let mut paired = rng.clone();
        let ax = apply_operator(spec, task, client, x, k, rng)?;
        let ay = apply_operator(spec, task, client, y, k, &mut paired)?;
        Ok(vec![ax, ay])
    })?;

    let ratios = pairs.iter().map(|p| p[0].dist_sq(&p[1]) / gap).collect();
    let xs: Vec<ParamVector> = pairs.iter().map(|p| p[0].clone()).collect();
    let ys: Vec<ParamVector> = pairs.into_iter().map(|mut p| p.swap_remove(1)).collect();
    let h_hat = ParamVector::mean(&xs)?.dist_sq(&ParamVector::mean(&ys)?) / gap;
    let h_closed_form = match spec.rule {
        ClientRule::Sgd => isotropic_curvature(&task.problem, client).map(|mu| sgd_h(spec.lr, mu, k)),
        _ => None,
    };
    Ok(ContractionReport {
        k,
        h_hat,
        h_closed_form,
        ratios,
    })
}

/// Monte-Carlo estimate of `E‖A_i(x; k) − E A_i(x; k)‖²/σ²`, with `σ²` the
/// total gradient-noise variance of the task.
pub fn estimate_q(
    spec: &ClientOptSpec,
    task: &Task,
    client: usize,
    k: usize,
    x: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    spec.validate()?;
    x.ensure_dim(task.dim())?;
    let sigma = task
        .gradient_noise_std()
        .ok_or_else(|| Error::config("variance estimate needs a noise model with known σ"))?;
    let q_bound = sgd_q(spec.lr, k);
    if sigma == 0.0 {
        return Ok(VarianceReport {
            k,
            q_hat: 0.0,
            q_bound,
            sigma,
            standard_error: 0.0,
            trials,
        });
    }
    let outs: Vec<ParamVector> = trial_outputs(trials, seed, |rng| {
        Ok(vec![apply_operator(spec, task, client, x, k, rng)?])
    })?
    .into_iter()
    .map(|mut v| v.swap_remove(0))
    .collect();

    let mean = ParamVector::mean(&outs)?;
    let s2 = sigma * sigma;
    let dev: Vec<f64> = outs.iter().map(|o| o.dist_sq(&mean) / s2).collect();
    let n = dev.len() as f64;
    let (q_hat, standard_error) = if dev.len() > 1 {
        let q_hat = dev.iter().sum::<f64>() / (n - 1.0);
        let avg = dev.iter().sum::<f64>() / n;
        let var = dev.iter().map(|d| (d - avg).powi(2)).sum::<f64>() / (n - 1.0);
        (q_hat, (var / n).sqrt())
    } else {
        (0.0, f64::INFINITY)
    };
    Ok(VarianceReport {
        k,
        q_hat,
        q_bound,
        sigma,
        standard_error,
        trials,
    })
}

/// `‖x − E[A(x)]‖` at each grid point, averaging `trials` draws of the
/// round operator. Trial `t` uses the same stream at every grid point.
pub fn residual_landscape<F>(
    round_operator: F,
    grid: &[ParamVector],
    trials: usize,
    seed: u64,
) -> Result<Vec<LandscapePoint>>
where
    F: Fn(&ParamVector, &mut SimRng) -> Result<ParamVector> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Empty("landscape grid"));
    }
    grid.iter()
        .map(|x| {
            let outs: Vec<ParamVector> = trial_outputs(trials, seed, |rng| {
                Ok(vec![round_operator(x, rng)?])
            })?
            .into_iter()
            .map(|mut v| v.swap_remove(0))
            .collect();
            Ok(LandscapePoint {
                x: x.clone(),
                residual: x.dist(&ParamVector::mean(&outs)?),
            })
        })
        .collect()
}
