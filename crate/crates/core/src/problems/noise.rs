use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::rng::SimRng;

/// Source of gradient stochasticity. At most one mechanism is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive isotropic Gaussian noise with per-coordinate std `sigma`.
    Gaussian { sigma: f64 },
    /// Uniform minibatch subsampling without replacement.
    Minibatch { batch_size: usize },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(Error::config(format!("noise sigma must be >= 0, got {sigma}")))
            }
            NoiseModel::Minibatch { batch_size: 0 } => {
                Err(Error::config("minibatch size must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            NoiseModel::None => true,
            NoiseModel::Gaussian { sigma } => *sigma == 0.0,
            NoiseModel::Minibatch { .. } => false,
        }
    }
}

/// `g + σ z` with `z` standard normal.
pub fn noisy_grad(g: &ParamVector, sigma: f64, rng: &mut SimRng) -> ParamVector {
    if sigma == 0.0 {
        return g.clone();
    }
    ParamVector::new(
        g.iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v + sigma * z
            })
            .collect(),
    )
}
