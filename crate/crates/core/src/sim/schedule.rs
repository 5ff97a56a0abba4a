use serde::{Deserialize, Serialize};

use crate::analysis::decaying_server_lr;
use crate::error::{Error, Result};

/// Learning-rate schedule over rounds (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Client learning rates are divided by `factor` at each listed round.
    StepDecay { rounds: Vec<usize>, factor: f64 },
    /// Constant client rate with the decaying server rate
    /// `α_t = 2/[(1 − (1 − ημ)^{2τ})(t + β)]`. `mu` defaults to the smallest
    /// client curvature on quadratic problems.
    InverseTime {
        beta: f64,
        #[serde(default)]
        mu: Option<f64>,
    },
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrSchedule::Constant => Ok(()),
            LrSchedule::StepDecay { rounds, factor } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(Error::config(format!("decay factor must be > 0, got {factor}")));
                }
                if rounds.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config("decay rounds must be strictly increasing"));
                }
                Ok(())
            }
            LrSchedule::InverseTime { beta, mu } => {
                if !(*beta > 0.0 && beta.is_finite()) {
                    return Err(Error::config(format!("schedule beta must be > 0, got {beta}")));
                }
                match mu {
                    Some(m) if !(*m > 0.0 && m.is_finite()) => {
                        Err(Error::config(format!("schedule mu must be > 0, got {m}")))
                    }
                    _ => Ok(()),
                }
            }
        }
    }
}

/// `(η_t, α_t)` for round `t` given base rates and the client's local steps.
pub fn lr_at(
    schedule: &LrSchedule,
    eta: f64,
    alpha: f64,
    local_steps: usize,
    t: usize,
) -> Result<(f64, f64)> {
    match schedule {
        LrSchedule::Constant => Ok((eta, alpha)),
        LrSchedule::StepDecay { rounds, factor } => {
            let decays = rounds.iter().filter(|&&r| t >= r).count();
            let mut eta_t = eta;
            for _ in 0..decays {
                eta_t /= factor;
            }
            Ok((eta_t, alpha))
        }
        LrSchedule::InverseTime { beta, mu } => {
            let mu = mu.ok_or_else(|| Error::config("inverse_time schedule needs mu"))?;
            Ok((eta, decaying_server_lr(t, eta, mu, local_steps, *beta)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant() {
        for t in [0, 1, 500] {
            assert_eq!(lr_at(&LrSchedule::Constant, 0.3, 0.7, 2, t).unwrap(), (0.3, 0.7));
        }
    }

    #[test]
    fn step_decay() {
        let s = LrSchedule::StepDecay {
            rounds: vec![200, 400],
            factor: 10.0,
        };
        let at = |t| lr_at(&s, 0.5, 1.0, 1, t).unwrap().0;
        assert_eq!(at(0), 0.5);
        assert_eq!(at(199), 10.0 * at(200));
        assert_eq!(at(200), 0.05);
        assert_eq!(at(399), at(200));
        assert_eq!(at(400), 0.005);
        assert_eq!(lr_at(&s, 0.5, 1.0, 1, 450).unwrap().1, 1.0);
    }

    #[test]
    fn inverse_time_delegates() {
        let s = LrSchedule::InverseTime {
            beta: 3.0,
            mu: Some(0.5),
        };
        for t in [0, 7, 99] {
            let (eta, alpha) = lr_at(&s, 0.1, 1.0, 4, t).unwrap();
            assert_eq!(eta, 0.1);
            assert_eq!(alpha, decaying_server_lr(t, 0.1, 0.5, 4, 3.0));
        }
        let unresolved = LrSchedule::InverseTime { beta: 3.0, mu: None };
        assert!(lr_at(&unresolved, 0.1, 1.0, 4, 0).is_err());
    }

    #[test]
    fn validation() {
        let bad = LrSchedule::StepDecay {
            rounds: vec![5, 5],
            factor: 2.0,
        };
        assert!(bad.validate().is_err());
        assert!(LrSchedule::InverseTime { beta: 0.0, mu: None }.validate().is_err());
        assert!(LrSchedule::Constant.validate().is_ok());
    }
}
