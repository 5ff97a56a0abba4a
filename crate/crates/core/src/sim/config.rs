//! JSON experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::schedule::LrSchedule;
use crate::correction::CorrectionMode;
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::problems::{LogRegSpec, NoiseModel, QuadraticClient, QuadraticFamily, DEFAULT_MAX_DIM};
use crate::server_opt::ServerRule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticClientConfig {
    /// Symmetric positive-definite Hessian, row by row.
    pub h: Vec<Vec<f64>>,
    /// Local minimizer; alternative to `e`.
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
    /// Linear term of `½xᵀHx − eᵀx + c`.
    #[serde(default)]
    pub e: Option<Vec<f64>>,
    #[serde(default)]
    pub c: f64,
    pub w: f64,
}

impl QuadraticClientConfig {
    fn build(&self) -> Result<QuadraticClient> {
        let dim = self.h.len();
        if dim == 0 {
            return Err(Error::Empty("Hessian"));
        }
        for row in &self.h {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        let h = DMatrix::from_fn(dim, dim, |r, c| self.h[r][c]);
        match (&self.x_star, &self.e) {
            (Some(x), None) => {
                let x = ParamVector::new(x.clone());
                x.ensure_dim(dim)?;
                Ok(QuadraticClient::with_minimizer(h, &x, self.w))
            }
            (None, Some(e)) => {
                let e = ParamVector::new(e.clone());
                e.ensure_dim(dim)?;
                Ok(QuadraticClient::new(h, e, self.c, self.w))
            }
            _ => Err(Error::config("quadratic client needs exactly one of x_star or e")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticFamilyFile {
    pub clients: Vec<QuadraticClientConfig>,
    #[serde(default)]
    pub max_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinFamily {
    /// 1D, `H = (1, 2)`, `x* = (1, 2)`, equal weights.
    ScalarPair,
    /// 2D, dense Hessians, weights `(0.4, 0.6)`.
    PlanarPair,
    /// 2D, diagonal Hessians, equal weights.
    DiagonalPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Builtin { family: BuiltinFamily },
    Quadratic(QuadraticFamilyFile),
    /// Quadratic family read from a JSON file, relative to the config file.
    QuadraticFile { path: PathBuf },
    Logreg(LogRegSpec),
}

impl ProblemConfig {
    pub(crate) fn quadratic_family(&self, base_dir: Option<&Path>) -> Result<Option<QuadraticFamily>> {
        let from_file = |f: &QuadraticFamilyFile| -> Result<QuadraticFamily> {
            let clients = f.clients.iter().map(|c| c.build()).collect::<Result<Vec<_>>>()?;
            QuadraticFamily::with_max_dim(clients, f.max_dim.unwrap_or(DEFAULT_MAX_DIM))
        };
        Ok(Some(match self {
            ProblemConfig::Builtin { family } => match family {
                BuiltinFamily::ScalarPair => QuadraticFamily::scalar_pair(),
                BuiltinFamily::PlanarPair => QuadraticFamily::planar_pair(),
                BuiltinFamily::DiagonalPair => QuadraticFamily::diagonal_pair(),
            },
            ProblemConfig::Quadratic(f) => from_file(f)?,
            ProblemConfig::QuadraticFile { path } => {
                let full = match base_dir {
                    Some(d) if path.is_relative() => d.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full).map_err(|source| Error::Io {
                    path: full.clone(),
                    source,
                })?;
                let f: QuadraticFamilyFile =
                    serde_json::from_str(&text).map_err(|e| Error::Format {
                        path: full.clone(),
                        message: e.to_string(),
                    })?;
                from_file(&f)?
            }
            ProblemConfig::Logreg(_) => return Ok(None),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Sgd,
    PrecondGd,
    #[serde(rename = "adagrad")]
    AdaGrad,
    Adam,
    Yogi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPreconditioner {
    /// `P_i = H_i⁻¹`; requires a diagonal quadratic Hessian.
    Ideal,
}

/// Fixed preconditioner for `precond_gd`: `"ideal"` or an explicit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PreconditionerConfig {
    Named(NamedPreconditioner),
    Diagonal(Vec<f64>),
}

fn default_local_steps() -> usize {
    1
}

fn default_eps() -> f64 {
    1e-7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientOptConfig {
    pub kind: ClientKind,
    pub lr: f64,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub preconditioner: Option<PreconditionerConfig>,
}

/// Per-client replacement of selected client optimizer fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientOverride {
    pub client: usize,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub local_steps: Option<usize>,
    #[serde(default)]
    pub preconditioner: Option<PreconditionerConfig>,
}

fn default_server_lr() -> f64 {
    1.0
}

fn default_server_eps() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerOptConfig {
    pub kind: ServerRule,
    #[serde(default = "default_server_lr")]
    pub lr: f64,
    #[serde(default = "default_server_eps")]
    pub eps: f64,
    #[serde(default)]
    pub beta1: f64,
    #[serde(default)]
    pub beta2: f64,
}

impl Default for ServerOptConfig {
    fn default() -> Self {
        Self {
            kind: ServerRule::Gd,
            lr: default_server_lr(),
            eps: default_server_eps(),
            beta1: 0.0,
            beta2: 0.0,
        }
    }
}

fn default_trials() -> usize {
    1000
}

/// Parameters of the `validate` and `landscape` analyses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub client: usize,
    /// Local steps of the analyzed operator; defaults to the client's.
    #[serde(default)]
    pub k: Option<usize>,
    /// Base point; defaults to `x0`.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    /// Second point for the contraction estimate; defaults to `x + 1`.
    #[serde(default)]
    pub y: Option<Vec<f64>>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Relative slack allowed when comparing errors against the bound.
    #[serde(default)]
    pub slack: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            client: 0,
            k: None,
            x: None,
            y: None,
            trials: default_trials(),
            slack: 0.0,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub problem: ProblemConfig,
    pub client_opt: ClientOptConfig,
    #[serde(default)]
    pub client_overrides: Vec<ClientOverride>,
    #[serde(default)]
    pub server_opt: ServerOptConfig,
    #[serde(default)]
    pub correction: CorrectionMode,
    /// Clients sampled per round; all clients when absent.
    #[serde(default)]
    pub clients_per_round: Option<usize>,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Initial model; zeros when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub record_iterates: bool,
    /// Evaluate loss and gradient norm of the full objective every round.
    #[serde(default = "default_true")]
    pub compute_metrics: bool,
    /// Run the clients of a round on the rayon pool.
    #[serde(default)]
    pub parallel: bool,
    /// Record wall-clock time per round. Off by default because it makes
    /// metrics files differ between identical runs.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
