use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::{
    ClientKind, ClientOptConfig, ExperimentConfig, NamedPreconditioner, PreconditionerConfig,
};
use super::metrics::MetricsRecord;
use super::schedule::{lr_at, LrSchedule};
use crate::client_opt::{run_local, ClientOptSpec, ClientRule, LocalRunResult};
use crate::correction::{aggregate_global_norm, apply_global, apply_local, CorrectionMode};
use crate::error::{Error, Result};
use crate::linalg::{DiagMatrix, ParamVector};
use crate::problems::{
    fixed_point_closed_form, make_logreg, LinearClientRule, Problem, QuadraticFamily, Task,
};
use crate::rng::{client_stream, sampling_stream, SimRng};
use crate::server_opt::{aggregate, sample_clients, server_step, ServerOptSpec, ServerState};

/// A validated, fully resolved experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub task: Task,
    /// Base optimizer of each client, before the schedule is applied.
    pub clients: Vec<ClientOptSpec>,
    pub server: ServerOptSpec,
    pub correction: CorrectionMode,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub x0: ParamVector,
    pub record_iterates: bool,
    pub compute_metrics: bool,
    pub parallel: bool,
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub final_x: ParamVector,
    /// Global model after each round, when requested.
    pub iterates: Option<Vec<ParamVector>>,
}

fn resolve_preconditioner(
    pc: &PreconditionerConfig,
    family: Option<&QuadraticFamily>,
    client: usize,
) -> Result<DiagMatrix> {
    match pc {
        PreconditionerConfig::Diagonal(d) => Ok(DiagMatrix::new(d.clone())),
        PreconditionerConfig::Named(NamedPreconditioner::Ideal) => family
            .ok_or_else(|| Error::config("ideal preconditioner requires a quadratic problem"))?
            .inverse_hessian_diag(client),
    }
}

fn resolve_client(
    base: &ClientOptConfig,
    lr: f64,
    local_steps: usize,
    preconditioner: Option<&PreconditionerConfig>,
    family: Option<&QuadraticFamily>,
    client: usize,
) -> Result<ClientOptSpec> {
    let rule = match (base.kind, preconditioner) {
        (ClientKind::PrecondGd, Some(pc)) => {
            ClientRule::PrecondGd(resolve_preconditioner(pc, family, client)?)
        }
        (ClientKind::PrecondGd, None) => {
            return Err(Error::config(format!(
                "client {client}: precond_gd needs a preconditioner"
            )))
        }
        (_, Some(_)) => {
            return Err(Error::config("preconditioner is only valid for precond_gd"))
        }
        (ClientKind::Sgd, None) => ClientRule::Sgd,
        (ClientKind::AdaGrad, None) => ClientRule::AdaGrad,
        (ClientKind::Adam, None) => ClientRule::Adam,
        (ClientKind::Yogi, None) => ClientRule::Yogi,
    };
    let spec = ClientOptSpec {
        rule,
        lr,
        local_steps,
        beta1: base.beta1,
        beta2: base.beta2,
        eps: base.eps,
    };
    spec.validate()
        .map_err(|e| Error::config(format!("client {client}: {e}")))?;
    Ok(spec)
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let family = cfg.problem.quadratic_family(cfg.base_dir.as_deref())?;
        let problem = match (&family, &cfg.problem) {
            (Some(f), _) => Problem::Quadratic(f.clone()),
            (None, super::config::ProblemConfig::Logreg(spec)) => Problem::LogReg(make_logreg(spec)?),
            (None, _) => unreachable!("non-logreg problems resolve to a quadratic family"),
        };
        let task = Task::new(problem, cfg.noise)?;
        let m = task.problem.num_clients();
        let dim = task.problem.dim();

        for o in &cfg.client_overrides {
            if o.client >= m {
                return Err(Error::config(format!(
                    "override for client {} but there are {m} clients",
                    o.client
                )));
            }
        }
        let clients = (0..m)
            .map(|i| {
                let o = cfg.client_overrides.iter().rev().find(|o| o.client == i);
                let lr = o.and_then(|o| o.lr).unwrap_or(cfg.client_opt.lr);
                let steps = o
                    .and_then(|o| o.local_steps)
                    .unwrap_or(cfg.client_opt.local_steps);
                let pc = o
                    .and_then(|o| o.preconditioner.as_ref())
                    .or(cfg.client_opt.preconditioner.as_ref());
                resolve_client(&cfg.client_opt, lr, steps, pc, family.as_ref(), i)
            })
            .collect::<Result<Vec<_>>>()?;

        let server = ServerOptSpec {
            rule: cfg.server_opt.kind,
            lr: cfg.server_opt.lr,
            eps: cfg.server_opt.eps,
            beta1: cfg.server_opt.beta1,
            beta2: cfg.server_opt.beta2,
        };

        let mut schedule = cfg.lr_schedule.clone();
        if let LrSchedule::InverseTime { mu: mu @ None, .. } = &mut schedule {
            let f = family.as_ref().ok_or_else(|| {
                Error::config("inverse_time schedule needs mu for non-quadratic problems")
            })?;
            *mu = Some(
                (0..m)
                    .map(|i| f.eigen_bounds(i).0)
                    .fold(f64::INFINITY, f64::min),
            );
        }

        let x0 = match &cfg.x0 {
            Some(v) => ParamVector::new(v.clone()),
            None => ParamVector::zeros(dim),
        };

        let exp = Self {
            task,
            clients,
            server,
            correction: cfg.correction,
            clients_per_round: cfg.clients_per_round.unwrap_or(m),
            rounds: cfg.rounds,
            seed: cfg.seed,
            schedule,
            x0,
            record_iterates: cfg.record_iterates,
            compute_metrics: cfg.compute_metrics,
            parallel: cfg.parallel,
            timing: cfg.timing,
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.task.problem.num_clients();
        if self.clients.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.clients.len(),
            });
        }
        for c in &self.clients {
            c.validate()?;
        }
        self.server.validate()?;
        self.schedule.validate()?;
        if !(1..=m).contains(&self.clients_per_round) {
            return Err(Error::config(format!(
                "clients_per_round must be in 1..={m}, got {}",
                self.clients_per_round
            )));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        self.x0.ensure_dim(self.task.problem.dim())?;
        self.x0.ensure_finite("x0")
    }

    pub fn full_participation(&self) -> bool {
        self.clients_per_round == self.task.problem.num_clients()
    }

    /// Client optimizers and server rate in effect in round `t`.
    pub fn specs_at(&self, t: usize) -> Result<(Vec<ClientOptSpec>, f64)> {
        let base = &self.clients[0];
        let (_, alpha) = lr_at(&self.schedule, base.lr, self.server.lr, base.local_steps, t)?;
        let specs = self
            .clients
            .iter()
            .map(|c| {
                let (eta, _) = lr_at(&self.schedule, c.lr, self.server.lr, c.local_steps, t)?;
                Ok(ClientOptSpec { lr: eta, ..c.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((specs, alpha))
    }

    /// Linear local rules of non-adaptive clients on a quadratic problem.
    pub fn linear_rules(&self, specs: &[ClientOptSpec]) -> Result<Vec<LinearClientRule>> {
        let dim = self.task.problem.dim();
        specs
            .iter()
            .map(|s| match &s.rule {
                ClientRule::Sgd => Ok(LinearClientRule::plain(s.lr, s.local_steps, dim)),
                ClientRule::PrecondGd(p) => Ok(LinearClientRule::new(s.lr, s.local_steps, p.clone())),
                _ => Err(Error::config("closed forms need sgd or precond_gd clients")),
            })
            .collect()
    }

    /// Fixed point of the expected round map under full participation, when
    /// it has a closed form.
    pub fn fixed_point(&self, specs: &[ClientOptSpec]) -> Result<ParamVector> {
        let family = self
            .task
            .problem
            .as_quadratic()
            .ok_or_else(|| Error::config("closed forms need a quadratic problem"))?;
        if !self.full_participation() {
            return Err(Error::config("closed forms need full participation"));
        }
        let rules = self.linear_rules(specs)?;
        if self.correction.local() {
            family.corrected_fixed_point(&rules)
        } else {
            fixed_point_closed_form(family, &rules)
        }
    }

    fn local_runs(
        &self,
        specs: &[ClientOptSpec],
        x: &ParamVector,
        ids: &[usize],
        stream_seed: u64,
        round: usize,
    ) -> Result<Vec<LocalRunResult>> {
        let run = |&id: &usize| {
            let mut rng = client_stream(stream_seed, round, id);
            run_local(&specs[id], &self.task, id, x, &mut rng, false)
        };
        let results: Vec<Result<LocalRunResult>> = if self.parallel {
            ids.par_iter().map(run).collect()
        } else {
            ids.iter().map(run).collect()
        };
        results.into_iter().collect()
    }

    /// Aggregated (and corrected) pseudo-gradient of the given clients,
    /// reduced in the order of `ids`.
    pub fn pseudo_gradient(
        &self,
        specs: &[ClientOptSpec],
        x: &ParamVector,
        ids: &[usize],
        weights: &[f64],
        stream_seed: u64,
        round: usize,
    ) -> Result<ParamVector> {
        let results = self.local_runs(specs, x, ids, stream_seed, round)?;
        let deltas = if self.correction.local() {
            results
                .iter()
                .map(|r| apply_local(&r.delta, &r.n_matrix))
                .collect::<Result<Vec<_>>>()?
        } else {
            results.iter().map(|r| r.delta.clone()).collect()
        };
        let agg = aggregate(&deltas, weights)?;
        if self.correction.global() {
            let ns: Vec<DiagMatrix> = results.into_iter().map(|r| r.n_matrix).collect();
            apply_global(&agg, &aggregate_global_norm(&ns, weights)?)
        } else {
            Ok(agg)
        }
    }

    fn participants(&self, round: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let m = self.task.problem.num_clients();
        if self.full_participation() {
            return Ok(((0..m).collect(), self.task.problem.weights()));
        }
        let ids = sample_clients(m, self.clients_per_round, &mut sampling_stream(self.seed, round))?;
        let w = vec![1.0 / ids.len() as f64; ids.len()];
        Ok((ids, w))
    }

    /// One round of the map `x ↦ x − (corrected aggregate delta)` with the
    /// first-round learning rates and all clients, i.e. the expected update of
    /// a unit-rate GD server. Client streams are derived from `rng`.
    pub fn round_map(&self, x: &ParamVector, rng: &mut SimRng) -> Result<ParamVector> {
        let (specs, _) = self.specs_at(0)?;
        let m = self.task.problem.num_clients();
        let ids: Vec<usize> = (0..m).collect();
        let pg = self.pseudo_gradient(&specs, x, &ids, &self.task.problem.weights(), rng.random(), 0)?;
        Ok(x.sub(&pg))
    }
}

/// Runs every round and returns one metrics record per round.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentOutput> {
    exp.validate()?;
    let start = exp.timing.then(Instant::now);
    let x_star = match exp.task.problem.as_quadratic() {
        Some(f) => Some(f.global_min()?),
        None => None,
    };
    let mut server = ServerState::new(&exp.server, exp.x0.len());
    let mut x = exp.x0.clone();
    let mut records = Vec::with_capacity(exp.rounds);
    let mut iterates = exp.record_iterates.then(Vec::new);
    let mut fixed: Option<(Vec<f64>, Option<ParamVector>)> = None;

    for t in 0..exp.rounds {
        let at_round = |e: Error| Error::Round {
            round: t,
            source: Box::new(e),
        };
        let (specs, alpha) = exp.specs_at(t).map_err(at_round)?;
        let (ids, weights) = exp.participants(t).map_err(at_round)?;
        let pg = exp
            .pseudo_gradient(&specs, &x, &ids, &weights, exp.seed, t)
            .map_err(at_round)?;
        x = server_step(&exp.server, &mut server, &x, &pg, alpha).map_err(at_round)?;

        let lrs: Vec<f64> = specs.iter().map(|s| s.lr).collect();
        if fixed.as_ref().is_none_or(|(k, _)| *k != lrs) {
            fixed = Some((lrs, exp.fixed_point(&specs).ok()));
        }
        let x_tilde = fixed.as_ref().and_then(|(_, f)| f.as_ref());
        let (loss, grad_norm) = if exp.compute_metrics {
            (
                Some(exp.task.problem.loss(&x)),
                Some(exp.task.problem.grad(&x).norm()),
            )
        } else {
            (None, None)
        };
        records.push(MetricsRecord {
            round: t + 1,
            loss,
            grad_norm,
            dist_to_opt: x_star.as_ref().map(|s| x.dist(s)),
            dist_to_fixed: x_tilde.map(|f| x.dist(f)),
            eta: specs[0].lr,
            alpha,
            elapsed_ms: start.map(|s| s.elapsed().as_secs_f64() * 1e3),
        });
        if let Some(it) = iterates.as_mut() {
            it.push(x.clone());
        }
    }
    Ok(ExperimentOutput {
        records,
        final_x: x,
        iterates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::NoiseModel;
    use approx::assert_abs_diff_eq;

    fn scalar_cfg(extra: &str) -> ExperimentConfig {
        let text = format!(
            r#"{{
                "schema_version": 1,
                "problem": {{"type": "builtin", "family": "scalar_pair"}},
                "client_opt": {{"kind": "sgd", "lr": 0.1, "local_steps": 2}},
                "rounds": 200{extra}
            }}"#
        );
        ExperimentConfig::from_json(&text).unwrap()
    }

    #[test]
    fn converges_to_closed_form_fixed_point() {
        let exp = Experiment::from_config(&scalar_cfg("")).unwrap();
        let out = run_experiment(&exp).unwrap();
        assert_abs_diff_eq!(out.final_x[0], 1.654545454545, epsilon = 1e-6);
        let last = out.records.last().unwrap();
        assert!(last.dist_to_fixed.unwrap() < 1e-6);
        assert_abs_diff_eq!(last.dist_to_opt.unwrap(), 5.0 / 3.0 - 1.654545454545, epsilon = 1e-6);
        assert_eq!(out.records.len(), 200);
        assert!(out.records.windows(2).all(|w| w[1].round == w[0].round + 1));
    }

    #[test]
    fn single_client_matches_gradient_descent() {
        let text = r#"{
            "schema_version": 1,
            "problem": {"type": "quadratic", "clients": [
                {"h": [[3.0, 1.0], [1.0, 2.0]], "x_star": [1.0, -1.0], "w": 1.0}
            ]},
            "client_opt": {"kind": "sgd", "lr": 0.2, "local_steps": 1},
            "x0": [4.0, 2.0],
            "record_iterates": true,
            "rounds": 30
        }"#;
        let exp = Experiment::from_config(&ExperimentConfig::from_json(text).unwrap()).unwrap();
        let out = run_experiment(&exp).unwrap();
        let mut x = exp.x0.clone();
        for it in out.iterates.unwrap() {
            x.axpy(-0.2, &exp.task.problem.grad(&x));
            assert_eq!(it, x);
        }
    }

    #[test]
    fn sampling_uses_uniform_weights_and_is_seeded() {
        let cfg = scalar_cfg(r#", "clients_per_round": 1, "seed": 4"#);
        let exp = Experiment::from_config(&cfg).unwrap();
        let (ids, w) = exp.participants(3).unwrap();
        assert_eq!((ids.len(), w), (1, vec![1.0]));
        let a = run_experiment(&exp).unwrap();
        let b = run_experiment(&exp).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.records.iter().all(|r| r.dist_to_fixed.is_none()));
    }

    #[test]
    fn parallel_matches_serial() {
        let mut cfg = scalar_cfg(r#", "noise": {"type": "gaussian", "sigma": 0.3}, "seed": 12"#);
        let serial = run_experiment(&Experiment::from_config(&cfg).unwrap()).unwrap();
        cfg.parallel = true;
        let parallel = run_experiment(&Experiment::from_config(&cfg).unwrap()).unwrap();
        assert_eq!(serial.records, parallel.records);
        assert_eq!(serial.final_x, parallel.final_x);
    }

    #[test]
    fn config_errors_surface_before_running() {
        let bad_s = scalar_cfg(r#", "clients_per_round": 3"#);
        assert!(matches!(Experiment::from_config(&bad_s), Err(Error::InvalidConfig(_))));
        let bad_x0 = scalar_cfg(r#", "x0": [1.0, 2.0]"#);
        assert!(Experiment::from_config(&bad_x0).is_err());
        let mut no_rounds = scalar_cfg("");
        no_rounds.rounds = 0;
        assert!(Experiment::from_config(&no_rounds).is_err());
        let mut mb = scalar_cfg("");
        mb.noise = NoiseModel::Minibatch { batch_size: 2 };
        assert!(Experiment::from_config(&mb).is_err());
    }

    #[test]
    fn divergence_reports_round() {
        let cfg = scalar_cfg(r#", "server_opt": {"kind": "gd", "lr": 1e200}"#);
        let err = run_experiment(&Experiment::from_config(&cfg).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Round { .. }), "{err:?}");
    }

    #[test]
    fn inverse_time_mu_resolved_from_curvature() {
        let cfg = scalar_cfg(r#", "lr_schedule": {"type": "inverse_time", "beta": 10.0}"#);
        let exp = Experiment::from_config(&cfg).unwrap();
        assert_eq!(exp.schedule, LrSchedule::InverseTime { beta: 10.0, mu: Some(1.0) });
    }

    #[test]
    fn round_map_fixed_point() {
        let exp = Experiment::from_config(&scalar_cfg("")).unwrap();
        let fp = exp.fixed_point(&exp.specs_at(0).unwrap().0).unwrap();
        let mut rng = crate::rng::stream(0, &[]);
        assert_abs_diff_eq!(exp.round_map(&fp, &mut rng).unwrap()[0], fp[0], epsilon = 1e-12);
    }
}
