//! Analyses driven by an experiment configuration.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::AnalysisConfig;
use super::experiment::{run_experiment, Experiment};
use super::schedule::LrSchedule;
use crate::analysis::{
    convergence_bound, estimate_h, estimate_q, residual_landscape, BoundInputs, BoundReport,
    ContractionReport, LandscapePoint, VarianceReport,
};
use crate::client_opt::ClientOptSpec;
use crate::correction::CorrectionMode;
use crate::error::{Error, Result};
use crate::linalg::ParamVector;
use crate::problems::{fixed_point_closed_form, limiting_fixed_point, QuadraticFamily};
use crate::server_opt::ServerRule;

/// Closed-form fixed points of a quadratic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointSummary {
    /// `x*`
    pub global_min: ParamVector,
    /// Fixed point of the uncorrected round map; absent when not contractive.
    pub fixed_point: Option<ParamVector>,
    /// Fixed point under local (or joint) correction.
    pub corrected_fixed_point: ParamVector,
    /// Limit of the uncorrected fixed point as all client rates shrink
    /// proportionally.
    pub limiting_fixed_point: ParamVector,
    pub fixed_point_gap: Option<f64>,
    pub corrected_gap: f64,
    pub limiting_gap: f64,
    /// `‖Σ w_iK_i‖₂`
    pub aggregate_contraction: f64,
}

fn quadratic(exp: &Experiment) -> Result<&QuadraticFamily> {
    exp.task
        .problem
        .as_quadratic()
        .ok_or_else(|| Error::config("this analysis needs a quadratic problem"))
}

pub fn fixed_point_summary(exp: &Experiment) -> Result<FixedPointSummary> {
    let family = quadratic(exp)?;
    let rules = exp.linear_rules(&exp.clients)?;
    let x_star = family.global_min()?;
    let fixed_point = fixed_point_closed_form(family, &rules).ok();
    let corrected = family.corrected_fixed_point(&rules)?;
    let limiting = limiting_fixed_point(family, &rules)?;
    Ok(FixedPointSummary {
        fixed_point_gap: fixed_point.as_ref().map(|f| f.dist(&x_star)),
        corrected_gap: corrected.dist(&x_star),
        limiting_gap: limiting.dist(&x_star),
        aggregate_contraction: family.aggregate_contraction(&rules)?,
        global_min: x_star,
        fixed_point,
        corrected_fixed_point: corrected,
        limiting_fixed_point: limiting,
    })
}

fn analysis_spec(exp: &Experiment, cfg: &AnalysisConfig) -> Result<(ClientOptSpec, usize)> {
    let spec = exp
        .clients
        .get(cfg.client)
        .ok_or_else(|| Error::config(format!("analysis client {} out of range", cfg.client)))?
        .clone();
    let k = cfg.k.unwrap_or(spec.local_steps);
    Ok((spec, k))
}

fn analysis_point(exp: &Experiment, cfg: &AnalysisConfig) -> ParamVector {
    cfg.x
        .as_ref()
        .map(|v| ParamVector::new(v.clone()))
        .unwrap_or_else(|| exp.x0.clone())
}

/// Contraction estimate between `x` and `y` (default `x + 1`).
pub fn contraction_report(exp: &Experiment, cfg: &AnalysisConfig) -> Result<ContractionReport> {
    let (spec, k) = analysis_spec(exp, cfg)?;
    let x = analysis_point(exp, cfg);
    let y = match &cfg.y {
        Some(v) => ParamVector::new(v.clone()),
        None => x.add(&ParamVector::filled(x.len(), 1.0)),
    };
    estimate_h(&spec, &exp.task, cfg.client, k, &x, &y, cfg.trials, exp.seed)
}

pub fn variance_report(exp: &Experiment, cfg: &AnalysisConfig) -> Result<VarianceReport> {
    let (spec, k) = analysis_spec(exp, cfg)?;
    let x = analysis_point(exp, cfg);
    estimate_q(&spec, &exp.task, cfg.client, k, &x, cfg.trials, exp.seed)
}

/// Mean squared distance to the fixed point after each round, over
/// `trials` seeds, against the explicit convergence bound.
///
/// Requires a quadratic problem with non-adaptive clients, full
/// participation, no correction, a GD server, and constant rates.
pub fn bound_report(exp: &Experiment, trials: usize, slack: f64) -> Result<BoundReport> {
    let family = quadratic(exp)?;
    if !exp.full_participation()
        || exp.correction != CorrectionMode::None
        || exp.server.rule != ServerRule::Gd
        || exp.schedule != LrSchedule::Constant
    {
        return Err(Error::config(
            "bound check needs full participation, no correction, a gd server and a constant schedule",
        ));
    }
    if trials == 0 {
        return Err(Error::config("trials must be >= 1"));
    }
    let sigma = exp
        .task
        .gradient_noise_std()
        .ok_or_else(|| Error::config("bound check needs a noise model with known σ"))?;
    let rules = exp.linear_rules(&exp.clients)?;
    let x_tilde = fixed_point_closed_form(family, &rules)?;
    let h = (0..rules.len())
        .map(|i| family.contraction_constant(i, &rules[i]))
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = rules
        .iter()
        .map(|r| {
            let p_max = r.precond.iter().fold(0.0f64, |a, &b| a.max(b));
            r.steps as f64 * (r.lr * p_max).powi(2)
        })
        .collect();
    let inputs = BoundInputs {
        h,
        q,
        w: family.weights(),
        sigma,
        x0_err: exp.x0.dist_sq(&x_tilde),
        rounds: exp.rounds,
    };
    let trials = if exp.task.noise.is_deterministic() { 1 } else { trials };

    let runs: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|j| {
            let mut e = exp.clone();
            e.seed = exp.seed.wrapping_add(j);
            e.record_iterates = true;
            e.compute_metrics = false;
            e.parallel = false;
            let out = run_experiment(&e)?;
            Ok(out
                .iterates
                .unwrap_or_default()
                .iter()
                .map(|x| x.dist_sq(&x_tilde))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut measured = vec![0.0; exp.rounds];
    for run in &runs {
        for (m, e) in measured.iter_mut().zip(run) {
            *m += e / trials as f64;
        }
    }
    let rounds: Vec<usize> = (1..=exp.rounds).collect();
    let bound = rounds
        .iter()
        .map(|&t| convergence_bound(&BoundInputs { rounds: t, ..inputs.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let satisfied = measured
        .iter()
        .zip(&bound)
        .all(|(m, b)| *m <= b * (1.0 + slack));
    Ok(BoundReport {
        inputs,
        rounds,
        measured,
        bound,
        satisfied,
    })
}

/// Parses `lo:hi:n` axis specs separated by commas. A single axis is reused
/// for every dimension. Points are ordered with the last axis varying
/// fastest.
pub fn parse_grid(spec: &str, dim: usize) -> Result<Vec<ParamVector>> {
    let axes = spec
        .split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.trim().split(':').collect();
            let bad = || Error::config(format!("bad grid axis '{axis}', expected lo:hi:n"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].parse().map_err(|_| bad())?;
            let n: usize = parts[2].parse().map_err(|_| bad())?;
            if n == 0 || !lo.is_finite() || !hi.is_finite() {
                return Err(bad());
            }
            Ok((0..n)
                .map(|j| {
                    if n == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * j as f64 / (n - 1) as f64
                    }
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let axes = match axes.len() {
        1 => vec![axes[0].clone(); dim],
        n if n == dim => axes,
        n => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: n,
            })
        }
    };
    let mut points = vec![Vec::with_capacity(dim)];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    Ok(points.into_iter().map(ParamVector::new).collect())
}

/// Residual `‖x − E[round_map(x)]‖` over a grid.
pub fn landscape(exp: &Experiment, grid: &[ParamVector], trials: usize) -> Result<Vec<LandscapePoint>> {
    for g in grid {
        g.ensure_dim(exp.task.problem.dim())?;
    }
    let trials = if exp.task.noise.is_deterministic() { 1 } else { trials };
    residual_landscape(|x, rng| exp.round_map(x, rng), grid, trials, exp.seed)
}

/// CSV with columns `x_0, …, x_{d−1}, residual`, written atomically.
pub fn write_landscape(points: &[LandscapePoint], path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut w = csv::Writer::from_writer(tmp.as_file());
        let dim = points.first().map_or(0, |p| p.x.len());
        let mut header: Vec<String> = (0..dim).map(|j| format!("x_{j}")).collect();
        header.push("residual".into());
        let fmt = |e: csv::Error| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        w.write_record(&header).map_err(fmt)?;
        for p in points {
            let row: Vec<String> = p
                .x
                .iter()
                .chain(std::iter::once(&p.residual))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row).map_err(fmt)?;
        }
        w.flush().map_err(io)?;
    }
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::config::ExperimentConfig;
    use approx::assert_abs_diff_eq;

    fn exp(extra: &str) -> Experiment {
        let text = format!(
            r#"{{
                "schema_version": 1,
                "problem": {{"type": "builtin", "family": "scalar_pair"}},
                "client_opt": {{"kind": "sgd", "lr": 0.1, "local_steps": 2}},
                "rounds": 30{extra}
            }}"#
        );
        Experiment::from_config(&ExperimentConfig::from_json(&text).unwrap()).unwrap()
    }

    #[test]
    fn summary_of_scalar_pair() {
        let s = fixed_point_summary(&exp("")).unwrap();
        assert_abs_diff_eq!(s.global_min[0], 5.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.fixed_point.unwrap()[0], 1.654545454545, epsilon = 1e-9);
        // Homogeneous rates and preconditioners: correction rescales uniformly.
        assert_abs_diff_eq!(s.corrected_fixed_point[0], 1.654545454545, epsilon = 1e-9);
        assert_abs_diff_eq!(s.limiting_gap, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_bound_holds() {
        let r = bound_report(&exp(""), 10, 0.0).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.measured.len(), 30);
    }

    #[test]
    fn bound_rejects_unsupported_setups() {
        assert!(bound_report(&exp(r#", "correction": "local""#), 1, 0.0).is_err());
        assert!(bound_report(&exp(r#", "clients_per_round": 1"#), 1, 0.0).is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:3", 2).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[1], ParamVector::new(vec![0.0, 0.5]));
        assert_eq!(g[3], ParamVector::new(vec![0.5, 0.0]));
        let g = parse_grid("0:1:2, -1:-1:1", 2).unwrap();
        assert_eq!(g, vec![ParamVector::new(vec![0.0, -1.0]), ParamVector::new(vec![1.0, -1.0])]);
        assert!(parse_grid("0:1", 1).is_err());
        assert!(parse_grid("0:1:0", 1).is_err());
        assert!(parse_grid("0:1:2,0:1:2,0:1:2", 2).is_err());
    }

    #[test]
    fn landscape_zero_at_fixed_point() {
        let e = exp("");
        let fp = fixed_point_summary(&e).unwrap().fixed_point.unwrap();
        let pts = landscape(&e, &[fp, ParamVector::new(vec![0.0])], 5).unwrap();
        assert!(pts[0].residual < 1e-10);
        assert!(pts[1].residual > 0.1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        write_landscape(&pts, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("x_0,residual\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
