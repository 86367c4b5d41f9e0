//! Comparison optimizers: EM for automatic relevance determination and
//! projected gradient descent in log coordinates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxBounds, PrecisionVector, ProblemInstance};
use crate::objective::{evaluate, Evaluation, LinearPath};
use crate::solver::{
    initial_point, residual_from, solve, ConvergenceMonitor, IterationRecord, SolveResult, SolveStatus, SolveTrace,
    SolverConfig, BOUNDARY_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dc,
    Ard,
    Pgd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dc, Method::Ard, Method::Pgd];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dc => "dc",
            Method::Ard => "ard",
            Method::Pgd => "pgd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" => Ok(Method::Dc),
            "ard" | "ard_em" => Ok(Method::Ard),
            "pgd" => Ok(Method::Pgd),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub method: Method,
    /// PGD step size in log coordinates.
    pub step_size: f64,
    /// Shared settings. Baselines only use the box part of the constraint and
    /// ignore the acceleration fields.
    pub solver: SolverConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: Method::Dc,
            step_size: 0.1,
            solver: SolverConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn new(method: Method, solver: SolverConfig) -> Self {
        Self {
            method,
            solver,
            ..Default::default()
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        self.solver.validate(p)
    }
}

/// `kappa = (a0 + n/2) / (b0 + rss/2)`, the posterior mean of `1 / sigma^2`.
fn kappa(inst: &ProblemInstance, ev: &Evaluation) -> f64 {
    inst.shape_post() / (inst.b0() + 0.5 * ev.objective.rss)
}

fn ard_update(inst: &ProblemInstance, ev: &Evaluation) -> Vec<f64> {
    let k = kappa(inst, ev);
    ev.inv_diag
        .iter()
        .zip(ev.theta_hat.iter())
        .map(|(&s, &mu)| 1.0 / (k * mu * mu + s))
        .collect()
}

/// EM step: posterior moments of `theta` and `1/sigma^2` at `d`, then
/// `d_j = 1 / (kappa mu_j^2 + Sigma_jj)` clamped to the box.
pub fn ard_em_step(inst: &ProblemInstance, d: &PrecisionVector, bounds: &BoxBounds) -> Result<PrecisionVector> {
    let ev = evaluate(inst, d, LinearPath::Auto)?;
    clamp_vec(ard_update(inst, &ev), bounds)
}

/// Expected complete-data negative log posterior at `d_new`, with the
/// expectations taken at `d_old` (summarized by `ev_old`), shifted so that it
/// equals `f(d_old)` when `d_new = d_old`. It majorizes `f`, so
/// `f(d_old) >= surrogate >= f(d_new)` along EM iterates.
pub fn ard_surrogate(ev_old: &Evaluation, d_old: &PrecisionVector, d_new: &PrecisionVector) -> f64 {
    let half_sum = |d: &PrecisionVector| -> f64 {
        d.as_slice()
            .iter()
            .zip(ev_old.grad.grad_h.iter())
            .map(|(&dj, &gh)| -0.5 * dj.ln() - gh * dj)
            .sum()
    };
    ev_old.objective.loss + half_sum(d_new) - half_sum(d_old)
}

/// Gradient step on `u = log d`: `u <- u - eta * d * grad_f`, then clamp.
pub fn pgd_step(inst: &ProblemInstance, d: &PrecisionVector, eta: f64, bounds: &BoxBounds) -> Result<PrecisionVector> {
    let ev = evaluate(inst, d, LinearPath::Auto)?;
    clamp_vec(pgd_update(&ev, d, eta), bounds)
}

fn pgd_update(ev: &Evaluation, d: &PrecisionVector, eta: f64) -> Vec<f64> {
    d.as_slice()
        .iter()
        .zip(ev.grad.grad_f.iter())
        .map(|(&dj, &g)| (dj.ln() - eta * dj * g).exp())
        .collect()
}

fn clamp_vec(mut v: Vec<f64>, bounds: &BoxBounds) -> Result<PrecisionVector> {
    for x in &mut v {
        *x = bounds.clamp(*x);
    }
    PrecisionVector::from_vec(v)
}

/// Run the configured method from the configured starting point under the
/// shared stopping rule (relative change of `f`).
pub fn run_baseline(inst: &ProblemInstance, cfg: &BaselineConfig) -> Result<SolveResult> {
    cfg.validate(inst.p())?;
    if cfg.method == Method::Dc {
        return solve(inst, &cfg.solver);
    }
    let scfg = &cfg.solver;
    let bounds = *scfg.bounds();
    let path = scfg.linear_path;
    let box_only = crate::model::ConstraintSpec::box_only(bounds);
    let start_cfg = SolverConfig {
        constraint: box_only,
        ..scfg.clone()
    };
    let mut d = initial_point(inst, &start_cfg)?;
    let mut ev = evaluate(inst, &d, path).map_err(|e| e.at_iteration(0))?;
    let mut trace = SolveTrace {
        initial_loss: ev.objective.loss,
        records: Vec::new(),
        status: SolveStatus::MaxIters,
    };
    let mut monitor = ConvergenceMonitor::new(scfg.rel_tol, scfg.consecutive_hits);

    for t in 1..=scfg.max_iters {
        let started = Instant::now();
        let raw = match cfg.method {
            Method::Ard => ard_update(inst, &ev),
            Method::Pgd => pgd_update(&ev, &d, cfg.step_size),
            Method::Dc => unreachable!(),
        };
        let next = clamp_vec(raw, &bounds).map_err(|e| e.at_iteration(t))?;
        let surrogate = (cfg.method == Method::Ard).then(|| ard_surrogate(&ev, &d, &next));
        let next_ev = evaluate(inst, &next, path).map_err(|e| e.at_iteration(t))?;
        let n_lower = next.as_slice().iter().filter(|&&v| (v - bounds.lower).abs() <= BOUNDARY_TOL).count();
        let n_upper = next.as_slice().iter().filter(|&&v| (v - bounds.upper).abs() <= BOUNDARY_TOL).count();
        trace.records.push(IterationRecord {
            iteration: t,
            loss: next_ev.objective.loss,
            residual: residual_from(&next_ev, &next, &bounds),
            n_lower,
            n_upper,
            accel_moves: 0,
            wall_time_s: started.elapsed().as_secs_f64(),
            surrogate,
        });
        let done = monitor.step(ev.objective.loss, next_ev.objective.loss);
        d = next;
        ev = next_ev;
        if done {
            trace.status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult { d, trace, evaluation: ev })
}
