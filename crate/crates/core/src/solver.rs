//! Difference-of-convex iteration for the marginal-likelihood loss.
//!
//! Linearizing `h` at the current iterate leaves a separable convex
//! subproblem whose unconstrained minimizer is `d_j = -1 / (2 [grad h]_jj)`;
//! the next iterate is its projection onto the constraint set. Each step is a
//! descent step for `f = g~ - h` when the projection is exact (box case).

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxBounds, ConstraintSpec, PrecisionVector, ProblemInstance};
use crate::objective::{evaluate, loss_with, Evaluation, LinearPath};
use crate::projections::alternating_projection;

/// Absolute tolerance for classifying a coordinate as sitting on a bound.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialD {
    #[default]
    Identity,
    /// `d_j = clamp(1 / theta_j^2)` with marginal least-squares `theta_j = x_j'y / n`.
    WarmStartMls,
    Explicit {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub constraint: ConstraintSpec,
    pub rel_tol: f64,
    pub consecutive_hits: usize,
    pub max_iters: usize,
    pub accel_enabled: bool,
    pub accel_period: usize,
    /// Lower snapping threshold; defaults to the lower bound.
    pub tau1: Option<f64>,
    /// Upper snapping threshold; defaults to a tenth of the upper bound.
    pub tau2: Option<f64>,
    pub accel_max_moves: usize,
    pub initial_d: InitialD,
    pub linear_path: LinearPath,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            constraint: ConstraintSpec::box_only(BoxBounds::default()),
            rel_tol: 1e-5,
            consecutive_hits: 2,
            max_iters: 5000,
            accel_enabled: true,
            accel_period: 100,
            tau1: None,
            tau2: None,
            accel_max_moves: 20,
            initial_d: InitialD::Identity,
            linear_path: LinearPath::Auto,
        }
    }
}

impl SolverConfig {
    pub fn bounds(&self) -> &BoxBounds {
        &self.constraint.bounds
    }

    pub fn tau1(&self) -> f64 {
        self.tau1.unwrap_or(self.bounds().lower)
    }

    pub fn tau2(&self) -> f64 {
        self.tau2.unwrap_or(0.1 * self.bounds().upper)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        self.constraint.validate(p)?;
        let b = self.bounds();
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if self.consecutive_hits == 0 {
            return bad("consecutive_hits must be positive");
        }
        if self.accel_period == 0 || self.accel_max_moves == 0 {
            return bad("acceleration period and move cap must be positive");
        }
        let (t1, t2) = (self.tau1(), self.tau2());
        if !(b.lower <= t1 && t1 < t2 && t2 <= b.upper) {
            return bad("need lower <= tau1 < tau2 <= upper");
        }
        if let InitialD::Explicit { values } = &self.initial_d {
            if values.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "explicit initial D has length {} but p = {p}",
                    values.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    Error,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    /// Residual distance of `grad h - grad g~` to the box normal cone.
    pub residual: f64,
    pub n_lower: usize,
    pub n_upper: usize,
    pub accel_moves: usize,
    pub wall_time_s: f64,
    /// EM surrogate value (ARD baseline only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub surrogate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub initial_loss: f64,
    pub records: Vec<IterationRecord>,
    pub status: SolveStatus,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }

    pub fn wall_time_s(&self) -> f64 {
        self.records.iter().map(|r| r.wall_time_s).sum()
    }

    /// Losses including the initial one.
    pub fn losses(&self) -> Vec<f64> {
        std::iter::once(self.initial_loss)
            .chain(self.records.iter().map(|r| r.loss))
            .collect()
    }

    /// One JSON object per iteration, one per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub d: PrecisionVector,
    pub trace: SolveTrace,
    /// Loss, gradient and posterior mean at the returned `d`.
    pub evaluation: Evaluation,
}

pub(crate) fn project_point(v: &[f64], constraint: &ConstraintSpec) -> Result<PrecisionVector> {
    let projected = alternating_projection(v, constraint)?;
    PrecisionVector::from_vec(projected)
}

/// Unconstrained minimizer of the linearized subproblem.
pub fn dc_candidate(grad_h: &DVector<f64>) -> Vec<f64> {
    grad_h.iter().map(|&g| -1.0 / (2.0 * g)).collect()
}

/// One DC update: candidate from `grad h` at `d`, then projection.
pub fn dc_step(inst: &ProblemInstance, d: &PrecisionVector, constraint: &ConstraintSpec) -> Result<PrecisionVector> {
    let ev = evaluate(inst, d, LinearPath::Auto)?;
    project_point(&dc_candidate(&ev.grad.grad_h), constraint)
}

fn boundary_counts(d: &PrecisionVector, bounds: &BoxBounds) -> (usize, usize) {
    let lower = d.as_slice().iter().filter(|&&v| (v - bounds.lower).abs() <= BOUNDARY_TOL).count();
    let upper = d.as_slice().iter().filter(|&&v| (v - bounds.upper).abs() <= BOUNDARY_TOL).count();
    (lower, upper)
}

pub(crate) fn residual_from(ev: &Evaluation, d: &PrecisionVector, bounds: &BoxBounds) -> f64 {
    let mut sum = 0.0;
    for (j, &dj) in d.as_slice().iter().enumerate() {
        let v = ev.grad.grad_h[j] - ev.grad.grad_gtilde[j];
        let lam = if (dj - bounds.lower).abs() <= BOUNDARY_TOL {
            v.max(0.0)
        } else if (dj - bounds.upper).abs() <= BOUNDARY_TOL {
            (-v).max(0.0)
        } else {
            v.abs()
        };
        sum += lam * lam;
    }
    sum.sqrt()
}

/// Distance of `grad h(D) - grad g~(D)` to the normal cone of the box at `D`.
pub fn residual_distance(inst: &ProblemInstance, d: &PrecisionVector, bounds: &BoxBounds) -> Result<f64> {
    if let Some((index, &value)) = d
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, &v)| !bounds.contains(v, BOUNDARY_TOL))
    {
        return Err(Error::OutsideBox { index, value });
    }
    let ev = evaluate(inst, d, LinearPath::Auto)?;
    Ok(residual_from(&ev, d, bounds))
}

/// Boundary-exploration proposal: snap up to `accel_max_moves` coordinates
/// (`d_j <= tau1` to the lower bound, `d_j >= tau2` to the upper bound),
/// keeping it only if the loss strictly decreases.
pub fn boundary_accelerate(inst: &ProblemInstance, d: &PrecisionVector, cfg: &SolverConfig) -> (PrecisionVector, usize) {
    let Ok(current) = loss_with(inst, d, cfg.linear_path) else {
        return (d.clone(), 0);
    };
    match accelerate_from(inst, d, current.loss, cfg) {
        Some((proposal, moves, _)) => (proposal, moves),
        None => (d.clone(), 0),
    }
}

/// Returns the accepted proposal, its move count and loss, or `None` when
/// nothing qualifies or the proposal does not decrease the loss.
fn accelerate_from(
    inst: &ProblemInstance,
    d: &PrecisionVector,
    current_loss: f64,
    cfg: &SolverConfig,
) -> Option<(PrecisionVector, usize, f64)> {
    let b = cfg.bounds();
    let (tau1, tau2) = (cfg.tau1(), cfg.tau2());
    // (log-distance to target bound, index, target)
    let mut moves: Vec<(f64, usize, f64)> = Vec::new();
    for (j, &dj) in d.as_slice().iter().enumerate() {
        if dj <= tau1 && dj != b.lower {
            moves.push(((dj / b.lower).ln().abs(), j, b.lower));
        } else if dj >= tau2 && dj != b.upper {
            moves.push(((b.upper / dj).ln().abs(), j, b.upper));
        }
    }
    if moves.is_empty() {
        return None;
    }
    moves.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    moves.truncate(cfg.accel_max_moves);

    let mut proposal = d.as_slice().to_vec();
    for &(_, j, target) in &moves {
        proposal[j] = target;
    }
    let proposal = project_point(&proposal, &cfg.constraint).ok()?;
    let prop_loss = loss_with(inst, &proposal, cfg.linear_path).ok()?.loss;
    (prop_loss < current_loss).then_some((proposal, moves.len(), prop_loss))
}

pub(crate) fn initial_point(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<PrecisionVector> {
    let p = inst.p();
    let raw: Vec<f64> = match &cfg.initial_d {
        InitialD::Identity => vec![1.0; p],
        InitialD::WarmStartMls => {
            let n = inst.n() as f64;
            inst.xty()
                .iter()
                .map(|&xy| {
                    let theta = xy / n;
                    cfg.bounds().clamp(1.0 / (theta * theta))
                })
                .collect()
        }
        InitialD::Explicit { values } => values.clone(),
    };
    project_point(&raw, &cfg.constraint)
}

/// Relative-change convergence bookkeeping shared by all optimizers.
#[derive(Debug, Clone)]
pub(crate) struct ConvergenceMonitor {
    rel_tol: f64,
    needed: usize,
    hits: usize,
}

impl ConvergenceMonitor {
    pub(crate) fn new(rel_tol: f64, needed: usize) -> Self {
        Self { rel_tol, needed, hits: 0 }
    }

    /// Record a step from `old` to `new`; true once converged.
    pub(crate) fn step(&mut self, old: f64, new: f64) -> bool {
        let change = if old == 0.0 {
            (new - old).abs()
        } else {
            (new - old).abs() / old.abs()
        };
        if change < self.rel_tol {
            self.hits += 1;
        } else {
            self.hits = 0;
        }
        self.hits >= self.needed
    }
}

pub fn solve(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<SolveResult> {
    solve_observed(inst, cfg, |_, _| {})
}

/// As [`solve`], calling `observe(t, &D)` on the initial point (`t = 0`) and
/// on every accepted iterate.
pub fn solve_observed<F>(inst: &ProblemInstance, cfg: &SolverConfig, mut observe: F) -> Result<SolveResult>
where
    F: FnMut(usize, &PrecisionVector),
{
    cfg.validate(inst.p())?;
    let bounds = *cfg.bounds();
    let mut d = initial_point(inst, cfg)?;
    observe(0, &d);
    let mut ev = evaluate(inst, &d, cfg.linear_path).map_err(|e| e.at_iteration(0))?;
    let mut trace = SolveTrace {
        initial_loss: ev.objective.loss,
        records: Vec::new(),
        status: SolveStatus::MaxIters,
    };
    let mut monitor = ConvergenceMonitor::new(cfg.rel_tol, cfg.consecutive_hits);

    for t in 1..=cfg.max_iters {
        let started = Instant::now();
        let mut next = project_point(&dc_candidate(&ev.grad.grad_h), &cfg.constraint).map_err(|e| e.at_iteration(t))?;
        let mut moves = 0;
        if cfg.accel_enabled && t % cfg.accel_period == 0 {
            let next_loss = loss_with(inst, &next, cfg.linear_path).map_err(|e| e.at_iteration(t))?.loss;
            if let Some((proposal, m, _)) = accelerate_from(inst, &next, next_loss, cfg) {
                next = proposal;
                moves = m;
            }
        }
        let next_ev = evaluate(inst, &next, cfg.linear_path).map_err(|e| e.at_iteration(t))?;
        let (n_lower, n_upper) = boundary_counts(&next, &bounds);
        trace.records.push(IterationRecord {
            iteration: t,
            loss: next_ev.objective.loss,
            residual: residual_from(&next_ev, &next, &bounds),
            n_lower,
            n_upper,
            accel_moves: moves,
            wall_time_s: started.elapsed().as_secs_f64(),
            surrogate: None,
        });
        observe(t, &next);
        let done = monitor.step(ev.objective.loss, next_ev.objective.loss);
        d = next;
        ev = next_ev;
        if done {
            trace.status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        d,
        trace,
        evaluation: ev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_instance;
    use crate::objective::loss;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, p: usize) -> ProblemInstance {
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        let mut y = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
        y += x.column(0) * 2.0;
        build_instance(x, y, 1.0, 1.0).unwrap()
    }

    fn ones_instance(y: Vec<f64>) -> ProblemInstance {
        let n = y.len();
        build_instance(DMatrix::from_element(n, 1, 1.0), DVector::from_vec(y), 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_budget_returns_initial_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = random_instance(&mut rng, 10, 4);
        let cfg = SolverConfig {
            max_iters: 0,
            ..Default::default()
        };
        let res = solve(&inst, &cfg).unwrap();
        assert_eq!(res.d.as_slice(), &[1.0; 4]);
        assert!(res.trace.records.is_empty());
        assert_eq!(res.trace.status, SolveStatus::MaxIters);
    }

    #[test]
    fn dc_step_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = random_instance(&mut rng, 12, 6);
        let c = ConstraintSpec::box_only(BoxBounds::default());
        for _ in 0..100 {
            let d = PrecisionVector::from_vec((0..6).map(|_| 10f64.powf(rng.random_range(-4.0..4.0))).collect())
                .unwrap();
            let next = dc_step(&inst, &d, &c).unwrap();
            assert!(loss(&inst, &next).unwrap().loss <= loss(&inst, &d).unwrap().loss + 1e-10);
            assert!(next.as_slice().iter().all(|&v| c.bounds.contains(v, 0.0)));
        }
    }

    #[test]
    fn fixed_point_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = ones_instance((0..20).map(|_| 3.0 + rng.random_range(-1.0..1.0)).collect());
        let c = ConstraintSpec::box_only(BoxBounds::default());
        let mut d = PrecisionVector::uniform(1, 1.0).unwrap();
        for _ in 0..2000 {
            d = dc_step(&inst, &d, &c).unwrap();
        }
        let again = dc_step(&inst, &d, &c).unwrap();
        assert!((again[0] - d[0]).abs() <= 1e-12 * d[0].max(1.0));
        assert!(residual_distance(&inst, &d, &c.bounds).unwrap() < 1e-6);
    }

    #[test]
    fn residual_boundary_cases() {
        // x'y = 0: the loss decreases in d, so at the upper bound v < 0 contributes nothing
        let inst = build_instance(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            1.0,
            1.0,
        )
        .unwrap();
        let b = BoxBounds::default();
        let at_upper = PrecisionVector::uniform(1, b.upper).unwrap();
        assert_eq!(residual_distance(&inst, &at_upper, &b).unwrap(), 0.0);
        let inside = PrecisionVector::uniform(1, 10.0).unwrap();
        assert!(residual_distance(&inst, &inside, &b).unwrap() > 0.0);
        let outside = PrecisionVector::uniform(1, 2e4).unwrap();
        assert!(matches!(
            residual_distance(&inst, &outside, &b),
            Err(Error::OutsideBox { index: 0, .. })
        ));
    }

    #[test]
    fn acceleration_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SolverConfig::default();
        // nothing qualifies
        let inst = random_instance(&mut rng, 10, 3);
        let d = PrecisionVector::from_vec(vec![1.0, 5.0, 20.0]).unwrap();
        assert_eq!(boundary_accelerate(&inst, &d, &cfg), (d.clone(), 0));

        // strong signal on the only coordinate: snapping to b raises the loss
        let strong = ones_instance((0..20).map(|_| 3.0 + rng.random_range(-0.5..0.5)).collect());
        let d = PrecisionVector::uniform(1, 2000.0).unwrap();
        assert_eq!(boundary_accelerate(&strong, &d, &cfg), (d.clone(), 0));

        // no signal: the loss is decreasing in d, so the snap is accepted
        let null = build_instance(
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            1.0,
            1.0,
        )
        .unwrap();
        let d = PrecisionVector::uniform(1, 0.2 * 1e4).unwrap();
        let (out, moves) = boundary_accelerate(&null, &d, &cfg);
        assert_eq!(moves, 1);
        assert_eq!(out[0], 1e4);
    }

    #[test]
    fn acceleration_caps_and_orders_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(15, 30, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(15, |_, _| rng.random_range(-0.1..0.1));
        let inst = build_instance(x, y, 1.0, 1.0).unwrap();
        let cfg = SolverConfig {
            accel_max_moves: 3,
            ..Default::default()
        };
        let vals: Vec<f64> = (0..30).map(|j| 1500.0 + 100.0 * j as f64).collect();
        let d = PrecisionVector::from_vec(vals).unwrap();
        let (out, moves) = boundary_accelerate(&inst, &d, &cfg);
        if moves > 0 {
            assert_eq!(moves, 3);
            let snapped: Vec<usize> = (0..30).filter(|&j| out[j] == 1e4).collect();
            assert_eq!(snapped, vec![27, 28, 29]);
        }
    }

    #[test]
    fn warm_start_is_clamped() {
        let inst = build_instance(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            1.0,
            1.0,
        )
        .unwrap();
        let cfg = SolverConfig {
            initial_d: InitialD::WarmStartMls,
            ..Default::default()
        };
        // theta_1 = 2/2 = 1 -> d = 1; theta_2 = 0 -> d = b
        let d0 = initial_point(&inst, &cfg).unwrap();
        assert_eq!(d0.as_slice(), &[1.0, 1e4]);
    }

    #[test]
    fn trace_jsonl_has_one_line_per_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = random_instance(&mut rng, 20, 5);
        let res = solve(&inst, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        res.trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), res.trace.iterations());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["iteration", "loss", "residual", "n_lower", "n_upper", "accel_moves", "wall_time_s"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn config_validation() {
        let cfg = SolverConfig {
            tau1: Some(1e5),
            ..Default::default()
        };
        assert!(cfg.validate(3).is_err());
        let cfg = SolverConfig {
            initial_d: InitialD::Explicit { values: vec![1.0] },
            ..Default::default()
        };
        assert!(cfg.validate(3).is_err());
        assert!(SolverConfig::default().validate(3).is_ok());
    }
}
