//! Synthetic scenarios, selection metrics and the replication harness.
//!
//! Random streams: every replicate draws from a ChaCha20 generator keyed by
//! the scenario seed, with stream id `(replicate << 8) | purpose` where
//! purpose is 0 for the design, 1 for the signal support, 2 for the
//! coefficients and 3 for the noise. Data are therefore a pure function of
//! `(seed, replicate)` and do not depend on thread scheduling.

pub mod spatial;

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_baseline, BaselineConfig, Method};
use crate::error::{Error, Result};
use crate::model::{build_instance, standardize_columns, standardize_vector, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DesignKind {
    Independent,
    /// AR(1)-type covariance `rho^|j-k|`.
    Toeplitz(f64),
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignKind::Independent => f.write_str("independent"),
            DesignKind::Toeplitz(rho) => write!(f, "toeplitz({rho})"),
        }
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "independent" {
            return Ok(DesignKind::Independent);
        }
        if let Some(inner) = t.strip_prefix("toeplitz(").and_then(|r| r.strip_suffix(')')) {
            let rho: f64 = inner
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad toeplitz parameter in {s:?}")))?;
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::InvalidConfig(format!("toeplitz rho must lie in (-1, 1), got {rho}")));
            }
            return Ok(DesignKind::Toeplitz(rho));
        }
        Err(Error::InvalidConfig(format!(
            "unknown design {s:?} (expected \"independent\" or \"toeplitz(rho)\")"
        )))
    }
}

impl TryFrom<String> for DesignKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DesignKind> for String {
    fn from(d: DesignKind) -> String {
        d.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub id: String,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub design: DesignKind,
    pub coefficient_pool: Vec<f64>,
    pub sigma2: f64,
    pub replications: usize,
    pub seed: u64,
    pub threshold: f64,
    pub a0: f64,
    pub b0: f64,
    /// Center and scale the simulated response before fitting. The threshold
    /// then applies on the standardized scale.
    pub standardize_y: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "default".into(),
            n: 200,
            p: 500,
            s: 5,
            design: DesignKind::Independent,
            coefficient_pool: vec![-3.0, -2.5, 2.5, 3.0],
            sigma2: 1.0,
            replications: 10,
            seed: 1,
            threshold: 0.1,
            a0: 1.0,
            b0: 1.0,
            standardize_y: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n < 2 || self.p == 0 {
            return bad(format!("need n >= 2 and p >= 1 (n = {}, p = {})", self.n, self.p));
        }
        if self.s == 0 || self.s >= self.p {
            return bad(format!("need 1 <= s < p (s = {}, p = {})", self.s, self.p));
        }
        if self.coefficient_pool.is_empty() || self.coefficient_pool.iter().any(|c| !c.is_finite()) {
            return bad("coefficient pool must be nonempty and finite".into());
        }
        if !(self.sigma2 > 0.0) || !(self.threshold > 0.0) {
            return bad("sigma2 and threshold must be positive".into());
        }
        if !(self.a0 > 0.0) || !(self.b0 > 0.0) {
            return bad("a0 and b0 must be positive".into());
        }
        if let DesignKind::Toeplitz(rho) = self.design {
            if !(rho > -1.0 && rho < 1.0) {
                return bad(format!("toeplitz rho must lie in (-1, 1), got {rho}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// Sorted 0-based signal positions.
    pub support: Vec<usize>,
    pub theta: DVector<f64>,
}

fn stream(seed: u64, replicate: usize, purpose: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 8) | purpose);
    rng
}

/// Raw (unstandardized) design draws.
pub fn draw_design(n: usize, p: usize, design: DesignKind, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        match design {
            DesignKind::Independent => {
                for j in 0..p {
                    x[(i, j)] = rng.sample(StandardNormal);
                }
            }
            DesignKind::Toeplitz(rho) => {
                // x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j: the lower Cholesky
                // factor of the Toeplitz covariance applied row by row.
                let innov = (1.0 - rho * rho).sqrt();
                let mut prev: f64 = rng.sample(StandardNormal);
                x[(i, 0)] = prev;
                for j in 1..p {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = rho * prev + innov * z;
                    x[(i, j)] = prev;
                }
            }
        }
    }
    x
}

/// Generate replicate `replicate` of the scenario: standardized design,
/// uniformly placed signals with coefficients from the pool, Gaussian noise.
pub fn gen_synthetic(cfg: &ScenarioConfig, replicate: usize) -> Result<(ProblemInstance, Truth)> {
    cfg.validate()?;
    let raw = draw_design(cfg.n, cfg.p, cfg.design, &mut stream(cfg.seed, replicate, 0));
    let x = standardize_columns(&raw)?;

    let mut support = sample(&mut stream(cfg.seed, replicate, 1), cfg.p, cfg.s).into_vec();
    support.sort_unstable();
    let mut coef_rng = stream(cfg.seed, replicate, 2);
    let mut theta = DVector::zeros(cfg.p);
    for &j in &support {
        theta[j] = cfg.coefficient_pool[coef_rng.random_range(0..cfg.coefficient_pool.len())];
    }

    let mut noise_rng = stream(cfg.seed, replicate, 3);
    let sd = cfg.sigma2.sqrt();
    let mut y = &x * &theta;
    for v in y.iter_mut() {
        let z: f64 = noise_rng.sample(StandardNormal);
        *v += sd * z;
    }
    let y = if cfg.standardize_y { standardize_vector(&y)? } else { y };
    let inst = build_instance(x, y, cfg.a0, cfg.b0)?;
    Ok((inst, Truth { support, theta }))
}

/// Indices with `|theta_j| > threshold` (strict).
pub fn select_variables(theta_hat: &[f64], threshold: f64) -> Vec<usize> {
    theta_hat
        .iter()
        .enumerate()
        .filter(|(_, t)| t.abs() > threshold)
        .map(|(j, _)| j)
        .collect()
}

/// `(TPR, FPR)` of a selected set against the true support.
pub fn selection_metrics(selected: &[usize], truth: &[usize], p: usize) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    if let Some(&index) = selected.iter().chain(truth).find(|&&j| j >= p) {
        return Err(Error::IndexOutOfRange { index, p });
    }
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    let selected: BTreeSet<usize> = selected.iter().copied().collect();
    let tp = selected.intersection(&truth).count();
    let fp = selected.len() - tp;
    let negatives = p - truth.len();
    let fpr = if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 };
    Ok((tp as f64 / truth.len() as f64, fpr))
}

/// One row of the results table. Column order is fixed by field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub scenario_id: String,
    pub method: Method,
    pub replicate: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub final_loss: f64,
    pub status: String,
}

impl ReplicateResult {
    pub fn is_error(&self) -> bool {
        self.status == "error"
    }
}

/// Fit, select and score a single (method, replicate) pair.
pub fn run_one(
    cfg: &ScenarioConfig,
    inst: &ProblemInstance,
    truth: &Truth,
    method: Method,
    replicate: usize,
    base: &BaselineConfig,
) -> ReplicateResult {
    let started = Instant::now();
    let run_cfg = BaselineConfig {
        method,
        ..base.clone()
    };
    let fit = run_baseline(inst, &run_cfg);
    let wall_time_s = started.elapsed().as_secs_f64();
    let row = |iterations, tpr, fpr, final_loss, status: &str| ReplicateResult {
        scenario_id: cfg.id.clone(),
        method,
        replicate,
        iterations,
        wall_time_s,
        tpr,
        fpr,
        final_loss,
        status: status.to_string(),
    };
    match fit {
        Ok(res) => {
            let selected = select_variables(res.evaluation.theta_hat.as_slice(), cfg.threshold);
            match selection_metrics(&selected, &truth.support, inst.p()) {
                Ok((tpr, fpr)) => row(
                    res.trace.iterations(),
                    tpr,
                    fpr,
                    res.trace.final_loss(),
                    res.trace.status.as_str(),
                ),
                Err(_) => row(res.trace.iterations(), f64::NAN, f64::NAN, res.trace.final_loss(), "error"),
            }
        }
        Err(_) => row(0, f64::NAN, f64::NAN, f64::NAN, "error"),
    }
}

/// All `(method, replicate)` fits of a scenario. Replicates run in parallel on
/// the current rayon pool; rows come back ordered by method, then replicate.
pub fn run_replications(cfg: &ScenarioConfig, methods: &[Method], base: &BaselineConfig) -> Result<Vec<ReplicateResult>> {
    cfg.validate()?;
    let data: Vec<Result<(ProblemInstance, Truth)>> =
        (0..cfg.replications).into_par_iter().map(|r| gen_synthetic(cfg, r)).collect();
    let jobs: Vec<(usize, Method, usize)> = methods
        .iter()
        .enumerate()
        .flat_map(|(mi, &m)| (0..cfg.replications).map(move |r| (mi, m, r)))
        .collect();
    let mut rows: Vec<(usize, ReplicateResult)> = jobs
        .into_par_iter()
        .map(|(mi, method, r)| {
            let row = match &data[r] {
                Ok((inst, truth)) => run_one(cfg, inst, truth, method, r, base),
                Err(_) => ReplicateResult {
                    scenario_id: cfg.id.clone(),
                    method,
                    replicate: r,
                    iterations: 0,
                    wall_time_s: 0.0,
                    tpr: f64::NAN,
                    fpr: f64::NAN,
                    final_loss: f64::NAN,
                    status: "error".into(),
                },
            };
            (mi, row)
        })
        .collect();
    rows.sort_by_key(|(mi, row)| (*mi, row.replicate));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub method: Method,
    pub runs: usize,
    pub errors: usize,
    pub iter_median: f64,
    pub iter_min: usize,
    pub iter_max: usize,
    pub time_median_s: f64,
    pub time_min_s: f64,
    pub time_max_s: f64,
    pub mean_tpr: f64,
    pub mean_fpr: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per (scenario, method) summaries over the successful rows, in first-seen order.
pub fn summarize(rows: &[ReplicateResult]) -> Vec<ScenarioSummary> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in rows {
        let key = (r.scenario_id.clone(), r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(id, method)| {
            let group: Vec<&ReplicateResult> = rows.iter().filter(|r| r.scenario_id == id && r.method == method).collect();
            let ok: Vec<&&ReplicateResult> = group.iter().filter(|r| !r.is_error()).collect();
            let iters: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
            let times: Vec<f64> = ok.iter().map(|r| r.wall_time_s).collect();
            let mean = |f: &dyn Fn(&ReplicateResult) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            ScenarioSummary {
                scenario_id: id.clone(),
                method,
                runs: group.len(),
                errors: group.len() - ok.len(),
                iter_median: median(&iters),
                iter_min: ok.iter().map(|r| r.iterations).min().unwrap_or(0),
                iter_max: ok.iter().map(|r| r.iterations).max().unwrap_or(0),
                time_median_s: median(&times),
                time_min_s: times.iter().copied().fold(f64::INFINITY, f64::min),
                time_max_s: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_tpr: mean(&|r| r.tpr),
                mean_fpr: mean(&|r| r.fpr),
            }
        })
        .collect()
}

/// Write rows with a header; any `Serialize` row type works.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}
