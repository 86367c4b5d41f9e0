//! Negative log-marginal likelihood of `D` and its difference-of-convex split.
//!
//! With `A = X'X + D`, `c = a0 + n/2` and `RSS(D) = y'y - y'X A^-1 X'y`,
//!
//! ```text
//! f(D)  = g~(D) - h(D)
//! g~(D) = -1/2 sum_j log d_j
//! h(D)  = -1/2 log|A| - c log(b0 + RSS/2)
//! [grad h]_j = -1/2 [A^-1]_jj - c ([A^-1 X'y]_j)^2 / (2 (b0 + RSS/2))
//! ```
//!
//! Both `g~` and `h` are convex, so `f` is a DC function. Every quantity is
//! available through three interchangeable linear-algebra paths (see
//! [`LinearPath`]); `Auto` picks the factorization on the smaller side.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cg::{pcg_block, CgConfig};
use crate::error::{Error, Result};
use crate::model::{Design, GramCache, PrecisionVector, ProblemInstance, Regime};

/// How the `(X'X + D)^-1` quantities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinearPath {
    /// Dense for `p <= n`, Woodbury for `p > n`, closed form for identity designs.
    #[default]
    Auto,
    /// Cholesky of the `p x p` matrix `X'X + D`.
    Dense,
    /// Cholesky of the `n x n` matrix `M = I + X D^-1 X'`.
    Woodbury,
    /// Jacobi-preconditioned CG on the `n x n` Woodbury system. The
    /// log-determinant (loss only) still comes from a Cholesky factor of `M`.
    /// The solves get one refinement step with the CG approximate inverse.
    ConjugateGradient(CgConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub loss: f64,
    pub g_tilde: f64,
    pub h: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientDiag {
    pub grad_h: DVector<f64>,
    pub grad_gtilde: DVector<f64>,
    pub grad_f: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// `(X'X + D)^-1 X'y`
    pub theta_hat: DVector<f64>,
    /// Scale of the marginal Student-t posterior of each coefficient.
    pub marginal_scale: DVector<f64>,
    /// Degrees of freedom `2 a0 + n`, shared by all coefficients.
    pub marginal_df: f64,
    /// Posterior mean of sigma2; `None` when `a0 + n/2 <= 1`.
    pub sigma2_mean: Option<f64>,
}

/// Everything computed from one factorization at one `D`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: ObjectiveValue,
    pub grad: GradientDiag,
    pub theta_hat: DVector<f64>,
    /// Diagonal of `(X'X + D)^-1`.
    pub inv_diag: DVector<f64>,
}

struct Pieces {
    logdet_a: f64,
    rss: f64,
    theta_hat: DVector<f64>,
    inv_diag: Option<DVector<f64>>,
}

fn check_d(inst: &ProblemInstance, d: &PrecisionVector) -> Result<()> {
    if d.len() != inst.p() {
        return Err(Error::DimensionMismatch(format!(
            "D has length {} but p = {}",
            d.len(),
            inst.p()
        )));
    }
    Ok(())
}

fn resolve(inst: &ProblemInstance, path: LinearPath) -> LinearPath {
    match path {
        LinearPath::Auto => match inst.regime() {
            Regime::Tall => LinearPath::Dense,
            Regime::Wide => LinearPath::Woodbury,
        },
        other => other,
    }
}

fn pieces(inst: &ProblemInstance, d: &PrecisionVector, path: LinearPath, need_diag: bool) -> Result<Pieces> {
    check_d(inst, d)?;
    if let (Design::Identity(_), LinearPath::Auto) = (inst.design(), path) {
        return Ok(identity_pieces(inst, d, need_diag));
    }
    match resolve(inst, path) {
        LinearPath::Dense => dense_pieces(inst, d, need_diag),
        LinearPath::Woodbury => woodbury_pieces(inst, d, need_diag, None),
        LinearPath::ConjugateGradient(cfg) => woodbury_pieces(inst, d, need_diag, Some(cfg)),
        LinearPath::Auto => unreachable!(),
    }
}

fn identity_pieces(inst: &ProblemInstance, d: &PrecisionVector, need_diag: bool) -> Pieces {
    let y = inst.y();
    let dv = d.values();
    let logdet_a = dv.iter().map(|&di| di.ln_1p()).sum();
    let rss = y.iter().zip(dv.iter()).map(|(&yi, &di)| yi * yi * di / (1.0 + di)).sum();
    let theta_hat = y.zip_map(dv, |yi, di| yi / (1.0 + di));
    let inv_diag = need_diag.then(|| dv.map(|di| 1.0 / (1.0 + di)));
    Pieces {
        logdet_a,
        rss,
        theta_hat,
        inv_diag,
    }
}

fn logdet_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn dense_pieces(inst: &ProblemInstance, d: &PrecisionVector, need_diag: bool) -> Result<Pieces> {
    let mut a = inst.xtx().into_owned();
    for (j, &dj) in d.values().iter().enumerate() {
        a[(j, j)] += dj;
    }
    let chol = a.cholesky().ok_or(Error::NotPositiveDefinite("X'X + D"))?;
    let logdet_a = logdet_from_cholesky(&chol.l());
    let theta_hat = chol.solve(inst.xty());
    let rss = inst.yty() - inst.xty().dot(&theta_hat);
    let inv_diag = need_diag.then(|| chol.inverse().diagonal());
    Ok(Pieces {
        logdet_a,
        rss,
        theta_hat,
        inv_diag,
    })
}

/// `M = I + X D^-1 X'`.
fn woodbury_system(inst: &ProblemInstance, x: &DMatrix<f64>, d: &PrecisionVector) -> DMatrix<f64> {
    let dv = d.values();
    let n = x.nrows();
    let uniform = dv.iter().all(|&v| v == dv[0]);
    let mut m = match (inst.gram(), uniform) {
        (GramCache::Samples(xxt), true) => xxt / dv[0],
        _ => {
            let mut xd = x.clone();
            for (j, mut col) in xd.column_iter_mut().enumerate() {
                col /= dv[j];
            }
            xd * x.transpose()
        }
    };
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    m
}

/// `[A^-1]_jj = 1/d_j - x_j' M^-1 x_j / d_j^2`, given `q_j = x_j' M^-1 x_j`.
fn woodbury_diag(q: impl Iterator<Item = f64>, d: &PrecisionVector) -> DVector<f64> {
    DVector::from_iterator(
        d.len(),
        q.zip(d.as_slice()).map(|(q, &dj)| 1.0 / dj - q / (dj * dj)),
    )
}

/// Inverse of a lower-triangular matrix, skipping the known zeros.
fn lower_triangular_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut col = inv.column_mut(k);
        col[k] = 1.0;
        for j in k..n {
            let v = col[j] / l[(j, j)];
            col[j] = v;
            if v != 0.0 {
                for i in j + 1..n {
                    col[i] -= l[(i, j)] * v;
                }
            }
        }
    }
    inv
}

fn woodbury_pieces(
    inst: &ProblemInstance,
    d: &PrecisionVector,
    need_diag: bool,
    cg: Option<CgConfig>,
) -> Result<Pieces> {
    let x = inst.x_dense();
    let x = x.as_ref();
    let n = x.nrows();
    let m = woodbury_system(inst, x, d);
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite("I + X D^-1 X'"))?;
    let logdet_m = logdet_from_cholesky(&chol.l());
    let logdet_a = d.values().iter().map(|v| v.ln()).sum::<f64>() + logdet_m;

    let y = inst.y();
    let mut correction = 0.0;
    let (z, inv_diag) = match cg {
        None => {
            let z = chol.solve(y);
            let inv_diag = need_diag.then(|| {
                // q_j = |L^-1 x_j|^2
                let w = lower_triangular_inverse(&chol.l()) * x;
                woodbury_diag(w.column_iter().map(|c| c.norm_squared()), d)
            });
            (z, inv_diag)
        }
        Some(cfg) => {
            let cols = if need_diag { n + 1 } else { 1 };
            let mut rhs = DMatrix::zeros(n, cols);
            rhs.set_column(0, y);
            for i in 0..cols - 1 {
                rhs[(i, i + 1)] = 1.0;
            }
            let (mut sol, _) = pcg_block(&m, &rhs, &cfg)?;
            let resid = &rhs - &m * &sol;
            if need_diag {
                // one refinement step with the approximate inverse; squares the error
                let inv = sol.columns(1, n).into_owned();
                sol += inv * resid;
            } else {
                correction = sol.column(0).dot(&resid.column(0));
            }
            let z = sol.column(0).into_owned();
            let inv_diag = need_diag.then(|| {
                let w = sol.columns(1, n) * x;
                woodbury_diag(x.column_iter().zip(w.column_iter()).map(|(a, b)| a.dot(&b)), d)
            });
            (z, inv_diag)
        }
    };
    // y'M^-1y = y'z + z'r + O(|r|^2) for an approximate solve with residual r
    let rss = y.dot(&z) + correction;
    let theta_hat = (x.tr_mul(&z)).component_div(d.values());
    Ok(Pieces {
        logdet_a,
        rss,
        theta_hat,
        inv_diag,
    })
}

fn log_arg(inst: &ProblemInstance, rss: f64) -> Result<f64> {
    let s = inst.b0() + 0.5 * rss;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::NonPositiveLogArgument { value: s });
    }
    Ok(s)
}

fn objective_from(inst: &ProblemInstance, d: &PrecisionVector, logdet_a: f64, rss: f64) -> Result<ObjectiveValue> {
    let s = log_arg(inst, rss)?;
    let g_tilde = -0.5 * d.values().iter().map(|v| v.ln()).sum::<f64>();
    let h = -0.5 * logdet_a - inst.shape_post() * s.ln();
    Ok(ObjectiveValue {
        loss: g_tilde - h,
        g_tilde,
        h,
        rss,
    })
}

fn gradient_from(
    inst: &ProblemInstance,
    d: &PrecisionVector,
    rss: f64,
    theta_hat: &DVector<f64>,
    inv_diag: &DVector<f64>,
) -> Result<GradientDiag> {
    let s = log_arg(inst, rss)?;
    let k = inst.shape_post() / (2.0 * s);
    let grad_h = inv_diag.zip_map(theta_hat, |inv, t| -0.5 * inv - k * t * t);
    let grad_gtilde = d.values().map(|v| -0.5 / v);
    let grad_f = &grad_gtilde - &grad_h;
    Ok(GradientDiag {
        grad_h,
        grad_gtilde,
        grad_f,
    })
}

/// Loss, gradient and posterior mean from a single factorization.
pub fn evaluate(inst: &ProblemInstance, d: &PrecisionVector, path: LinearPath) -> Result<Evaluation> {
    let pc = pieces(inst, d, path, true)?;
    let inv_diag = pc.inv_diag.expect("diagonal requested");
    let objective = objective_from(inst, d, pc.logdet_a, pc.rss)?;
    let grad = gradient_from(inst, d, pc.rss, &pc.theta_hat, &inv_diag)?;
    Ok(Evaluation {
        objective,
        grad,
        theta_hat: pc.theta_hat,
        inv_diag,
    })
}

pub fn loss(inst: &ProblemInstance, d: &PrecisionVector) -> Result<ObjectiveValue> {
    loss_with(inst, d, LinearPath::Auto)
}

/// Loss only; skips the diagonal extraction.
pub fn loss_with(inst: &ProblemInstance, d: &PrecisionVector, path: LinearPath) -> Result<ObjectiveValue> {
    let pc = pieces(inst, d, path, false)?;
    objective_from(inst, d, pc.logdet_a, pc.rss)
}

pub fn grad(inst: &ProblemInstance, d: &PrecisionVector) -> Result<GradientDiag> {
    grad_with(inst, d, LinearPath::Auto)
}

pub fn grad_with(inst: &ProblemInstance, d: &PrecisionVector, path: LinearPath) -> Result<GradientDiag> {
    Ok(evaluate(inst, d, path)?.grad)
}

pub fn posterior_summary(inst: &ProblemInstance, d: &PrecisionVector) -> Result<PosteriorSummary> {
    posterior_summary_with(inst, d, LinearPath::Auto)
}

pub fn posterior_summary_with(
    inst: &ProblemInstance,
    d: &PrecisionVector,
    path: LinearPath,
) -> Result<PosteriorSummary> {
    let ev = evaluate(inst, d, path)?;
    Ok(summary_from_evaluation(inst, &ev))
}

pub fn summary_from_evaluation(inst: &ProblemInstance, ev: &Evaluation) -> PosteriorSummary {
    let n = inst.n() as f64;
    let rss = ev.objective.rss.max(0.0);
    let df = 2.0 * inst.a0() + n;
    let scale2 = (2.0 * inst.b0() + rss) / df;
    let marginal_scale = ev.inv_diag.map(|v| (v.max(0.0) * scale2).sqrt());
    let shape = inst.shape_post();
    let sigma2_mean = (shape > 1.0).then(|| (inst.b0() + 0.5 * rss) / (shape - 1.0));
    PosteriorSummary {
        theta_hat: ev.theta_hat.clone(),
        marginal_scale,
        marginal_df: df,
        sigma2_mean,
    }
}

/// Quantities of coordinate `j` after projecting out the other columns:
/// `P_j = I - X_{-j} (X_{-j}'X_{-j} + D_{-j})^-1 X_{-j}'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedStats {
    pub xpx: f64,
    pub xpy: f64,
    pub ypy: f64,
}

impl ProjectedStats {
    /// `RSS(D) = y'P_j y - (x_j'P_j y)^2 / (d_j + x_j'P_j x_j)`.
    pub fn rss(&self, dj: f64) -> f64 {
        self.ypy - self.xpy * self.xpy / (dj + self.xpx)
    }
}

fn check_index(inst: &ProblemInstance, j: usize) -> Result<()> {
    if j >= inst.p() {
        return Err(Error::IndexOutOfRange { index: j, p: inst.p() });
    }
    Ok(())
}

pub fn projected_stats(inst: &ProblemInstance, d: &PrecisionVector, j: usize) -> Result<ProjectedStats> {
    check_index(inst, j)?;
    check_d(inst, d)?;
    let x = inst.x_dense();
    let x = x.as_ref();
    let y = inst.y();
    let xj = x.column(j);
    let xx = xj.dot(&xj);
    let xy = xj.dot(y);
    let yy = inst.yty();
    let p = x.ncols();
    if p == 1 {
        return Ok(ProjectedStats { xpx: xx, xpy: xy, ypy: yy });
    }
    let x_rest = x.clone().remove_column(j);
    let mut b = x_rest.tr_mul(&x_rest);
    let mut k = 0;
    for (i, &di) in d.values().iter().enumerate() {
        if i != j {
            b[(k, k)] += di;
            k += 1;
        }
    }
    let chol = b.cholesky().ok_or(Error::NotPositiveDefinite("X_-j'X_-j + D_-j"))?;
    let u = x_rest.tr_mul(&xj);
    let w = x_rest.tr_mul(y);
    let bu = chol.solve(&u);
    let bw = chol.solve(&w);
    Ok(ProjectedStats {
        xpx: xx - u.dot(&bu),
        xpy: xy - u.dot(&bw),
        ypy: yy - w.dot(&bw),
    })
}

/// `d loss / d d_j` written through the projector `P_j`; an independent route
/// to `grad_f[j]`.
pub fn coordinate_derivative(inst: &ProblemInstance, d: &PrecisionVector, j: usize) -> Result<f64> {
    let st = projected_stats(inst, d, j)?;
    let dj = d[j];
    let rss = st.rss(dj);
    let s = log_arg(inst, rss)?;
    let denom = dj + st.xpx;
    Ok(-st.xpx / (2.0 * dj * denom) + inst.shape_post() / (2.0 * s) * st.xpy * st.xpy / (denom * denom))
}

/// Sufficient condition for the loss to be decreasing in `d_j` over all of
/// `d_j > 0` with the other coordinates held fixed.
pub fn divergence_condition(inst: &ProblemInstance, d: &PrecisionVector, j: usize) -> Result<bool> {
    let st = projected_stats(inst, d, j)?;
    let lhs = st.xpy * st.xpy;
    let rhs = (inst.b0() + 0.5 * st.ypy) * st.xpx / inst.shape_post();
    Ok(lhs < rhs)
}

/// `|RSS via (X'X+D)^-1 - RSS via the projector identity|`.
pub fn rss_identity_check(inst: &ProblemInstance, d: &PrecisionVector, j: usize) -> Result<f64> {
    let st = projected_stats(inst, d, j)?;
    let direct = loss(inst, d)?.rss;
    Ok((direct - st.rss(d[j])).abs())
}
