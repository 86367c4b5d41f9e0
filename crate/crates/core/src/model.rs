//! Problem data for the conjugate normal / inverse-gamma regression model
//!
//! ```text
//! y | theta, sigma2 ~ N(X theta, sigma2 I_n)
//! theta | sigma2, D ~ N(0, sigma2 D^-1)
//! sigma2            ~ IG(a0, b0)
//! ```
//!
//! A [`ProblemInstance`] is immutable once built and caches the sufficient
//! statistics needed by the objective: `X'y`, `y'y`, and the Gram matrix on
//! the smaller side (`X'X` when `p <= n`, `XX'` otherwise).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the design the cached Gram matrix lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `p <= n`: the `p x p` system `X'X + D` is the small one.
    Tall,
    /// `p > n`: the `n x n` system `I + X D^-1 X'` is the small one.
    Wide,
}

#[derive(Debug, Clone)]
pub enum Design {
    Dense(DMatrix<f64>),
    /// `X = I_n`; every objective quantity is diagonal.
    Identity(usize),
}

#[derive(Debug, Clone)]
pub enum GramCache {
    /// `X'X`, `p x p`.
    Features(DMatrix<f64>),
    /// `XX'`, `n x n`.
    Samples(DMatrix<f64>),
    None,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    design: Design,
    y: DVector<f64>,
    a0: f64,
    b0: f64,
    xty: DVector<f64>,
    yty: f64,
    gram: GramCache,
}

/// Validate inputs and cache sufficient statistics.
pub fn build_instance(x: DMatrix<f64>, y: DVector<f64>, a0: f64, b0: f64) -> Result<ProblemInstance> {
    ProblemInstance::new(x, y, a0, b0)
}

fn check_hyper(a0: f64, b0: f64) -> Result<()> {
    for (name, value) in [("a0", a0), ("b0", b0)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveHyperparameter { name, value });
        }
    }
    Ok(())
}

fn check_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFiniteEntry { what, index }),
        None => Ok(()),
    }
}

impl ProblemInstance {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, a0: f64, b0: f64) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::DimensionMismatch(format!("design is {n} x {p}; need n, p >= 1")));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "design has {n} rows but response has length {}",
                y.len()
            )));
        }
        // column-major: index / n is the column
        check_finite("X", x.as_slice())?;
        check_finite("y", y.as_slice())?;
        check_hyper(a0, b0)?;

        let xty = x.tr_mul(&y);
        let yty = y.dot(&y);
        let gram = if p <= n {
            GramCache::Features(x.tr_mul(&x))
        } else {
            GramCache::Samples(&x * x.transpose())
        };
        Ok(Self {
            design: Design::Dense(x),
            y,
            a0,
            b0,
            xty,
            yty,
            gram,
        })
    }

    /// Sequence model `y_i = theta_i + eps_i`, i.e. `X = I_n`.
    pub fn identity(y: DVector<f64>, a0: f64, b0: f64) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::DimensionMismatch("empty response".into()));
        }
        check_finite("y", y.as_slice())?;
        check_hyper(a0, b0)?;
        let n = y.len();
        let yty = y.dot(&y);
        Ok(Self {
            design: Design::Identity(n),
            xty: y.clone(),
            y,
            a0,
            b0,
            yty,
            gram: GramCache::None,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        match &self.design {
            Design::Dense(x) => x.ncols(),
            Design::Identity(n) => *n,
        }
    }

    pub fn regime(&self) -> Regime {
        if self.p() <= self.n() {
            Regime::Tall
        } else {
            Regime::Wide
        }
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// The dense design matrix, materialized if the design is the identity.
    pub fn x_dense(&self) -> std::borrow::Cow<'_, DMatrix<f64>> {
        match &self.design {
            Design::Dense(x) => std::borrow::Cow::Borrowed(x),
            Design::Identity(n) => std::borrow::Cow::Owned(DMatrix::identity(*n, *n)),
        }
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    /// Posterior shape of sigma2, `a0 + n/2`.
    pub fn shape_post(&self) -> f64 {
        self.a0 + 0.5 * self.n() as f64
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    pub fn gram(&self) -> &GramCache {
        &self.gram
    }

    /// `X'X`, from the cache when available.
    pub fn xtx(&self) -> std::borrow::Cow<'_, DMatrix<f64>> {
        match (&self.gram, &self.design) {
            (GramCache::Features(g), _) => std::borrow::Cow::Borrowed(g),
            (_, Design::Dense(x)) => std::borrow::Cow::Owned(x.tr_mul(x)),
            (_, Design::Identity(n)) => std::borrow::Cow::Owned(DMatrix::identity(*n, *n)),
        }
    }
}

/// The diagonal precision matrix `D`, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionVector(DVector<f64>);

impl PrecisionVector {
    pub fn new(d: DVector<f64>) -> Result<Self> {
        if let Some((index, &value)) = d.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositivePrecision { index, value });
        }
        Ok(Self(d))
    }

    pub fn from_vec(d: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(d))
    }

    pub fn uniform(p: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(p, value))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for PrecisionVector {
    type Output = f64;
    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: f64,
    pub upper: f64,
}

impl BoxBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < upper && upper.is_finite()) {
            return Err(Error::InvalidBounds { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lower).min(self.upper)
    }

    pub fn contains(&self, x: f64, slack: f64) -> bool {
        x >= self.lower - slack && x <= self.upper + slack
    }
}

impl Default for BoxBounds {
    fn default() -> Self {
        Self { lower: 1e-4, upper: 1e4 }
    }
}

/// Structured-sparsity constraint on `d`. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    #[default]
    None,
    /// `d` constant within each block of a partition of `0..p`.
    DisjointGroups { groups: Vec<Vec<usize>> },
    /// `d` constant on each overlap region, deeper regions at least as large.
    OverlappingGroups { groups: Vec<Vec<usize>> },
    /// `d` nondecreasing in the score.
    ScoreMonotone { scores: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    #[serde(default)]
    pub bounds: BoxBounds,
    #[serde(default)]
    pub structure: Structure,
    #[serde(default = "default_alt_tol")]
    pub alt_tol: f64,
    #[serde(default = "default_alt_sweeps")]
    pub alt_max_sweeps: usize,
}

fn default_alt_tol() -> f64 {
    1e-8
}

fn default_alt_sweeps() -> usize {
    500
}

impl ConstraintSpec {
    pub fn box_only(bounds: BoxBounds) -> Self {
        Self::with_structure(bounds, Structure::None)
    }

    pub fn with_structure(bounds: BoxBounds, structure: Structure) -> Self {
        Self {
            bounds,
            structure,
            alt_tol: default_alt_tol(),
            alt_max_sweeps: default_alt_sweeps(),
        }
    }

    /// Check the description against a problem dimension.
    pub fn validate(&self, p: usize) -> Result<()> {
        BoxBounds::new(self.bounds.lower, self.bounds.upper)?;
        if !(self.alt_tol > 0.0) || self.alt_max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "alternating projection needs a positive tolerance and sweep budget".into(),
            ));
        }
        match &self.structure {
            Structure::None => Ok(()),
            Structure::DisjointGroups { groups } => check_partition(groups, p),
            Structure::OverlappingGroups { groups } => check_groups(groups, p),
            Structure::ScoreMonotone { scores } => {
                if scores.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "{} scores for p = {p}",
                        scores.len()
                    )));
                }
                check_finite("scores", scores)
            }
        }
    }
}

pub(crate) fn check_groups(groups: &[Vec<usize>], p: usize) -> Result<()> {
    for (g, group) in groups.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::MalformedConstraint(format!("group {g} is empty")));
        }
        if let Some(&j) = group.iter().find(|&&j| j >= p) {
            return Err(Error::MalformedConstraint(format!(
                "group {g} has index {j} outside 0..{p}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_partition(groups: &[Vec<usize>], p: usize) -> Result<()> {
    check_groups(groups, p)?;
    let mut seen = vec![false; p];
    for group in groups {
        for &j in group {
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::MalformedConstraint(format!("index {j} appears in more than one group")));
            }
        }
    }
    if let Some(j) = seen.iter().position(|s| !s) {
        return Err(Error::MalformedConstraint(format!("index {j} is not covered by any group")));
    }
    Ok(())
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n as f64 - 1.0)).sqrt())
}

/// Center and scale each column to mean 0, sample variance 1 (denominator `n - 1`).
pub fn standardize_columns(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::DimensionMismatch("standardization needs n >= 2".into()));
    }
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let (mean, sd) = mean_and_sd(col.as_slice());
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVarianceColumn { column: j });
        }
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(out)
}

pub fn standardize_vector(y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = y.len();
    if n < 2 {
        return Err(Error::DimensionMismatch("standardization needs n >= 2".into()));
    }
    let (mean, sd) = mean_and_sd(y.as_slice());
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::ZeroVarianceResponse);
    }
    Ok(y.map(|v| (v - mean) / sd))
}

/// Standardize both the columns of `x` and the response.
pub fn standardize(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has length {}",
            x.nrows(),
            y.len()
        )));
    }
    Ok((standardize_columns(x)?, standardize_vector(y)?))
}
