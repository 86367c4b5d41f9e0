//! Radially monotone shrinkage on gridded cells: `y_i = theta_i + noise`,
//! with precision nondecreasing in the cell score (distance to a reference).

use std::io::{Read, Write};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConstraintSpec, PrecisionVector, ProblemInstance, Structure};
use crate::solver::{solve_observed, SolveResult, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub cell_id: Vec<String>,
    pub coords: Vec<(f64, f64)>,
    pub score: Vec<f64>,
    pub response: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct InputRow {
    cell_id: String,
    x: f64,
    y: f64,
    score: f64,
    response: f64,
}

#[derive(Debug, Serialize)]
struct OutputRow<'a> {
    cell_id: &'a str,
    d_star: f64,
    theta_hat: f64,
    abs_residual: f64,
}

impl SpatialDataset {
    pub fn new(cell_id: Vec<String>, coords: Vec<(f64, f64)>, score: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        let n = response.len();
        if cell_id.len() != n || coords.len() != n || score.len() != n {
            return Err(Error::DimensionMismatch("spatial columns have different lengths".into()));
        }
        if n == 0 {
            return Err(Error::DimensionMismatch("spatial dataset is empty".into()));
        }
        if let Some(index) = score.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteEntry { what: "score", index });
        }
        if let Some(index) = response.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteEntry { what: "response", index });
        }
        Ok(Self {
            cell_id,
            coords,
            score,
            response,
        })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    /// Read `cell_id,x,y,score,response` (header required, any column order).
    /// Row indices in errors are 0-based data rows.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
        let (mut ids, mut coords, mut score, mut response) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.deserialize::<InputRow>().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(format!("data row {row}: {e}")))?;
            ids.push(rec.cell_id);
            coords.push((rec.x, rec.y));
            score.push(rec.score);
            response.push(rec.response);
        }
        Self::new(ids, coords, score, response)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cell_id", "x", "y", "score", "response"])
            .map_err(|e| Error::Csv(e.to_string()))?;
        for i in 0..self.len() {
            w.write_record([
                self.cell_id[i].clone(),
                self.coords[i].0.to_string(),
                self.coords[i].1.to_string(),
                self.score[i].to_string(),
                self.response[i].to_string(),
            ])
            .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }

    /// Replace counts by `ln(1 + w_i * count_i)`.
    pub fn log1p_transform(&mut self, weights: Option<&[f64]>) -> Result<()> {
        if let Some(w) = weights {
            if w.len() != self.len() {
                return Err(Error::DimensionMismatch("weight vector length differs from cell count".into()));
            }
        }
        for i in 0..self.len() {
            let w = weights.map_or(1.0, |w| w[i]);
            let v = (w * self.response[i]).ln_1p();
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { what: "transformed response", index: i });
            }
            self.response[i] = v;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpatialFit {
    pub theta_hat: Vec<f64>,
    pub d_star: Vec<f64>,
    pub abs_residual: Vec<f64>,
    pub result: SolveResult,
}

impl SpatialFit {
    pub fn write_csv<W: Write>(&self, data: &SpatialDataset, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for i in 0..data.len() {
            w.serialize(OutputRow {
                cell_id: &data.cell_id[i],
                d_star: self.d_star[i],
                theta_hat: self.theta_hat[i],
                abs_residual: self.abs_residual[i],
            })
            .map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

/// Solver configuration with the score-monotone structure installed.
pub fn spatial_config(data: &SpatialDataset, solver: &SolverConfig) -> SolverConfig {
    let mut cfg = solver.clone();
    cfg.constraint = ConstraintSpec {
        structure: Structure::ScoreMonotone {
            scores: data.score.clone(),
        },
        ..solver.constraint.clone()
    };
    cfg
}

pub fn spatial_fit(data: &SpatialDataset, solver: &SolverConfig, a0: f64, b0: f64) -> Result<SpatialFit> {
    spatial_fit_observed(data, solver, a0, b0, |_, _| {})
}

/// As [`spatial_fit`], forwarding every iterate to `observe`.
pub fn spatial_fit_observed<F>(data: &SpatialDataset, solver: &SolverConfig, a0: f64, b0: f64, observe: F) -> Result<SpatialFit>
where
    F: FnMut(usize, &PrecisionVector),
{
    let inst = ProblemInstance::identity(DVector::from_column_slice(&data.response), a0, b0)?;
    let cfg = spatial_config(data, solver);
    let result = solve_observed(&inst, &cfg, observe)?;
    let d_star = result.d.as_slice().to_vec();
    let theta_hat: Vec<f64> = data.response.iter().zip(&d_star).map(|(y, d)| y / (1.0 + d)).collect();
    let abs_residual = data.response.iter().zip(&theta_hat).map(|(y, t)| (y - t).abs()).collect();
    Ok(SpatialFit {
        theta_hat,
        d_star,
        abs_residual,
        result,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadialConfig {
    pub n: usize,
    pub amplitude: f64,
    pub length_scale: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for RadialConfig {
    fn default() -> Self {
        Self {
            n: 400,
            amplitude: 3.0,
            length_scale: 0.4,
            noise_sd: 0.3,
            seed: 1,
        }
    }
}

/// Cells on a square grid over `[-1, 1]^2`, score = distance to the origin,
/// `theta = amplitude * exp(-(score / length_scale)^2)` plus Gaussian noise.
/// Returns the dataset and the noiseless `theta`.
pub fn synthetic_radial(cfg: &RadialConfig) -> Result<(SpatialDataset, Vec<f64>)> {
    if cfg.n == 0 || !(cfg.length_scale > 0.0) || !(cfg.noise_sd >= 0.0) {
        return Err(Error::InvalidConfig("radial generator needs n >= 1, length_scale > 0, noise_sd >= 0".into()));
    }
    let side = (cfg.n as f64).sqrt().ceil() as usize;
    let step = if side > 1 { 2.0 / (side - 1) as f64 } else { 0.0 };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (mut ids, mut coords, mut score, mut response, mut theta) = (vec![], vec![], vec![], vec![], vec![]);
    for k in 0..cfg.n {
        let (r, c) = (k / side, k % side);
        let (x, y) = (-1.0 + c as f64 * step, -1.0 + r as f64 * step);
        let s = x.hypot(y);
        let t = cfg.amplitude * (-(s / cfg.length_scale).powi(2)).exp();
        let z: f64 = rng.sample(StandardNormal);
        ids.push(format!("c{k}"));
        coords.push((x, y));
        score.push(s);
        theta.push(t);
        response.push(t + cfg.noise_sd * z);
    }
    Ok((SpatialDataset::new(ids, coords, score, response)?, theta))
}
