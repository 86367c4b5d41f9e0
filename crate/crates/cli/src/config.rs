use std::path::Path;

use dcvs::baselines::{BaselineConfig, Method};
use dcvs::experiments::ScenarioConfig;
use dcvs::model::{BoxBounds, Structure};
use dcvs::solver::SolverConfig;
use serde::{Deserialize, Serialize};

use crate::output::{InputDigest, Manifest};
use crate::{CliError, CliResult, CommonArgs};

/// Everything a run needs. Loaded from TOML, then overridden by flags; the
/// resolved value is what the manifest records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    /// Methods compared by `simulate`.
    pub methods: Vec<Method>,
    /// PGD step size in log coordinates.
    pub step_size: f64,
    pub a0: f64,
    pub b0: f64,
    pub standardize_x: bool,
    pub standardize_y: bool,
    pub header: bool,
    pub log1p: bool,
    pub jobs: Option<usize>,
    pub solver: SolverConfig,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Dc,
            methods: Method::ALL.to_vec(),
            step_size: 0.1,
            a0: 1.0,
            b0: 1.0,
            standardize_x: false,
            standardize_y: false,
            header: false,
            log1p: false,
            jobs: None,
            solver: SolverConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

fn read_recorded(path: &Path, manifest: &mut Manifest) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    manifest.inputs.push(InputDigest::of(path, &bytes));
    String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{} is not valid UTF-8", path.display())))
}

fn load_structure(path: &Path, manifest: &mut Manifest) -> CliResult<Structure> {
    let text = read_recorded(path, manifest)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    let structure: Structure = parsed.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    to_zero_based(structure).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Constraint files list group members 1-based.
fn to_zero_based(s: Structure) -> Result<Structure, String> {
    let shift = |groups: Vec<Vec<usize>>| -> Result<Vec<Vec<usize>>, String> {
        groups
            .into_iter()
            .map(|g| {
                g.into_iter()
                    .map(|j| j.checked_sub(1).ok_or_else(|| "group indices are 1-based; found 0".to_string()))
                    .collect()
            })
            .collect()
    };
    Ok(match s {
        Structure::DisjointGroups { groups } => Structure::DisjointGroups { groups: shift(groups)? },
        Structure::OverlappingGroups { groups } => Structure::OverlappingGroups { groups: shift(groups)? },
        other => other,
    })
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs, manifest: &mut Manifest) -> CliResult<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = read_recorded(path, manifest)?;
                toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = args.method {
            cfg.method = m;
        }
        let bounds = &mut cfg.solver.constraint.bounds;
        if let Some(lo) = args.box_lo {
            bounds.lower = lo;
        }
        if let Some(hi) = args.box_hi {
            bounds.upper = hi;
        }
        BoxBounds::new(bounds.lower, bounds.upper)?;
        if let Some(v) = args.a0 {
            cfg.a0 = v;
        }
        if let Some(v) = args.b0 {
            cfg.b0 = v;
        }
        if let Some(v) = args.max_iters {
            cfg.solver.max_iters = v;
        }
        if let Some(v) = args.rel_tol {
            cfg.solver.rel_tol = v;
        }
        if let Some(v) = args.accel {
            cfg.solver.accel_enabled = v.is_on();
        }
        if let Some(v) = args.accel_period {
            cfg.solver.accel_period = v;
        }
        if let Some(path) = &args.constraint_file {
            cfg.solver.constraint.structure = load_structure(path, manifest)?;
        }
        if let Some(v) = args.jobs {
            cfg.jobs = Some(v);
        }
        if let Some(v) = args.standardize_x {
            cfg.standardize_x = v.is_on();
        }
        if let Some(v) = args.standardize_y {
            cfg.standardize_y = v.is_on();
        }
        if cfg.a0.is_nan() || cfg.b0.is_nan() || cfg.a0 <= 0.0 || cfg.b0 <= 0.0 {
            return Err(CliError::Input(format!("a0 and b0 must be positive (a0 = {}, b0 = {})", cfg.a0, cfg.b0)));
        }
        Ok(cfg)
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            method: self.method,
            step_size: self.step_size,
            solver: self.solver.clone(),
        }
    }
}
