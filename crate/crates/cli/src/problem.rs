//! JSON problem files.
//!
//! ```json
//! { "n": 2, "m": 1, "p": 1,
//!   "A": [[0, 1], [0, 0]], "B": [0, 1], "B1": [1, 0],
//!   "T": 1.0, "Sigma0": [[2, 0], [0, 2]], "SigmaT": [[1, -0.5], [-0.5, 0.5]] }
//! ```
//!
//! Matrices are row-major, either nested or flat. A stationary problem gives
//! `Sigma` instead of `T`/`Sigma0`/`SigmaT`.

use std::path::Path;

use covsteer::feasibility::SteeringProblem;
use covsteer::sdpsteer::AdmmOptions;
use covsteer::{Mat, SymMat};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub eps_abs: Option<f64>,
    pub eps_rel: Option<f64>,
    pub max_iters: Option<usize>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationOverrides {
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub description: Option<String>,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    #[serde(rename = "A")]
    pub a: MatrixValue,
    #[serde(rename = "B")]
    pub b: MatrixValue,
    #[serde(rename = "B1")]
    pub b1: MatrixValue,
    #[serde(rename = "T", default)]
    pub t: Option<f64>,
    #[serde(rename = "Sigma0", default)]
    pub sigma0: Option<MatrixValue>,
    #[serde(rename = "SigmaT", default)]
    pub sigma_t: Option<MatrixValue>,
    #[serde(rename = "Sigma", default)]
    pub sigma: Option<MatrixValue>,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub solver: Option<SolverOverrides>,
    #[serde(default)]
    pub simulation: Option<SimulationOverrides>,
}

/// Validated system matrices and a stationary target.
#[derive(Debug, Clone)]
pub struct StationaryData {
    pub a: Mat,
    pub b: Mat,
    pub b1: Mat,
    pub sigma: SymMat,
}

fn matrix(field: &str, value: &MatrixValue, rows: usize, cols: usize) -> Result<Mat, CliError> {
    let data: Vec<f64> = match value {
        MatrixValue::Flat(v) => v.clone(),
        MatrixValue::Nested(r) => {
            if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                let got: Vec<usize> = r.iter().map(Vec::len).collect();
                return Err(CliError::Input(format!("field `{field}`: expected {rows} rows of {cols}, got row lengths {got:?}")));
            }
            r.concat()
        }
    };
    if data.len() != rows * cols {
        return Err(CliError::Input(format!("field `{field}`: expected {} entries ({rows}x{cols}), got {}", rows * cols, data.len())));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Input(format!("field `{field}`: entries must be finite")));
    }
    Ok(Mat::from_row_slice(rows, cols, &data))
}

fn covariance(field: &str, value: &MatrixValue, n: usize) -> Result<SymMat, CliError> {
    let m = matrix(field, value, n, n)?;
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(CliError::Input(format!("field `{field}`: not symmetric (max asymmetry {asym:e})")));
    }
    let s = SymMat::new(m);
    if !s.is_positive_definite() {
        return Err(CliError::Input(format!("field `{field}`: not positive definite")));
    }
    Ok(s)
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let pf: ProblemFile = serde_json::from_str(text).map_err(|e| CliError::Input(format!("problem file: {e}")))?;
        if pf.n == 0 || pf.m == 0 || pf.p == 0 {
            return Err(CliError::Input("fields `n`, `m`, `p` must be positive".into()));
        }
        Ok(pf)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn system(&self) -> Result<(Mat, Mat, Mat), CliError> {
        Ok((matrix("A", &self.a, self.n, self.n)?, matrix("B", &self.b, self.n, self.m)?, matrix("B1", &self.b1, self.n, self.p)?))
    }

    pub fn is_finite_horizon(&self) -> bool {
        self.sigma0.is_some() || self.sigma_t.is_some() || self.t.is_some()
    }

    pub fn steering(&self) -> Result<SteeringProblem, CliError> {
        let (a, b, b1) = self.system()?;
        let t = self.t.ok_or_else(|| CliError::Input("field `T` is required for finite-horizon commands".into()))?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Input(format!("field `T`: must be positive, got {t}")));
        }
        let need = |field: &str, v: &Option<MatrixValue>| {
            v.as_ref().ok_or_else(|| CliError::Input(format!("field `{field}` is required for finite-horizon commands"))).cloned()
        };
        let sigma0 = covariance("Sigma0", &need("Sigma0", &self.sigma0)?, self.n)?;
        let sigma_t = covariance("SigmaT", &need("SigmaT", &self.sigma_t)?, self.n)?;
        SteeringProblem::new(a, b, b1, t, sigma0, sigma_t).map_err(|e| CliError::Input(e.to_string()))
    }

    /// The stationary target: `Sigma`, or `SigmaT` for a finite-horizon file.
    pub fn stationary(&self) -> Result<StationaryData, CliError> {
        let (a, b, b1) = self.system()?;
        let (field, value) = match (&self.sigma, &self.sigma_t) {
            (Some(s), _) => ("Sigma", s),
            (None, Some(s)) => ("SigmaT", s),
            (None, None) => return Err(CliError::Input("field `Sigma` is required for stationary commands".into())),
        };
        let sigma = covariance(field, value, self.n)?;
        Ok(StationaryData { a, b, b1, sigma })
    }

    pub fn admm_options(&self) -> AdmmOptions {
        let mut o = AdmmOptions::default();
        if let Some(s) = &self.solver {
            o.eps_abs = s.eps_abs.unwrap_or(o.eps_abs);
            o.eps_rel = s.eps_rel.unwrap_or(o.eps_rel);
            o.max_iters = s.max_iters.unwrap_or(o.max_iters);
            o.rho = s.rho.unwrap_or(o.rho);
        }
        o
    }
}
