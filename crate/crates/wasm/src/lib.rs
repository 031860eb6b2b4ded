//! JSON-in, JSON-out bindings for the browser demo.
//!
//! Every entry point takes a problem object with row-major nested arrays
//! (`A`, `B`, `B1`, and either `Sigma` or `T`/`Sigma0`/`SigmaT`) and returns
//! a JSON string. The plain Rust functions are what the tests exercise; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use covsteer::feasibility::{construct_covariance_path, SteeringProblem};
use covsteer::sdpsteer::{self, AdmmOptions, SolveStatus};
use covsteer::stationary::{optimal_stationary_gain, StationaryProblem};
use covsteer::{Mat, SymMat};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Upper bound on grid intervals accepted from the page.
pub const MAX_INTERVALS: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Solver(#[from] covsteer::Error),
}

type Result<T> = std::result::Result<T, DemoError>;

#[derive(Debug, Deserialize)]
struct Input {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "B1")]
    b1: Vec<Vec<f64>>,
    #[serde(rename = "Sigma", default)]
    sigma: Option<Vec<Vec<f64>>>,
    #[serde(rename = "T", default)]
    t: Option<f64>,
    #[serde(rename = "Sigma0", default)]
    sigma0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "SigmaT", default)]
    sigma_t: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    grid: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GainReport {
    pub k: Vec<Vec<f64>>,
    pub power: f64,
    pub hurwitz: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PathReport {
    pub grid: Vec<f64>,
    pub sigma: Vec<Vec<Vec<f64>>>,
    pub u: Vec<Vec<Vec<f64>>>,
    /// Control energy `∫ trace(U'Σ⁻¹U) dt` (trapezoidal).
    pub energy: f64,
    pub min_eigenvalue: f64,
    pub note: String,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(DemoError::Input(format!("{name} must be a non-empty rectangular array")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DemoError::Input(format!("{name} has a non-finite entry")));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn field<'a>(name: &str, v: &'a Option<Vec<Vec<f64>>>) -> Result<&'a [Vec<f64>]> {
    v.as_deref().ok_or_else(|| DemoError::Input(format!("missing {name}")))
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse(json: &str) -> Result<Input> {
    serde_json::from_str(json).map_err(|e| DemoError::Input(e.to_string()))
}

fn steering_problem(input: &Input) -> Result<(SteeringProblem, usize)> {
    let t = input.t.ok_or_else(|| DemoError::Input("missing T".into()))?;
    let intervals = input.grid.unwrap_or(40);
    if !(2..=MAX_INTERVALS).contains(&intervals) {
        return Err(DemoError::Input(format!("grid must lie in 2..={MAX_INTERVALS}")));
    }
    let problem = SteeringProblem::new(
        matrix("A", &input.a)?,
        matrix("B", &input.b)?,
        matrix("B1", &input.b1)?,
        t,
        SymMat::new(matrix("Sigma0", field("Sigma0", &input.sigma0)?)?),
        SymMat::new(matrix("SigmaT", field("SigmaT", &input.sigma_t)?)?),
    )?;
    Ok((problem, intervals))
}

fn energy(grid: &[f64], sigma: &[SymMat], u: &[Mat]) -> Result<f64> {
    let mut rate = Vec::with_capacity(sigma.len());
    for (s, u) in sigma.iter().zip(u) {
        rate.push((u.transpose() * s.inverse()?.as_mat() * u).trace());
    }
    Ok(grid.windows(2).zip(rate.windows(2)).map(|(t, r)| 0.5 * (t[1] - t[0]) * (r[0] + r[1])).sum())
}

/// Minimum-power constant gain holding `Sigma` stationary.
pub fn stationary_gain_json(json: &str) -> Result<String> {
    let input = parse(json)?;
    let sigma = SymMat::new(matrix("Sigma", field("Sigma", &input.sigma)?)?);
    let problem = StationaryProblem::new(matrix("A", &input.a)?, matrix("B", &input.b)?, matrix("B1", &input.b1)?, sigma)?;
    let sol = optimal_stationary_gain(&problem)?;
    let report = GainReport { k: rows(&sol.k), power: sol.power, hurwitz: sol.hurwitz_ok };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Minimum-energy covariance path from the discretized SDP.
pub fn steer_json(json: &str) -> Result<String> {
    let (problem, intervals) = steering_problem(&parse(json)?)?;
    let (dp, sol) = sdpsteer::steer(&problem, intervals, &AdmmOptions::default())?;
    let sigma: Vec<SymMat> = sol.nodes.iter().map(|n| n.sigma.clone()).collect();
    let u: Vec<Mat> = sol.nodes.iter().map(|n| n.u.clone()).collect();
    let status = match sol.status {
        SolveStatus::Optimal => "optimal",
        _ => "not converged",
    };
    let report = PathReport {
        energy: sol.objective,
        min_eigenvalue: sigma.iter().map(SymMat::min_eigenvalue).fold(f64::INFINITY, f64::min),
        note: format!("{status} after {} iterations", sol.iterations),
        grid: dp.grid.clone(),
        sigma: sigma.iter().map(|s| rows(s.as_mat())).collect(),
        u: u.iter().map(rows).collect(),
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

/// Explicit positive-definite path from the constructive feasibility proof.
pub fn feasible_path_json(json: &str) -> Result<String> {
    let (problem, intervals) = steering_problem(&parse(json)?)?;
    let zero = Mat::zeros(problem.n(), problem.m());
    let fp = construct_covariance_path(&problem, &problem.noise(), &zero, &zero, intervals)?;
    let path = &fp.path;
    let report = PathReport {
        energy: energy(&path.grid, &path.sigma, &path.u)?,
        min_eigenvalue: fp.scan_min_eigenvalue,
        note: format!("{} segment(s)", fp.segments),
        grid: path.grid.clone(),
        sigma: path.sigma.iter().map(|s| rows(s.as_mat())).collect(),
        u: path.u.iter().map(rows).collect(),
    };
    Ok(serde_json::to_string(&report).expect("report serializes"))
}

fn to_js(e: DemoError) -> JsValue {
    JsError::new(&e.to_string()).into()
}

#[wasm_bindgen(js_name = stationaryGain)]
pub fn stationary_gain(json: &str) -> std::result::Result<String, JsValue> {
    stationary_gain_json(json).map_err(to_js)
}

#[wasm_bindgen(js_name = steer)]
pub fn steer(json: &str) -> std::result::Result<String, JsValue> {
    steer_json(json).map_err(to_js)
}

#[wasm_bindgen(js_name = feasiblePath)]
pub fn feasible_path(json: &str) -> std::result::Result<String, JsValue> {
    feasible_path_json(json).map_err(to_js)
}
