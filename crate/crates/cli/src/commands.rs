use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use covsteer::feasibility::{construct_covariance_path, stationary_admissible, Verdict};
use covsteer::schrodinger::{fixed_point_iteration, schrodinger_residual, FeedbackPolicy, GainSchedule, DEFAULT_STEPS};
use covsteer::sdpsteer::{self, recover_gains, verify_sampled_policy, SolveStatus, DEFAULT_INTERVALS};
use covsteer::simulate::{compare_covariance, empirical_covariance, euler_maruyama_ensemble, SimConfig};
use covsteer::stationary::{epsilon_regularized_gain, optimal_stationary_gain_with_epsilon, StationaryProblem, DEFAULT_EPSILON};
use covsteer::{Mat, SymMat};
use serde_json::json;

use crate::output::{matrix_columns, matrix_json, num, read_gains, row_major, write_gains, write_json, CsvOut};
use crate::problem::{ProblemFile, StationaryData};
use crate::CliError;

/// What a command prints and the process exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, code: 0 }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn stationary_problem(data: StationaryData) -> Result<StationaryProblem, CliError> {
    Ok(StationaryProblem::new(data.a, data.b, data.b1, data.sigma)?)
}

pub fn check(file: &Path, out: Option<&Path>) -> Result<Outcome, CliError> {
    let pf = ProblemFile::load(file)?;
    let st = pf.stationary()?;
    let report = stationary_admissible(&st.a, &st.b, &st.b1, &st.sigma)?;
    let mut text = String::new();
    let yes = |b: bool| if b { "yes" } else { "no" };
    writeln!(text, "rank condition:       {}", yes(report.rank_ok)).unwrap();
    writeln!(text, "A - BK Hurwitz:       {}", yes(report.hurwitz_ok)).unwrap();
    writeln!(text, "R(B) within R(B1):    {}", yes(report.range_inclusion_ok)).unwrap();
    if let Some(k) = &report.k {
        writeln!(text, "K:                    {:?}", row_major(k).collect::<Vec<_>>()).unwrap();
    }
    writeln!(text, "verdict:              {}", report.verdict.as_str()).unwrap();
    let doc = json!({
        "verdict": report.verdict.as_str(),
        "rank_condition": report.rank_ok,
        "hurwitz": report.hurwitz_ok,
        "range_inclusion": report.range_inclusion_ok,
        "K": report.k.as_ref().map(matrix_json),
        "X": report.x.as_ref().map(matrix_json),
    });
    text.push_str(&doc.to_string());
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("admissibility.json"), &doc)?;
    }
    let code = if report.verdict == Verdict::Inadmissible { 2 } else { 0 };
    Ok(Outcome { text, code })
}

#[derive(Debug, Clone, Default)]
pub struct SteerArgs {
    pub file: PathBuf,
    pub grid: Option<usize>,
    pub out: PathBuf,
    /// Initial ADMM penalty; changing it restarts the solver from a
    /// different trajectory.
    pub rho: Option<f64>,
    pub max_iters: Option<usize>,
}

pub fn steer(args: &SteerArgs) -> Result<Outcome, CliError> {
    let pf = ProblemFile::load(&args.file)?;
    let problem = pf.steering()?;
    let intervals = args.grid.or(pf.grid).unwrap_or(DEFAULT_INTERVALS);
    let mut opts = pf.admm_options();
    opts.rho = args.rho.unwrap_or(opts.rho);
    opts.max_iters = args.max_iters.unwrap_or(opts.max_iters);
    let (dp, sol) = sdpsteer::steer(&problem, intervals, &opts)?;
    ensure_dir(&args.out)?;

    let n = problem.n();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("Sigma", n, n));
    let mut sigma_csv = CsvOut::create(&args.out.join("sigma.csv"), &header)?;
    for (t, node) in dp.grid.iter().zip(&sol.nodes) {
        let mut row = vec![num(*t)];
        row.extend(row_major(node.sigma.as_mat()).map(num));
        sigma_csv.row(row)?;
    }
    sigma_csv.finish()?;

    let mut cost = String::new();
    writeln!(cost, "status = {}", sol.status.as_str()).unwrap();
    writeln!(cost, "J = {}", num(sol.objective)).unwrap();
    writeln!(cost, "iterations = {}", sol.iterations).unwrap();
    writeln!(cost, "primal_residual = {}", num(sol.primal_residual)).unwrap();
    writeln!(cost, "dual_residual = {}", num(sol.dual_residual)).unwrap();
    writeln!(cost, "rho_initial = {}", num(opts.rho)).unwrap();
    writeln!(cost, "rho_final = {}", num(sol.raw.rho)).unwrap();
    writeln!(cost, "grid = {intervals}").unwrap();
    writeln!(cost, "eps_psd = {}", num(dp.eps_psd)).unwrap();

    let finish = |cost: &str| std::fs::write(args.out.join("cost.txt"), cost).map_err(|e| CliError::Io(e.to_string()));
    if sol.status != SolveStatus::Optimal {
        finish(&cost)?;
        return Err(CliError::Solver(format!(
            "SDP status {} after {} iterations (primal {:e}, dual {:e}); diagnostics in {}",
            sol.status.as_str(),
            sol.iterations,
            sol.primal_residual,
            sol.dual_residual,
            args.out.join("cost.txt").display()
        )));
    }
    let policy = match recover_gains(&sol, &dp) {
        Ok(p) => p,
        Err(e) => {
            finish(&cost)?;
            return Err(e.into());
        }
    };
    write_gains(&args.out.join("gains.csv"), &policy)?;
    let report = verify_sampled_policy(&policy, &problem)?;
    writeln!(cost, "terminal_error = {}", num(report.terminal_error)).unwrap();
    writeln!(cost, "realized_cost = {}", num(report.cost)).unwrap();
    finish(&cost)?;
    Ok(Outcome::ok(format!(
        "status optimal after {} iterations; J = {:.10}; terminal error {:.3e}; realized cost {:.10}\nwrote sigma.csv, gains.csv, cost.txt to {}",
        sol.iterations,
        sol.objective,
        report.terminal_error,
        report.cost,
        args.out.display()
    )))
}

pub fn feasible_path(file: &Path, grid: Option<usize>, out: &Path) -> Result<Outcome, CliError> {
    let pf = ProblemFile::load(file)?;
    let problem = pf.steering()?;
    let intervals = grid.or(pf.grid).unwrap_or(DEFAULT_INTERVALS);
    if intervals < 1 {
        return Err(CliError::Input("--grid must be at least 1".into()));
    }
    let zero = Mat::zeros(problem.n(), problem.m());
    let fp = construct_covariance_path(&problem, &problem.noise(), &zero, &zero, intervals)?;
    ensure_dir(out)?;
    let (n, m) = (problem.n(), problem.m());

    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("Sigma", n, n));
    header.push("min_eig".into());
    let mut sigma_csv = CsvOut::create(&out.join("sigma_path.csv"), &header)?;
    let mins = fp.path.min_eigenvalues();
    for ((t, s), lmin) in fp.path.grid.iter().zip(&fp.path.sigma).zip(&mins) {
        let mut row = vec![num(*t)];
        row.extend(row_major(s.as_mat()).map(num));
        row.push(num(*lmin));
        sigma_csv.row(row)?;
    }
    sigma_csv.finish()?;

    let mut header = vec!["t".to_string()];
    header.extend(matrix_columns("U", n, m));
    let mut u_csv = CsvOut::create(&out.join("u_path.csv"), &header)?;
    for (t, u) in fp.path.grid.iter().zip(&fp.path.u) {
        let mut row = vec![num(*t)];
        row.extend(row_major(u).map(num));
        u_csv.row(row)?;
    }
    u_csv.finish()?;
    Ok(Outcome::ok(format!(
        "positive path: min eigenvalue {:.6e} over a {}-point scan ({} segment(s), bump doublings {:?})\nwrote sigma_path.csv, u_path.csv to {}",
        fp.scan_min_eigenvalue,
        10 * intervals + 1,
        fp.segments,
        fp.doublings,
        out.display()
    )))
}

pub fn stationary_gain(file: &Path, epsilon: Option<f64>, out: Option<&Path>) -> Result<Outcome, CliError> {
    let pf = ProblemFile::load(file)?;
    let problem = stationary_problem(pf.stationary()?)?;
    let eps = epsilon.unwrap_or(DEFAULT_EPSILON);
    let sol = optimal_stationary_gain_with_epsilon(&problem, eps)?;
    let fallback = match (&sol.epsilon_fallback, sol.hurwitz_ok) {
        (Some(f), _) => Some(f.clone()),
        (None, false) => Some(epsilon_regularized_gain(&problem, &sol.k, eps)?),
        (None, true) => None,
    };
    let mut doc = json!({
        "K": matrix_json(&sol.k),
        "power": sol.power,
        "hurwitz": sol.hurwitz_ok,
        "X": matrix_json(&sol.x),
    });
    if let Some(f) = &fallback {
        doc["epsilon_fallback"] = json!({
            "epsilon": f.epsilon,
            "K_eps": matrix_json(&f.k_eps),
            "Sigma_eps": matrix_json(f.sigma_eps.as_mat()),
            "gap": f.gap,
        });
    }
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("gain.json"), &doc)?;
    }
    Ok(Outcome::ok(serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?))
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub file: PathBuf,
    pub policy: Option<PathBuf>,
    pub constant: bool,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    /// Keep running with the stationary gain for the target up to this time.
    pub hold_until: Option<f64>,
    /// End time for stationary files.
    pub horizon: Option<f64>,
    pub dump_paths: usize,
    pub record_every: usize,
    pub out: PathBuf,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        SimulateArgs {
            file: PathBuf::new(),
            policy: None,
            constant: false,
            paths: None,
            seed: None,
            dt: None,
            hold_until: None,
            horizon: None,
            dump_paths: 0,
            record_every: 10,
            out: PathBuf::from("."),
        }
    }
}

/// Summary written to `comparison.json`.
#[derive(Debug, Clone)]
pub struct SimulationSummary {
    pub checkpoints: Vec<(f64, f64)>,
    pub final_max_abs_z: f64,
    pub pass: bool,
}

pub fn simulate(args: &SimulateArgs) -> Result<(Outcome, SimulationSummary), CliError> {
    let pf = ProblemFile::load(&args.file)?;
    let (a, b, b1) = pf.system()?;
    let sim = pf.simulation.clone().unwrap_or_default();
    let target = pf.stationary()?;
    let (sigma0, reference_from, end) = if pf.is_finite_horizon() {
        let p = pf.steering()?;
        let end = args.hold_until.unwrap_or(p.t);
        if end < p.t - 1e-12 {
            return Err(CliError::Input(format!("--hold-until {end} is before the horizon T = {}", p.t)));
        }
        (p.sigma0.clone(), p.t, end)
    } else {
        (target.sigma.clone(), 0.0, args.horizon.or(args.hold_until).unwrap_or(1.0))
    };
    let hold_gain =
        || -> Result<Mat, CliError> { Ok(covsteer::stationary::optimal_stationary_gain(&stationary_problem(target.clone())?)?.k) };

    let schedule: Box<dyn GainSchedule> = match (&args.policy, args.constant) {
        (Some(_), true) | (None, false) => return Err(CliError::Input("give exactly one of --policy <gains.csv> or --constant".into())),
        (None, true) => Box::new(FeedbackPolicy::constant(hold_gain()?)),
        (Some(path), false) => {
            let policy = read_gains(path, pf.m, pf.n)?;
            let (first, last) = (policy.grid[0], *policy.grid.last().unwrap());
            if first.abs() > 1e-9 || (last - reference_from).abs() > 1e-9 * reference_from.max(1.0) {
                return Err(CliError::Input(format!(
                    "{}: policy grid [{first}, {last}] does not match the problem horizon [0, {reference_from}]",
                    path.display()
                )));
            }
            if end > reference_from + 1e-12 {
                Box::new(policy.followed_by(reference_from, FeedbackPolicy::constant(hold_gain()?)))
            } else {
                Box::new(policy)
            }
        }
    };
    let horizon_default = if pf.is_finite_horizon() { reference_from } else { end };
    let config = SimConfig {
        dt: args.dt.or(sim.dt).unwrap_or(horizon_default / 1000.0),
        n_paths: args.paths.or(sim.paths).unwrap_or(20_000),
        seed: args.seed.or(sim.seed).unwrap_or(0),
        store_paths: args.dump_paths > 0,
        max_stored_paths: args.dump_paths,
        record_every: args.record_every.max(1),
    };
    let ens = euler_maruyama_ensemble(&a, &b, &b1, schedule.as_ref(), &sigma0, end, &config)?;
    ensure_dir(&args.out)?;

    let n = pf.n;
    let scale = end.max(1.0);
    let has_reference = |t: f64| t >= reference_from - 1e-9 * scale;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("mean_{i}")));
    header.extend(matrix_columns("Sigma", n, n));
    header.push("max_abs_z".into());
    let mut stats_csv = CsvOut::create(&args.out.join("stats.csv"), &header)?;
    for ((t, mean), cov) in ens.stats.grid.iter().zip(&ens.stats.mean).zip(&ens.stats.cov) {
        let mut row = vec![num(*t)];
        row.extend(mean.iter().copied().map(num));
        row.extend(row_major(cov.as_mat()).map(num));
        row.push(if has_reference(*t) { num(compare_covariance(cov, &target.sigma, ens.stats.n_paths)?.max_abs_z) } else { String::new() });
        stats_csv.row(row)?;
    }
    stats_csv.finish()?;

    // The first time the target applies, then ten checkpoints evenly spread
    // over the rest of the run.
    let span = end - reference_from;
    let mut wanted = vec![reference_from];
    if span > 1e-9 * scale {
        wanted.extend((1..=10).map(|i| reference_from + span * i as f64 / 10.0));
    }
    let mut checkpoints = Vec::new();
    let mut cp_json = Vec::new();
    for w in wanted {
        let t = *ens.stats.grid.iter().min_by(|x, y| (*x - w).abs().total_cmp(&(*y - w).abs())).unwrap();
        let est = empirical_covariance(&ens.stats, t)?;
        let cmp = compare_covariance(&est.sigma, &target.sigma, ens.stats.n_paths)?;
        checkpoints.push((t, cmp.max_abs_z));
        cp_json.push(json!({"t": t, "max_abs_z": cmp.max_abs_z, "frobenius_gap": cmp.frobenius_gap, "pass": cmp.pass}));
    }
    let final_est = empirical_covariance(&ens.stats, end)?;
    let final_cmp = compare_covariance(&final_est.sigma, &target.sigma, ens.stats.n_paths)?;
    let pass = cp_json.iter().all(|c| c["pass"] == json!(true));
    let reference_name = if pf.sigma.is_some() { "Sigma" } else { "SigmaT" };
    write_json(
        &args.out.join("comparison.json"),
        &json!({
            "reference": reference_name,
            "reference_from": reference_from,
            "n_paths": ens.stats.n_paths,
            "dt": config.dt,
            "seed": config.seed,
            "final": {"t": end, "max_abs_z": final_cmp.max_abs_z, "frobenius_gap": final_cmp.frobenius_gap,
                      "z": matrix_json(&final_cmp.z), "Sigma_hat": matrix_json(final_est.sigma.as_mat()),
                      "pass": final_cmp.pass},
            "checkpoints": cp_json,
            "pass": pass,
        }),
    )?;

    if let Some(paths) = &ens.paths {
        let mut header = vec!["t".to_string(), "path".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=pf.m).map(|j| format!("u_{j}")));
        let mut paths_csv = CsvOut::create(&args.out.join("paths.csv"), &header)?;
        for rec in paths {
            for ((t, x), u) in ens.stats.grid.iter().zip(&rec.states).zip(&rec.controls) {
                let mut row = vec![num(*t), rec.id.to_string()];
                row.extend(x.iter().copied().map(num));
                row.extend(u.iter().copied().map(num));
                paths_csv.row(row)?;
            }
        }
        paths_csv.finish()?;
    }
    let text = format!(
        "{} paths, dt = {}, seed {}: final max |z| = {:.3} vs {reference_name}; checkpoints {}\nwrote stats.csv{}, comparison.json to {}",
        ens.stats.n_paths,
        config.dt,
        config.seed,
        final_cmp.max_abs_z,
        if pass { "pass" } else { "FAIL" },
        if ens.paths.is_some() { ", paths.csv" } else { "" },
        args.out.display()
    );
    Ok((Outcome::ok(text), SimulationSummary { checkpoints, final_max_abs_z: final_cmp.max_abs_z, pass }))
}

pub fn schrodinger(file: &Path, max_iters: usize, steps: Option<usize>, out: &Path) -> Result<Outcome, CliError> {
    let pf = ProblemFile::load(file)?;
    let problem = pf.steering()?;
    let steps = steps.unwrap_or(DEFAULT_STEPS);
    if steps == 0 {
        return Err(CliError::Input("--steps must be positive".into()));
    }
    let n = problem.n();
    let report = fixed_point_iteration(&problem, &SymMat::zeros(n), max_iters, steps)?;
    let residual = match &report.pair {
        Some(pair) => {
            let r = schrodinger_residual(pair, &problem)?;
            json!({"ode_res_pi": r.ode_res_pi, "ode_res_h": r.ode_res_h, "bc0_res": r.bc0_res, "bcT_res": r.bct_res})
        }
        None => serde_json::Value::Null,
    };
    let doc = json!({
        "status": report.status.as_str(),
        "iterations": report.iterations,
        "max_iters": max_iters,
        "steps": steps,
        "history": report.history,
        "Pi_T": matrix_json(report.pi_t.as_mat()),
        "escape_time": report.escape_time,
        "residual": residual,
    });
    ensure_dir(out)?;
    write_json(&out.join("iteration_report.json"), &doc)?;
    Ok(Outcome::ok(format!(
        "fixed-point iteration: {} after {} iterations\nwrote iteration_report.json to {}",
        report.status.as_str(),
        report.iterations,
        out.display()
    )))
}
