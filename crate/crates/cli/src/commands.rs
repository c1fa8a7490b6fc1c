//! The subcommands. Each one returns `Ok` or a [`CliError`] that maps to
//! the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use nfpe::coefficients::{validate_hypotheses, CoefficientSet, Sampler};
use nfpe::diagnostics::{
    barenblatt_oracle, compare_l1, heat_oracle, uniqueness_gap, HeatParams, UniquenessOptions,
};
use nfpe::grid::io::{read_binary, read_csv, to_csv_string, write_binary};
use nfpe::mckean::{
    empirical_density, marginal_discrepancy, self_consistent_simulate, simulate_linearized, InitialLaw,
    ParticleEnsemble,
};
use nfpe::resolvent::resolvent;
use nfpe::semigroup::{exponential_formula_study, mild_solution_strided, step, Trajectory};
use nfpe::{Boundary, Field, GridSpec};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{emit, load_config, parse_config_in, Format, InitialKind, RunConfig};
use crate::manifest::{write_atomic, Manifest, RunDir};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Solver(_) | CliError::Output(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Solver(_) => "solver",
            CliError::Invariant(_) => "invariant",
            CliError::Output(_) => "output",
        }
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::Output(e.to_string())
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

const MASS_TOL_STEP: f64 = 1e-8;
const MASS_TOL_RUN: f64 = 1e-7;
const NEG_TOL: f64 = 1e-8;

fn config_of(path: &Path) -> Result<RunConfig, CliError> {
    load_config(path).map_err(|e| CliError::Config(e.to_string()))
}

pub fn read_field(path: &Path, boundary: Boundary) -> Result<Field, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let field = if path.extension().is_some_and(|e| e == "bin") {
        read_binary(file, boundary)
    } else {
        read_csv(file, boundary)
    };
    field.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn field_binary(f: &Field) -> Vec<u8> {
    let mut buf = Vec::new();
    write_binary(f, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// The initial density described by `[initial]`.
pub fn initial_field(cfg: &RunConfig, grid: &GridSpec) -> Result<Field, CliError> {
    let init = &cfg.initial;
    let field = match init.kind {
        InitialKind::Gaussian => heat_oracle(HeatParams { mean: init.mean, sigma0: init.sigma }, 0.0, grid),
        InitialKind::Barenblatt => {
            barenblatt_oracle(init.m, 0.0, init.t0, grid).map_err(|e| CliError::Config(format!("initial: {e}")))?
        }
        InitialKind::Uniform => Field::constant(*grid, 1.0 / (2.0 * grid.half_width()).powi(grid.dim() as i32)),
        InitialKind::File => {
            let path = cfg.resolve_path(init.path.as_deref().unwrap_or_default());
            let f = read_field(&path, grid.boundary())?;
            if !f.grid().same_as(grid) {
                return Err(CliError::Config(format!("{} does not live on the configured grid", path.display())));
            }
            f
        }
    };
    Ok(field)
}

/// The configuration as stored in a run directory: relative paths made
/// absolute so the run can be reloaded from anywhere.
fn effective(cfg: &RunConfig) -> RunConfig {
    let mut out = cfg.clone();
    let abs = |p: &str| {
        let p = cfg.resolve_path(p);
        fs::canonicalize(&p).unwrap_or(p).display().to_string()
    };
    out.model.table = cfg.model.table.as_deref().map(abs);
    out.initial.path = cfg.initial.path.as_deref().map(abs);
    out
}

fn config_json(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("configuration serializes to JSON")
}

fn state_name(j: usize, ext: &str) -> String {
    format!("states/state_{j:06}.{ext}")
}

/// Writes the manifest, marking it failed if `res` is an error, and hands
/// `res` back.
fn close(run: &mut RunDir, res: Result<(), CliError>) -> Result<(), CliError> {
    if let Err(e) = &res {
        run.manifest.fail(e.kind(), &e.to_string());
    }
    run.finish().map_err(out_err)?;
    res
}

/// Turns failed monitors into an error unless `no_strict`.
fn enforce(manifest: &Manifest, no_strict: bool) -> Result<(), CliError> {
    let failed = manifest.failed_checks();
    if failed.is_empty() || no_strict {
        return Ok(());
    }
    let list: Vec<String> =
        failed.iter().map(|c| format!("{} = {:e} exceeds {:e}", c.name, c.value, c.threshold)).collect();
    Err(CliError::Invariant(list.join("; ")))
}

pub fn validate(config: &Path, output: Option<&Path>, range: f64, no_strict: bool) -> Result<(), CliError> {
    let cfg = config_of(config)?;
    let c = cfg.coefficients().map_err(|e| CliError::Config(e.to_string()))?;
    let grid = cfg.grid_spec().map_err(|e| CliError::Config(e.to_string()))?;
    let sampler = Sampler::new(-range, range, 2000).with_drift_grid(grid);
    let report = validate_hypotheses(&c, &sampler).map_err(|e| CliError::Config(e.to_string()))?;
    let text = serde_json::to_string_pretty(&json!({
        "config": config_json(&cfg),
        "report": report,
    }))
    .expect("report serializes");
    match output {
        Some(p) => write_atomic(p, format!("{text}\n").as_bytes()).map_err(out_err)?,
        None => println!("{text}"),
    }
    for check in &report.checks {
        eprintln!("hypothesis ({}): {}", check.hypothesis, if check.passed { "ok" } else { "FAILED" });
    }
    if !report.all_passed() && !no_strict {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.hypothesis).collect();
        return Err(CliError::Invariant(format!("hypotheses not satisfied: {}", failed.join(", "))));
    }
    Ok(())
}

pub fn resolvent_cmd(
    config: &Path,
    input: &Path,
    lambda: Option<f64>,
    output: &Path,
    no_strict: bool,
) -> Result<(), CliError> {
    let cfg = config_of(config)?;
    let c = cfg.coefficients().map_err(|e| CliError::Config(e.to_string()))?;
    let f = read_field(input, cfg.grid.boundary)?;
    let rcfg = cfg.resolvent.clone().with_lambda(lambda.unwrap_or(cfg.resolvent.lambda));
    rcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut manifest = Manifest::new("resolvent", config_json(&cfg));
    let sol = manifest.timed("resolvent", || resolvent(&f, &c, &rcfg)).map_err(solver_err)?;
    if cfg.grid.boundary == Boundary::NoFlux {
        manifest.check("mass_drift", (sol.y.mass() - f.mass()).abs(), MASS_TOL_STEP);
    }
    if f.min() >= 0.0 {
        manifest.check("negativity", -sol.y.min(), NEG_TOL);
    }
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "y".into());
    let beta_path = output.with_file_name(format!("{stem}_beta.csv"));
    let sidecar = output.with_file_name(format!("{stem}.json"));
    write_atomic(output, to_csv_string(&sol.y).as_bytes()).map_err(out_err)?;
    write_atomic(&beta_path, to_csv_string(&sol.beta_y).as_bytes()).map_err(out_err)?;
    let side = json!({
        "lambda": rcfg.lambda,
        "residual_l1": sol.residual_l1,
        "newton_iterations": sol.newton_iterations,
        "eps_history": sol.eps_history.iter().map(|(e, g)| json!({"eps": e, "gap": g})).collect::<Vec<_>>(),
        "mass_in": f.mass(),
        "mass_out": sol.y.mass(),
        "min_out": sol.y.min(),
        "monitors": manifest.monitors,
        "wall_times": manifest.wall_times,
    });
    let text = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    write_atomic(&sidecar, format!("{text}\n").as_bytes()).map_err(out_err)?;
    enforce(&manifest, no_strict)
}

fn output_dir(arg: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    match (arg, &cfg.output.dir) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(d)) => Ok(cfg.resolve_path(d)),
        (None, None) => Err(CliError::Config("no output directory: pass --output-dir or set output.dir".into())),
    }
}

/// Shifts a field by one cell along x, wrapping around.
fn roll_x(f: &Field) -> Field {
    let n = f.grid().cells();
    let mut v = f.values().to_vec();
    for row in v.chunks_mut(n) {
        row.rotate_right(1);
    }
    Field::from_values(*f.grid(), v).expect("same length")
}

pub fn solve(config: &Path, out: Option<&Path>, no_strict: bool) -> Result<(), CliError> {
    let cfg = config_of(config)?;
    let dir = output_dir(out, &cfg)?;
    let eff = effective(&cfg);
    let mut run = RunDir::create(&dir, Manifest::new("solve", config_json(&eff))).map_err(out_err)?;
    let res = solve_into(&cfg, &eff, &mut run).and_then(|()| enforce(&run.manifest, no_strict));
    close(&mut run, res)
}

fn solve_into(cfg: &RunConfig, eff: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let (c, rho0) = run.manifest.timed("setup", || -> Result<_, CliError> {
        let c = cfg.coefficients().map_err(|e| CliError::Config(e.to_string()))?;
        let grid = cfg.grid_spec().map_err(|e| CliError::Config(e.to_string()))?;
        let rho0 = initial_field(cfg, &grid)?;
        Ok((c, rho0))
    })?;
    run.write("config.toml", emit(eff).as_bytes()).map_err(out_err)?;
    let traj = run
        .manifest
        .timed("solve", || mild_solution_strided(&rho0, &c, cfg.time.t_end, cfg.time.h, cfg.time.stride, &cfg.resolvent))
        .map_err(solver_err)?;
    let start = std::time::Instant::now();
    monitor_trajectory(&mut run.manifest, &traj, &rho0, &c, cfg)?;
    run.manifest.wall_times.insert("monitors".into(), start.elapsed().as_secs_f64());
    run.manifest.extra.insert("newton_iterations".into(), json!(traj.newton_iterations));
    run.manifest.extra.insert("states".into(), json!(traj.monitors()));
    let start = std::time::Instant::now();
    write_trajectory(run, &traj, &cfg.output.formats)?;
    run.manifest.wall_times.insert("write".into(), start.elapsed().as_secs_f64());
    Ok(())
}

fn monitor_trajectory(
    manifest: &mut Manifest,
    traj: &Trajectory,
    rho0: &Field,
    c: &CoefficientSet,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    let mons = traj.monitors();
    let mass0 = mons[0].mass;
    let drift = mons.iter().map(|m| (m.mass - mass0).abs()).fold(0.0, f64::max);
    let min = mons.iter().map(|m| m.min).fold(f64::INFINITY, f64::min);
    manifest.mass_drift = Some(drift);
    manifest.min_value = Some(min);
    if cfg.grid.boundary == Boundary::NoFlux {
        manifest.check("mass_drift", drift, MASS_TOL_RUN);
    }
    if rho0.min() >= 0.0 {
        manifest.check("negativity", -min, NEG_TOL);
    }
    let linf0 = rho0.values().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if linf0 > 0.0 {
        let sup = traj.states.iter().flat_map(|s| s.values()).fold(0.0_f64, |a, v| a.max(v.abs()));
        manifest.check("linf_growth", sup / linf0, 2.0);
    }
    // Contraction spot-check against a shifted copy over the first steps.
    let steps = ((cfg.time.t_end / cfg.time.h - 1e-9).ceil() as usize).clamp(1, 3);
    let other0 = roll_x(rho0);
    let (mut a, mut b) = (rho0.clone(), other0.clone());
    for _ in 0..steps {
        a = step(&a, c, cfg.time.h, &cfg.resolvent).map_err(solver_err)?;
        b = step(&b, c, cfg.time.h, &cfg.resolvent).map_err(solver_err)?;
    }
    let excess = a.l1_distance(&b) - rho0.l1_distance(&other0);
    manifest.check("contraction_excess", excess, steps as f64 * 1e-8);
    Ok(())
}

fn write_trajectory(run: &mut RunDir, traj: &Trajectory, formats: &[Format]) -> Result<(), CliError> {
    for (j, s) in traj.states.iter().enumerate() {
        for f in formats {
            match f {
                Format::Csv => run.write(&state_name(j, "csv"), to_csv_string(s).as_bytes()),
                Format::Binary => run.write(&state_name(j, "bin"), &field_binary(s)),
            }
            .map_err(out_err)?;
        }
    }
    let mut times = String::from("index,t,mass,min,max,l1,l2\n");
    let mut summary = String::from("# t mass min max l1 l2\n");
    for (j, m) in traj.monitors().iter().enumerate() {
        times.push_str(&format!("{j},{:e},{:e},{:e},{:e},{:e},{:e}\n", m.t, m.mass, m.min, m.max, m.l1, m.l2));
        summary.push_str(&format!("{:e} {:e} {:e} {:e} {:e} {:e}\n", m.t, m.mass, m.min, m.max, m.l1, m.l2));
    }
    run.write("times.csv", times.as_bytes()).map_err(out_err)?;
    run.write("summary.dat", summary.as_bytes()).map_err(out_err)
}

/// A run directory written by `solve`, reloaded.
pub struct LoadedRun {
    pub config: RunConfig,
    pub coefficients: CoefficientSet,
    pub trajectory: Trajectory,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, CliError> {
    let input = |e: String| CliError::Input(format!("{}: {e}", dir.display()));
    let text = fs::read_to_string(dir.join("config.toml")).map_err(|e| input(e.to_string()))?;
    let config = parse_config_in(&text, dir).map_err(|e| input(e.to_string()))?;
    let coefficients = config.coefficients().map_err(|e| input(e.to_string()))?;
    let times_text = fs::read_to_string(dir.join("times.csv")).map_err(|e| input(e.to_string()))?;
    let mut times = Vec::new();
    for (k, line) in times_text.lines().enumerate().skip(1) {
        let t = line
            .split(',')
            .nth(1)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| input(format!("times.csv line {}: malformed row", k + 1)))?;
        times.push(t);
    }
    if times.is_empty() {
        return Err(input("times.csv has no rows".into()));
    }
    let ext = if dir.join(state_name(0, "csv")).exists() { "csv" } else { "bin" };
    let states = (0..times.len())
        .map(|j| read_field(&dir.join(state_name(j, ext)), config.grid.boundary))
        .collect::<Result<Vec<_>, _>>()?;
    let trajectory = Trajectory {
        times,
        states,
        h: config.time.h,
        stride: config.time.stride,
        model: coefficients.name.clone(),
        newton_iterations: 0,
    };
    Ok(LoadedRun { config, coefficients, trajectory })
}

pub fn convergence(config: &Path, out: Option<&Path>, no_strict: bool) -> Result<(), CliError> {
    let cfg = config_of(config)?;
    let dir = output_dir(out, &cfg)?;
    let eff = effective(&cfg);
    let mut run = RunDir::create(&dir, Manifest::new("convergence", config_json(&eff))).map_err(out_err)?;
    let res = convergence_into(&cfg, &eff, &mut run).and_then(|()| enforce(&run.manifest, no_strict));
    close(&mut run, res)
}

fn convergence_into(cfg: &RunConfig, eff: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let c = cfg.coefficients().map_err(|e| CliError::Config(e.to_string()))?;
    let grid = cfg.grid_spec().map_err(|e| CliError::Config(e.to_string()))?;
    let rho0 = initial_field(cfg, &grid)?;
    run.write("config.toml", emit(eff).as_bytes()).map_err(out_err)?;
    let t = cfg.convergence.t.unwrap_or(cfg.time.t_end);
    let report = run
        .manifest
        .timed("study", || exponential_formula_study(&rho0, &c, t, &cfg.convergence.n_list, &cfg.resolvent))
        .map_err(solver_err)?;
    let rise = report.gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    if rise.is_finite() {
        run.manifest.check("gap_increase", rise, 0.0);
    }
    if cfg.grid.boundary == Boundary::NoFlux {
        let drift = report.finals.iter().map(|f| (f.mass() - rho0.mass()).abs()).fold(0.0, f64::max);
        run.manifest.mass_drift = Some(drift);
        run.manifest.check("mass_drift", drift, MASS_TOL_RUN);
    }
    let mut csv = String::from("n,n_next,gap\n");
    for (k, g) in report.gaps.iter().enumerate() {
        csv.push_str(&format!("{},{},{:e}\n", report.n_list[k], report.n_list[k + 1], g));
    }
    run.write("convergence.csv", csv.as_bytes()).map_err(out_err)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    run.write("convergence.json", format!("{text}\n").as_bytes()).map_err(out_err)?;
    for (n, f) in report.n_list.iter().zip(&report.finals) {
        run.write(&format!("finals/final_n{n:05}.csv"), to_csv_string(f).as_bytes()).map_err(out_err)?;
    }
    eprintln!(
        "gaps: {:?}, order: {}",
        report.gaps,
        report.order.map(|o| format!("{o:.3}")).unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

pub struct VerifyArgs<'a> {
    pub run_a: &'a Path,
    pub run_b: &'a Path,
    pub eps: f64,
    pub floor: Option<f64>,
    pub slack: Option<f64>,
    pub output_dir: Option<&'a Path>,
}

pub fn verify(args: VerifyArgs<'_>, no_strict: bool) -> Result<(), CliError> {
    if !(args.eps > 0.0) {
        return Err(CliError::Config(format!("--eps must be positive, got {}", args.eps)));
    }
    let a = load_run(args.run_a)?;
    let b = load_run(args.run_b)?;
    let mut opts = UniquenessOptions::new(args.eps);
    if let Some(f) = args.floor {
        opts.floor = f;
    }
    if let Some(s) = args.slack {
        opts.slack = s;
    }
    let report = uniqueness_gap(&a.trajectory, &b.trajectory, &a.coefficients, opts)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    match args.output_dir {
        Some(dir) => {
            let mut manifest = Manifest::new("verify", json!({
                "run_a": args.run_a.display().to_string(),
                "run_b": args.run_b.display().to_string(),
                "eps": opts.eps,
                "floor": opts.floor,
                "slack": opts.slack,
            }));
            manifest.monitors.push(crate::manifest::Check {
                name: "gronwall_envelope".into(),
                value: if report.violated { 1.0 } else { 0.0 },
                threshold: 0.0,
                passed: !report.violated,
            });
            let mut run = RunDir::create(dir, manifest).map_err(out_err)?;
            let mut csv = String::from("t,h_eps,gronwall_bound\n");
            for k in 0..report.times.len() {
                csv.push_str(&format!("{:e},{:e},{:e}\n", report.times[k], report.h_eps[k], report.gronwall_bound[k]));
            }
            let res = run
                .write("uniqueness.json", format!("{text}\n").as_bytes())
                .and_then(|()| run.write("uniqueness.csv", csv.as_bytes()))
                .map_err(out_err)
                .and_then(|()| enforce(&run.manifest, no_strict));
            close(&mut run, res)?;
        }
        None => println!("{text}"),
    }
    let max_h = report.h_eps.iter().copied().fold(0.0, f64::max);
    eprintln!("max h_eps = {max_h:e}, envelope {}", if report.violated { "VIOLATED" } else { "respected" });
    if report.violated && !no_strict {
        return Err(CliError::Invariant("h_eps leaves the Gronwall envelope".into()));
    }
    Ok(())
}

/// Parses `k=v,k=v`. A value may hold two coordinates as `x:y`.
pub fn parse_params(text: &str) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("parameter '{part}' is not of the form key=value")))?;
        let vals = v
            .split(':')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Config(format!("parameter '{k}': {e}")))?;
        out.push((k.trim().to_string(), vals));
    }
    Ok(out)
}

pub struct CompareArgs<'a> {
    pub run: &'a Path,
    pub oracle: &'a str,
    pub params: Option<&'a str>,
    pub max_error: Option<f64>,
    pub output_dir: Option<&'a Path>,
}

pub fn compare(args: CompareArgs<'_>, no_strict: bool) -> Result<(), CliError> {
    let loaded = load_run(args.run)?;
    let cfg = &loaded.config;
    let grid = *loaded.trajectory.states[0].grid();
    let params = parse_params(args.params.unwrap_or(""))?;
    let unknown = |k: &str| CliError::Config(format!("unknown parameter '{k}' for the {} oracle", args.oracle));
    let scalar = |k: &str, v: &[f64]| -> Result<f64, CliError> {
        match v {
            [x] => Ok(*x),
            _ => Err(CliError::Config(format!("parameter '{k}' takes one value"))),
        }
    };
    let (curve, used) = match args.oracle {
        "heat" => {
            let mut p = HeatParams { mean: cfg.initial.mean, sigma0: cfg.initial.sigma };
            for (k, v) in &params {
                match (k.as_str(), v.as_slice()) {
                    ("mean", [x]) => p.mean = [*x, 0.0],
                    ("mean", [x, y]) => p.mean = [*x, *y],
                    ("sigma0" | "sigma", _) => p.sigma0 = scalar(k, v)?,
                    _ => return Err(unknown(k)),
                }
            }
            let curve = compare_l1(&loaded.trajectory, |t| heat_oracle(p, t, &grid))
                .map_err(|e| CliError::Input(e.to_string()))?;
            (curve, json!({"mean": p.mean, "sigma0": p.sigma0}))
        }
        "barenblatt" => {
            let (mut m, mut t0) = (cfg.model.m, cfg.initial.t0);
            for (k, v) in &params {
                match k.as_str() {
                    "m" => m = scalar(k, v)?,
                    "t0" => t0 = scalar(k, v)?,
                    _ => return Err(unknown(k)),
                }
            }
            barenblatt_oracle(m, 0.0, t0, &grid).map_err(|e| CliError::Config(e.to_string()))?;
            let curve = compare_l1(&loaded.trajectory, |t| {
                barenblatt_oracle(m, t, t0, &grid).expect("parameters checked above")
            })
            .map_err(|e| CliError::Input(e.to_string()))?;
            (curve, json!({"m": m, "t0": t0}))
        }
        other => return Err(CliError::Config(format!("unknown oracle '{other}', expected heat or barenblatt"))),
    };
    let summary = json!({
        "oracle": args.oracle,
        "params": used,
        "max_error": curve.max,
        "final_error": curve.errors.last().copied().unwrap_or(0.0),
        "times": curve.times,
        "errors": curve.errors,
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    let mut manifest = Manifest::new("compare", json!({"run": args.run.display().to_string(), "oracle": args.oracle, "params": used}));
    if let Some(tol) = args.max_error {
        manifest.check("max_error", curve.max, tol);
    }
    match args.output_dir {
        Some(dir) => {
            let mut csv = String::from("t,l1_error\n");
            for (t, e) in curve.times.iter().zip(&curve.errors) {
                csv.push_str(&format!("{t:e},{e:e}\n"));
            }
            let mut run = RunDir::create(dir, manifest).map_err(out_err)?;
            let res = run
                .write("compare.json", format!("{text}\n").as_bytes())
                .and_then(|()| run.write("compare.csv", csv.as_bytes()))
                .map_err(out_err)
                .and_then(|()| enforce(&run.manifest, no_strict));
            close(&mut run, res)
        }
        None => {
            println!("{text}");
            enforce(&manifest, no_strict)
        }
    }
}

pub struct SimulateArgs<'a> {
    pub config: &'a Path,
    pub pde_run: &'a Path,
    pub particles: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<&'a Path>,
    pub self_consistent: Option<usize>,
}

fn positions_csv(ens: &ParticleEnsemble, stride: usize) -> String {
    let mut s = String::from(if ens.dim == 1 { "x\n" } else { "x,y\n" });
    for p in (0..ens.n_particles).step_by(stride) {
        let x = ens.particle(p);
        if ens.dim == 1 {
            s.push_str(&format!("{:e}\n", x[0]));
        } else {
            s.push_str(&format!("{:e},{:e}\n", x[0], x[1]));
        }
    }
    s
}

pub fn simulate(args: SimulateArgs<'_>, no_strict: bool) -> Result<(), CliError> {
    let mut cfg = config_of(args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut section = cfg.sde.clone().unwrap_or_default();
    if let Some(n) = args.particles {
        section.n_particles = n;
    }
    if let Some(r) = args.self_consistent {
        section.self_consistent_rounds = Some(r);
    }
    cfg.sde = Some(section);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let dir = output_dir(args.output_dir, &cfg)?;
    let eff = effective(&cfg);
    let mut manifest = Manifest::new("simulate", config_json(&eff));
    manifest.extra.insert("pde_run".into(), json!(args.pde_run.display().to_string()));
    let mut run = RunDir::create(&dir, manifest).map_err(out_err)?;
    let res = simulate_into(&cfg, &eff, args.pde_run, &mut run).and_then(|()| enforce(&run.manifest, no_strict));
    close(&mut run, res)
}

fn simulate_into(cfg: &RunConfig, eff: &RunConfig, pde_run: &Path, run: &mut RunDir) -> Result<(), CliError> {
    let c = cfg.coefficients().map_err(|e| CliError::Config(e.to_string()))?;
    let pde = load_run(pde_run)?;
    let traj = &pde.trajectory;
    let sde = cfg.sde_config();
    run.write("config.toml", emit(eff).as_bytes()).map_err(out_err)?;
    let rounds = cfg.sde.as_ref().and_then(|s| s.self_consistent_rounds);
    let ensembles = run
        .manifest
        .timed("simulate", || match rounds {
            Some(r) => self_consistent_simulate(&c, &sde, &traj.states[0], traj.final_time(), r),
            None => simulate_linearized(traj, &c, &sde, &InitialLaw::Density(traj.states[0].clone())),
        })
        .map_err(solver_err)?;
    run.manifest.extra.insert("experimental".into(), json!(ensembles.experimental));
    let grid = *traj.states[0].grid();
    let mut curve = String::from("t,l1,w1\n");
    let mut worst_mass = 0.0_f64;
    let start = std::time::Instant::now();
    for (k, (t, ens)) in ensembles.times.iter().zip(&ensembles.snapshots).enumerate() {
        let kde = empirical_density(ens, &grid, &sde);
        worst_mass = worst_mass.max((kde.mass() - 1.0).abs());
        let d = marginal_discrepancy(ens, &traj.at(*t), &sde);
        curve.push_str(&format!("{t:e},{:e},{:e}\n", d.l1, d.w1));
        run.write(&format!("particles/positions_{k:06}.csv"), positions_csv(ens, cfg.output.particle_stride).as_bytes())
            .map_err(out_err)?;
        run.write(&format!("kde/kde_{k:06}.csv"), to_csv_string(&kde).as_bytes()).map_err(out_err)?;
    }
    run.manifest.wall_times.insert("analysis".into(), start.elapsed().as_secs_f64());
    run.manifest.check("kde_mass_defect", worst_mass, 1e-6);
    run.write("discrepancy.csv", curve.as_bytes()).map_err(out_err)
}
