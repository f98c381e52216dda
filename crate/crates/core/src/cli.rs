//! Run configuration and mode dispatch for the `tvjko` binary.
//!
//! A run reads a JSON [`RunConfig`], applies `key=value` overrides on dotted
//! paths, validates everything mode-specific, runs, and writes CSV outputs
//! plus a `manifest.json` into the output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytic::{hat_beta_of_tau, AnalyticKind, AnalyticPair};
use crate::error::{Error, Result};
use crate::flow::{builtin_family, run_flow, weak_solution_residual};
use crate::grid::{GridDensity, GridSpec};
use crate::io::{read_density_file, write_density};
use crate::jko::{jko_step, JkoConfig, StepRule};
use crate::oracle::{run_oracles, OracleTolerances};
use crate::radial::{radial_flow, radial_jko_step, RadialDensity, RadialStepDiagnostics};
use crate::transport::fmt;

pub const OUTPUT_DIR_ENV: &str = "TVJKO_OUTPUT_DIR";

/// L1 tolerance of `validate_uniform`, in cells.
pub const UNIFORM_L1_CELLS: f64 = 3.0;
/// Relative tolerance on the plateau height of `validate_hat`.
pub const HAT_PLATEAU_REL: f64 = 0.02;
/// Tolerance on the jump location of `validate_hat`, in cells.
pub const HAT_JUMP_CELLS: f64 = 2.0;
/// Tolerance on `|z|` at the plateau edge of `validate_hat`.
pub const HAT_Z_TOL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Step,
    Flow,
    RadialStep,
    RadialFlow,
    ValidateUniform,
    ValidateHat,
    OracleCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub left: f64,
    pub right: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_outer_iter: usize,
    pub el_tolerance: f64,
    pub step_rule: StepRule,
    pub accelerate: bool,
    pub min_density_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = JkoConfig::default();
        Self {
            max_outer_iter: d.max_outer_iter,
            el_tolerance: d.el_tolerance,
            step_rule: d.step_rule,
            accelerate: d.accelerate,
            min_density_floor: d.min_density_floor,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub input_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialConfig {
    pub dimension: usize,
    /// Checked against the radius implied by the input CSV when given.
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub grid: Option<GridConfig>,
    pub tau: Option<f64>,
    pub horizon: Option<f64>,
    pub entropy_h: f64,
    pub solver: SolverConfig,
    pub io: IoConfig,
    pub radial: Option<RadialConfig>,
    pub seed: u64,
    /// Initial half-width for `validate_uniform`.
    pub alpha0: f64,
    pub oracle_tolerances: OracleTolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            grid: None,
            tau: None,
            horizon: None,
            entropy_h: 0.0,
            solver: SolverConfig::default(),
            io: IoConfig::default(),
            radial: None,
            seed: 0,
            alpha0: 1.0,
            oracle_tolerances: OracleTolerances::default(),
        }
    }
}

/// Failure classes and their exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    InputError,
    NotConverged,
    ValidationFailed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::InputError => 1,
            Status::NotConverged => 2,
            Status::ValidationFailed => 3,
        }
    }
}

/// Result of a completed run: the status and a one-line reason when it is
/// not `Ok`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: Status,
    pub message: Option<String>,
    pub output_dir: PathBuf,
}

/// Loads the JSON file (or `{}`), applies overrides, and deserializes.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text)?
        }
        None => json!({}),
    };
    if !value.is_object() {
        return Err(Error::InvalidConfig("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(serde_json::from_value(value)?)
}

/// Sets `a.b.c=value`; the value is parsed as JSON and taken as a string if
/// that fails.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{spec}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::InvalidConfig(format!("override key `{key}` is malformed")));
    }
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("override `{key}` descends into a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| json!({}));
        if node.is_null() {
            *node = json!({});
        }
    }
    Ok(())
}

impl RunConfig {
    /// Reconciles the positional mode with the config and checks all
    /// mode-specific fields.
    pub fn resolve(mut self, mode: Mode) -> Result<Self> {
        if let Some(m) = self.mode {
            if m != mode {
                return Err(Error::InvalidConfig(format!(
                    "config mode {m:?} disagrees with command-line mode {mode:?}"
                )));
            }
        }
        self.mode = Some(mode);
        let needs_tau = mode != Mode::OracleCheck;
        let needs_input = matches!(mode, Mode::Step | Mode::Flow | Mode::RadialStep | Mode::RadialFlow);
        let needs_horizon = matches!(mode, Mode::Flow | Mode::RadialFlow);
        let needs_radial = matches!(mode, Mode::RadialStep | Mode::RadialFlow);
        let needs_grid = matches!(mode, Mode::ValidateUniform | Mode::ValidateHat);
        if needs_tau {
            self.jko_config()?.validate()?;
        }
        if needs_input {
            let p = self.io.input_path.as_ref().ok_or_else(|| missing("io.input_path", mode))?;
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!("input {} is not a readable file", p.display())));
            }
        }
        if needs_horizon {
            let h = self.horizon.ok_or_else(|| missing("horizon", mode))?;
            crate::flow::step_count(h, self.tau.expect("checked"))?;
        }
        if needs_radial {
            let r = self.radial.ok_or_else(|| missing("radial", mode))?;
            if r.dimension == 0 {
                return Err(Error::InvalidConfig("radial.dimension must be at least 1".into()));
            }
        }
        if needs_grid {
            let g = self.grid.ok_or_else(|| missing("grid", mode))?;
            GridSpec::new(g.left, g.right, g.n_cells)?;
        }
        if mode == Mode::ValidateUniform && !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if mode == Mode::ValidateHat {
            let beta = hat_beta_of_tau(self.tau.expect("checked"))?;
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::InvalidConfig(format!("tau gives plateau half-width {beta} outside (0, 1)")));
            }
        }
        let t = &self.oracle_tolerances;
        if [t.quadrature, t.assignment, t.prox, t.gradient].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidConfig("oracle tolerances must be nonnegative".into()));
        }
        if self.io.output_dir.is_none() {
            let env = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty());
            self.io.output_dir = Some(env.map(PathBuf::from).ok_or_else(|| {
                Error::InvalidConfig(format!("no output directory: set io.output_dir or {OUTPUT_DIR_ENV}"))
            })?);
        }
        Ok(self)
    }

    pub fn jko_config(&self) -> Result<JkoConfig> {
        let tau = self
            .tau
            .ok_or_else(|| Error::InvalidConfig("missing field `tau`".into()))?;
        let cfg = JkoConfig {
            tau,
            entropy_h: self.entropy_h,
            max_outer_iter: self.solver.max_outer_iter,
            el_tolerance: self.solver.el_tolerance,
            step_rule: self.solver.step_rule,
            min_density_floor: self.solver.min_density_floor,
            accelerate: self.solver.accelerate,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn missing(field: &str, mode: Mode) -> Error {
    Error::InvalidConfig(format!("mode {mode:?} requires `{field}`"))
}

/// Runs a resolved configuration. Errors are input errors (exit 1); solver
/// and validation failures come back as a non-`Ok` status with outputs
/// written.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let mode = config.mode.ok_or_else(|| Error::InvalidConfig("mode not resolved".into()))?;
    let dir = config
        .io
        .output_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("output directory not resolved".into()))?;
    fs::create_dir_all(&dir)?;
    let out = Outputs { dir: dir.clone(), files: Vec::new() };
    let (status, message, metrics, files) = match mode {
        Mode::Step => run_step(config, out)?,
        Mode::Flow => run_flow_mode(config, out)?,
        Mode::RadialStep => run_radial_step(config, out)?,
        Mode::RadialFlow => run_radial_flow(config, out)?,
        Mode::ValidateUniform => run_validate_uniform(config, out)?,
        Mode::ValidateHat => run_validate_hat(config, out)?,
        Mode::OracleCheck => run_oracle_check(config, out)?,
    };
    let manifest = json!({
        "tool": "tvjko",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": mode,
        "config": config,
        "effective_solver": config.tau.map(|_| config.jko_config()).transpose()?,
        "status": status,
        "exit_code": status.exit_code(),
        "message": message,
        "metrics": metrics,
        "outputs": files,
    });
    let mut w = BufWriter::new(File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(RunOutcome {
        status,
        message,
        output_dir: dir,
    })
}

type ModeResult = Result<(Status, Option<String>, Value, Vec<String>)>;

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn read_input(config: &RunConfig) -> Result<GridDensity> {
    let p = config.io.input_path.as_ref().expect("resolved");
    let rho = read_density_file(p)?;
    if let Some(g) = config.grid {
        let expect = GridSpec::new(g.left, g.right, g.n_cells)?;
        if expect.n_cells != rho.len()
            || (expect.left - rho.grid().left).abs() > 1e-9 * expect.width()
            || (expect.right - rho.grid().right).abs() > 1e-9 * expect.width()
        {
            return Err(Error::InvalidInput(format!(
                "input grid [{}, {}] x {} differs from the configured grid",
                rho.grid().left,
                rho.grid().right,
                rho.len()
            )));
        }
    }
    Ok(rho)
}

fn read_radial_input(config: &RunConfig) -> Result<RadialDensity> {
    let p = config.io.input_path.as_ref().expect("resolved");
    let r = config.radial.expect("resolved");
    let rho = RadialDensity::read_csv(r.dimension, BufReader::new(File::open(p)?))?;
    if let Some(radius) = r.radius {
        if (radius - rho.radius()).abs() > 1e-9 * radius.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "input radius {} differs from radial.radius {radius}",
                rho.radius()
            )));
        }
    }
    Ok(rho)
}

fn convergence(converged: bool, iterations: usize, gap: f64) -> (Status, Option<String>) {
    if converged {
        (Status::Ok, None)
    } else {
        (
            Status::NotConverged,
            Some(format!("solver did not converge after {iterations} iterations (optimality gap {gap:.3e})")),
        )
    }
}

fn run_step(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let rho0 = read_input(config)?;
    let cfg = config.jko_config()?;
    let r = jko_step(&rho0, &cfg)?;
    let grid = *r.rho1.grid();
    out.write("rho1.csv", |w| write_density(&r.rho1, w))?;
    out.write("transport.csv", |w| r.transport.write_csv(&grid.centers(), w))?;
    out.write("certificate_z.csv", |w| r.certificate.write_z_csv(&grid.edges(), w))?;
    out.write("certificate_cells.csv", |w| r.certificate.write_cells_csv(&grid.centers(), w))?;
    let c = &r.certificate;
    let (status, message) = convergence(r.converged, r.iterations_used, c.optimality_gap());
    let metrics = json!({
        "energy": r.energy,
        "w2_squared": r.transport.w2_squared,
        "total_variation": r.total_variation,
        "entropy": r.entropy,
        "iterations": r.iterations_used,
        "converged": r.converged,
        "optimality_gap": c.optimality_gap(),
        "max_abs_z": c.max_abs_z,
        "el_residual": c.residual_el,
        "complementarity": c.complementarity,
        "jump_alignment": c.jump_alignment,
        "min_rho": r.rho1.min(),
        "max_rho": r.rho1.max(),
    });
    Ok((status, message, metrics, out.files))
}

fn run_flow_mode(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let rho0 = read_input(config)?;
    let cfg = config.jko_config()?;
    let horizon = config.horizon.expect("resolved");
    let traj = run_flow(&rho0, cfg.tau, horizon, &cfg)?;
    out.write("trajectory.csv", |w| traj.write_trajectory_csv(w))?;
    out.write("diagnostics.csv", |w| traj.write_diagnostics_csv(w))?;
    let g = rho0.grid();
    let residual = if traj.completed() {
        Some(weak_solution_residual(&traj, &builtin_family(horizon, g.left, g.right))?)
    } else {
        None
    };
    let (status, message) = match &traj.failure {
        None => (Status::Ok, None),
        Some(f) => (Status::NotConverged, Some(f.clone())),
    };
    let metrics = json!({
        "steps": traj.steps.len(),
        "sum_w2sq": traj.sum_w2sq,
        "initial_tv": rho0.total_variation(),
        "final_tv": traj.densities.last().map(|d| d.total_variation()),
        "h1_div_z_integral": traj.h1_div_z_integral,
        "weak_residual": residual,
        "total_iterations": traj.steps.iter().map(|s| s.iterations).sum::<usize>(),
    });
    Ok((status, message, metrics, out.files))
}

fn write_radial_certificate(d: &RadialStepDiagnostics, grid: &GridSpec, w: &mut BufWriter<File>) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["r_interface", "z"])?;
    for (r, z) in grid.edges().iter().zip(&d.certificate.z_values) {
        c.write_record([fmt(*r), fmt(*z)])?;
    }
    c.flush()?;
    Ok(())
}

fn radial_metrics(d: &RadialStepDiagnostics) -> Value {
    json!({
        "energy": d.energy,
        "w2_squared": d.w2_squared,
        "total_variation": d.total_variation,
        "flux_lipschitz": d.flux_lipschitz,
        "iterations": d.iterations_used,
        "converged": d.converged,
        "optimality_gap": d.certificate.optimality_gap(),
        "max_abs_z": d.certificate.max_abs_z,
        "el_residual": d.certificate.residual_el,
        "complementarity": d.certificate.complementarity,
        "jump_alignment": d.certificate.jump_alignment,
    })
}

fn run_radial_step(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let rho0 = read_radial_input(config)?;
    let cfg = config.jko_config()?;
    let (rho1, d) = radial_jko_step(&rho0, &cfg)?;
    out.write("rho1.csv", |w| rho1.write_csv(w))?;
    out.write("certificate_z.csv", |w| write_radial_certificate(&d, rho1.grid(), w))?;
    let (status, message) = convergence(d.converged, d.iterations_used, d.certificate.optimality_gap());
    let mut metrics = radial_metrics(&d);
    metrics["min_rho"] = json!(rho1.min());
    metrics["max_rho"] = json!(rho1.max());
    Ok((status, message, metrics, out.files))
}

fn run_radial_flow(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let rho0 = read_radial_input(config)?;
    let cfg = config.jko_config()?;
    let (densities, diags, completed) = radial_flow(&rho0, config.horizon.expect("resolved"), &cfg)?;
    out.write("trajectory.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["k", "t", "r", "rho"])?;
        for (k, d) in densities.iter().enumerate() {
            let t = fmt(k as f64 * cfg.tau);
            for (r, v) in d.grid().centers().iter().zip(d.values()) {
                c.write_record([k.to_string(), t.clone(), fmt(*r), fmt(*v)])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    out.write("diagnostics.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "k",
            "t",
            "w2sq_step",
            "tv",
            "energy",
            "min_rho",
            "max_rho",
            "max_abs_z",
            "el_residual",
            "complementarity",
            "flux_lipschitz",
        ])?;
        for (k, d) in diags.iter().enumerate() {
            let rho = &densities[k + 1];
            c.write_record([
                (k + 1).to_string(),
                fmt((k + 1) as f64 * cfg.tau),
                fmt(d.w2_squared),
                fmt(d.total_variation),
                fmt(d.energy),
                fmt(rho.min()),
                fmt(rho.max()),
                fmt(d.certificate.max_abs_z),
                fmt(d.certificate.residual_el),
                fmt(d.certificate.complementarity),
                fmt(d.flux_lipschitz),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let (status, message) = if completed {
        (Status::Ok, None)
    } else {
        let d = diags.last().expect("a failed step exists");
        let (s, m) = convergence(false, d.iterations_used, d.certificate.optimality_gap());
        (s, m.map(|m| format!("step {}: {m}", diags.len())))
    };
    let metrics = json!({
        "steps": diags.len(),
        "sum_w2sq": diags.iter().map(|d| d.w2_squared).sum::<f64>(),
        "initial_tv": rho0.weighted_total_variation(),
        "final_tv": densities.last().map(|d| d.weighted_total_variation()),
        "total_iterations": diags.iter().map(|d| d.iterations_used).sum::<usize>(),
    });
    Ok((status, message, metrics, out.files))
}

/// One row of `validation.csv`.
#[derive(Debug, Clone, Serialize)]
struct Check {
    check: &'static str,
    value: f64,
    reference: f64,
    deviation: f64,
    tolerance: f64,
    passed: bool,
}

impl Check {
    fn new(check: &'static str, value: f64, reference: f64, deviation: f64, tolerance: f64) -> Self {
        Self {
            check,
            value,
            reference,
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

fn write_checks(checks: &[Check], w: &mut BufWriter<File>) -> Result<()> {
    let mut c = csv::Writer::from_writer(w);
    c.write_record(["check", "value", "reference", "deviation", "tolerance", "verdict"])?;
    for k in checks {
        c.write_record([
            k.check.to_string(),
            fmt(k.value),
            fmt(k.reference),
            fmt(k.deviation),
            fmt(k.tolerance),
            if k.passed { "pass" } else { "fail" }.to_string(),
        ])?;
    }
    c.flush()?;
    Ok(())
}

fn grid_of(config: &RunConfig) -> Result<GridSpec> {
    let g = config.grid.expect("resolved");
    GridSpec::new(g.left, g.right, g.n_cells)
}

fn validation_status(converged: bool, iterations: usize, gap: f64, checks: &[Check]) -> (Status, Option<String>) {
    let (status, message) = convergence(converged, iterations, gap);
    if status != Status::Ok {
        return (status, message);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.check).collect();
    if failed.is_empty() {
        (Status::Ok, None)
    } else {
        (Status::ValidationFailed, Some(format!("checks out of tolerance: {}", failed.join(", "))))
    }
}

fn run_validate_uniform(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let grid = grid_of(config)?;
    let cfg = config.jko_config()?;
    let pair = AnalyticPair::new(AnalyticKind::Uniform {
        alpha0: config.alpha0,
        tau: cfg.tau,
    })?;
    let (rho0, exact) = pair.densities(grid)?;
    let r = jko_step(&rho0, &cfg)?;
    let dx = grid.dx();
    let l1 = pair.l1_error(&r.rho1);
    let alpha_height = 1.0 / (2.0 * r.rho1.max());
    let checks = vec![
        Check::new("l1_error", l1, 0.0, l1, UNIFORM_L1_CELLS * dx),
        Check::new(
            "alpha1_from_height",
            alpha_height,
            pair.alpha1,
            (alpha_height - pair.alpha1).abs(),
            UNIFORM_L1_CELLS * dx,
        ),
    ];
    out.write("rho1.csv", |w| write_density(&r.rho1, w))?;
    out.write("analytic.csv", |w| write_density(&exact, w))?;
    out.write("validation.csv", |w| write_checks(&checks, w))?;
    let (status, message) =
        validation_status(r.converged, r.iterations_used, r.certificate.optimality_gap(), &checks);
    let metrics = json!({
        "alpha1_reference": pair.alpha1,
        "checks": checks,
        "iterations": r.iterations_used,
        "converged": r.converged,
        "optimality_gap": r.certificate.optimality_gap(),
    });
    Ok((status, message, metrics, out.files))
}

fn run_validate_hat(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let grid = grid_of(config)?;
    let cfg = config.jko_config()?;
    let beta = hat_beta_of_tau(cfg.tau)?;
    let pair = AnalyticPair::new(AnalyticKind::HatStep { beta })?;
    let (rho0, exact) = pair.densities(grid)?;
    let r = jko_step(&rho0, &cfg)?;
    let dx = grid.dx();
    let v = r.rho1.values();
    let n = v.len();
    let plateau_ref = 1.0 - beta / 2.0;
    let centre = (0..n)
        .min_by(|&a, &b| grid.center(a).abs().total_cmp(&grid.center(b).abs()))
        .expect("nonempty");
    let plateau = v[centre];
    // the plateau edge is the largest drop on the right half
    let jump = (centre + 1..n)
        .max_by(|&a, &b| (v[a - 1] - v[a]).total_cmp(&(v[b - 1] - v[b])))
        .expect("right half nonempty");
    let x_jump = grid.edge(jump);
    let z_jump = r.certificate.z_values[jump];
    let checks = vec![
        Check::new(
            "plateau_height",
            plateau,
            plateau_ref,
            (plateau - plateau_ref).abs() / plateau_ref,
            HAT_PLATEAU_REL,
        ),
        Check::new("jump_location", x_jump, beta, (x_jump - beta).abs(), HAT_JUMP_CELLS * dx),
        Check::new("z_at_jump", z_jump, 1.0, (z_jump - 1.0).abs(), HAT_Z_TOL),
    ];
    out.write("rho1.csv", |w| write_density(&r.rho1, w))?;
    out.write("analytic.csv", |w| write_density(&exact, w))?;
    out.write("certificate_z.csv", |w| r.certificate.write_z_csv(&grid.edges(), w))?;
    out.write("validation.csv", |w| write_checks(&checks, w))?;
    let (status, message) =
        validation_status(r.converged, r.iterations_used, r.certificate.optimality_gap(), &checks);
    let metrics = json!({
        "beta": beta,
        "plateau_reference": plateau_ref,
        "l1_error": pair.l1_error(&r.rho1),
        "checks": checks,
        "iterations": r.iterations_used,
        "converged": r.converged,
        "optimality_gap": r.certificate.optimality_gap(),
    });
    Ok((status, message, metrics, out.files))
}

fn run_oracle_check(config: &RunConfig, mut out: Outputs) -> ModeResult {
    let reports = run_oracles(config.seed, &config.oracle_tolerances)?;
    out.write("oracle_report.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["oracle", "instances", "max_deviation", "tolerance", "verdict"])?;
        for r in &reports {
            c.write_record([
                r.oracle.to_string(),
                r.instances.to_string(),
                fmt(r.max_deviation),
                fmt(r.tolerance),
                if r.passed { "pass" } else { "fail" }.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.oracle).collect();
    let (status, message) = if failed.is_empty() {
        (Status::Ok, None)
    } else {
        (Status::ValidationFailed, Some(format!("oracle mismatch: {}", failed.join(", "))))
    };
    Ok((status, message, json!({ "oracles": reports }), out.files))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_set_nested_fields() {
        let mut v = json!({"solver": {"el_tolerance": 1e-6}});
        apply_override(&mut v, "solver.el_tolerance=1e-8").unwrap();
        apply_override(&mut v, "io.output_dir=out/run").unwrap();
        apply_override(&mut v, "grid={\"left\":0,\"right\":1,\"n_cells\":8}").unwrap();
        assert_eq!(v["solver"]["el_tolerance"], json!(1e-8));
        assert_eq!(v["io"]["output_dir"], json!("out/run"));
        assert_eq!(v["grid"]["n_cells"], json!(8));
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "solver..x=1").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let v = json!({"tau": 0.1, "tua": 0.1});
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
        let v = json!({"solver": {"max_iter": 3}});
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn mode_specific_fields_are_required() {
        let c = RunConfig {
            tau: Some(0.1),
            io: IoConfig {
                input_path: None,
                output_dir: Some("x".into()),
            },
            ..RunConfig::default()
        };
        let err = c.clone().resolve(Mode::Step).unwrap_err().to_string();
        assert!(err.contains("io.input_path"), "{err}");
        let err = c.clone().resolve(Mode::ValidateHat).unwrap_err().to_string();
        assert!(err.contains("grid"), "{err}");
        let mut m = c.clone();
        m.mode = Some(Mode::Flow);
        assert!(m.resolve(Mode::Step).is_err());
        assert!(c.resolve(Mode::OracleCheck).is_ok());
    }
}
