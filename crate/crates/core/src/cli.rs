//! Command-line front end.
//!
//! Every command reads a [`RunConfig`] from `--config`, writes its tables to
//! `--out` and finishes with a `manifest.json`. Failures print
//! `{"error":{"code","message"}}` to stderr, mirror it into `error.json`
//! and exit nonzero.
//!
//! Environment overrides: `OPTSWITCH_SEED` and `OPTSWITCH_WORKERS`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bsde::{self, BsdeOptions};
use crate::error::{Error, Result};
use crate::grid::{self, TimeGrid};
use crate::model::{self, Mode, ModelSpec};
use crate::oracle::{self, EnumerationBudget};
use crate::rbsde::{self, ReflectedOptions, Reflection};
use crate::scene::{AdaptedProcess, ConditionalExpectation, Scene};
use crate::snell;
use crate::switching::{self, GainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Lattice,
    Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub scene: SceneKind,
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Explicit horizon; otherwise the smallest `T` whose tail bound is
    /// below `tail_tol`.
    pub horizon: Option<f64>,
    pub tail_tol: f64,
    pub picard_tol: f64,
    /// Region and complementarity tolerance; defaults depend on the scene.
    pub region_tol: Option<f64>,
    pub regression_degree: usize,
    pub probes: usize,
    pub penalties: Vec<f64>,
    /// Linear decay `lambda` in the `solve-bsde` driver `f - lambda y`.
    pub decay: f64,
    /// `epsilon` for the K-integral ceiling; defaults to `0.05`, halved
    /// into range when that exceeds `1 / (6 e^{1/beta})`.
    pub epsilon: Option<f64>,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            scene: SceneKind::Lattice,
            steps: 200,
            n_paths: 2000,
            seed: 0,
            horizon: None,
            tail_tol: 1e-4,
            picard_tol: 1e-13,
            region_tol: None,
            regression_degree: crate::scene::DEFAULT_DEGREE,
            probes: 256,
            penalties: vec![10.0, 100.0],
            decay: 0.0,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySettings {
    pub max_steps: usize,
    pub max_switches: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            max_steps: 8,
            max_switches: oracle::MAX_SWITCHES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: ModelSpec,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub verify: VerifySettings,
}

impl RunConfig {
    pub fn new(spec: ModelSpec) -> Self {
        RunConfig {
            spec,
            numerics: Numerics::default(),
            verify: VerifySettings::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        let n = &self.numerics;
        if n.steps < 2 {
            return Err(Error::Config(format!("numerics.steps must be >= 2, got {}", n.steps)));
        }
        if n.n_paths == 0 || n.probes == 0 {
            return Err(Error::Config(
                "numerics.n_paths and numerics.probes must be >= 1".into(),
            ));
        }
        let tolerances = [
            ("tail_tol", Some(n.tail_tol)),
            ("picard_tol", Some(n.picard_tol)),
            ("region_tol", n.region_tol),
            ("epsilon", n.epsilon),
        ];
        for (name, value) in tolerances {
            if let Some(v) = value {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("numerics.{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(t) = n.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("numerics.horizon must be positive, got {t}")));
            }
        }
        if !(n.decay >= 0.0 && n.decay.is_finite()) {
            return Err(Error::Config(format!(
                "numerics.decay must be nonnegative, got {}",
                n.decay
            )));
        }
        if n.penalties.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Config("numerics.penalties must be positive".into()));
        }
        if n.penalties.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("numerics.penalties must be strictly increasing".into()));
        }
        EnumerationBudget::new(self.verify.max_steps, self.verify.max_switches)?;
        if self.verify.max_steps < 2 {
            return Err(Error::Config("verify.max_steps must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Subcommand)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Check the model hypotheses by sampling.
    Validate,
    /// Export the simulated paths or the lattice states.
    Simulate,
    /// Stay-forever values of each technology.
    SolveBsde,
    /// Reflected difference process with direct and penalized reflection.
    SolveRbsde,
    /// Switching values, switch boundaries and the optimal strategy.
    SolveSwitching,
    /// Cross-check the solvers against brute-force oracles on a shrunk lattice.
    Verify,
    /// Tail constant, truncation horizon and reflection-cost ceiling.
    Constants,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::SolveBsde => "solve-bsde",
            Command::SolveRbsde => "solve-rbsde",
            Command::SolveSwitching => "solve-switching",
            Command::Verify => "verify",
            Command::Constants => "constants",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "optswitch", version, about = "Two-mode optimal switching solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides `numerics.seed`.
    #[arg(long, global = true, env = "OPTSWITCH_SEED")]
    pub seed: Option<u64>,
    /// Thread count; results do not depend on it.
    #[arg(long, global = true, env = "OPTSWITCH_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub config: RunConfig,
    pub seed: u64,
    pub workers: usize,
    pub format: Format,
    pub version: &'static str,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub summary: Value,
}

/// Options that shape a run but not its results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub format: Format,
}

/// Runs one command and writes its outputs plus `manifest.json` into `out`.
pub fn run(
    command: Command,
    config: &RunConfig,
    config_path: Option<&Path>,
    out: &Path,
    options: RunOptions,
) -> Result<Manifest> {
    config.check()?;
    fs::create_dir_all(out)?;
    let started = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = options.workers {
        if w == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let workers = pool.current_num_threads();
    let mut sink = Sink {
        dir: out.to_path_buf(),
        format: options.format,
        written: Vec::new(),
    };
    let summary = pool.install(|| dispatch(command, config, &mut sink))?;
    let manifest = Manifest {
        command,
        config_path: config_path.map(Path::to_path_buf),
        config: config.clone(),
        seed: config.numerics.seed,
        workers,
        format: options.format,
        version: env!("CARGO_PKG_VERSION"),
        outputs: sink.written,
        wall_time_s: started.elapsed().as_secs_f64(),
        summary,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Parses `args`, runs the command and reports failures; returns the exit code.
pub fn run_from_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                ErrorKind::InvalidSubcommand => {
                    let name = e
                        .get(clap::error::ContextKind::InvalidSubcommand)
                        .map(|v| v.to_string())
                        .unwrap_or_default();
                    return report(&Error::UnknownCommand(name), None);
                }
                _ => return report(&Error::Usage(e.to_string().trim().to_string()), None),
            }
        }
    };
    match execute(&cli) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => report(&e, Some(&cli.out)),
    }
}

pub fn main_from_env() -> ExitCode {
    run_from_args(std::env::args_os())
}

fn execute(cli: &Cli) -> Result<Manifest> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("--config PATH is required".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.numerics.seed = seed;
    }
    let options = RunOptions {
        workers: cli.workers,
        format: cli.format,
    };
    run(cli.command, &config, Some(path), &cli.out, options)
}

/// The machine-readable error document.
pub fn error_json(e: &Error) -> Value {
    json!({ "error": { "code": e.code(), "message": e.to_string() } })
}

fn report(e: &Error, out: Option<&Path>) -> ExitCode {
    let doc = error_json(e).to_string();
    eprintln!("{doc}");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), &doc);
        }
    }
    ExitCode::FAILURE
}

struct Sink {
    dir: PathBuf,
    format: Format,
    written: Vec<String>,
}

impl Sink {
    /// Stores a CSV table under `stem`, converting it to JSON records when
    /// requested.
    fn table(&mut self, stem: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut bytes = Vec::new();
        fill(&mut bytes)?;
        let name = match self.format {
            Format::Csv => {
                let name = format!("{stem}.csv");
                fs::write(self.dir.join(&name), &bytes)?;
                name
            }
            Format::Json => {
                let name = format!("{stem}.json");
                fs::write(
                    self.dir.join(&name),
                    serde_json::to_string_pretty(&csv_to_records(&bytes)?)?,
                )?;
                name
            }
        };
        self.written.push(name);
        Ok(())
    }
}

fn csv_to_records(bytes: &[u8]) -> Result<Value> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader.headers()?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: serde_json::Map<String, Value> = headers
            .iter()
            .zip(record.iter())
            .map(|(h, cell)| (h.to_string(), cell_value(cell)))
            .collect();
        rows.push(Value::Object(row));
    }
    Ok(Value::Array(rows))
}

fn cell_value(cell: &str) -> Value {
    if cell.is_empty() {
        return Value::Null;
    }
    if let Ok(i) = cell.parse::<i64>() {
        return Value::from(i);
    }
    match cell.parse::<f64>() {
        Ok(x) if x.is_finite() => Value::from(x),
        _ => Value::from(cell),
    }
}

fn write_rows<W: std::io::Write>(out: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn dispatch(command: Command, config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    match command {
        Command::Validate => validate(config, sink),
        Command::Constants => constants(config, sink),
        _ => {
            require_valid(config)?;
            match command {
                Command::Simulate => simulate(config, sink),
                Command::SolveBsde => solve_bsde(config, sink),
                Command::SolveRbsde => solve_rbsde(config, sink),
                Command::SolveSwitching => solve_switching(config, sink),
                Command::Verify => verify(config, sink),
                Command::Validate | Command::Constants => unreachable!(),
            }
        }
    }
}

fn require_valid(config: &RunConfig) -> Result<()> {
    let report = model::validate_spec(&config.spec, config.numerics.probes, config.numerics.seed)?;
    if report.ok {
        return Ok(());
    }
    Err(Error::Validation(violated(&report)))
}

fn violated(report: &model::ValidationReport) -> String {
    let mut names: Vec<&str> = report.violations.iter().map(|v| v.hypothesis.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names.join(", ")
}

/// Horizon of the run: explicit, or long enough that the tail is below
/// `tail_tol`.
pub fn horizon(config: &RunConfig, lipschitz_c: f64) -> Result<f64> {
    if let Some(t) = config.numerics.horizon {
        return Ok(t);
    }
    let t = bsde::truncation_horizon(&config.spec, lipschitz_c, config.numerics.tail_tol)?.horizon;
    if t > 0.0 {
        Ok(t)
    } else {
        Err(Error::Config(
            "tail tolerance exceeds the tail constant; set numerics.horizon".into(),
        ))
    }
}

/// The scene described by the numerics section over `grid`.
pub fn build_scene(config: &RunConfig, grid: &TimeGrid) -> Result<Scene> {
    let n = &config.numerics;
    Ok(match n.scene {
        SceneKind::Lattice => grid::build_tree(&config.spec, grid)?.into(),
        SceneKind::Paths => grid::simulate_paths(&config.spec, grid, n.n_paths, n.seed)?.into(),
    })
}

fn expectation(config: &RunConfig, scene: &Scene) -> Result<ConditionalExpectation> {
    ConditionalExpectation::with_degree(scene, config.numerics.regression_degree)
}

fn region_tol(config: &RunConfig, scene: &Scene) -> f64 {
    config
        .numerics
        .region_tol
        .unwrap_or_else(|| switching::default_region_tol(scene))
}

fn validate(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let n = &config.numerics;
    let report = model::validate_spec(&config.spec, n.probes, n.seed)?;
    sink.table("validation", |buf| {
        write_rows(
            buf,
            &["hypothesis", "mode", "point", "measured"],
            report.violations.iter().map(|v| {
                vec![
                    v.hypothesis.clone(),
                    v.mode.map(|m| m.to_string()).unwrap_or_default(),
                    opt(v.point),
                    v.measured.to_string(),
                ]
            }),
        )
    })?;
    fs::write(sink.dir.join("validation.json"), serde_json::to_string_pretty(&report)?)?;
    sink.written.push("validation.json".into());
    if !report.ok {
        return Err(Error::Validation(violated(&report)));
    }
    Ok(json!({ "ok": true, "analytic_K": config.spec.analytic_k() }))
}

fn simulate(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let grid = TimeGrid::new(horizon(config, 0.0)?, config.numerics.steps)?;
    let scene = build_scene(config, &grid)?;
    match &scene {
        Scene::Lattice(tree) => sink.table("lattice", |buf| tree.write_csv(buf))?,
        Scene::Paths(batch) => sink.table("paths", |buf| batch.write_csv(buf))?,
    }
    Ok(json!({ "horizon": grid.horizon(), "steps": grid.steps(), "lattice": scene.is_lattice() }))
}

fn solve_bsde(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let spec = &config.spec;
    let decay = config.numerics.decay;
    let grid = TimeGrid::new(horizon(config, decay)?, config.numerics.steps)?;
    let scene = build_scene(config, &grid)?;
    let ce = expectation(config, &scene)?;
    let mut options = BsdeOptions::new(spec.beta);
    options.tol = config.numerics.picard_tol;
    let terminal = vec![0.0; scene.width(grid.steps())];
    let constant = bsde::tail_constant(spec.bound_f, spec.beta, decay)?;
    let mut solutions = Vec::new();
    for mode in Mode::BOTH {
        let profit = switching::profit_process(spec, &scene, mode)?;
        let driver = bsde::driver_fn(decay, |k, i, y| profit.at(k, i) - decay * y);
        solutions.push(bsde::solve_bsde_finite(&driver, &terminal, &ce, &options)?);
    }
    sink.table("bsde", |buf| {
        crate::scene::write_columns(
            buf,
            &scene,
            &[
                ("Y_old", &solutions[0].y),
                ("Y_new", &solutions[1].y),
                ("Z_old", &solutions[0].z),
                ("Z_new", &solutions[1].z),
            ],
        )
    })?;
    let summary: Vec<Value> = Mode::BOTH
        .iter()
        .zip(&solutions)
        .map(|(m, s)| {
            let slack = bsde::tail_bound_slack(s, constant, spec.beta);
            json!({
                "mode": m.index(),
                "value": s.value(),
                "residual": s.residual,
                "picard_iters": s.picard_iters,
                "tail_bound_violation": slack.max_violation,
            })
        })
        .collect();
    Ok(json!({ "horizon": grid.horizon(), "tail_constant": constant, "modes": summary }))
}

fn solve_rbsde(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let spec = &config.spec;
    let grid = TimeGrid::new(horizon(config, 0.0)?, config.numerics.steps)?;
    let scene = build_scene(config, &grid)?;
    let ce = expectation(config, &scene)?;
    let system = system_parts(spec, &scene)?;
    let mut options = ReflectedOptions::new(spec.beta);
    options.tol = config.numerics.picard_tol;
    let direct = rbsde::solve_rbsde_double(
        &system.driver,
        &system.lower,
        &system.upper,
        &system.terminal,
        &ce,
        Reflection::Direct,
        &options,
    )?;
    sink.table("rbsde", |buf| direct.write_csv(buf))?;

    let mut summary = json!({
        "horizon": grid.horizon(),
        "value": direct.value(),
        "comp_residual_plus": direct.comp_residual_plus,
        "comp_residual_minus": direct.comp_residual_minus,
    });
    if let Some(&largest) = config.numerics.penalties.last() {
        let fine = rbsde::refine_for_penalty(&grid, largest)?;
        let fine_scene = build_scene(config, &fine)?;
        let fine_ce = expectation(config, &fine_scene)?;
        let parts = system_parts(spec, &fine_scene)?;
        let (reference, rungs) = rbsde::penalization_schedule(
            &parts.driver,
            &parts.lower,
            Some(&parts.upper),
            &parts.terminal,
            &fine_ce,
            &config.numerics.penalties,
            &options,
        )?;
        let mut bounds = Vec::with_capacity(rungs.len());
        for rung in &rungs {
            bounds.push(rbsde::penalization_bound_check(spec, &fine_ce, rung.n)?.slack);
        }
        sink.table("penalization", |buf| {
            write_rows(
                buf,
                &["n", "steps", "value", "sup_error", "comp_residual", "bound_slack"],
                rungs.iter().zip(&bounds).map(|(r, b)| {
                    vec![
                        r.n.to_string(),
                        fine.steps().to_string(),
                        r.value.to_string(),
                        r.sup_error.to_string(),
                        r.comp_residual.to_string(),
                        b.to_string(),
                    ]
                }),
            )
        })?;
        summary["penalization_steps"] = json!(fine.steps());
        summary["penalization_reference_value"] = json!(reference.value());
    }
    Ok(summary)
}

struct SystemParts {
    driver: AdaptedProcess,
    lower: AdaptedProcess,
    upper: AdaptedProcess,
    terminal: Vec<f64>,
}

/// Driver `f0 - f1`, barriers `-c01 e^{-beta t}` and `c10 e^{-beta t}`, zero
/// terminal value.
fn system_parts(spec: &ModelSpec, scene: &Scene) -> Result<SystemParts> {
    let f0 = switching::profit_process(spec, scene, Mode::Old)?;
    let f1 = switching::profit_process(spec, scene, Mode::New)?;
    let (lower, upper) = switching::switching_barriers(spec, scene)?;
    Ok(SystemParts {
        driver: f0.zip_with(&f1, |a, b| a - b)?,
        lower,
        upper,
        terminal: vec![0.0; scene.width(scene.steps())],
    })
}

fn solve_switching(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let spec = &config.spec;
    let grid = TimeGrid::new(horizon(config, 0.0)?, config.numerics.steps)?;
    let scene = build_scene(config, &grid)?;
    let ce = expectation(config, &scene)?;
    let tol = region_tol(config, &scene);
    let sol = switching::solve_switching_with(spec, &ce, tol)?;
    sink.table("switching_values", |buf| sol.write_csv(buf))?;
    sink.table("switching_boundary", |buf| sol.write_boundary_csv(buf))?;

    let feedback = switching::evaluate_feedback_gain(&sol, &ce, GainOptions { include_tail: false })?;
    let mut summary = json!({
        "horizon": grid.horizon(),
        "steps": grid.steps(),
        "value_old": sol.value(Mode::Old),
        "value_new": sol.value(Mode::New),
        "region_tol": tol,
        "feedback_gain": feedback,
        "comp_residual_plus": sol.rbsde.comp_residual_plus,
        "comp_residual_minus": sol.rbsde.comp_residual_minus,
    });
    match scene.n_scenarios() {
        Ok(_) => {
            let strategy = switching::extract_strategy(&sol, tol)?;
            sink.table("switching_strategy", |buf| strategy.write_csv(buf, &scene))?;
            let gain = switching::evaluate_gain(spec, &strategy, &scene, GainOptions { include_tail: false })?;
            summary["strategy_gain"] = serde_json::to_value(gain)?;
            summary["strategy_empty"] = json!(strategy.is_empty());
            summary["admissibility"] = serde_json::to_value(switching::check_admissible(spec, &strategy, &scene)?)?;
        }
        Err(Error::BudgetExceeded { .. }) => {
            summary["strategy_table"] = json!("omitted: lattice too deep to enumerate trajectories");
        }
        Err(e) => return Err(e),
    }
    Ok(summary)
}

/// One row of `checks.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Check {
            name,
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

fn verify(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let spec = &config.spec;
    let t = horizon(config, 0.0)?;
    let full_grid = TimeGrid::new(t, config.numerics.steps)?;
    let full_scene = build_scene(config, &full_grid)?;
    let full = switching::solve_switching_with(
        spec,
        &expectation(config, &full_scene)?,
        region_tol(config, &full_scene),
    )?;

    let steps = config.numerics.steps.min(config.verify.max_steps);
    let budget = EnumerationBudget::new(steps, config.verify.max_switches)?;
    let grid = TimeGrid::new(t, steps)?;
    let scene: Scene = grid::build_tree(spec, &grid)?.into();
    let ce = ConditionalExpectation::new(&scene)?;
    let tol = switching::LATTICE_REGION_TOL;
    let sol = switching::solve_switching_with(spec, &ce, tol)?;
    let value = sol.value(Mode::Old);
    let mut checks = Vec::new();

    // Stopping problem: switch once, at the best time.
    let reward = sol.y2.zip_with(&sol.rbsde.lower, |y, l| y + l)?;
    let envelope = snell::snell_envelope_with(&reward, &ce)?;
    let stopping = oracle::enumerate_stopping_values(&reward, &budget)?;
    checks.push(Check::at_most(
        "snell_vs_oracle",
        (envelope.value() - stopping.value).abs(),
        1e-10,
    ));
    let rule = snell::first_optimal_time(&envelope, &reward, 0, snell::LATTICE_TOL)?;
    if let snell::StoppingRule::Lattice(region) = &rule {
        checks.push(Check::at_most(
            "stopping_rule_value",
            (region.value(&reward, &ce) - envelope.value()).abs(),
            1e-10,
        ));
    }

    let strategy = switching::extract_strategy(&sol, tol)?;
    let used = (0..strategy.n_scenarios())
        .map(|s| strategy.switches(s).len())
        .max()
        .unwrap_or(0);
    let gain = switching::evaluate_gain(spec, &strategy, &scene, GainOptions { include_tail: false })?;
    checks.push(Check::at_most(
        "strategy_attains_value",
        (gain.mean - value).abs(),
        1e-8,
    ));
    let feedback = switching::evaluate_feedback_gain(&sol, &ce, GainOptions { include_tail: false })?;
    checks.push(Check::at_most("feedback_attains_value", (feedback - value).abs(), 1e-8));
    let within_budget = used <= budget.max_switches();
    let switching_oracle = oracle::enumerate_switching_strategies(spec, &scene, &budget)?;
    if within_budget {
        checks.push(Check::at_most(
            "switching_vs_oracle",
            (value - switching_oracle.value).abs(),
            1e-8,
        ));
    } else {
        checks.push(Check::at_most(
            "oracle_below_value",
            (switching_oracle.value - value).max(0.0),
            1e-8,
        ));
    }
    let (c1, c2) = switching::coupled_obstacle_values(spec, &ce)?;
    checks.push(Check::at_most(
        "coupled_obstacles",
        c1.sup_distance(&sol.y1)?.max(c2.sup_distance(&sol.y2)?),
        1e-10,
    ));
    checks.push(Check::at_most(
        "complementarity",
        sol.rbsde.comp_residual_plus.max(sol.rbsde.comp_residual_minus),
        rbsde::LATTICE_COMPLEMENTARITY_TOL,
    ));
    let upper = sol.rbsde.upper.as_ref().expect("switching has two barriers");
    let below = bsde::ordering_report(&sol.rbsde.lower, &sol.ydiff)?.max_violation;
    let above = bsde::ordering_report(&sol.ydiff, upper)?.max_violation;
    checks.push(Check::at_most("barrier_sandwich", below.max(above), 1e-12));
    checks.push(Check {
        name: "regions_disjoint",
        measured: sol.regions.first_overlap().map_or(0.0, |_| 1.0),
        tolerance: 0.0,
        passed: sol.regions.first_overlap().is_none(),
    });
    let admissible = switching::check_admissible(spec, &strategy, &scene)?;
    checks.push(Check {
        name: "strategy_admissible",
        measured: admissible.expected_cost,
        tolerance: f64::INFINITY,
        passed: admissible.admissible,
    });

    let penalty_n = 10.0;
    let fine = rbsde::refine_for_penalty(&grid, penalty_n)?;
    let fine_scene: Scene = grid::build_tree(spec, &fine)?.into();
    let fine_ce = ConditionalExpectation::new(&fine_scene)?;
    let bound = rbsde::penalization_bound_check(spec, &fine_ce, penalty_n)?;
    checks.push(Check::at_most("penalty_bound", bound.slack, 1e-6));

    let constant = bsde::tail_constant(spec.bound_f, spec.beta, 0.0)?;
    let mut worst_tail = f64::NEG_INFINITY;
    for mode in Mode::BOTH {
        let profit = switching::profit_process(spec, &scene, mode)?;
        let stay = bsde::solve_bsde_finite(
            &profit,
            &vec![0.0; scene.width(steps)],
            &ce,
            &BsdeOptions::new(spec.beta),
        )?;
        worst_tail = worst_tail.max(bsde::tail_bound_slack(&stay, constant, spec.beta).max_violation);
    }
    checks.push(Check::at_most("tail_bound", worst_tail, 0.0));

    sink.table("checks", |buf| {
        write_rows(
            buf,
            &["check", "measured", "tolerance", "passed"],
            checks.iter().map(|c| {
                vec![
                    c.name.to_string(),
                    c.measured.to_string(),
                    c.tolerance.to_string(),
                    c.passed.to_string(),
                ]
            }),
        )
    })?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    let summary = json!({
        "all_passed": failed.is_empty(),
        "failed": failed,
        "full": { "steps": full_grid.steps(), "value_old": full.value(Mode::Old), "value_new": full.value(Mode::New) },
        "shrunk": {
            "steps": steps,
            "value_old": value,
            "oracle_value": switching_oracle.value,
            "oracle_states": switching_oracle.explored,
            "max_switches_used": used,
            "within_budget": within_budget,
        },
        "optimal_strategy_empty": strategy.is_empty(),
    });
    if failed.is_empty() {
        Ok(summary)
    } else {
        fs::write(
            sink.dir.join("verify_summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
        Err(Error::Precondition(format!(
            "verification failed: {}",
            failed.join(", ")
        )))
    }
}

/// `0.05`, or half the admissible ceiling `1 / (6 e^{1/beta})` if that is smaller.
pub fn default_epsilon(beta: f64) -> f64 {
    let ceiling = 1.0 / (6.0 * (1.0 / beta).exp());
    if 0.05 < ceiling {
        0.05
    } else {
        0.5 * ceiling
    }
}

fn constants(config: &RunConfig, sink: &mut Sink) -> Result<Value> {
    let spec = &config.spec;
    let decay = config.numerics.decay;
    let d = bsde::tail_constant(spec.bound_f, spec.beta, decay)?;
    let truncation = bsde::truncation_horizon(spec, decay, config.numerics.tail_tol)?;
    let epsilon = config.numerics.epsilon.unwrap_or_else(|| default_epsilon(spec.beta));
    // The lower switching barrier is negative, so sup (L^+)^2 vanishes.
    let ceiling = rbsde::k_integral_bound(spec.bound_f, spec.beta, spec.c10, 0.0, epsilon)?;
    let rows = [
        ("tail_constant", d),
        ("truncation_horizon", truncation.horizon),
        ("epsilon", epsilon),
        ("k_integral_ceiling", ceiling),
    ];
    sink.table("constants", |buf| {
        write_rows(
            buf,
            &["name", "value"],
            rows.iter().map(|(n, v)| vec![n.to_string(), v.to_string()]),
        )
    })?;
    Ok(json!({
        "tail_constant": d,
        "lipschitz_c": decay,
        "truncation_horizon": truncation.horizon,
        "epsilon": epsilon,
        "k_integral_ceiling": ceiling,
    }))
}
