//! Experiment configurations and their execution for the `formctrl` binary.
//!
//! Every command builds a [`Report`] envelope (schema version, tool version,
//! config echo, constants, seeds, timing) and writes it atomically.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use formctrl::certify::{
    certify_formlinear, certify_stability, check_resolvent_lipschitz, random_control, random_state, run_trials, summarize,
    GrowthChecker, StabilityCertificate,
};
use formctrl::controls::{derivative_l1, l1_distance, mollify, total_variation, ControlSchedule, MollifierParams, RampKind};
use formctrl::galerkin::{basis_state, summarize_sweep, synthesize_on, transfer_sweep, truncate, SynthesisParams};
use formctrl::models::{ModelKind, ModelSpec};
use formctrl::propagate::Evolver;
use formctrl::report::{derive_seed, write_atomic, Report};
use formctrl::system::FormLinearSystem;
use formctrl::{CMatrix, CVector, Complex64};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use formctrl::report::report_schema_version;

pub const THREADS_ENV: &str = "FORMCTRL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "formctrl", version, about = "Simulation and numerical certification of form-linear control systems")]
pub struct Cli {
    /// Machine-only output: the report JSON on stdout, nothing else.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a JSON experiment config (`{"command": "...", ...}`).
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    #[command(flatten)]
    Experiment(ExperimentConfig),
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    /// Write a model system to JSON.
    Model(ModelArgs),
    /// Evolve a state and record norms and populations on a time grid.
    Simulate(SimulateArgs),
    /// Emit stability certificates.
    Certify(CertifyArgs),
    /// L¹ distance and derivative budget along a mollification sequence.
    MollifyStudy(MollifyArgs),
    /// Synthesize on Galerkin truncations and replay in the ambient space.
    GalerkinSweep(SweepArgs),
    /// Budgeted piecewise-constant state transfer.
    Synthesize(SynthesizeArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    #[serde(default = "one")]
    pub channels: usize,
    #[arg(long, default_value_t = 1.0)]
    #[serde(default = "unit")]
    pub coupling: f64,
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long)]
    pub schedule: PathBuf,
    /// `basis:K` or a JSON file holding a vector.
    #[arg(long, default_value = "basis:0")]
    #[serde(default = "ground")]
    pub phi: String,
    #[arg(long)]
    #[serde(default)]
    pub psi: Option<String>,
    /// Number of grid intervals on `[0, T]`.
    #[arg(long, default_value_t = 100)]
    #[serde(default = "hundred")]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-10)]
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// CSV of the final unitary (`row,col,re,im`).
    #[arg(long)]
    #[serde(default)]
    pub unitary_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertifyKind {
    /// Resolvent Lipschitz bound on random control pairs.
    Resolvent,
    /// Plus/minus growth bounds for random states.
    Growth,
    /// Main stability bound for a schedule pair.
    Stability,
    /// Form-linear L¹ bound for a schedule pair.
    Formlinear,
}

impl fmt::Display for CertifyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("named").get_name())
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct CertifyArgs {
    #[arg(long, value_enum)]
    pub kind: CertifyKind,
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, num_args = 1..=2)]
    #[serde(default)]
    pub schedules: Vec<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub trials: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ramp {
    Quintic,
    Bump,
}

impl fmt::Display for Ramp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("named").get_name())
    }
}

impl From<Ramp> for RampKind {
    fn from(r: Ramp) -> Self {
        match r {
            Ramp::Quintic => RampKind::Quintic,
            Ramp::Bump => RampKind::Bump,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct MollifyArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub deltas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Ramp::Quintic)]
    #[serde(default = "quintic")]
    pub ramp: Ramp,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthesisFlags {
    #[arg(long, default_value_t = 1e-2)]
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// L¹ budget per channel.
    #[arg(long, default_value_t = 5.0)]
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[arg(long, default_value_t = 20.0)]
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[arg(long, default_value_t = 32)]
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[arg(long, default_value_t = 6000)]
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
}

impl SynthesisFlags {
    fn params(&self, seed: u64) -> SynthesisParams {
        SynthesisParams {
            epsilon: self.epsilon,
            l1_budget: self.budget,
            segments: self.segments,
            t_max: self.t_max,
            seed,
            restarts: self.restarts,
            max_evals: self.max_evals,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, default_value = "basis:0")]
    #[serde(default = "ground")]
    pub phi: String,
    #[arg(long, default_value = "basis:1")]
    #[serde(default = "first_excited")]
    pub psi: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub ranks: Vec<usize>,
    /// Ambient dimension; the system is compressed to it when larger.
    #[arg(long)]
    #[serde(default)]
    pub ambient: Option<usize>,
    /// Support rank of the states; defaults to the smallest rank.
    #[arg(long)]
    #[serde(default)]
    pub n_prime: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub synthesis: SynthesisFlags,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub system: PathBuf,
    #[arg(long, default_value = "basis:0")]
    #[serde(default = "ground")]
    pub phi: String,
    #[arg(long, default_value = "basis:1")]
    #[serde(default = "first_excited")]
    pub psi: String,
    /// Galerkin rank to synthesize on; states are then read in that truncation.
    #[arg(long)]
    #[serde(default)]
    pub rank: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub synthesis: SynthesisFlags,
    #[arg(long)]
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Where to write the synthesized schedule.
    #[arg(long)]
    #[serde(default)]
    pub schedule_out: Option<PathBuf>,
}

fn one() -> usize {
    1
}
fn unit() -> f64 {
    1.0
}
fn ground() -> String {
    "basis:0".into()
}
fn first_excited() -> String {
    "basis:1".into()
}
fn hundred() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-10
}
fn quintic() -> Ramp {
    Ramp::Quintic
}
fn default_epsilon() -> f64 {
    1e-2
}
fn default_budget() -> f64 {
    5.0
}
fn default_segments() -> usize {
    8
}
fn default_t_max() -> f64 {
    20.0
}
fn default_restarts() -> usize {
    32
}
fn default_max_evals() -> usize {
    6000
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed inputs: exit 2.
    Config(String),
    /// Failure while computing: exit 2 as well, reported separately.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<formctrl::Error> for CliError {
    fn from(e: formctrl::Error) -> Self {
        use formctrl::Error as E;
        match e {
            E::StepUnderflow { .. } | E::QuadratureFailed { .. } | E::Io(_) => CliError::Runtime(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Outcome of one command.
#[derive(Debug)]
pub struct Execution {
    pub report: Report,
    /// Whether every certificate or success criterion held.
    pub pass: bool,
    /// Machine output for `--json`.
    pub machine: serde_json::Value,
    /// Human summary lines.
    pub summary: Vec<String>,
}

impl Execution {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{what} file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{what} file {}: {e}", path.display())))
}

pub fn load_system(path: &Path) -> CliResult<FormLinearSystem> {
    read_json(path, "system")
}

pub fn load_schedule(path: &Path) -> CliResult<ControlSchedule> {
    read_json(path, "schedule")
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    read_json(path, "config")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VectorJson {
    Real(Vec<f64>),
    Complex { re: Vec<f64>, im: Vec<f64> },
}

/// `basis:K` is the K-th standard basis vector; anything else names a JSON
/// file holding either a real array or `{re, im}`.
pub fn parse_state(spec: &str, dim: usize) -> CliResult<CVector> {
    if let Some(k) = spec.strip_prefix("basis:") {
        let k: usize = k.parse().map_err(|_| config_err(format!("state {spec:?}: expected basis:<index>")))?;
        if k >= dim {
            return Err(config_err(format!("state {spec:?}: index outside dimension {dim}")));
        }
        return Ok(basis_state(dim, k));
    }
    let v = match read_json::<VectorJson>(Path::new(spec), "state")? {
        VectorJson::Real(re) => CVector::from_iterator(re.len(), re.into_iter().map(|x| Complex64::new(x, 0.0))),
        VectorJson::Complex { re, im } => {
            if re.len() != im.len() {
                return Err(config_err(format!("state file {spec}: re has {} entries, im has {}", re.len(), im.len())));
            }
            CVector::from_iterator(re.len(), re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)))
        }
    };
    if v.len() != dim {
        return Err(config_err(format!("state file {spec}: length {} but the system has dimension {dim}", v.len())));
    }
    if !(v.norm() > 0.0) {
        return Err(config_err(format!("state file {spec}: zero vector")));
    }
    Ok(v)
}

fn require_seed(seed: Option<u64>, command: &str) -> CliResult<u64> {
    seed.ok_or_else(|| config_err(format!("{command} is randomized and needs --seed")))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

/// Caps the global pool from `FORMCTRL_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        config_err(format!("{THREADS_ENV}={raw:?} is not a positive integer"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Model(_) => "model",
            ExperimentConfig::Simulate(_) => "simulate",
            ExperimentConfig::Certify(_) => "certify",
            ExperimentConfig::MollifyStudy(_) => "mollify-study",
            ExperimentConfig::GalerkinSweep(_) => "galerkin-sweep",
            ExperimentConfig::Synthesize(_) => "synthesize",
        }
    }

    fn out(&self) -> Option<&Path> {
        match self {
            ExperimentConfig::Model(_) => None,
            ExperimentConfig::Simulate(a) => a.out.as_deref(),
            ExperimentConfig::Certify(a) => a.out.as_deref(),
            ExperimentConfig::MollifyStudy(a) => a.out.as_deref(),
            ExperimentConfig::GalerkinSweep(a) => a.out.as_deref(),
            ExperimentConfig::Synthesize(a) => a.out.as_deref(),
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            ExperimentConfig::Model(a) => a.seed,
            ExperimentConfig::Certify(a) => a.seed,
            ExperimentConfig::GalerkinSweep(a) => a.synthesis.seed,
            ExperimentConfig::Synthesize(a) => a.synthesis.seed,
            ExperimentConfig::Simulate(_) | ExperimentConfig::MollifyStudy(_) => None,
        }
    }
}

/// Executes a config and writes its output files. The returned report has
/// its timing filled in.
pub fn run(config: &ExperimentConfig) -> CliResult<Execution> {
    let start = Instant::now();
    let echo = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut report = Report::new(config.name(), echo, config.seed());
    let (pass, machine, summary) = match config {
        ExperimentConfig::Model(a) => run_model(a, &mut report)?,
        ExperimentConfig::Simulate(a) => run_simulate(a, &mut report)?,
        ExperimentConfig::Certify(a) => run_certify(a, &mut report)?,
        ExperimentConfig::MollifyStudy(a) => run_mollify(a, &mut report)?,
        ExperimentConfig::GalerkinSweep(a) => run_sweep(a, &mut report)?,
        ExperimentConfig::Synthesize(a) => run_synthesize(a, &mut report)?,
    };
    report.timing.wall_clock_seconds = start.elapsed().as_secs_f64();
    if let Some(path) = config.out() {
        report.write(path).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))?;
    }
    let machine = machine.unwrap_or_else(|| serde_json::to_value(&report).expect("report serializes"));
    Ok(Execution { report, pass, machine, summary })
}

type Step = (bool, Option<serde_json::Value>, Vec<String>);

fn run_model(a: &ModelArgs, report: &mut Report) -> CliResult<Step> {
    let kind: ModelKind = a.kind.parse()?;
    let spec = ModelSpec { kind, dim: a.dim, channels: a.channels, coupling: a.coupling, seed: a.seed };
    if kind == ModelKind::Random {
        require_seed(a.seed, "model --kind random")?;
    }
    let system = spec.build()?;
    let text = serde_json::to_string_pretty(&system).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&a.out, text.as_bytes())?;
    report.constants.push(system.constants_for(&[], None)?);
    report.body = json!({
        "dim": system.dim(),
        "channels": system.channels(),
        "m": system.m(),
        "interaction_norms": system.interaction_norms(),
        "path": a.out,
    });
    let lines = vec![format!(
        "wrote {} ({} model, dim {}, {} channel(s), m = {:.3e}, c = {:.6})",
        a.out.display(),
        a.kind,
        system.dim(),
        system.channels(),
        system.m(),
        report.constants[0].c
    )];
    Ok((true, None, lines))
}

fn run_simulate(a: &SimulateArgs, report: &mut Report) -> CliResult<Step> {
    let system = load_system(&a.system)?;
    let schedule = load_schedule(&a.schedule)?;
    system.check_schedule(&schedule)?;
    if a.grid == 0 {
        return Err(config_err("--grid must be positive"));
    }
    if !(a.tol > 0.0) {
        return Err(config_err("--tol must be positive"));
    }
    let n = system.dim();
    let phi = parse_state(&a.phi, n)?;
    let psi = a.psi.as_deref().map(|s| parse_state(s, n)).transpose()?;
    report.constants.push(system.constants_for(&[&schedule], None)?);

    let horizon = schedule.horizon();
    let grid: Vec<f64> = (0..=a.grid).map(|k| if k == a.grid { horizon } else { horizon * k as f64 / a.grid as f64 }).collect();
    let evolver = Evolver::new(&system);
    let mut state = phi.clone();
    let mut full = CMatrix::identity(n, n);
    let mut norms = Vec::with_capacity(grid.len());
    let mut plus = Vec::with_capacity(grid.len());
    let mut populations = Vec::with_capacity(grid.len());
    let frame = system.frame();
    for (k, &t) in grid.iter().enumerate() {
        if k > 0 {
            let u = evolver.propagate(&schedule, t, grid[k - 1], a.tol)?;
            state = u.apply(&state)?;
            full = u.matrix() * &full;
        }
        norms.push(state.norm());
        plus.push(frame.norm_plus(&state));
        populations.push(state.iter().map(|z| z.norm_sqr()).collect::<Vec<f64>>());
    }
    let fidelity = psi.as_ref().map(|psi| {
        let overlap = psi.dotc(&state);
        overlap.norm_sqr() / (psi.norm_squared() * phi.norm_squared())
    });
    if let Some(path) = &a.unitary_csv {
        let rows: Vec<Vec<String>> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| vec![i.to_string(), j.to_string(), full[(i, j)].re.to_string(), full[(i, j)].im.to_string()])
            .collect();
        write_file(path, &csv_bytes(&["row", "col", "re", "im"], &rows)?)?;
    }
    let mut body = json!({
        "t_grid": grid,
        "state_norms": norms,
        "plus_norms": plus,
        "populations": populations,
    });
    if let Some(f) = fidelity {
        body["fidelity_to_target"] = json!(f);
    }
    report.body = body;
    let drift = norms.iter().map(|x| (x - norms[0]).abs()).fold(0.0, f64::max);
    let mut lines = vec![format!("evolved over [0, {horizon}] on {} grid points, max norm drift {drift:.2e}", grid.len())];
    if let Some(f) = fidelity {
        lines.push(format!("fidelity to target {f:.9}"));
    }
    Ok((true, None, lines))
}

fn growth_windows(schedule: &ControlSchedule) -> Vec<(f64, f64)> {
    if schedule.class().is_continuous() {
        vec![(0.0, schedule.horizon())]
    } else {
        schedule.breakpoints().windows(2).map(|w| (w[0], w[1])).collect()
    }
}

fn run_certify(a: &CertifyArgs, report: &mut Report) -> CliResult<Step> {
    let system = load_system(&a.system)?;
    let schedules = a.schedules.iter().map(|p| load_schedule(p)).collect::<CliResult<Vec<_>>>()?;
    for s in &schedules {
        system.check_schedule(s)?;
    }
    let refs: Vec<&ControlSchedule> = schedules.iter().collect();
    let constants = system.constants_for(&refs, None)?;
    report.constants.push(constants);

    let certs: Vec<StabilityCertificate> = match a.kind {
        CertifyKind::Resolvent => {
            let seed = require_seed(a.seed, "certify --kind resolvent")?;
            let trials = a.trials.unwrap_or(100);
            run_trials(trials, seed, |_, mut rng| {
                let u1 = random_control(&mut rng, system.control_box());
                let u2 = random_control(&mut rng, system.control_box());
                check_resolvent_lipschitz(&system, &u1, &u2, constants.c)
            })?
        }
        CertifyKind::Growth => {
            if schedules.is_empty() {
                return Err(config_err("certify --kind growth needs --schedules"));
            }
            let seed = require_seed(a.seed, "certify --kind growth")?;
            let trials = a.trials.unwrap_or(10);
            let mut out = Vec::new();
            for (idx, schedule) in schedules.iter().enumerate() {
                for (w, (s, t)) in growth_windows(schedule).into_iter().enumerate() {
                    let checker = GrowthChecker::new(&system, schedule, t, s, constants)?;
                    let master = derive_seed(derive_seed(seed, idx as u64), w as u64);
                    let pairs = run_trials(trials, master, |_, mut rng| checker.check(&random_state(&mut rng, system.dim())))?;
                    for (p, m) in pairs {
                        out.push(p);
                        out.push(m);
                    }
                }
            }
            out
        }
        CertifyKind::Stability | CertifyKind::Formlinear => {
            let (sj, sk) = match schedules.as_slice() {
                [one] => (one, one),
                [x, y] => (x, y),
                _ => return Err(config_err(format!("certify --kind {} needs one or two --schedules", a.kind))),
            };
            if a.trials.is_some() {
                return Err(config_err(format!("certify --kind {} is deterministic; --trials does not apply", a.kind)));
            }
            let cert = if a.kind == CertifyKind::Stability {
                certify_stability(&system, sj, sk, &constants)?
            } else {
                certify_formlinear(&system, sj, sk, &constants)?
            };
            vec![cert]
        }
    };
    let summary = summarize(&certs);
    let pass = summary.failed == 0;
    report.body = json!({"summary": summary, "certificates": certs});
    let machine = serde_json::to_value(&certs).map_err(|e| CliError::Runtime(e.to_string()))?;
    let lines = vec![format!(
        "{}: {} certificate(s), {} failed, max lhs/rhs {:.3e}, min margin {:.3e}",
        a.kind, summary.total, summary.failed, summary.max_ratio, summary.min_margin
    )];
    Ok((pass, Some(machine), lines))
}

fn run_mollify(a: &MollifyArgs, report: &mut Report) -> CliResult<Step> {
    let pc = load_schedule(&a.schedule)?;
    let tv = total_variation(&pc)?;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &delta in &a.deltas {
        let sched = mollify(&pc, &MollifierParams::new(delta, a.ramp.into()))?;
        let dist = l1_distance(&sched, &pc)?;
        let dl1 = derivative_l1(&sched)?;
        for i in 0..pc.channels() {
            rows.push(vec![delta.to_string(), i.to_string(), dist[i].to_string(), dl1[i].to_string(), tv[i].to_string()]);
        }
        entries.push(json!({"delta": delta, "l1_distance": dist, "derivative_l1": dl1}));
    }
    if let Some(path) = &a.csv {
        write_file(path, &csv_bytes(&["delta", "channel", "l1_distance", "derivative_l1", "total_variation"], &rows)?)?;
    }
    let budget_defect = entries
        .iter()
        .flat_map(|e| {
            let d: Vec<f64> = serde_json::from_value(e["derivative_l1"].clone()).unwrap_or_default();
            d.into_iter().zip(tv.clone()).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    report.body = json!({"ramp": a.ramp, "total_variation": tv, "entries": entries, "max_budget_defect": budget_defect});
    let lines = a
        .deltas
        .iter()
        .zip(&entries)
        .map(|(d, e)| format!("delta {d}: l1 distance {}, derivative l1 {}", e["l1_distance"], e["derivative_l1"]))
        .chain(std::iter::once(format!("max |derivative_l1 - TV| = {budget_defect:.2e}")))
        .collect();
    Ok((true, None, lines))
}

fn run_sweep(a: &SweepArgs, report: &mut Report) -> CliResult<Step> {
    let seed = require_seed(a.synthesis.seed, "galerkin-sweep")?;
    let loaded = load_system(&a.system)?;
    let ambient = a.ambient.unwrap_or(loaded.dim());
    if ambient > loaded.dim() {
        return Err(config_err(format!("--ambient {ambient} exceeds the system dimension {}", loaded.dim())));
    }
    let system = if ambient == loaded.dim() { loaded } else { truncate(&loaded, ambient)?.system().clone() };
    if a.ranks.is_empty() {
        return Err(config_err("--ranks is empty"));
    }
    let n_prime = a.n_prime.unwrap_or_else(|| *a.ranks.iter().min().expect("nonempty"));
    let phi = parse_state(&a.phi, ambient)?;
    let psi = parse_state(&a.psi, ambient)?;
    let params = a.synthesis.params(seed);
    let reports = transfer_sweep(&system, n_prime, &a.ranks, &phi, &psi, &params)?;
    let summary = summarize_sweep(&reports);
    report.constants.extend(reports.iter().map(|r| r.constants));
    if let Some(path) = &a.csv {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                let max_l1 = r.synthesis.l1_norms.iter().cloned().fold(0.0, f64::max);
                vec![
                    r.n.to_string(),
                    r.synthesis.success.to_string(),
                    r.synthesis.residual.to_string(),
                    r.errors.ambient_final_error.to_string(),
                    r.errors.chain_bound_terms.propagator_gap.to_string(),
                    r.errors.chain_bound_terms.gap_bound.to_string(),
                    max_l1.to_string(),
                ]
            })
            .collect();
        let header = ["n", "synthesized", "residual", "ambient_error", "propagator_gap", "gap_bound", "max_l1"];
        write_file(path, &csv_bytes(&header, &rows)?)?;
    }
    let pass = summary.all_synthesized && summary.final_within_epsilon && summary.gap_bound_everywhere;
    let lines = reports
        .iter()
        .map(|r| {
            format!(
                "n = {:>3}: synthesized {}, residual {:.3e}, ambient error {:.3e}, gap {:.3e} <= bound {:.3e}: {}",
                r.n,
                r.synthesis.success,
                r.synthesis.residual,
                r.errors.ambient_final_error,
                r.errors.chain_bound_terms.propagator_gap,
                r.errors.chain_bound_terms.gap_bound,
                r.gap_bound_holds
            )
        })
        .collect();
    report.body = json!({"N": ambient, "n_prime": n_prime, "summary": summary, "reports": reports});
    Ok((pass, None, lines))
}

fn run_synthesize(a: &SynthesizeArgs, report: &mut Report) -> CliResult<Step> {
    let seed = require_seed(a.synthesis.seed, "synthesize")?;
    let loaded = load_system(&a.system)?;
    let system = match a.rank {
        Some(n) => truncate(&loaded, n)?.system().clone(),
        None => loaded,
    };
    let phi = parse_state(&a.phi, system.dim())?;
    let psi = parse_state(&a.psi, system.dim())?;
    let outcome = synthesize_on(&system, &phi, &psi, &a.synthesis.params(seed))?;
    report.constants.push(system.constants_for(&[], None)?);
    if let (Some(path), Some(schedule)) = (&a.schedule_out, &outcome.schedule) {
        let text = serde_json::to_string_pretty(schedule).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(path, text.as_bytes())?;
    }
    let lines = vec![format!(
        "success {}: residual {:.3e}, infidelity {:.3e}, l1 {:?}, horizon {:.4}, {} restart(s), {} evaluations",
        outcome.success,
        outcome.residual,
        outcome.infidelity,
        outcome.l1_norms,
        outcome.horizon,
        outcome.restarts_run,
        outcome.evaluations
    )];
    let pass = outcome.success;
    report.body = serde_json::to_value(&outcome).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((pass, None, lines))
}
