//! Command-line front end: `simulate`, `solve` and `sweep`.
//!
//! Configuration is a flat JSON object whose fields are also available as
//! long flags of the same name; flags win over the file.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channel::{simulate_rss, RssObservation};
use crate::eval::{self, ExperimentConfig};
use crate::fw::FwParams;
use crate::mle::{self, MleProblem, SolveOptions, SolveReport};
use crate::scenario::{make_grid, random_scenario, Roi, Scenario, ScenarioConfig};
use crate::srwac::{self, SrWacConfig};

#[derive(Debug, Parser)]
#[command(name = "msloc", version, about = "Multi-source RSS localization under log-normal shadowing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random deployment and its RSS observation.
    Simulate(Overrides),
    /// Localize the sources of a saved scenario from a saved observation.
    Solve(SolveArgs),
    /// Run Monte-Carlo trials over a list of sigma or sensor-count values.
    Sweep(Overrides),
}

/// Flags shared by every subcommand; each overrides the config field of
/// the same name.
#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Flat JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Shadowing standard deviation(s) in dB, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Sensor count(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sensors: Option<Vec<usize>>,
    #[arg(long)]
    pub sources: Option<usize>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub roi_l: Option<f64>,
    #[arg(long)]
    pub roi_w: Option<f64>,
    #[arg(long)]
    pub p_low: Option<f64>,
    #[arg(long)]
    pub p_high: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for trials (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Keep one deployment for all trials.
    #[arg(long)]
    pub fixed_geometry: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario JSON written by `simulate`.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Observation JSON written by `simulate`.
    #[arg(long)]
    pub observation: PathBuf,
    /// Also write the sparse-recovery weights to `srwac_debug.csv`.
    #[arg(long)]
    pub debug_csv: bool,
    #[command(flatten)]
    pub common: Overrides,
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub roi_l: f64,
    pub roi_w: f64,
    pub sensors: Vec<usize>,
    pub sources: usize,
    pub grid_n: usize,
    pub alpha: f64,
    pub sigma: Vec<f64>,
    pub p_low: f64,
    pub p_high: f64,
    pub lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub fixed_geometry: bool,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            roi_l: 2000.0,
            roi_w: 2000.0,
            sensors: vec![150],
            sources: 3,
            grid_n: 121,
            alpha: 2.5,
            sigma: vec![6.0],
            p_low: 2000.0,
            p_high: 4000.0,
            lambda: 1e-3,
            trials: 500,
            seed: 0,
            out: PathBuf::from("out"),
            fixed_geometry: false,
            threads: None,
        }
    }
}

/// CLI failure, mapped to the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "error: {msg}"),
            CliError::Io(msg) => write!(f, "I/O error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = std::result::Result<T, CliError>;

impl RunConfig {
    /// Parses a config file. Syntax and semantic errors name the line.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("{origin}: {e}")))?;
        cfg.validate().map_err(|(field, msg)| {
            let line = text
                .lines()
                .position(|l| l.contains(&format!("\"{field}\"")))
                .map(|i| format!(" at line {}", i + 1))
                .unwrap_or_default();
            CliError::Validation(format!("{origin}{line}: {field}: {msg}"))
        })?;
        Ok(cfg)
    }

    /// Applies flag overrides and validates the result.
    pub fn resolve(o: &Overrides) -> CliResult<Self> {
        let mut cfg = match &o.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                RunConfig::parse(&text, &path.display().to_string())?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = &o.$f { cfg.$f = v.clone(); })* };
        }
        take!(seed, trials, sigma, sensors, sources, grid_n, lambda, alpha, roi_l, roi_w, p_low, p_high, out);
        if o.threads.is_some() {
            cfg.threads = o.threads;
        }
        cfg.fixed_geometry |= o.fixed_geometry;
        cfg.validate()
            .map_err(|(field, msg)| CliError::Validation(format!("{field}: {msg}")))?;
        Ok(cfg)
    }

    /// Returns the offending field and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = |name: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err((name, format!("must be positive and finite, got {x}")))
            }
        };
        positive("roi_l", self.roi_l)?;
        positive("roi_w", self.roi_w)?;
        positive("alpha", self.alpha)?;
        positive("p_low", self.p_low)?;
        positive("p_high", self.p_high)?;
        positive("lambda", self.lambda)?;
        if self.p_low > self.p_high {
            return Err(("p_low", format!("{} exceeds p_high {}", self.p_low, self.p_high)));
        }
        if self.sensors.is_empty() || self.sensors.contains(&0) {
            return Err(("sensors", "needs one or more positive counts".into()));
        }
        if self.sigma.is_empty() || self.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(("sigma", "needs one or more values >= 0".into()));
        }
        if self.sensors.len() > 1 && self.sigma.len() > 1 {
            return Err(("sigma", "sweep either sigma or sensors, not both".into()));
        }
        if self.sources < 2 {
            return Err(("sources", format!("at least two sources are required, got {}", self.sources)));
        }
        if self.sources > eval::MAX_MATCH_K {
            return Err(("sources", format!("at most {} sources are supported", eval::MAX_MATCH_K)));
        }
        let side = self.grid_n.isqrt();
        if side * side != self.grid_n || self.grid_n < 4 {
            return Err(("grid_n", format!("must be a perfect square >= 4, got {}", self.grid_n)));
        }
        if self.trials == 0 {
            return Err(("trials", "must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(("threads", "must be positive".into()));
        }
        Ok(())
    }

    pub fn roi(&self) -> Roi {
        Roi { l: self.roi_l, w: self.roi_w }
    }

    pub fn scenario_config(&self, sensors: usize, sigma_s: f64) -> ScenarioConfig {
        ScenarioConfig {
            roi: self.roi(),
            sensors,
            sources: self.sources,
            alpha: self.alpha,
            sigma_s,
            p_low: self.p_low,
            p_high: self.p_high,
        }
    }

    pub fn srwac(&self) -> SrWacConfig {
        SrWacConfig {
            lambda: self.lambda,
            ..SrWacConfig::default()
        }
    }

    fn single_point(&self) -> CliResult<(usize, f64)> {
        match (self.sensors.as_slice(), self.sigma.as_slice()) {
            ([m], [s]) => Ok((*m, *s)),
            _ => Err(CliError::Validation(
                "simulate takes a single sensors value and a single sigma value".into(),
            )),
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(o) => cmd_simulate(&RunConfig::resolve(&o)?),
        Command::Solve(a) => cmd_solve(&a, &RunConfig::resolve(&a.common)?),
        Command::Sweep(o) => cmd_sweep(&RunConfig::resolve(&o)?),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Writes `scenario.json` and `observation.json` into the output directory.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let (m, sigma) = cfg.single_point()?;
    let scenario = random_scenario(&cfg.scenario_config(m, sigma), cfg.seed)?;
    let (obs, _) = simulate_rss(&scenario, cfg.seed);
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("scenario.json"), &scenario)?;
    write_json(&cfg.out.join("observation.json"), &obs)?;
    eprintln!("wrote {} and {}", cfg.out.join("scenario.json").display(), cfg.out.join("observation.json").display());
    Ok(())
}

/// Initializes and refines, writing `report.json`. With `sigma_s = 0` the
/// likelihood is undefined, so the report carries the sparse-recovery
/// estimate with zero iterations.
pub fn cmd_solve(args: &SolveArgs, cfg: &RunConfig) -> CliResult<()> {
    let scenario: Scenario = read_json(&args.scenario)?;
    scenario.validate()?;
    let obs: RssObservation = read_json(&args.observation)?;
    obs.validate()?;
    if obs.len() != scenario.sensors.len() {
        return Err(CliError::Validation(format!(
            "observation has {} entries for {} sensors",
            obs.len(),
            scenario.sensors.len()
        )));
    }
    let grid = make_grid(scenario.roi, cfg.grid_n)?;
    let k = scenario.sources.len();
    let init =
        srwac::initialize_detailed(&scenario.geometry(), &grid, &obs, k, &cfg.srwac(), cfg.seed)?;
    if !init.qp_converged {
        eprintln!("warning: sparse recovery hit its iteration cap; continuing from its last iterate");
    }
    let theta0 = init.estimate.theta();
    let report = if scenario.sigma_s == 0.0 {
        eprintln!("sigma_s = 0: likelihood undefined, reporting the sparse-recovery estimate");
        SolveReport {
            theta: theta0,
            objective: 0.0,
            iterations: 0,
            converged: init.qp_converged,
            trace: Vec::new(),
            multipliers: Vec::new(),
        }
    } else {
        let params = FwParams::new(scenario.alpha, scenario.sigma_s)?;
        let problem = MleProblem::new(
            &scenario.sensors,
            &obs,
            params,
            scenario.roi,
            scenario.p_low,
            scenario.p_high,
        )?;
        let mut r = mle::solve(&theta0, &problem, &SolveOptions::default())?;
        r.converged &= init.qp_converged;
        r
    };
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    if args.debug_csv {
        let path = cfg.out.join("srwac_debug.csv");
        fs::write(&path, init.debug_csv(&grid)).map_err(|e| io_err(&path, e))?;
    }
    if !report.converged {
        eprintln!("warning: solver did not converge after {} iterations", report.iterations);
    }
    Ok(())
}

struct CsvOut {
    path: PathBuf,
    w: BufWriter<File>,
}

impl CsvOut {
    fn create(path: PathBuf, header: &str) -> CliResult<Self> {
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut out = CsvOut { path, w: BufWriter::new(f) };
        out.write(|w| writeln!(w, "{header}"))?;
        Ok(out)
    }

    fn write(
        &mut self,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> CliResult<()> {
        body(&mut self.w)
            .and_then(|_| self.w.flush())
            .map_err(|e| io_err(&self.path, e))
    }
}

/// Runs every sweep point and appends to `results.csv`, `curves.csv` and
/// `summary.csv`, flushing after each point.
pub fn cmd_sweep(cfg: &RunConfig) -> CliResult<()> {
    let points: Vec<(f64, usize, f64)> = if cfg.sensors.len() > 1 {
        cfg.sensors.iter().map(|&m| (m as f64, m, cfg.sigma[0])).collect()
    } else {
        cfg.sigma.iter().map(|&s| (s, cfg.sensors[0], s)).collect()
    };
    create_dir(&cfg.out)?;
    let mut results = CsvOut::create(cfg.out.join("results.csv"), eval::RESULTS_HEADER)?;
    let mut curves = CsvOut::create(cfg.out.join("curves.csv"), eval::CURVES_HEADER)?;
    let mut summary = CsvOut::create(cfg.out.join("summary.csv"), eval::SUMMARY_HEADER)?;
    for (param, m, sigma) in points {
        let exp = ExperimentConfig {
            scenario: cfg.scenario_config(m, sigma),
            grid_n: cfg.grid_n,
            srwac: cfg.srwac(),
            solve: SolveOptions::default(),
            trials: cfg.trials,
            master_seed: cfg.seed,
            fixed_geometry: cfg.fixed_geometry,
            threads: cfg.threads,
            sweep_param: param,
        };
        let progress = |done: usize, total: usize| {
            if done == total || done.is_multiple_of(50) {
                eprintln!("sweep_param={param}: {done}/{total} trials");
            }
        };
        let r = eval::run_experiment(&exp, Some(&progress))?;
        results.write(|w| eval::write_results_rows(w, &r))?;
        curves.write(|w| eval::write_curve_rows(w, &r))?;
        summary.write(|w| eval::write_summary_row(w, &r))?;
        eprintln!(
            "sweep_param={param}: relative RMSE {:.4}, {} of {} trials did not converge",
            r.relative_rmse,
            r.failures,
            r.trials.len()
        );
    }
    Ok(())
}
