//! Front end of the `stfe` binary: configuration, dispatch and output.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use stfe_core::experiments::{self, MmsSetup, TrajectoryOutcome};
use stfe_core::functionals;
use stfe_core::noise::RngStream;
use stfe_core::stepper::{self, Record, SERIES_COLUMNS};

use config::{Derived, ExperimentConfig, TestFunction};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<stfe_core::Error> for CliError {
    fn from(e: stfe_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Simulate,
    Ensemble,
    Sweep,
    Budget,
    QvTest,
    Inequalities,
    Convergence,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Ensemble => "ensemble",
            Command::Sweep => "sweep",
            Command::Budget => "budget",
            Command::QvTest => "qv-test",
            Command::Inequalities => "inequalities",
            Command::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
}

/// One CSV line per record, floats with 17 significant digits.
pub fn series_csv(series: &[Record]) -> String {
    let mut s = SERIES_COLUMNS.join(",");
    s.push('\n');
    for rec in series {
        let row: Vec<String> = rec.columns().iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

struct Output<'a> {
    dir: &'a Path,
    command: Command,
    seed: u64,
    derived: Derived,
}

impl Output<'_> {
    fn series(&self, id: u64, series: &[Record]) -> Result<(), CliError> {
        fs::write(self.dir.join(format!("series_{id}.csv")), series_csv(series))?;
        Ok(())
    }

    /// Writes `summary.json`: the report's fields plus run identity.
    fn summary(&self, report: &impl Serialize, extra: Value) -> Result<(), CliError> {
        let mut v = serde_json::to_value(report).map_err(|e| CliError::Io(e.into()))?;
        if !v.is_object() {
            v = json!({ "report": v });
        }
        let obj = v.as_object_mut().expect("object");
        obj.insert("command".into(), json!(self.command.name()));
        obj.insert("seed".into(), json!(self.seed));
        obj.insert("derived".into(), json!(self.derived));
        if let Value::Object(m) = extra {
            obj.extend(m);
        }
        write_json(&self.dir.join("summary.json"), &v)
    }

    fn failure(&self, error: &CliError) -> Result<(), CliError> {
        self.summary(&json!({}), json!({ "status": "failed", "error": error.to_string() }))
    }
}

/// Runs one subcommand; outputs written before a failure are kept.
pub fn run(command: Command, opts: &RunOptions) -> Result<(), CliError> {
    let text = fs::read_to_string(&opts.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", opts.config.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?.resolved();
    let derived = cfg.derived()?;
    fs::create_dir_all(&opts.out)?;
    let stale = opts.out.join("summary.json");
    if stale.exists() {
        fs::remove_file(stale)?;
    }
    write_json(&opts.out.join("resolved_config.json"), &cfg)?;
    let out = Output {
        dir: &opts.out,
        command,
        seed: opts.seed,
        derived,
    };
    let result = dispatch(command, &cfg, opts, &out);
    if let Err(e @ CliError::Numerical(_)) = &result {
        if !opts.out.join("summary.json").exists() {
            out.failure(e)?;
        }
    }
    result
}

fn dispatch(command: Command, cfg: &ExperimentConfig, opts: &RunOptions, out: &Output<'_>) -> Result<(), CliError> {
    let seed = opts.seed;
    let threads = opts.threads;
    match command {
        Command::Simulate => {
            let solver = cfg.solver_config()?;
            let datum = cfg.datum()?;
            let stream = RngStream::new(seed, 0);
            let u0 = datum.generate(&solver.grid, &stream)?;
            let constants = functionals::estimate_constants(
                cfg.n,
                out.derived.s,
                out.derived.c_strat,
                cfg.estimates.mu,
                cfg.estimates.eta,
            )?;
            match stepper::advance(&solver, u0, stream) {
                Ok(t) => {
                    out.series(0, &t.series)?;
                    let support = experiments::support_diagnostic(&t, solver.support_threshold);
                    out.summary(
                        &json!({
                            "status": "ok",
                            "final_state": t.final_state,
                            "step_stats": t.step_stats,
                            "estimate_constants": constants,
                            "support": support,
                        }),
                        Value::Null,
                    )
                }
                Err(f) => {
                    out.series(0, &f.partial.series)?;
                    Err(numerical(&f.error))
                }
            }
        }
        Command::Ensemble => {
            let solver = cfg.solver_config()?;
            let datum = cfg.datum()?;
            let (summary, outcomes) =
                experiments::run_ensemble(&solver, &datum, cfg.ensemble.count, seed, &cfg.moments.q, threads)
                    .map_err(numerical)?;
            for o in &outcomes {
                out.series(o.id, o.series())?;
            }
            let statuses: Vec<Value> = outcomes.iter().map(outcome_status).collect();
            out.summary(&summary, json!({ "trajectory_status": statuses }))?;
            if summary.completed == 0 {
                return Err(CliError::Numerical("every trajectory failed".into()));
            }
            Ok(())
        }
        Command::Sweep => {
            let solver = cfg.solver_config()?;
            let datum = cfg.datum()?;
            let report = experiments::estimate_sweep(
                &solver,
                &datum,
                cfg.ensemble.count,
                seed,
                cfg.sweep.axis,
                &cfg.sweep.values,
                &cfg.moments.q,
                threads,
            )
            .map_err(numerical)?;
            out.summary(&report, Value::Null)
        }
        Command::Budget => {
            let solver = cfg.solver_config()?;
            let datum = cfg.datum()?;
            let report =
                experiments::ito_budget(&solver, &datum, cfg.ensemble.count, seed, cfg.budget.functional, threads)
                    .map_err(numerical)?;
            let z = report.max_standardized_residual();
            out.summary(&report, json!({ "max_standardized_residual": z }))
        }
        Command::QvTest => {
            let solver = cfg.solver_config()?;
            let datum = cfg.datum()?;
            let len = cfg.len;
            let m = cfg.qv.mode as f64;
            let phi = match cfg.qv.test_function {
                TestFunction::Sine => solver.grid.sample(|x| (2.0 * std::f64::consts::PI * m * x / len).sin()),
                TestFunction::Constant => solver.grid.constant(1.0),
            };
            let report = experiments::martingale_qv_test(&solver, &datum, cfg.ensemble.count, seed, &phi, threads)
                .map_err(numerical)?;
            out.summary(
                &report,
                json!({
                    "relative_qv_gap": report.relative_qv_gap(),
                    "qv_tolerance": report.qv_tolerance(),
                }),
            )
        }
        Command::Inequalities => {
            let b = &cfg.inequalities;
            let report = experiments::inequality_battery(
                b.samples,
                &b.grids,
                cfg.len,
                &cfg.params()?,
                b.modes,
                &cfg.spectrum()?,
                seed,
            )
            .map_err(numerical)?;
            out.summary(&report, Value::Null)
        }
        Command::Convergence => {
            let c = &cfg.convergence;
            let setup = MmsSetup {
                params: cfg.params()?,
                len: cfg.len,
                height: c.height,
                amplitude: c.amplitude,
                horizon: cfg.horizon,
                reference_dt: c.reference_dt.unwrap_or(cfg.dt0 / 100.0),
            };
            let report = experiments::mms_convergence(&setup, &c.levels).map_err(|e| match e {
                stfe_core::Error::InvalidParameter(_) => CliError::from(e),
                other => numerical(other),
            })?;
            out.summary(&report, Value::Null)
        }
    }
}

fn outcome_status(o: &TrajectoryOutcome) -> Value {
    match &o.result {
        Ok(t) => json!({
            "id": o.id,
            "status": if t.final_state.frozen { "frozen" } else { "ok" },
            "t_sigma": t.final_state.t_sigma,
            "accepted": t.step_stats.accepted,
            "rejected": t.step_stats.rejected,
        }),
        Err(f) => json!({ "id": o.id, "status": "degenerate", "error": f.error.to_string() }),
    }
}

/// Human-readable one-line digest printed after a successful run.
pub fn describe(command: Command, opts: &RunOptions) -> String {
    format!("{} finished; outputs in {}", command.name(), opts.out.display())
}
