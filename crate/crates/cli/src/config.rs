//! JSON experiment configuration.

use serde::{Deserialize, Serialize};
use stfe_core::experiments::{BudgetFunctional, InitialDatum, SweepAxis};
use stfe_core::functionals::ModelParams;
use stfe_core::grid::PeriodicGrid;
use stfe_core::noise::{self, NoiseSpectrum, SpectrumMode};
use stfe_core::stepper::{default_alpha, SolverConfig};

use crate::CliError;

/// How the Stratonovich-type correction `S` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SChoice {
    /// `S = factor * S_A3star`.
    #[serde(rename = "factor-above-A3star")]
    FactorAboveA3star { factor: f64 },
    /// `S = factor * S_A3`.
    #[serde(rename = "factor-above-A3")]
    FactorAboveA3 { factor: f64 },
    /// `S = C_Strat`.
    BackwardIto,
    Value { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub mode: SpectrumMode,
    pub amplitude: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(rename = "K")]
    pub k: usize,
}

fn default_decay() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub dt_min: Option<f64>,
    pub record_every: usize,
    pub pos_floor: f64,
    pub solver_tol: f64,
    pub growth: f64,
    pub alpha: Option<f64>,
    pub support_threshold: f64,
    pub monitor: bool,
    pub keep_snapshots: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            dt_min: None,
            record_every: 1,
            pos_floor: 1e-10,
            solver_tol: 1e-12,
            growth: 1.2,
            alpha: None,
            support_threshold: 1e-6,
            monitor: false,
            keep_snapshots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleBlock {
    pub count: usize,
}

impl Default for EnsembleBlock {
    fn default() -> Self {
        Self { count: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentsBlock {
    pub q: Vec<f64>,
}

impl Default for MomentsBlock {
    fn default() -> Self {
        Self { q: vec![1.0, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            axis: SweepAxis::Delta,
            values: vec![0.2, 0.1, 0.05, 0.025],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetBlock {
    pub functional: BudgetFunctional,
}

impl Default for BudgetBlock {
    fn default() -> Self {
        Self {
            functional: BudgetFunctional::Energy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestFunction {
    /// `sin(2 pi m x / L)`.
    Sine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QvBlock {
    pub test_function: TestFunction,
    pub mode: usize,
}

impl Default for QvBlock {
    fn default() -> Self {
        Self {
            test_function: TestFunction::Sine,
            mode: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InequalityBlock {
    pub samples: usize,
    pub grids: Vec<usize>,
    pub modes: usize,
}

impl Default for InequalityBlock {
    fn default() -> Self {
        Self {
            samples: 100,
            grids: vec![128, 256],
            modes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceBlock {
    /// `(N, dt)` pairs; empty means a spatial study over `N in {64, 128, 256}`.
    pub levels: Vec<(usize, f64)>,
    pub height: f64,
    pub amplitude: f64,
    pub reference_dt: Option<f64>,
}

impl Default for ConvergenceBlock {
    fn default() -> Self {
        Self {
            levels: Vec::new(),
            height: 2.0,
            amplitude: 0.5,
            reference_dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateBlock {
    pub mu: f64,
    pub eta: f64,
}

impl Default for EstimateBlock {
    fn default() -> Self {
        Self { mu: 0.05, eta: 1e-3 }
    }
}

fn default_sigma_stop() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "L")]
    pub len: f64,
    #[serde(rename = "N")]
    pub nodes: usize,
    pub n: f64,
    pub p: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(rename = "S")]
    pub s: SChoice,
    pub noise: NoiseConfig,
    pub dt0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_sigma_stop")]
    pub sigma_stop: f64,
    pub initial: InitialDatum,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub ensemble: EnsembleBlock,
    #[serde(default)]
    pub moments: MomentsBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub budget: BudgetBlock,
    #[serde(default)]
    pub qv: QvBlock,
    #[serde(default)]
    pub inequalities: InequalityBlock,
    #[serde(default)]
    pub convergence: ConvergenceBlock,
    #[serde(default)]
    pub estimates: EstimateBlock,
}

/// Quantities derived from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Derived {
    pub c_strat: f64,
    pub s: f64,
    pub s_a3: f64,
    pub s_a3_star: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Copy with every optional setting made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.solver.dt_min = Some(c.solver.dt_min.unwrap_or(c.dt0 * 1e-6));
        c.solver.alpha = Some(c.solver.alpha.unwrap_or_else(|| default_alpha(c.n)));
        if c.sweep.values.is_empty() {
            c.sweep.values = match c.sweep.axis {
                SweepAxis::Delta => vec![0.2, 0.1, 0.05, 0.025],
                SweepAxis::Eps => vec![1e-1, 1e-2, 1e-3],
            };
        }
        if c.convergence.levels.is_empty() {
            c.convergence.levels = vec![(64, c.dt0), (128, c.dt0), (256, c.dt0)];
        }
        c.convergence.reference_dt = Some(c.convergence.reference_dt.unwrap_or(c.dt0 / 100.0));
        c
    }

    pub fn spectrum(&self) -> Result<NoiseSpectrum, CliError> {
        let nc = &self.noise;
        Ok(NoiseSpectrum::build(nc.mode, nc.amplitude, nc.decay, nc.k, self.len)?)
    }

    pub fn derived(&self) -> Result<Derived, CliError> {
        let c = noise::c_strat(&self.spectrum()?, self.n);
        let (a3, a3_star) = noise::s_thresholds(self.n, c)?;
        let s = match self.s {
            SChoice::FactorAboveA3star { factor } => factor * a3_star,
            SChoice::FactorAboveA3 { factor } => factor * a3,
            SChoice::BackwardIto => c,
            SChoice::Value { value } => value,
        };
        Ok(Derived {
            c_strat: c,
            s,
            s_a3: a3,
            s_a3_star: a3_star,
        })
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let d = self.derived()?;
        let params = ModelParams {
            n: self.n,
            p: self.p,
            eps: self.epsilon,
            s: d.s,
            c_strat: d.c_strat,
        };
        params.validate(false)?;
        Ok(params)
    }

    pub fn solver_config(&self) -> Result<SolverConfig, CliError> {
        let grid = PeriodicGrid::new(self.len, self.nodes)?;
        let mut cfg = SolverConfig::new(self.params()?, grid, self.spectrum()?, self.dt0, self.horizon);
        let o = &self.solver;
        cfg.delta = self.delta;
        cfg.sigma_stop = self.sigma_stop;
        if let Some(v) = o.dt_min {
            cfg.dt_min = v;
        }
        cfg.record_every = o.record_every;
        cfg.pos_floor = o.pos_floor;
        cfg.solver_tol = o.solver_tol;
        cfg.growth = o.growth;
        if let Some(a) = o.alpha {
            cfg.alpha = a;
        }
        cfg.support_threshold = o.support_threshold;
        cfg.monitor = o.monitor;
        cfg.keep_snapshots = o.keep_snapshots;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn datum(&self) -> Result<InitialDatum, CliError> {
        let d = self.initial.clone().with_delta(self.delta);
        d.validate(self.len)?;
        Ok(d)
    }
}
