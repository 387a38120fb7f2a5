//! Ensemble orchestration and the verification harness: Ito budgets,
//! martingale and quadratic-variation checks, uniformity sweeps, the
//! inequality battery, manufactured-solution convergence and the support
//! diagnostic.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::functionals::{self, ModelParams};
use crate::grid::{exact_sum, GridFunction, PeriodicGrid};
use crate::noise::{self, NoiseSpectrum, RngStream};
use crate::stepper::{
    self, AdvanceFailure, Forcing, Record, SolverConfig, StepInfo, StepObserver, Trajectory, MONITORED,
    SERIES_COLUMNS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatumKind {
    Constant,
    /// `h + a cos(2 pi x / L)`.
    PerturbedConstant,
    /// `h cos^4(pi (x - x0) / w)` within periodic distance `w/2` of `x0`.
    Bump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDatum {
    pub kind: DatumKind,
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    /// Bump center; `None` means `L/2`.
    #[serde(default)]
    pub center: Option<f64>,
    #[serde(default)]
    pub amplitude: f64,
    /// Draw the height uniformly from `[h/2, h]` per trajectory.
    #[serde(default)]
    pub randomize_height: bool,
    /// Shift added last; filled in from the solver configuration.
    #[serde(skip)]
    pub delta: f64,
}

fn default_height() -> f64 {
    1.0
}

fn default_width() -> f64 {
    0.5
}

impl InitialDatum {
    pub fn constant(height: f64) -> Self {
        Self {
            kind: DatumKind::Constant,
            height,
            width: default_width(),
            center: None,
            amplitude: 0.0,
            randomize_height: false,
            delta: 0.0,
        }
    }

    pub fn perturbed(height: f64, amplitude: f64) -> Self {
        Self {
            kind: DatumKind::PerturbedConstant,
            amplitude,
            ..Self::constant(height)
        }
    }

    pub fn bump(height: f64, width: f64) -> Self {
        Self {
            kind: DatumKind::Bump,
            width,
            ..Self::constant(height)
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self, len: f64) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.height >= 0.0 && self.height.is_finite()) {
            return bad(format!("initial height must be >= 0, got {}", self.height));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        match self.kind {
            DatumKind::PerturbedConstant if self.amplitude.abs() > self.height => {
                bad(format!(
                    "perturbation {} exceeds height {}; the datum would be negative",
                    self.amplitude, self.height
                ))
            }
            DatumKind::Bump if !(self.width > 0.0 && self.width <= len) => {
                bad(format!("bump width must lie in (0, L], got {}", self.width))
            }
            _ => Ok(()),
        }
    }

    /// Samples the datum; `stream` only feeds the randomized height.
    pub fn generate(&self, grid: &PeriodicGrid, stream: &RngStream) -> Result<GridFunction> {
        let len = grid.len();
        self.validate(len)?;
        let h = if self.randomize_height {
            self.height * (0.5 + 0.5 * stream.auxiliary_uniform(0))
        } else {
            self.height
        };
        let x0 = self.center.unwrap_or(0.5 * len);
        let base = match self.kind {
            DatumKind::Constant => grid.constant(h),
            DatumKind::PerturbedConstant => {
                let a = self.amplitude * h / self.height.max(f64::MIN_POSITIVE);
                grid.sample(|x| h + a * (2.0 * PI * x / len).cos())
            }
            DatumKind::Bump => {
                let w = self.width;
                grid.sample(|x| {
                    let d = (x - x0).rem_euclid(len);
                    let d = d.min(len - d);
                    if d <= 0.5 * w {
                        h * (PI * d / w).cos().powi(4)
                    } else {
                        0.0
                    }
                })
            }
        };
        Ok(base.map(|v| v.max(0.0) + self.delta))
    }
}

/// Order-preserving map over trajectory ids; `threads == 0` uses all cores.
pub fn parallel_map<T: Send>(count: usize, threads: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    if threads == 1 || count <= 1 {
        return Ok((0..count).map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(f).collect()))
}

/// Summary statistics of one quantity across trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean, `sd / sqrt(count)`.
    pub se: f64,
    pub min: f64,
    pub max: f64,
    /// `mean |x|^q` for every configured `q`.
    pub moments: Vec<f64>,
}

impl Stat {
    /// Sums are correctly rounded, so the result does not depend on the
    /// order of `values`.
    pub fn of(values: &[f64], q: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                se: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
                moments: vec![f64::NAN; q.len()],
            };
        }
        let mf = m as f64;
        let mean = exact_sum(values.iter().copied()) / mf;
        let se = if m > 1 && mean.is_finite() {
            let ss = exact_sum(values.iter().map(|v| (v - mean).powi(2)));
            (ss / (mf - 1.0)).sqrt() / mf.sqrt()
        } else {
            0.0
        };
        Self {
            count: m,
            mean,
            se,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            moments: q
                .iter()
                .map(|&qq| exact_sum(values.iter().map(|v| v.abs().powf(qq))) / mf)
                .collect(),
        }
    }
}

/// Per-trajectory result of an ensemble.
#[derive(Debug, Clone)]
pub struct TrajectoryOutcome {
    pub id: u64,
    pub result: std::result::Result<Trajectory, AdvanceFailure>,
}

impl TrajectoryOutcome {
    /// Series of the trajectory, partial if it failed.
    pub fn series(&self) -> &[Record] {
        match &self.result {
            Ok(t) => &t.series,
            Err(f) => &f.partial.series,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub trajectories: usize,
    pub completed: usize,
    pub frozen: usize,
    /// Ids of trajectories that failed (dt underflow or solver failure).
    pub degenerate: Vec<u64>,
    pub q: Vec<f64>,
    pub times: Vec<f64>,
    /// Statistics at every record time, keyed by series column or
    /// `"int <integrand>"` for monitored space-time integrals.
    pub series: BTreeMap<String, Vec<Stat>>,
    /// Statistics of `sup_t` of each quantity (max over record times).
    pub sup: BTreeMap<String, Stat>,
}

pub fn monitored_key(name: &str) -> String {
    format!("int {name}")
}

fn record_values(rec: &Record) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = SERIES_COLUMNS[1..]
        .iter()
        .zip(&rec.columns()[1..])
        .map(|(k, v)| ((*k).to_owned(), *v))
        .collect();
    for (name, v) in MONITORED.iter().zip(&rec.monitored) {
        out.push((monitored_key(name), *v));
    }
    out
}

/// Aggregates completed trajectories record by record.
pub fn summarize(outcomes: &[TrajectoryOutcome], q: &[f64]) -> EnsembleSummary {
    let done: Vec<&Trajectory> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let degenerate = outcomes.iter().filter(|o| o.result.is_err()).map(|o| o.id).collect();
    let frozen = done.iter().filter(|t| t.final_state.frozen).count();
    let times: Vec<f64> = done.first().map(|t| t.series.iter().map(|r| r.time).collect()).unwrap_or_default();
    let mut series: BTreeMap<String, Vec<Stat>> = BTreeMap::new();
    let mut sup: BTreeMap<String, Stat> = BTreeMap::new();
    if let Some(first) = done.first() {
        let keys: Vec<String> = record_values(&first.series[0]).into_iter().map(|(k, _)| k).collect();
        for (c, key) in keys.iter().enumerate() {
            let per_time = (0..times.len())
                .map(|r| {
                    let vals: Vec<f64> = done.iter().map(|t| record_values(&t.series[r])[c].1).collect();
                    Stat::of(&vals, q)
                })
                .collect();
            series.insert(key.clone(), per_time);
            let sups: Vec<f64> = done
                .iter()
                .map(|t| {
                    t.series
                        .iter()
                        .map(|rec| record_values(rec)[c].1)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            sup.insert(key.clone(), Stat::of(&sups, q));
        }
    }
    EnsembleSummary {
        trajectories: outcomes.len(),
        completed: done.len(),
        frozen,
        degenerate,
        q: q.to_vec(),
        times,
        series,
        sup,
    }
}

/// Runs `m` trajectories with ids `0..m` and streams `(base_seed, id)`.
pub fn run_trajectories(
    config: &SolverConfig,
    datum: &InitialDatum,
    m: usize,
    base_seed: u64,
    threads: usize,
) -> Result<Vec<TrajectoryOutcome>> {
    if m == 0 {
        return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
    }
    config.validate()?;
    datum.validate(config.grid.len())?;
    parallel_map(m, threads, |i| {
        let id = i as u64;
        let stream = RngStream::new(base_seed, id);
        let result = datum
            .generate(&config.grid, &stream)
            .map_err(|error| failure_without_steps(config, error, &stream))
            .and_then(|u0| stepper::advance(config, u0, stream));
        TrajectoryOutcome { id, result }
    })
}

fn failure_without_steps(config: &SolverConfig, error: Error, stream: &RngStream) -> AdvanceFailure {
    AdvanceFailure {
        error,
        partial: Box::new(Trajectory {
            series: Vec::new(),
            final_state: stepper::TrajectoryState::new(config.grid.constant(0.0), config, stream.clone()),
            step_stats: Default::default(),
            snapshots: Vec::new(),
        }),
    }
}

pub fn run_ensemble(
    config: &SolverConfig,
    datum: &InitialDatum,
    m: usize,
    base_seed: u64,
    q: &[f64],
    threads: usize,
) -> Result<(EnsembleSummary, Vec<TrajectoryOutcome>)> {
    let outcomes = run_trajectories(config, datum, m, base_seed, threads)?;
    Ok((summarize(&outcomes, q), outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetFunctional {
    Energy,
    Entropy,
}

/// Cumulative terms of the discrete Ito identity along one trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BudgetTerms {
    /// `Phi(u(t)) - Phi(u0)`.
    pub change: f64,
    /// Time integral of `<Phi'(u), fourth-order drift>`.
    pub fourth_order: f64,
    /// Time integral of `<Phi'(u), (C_Strat + S) term>`.
    pub correction: f64,
    /// Ito correction from the second variation.
    pub ito: f64,
    /// `change - fourth_order - correction - ito`.
    pub residual: f64,
}

fn budget_value(which: BudgetFunctional, u: &GridFunction, params: &ModelParams) -> Result<f64> {
    match which {
        BudgetFunctional::Energy => functionals::energy_eps(u, params),
        BudgetFunctional::Entropy => functionals::entropy(u, params.n),
    }
}

/// `(<Phi', D-(M D+p)>, <Phi', D-(c Mc D+u)>)` via summation by parts.
fn budget_rates(which: BudgetFunctional, u: &GridFunction, params: &ModelParams) -> Result<(f64, f64)> {
    let psi = match which {
        BudgetFunctional::Energy => dynamics::pressure(u, params)?,
        BudgetFunctional::Entropy => {
            u.require_positive()?;
            u.map(|v| functionals::entropy_density_d1(v, params.n))
        }
    };
    let dpsi = psi.face_gradient();
    let dp = dynamics::pressure(u, params)?.face_gradient();
    let du = u.face_gradient();
    let m = dynamics::face_mobility(u, params.n);
    let mc = dynamics::face_mobility(u, params.n - 2.0);
    let c = params.correction();
    let dx = u.grid().dx();
    let fourth = -exact_sum((0..dp.len()).map(|j| m[j] * dp[j] * dpsi[j])) * dx;
    let corr = -c * exact_sum((0..dp.len()).map(|j| mc[j] * du[j] * dpsi[j])) * dx;
    Ok((fourth, corr))
}

struct BudgetObserver {
    which: BudgetFunctional,
    params: ModelParams,
    value: f64,
    rates: (f64, f64),
    terms: BudgetTerms,
    history: Vec<BudgetTerms>,
}

impl BudgetObserver {
    fn new(which: BudgetFunctional, u0: &GridFunction, params: &ModelParams) -> Result<Self> {
        Ok(Self {
            which,
            params: *params,
            value: budget_value(which, u0, params)?,
            rates: budget_rates(which, u0, params)?,
            terms: BudgetTerms::default(),
            history: Vec::new(),
        })
    }
}

impl StepObserver for BudgetObserver {
    fn accepted(&mut self, info: &StepInfo<'_>, config: &SolverConfig) -> Result<()> {
        let p = &self.params;
        let value = budget_value(self.which, info.u_new, p)?;
        let rates = budget_rates(self.which, info.u_new, p)?;
        let half = 0.5 * info.dt;
        let fourth = half * (self.rates.0 + rates.0);
        let corr = half * (self.rates.1 + rates.1);

        let mut ito = 0.0;
        if !config.spec.is_silent() {
            let u = info.u_prev;
            let dx = u.grid().dx();
            let weight: Vec<f64> = match self.which {
                BudgetFunctional::Energy if p.eps > 0.0 => {
                    u.values().iter().map(|&v| p.eps * functionals::potential_d2(v, p.p)).collect()
                }
                BudgetFunctional::Energy => vec![0.0; u.len()],
                BudgetFunctional::Entropy => u.values().iter().map(|&v| v.powf(-p.n)).collect(),
            };
            let mut parts = Vec::with_capacity(info.faces.mode_count());
            for nu in info.faces.mode_fields(u, p.n)? {
                let v = info.operator.solve(nu.values(), config.solver_tol)?;
                let pot = exact_sum(v.iter().zip(&weight).map(|(x, w)| w * x * x)) * dx;
                let grad = match self.which {
                    BudgetFunctional::Energy => {
                        let n = v.len();
                        exact_sum((0..n).map(|j| ((v[(j + 1) % n] - v[j]) / dx).powi(2))) * dx
                    }
                    BudgetFunctional::Entropy => 0.0,
                };
                parts.push(grad + pot);
            }
            ito = half * exact_sum(parts);
        }

        let change = value - self.value;
        self.terms.change += change;
        self.terms.fourth_order += fourth;
        self.terms.correction += corr;
        self.terms.ito += ito;
        self.terms.residual += change - fourth - corr - ito;
        self.value = value;
        self.rates = rates;
        Ok(())
    }

    fn recorded(&mut self, _record: &Record) {
        self.history.push(self.terms);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub functional: BudgetFunctional,
    pub trajectories: usize,
    pub degenerate: Vec<u64>,
    pub times: Vec<f64>,
    pub mean_residual: Vec<f64>,
    pub se_residual: Vec<f64>,
    /// Ensemble means of the cumulative terms at each record time.
    pub mean_terms: Vec<BudgetTerms>,
}

impl BudgetReport {
    /// Largest `|mean| / SE` over record times after `t = 0`; infinite if a
    /// nonzero mean has zero standard error.
    pub fn max_standardized_residual(&self) -> f64 {
        self.mean_residual
            .iter()
            .zip(&self.se_residual)
            .skip(1)
            .map(|(m, s)| {
                if *s > 0.0 {
                    m.abs() / s
                } else if *m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Discrete Ito budget of the energy or entropy. Per accepted step the
/// residual gains `Phi(u+) - Phi(u) - dt <Phi', drift>_trap - Ito term`,
/// where the Ito term is `(dt/2) sum_k Phi''(u)[P nu_k, P nu_k]` with the
/// implicit solution operator `P` of the step.
pub fn ito_budget(
    config: &SolverConfig,
    datum: &InitialDatum,
    m: usize,
    base_seed: u64,
    which: BudgetFunctional,
    threads: usize,
) -> Result<BudgetReport> {
    if m == 0 {
        return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
    }
    config.validate()?;
    let runs = parallel_map(m, threads, |i| -> Result<Vec<BudgetTerms>> {
        let stream = RngStream::new(base_seed, i as u64);
        let u0 = datum.generate(&config.grid, &stream)?;
        let mut obs = BudgetObserver::new(which, &u0, &config.params)?;
        stepper::advance_observed(config, u0, stream, &mut obs).map_err(|f| f.error)?;
        Ok(obs.history)
    })?;
    let mut degenerate = Vec::new();
    let mut histories = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(h) => histories.push(h),
            Err(Error::StepFailure { .. }) | Err(Error::LinearSolveFailure(_)) => degenerate.push(i as u64),
            Err(e) => return Err(e),
        }
    }
    let records = config.record_count() + 1;
    let times = (0..records).map(|j| config.record_time(j)).collect();
    let mut mean_residual = Vec::with_capacity(records);
    let mut se_residual = Vec::with_capacity(records);
    let mut mean_terms = Vec::with_capacity(records);
    for r in 0..records {
        let col = |f: fn(&BudgetTerms) -> f64| -> Vec<f64> { histories.iter().map(|h| f(&h[r])).collect() };
        let res = Stat::of(&col(|t| t.residual), &[]);
        mean_residual.push(res.mean);
        se_residual.push(res.se);
        let mean = |f: fn(&BudgetTerms) -> f64| Stat::of(&col(f), &[]).mean;
        mean_terms.push(BudgetTerms {
            change: mean(|t| t.change),
            fourth_order: mean(|t| t.fourth_order),
            correction: mean(|t| t.correction),
            ito: mean(|t| t.ito),
            residual: res.mean,
        });
    }
    Ok(BudgetReport {
        functional: which,
        trajectories: m,
        degenerate,
        times,
        mean_residual,
        se_residual,
        mean_terms,
    })
}

struct QvObserver {
    /// `phi - mean(phi)`; the shift makes constant test functions exact zeros.
    psi: GridFunction,
    dphi: Vec<f64>,
    drift_pairing: f64,
    qv_rate: f64,
    martingale: f64,
    qv_empirical: f64,
    qv_formula: f64,
    history: Vec<(f64, f64, f64)>,
}

/// `<drift(u), phi> = -sum_j flux_j D+phi_j dx` over faces where both nodes
/// exceed the positivity floor.
fn weak_drift(u: &GridFunction, dphi: &[f64], config: &SolverConfig) -> Result<f64> {
    let flux = dynamics::drift_flux(u, &config.params)?;
    let level = config.pos_floor * u.max();
    let v = u.values();
    let n = v.len();
    let terms = (0..n).filter(|&j| v[j].min(v[(j + 1) % n]) > level).map(|j| flux.face_values()[j] * dphi[j]);
    Ok(-exact_sum(terms) * u.grid().dx())
}

/// `sum_k <nu_k, phi>^2`.
fn qv_density(u: &GridFunction, psi: &GridFunction, faces: &dynamics::NoiseFaces, n: f64) -> Result<f64> {
    Ok(exact_sum(faces.mode_fields(u, n)?.iter().map(|nu| nu.dot(psi).powi(2))))
}

impl QvObserver {
    fn new(u0: &GridFunction, phi: &GridFunction, config: &SolverConfig) -> Result<Self> {
        let mean = phi.integrate() / phi.grid().len();
        let psi = phi.map(|v| v - mean);
        let dphi = phi.face_gradient();
        let faces = dynamics::NoiseFaces::new(&config.spec, &config.grid)?;
        Ok(Self {
            drift_pairing: weak_drift(u0, &dphi, config)?,
            qv_rate: qv_density(u0, &psi, &faces, config.params.n)?,
            psi,
            dphi,
            martingale: 0.0,
            qv_empirical: 0.0,
            qv_formula: 0.0,
            history: Vec::new(),
        })
    }
}

impl StepObserver for QvObserver {
    fn accepted(&mut self, info: &StepInfo<'_>, config: &SolverConfig) -> Result<()> {
        let drift_pairing = weak_drift(info.u_new, &self.dphi, config)?;
        let qv_rate = qv_density(info.u_new, &self.psi, info.faces, config.params.n)?;
        let du = info.u_new.zip_map(info.u_prev, |a, b| a - b);
        let dm = du.dot(&self.psi) - 0.5 * info.dt * (self.drift_pairing + drift_pairing);
        self.martingale += dm;
        self.qv_empirical += dm * dm;
        self.qv_formula += 0.5 * info.dt * (self.qv_rate + qv_rate);
        self.drift_pairing = drift_pairing;
        self.qv_rate = qv_rate;
        Ok(())
    }

    fn recorded(&mut self, _record: &Record) {
        self.history.push((self.martingale, self.qv_empirical, self.qv_formula));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QvReport {
    pub trajectories: usize,
    pub degenerate: Vec<u64>,
    pub times: Vec<f64>,
    pub mean_martingale: Vec<f64>,
    pub se_martingale: Vec<f64>,
    pub mean_qv_empirical: Vec<f64>,
    pub mean_qv_formula: Vec<f64>,
    /// Standard error of the per-trajectory difference `QV_emp - QV_formula`.
    pub se_qv_gap: Vec<f64>,
    /// Largest `|M_phi(t)|` over trajectories and record times.
    pub max_abs_martingale: f64,
    /// Largest empirical quadratic variation over trajectories and times.
    pub max_qv_empirical: f64,
}

impl QvReport {
    /// `|mean QV_emp - mean QV_formula| / mean QV_formula` at the horizon.
    pub fn relative_qv_gap(&self) -> f64 {
        let (e, f) = (self.mean_qv_empirical.last(), self.mean_qv_formula.last());
        match (e, f) {
            (Some(e), Some(f)) if *f > 0.0 => (e - f).abs() / f,
            (Some(e), Some(_)) if *e == 0.0 => 0.0,
            _ => f64::INFINITY,
        }
    }

    /// `max(0.1, 3 SE(gap) / mean QV_formula)` at the horizon.
    pub fn qv_tolerance(&self) -> f64 {
        let f = self.mean_qv_formula.last().copied().unwrap_or(0.0);
        let se = self.se_qv_gap.last().copied().unwrap_or(0.0);
        if f > 0.0 {
            (3.0 * se / f).max(0.1)
        } else {
            0.1
        }
    }
}

/// Weak-form residual `M_phi(t)` and its quadratic variation along each
/// trajectory, compared with `int_0^t sum_k (lambda_k int (g_k u^(n/2))_x phi)^2`.
pub fn martingale_qv_test(
    config: &SolverConfig,
    datum: &InitialDatum,
    m: usize,
    base_seed: u64,
    phi: &GridFunction,
    threads: usize,
) -> Result<QvReport> {
    if m == 0 {
        return Err(Error::InvalidParameter("ensemble size must be at least 1".into()));
    }
    config.validate()?;
    if phi.grid() != &config.grid {
        return Err(Error::GridMismatch);
    }
    let runs = parallel_map(m, threads, |i| -> Result<Vec<(f64, f64, f64)>> {
        let stream = RngStream::new(base_seed, i as u64);
        let u0 = datum.generate(&config.grid, &stream)?;
        let mut obs = QvObserver::new(&u0, phi, config)?;
        stepper::advance_observed(config, u0, stream, &mut obs).map_err(|f| f.error)?;
        Ok(obs.history)
    })?;
    let mut degenerate = Vec::new();
    let mut histories = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(h) => histories.push(h),
            Err(Error::StepFailure { .. }) | Err(Error::LinearSolveFailure(_)) => degenerate.push(i as u64),
            Err(e) => return Err(e),
        }
    }
    let records = config.record_count() + 1;
    let mut report = QvReport {
        trajectories: m,
        degenerate,
        times: (0..records).map(|j| config.record_time(j)).collect(),
        mean_martingale: Vec::new(),
        se_martingale: Vec::new(),
        mean_qv_empirical: Vec::new(),
        mean_qv_formula: Vec::new(),
        se_qv_gap: Vec::new(),
        max_abs_martingale: 0.0,
        max_qv_empirical: 0.0,
    };
    for r in 0..records {
        let mart: Vec<f64> = histories.iter().map(|h| h[r].0).collect();
        let emp: Vec<f64> = histories.iter().map(|h| h[r].1).collect();
        let form: Vec<f64> = histories.iter().map(|h| h[r].2).collect();
        let gap: Vec<f64> = emp.iter().zip(&form).map(|(a, b)| a - b).collect();
        let sm = Stat::of(&mart, &[]);
        report.mean_martingale.push(sm.mean);
        report.se_martingale.push(sm.se);
        report.mean_qv_empirical.push(Stat::of(&emp, &[]).mean);
        report.mean_qv_formula.push(Stat::of(&form, &[]).mean);
        report.se_qv_gap.push(Stat::of(&gap, &[]).se);
        report.max_abs_martingale = mart.iter().fold(report.max_abs_martingale, |a, v| a.max(v.abs()));
        report.max_qv_empirical = emp.iter().fold(report.max_qv_empirical, |a, v| a.max(*v));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Eps,
    Delta,
}

/// Statistics whose across-axis ratio is gated for each sweep.
pub fn gated_statistics(axis: SweepAxis) -> Vec<String> {
    let mut keys = vec!["sup energy".to_owned()];
    let idx: &[usize] = match axis {
        SweepAxis::Eps => {
            keys.push("sup entropy".into());
            &[0, 1, 2, 3, 4]
        }
        SweepAxis::Delta => &[0, 1, 2, 5, 6, 7],
    };
    keys.extend(idx.iter().map(|&i| monitored_key(MONITORED[i])));
    keys
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub completed: usize,
    pub degenerate: Vec<u64>,
    pub frozen: usize,
    /// `E[X^q]` per statistic, one entry per `q`.
    pub moments: BTreeMap<String, Vec<f64>>,
    /// Standard error of `X^q` per statistic, one entry per `q`.
    pub se: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub q: Vec<f64>,
    pub points: Vec<SweepPoint>,
    /// `max / min` across axis values, per statistic and `q`.
    pub ratios: BTreeMap<String, Vec<f64>>,
    pub gated: Vec<String>,
    pub max_gated_ratio: f64,
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if values.iter().any(|v| !v.is_finite()) {
        f64::INFINITY
    } else if hi == lo {
        1.0
    } else if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Tabulates `E[sup_t X^q]` and `E[(int int Y)^q]` for every axis value and
/// reports their spread across the axis.
#[allow(clippy::too_many_arguments)]
pub fn estimate_sweep(
    template: &SolverConfig,
    datum: &InitialDatum,
    m: usize,
    base_seed: u64,
    axis: SweepAxis,
    values: &[f64],
    q: &[f64],
    threads: usize,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one axis value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut config = template.clone();
        config.monitor = true;
        let mut d = datum.clone();
        match axis {
            SweepAxis::Eps => config.params.eps = value,
            SweepAxis::Delta => {
                config.delta = value;
                d.delta = value;
            }
        }
        let outcomes = run_trajectories(&config, &d, m, base_seed, threads)?;
        let done: Vec<&Trajectory> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
        let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in &done {
            let sup = |f: fn(&Record) -> f64| t.series.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            samples.entry("sup energy".into()).or_default().push(sup(|r| r.energy));
            samples.entry("sup energy_eps".into()).or_default().push(sup(|r| r.energy_eps));
            samples.entry("sup entropy".into()).or_default().push(sup(|r| r.entropy));
            let last = t.series.last().expect("series has the initial record");
            samples.entry(monitored_key("u^n p_x^2")).or_default().push(last.dissipation);
            for (name, v) in MONITORED.iter().zip(&last.monitored) {
                samples.entry(monitored_key(name)).or_default().push(*v);
            }
        }
        let mut moments = BTreeMap::new();
        let mut se = BTreeMap::new();
        for (k, v) in samples {
            moments.insert(k.clone(), q.iter().map(|&qq| Stat::of(&v, &[qq]).moments[0]).collect());
            se.insert(
                k,
                q.iter()
                    .map(|&qq| Stat::of(&v.iter().map(|x| x.abs().powf(qq)).collect::<Vec<_>>(), &[]).se)
                    .collect(),
            );
        }
        points.push(SweepPoint {
            value,
            completed: done.len(),
            degenerate: outcomes.iter().filter(|o| o.result.is_err()).map(|o| o.id).collect(),
            frozen: done.iter().filter(|t| t.final_state.frozen).count(),
            moments,
            se,
        });
    }
    let mut ratios = BTreeMap::new();
    if let Some(first) = points.first() {
        for key in first.moments.keys() {
            let per_q = (0..q.len())
                .map(|iq| {
                    let v: Vec<f64> = points.iter().map(|p| p.moments.get(key).map_or(f64::NAN, |m| m[iq])).collect();
                    spread(&v)
                })
                .collect();
            ratios.insert(key.clone(), per_q);
        }
    }
    let gated = gated_statistics(axis);
    let max_gated_ratio = gated
        .iter()
        .flat_map(|k| ratios.get(k).cloned().unwrap_or_else(|| vec![f64::INFINITY]))
        .fold(1.0, f64::max);
    Ok(SweepReport {
        axis,
        q: q.to_vec(),
        points,
        ratios,
        gated,
        max_gated_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernisSummary {
    pub nodes: usize,
    /// Largest quotient per inequality with `zeta = 1`.
    pub max_ratio_unit: BTreeMap<String, f64>,
    /// Largest quotient per inequality with a compactly supported cutoff.
    pub max_ratio_cutoff: BTreeMap<String, f64>,
    pub all_finite: bool,
    pub degenerate_flags: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivitySummary {
    pub nodes: usize,
    pub max_c_p: f64,
    pub min_c_bar_p: f64,
    pub max_c_bar_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub samples: usize,
    pub bernis_ratios: Vec<BernisSummary>,
    /// Largest quotient at the finest grid over the one at the coarsest.
    pub bernis_resolution_factor: f64,
    /// Largest relative deviation of the basis relations, together with the
    /// orthonormality defect.
    pub onb_max_dev: f64,
    pub onb_max_abs_dev: f64,
    pub positivity_constants: Vec<PositivitySummary>,
}

/// Coefficients of a random positive trigonometric polynomial with at most
/// `modes` modes: `(offset, [(a_k, b_k)])`.
fn random_trig(stream: &mut RngStream, modes: usize) -> (f64, Vec<(f64, f64)>) {
    let z = stream.next_normals(2 * modes + 1);
    let coeffs: Vec<(f64, f64)> = (0..modes)
        .map(|k| (z[2 * k] / (k + 1) as f64, z[2 * k + 1] / (k + 1) as f64))
        .collect();
    let bound: f64 = coeffs.iter().map(|(a, b)| a.abs() + b.abs()).sum();
    let offset = bound + 0.05 + 0.5 * z[2 * modes].abs();
    (offset, coeffs)
}

fn eval_trig(x: f64, len: f64, offset: f64, coeffs: &[(f64, f64)]) -> f64 {
    offset
        + coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let w = 2.0 * PI * (k + 1) as f64 * x / len;
                a * w.cos() + b * w.sin()
            })
            .sum::<f64>()
}

/// Random positive trig polynomials checked against the Bernis quotients,
/// the positivity constants and the basis relations at several resolutions.
/// With `modes == 0` every sample is constant.
#[allow(clippy::too_many_arguments)]
pub fn inequality_battery(
    sample_count: usize,
    nodes: &[usize],
    len: f64,
    params: &ModelParams,
    modes: usize,
    spec: &NoiseSpectrum,
    seed: u64,
) -> Result<InequalityReport> {
    if sample_count == 0 || nodes.is_empty() {
        return Err(Error::InvalidParameter("battery needs samples and grids".into()));
    }
    let mut stream = RngStream::new(seed, 0);
    let samples: Vec<(f64, Vec<(f64, f64)>)> = (0..sample_count).map(|_| random_trig(&mut stream, modes)).collect();
    let mut bernis_ratios = Vec::new();
    let mut positivity_constants = Vec::new();
    let mut onb_max_dev = 0.0f64;
    let mut onb_max_abs_dev = 0.0f64;
    for &nn in nodes {
        let grid = PeriodicGrid::new(len, nn)?;
        let unit = grid.constant(1.0);
        let cutoff = grid.sample(|x| {
            let d = (x - 0.5 * len).abs();
            if d < 0.25 * len {
                (PI * d / (0.5 * len)).cos().powi(2)
            } else {
                0.0
            }
        });
        let mut unit_max: BTreeMap<String, f64> = BTreeMap::new();
        let mut cut_max: BTreeMap<String, f64> = BTreeMap::new();
        let mut all_finite = true;
        let mut flags = 0;
        let mut pos = PositivitySummary {
            nodes: nn,
            max_c_p: 0.0,
            min_c_bar_p: f64::INFINITY,
            max_c_bar_p: 0.0,
        };
        for (offset, coeffs) in &samples {
            let f = grid.sample(|x| eval_trig(x, len, *offset, coeffs));
            let floor = functionals::default_pos_floor(&f);
            for (zeta, acc) in [(&unit, &mut unit_max), (&cutoff, &mut cut_max)] {
                let r = functionals::bernis_check(&f, zeta, params.n, floor)?;
                flags += r.flags.len();
                for key in ["ratio_x6", "ratio_xx3", "ratio_xxx2"] {
                    let v = r.metadata[key];
                    all_finite &= v.is_finite();
                    let e = acc.entry(key.to_owned()).or_insert(0.0);
                    *e = e.max(v);
                }
            }
            if params.eps > 0.0 {
                let r = functionals::positivity_bound_check(&f, params)?;
                pos.max_c_p = pos.max_c_p.max(r.metadata["c_p"]);
                pos.min_c_bar_p = pos.min_c_bar_p.min(r.metadata["c_bar_p"]);
                pos.max_c_bar_p = pos.max_c_bar_p.max(r.metadata["c_bar_p"]);
            }
        }
        if spec.truncation() < nn / 4 {
            let onb = noise::onb_relation_values(spec, &grid)?;
            onb_max_abs_dev = onb_max_abs_dev.max(onb.max_abs_deviation);
            onb_max_dev = onb_max_dev.max(onb.max_rel_deviation);
            onb_max_dev = onb_max_dev.max(noise::orthonormality_deviation(spec.truncation(), &grid)?);
        }
        bernis_ratios.push(BernisSummary {
            nodes: nn,
            max_ratio_unit: unit_max,
            max_ratio_cutoff: cut_max,
            all_finite,
            degenerate_flags: flags,
        });
        positivity_constants.push(pos);
    }
    let overall = |s: &BernisSummary| {
        s.max_ratio_unit
            .values()
            .chain(s.max_ratio_cutoff.values())
            .copied()
            .fold(0.0, f64::max)
    };
    let first = overall(&bernis_ratios[0]);
    let last = overall(bernis_ratios.last().expect("at least one grid"));
    let bernis_resolution_factor = if first > 0.0 {
        last / first
    } else if last == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    Ok(InequalityReport {
        samples: sample_count,
        bernis_ratios,
        bernis_resolution_factor,
        onb_max_dev,
        onb_max_abs_dev,
        positivity_constants,
    })
}

/// Parameters of the manufactured solution `u* = h + a cos(2 pi x / L) cos t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmsSetup {
    pub params: ModelParams,
    pub len: f64,
    pub height: f64,
    pub amplitude: f64,
    pub horizon: f64,
    /// Step of the reference run used by temporal studies.
    pub reference_dt: f64,
}

impl MmsSetup {
    pub fn exact(&self, x: f64, t: f64) -> f64 {
        self.height + self.amplitude * (2.0 * PI * x / self.len).cos() * t.cos()
    }

    /// `d_t u* - (u^n p_x)_x - (C_Strat + S)(u^(n-2) u_x)_x` at `u = u*`.
    pub fn forcing(&self, x: f64, t: f64) -> f64 {
        let (n, pp, eps, c) = (self.params.n, self.params.p, self.params.eps, self.params.correction());
        let w = 2.0 * PI / self.len;
        let a = self.amplitude * t.cos();
        let (s, co) = (w * x).sin_cos();
        let u = self.height + a * co;
        let ux = -a * w * s;
        let uxx = -a * w * w * co;
        let uxxx = a * w.powi(3) * s;
        let uxxxx = a * w.powi(4) * co;
        let thin_film = -(n * u.powf(n - 1.0) * ux * uxxx + u.powf(n) * uxxxx);
        let potential = if eps > 0.0 {
            eps * pp * (pp + 1.0)
                * ((n - pp - 2.0) * u.powf(n - pp - 3.0) * ux * ux + u.powf(n - pp - 2.0) * uxx)
        } else {
            0.0
        };
        let correction = c * ((n - 2.0) * u.powf(n - 3.0) * ux * ux + u.powf(n - 2.0) * uxx);
        let ut = -self.amplitude * co * t.sin();
        ut - (thin_film + potential + correction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MmsStudy {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmsLevel {
    pub nodes: usize,
    pub dt: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MmsReport {
    pub study: MmsStudy,
    pub levels: Vec<MmsLevel>,
    /// Least-squares slope of `log error` against `log dx` or `log dt`;
    /// `None` when every error is at rounding level.
    pub order: Option<f64>,
    pub exact: bool,
}

fn mms_run(setup: &MmsSetup, nodes: usize, dt: f64) -> Result<GridFunction> {
    let grid = PeriodicGrid::new(setup.len, nodes)?;
    let mut config = SolverConfig::new(setup.params, grid, NoiseSpectrum::silent(setup.len), dt, setup.horizon);
    config.record_every = usize::MAX / 2;
    config.sigma_stop = 1e-12;
    config.dt_min = dt * 1e-3;
    let s = *setup;
    config.forcing = Some(Forcing::new(move |t, g| g.sample(|x| s.forcing(x, t))));
    let u0 = grid.sample(|x| setup.exact(x, 0.0));
    stepper::advance(&config, u0, RngStream::new(0, 0))
        .map(|t| t.final_state.u)
        .map_err(|f| f.error)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Manufactured-solution convergence. Levels sharing one `dt` form a
/// spatial study against the exact solution; levels sharing one `N` form a
/// temporal study against a reference run with `setup.reference_dt`.
pub fn mms_convergence(setup: &MmsSetup, levels: &[(usize, f64)]) -> Result<MmsReport> {
    if levels.len() < 3 {
        return Err(Error::InvalidParameter("a convergence study needs at least 3 levels".into()));
    }
    let same_dt = levels.iter().all(|l| l.1 == levels[0].1);
    let same_n = levels.iter().all(|l| l.0 == levels[0].0);
    let study = match (same_n, same_dt) {
        (false, true) => MmsStudy::Spatial,
        (true, false) => MmsStudy::Temporal,
        _ => {
            return Err(Error::InvalidParameter(
                "levels must vary either N (fixed dt) or dt (fixed N)".into(),
            ))
        }
    };
    let reference = match study {
        MmsStudy::Temporal => Some(mms_run(setup, levels[0].0, setup.reference_dt)?),
        MmsStudy::Spatial => None,
    };
    let mut out = Vec::with_capacity(levels.len());
    for &(nodes, dt) in levels {
        let u = mms_run(setup, nodes, dt)?;
        let target = match &reference {
            Some(r) => r.clone(),
            None => u.grid().sample(|x| setup.exact(x, setup.horizon)),
        };
        out.push(MmsLevel {
            nodes,
            dt,
            error: u.zip_map(&target, |a, b| a - b).max_abs(),
        });
    }
    let scale = setup.height.abs() + setup.amplitude.abs();
    let exact = out.iter().all(|l| l.error <= 1e-12 * scale);
    let order = if exact {
        None
    } else {
        let xs: Vec<f64> = out
            .iter()
            .map(|l| match study {
                MmsStudy::Spatial => (setup.len / l.nodes as f64).ln(),
                MmsStudy::Temporal => l.dt.ln(),
            })
            .collect();
        let ys: Vec<f64> = out.iter().map(|l| l.error.ln()).collect();
        Some(least_squares_slope(&xs, &ys))
    };
    Ok(MmsReport {
        study,
        levels: out,
        order,
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportReport {
    pub times: Vec<f64>,
    pub support_length: Vec<f64>,
    /// Endpoints of the support arc containing the maximum, or `NaN` when
    /// no snapshots were kept.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub nondecreasing: bool,
}

/// Support arc `[left, right]` through the maximum of `u`, measured at faces.
fn support_arc(u: &GridFunction, threshold: f64) -> (f64, f64) {
    let v = u.values();
    let n = v.len();
    let g = u.grid();
    if v.iter().all(|&x| x > threshold) {
        return (0.0, g.len());
    }
    let top = (0..n).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0);
    if v[top] <= threshold {
        return (g.node(top), g.node(top));
    }
    let mut l = 0;
    while v[(top + n - l - 1) % n] > threshold {
        l += 1;
    }
    let mut r = 0;
    while v[(top + r + 1) % n] > threshold {
        r += 1;
    }
    let dx = g.dx();
    (g.node(top) - (l as f64 + 0.5) * dx, g.node(top) + (r as f64 + 0.5) * dx)
}

/// Support length and endpoints along a trajectory.
pub fn support_diagnostic(trajectory: &Trajectory, threshold: f64) -> SupportReport {
    let times: Vec<f64> = trajectory.series.iter().map(|r| r.time).collect();
    let (support_length, left, right) = if trajectory.snapshots.len() == times.len() {
        let mut len = Vec::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        for u in &trajectory.snapshots {
            len.push(functionals::min_and_support(u, threshold).1);
            let (a, b) = support_arc(u, threshold);
            left.push(a);
            right.push(b);
        }
        (len, left, right)
    } else {
        (
            trajectory.series.iter().map(|r| r.support_length).collect(),
            vec![f64::NAN; times.len()],
            vec![f64::NAN; times.len()],
        )
    };
    let nondecreasing = support_length.windows(2).all(|w| w[1] >= w[0]);
    SupportReport {
        times,
        support_length,
        left,
        right,
        nondecreasing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64) -> ModelParams {
        ModelParams {
            n: 2.5,
            p: 4.0,
            eps,
            s: 0.0,
            c_strat: 0.0,
        }
    }

    fn noisy(eps: f64, nodes: usize, dt: f64, horizon: f64) -> SolverConfig {
        let grid = PeriodicGrid::new(1.0, nodes).unwrap();
        let spec = NoiseSpectrum::build(noise::SpectrumMode::PowerDecay, 0.2, 3.0, 4, 1.0).unwrap();
        let c = noise::c_strat(&spec, 2.5);
        let (_, star) = noise::s_thresholds(2.5, c).unwrap();
        let p = ModelParams {
            s: 2.0 * star,
            c_strat: c,
            ..params(eps)
        };
        SolverConfig::new(p, grid, spec, dt, horizon)
    }

    #[test]
    fn datum_shapes() {
        let g = PeriodicGrid::new(2.0, 64).unwrap();
        let s = RngStream::new(0, 0);
        let c = InitialDatum::constant(0.7).with_delta(0.1).generate(&g, &s).unwrap();
        assert!(c.values().iter().all(|&v| (v - 0.8).abs() < 1e-15));
        let b = InitialDatum::bump(1.0, 1.0).generate(&g, &s).unwrap();
        assert_eq!(b.max(), 1.0);
        assert_eq!(b.min(), 0.0);
        let (_, support) = functionals::min_and_support(&b, 0.0);
        assert!((support - 1.0).abs() <= 2.0 * g.dx());
        assert!(b.values().iter().all(|&v| v >= 0.0));
        let p = InitialDatum::perturbed(1.0, 0.5).generate(&g, &s).unwrap();
        assert!((p[0] - 1.5).abs() < 1e-15 && (p.min() - 0.5).abs() < 1e-12);
        assert!(InitialDatum::perturbed(1.0, 1.5).generate(&g, &s).is_err());

        let mut r = InitialDatum::bump(2.0, 1.0);
        r.randomize_height = true;
        let h0 = r.generate(&g, &RngStream::new(3, 0)).unwrap().max();
        let h1 = r.generate(&g, &RngStream::new(3, 1)).unwrap().max();
        assert!((1.0..=2.0).contains(&h0) && (1.0..=2.0).contains(&h1));
        assert_ne!(h0, h1);
        assert_eq!(h0, r.generate(&g, &RngStream::new(3, 0)).unwrap().max());
    }

    #[test]
    fn stat_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(s.moments, vec![2.5, 7.5]);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        let single = Stat::of(&[7.0], &[2.0]);
        assert_eq!((single.mean, single.se, single.moments[0]), (7.0, 0.0, 49.0));
    }

    #[test]
    fn deterministic_ensemble_has_zero_spread() {
        let mut cfg = noisy(1e-3, 32, 1e-4, 2e-3);
        cfg.spec = NoiseSpectrum::silent(1.0);
        cfg.params.c_strat = 0.0;
        let datum = InitialDatum::perturbed(1.0, 0.3).with_delta(0.1);
        let (summary, _) = run_ensemble(&cfg, &datum, 4, 1, &[1.0, 2.0], 1).unwrap();
        for stats in summary.series.values() {
            for s in stats {
                assert_eq!(s.se, 0.0);
            }
        }
    }

    #[test]
    fn single_trajectory_summary_matches_series() {
        let cfg = noisy(1e-3, 32, 1e-4, 2e-3);
        let datum = InitialDatum::perturbed(1.0, 0.3).with_delta(0.1);
        let (summary, outcomes) = run_ensemble(&cfg, &datum, 1, 5, &[1.0], 1).unwrap();
        let series = outcomes[0].series();
        for (r, rec) in series.iter().enumerate() {
            assert_eq!(summary.series["energy"][r].mean, rec.energy);
            assert_eq!(summary.series["mass"][r].mean, rec.mass);
            assert_eq!(summary.times[r], rec.time);
        }
    }

    #[test]
    fn ensemble_is_independent_of_threads_and_order() {
        let cfg = noisy(1e-3, 32, 1e-4, 2e-3);
        let datum = InitialDatum::perturbed(1.0, 0.3).with_delta(0.1);
        let (a, oa) = run_ensemble(&cfg, &datum, 6, 11, &[1.0, 2.0], 1).unwrap();
        let (b, _) = run_ensemble(&cfg, &datum, 6, 11, &[1.0, 2.0], 3).unwrap();
        assert_eq!(a, b);
        let mut reversed = oa.clone();
        reversed.reverse();
        assert_eq!(summarize(&reversed, &[1.0, 2.0]), a);
        let m0 = a.series["mass"][0].mean;
        for s in &a.series["mass"] {
            assert!((s.max - s.min).abs() <= 1e-10 * m0);
        }
    }

    #[test]
    fn budget_starts_at_zero_and_deterministic_residual_is_first_order() {
        let run = |dt: f64| {
            let mut cfg = noisy(1e-2, 32, dt, 2e-3);
            cfg.spec = NoiseSpectrum::silent(1.0);
            cfg.params.c_strat = 0.0;
            cfg.params.s = 0.5;
            cfg.record_every = (2e-4 / dt).round() as usize;
            let datum = InitialDatum::perturbed(1.0, 0.3).with_delta(0.1);
            ito_budget(&cfg, &datum, 1, 0, BudgetFunctional::Energy, 1).unwrap()
        };
        let a = run(2e-5);
        let b = run(1e-5);
        assert_eq!(a.mean_residual[0], 0.0);
        let (ra, rb) = (a.mean_residual.last().unwrap().abs(), b.mean_residual.last().unwrap().abs());
        let ratio = ra / rb;
        assert!((1.7..2.3).contains(&ratio), "{ra} {rb}");
    }

    #[test]
    fn qv_constant_test_function_is_exactly_zero() {
        let cfg = noisy(1e-3, 32, 1e-4, 2e-3);
        let datum = InitialDatum::perturbed(1.0, 0.3).with_delta(0.1);
        let phi = cfg.grid.constant(2.0);
        let r = martingale_qv_test(&cfg, &datum, 3, 0, &phi, 1).unwrap();
        assert_eq!(r.max_abs_martingale, 0.0);
        assert_eq!(r.max_qv_empirical, 0.0);
        assert!(r.mean_qv_formula.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sweep_with_equal_values_has_unit_ratios() {
        let cfg = noisy(1e-3, 32, 1e-4, 1e-3);
        let datum = InitialDatum::perturbed(1.0, 0.3).with_delta(0.1);
        let r = estimate_sweep(&cfg, &datum, 2, 0, SweepAxis::Eps, &[1e-2, 1e-2], &[1.0, 2.0], 1).unwrap();
        for v in r.ratios.values() {
            assert!(v.iter().all(|&x| x == 1.0));
        }
        assert_eq!(r.max_gated_ratio, 1.0);
    }

    #[test]
    fn constant_battery_is_degenerate() {
        let spec = NoiseSpectrum::build(noise::SpectrumMode::Flat, 1.0, 3.0, 8, 1.0).unwrap();
        let r = inequality_battery(5, &[64], 1.0, &params(1e-3), 0, &spec, 1).unwrap();
        let b = &r.bernis_ratios[0];
        assert_eq!(b.degenerate_flags, 5 * 3);
        assert!(b.max_ratio_cutoff.values().all(|&v| v == 0.0));
        assert!(b.max_ratio_unit.values().all(|&v| v == 0.0));
        assert!(r.onb_max_dev < 1e-12);
        assert_eq!(r.positivity_constants[0].max_c_p, 0.0);
    }

    #[test]
    fn steady_manufactured_solution_is_exact() {
        let setup = MmsSetup {
            params: ModelParams { c_strat: 0.1, s: 0.2, ..params(1e-3) },
            len: 1.0,
            height: 1.5,
            amplitude: 0.0,
            horizon: 0.01,
            reference_dt: 1e-5,
        };
        let r = mms_convergence(&setup, &[(32, 1e-3), (64, 1e-3), (128, 1e-3)]).unwrap();
        assert!(r.exact);
        assert_eq!(r.order, None);
        assert!(mms_convergence(&setup, &[(32, 1e-3), (64, 1e-4), (128, 1e-3)]).is_err());
    }

    #[test]
    fn manufactured_forcing_matches_discrete_drift() {
        // The forcing cancels the continuum drift: discrete drift + forcing ~ d_t u*.
        let setup = MmsSetup {
            params: ModelParams { c_strat: 0.1, s: 0.2, ..params(1e-2) },
            len: 1.0,
            height: 2.0,
            amplitude: 0.5,
            horizon: 0.1,
            reference_dt: 1e-5,
        };
        let t = 0.3;
        let err = |n: usize| {
            let g = PeriodicGrid::new(1.0, n).unwrap();
            let u = g.sample(|x| setup.exact(x, t));
            let f = g.sample(|x| setup.forcing(x, t));
            let d = dynamics::drift(&u, &setup.params, Some(&f)).unwrap();
            let ut = g.sample(|x| -0.5 * (2.0 * PI * x).cos() * t.sin());
            d.zip_map(&ut, |a, b| a - b).max_abs()
        };
        let (e1, e2) = (err(128), err(256));
        assert!((3.5..4.5).contains(&(e1 / e2)), "{e1} {e2}");
    }

    #[test]
    fn support_of_constant_and_bump() {
        let g = PeriodicGrid::new(1.0, 64).unwrap();
        let mut cfg = SolverConfig::new(params(0.0), g, NoiseSpectrum::silent(1.0), 1e-4, 1e-3);
        cfg.keep_snapshots = true;
        let t = stepper::advance(&cfg, g.constant(1.0), RngStream::new(0, 0)).unwrap();
        let r = support_diagnostic(&t, 1e-6);
        assert!(r.support_length.iter().all(|&l| (l - 1.0).abs() < 1e-12));
        assert!(r.left.iter().all(|&l| l == 0.0));

        let bump = InitialDatum::bump(1.0, 0.5).generate(&g, &RngStream::new(0, 0)).unwrap();
        let (a, b) = support_arc(&bump, 0.0);
        assert!((a - 0.25).abs() <= g.dx() && (b - 0.75).abs() <= g.dx());
    }
}
