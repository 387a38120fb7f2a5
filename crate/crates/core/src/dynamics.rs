//! Conservative finite-volume discretization of the drift and noise
//! operators. Every term is the backward difference of a face flux, so the
//! discrete mass is preserved exactly up to rounding.

use crate::error::{Error, Result};
use crate::functionals::{potential_d1, potential_d2, ModelParams};
use crate::grid::{exact_sum, GridFunction, PeriodicGrid};
use crate::linalg::CyclicPentadiagonal;
use crate::noise::NoiseSpectrum;

/// Values living on the faces `x_{j+1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    grid: PeriodicGrid,
    face_values: Vec<f64>,
}

impl FluxField {
    pub fn new(grid: PeriodicGrid, face_values: Vec<f64>) -> Result<Self> {
        if face_values.len() != grid.nodes() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, face_values })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn face_values(&self) -> &[f64] {
        &self.face_values
    }

    /// `(w_{i+1/2} - w_{i-1/2}) / dx`.
    pub fn divergence(&self) -> GridFunction {
        let n = self.face_values.len();
        let dx = self.grid.dx();
        GridFunction::from_raw(
            self.grid,
            (0..n)
                .map(|i| (self.face_values[i] - self.face_values[(i + n - 1) % n]) / dx)
                .collect(),
        )
    }
}

/// Strict positivity when the potential is active, nonnegativity otherwise.
fn check_admissible(f: &GridFunction, eps: f64) -> Result<()> {
    if eps > 0.0 {
        return f.require_positive();
    }
    match f.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        Some((index, &value)) => Err(Error::NonPositiveField { index, value }),
        None => Ok(()),
    }
}

/// `((f_j + f_{j+1}) / 2)^exponent` on every face.
pub fn face_mobility(f: &GridFunction, exponent: f64) -> Vec<f64> {
    let v = f.values();
    let n = v.len();
    (0..n)
        .map(|j| (0.5 * (v[j] + v[(j + 1) % n])).max(0.0).powf(exponent))
        .collect()
}

/// `p = -L f + eps F'(f)` with the compact Laplacian `L`.
pub fn pressure(f: &GridFunction, params: &ModelParams) -> Result<GridFunction> {
    if params.eps > 0.0 {
        f.require_positive()?;
    }
    let v = f.values();
    let n = v.len();
    let h2 = f.grid().dx().powi(2);
    Ok(GridFunction::from_raw(
        *f.grid(),
        (0..n)
            .map(|i| {
                let lap = (v[(i + 1) % n] - 2.0 * v[i] + v[(i + n - 1) % n]) / h2;
                let pot = if params.eps > 0.0 {
                    params.eps * potential_d1(v[i], params.p)
                } else {
                    0.0
                };
                -lap + pot
            })
            .collect(),
    ))
}

/// Face flux `M D+p + (C_Strat + S) Mc D+f`.
pub fn drift_flux(f: &GridFunction, params: &ModelParams) -> Result<FluxField> {
    check_admissible(f, params.eps)?;
    let p = pressure(f, params)?;
    let dp = p.face_gradient();
    let df = f.face_gradient();
    let m = face_mobility(f, params.n);
    let c = params.correction();
    let faces = if c != 0.0 {
        let mc = face_mobility(f, params.n - 2.0);
        (0..dp.len()).map(|j| m[j] * dp[j] + c * mc[j] * df[j]).collect()
    } else {
        (0..dp.len()).map(|j| m[j] * dp[j]).collect()
    };
    FluxField::new(*f.grid(), faces)
}

/// Deterministic right-hand side `D-(flux) + forcing`.
pub fn drift(f: &GridFunction, params: &ModelParams, forcing: Option<&GridFunction>) -> Result<GridFunction> {
    let mut d = drift_flux(f, params)?.divergence();
    if let Some(g) = forcing {
        if g.grid() != f.grid() {
            return Err(Error::GridMismatch);
        }
        for (di, gi) in d.values_mut().iter_mut().zip(g.values()) {
            *di += gi;
        }
    }
    Ok(d)
}

/// `sum_j M_j (D+p)_j^2 dx`, the instantaneous dissipation rate of the energy.
pub fn dissipation(f: &GridFunction, params: &ModelParams) -> Result<f64> {
    let p = pressure(f, params)?;
    let dp = p.face_gradient();
    let m = face_mobility(f, params.n);
    Ok(exact_sum(m.iter().zip(&dp).map(|(mj, g)| mj * g * g)) * f.grid().dx())
}

/// Basis functions of a spectrum sampled on the faces of a grid, scaled by
/// their coefficients: `rows[r][j] = lambda_k g_k(x_{j+1/2})` in the order of
/// [`NoiseSpectrum::modes`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFaces {
    grid: PeriodicGrid,
    rows: Vec<Vec<f64>>,
}

impl NoiseFaces {
    pub fn new(spec: &NoiseSpectrum, grid: &PeriodicGrid) -> Result<Self> {
        spec.check_grid(grid)?;
        let rows = spec
            .face_table(grid)
            .into_iter()
            .zip(spec.modes())
            .map(|(row, k)| {
                let lambda = spec.lambda(k);
                row.into_iter().map(|g| lambda * g).collect()
            })
            .collect();
        Ok(Self { grid: *grid, rows })
    }

    pub fn mode_count(&self) -> usize {
        self.rows.len()
    }

    /// Face average `(f_j^(n/2) + f_{j+1}^(n/2)) / 2`.
    fn half_power_average(f: &GridFunction, n: f64) -> Vec<f64> {
        let h: Vec<f64> = f.values().iter().map(|v| v.max(0.0).powf(0.5 * n)).collect();
        let len = h.len();
        (0..len).map(|j| 0.5 * (h[j] + h[(j + 1) % len])).collect()
    }

    /// `sum_k lambda_k dbeta_k D-(g_k avg f^(n/2))`.
    pub fn apply(&self, f: &GridFunction, increments: &[f64], n: f64) -> Result<GridFunction> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if increments.len() != self.rows.len() {
            return Err(Error::IncrementLength {
                got: increments.len(),
                expected: self.rows.len(),
            });
        }
        check_admissible(f, 0.0)?;
        let avg = Self::half_power_average(f, n);
        let mut w = vec![0.0; avg.len()];
        for (row, &db) in self.rows.iter().zip(increments) {
            if db == 0.0 {
                continue;
            }
            for (wj, gj) in w.iter_mut().zip(row) {
                *wj += db * gj;
            }
        }
        for (wj, a) in w.iter_mut().zip(&avg) {
            *wj *= a;
        }
        Ok(FluxField::new(self.grid, w)?.divergence())
    }

    /// Per-mode fields `nu_k = lambda_k D-(g_k avg f^(n/2))`, so that the
    /// noise operator equals `sum_k dbeta_k nu_k`.
    pub fn mode_fields(&self, f: &GridFunction, n: f64) -> Result<Vec<GridFunction>> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        check_admissible(f, 0.0)?;
        let avg = Self::half_power_average(f, n);
        self.rows
            .iter()
            .map(|row| {
                let w = row.iter().zip(&avg).map(|(g, a)| g * a).collect();
                Ok(FluxField::new(self.grid, w)?.divergence())
            })
            .collect()
    }
}

/// Noise term of one Euler-Maruyama step for increments `dbeta_k`, ordered
/// as [`NoiseSpectrum::modes`].
pub fn noise_operator(f: &GridFunction, increments: &[f64], spec: &NoiseSpectrum, n: f64) -> Result<GridFunction> {
    NoiseFaces::new(spec, f.grid())?.apply(f, increments, n)
}

pub fn noise_mode_fields(f: &GridFunction, spec: &NoiseSpectrum, n: f64) -> Result<Vec<GridFunction>> {
    NoiseFaces::new(spec, f.grid())?.mode_fields(f, n)
}

/// `I - dt J` where `J v = D-( M D+(-L v + eps F''(f) v) + (C_Strat + S) Mc D+v )`
/// is the linearization of the drift with mobilities frozen at `f`.
pub fn implicit_operator(f: &GridFunction, params: &ModelParams, dt: f64) -> Result<CyclicPentadiagonal> {
    check_admissible(f, params.eps)?;
    let v = f.values();
    let n = v.len();
    let dx = f.grid().dx();
    let dx3 = dx.powi(3);
    let m = face_mobility(f, params.n);
    let c = params.correction();
    let mc = if c != 0.0 {
        face_mobility(f, params.n - 2.0)
    } else {
        vec![0.0; n]
    };
    let e: Vec<f64> = if params.eps > 0.0 {
        v.iter().map(|&u| params.eps * potential_d2(u, params.p)).collect()
    } else {
        vec![0.0; n]
    };
    // phi[j][m + 1]: coefficient of v_{j+m}, m = -1..=2, in the flux at face j.
    let phi: Vec<[f64; 4]> = (0..n)
        .map(|j| {
            let mj = m[j];
            let cm = c * mc[j] / dx;
            [
                mj / dx3,
                -3.0 * mj / dx3 - mj * e[j] / dx - cm,
                3.0 * mj / dx3 + mj * e[(j + 1) % n] / dx + cm,
                -mj / dx3,
            ]
        })
        .collect();
    let mut a = CyclicPentadiagonal::identity(n)?;
    for i in 0..n {
        let prev = &phi[(i + n - 1) % n];
        let cur = &phi[i];
        for off in -2..=2isize {
            let here = if (-1..=2).contains(&off) { cur[(off + 1) as usize] } else { 0.0 };
            let there = if (-2..=1).contains(&off) { prev[(off + 2) as usize] } else { 0.0 };
            a.add(i, off, -dt * (here - there) / dx);
        }
    }
    Ok(a)
}
