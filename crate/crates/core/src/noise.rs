//! Q-Wiener noise: trigonometric eigenbasis, coefficient spectra, the
//! Stratonovich constant, admissibility thresholds for `S`, and Brownian
//! increment sampling from counter-based streams.
//!
//! Modes are indexed by `k` in `-K..=K`; `k > 0` are sines, `k < 0` cosines
//! and `k = 0` the constant. Coefficients are stored by `|k|`, so the
//! symmetry `lambda_k = lambda_{-k}` holds by construction.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PeriodicGrid;

/// `g_k(x)`: `sqrt(2/L) sin(2 pi k x / L)` for `k > 0`, `1/sqrt(L)` for
/// `k = 0`, `sqrt(2/L) cos(2 pi k x / L)` for `k < 0`.
pub fn basis_eval(k: i64, x: f64, len: f64) -> f64 {
    basis_derivative(k, x, len, 0)
}

/// Analytic derivative of order `order` (0, 1 or 2) of `g_k` at `x`.
pub fn basis_derivative(k: i64, x: f64, len: f64, order: u8) -> f64 {
    if k == 0 {
        return if order == 0 { 1.0 / len.sqrt() } else { 0.0 };
    }
    let amp = (2.0 / len).sqrt();
    let w = 2.0 * PI * k as f64 / len;
    let (s, c) = (w * x).sin_cos();
    match (k > 0, order) {
        (true, 0) => amp * s,
        (true, 1) => amp * w * c,
        (true, _) => -amp * w * w * s,
        (false, 0) => amp * c,
        (false, 1) => -amp * w * s,
        (false, _) => -amp * w * w * c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMode {
    /// Only the constant mode is active.
    Single,
    /// `lambda_0 = A`, `lambda_k = A |k|^-decay`.
    PowerDecay,
    /// `lambda_k = A` for every `|k| <= K`.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    truncation: usize,
    /// `coefficients[m] = lambda_{+m} = lambda_{-m}`.
    coefficients: Vec<f64>,
    len: f64,
}

impl NoiseSpectrum {
    /// Builds a spectrum from the coefficients of `|k| = 0..=K`.
    pub fn from_coefficients(len: f64, coefficients: Vec<f64>) -> Result<Self> {
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidLength(len));
        }
        if coefficients.is_empty() {
            return Err(Error::InvalidParameter(
                "a spectrum needs at least the k = 0 coefficient".into(),
            ));
        }
        if let Some((mode, &value)) = coefficients
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidCoefficient { mode, value });
        }
        Ok(Self {
            truncation: coefficients.len() - 1,
            coefficients,
            len,
        })
    }

    pub fn build(mode: SpectrumMode, amplitude: f64, decay: f64, k: usize, len: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidAmplitude(amplitude));
        }
        let coefficients = match mode {
            SpectrumMode::Single => {
                let mut c = vec![0.0; k + 1];
                c[0] = amplitude;
                c
            }
            SpectrumMode::Flat => vec![amplitude; k + 1],
            SpectrumMode::PowerDecay => {
                if !(decay > 2.5) {
                    return Err(Error::DecayTooWeak(decay));
                }
                (0..=k)
                    .map(|m| {
                        if m == 0 {
                            amplitude
                        } else {
                            amplitude * (m as f64).powf(-decay)
                        }
                    })
                    .collect()
            }
        };
        Self::from_coefficients(len, coefficients)
    }

    /// A spectrum with every coefficient zero (deterministic dynamics).
    pub fn silent(len: f64) -> Self {
        Self {
            truncation: 0,
            coefficients: vec![0.0],
            len,
        }
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn lambda(&self, k: i64) -> f64 {
        self.coefficients
            .get(k.unsigned_abs() as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// Number of modes `2K + 1`.
    pub fn mode_count(&self) -> usize {
        2 * self.truncation + 1
    }

    /// Mode labels in increment order, `-K..=K`.
    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let k = self.truncation as i64;
        -k..=k
    }

    pub fn is_silent(&self) -> bool {
        self.coefficients.iter().all(|&c| c == 0.0)
    }

    /// `sum_{|k| <= K} k^4 lambda_k^2`.
    pub fn colored_sum(&self) -> f64 {
        self.modes()
            .map(|k| (k as f64).powi(4) * self.lambda(k).powi(2))
            .sum()
    }

    /// `lambda_0^2 / L + sum_{k >= 1} 2 lambda_k^2 / L`, the constant value of
    /// `sum_k lambda_k^2 g_k(x)^2`.
    pub fn variance_density(&self) -> f64 {
        let tail: f64 = self.coefficients[1..].iter().map(|c| 2.0 * c * c).sum();
        (self.coefficients[0].powi(2) + tail) / self.len
    }

    pub fn check_grid(&self, grid: &PeriodicGrid) -> Result<()> {
        if (self.len - grid.len()).abs() > 1e-12 * grid.len() {
            return Err(Error::InvalidParameter(format!(
                "noise spectrum length {} does not match grid length {}",
                self.len,
                grid.len()
            )));
        }
        Ok(())
    }

    /// `g_k` tabulated at the faces of `grid`, one row per mode `-K..=K`.
    pub fn face_table(&self, grid: &PeriodicGrid) -> Vec<Vec<f64>> {
        self.modes()
            .map(|k| {
                (0..grid.nodes())
                    .map(|j| basis_eval(k, grid.face(j), self.len))
                    .collect()
            })
            .collect()
    }
}

/// `C_Strat = (1/2)(n^2/4)(lambda_0^2/L + sum_{k>=1} 2 lambda_k^2 / L)`.
pub fn c_strat(spectrum: &NoiseSpectrum, n: f64) -> f64 {
    0.5 * (n * n / 4.0) * spectrum.variance_density()
}

/// Lower bounds on `S` from the two admissibility conditions, returned as
/// `(S_A3, S_A3star)`.
pub fn s_thresholds(n: f64, c_strat: f64) -> Result<(f64, f64)> {
    if !(n > 2.0 && n < 3.0) {
        return Err(Error::MobilityOutOfRange(n));
    }
    let s_a3 = c_strat * 3.0 * 2f64.powf(4.0 - n) * (n - 2.0) / (3.0 - n);
    let s_a3_star = c_strat * 2.25 * (n - 2.0).powi(2) / ((3.0 - n) * (2.0 * n - 3.0));
    Ok((s_a3, s_a3_star))
}

/// Maximum deviation of the six pointwise basis sums from their closed forms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnbReport {
    /// Closed-form right-hand sides, in the order
    /// `g^2`, `g_x^2`, `g g_x`, `g_xx^2`, `g_x g_xx`, `g g_xx`.
    pub closed_forms: [f64; 6],
    /// Largest absolute deviation over nodes, per relation.
    pub abs_deviation: [f64; 6],
    /// Largest deviation relative to `sum_k lambda_k^2 |term_k|`, per relation.
    pub rel_deviation: [f64; 6],
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
}

pub fn onb_relation_values(spectrum: &NoiseSpectrum, grid: &PeriodicGrid) -> Result<OnbReport> {
    let limit = grid.nodes() / 4;
    if spectrum.truncation() >= limit {
        return Err(Error::TruncationTooLarge {
            k: spectrum.truncation(),
            limit,
        });
    }
    spectrum.check_grid(grid)?;
    let len = spectrum.len();
    let (mut s_x2, mut s_xx2) = (0.0, 0.0);
    for m in 1..=spectrum.truncation() {
        let l2 = spectrum.lambda(m as i64).powi(2);
        let k = m as f64;
        s_x2 += 8.0 * PI * PI * k * k * l2 / len.powi(3);
        s_xx2 += 32.0 * PI.powi(4) * k.powi(4) * l2 / len.powi(5);
    }
    let closed_forms = [spectrum.variance_density(), s_x2, 0.0, s_xx2, 0.0, -s_x2];

    let mut abs_deviation = [0.0f64; 6];
    let mut rel_deviation = [0.0f64; 6];
    for i in 0..grid.nodes() {
        let x = grid.node(i);
        let mut sums = [0.0f64; 6];
        let mut scales = [0.0f64; 6];
        for k in spectrum.modes() {
            let l2 = spectrum.lambda(k).powi(2);
            if l2 == 0.0 {
                continue;
            }
            let g = basis_derivative(k, x, len, 0);
            let gx = basis_derivative(k, x, len, 1);
            let gxx = basis_derivative(k, x, len, 2);
            let terms = [g * g, gx * gx, g * gx, gxx * gxx, gx * gxx, g * gxx];
            for r in 0..6 {
                sums[r] += l2 * terms[r];
                scales[r] += l2 * terms[r].abs();
            }
        }
        for r in 0..6 {
            let dev = (sums[r] - closed_forms[r]).abs();
            abs_deviation[r] = abs_deviation[r].max(dev);
            let rel = if scales[r] > 0.0 { dev / scales[r] } else { dev };
            rel_deviation[r] = rel_deviation[r].max(rel);
        }
    }
    Ok(OnbReport {
        closed_forms,
        max_abs_deviation: abs_deviation.iter().copied().fold(0.0, f64::max),
        max_rel_deviation: rel_deviation.iter().copied().fold(0.0, f64::max),
        abs_deviation,
        rel_deviation,
    })
}

/// `max |integrate(g_k g_l) - delta_kl|` over `|k|, |l| <= K` on `grid`.
pub fn orthonormality_deviation(truncation: usize, grid: &PeriodicGrid) -> Result<f64> {
    let limit = grid.nodes() / 4;
    if truncation >= limit {
        return Err(Error::TruncationTooLarge {
            k: truncation,
            limit,
        });
    }
    let k = truncation as i64;
    let table: Vec<_> = (-k..=k)
        .map(|m| grid.sample(|x| basis_eval(m, x, grid.len())))
        .collect();
    let mut worst = 0.0f64;
    for (a, ga) in table.iter().enumerate() {
        for (b, gb) in table.iter().enumerate() {
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((ga.dot(gb) - target).abs());
        }
    }
    Ok(worst)
}

/// Counter-based random stream: every draw is a pure function of
/// `(base_seed, trajectory_id, counter)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub trajectory_id: u64,
    pub counter: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(base_seed: u64, trajectory_id: u64) -> Self {
        Self {
            base_seed,
            trajectory_id,
            counter: 0,
        }
    }

    fn generator(&self, domain: u64, counter: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut state = splitmix64(self.base_seed ^ domain);
        for (w, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let mixed = match w {
                0 => state,
                1 => splitmix64(state ^ self.trajectory_id),
                2 => splitmix64(state.rotate_left(17) ^ counter),
                _ => splitmix64(state ^ self.trajectory_id.rotate_left(32) ^ counter.rotate_left(7)),
            };
            state = splitmix64(mixed);
            chunk.copy_from_slice(&mixed.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    /// `count` standard normal draws; advances the counter by one.
    pub fn next_normals(&mut self, count: usize) -> Vec<f64> {
        let mut rng = self.generator(0, self.counter);
        self.counter += 1;
        (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// A uniform draw on `[0, 1)` from a side channel keyed by `tag`; does
    /// not touch the increment counter.
    pub fn auxiliary_uniform(&self, tag: u64) -> f64 {
        use rand::Rng;
        self.generator(0xA5A5_5A5A_0F0F_F0F0, tag).random::<f64>()
    }
}

/// Brownian increments `d beta_k ~ N(0, dt)` for `k = -K..=K`.
pub fn sample_increments(spectrum: &NoiseSpectrum, dt: f64, stream: &mut RngStream) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let scale = dt.sqrt();
    Ok(stream
        .next_normals(spectrum.mode_count())
        .into_iter()
        .map(|z| z * scale)
        .collect())
}
