//! Scalar functionals and inequality diagnostics: mass, energies, entropies,
//! weighted Sobolev integrals, Bernis quotients, positivity constants and
//! the derived constants of the energy-entropy estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{exact_sum, Derivative, GridFunction};
use crate::noise;

/// Model exponents and strengths shared by the dynamics and functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mobility exponent, in `(2, 3)`.
    pub n: f64,
    /// Potential exponent `F(u) = u^-p`, `p > 2`.
    pub p: f64,
    /// Potential strength.
    pub eps: f64,
    /// Extra dissipativity `S` on top of the Stratonovich correction.
    pub s: f64,
    pub c_strat: f64,
}

impl ModelParams {
    /// Basic range checks; `strict` additionally requires `S > S_A3star`.
    pub fn validate(&self, strict: bool) -> Result<()> {
        if !(self.n > 2.0 && self.n < 3.0) {
            return Err(Error::MobilityOutOfRange(self.n));
        }
        if !(self.p > 2.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p must exceed 2, got {}", self.p)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {}", self.eps)));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidParameter(format!("S must be >= 0, got {}", self.s)));
        }
        if !(self.c_strat >= 0.0 && self.c_strat.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "C_Strat must be >= 0, got {}",
                self.c_strat
            )));
        }
        if strict {
            let (_, a3_star) = noise::s_thresholds(self.n, self.c_strat)?;
            if !(self.s > a3_star) && self.c_strat > 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "S = {} does not exceed the threshold {a3_star}",
                    self.s
                )));
            }
        }
        Ok(())
    }

    /// Coefficient `C_Strat + S` of the second-order correction term.
    pub fn correction(&self) -> f64 {
        self.c_strat + self.s
    }
}

/// Named scalar result with an auxiliary breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub name: String,
    pub value: f64,
    pub metadata: BTreeMap<String, f64>,
    /// Degenerate situations, e.g. `"ratio_x6: 0/0"` or `"divergent"`.
    pub flags: Vec<String>,
}

impl FunctionalReport {
    fn new(name: &str, value: f64) -> Self {
        Self {
            name: name.to_owned(),
            value,
            metadata: BTreeMap::new(),
            flags: Vec::new(),
        }
    }
}

/// `F(u) = u^-p`.
pub fn potential(u: f64, p: f64) -> f64 {
    u.powf(-p)
}

/// `F'(u) = -p u^(-p-1)`.
pub fn potential_d1(u: f64, p: f64) -> f64 {
    -p * u.powf(-p - 1.0)
}

/// `F''(u) = p (p+1) u^(-p-2)`.
pub fn potential_d2(u: f64, p: f64) -> f64 {
    p * (p + 1.0) * u.powf(-p - 2.0)
}

pub fn mass(f: &GridFunction) -> f64 {
    f.integrate()
}

/// `(1/2) sum_j ((f_{j+1} - f_j)/dx)^2 dx`.
///
/// The face-difference form is the quadratic form of the compact Laplacian,
/// so its variational derivative is exactly the discrete pressure used by
/// the dynamics.
pub fn gradient_energy(f: &GridFunction) -> f64 {
    0.5 * exact_sum(f.face_gradient().into_iter().map(|g| g * g)) * f.grid().dx()
}

/// `E^eps[u] = (1/2) int u_x^2 + eps int u^-p`; with `eps = 0` this is the
/// plain surface energy.
pub fn energy_eps(f: &GridFunction, params: &ModelParams) -> Result<f64> {
    let mut e = gradient_energy(f);
    if params.eps > 0.0 {
        f.require_positive()?;
        e += params.eps * f.map(|u| potential(u, params.p)).integrate();
    }
    Ok(e)
}

/// `G(u) = u^(2-n)/((n-1)(n-2)) + u/(n-1) - 1/(n-2)`, the second
/// antiderivative of `u^-n` vanishing with its slope at `u = 1`.
pub fn entropy_density(u: f64, n: f64) -> f64 {
    u.powf(2.0 - n) / ((n - 1.0) * (n - 2.0)) + u / (n - 1.0) - 1.0 / (n - 2.0)
}

/// `G'(u) = (1 - u^(1-n)) / (n-1)`.
pub fn entropy_density_d1(u: f64, n: f64) -> f64 {
    (1.0 - u.powf(1.0 - n)) / (n - 1.0)
}

pub fn entropy(f: &GridFunction, n: f64) -> Result<f64> {
    f.require_positive()?;
    Ok(f.map(|u| entropy_density(u, n)).integrate())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 || alpha == -1.0 || !alpha.is_finite() {
        return Err(Error::AlphaSingular(alpha));
    }
    Ok(())
}

/// `G_alpha(u) = u^(alpha+1)/(alpha(alpha+1)) - u/alpha + 1/(alpha+1)`, so
/// that `G_alpha'' = u^(alpha-1)` and `G_alpha(1) = G_alpha'(1) = 0`.
pub fn alpha_entropy_density(u: f64, alpha: f64) -> f64 {
    u.powf(alpha + 1.0) / (alpha * (alpha + 1.0)) - u / alpha + 1.0 / (alpha + 1.0)
}

pub fn alpha_entropy(f: &GridFunction, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    f.require_positive()?;
    Ok(f.map(|u| alpha_entropy_density(u, alpha)).integrate())
}

/// `int f^a |D^m f|^q`.
pub fn weighted_integral(f: &GridFunction, a: f64, m: Derivative, q: f64) -> Result<f64> {
    let weight = if a == 0.0 {
        f.map(|_| 1.0)
    } else {
        let needs_positive = a < 0.0 || a.fract() != 0.0;
        if needs_positive {
            f.require_positive()?;
        }
        f.pointwise_power(a)?
    };
    let d = f.deriv(m);
    Ok(weight.zip_map(&d, |w, g| w * g.abs().powf(q)).integrate())
}

/// `max(f, 0)^a` for `a > 0`, so compactly supported fields are admissible.
fn nonneg_power(f: &GridFunction, a: f64) -> GridFunction {
    f.map(|v| v.max(0.0).powf(a))
}

/// Default positivity floor for restricted integrals, `1e-8 max f`.
pub fn default_pos_floor(f: &GridFunction) -> f64 {
    1e-8 * f.max().max(0.0)
}

fn quotient(report: &mut FunctionalReport, key: &str, num: f64, den: f64) -> f64 {
    let r = if den > 0.0 {
        num / den
    } else if num > 0.0 {
        report.flags.push(format!("{key}: unbounded"));
        f64::INFINITY
    } else {
        report.flags.push(format!("{key}: 0/0"));
        0.0
    };
    report.metadata.insert(key.to_owned(), r);
    r
}

/// Weighted Bernis quotients. The three left-hand sides
/// `int z^6 |(u^((n+2)/6))_x|^6`, `int z^6 |(u^((n+2)/3))_xx|^3`,
/// `int z^6 |(u^((n+2)/2))_xxx|^2` are each divided by
/// `int_{u > floor} z^6 u^n |u_xxx|^2 + int |z_x|^6 u^(n+2)`.
/// Third-derivative integrands only count nodes with `u > pos_floor`.
/// `value` is the largest quotient.
pub fn bernis_check(
    f: &GridFunction,
    zeta: &GridFunction,
    n: f64,
    pos_floor: f64,
) -> Result<FunctionalReport> {
    if f.grid() != zeta.grid() {
        return Err(Error::GridMismatch);
    }
    let z6 = zeta.map(|z| z.powi(6));
    let zx6 = zeta.deriv(Derivative::First).map(|z| z.powi(6));
    let above: Vec<bool> = f.values().iter().map(|&v| v > pos_floor).collect();
    let masked = |g: &GridFunction| {
        GridFunction::from_raw(
            *g.grid(),
            g.values()
                .iter()
                .zip(&above)
                .map(|(&v, &keep)| if keep { v } else { 0.0 })
                .collect(),
        )
    };

    let lhs_x6 = z6
        .zip_map(
            &nonneg_power(f, (n + 2.0) / 6.0).deriv(Derivative::First),
            |z, d| z * d.powi(6),
        )
        .integrate();
    let lhs_xx3 = z6
        .zip_map(
            &nonneg_power(f, (n + 2.0) / 3.0).deriv(Derivative::Second),
            |z, d| z * d.abs().powi(3),
        )
        .integrate();
    let lhs_xxx2 = masked(&z6.zip_map(
        &nonneg_power(f, (n + 2.0) / 2.0).deriv(Derivative::Third),
        |z, d| z * d * d,
    ))
    .integrate();
    let uxxx = f.deriv(Derivative::Third);
    let rhs_diss = masked(&GridFunction::from_raw(
        *f.grid(),
        (0..f.len())
            .map(|i| z6[i] * f[i].max(0.0).powf(n) * uxxx[i] * uxxx[i])
            .collect(),
    ))
    .integrate();
    let rhs_cut = zx6
        .zip_map(&nonneg_power(f, n + 2.0), |z, u| z * u)
        .integrate();

    let mut report = FunctionalReport::new("bernis", 0.0);
    for (k, v) in [
        ("lhs_x6", lhs_x6),
        ("lhs_xx3", lhs_xx3),
        ("lhs_xxx2", lhs_xxx2),
        ("rhs_dissipation", rhs_diss),
        ("rhs_cutoff", rhs_cut),
    ] {
        report.metadata.insert(k.to_owned(), v);
    }
    let den = rhs_diss + rhs_cut;
    let r1 = quotient(&mut report, "ratio_x6", lhs_x6, den);
    let r2 = quotient(&mut report, "ratio_xx3", lhs_xx3, den);
    let r3 = quotient(&mut report, "ratio_xxx2", lhs_xxx2, den);
    report.value = r1.max(r2).max(r3);
    Ok(report)
}

/// `H_eps[u] = (1/2) int (u_x^2 + eps u^-p)`, the functional controlling
/// the positivity bounds.
pub fn positivity_functional(f: &GridFunction, eps: f64, p: f64) -> Result<f64> {
    f.require_positive()?;
    Ok(gradient_energy(f) + 0.5 * eps * f.map(|u| potential(u, p)).integrate())
}

/// Denominator `eps^(1/(2-p)) H^(2/(p-2))` of the sup-bound constant.
pub fn sup_bound_scale(eps: f64, h: f64, p: f64) -> f64 {
    eps.powf(1.0 / (2.0 - p)) * h.powf(2.0 / (p - 2.0))
}

/// Denominator `eps^(1/(p-2)) sigma^(2/(p-2))` of the minimum-bound constant.
pub fn min_bound_scale(eps: f64, sigma: f64, p: f64) -> f64 {
    eps.powf(1.0 / (p - 2.0)) * sigma.powf(2.0 / (p - 2.0))
}

/// Empirical constants of the positivity bounds:
/// `C_p = (max 1/u - (mean u)^-1) / (eps^(1/(2-p)) H^(2/(p-2)))` and
/// `Cbar_p = min u / (eps^(1/(p-2)) sigma^(2/(p-2)))` with
/// `sigma = 1 / max(1, H)`.
pub fn positivity_bound_check(f: &GridFunction, params: &ModelParams) -> Result<FunctionalReport> {
    f.require_positive()?;
    if !(params.eps > 0.0) {
        return Err(Error::InvalidParameter("positivity bounds need epsilon > 0".into()));
    }
    if !(params.p > 2.0) {
        return Err(Error::InvalidParameter("positivity bounds need p > 2".into()));
    }
    let h = positivity_functional(f, params.eps, params.p)?;
    let mean = mass(f) / f.grid().len();
    let numerator = (1.0 / f.min() - 1.0 / mean).max(0.0);
    let sup_scale = sup_bound_scale(params.eps, h, params.p);
    let sigma = 1.0 / h.max(1.0);
    let min_scale = min_bound_scale(params.eps, sigma, params.p);

    let mut report = FunctionalReport::new("positivity", numerator / sup_scale);
    report.metadata.insert("c_p".into(), numerator / sup_scale);
    report.metadata.insert("c_bar_p".into(), f.min() / min_scale);
    report.metadata.insert("h_eps".into(), h);
    report.metadata.insert("sigma".into(), sigma);
    report.metadata.insert("sup_numerator".into(), numerator);
    report.metadata.insert("sup_scale".into(), sup_scale);
    report.metadata.insert("min_scale".into(), min_scale);
    Ok(report)
}

/// Admissible window for the auxiliary exponent of the alpha-entropy
/// estimate: `(t + 1 -/+ sqrt((t-2)(1-2t))) / 3` with `t = alpha + n`.
pub fn gamma_range(alpha: f64, n: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let t = alpha + n;
    if !(0.5..=2.0).contains(&t) {
        return Err(Error::AlphaOutOfRange { alpha, n });
    }
    let root = ((t - 2.0) * (1.0 - 2.0 * t)).max(0.0).sqrt();
    Ok(((t + 1.0 - root) / 3.0, (t + 1.0 + root) / 3.0))
}

/// `-(g-1)^2 + (2g - n - alpha - 1)(n + alpha - 2)/3`, nonnegative exactly on
/// the window returned by [`gamma_range`].
pub fn gamma_window_coefficient(gamma: f64, alpha: f64, n: f64) -> f64 {
    -(gamma - 1.0).powi(2) + (2.0 * gamma - n - alpha - 1.0) * (n + alpha - 2.0) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateConstants {
    pub c1: f64,
    pub c2: f64,
    pub admissible: bool,
}

/// `c1 = mu S |(n-2)(n-3)|/3 - eta`,
/// `c2 = S + S(1-mu) 3(n-2)/(3-n) - C_Strat 9(n-2)^2 / (4(n-3)^2)`.
pub fn estimate_constants(n: f64, s: f64, c_strat: f64, mu: f64, eta: f64) -> Result<EstimateConstants> {
    if !(n > 2.0 && n < 3.0) {
        return Err(Error::MobilityOutOfRange(n));
    }
    let c1 = mu * s * ((n - 2.0) * (n - 3.0)).abs() / 3.0 - eta;
    let c2 = s + s * (1.0 - mu) * 3.0 * (n - 2.0) / (3.0 - n)
        - c_strat * 9.0 * (n - 2.0).powi(2) / (4.0 * (n - 3.0).powi(2));
    Ok(EstimateConstants {
        c1,
        c2,
        admissible: c1 > 0.0 && c2 > 0.0,
    })
}

/// `(min f, dx * #{i : f_i > threshold})`.
pub fn min_and_support(f: &GridFunction, threshold: f64) -> (f64, f64) {
    let count = f.values().iter().filter(|&&v| v > threshold).count();
    (f.min(), count as f64 * f.grid().dx())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use std::f64::consts::PI;

    fn params(eps: f64) -> ModelParams {
        ModelParams {
            n: 2.5,
            p: 4.0,
            eps,
            s: 0.0,
            c_strat: 0.0,
        }
    }

    fn perturbed(n: usize) -> GridFunction {
        PeriodicGrid::new(1.0, n)
            .unwrap()
            .sample(|x| 1.0 + 0.5 * (2.0 * PI * x).cos())
    }

    /// Oracle: the same continuous integrand on a 4096-node grid.
    fn refined(integrand: impl Fn(f64) -> f64) -> f64 {
        PeriodicGrid::new(1.0, 4096).unwrap().sample(integrand).integrate()
    }

    #[test]
    fn mass_cases() {
        let g = PeriodicGrid::new(2.0, 32).unwrap();
        assert_eq!(mass(&g.constant(0.75)), 1.5);
        let f = perturbed(64);
        let shifted = f.map(|v| v + 0.1);
        assert!((mass(&shifted) - mass(&f) - 0.1).abs() < 1e-14);
    }

    #[test]
    fn energy_cases() {
        let g = PeriodicGrid::new(1.0, 64).unwrap();
        assert_eq!(energy_eps(&g.constant(3.0), &params(0.0)).unwrap(), 0.0);
        assert!((energy_eps(&g.constant(1.0), &params(0.01)).unwrap() - 0.01).abs() < 1e-16);

        // (1/2)(0.5 * 2 pi)^2 / 2 = pi^2 / 4.
        let exact = PI * PI / 4.0;
        let oracle = refined(|x| 0.5 * (PI * (2.0 * PI * x).sin()).powi(2));
        assert!((oracle - exact).abs() < 1e-12);
        let e = energy_eps(&perturbed(256), &params(0.0)).unwrap();
        assert!((e - exact).abs() < 1e-3 * exact);

        let mut v = vec![1.0; 64];
        v[3] = 0.0;
        let bad = GridFunction::new(g, v).unwrap();
        assert!(energy_eps(&bad, &params(0.01)).is_err());
    }

    #[test]
    fn entropy_normalization() {
        for n in [2.1, 2.5, 2.9] {
            assert!(entropy_density(1.0, n).abs() < 1e-14);
            let h = 1e-5;
            let d = (entropy_density(1.0 + h, n) - entropy_density(1.0 - h, n)) / (2.0 * h);
            assert!(d.abs() < 1e-9);
            assert!(entropy_density_d1(1.0, n).abs() < 1e-15);
        }
        let g = PeriodicGrid::new(1.0, 32).unwrap();
        assert!(entropy(&g.constant(1.0), 2.5).unwrap().abs() < 1e-14);
        let value = entropy(&perturbed(512), 2.5).unwrap();
        let oracle = refined(|x| entropy_density(1.0 + 0.5 * (2.0 * PI * x).cos(), 2.5));
        assert!((value - oracle).abs() <= 1e-8 * oracle.abs());
        assert!(matches!(
            entropy(&g.constant(0.0), 2.5),
            Err(Error::NonPositiveField { .. })
        ));
    }

    #[test]
    fn alpha_entropy_normalization() {
        for alpha in [-2.2, -1.5, -0.7, 0.5, 2.0] {
            assert!(alpha_entropy_density(1.0, alpha).abs() < 1e-14);
        }
        let (u, alpha, h) = (2.0, -1.5, 1e-4);
        let fd = (alpha_entropy_density(u + h, alpha) - 2.0 * alpha_entropy_density(u, alpha)
            + alpha_entropy_density(u - h, alpha))
            / (h * h);
        assert!((fd - 2f64.powf(-2.5)).abs() < 1e-6);

        let value = alpha_entropy(&perturbed(512), -1.5).unwrap();
        let oracle = refined(|x| alpha_entropy_density(1.0 + 0.5 * (2.0 * PI * x).cos(), -1.5));
        assert!((value - oracle).abs() <= 1e-8 * oracle.abs());
        let g = PeriodicGrid::new(1.0, 16).unwrap();
        assert_eq!(alpha_entropy(&g.constant(1.0), 0.0), Err(Error::AlphaSingular(0.0)));
        assert_eq!(alpha_entropy(&g.constant(1.0), -1.0), Err(Error::AlphaSingular(-1.0)));
    }

    #[test]
    fn weighted_integrals() {
        let g = PeriodicGrid::new(1.0, 128).unwrap();
        for m in [Derivative::First, Derivative::Second, Derivative::Third] {
            assert!(weighted_integral(&g.constant(2.0), -1.5, m, 2.0).unwrap().abs() < 1e-12);
        }
        let s = g.sample(|x| (2.0 * PI * x).sin());
        let v = weighted_integral(&s, 0.0, Derivative::First, 2.0).unwrap();
        let exact = 0.5 * (2.0 * PI).powi(2);
        assert!((v - exact).abs() < 0.01 * exact);

        let value = weighted_integral(&perturbed(1024), -1.5, Derivative::First, 4.0).unwrap();
        let oracle = refined(|x| {
            let u = 1.0 + 0.5 * (2.0 * PI * x).cos();
            let ux = -PI * (2.0 * PI * x).sin();
            u.powf(-1.5) * ux.powi(4)
        });
        let value_fine = weighted_integral(&perturbed(4096), -1.5, Derivative::First, 4.0).unwrap();
        let (e_coarse, e_fine) = ((value - oracle).abs(), (value_fine - oracle).abs());
        assert!(e_coarse <= 1e-4 * oracle, "{value} vs {oracle}");
        // Second order: 4x refinement cuts the error by 16.
        let rate = e_coarse / e_fine;
        assert!((12.0..20.0).contains(&rate), "rate {rate}");
    }

    #[test]
    fn bernis_degenerate_and_smooth() {
        let g = PeriodicGrid::new(1.0, 64).unwrap();
        let c = g.constant(2.0);
        let one = g.constant(1.0);
        let r = bernis_check(&c, &one, 2.5, 0.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.flags.len(), 3);
        assert!(r.flags.iter().all(|f| f.ends_with("0/0")));

        let at = |n: usize| {
            let f = perturbed(n);
            let z = f.grid().constant(1.0);
            bernis_check(&f, &z, 2.5, default_pos_floor(&f)).unwrap()
        };
        let coarse = at(256);
        let mid = at(512);
        let oracle = at(4096);
        assert!(coarse.flags.is_empty());
        for key in ["ratio_x6", "ratio_xx3", "ratio_xxx2"] {
            let (a, m, b) = (coarse.metadata[key], mid.metadata[key], oracle.metadata[key]);
            assert!(a.is_finite() && a > 0.0);
            assert!((m - b).abs() <= 1e-3 * b, "{key}: {m} vs {b}");
            let rate = (a - b).abs() / (m - b).abs();
            assert!((3.0..5.0).contains(&rate), "{key}: rate {rate}");
        }
    }

    #[test]
    fn bernis_weight_annihilates() {
        let g = PeriodicGrid::new(1.0, 64).unwrap();
        let f = g.sample(|x| 1.0 + 0.5 * (2.0 * PI * x).cos());
        let zeta = g.sample(|x| if x < 0.5 { 1.0 } else { 0.0 });
        let half = bernis_check(&f, &zeta, 2.5, 0.0).unwrap();
        // Only the left half contributes; the same sums restricted by hand agree.
        let full = bernis_check(&f, &g.constant(1.0), 2.5, 0.0).unwrap();
        assert!(half.metadata["lhs_x6"] < full.metadata["lhs_x6"]);
        let d = nonneg_power(&f, 4.5 / 6.0).deriv(Derivative::First);
        let by_hand: f64 = (0..32).map(|i| d[i].powi(6)).sum::<f64>() * g.dx();
        assert!((half.metadata["lhs_x6"] - by_hand).abs() < 1e-12 * by_hand);
    }

    #[test]
    fn positivity_constants() {
        let g = PeriodicGrid::new(1.0, 64).unwrap();
        let p = params(1e-3);
        let r = positivity_bound_check(&g.constant(0.8), &p).unwrap();
        assert_eq!(r.metadata["c_p"], 0.0);

        // Homogeneity of the denominators in eps.
        let (eps, h, pp) = (1e-3, 2.7, 4.0);
        let ratio = sup_bound_scale(4.0 * eps, h, pp) / sup_bound_scale(eps, h, pp);
        assert!((ratio - 4f64.powf(1.0 / (2.0 - pp))).abs() < 1e-14);
        let ratio = min_bound_scale(4.0 * eps, 0.5, pp) / min_bound_scale(eps, 0.5, pp);
        assert!((ratio - 4f64.powf(1.0 / (pp - 2.0))).abs() < 1e-14);

        assert!(positivity_bound_check(&g.constant(1.0), &params(0.0)).is_err());
    }

    #[test]
    fn gamma_window() {
        let n = 2.5;
        let (lo, hi) = gamma_range(-0.5, n).unwrap();
        assert!((lo - 1.0).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
        let (lo, hi) = gamma_range(-2.0, n).unwrap();
        assert!((lo - 0.5).abs() < 1e-15 && (hi - 0.5).abs() < 1e-15);
        // t = 1: (2 -/+ sqrt(1)) / 3.
        let (lo, hi) = gamma_range(1.0 - n, n).unwrap();
        assert!((lo - 1.0 / 3.0).abs() < 1e-15 && (hi - 1.0).abs() < 1e-15);
        assert!(matches!(gamma_range(0.3, n), Err(Error::AlphaOutOfRange { .. })));
        assert_eq!(gamma_range(-1.0, 2.2), Err(Error::AlphaSingular(-1.0)));
    }

    #[test]
    fn estimate_constant_examples() {
        let c = estimate_constants(2.5, 0.0, 1.0, 0.1, 0.01).unwrap();
        assert_eq!(c.c1, -0.01);
        assert!(!c.admissible);

        let c = estimate_constants(2.5, 1.0, 1.0, 0.1, 0.01).unwrap();
        assert!((c.c1 - (0.1 * 0.25 / 3.0 - 0.01)).abs() < 1e-15);
        assert!(c.c1 < 0.0);
        let c = estimate_constants(2.5, 1.0, 1.0, 0.1, 0.001).unwrap();
        assert!((c.c1 - 0.007_333_333_333_333_333).abs() < 1e-15);
        assert!((c.c2 - 1.45).abs() < 1e-14);
        assert!(c.admissible);
        assert!(estimate_constants(3.5, 1.0, 1.0, 0.1, 0.001).is_err());
    }

    #[test]
    fn support_measure() {
        let g = PeriodicGrid::new(2.0, 64).unwrap();
        assert_eq!(min_and_support(&g.constant(0.3), 0.1), (0.3, 2.0));
        let bump = g.sample(|x| if (x - 1.0).abs() < 0.5 { 1.0 } else { 0.0 });
        let (_, len) = min_and_support(&bump, 0.0);
        assert!((len - 1.0).abs() <= 2.0 * g.dx());
        let mut v = vec![1.0; 64];
        v[7] = -0.2;
        let f = GridFunction::new(g, v).unwrap();
        assert_eq!(min_and_support(&f, 0.0).0, -0.2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn positive_field() -> impl Strategy<Value = GridFunction> {
            proptest::collection::vec(0.2f64..3.0, 32).prop_map(|v| {
                GridFunction::new(PeriodicGrid::new(1.0, 32).unwrap(), v).unwrap()
            })
        }

        proptest! {
            #[test]
            fn rotation_invariance(f in positive_field(), shift in 0usize..32) {
                let r = f.rotate(shift);
                let p = ModelParams { n: 2.5, p: 4.0, eps: 1e-3, s: 0.0, c_strat: 0.0 };
                prop_assert_eq!(entropy(&f, 2.5).unwrap(), entropy(&r, 2.5).unwrap());
                prop_assert_eq!(alpha_entropy(&f, -1.3).unwrap(), alpha_entropy(&r, -1.3).unwrap());
                prop_assert_eq!(energy_eps(&f, &p).unwrap(), energy_eps(&r, &p).unwrap());
            }

            #[test]
            fn weighted_integral_nonnegative(f in positive_field(), a in -2.0f64..2.0, q in 1.0f64..4.0, m in 1u8..=3) {
                let v = weighted_integral(&f, a, Derivative::from_order(m).unwrap(), q).unwrap();
                prop_assert!(v >= 0.0);
            }

            #[test]
            fn window_coefficient_nonnegative(n in 2.01f64..2.99, s in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
                let alpha = (0.5 - n) + s * 1.5;
                prop_assume!((alpha + 1.0).abs() > 1e-9);
                let (lo, hi) = gamma_range(alpha, n).unwrap();
                let gamma = lo + frac * (hi - lo);
                prop_assert!(gamma_window_coefficient(gamma, alpha, n) >= -1e-12);
            }

            #[test]
            fn c2_limit_matches_threshold(n in 2.01f64..2.99, c in 0.01f64..5.0) {
                let (_, star) = noise::s_thresholds(n, c).unwrap();
                let at = estimate_constants(n, star, c, 0.0, 0.0).unwrap();
                prop_assert!(at.c2.abs() <= 1e-12 * (1.0 + star));
            }
        }
    }
}
