//! Uniform periodic mesh on `[0, L)` and the discrete calculus built on it.
//!
//! Nodes sit at `x_i = i * dx`, faces at `x_{i+1/2}`. All index arithmetic
//! wraps modulo `N`. Derivatives are second-order central differences;
//! quadrature is the rectangle rule, which is exact for trigonometric
//! polynomials below the Nyquist mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    len: f64,
    nodes: usize,
    dx: f64,
}

impl PeriodicGrid {
    /// `nodes` must be even (the trigonometric basis needs an unambiguous
    /// Nyquist mode) and at least 16.
    pub fn new(len: f64, nodes: usize) -> Result<Self> {
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidLength(len));
        }
        if nodes % 2 != 0 {
            return Err(Error::OddNodeCount(nodes));
        }
        if nodes < 16 {
            return Err(Error::TooFewNodes(nodes));
        }
        Ok(Self {
            len,
            nodes,
            dx: len / nodes as f64,
        })
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    /// Coordinate of the face between node `j` and node `j + 1`.
    pub fn face(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx
    }

    /// Samples `f` at every node.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: *self,
            values: (0..self.nodes).map(|i| f(self.node(i))).collect(),
        }
    }

    pub fn constant(&self, c: f64) -> GridFunction {
        GridFunction {
            grid: *self,
            values: vec![c; self.nodes],
        }
    }

    #[inline]
    pub(crate) fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.nodes as isize) as usize
    }
}

/// Order of a central-difference derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    First,
    Second,
    Third,
}

impl Derivative {
    pub fn from_order(m: u8) -> Option<Self> {
        match m {
            1 => Some(Self::First),
            2 => Some(Self::Second),
            3 => Some(Self::Third),
            _ => None,
        }
    }
}

/// Nodal values of a periodic field.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() {
            return Err(Error::InvalidParameter(format!(
                "expected {} values, got {}",
                grid.nodes(),
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value {v} at node {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.nodes());
        Self { grid, values }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> GridFunction {
        debug_assert_eq!(self.values.len(), other.values.len());
        GridFunction::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Index of the first node that is not strictly positive.
    pub fn first_nonpositive(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .copied()
            .enumerate()
            .find(|&(_, v)| v <= 0.0 || v.is_nan())
    }

    pub fn require_positive(&self) -> Result<()> {
        match self.first_nonpositive() {
            Some((index, value)) => Err(Error::NonPositiveField { index, value }),
            None => Ok(()),
        }
    }

    /// Cyclic shift: result value `i` is input value `i + shift`.
    pub fn rotate(&self, shift: usize) -> GridFunction {
        let mut values = self.values.clone();
        values.rotate_left(shift % self.len());
        GridFunction::from_raw(self.grid, values)
    }

    #[inline]
    pub(crate) fn at(&self, i: isize) -> f64 {
        self.values[self.grid.wrap(i)]
    }

    /// Second-order central difference with periodic wraparound.
    ///
    /// The third-derivative stencil is
    /// `(-f[i-2]/2 + f[i-1] - f[i+1] + f[i+2]/2) / dx^3` and approximates
    /// `+f'''`. The compact second-derivative stencil is not the square of
    /// the first-derivative one; they agree only to `O(dx^2)`.
    pub fn deriv(&self, order: Derivative) -> GridFunction {
        let dx = self.grid.dx();
        let n = self.len() as isize;
        let values = (0..n)
            .map(|i| match order {
                Derivative::First => (self.at(i + 1) - self.at(i - 1)) / (2.0 * dx),
                Derivative::Second => {
                    (self.at(i + 1) - 2.0 * self.at(i) + self.at(i - 1)) / (dx * dx)
                }
                Derivative::Third => {
                    (-0.5 * self.at(i - 2) + self.at(i - 1) - self.at(i + 1)
                        + 0.5 * self.at(i + 2))
                        / (dx * dx * dx)
                }
            })
            .collect();
        GridFunction::from_raw(self.grid, values)
    }

    /// Forward difference `(f[j+1] - f[j]) / dx`, a value living on face `j`.
    pub fn face_gradient(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        let n = self.len();
        (0..n)
            .map(|j| (self.values[(j + 1) % n] - self.values[j]) / dx)
            .collect()
    }

    /// Rectangle rule `sum f_i * dx`, with the sum correctly rounded so
    /// the result does not depend on the order of the nodes.
    pub fn integrate(&self) -> f64 {
        exact_sum(self.values.iter().copied()) * self.grid.dx()
    }

    /// Elementwise `f_i^a`.
    ///
    /// Non-integer exponents require every value to be strictly positive;
    /// negative exponents additionally reject zeros.
    pub fn pointwise_power(&self, a: f64) -> Result<GridFunction> {
        let integer = a.fract() == 0.0 && a.abs() < i32::MAX as f64;
        let mut values = Vec::with_capacity(self.len());
        for (index, &v) in self.values.iter().enumerate() {
            let bad = if integer { a < 0.0 && v == 0.0 } else { v <= 0.0 };
            if bad || v.is_nan() {
                return Err(Error::NegativeBase {
                    index,
                    value: v,
                    exponent: a,
                });
            }
            values.push(if integer { v.powi(a as i32) } else { v.powf(a) });
        }
        Ok(GridFunction::from_raw(self.grid, values))
    }

    /// `<f, g> = sum f_i g_i dx`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        exact_sum(self.values.iter().zip(&other.values).map(|(a, b)| a * b)) * self.grid.dx()
    }
}

/// Correctly rounded floating-point sum (Shewchuk's non-overlapping
/// partials). Permuting the inputs never changes the result.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::with_capacity(8);
    let mut special = 0.0;
    for mut x in values {
        if !x.is_finite() {
            special += x;
            continue;
        }
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    if special != 0.0 || special.is_nan() {
        return special;
    }
    // Round the partials to nearest, accounting for half-way cases.
    let mut hi = match partials.pop() {
        Some(v) => v,
        None => return 0.0,
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if !partials.is_empty() && ((lo < 0.0 && partials[partials.len() - 1] < 0.0) || (lo > 0.0 && partials[partials.len() - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}
