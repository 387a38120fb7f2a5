//! Cyclic pentadiagonal systems: banded LU with partial pivoting for the
//! interior band plus a rank-4 Woodbury correction for the periodic
//! corners. A dense LU is used only if the band or the capacitance matrix
//! turns out singular.

use crate::error::{Error, Result};

const BAND: usize = 5;
/// Row window of the banded factor: columns `i-2 ..= i+4`.
const WIDTH: usize = 7;

/// Matrix with nonzeros only at `(i, (i + m) mod N)` for `m` in `-2..=2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CyclicPentadiagonal {
    rows: Vec<[f64; BAND]>,
}

impl CyclicPentadiagonal {
    pub fn zeros(n: usize) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidParameter(format!(
                "cyclic pentadiagonal systems need at least 5 rows, got {n}"
            )));
        }
        Ok(Self {
            rows: vec![[0.0; BAND]; n],
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut a = Self::zeros(n)?;
        for r in &mut a.rows {
            r[2] = 1.0;
        }
        Ok(a)
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    /// Entry at row `i`, column `(i + offset) mod N`.
    pub fn get(&self, i: usize, offset: isize) -> f64 {
        self.rows[i][(offset + 2) as usize]
    }

    pub fn set(&mut self, i: usize, offset: isize, v: f64) {
        self.rows[i][(offset + 2) as usize] = v;
    }

    pub fn add(&mut self, i: usize, offset: isize, v: f64) {
        self.rows[i][(offset + 2) as usize] += v;
    }

    fn col(&self, i: usize, m: usize) -> usize {
        let n = self.size();
        (i + n + m - 2) % n
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size())
            .map(|i| (0..BAND).map(|m| self.rows[i][m] * x[self.col(i, m)]).sum())
            .collect()
    }

    pub fn norm_inf(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.size();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for m in 0..BAND {
                d[i][self.col(i, m)] += self.rows[i][m];
            }
        }
        d
    }

    pub fn factor(&self) -> Result<Factorization> {
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolveFailure("non-finite matrix entry".into()));
        }
        let kind = match Woodbury::new(self) {
            Some(w) => Kind::Woodbury(w),
            None => Kind::Dense(
                DenseLu::new(self.to_dense())
                    .ok_or_else(|| Error::LinearSolveFailure("matrix is singular".into()))?,
            ),
        };
        Ok(Factorization {
            matrix: self.clone(),
            norm: self.norm_inf(),
            kind,
        })
    }
}

/// Reusable factorization of a [`CyclicPentadiagonal`] matrix.
#[derive(Debug, Clone)]
pub struct Factorization {
    matrix: CyclicPentadiagonal,
    norm: f64,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Woodbury(Woodbury),
    Dense(DenseLu),
}

impl Factorization {
    pub fn matrix(&self) -> &CyclicPentadiagonal {
        &self.matrix
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Woodbury(w) => w.solve(b),
            Kind::Dense(d) => d.solve(b),
        }
    }

    /// Solves `A x = b`, accepting `x` once
    /// `|b - A x|_inf <= tol (|A|_inf |x|_inf + |b|_inf)`; up to three rounds
    /// of iterative refinement are tried before giving up.
    pub fn solve(&self, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = self.matrix.size();
        if b.len() != n {
            return Err(Error::LinearSolveFailure(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }
        let b_norm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut x = self.raw_solve(b);
        let mut rel = f64::INFINITY;
        for _ in 0..4 {
            let ax = self.matrix.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let r_norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let x_norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = self.norm * x_norm + b_norm;
            rel = if scale > 0.0 { r_norm / scale } else { r_norm };
            if !rel.is_finite() {
                break;
            }
            if rel <= tol {
                return Ok(x);
            }
            let d = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(d) {
                *xi += di;
            }
        }
        Err(Error::LinearSolveFailure(format!(
            "relative residual {rel:e} exceeds tolerance {tol:e}"
        )))
    }
}

/// LU of the non-periodic band part with partial pivoting.
#[derive(Debug, Clone)]
struct BandLu {
    /// `lu[i][c - i + 2]` holds column `c`.
    lu: Vec<[f64; WIDTH]>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn new(a: &CyclicPentadiagonal) -> Option<Self> {
        let n = a.size();
        let mut lu = vec![[0.0; WIDTH]; n];
        for (i, row) in lu.iter_mut().enumerate() {
            for m in 0..BAND {
                let c = i as isize + m as isize - 2;
                if c >= 0 && (c as usize) < n {
                    row[m] = a.rows[i][m];
                }
            }
        }
        let at = |i: usize, c: usize| c + 2 - i;
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last = (k + 2).min(n - 1);
            let p = (k..=last)
                .max_by(|&r, &s| lu[r][at(r, k)].abs().total_cmp(&lu[s][at(s, k)].abs()))
                .unwrap_or(k);
            pivots[k] = p;
            if p != k {
                for c in k..(k + 5).min(n) {
                    let tmp = lu[k][at(k, c)];
                    lu[k][at(k, c)] = lu[p][at(p, c)];
                    lu[p][at(p, c)] = tmp;
                }
            }
            let piv = lu[k][2];
            if piv == 0.0 || !piv.is_finite() {
                return None;
            }
            for r in k + 1..=last {
                let l = lu[r][at(r, k)] / piv;
                lu[r][at(r, k)] = l;
                for c in k + 1..(k + 5).min(n) {
                    lu[r][at(r, c)] -= l * lu[k][at(k, c)];
                }
            }
        }
        Some(Self { lu, pivots })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.len();
        let mut y = b.to_vec();
        for k in 0..n {
            y.swap(k, self.pivots[k]);
            for r in k + 1..=(k + 2).min(n - 1) {
                y[r] -= self.lu[r][k + 2 - r] * y[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for c in k + 1..(k + 5).min(n) {
                s -= self.lu[k][c + 2 - k] * y[c];
            }
            y[k] = s / self.lu[k][2];
        }
        y
    }
}

#[derive(Debug, Clone)]
struct Woodbury {
    band: BandLu,
    /// Rows of the corner coupling `A = B + U C`, `U = [e_0 e_1 e_{N-2} e_{N-1}]`,
    /// as sparse `(column, value)` lists.
    corners: [Vec<(usize, f64)>; 4],
    /// `B^{-1} U`, one column per corner row.
    z: [Vec<f64>; 4],
    capacitance: DenseLu,
}

impl Woodbury {
    fn new(a: &CyclicPentadiagonal) -> Option<Self> {
        let n = a.size();
        let band = BandLu::new(a)?;
        let idx = [0, 1, n - 2, n - 1];
        let corners: [Vec<(usize, f64)>; 4] = idx.map(|i| {
            (0..BAND)
                .filter_map(|m| {
                    let c = i as isize + m as isize - 2;
                    let wrapped = c < 0 || c as usize >= n;
                    (wrapped && a.rows[i][m] != 0.0).then(|| (a.col(i, m), a.rows[i][m]))
                })
                .collect()
        });
        let z = idx.map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            band.solve(&e)
        });
        let mut cap = vec![vec![0.0; 4]; 4];
        for (r, row) in cap.iter_mut().enumerate() {
            for (s, v) in row.iter_mut().enumerate() {
                *v = f64::from(u8::from(r == s))
                    + corners[r].iter().map(|&(c, w)| w * z[s][c]).sum::<f64>();
            }
        }
        let capacitance = DenseLu::new(cap)?;
        Some(Self {
            band,
            corners,
            z,
            capacitance,
        })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y = self.band.solve(b);
        let cy: Vec<f64> = self
            .corners
            .iter()
            .map(|row| row.iter().map(|&(c, w)| w * y[c]).sum())
            .collect();
        let w = self.capacitance.solve(&cy);
        for (zs, ws) in self.z.iter().zip(&w) {
            for (yi, zi) in y.iter_mut().zip(zs) {
                *yi -= ws * zi;
            }
        }
        y
    }
}

/// Dense LU with partial pivoting; `None` on an exactly zero pivot.
#[derive(Debug, Clone)]
struct DenseLu {
    a: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl DenseLu {
    fn new(mut a: Vec<Vec<f64>>) -> Option<Self> {
        let n = a.len();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&r, &s| a[r][k].abs().total_cmp(&a[s][k].abs()))?;
            if a[p][k] == 0.0 || !a[p][k].is_finite() {
                return None;
            }
            a.swap(k, p);
            perm.swap(k, p);
            for r in k + 1..n {
                let l = a[r][k] / a[k][k];
                a[r][k] = l;
                for c in k + 1..n {
                    a[r][c] -= l * a[k][c];
                }
            }
        }
        Some(Self { a, perm })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.a.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                y[r] -= self.a[r][c] * y[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                y[r] -= self.a[r][c] * y[c];
            }
            y[r] /= self.a[r][r];
        }
        y
    }
}
