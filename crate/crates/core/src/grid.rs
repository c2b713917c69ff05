//! Uniform periodic grids on the square torus `[0, L)^2`.
//!
//! Values are stored row-major with index `i * n + j`, where `i` indexes
//! the first coordinate and `j` the second; node `(i, j)` sits at
//! `(i h, j h)` with `h = L / n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarGrid {
    n: usize,
    l: f64,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(n: usize, l: f64) -> Self {
        Self {
            n,
            l,
            values: vec![0.0; n * n],
        }
    }

    pub fn constant(n: usize, l: f64, c: f64) -> Self {
        Self {
            n,
            l,
            values: vec![c; n * n],
        }
    }

    pub fn from_values(n: usize, l: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                n * n,
                values.len()
            )));
        }
        Ok(Self { n, l, values })
    }

    /// Samples `f(x1, x2)` at every node.
    pub fn from_fn(n: usize, l: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = l / n as f64;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(i as f64 * h, j as f64 * h));
            }
        }
        Self { n, l, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn h(&self) -> f64 {
        self.l / self.n as f64
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [i as f64 * h, j as f64 * h]
    }

    pub fn same_shape(&self, other: &ScalarGrid) -> bool {
        self.n == other.n && self.l == other.l
    }

    pub fn check_same(&self, other: &ScalarGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "n={} L={} vs n={} L={}",
                self.n, self.l, other.n, other.l
            )))
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarGrid {
        ScalarGrid {
            n: self.n,
            l: self.l,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarGrid, f: impl Fn(f64, f64) -> f64) -> ScalarGrid {
        debug_assert!(self.same_shape(other));
        ScalarGrid {
            n: self.n,
            l: self.l,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &ScalarGrid) -> ScalarGrid {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarGrid) -> ScalarGrid {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarGrid) -> ScalarGrid {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> ScalarGrid {
        self.map(|v| c * v)
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarGrid) {
        debug_assert!(self.same_shape(x));
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Riemann sum over the torus, `sum(v) h^2`.
    pub fn integral(&self) -> f64 {
        let h = self.h();
        self.values.iter().sum::<f64>() * h * h
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete L^2 norm, `(sum v^2 h^2)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        let h = self.h();
        (self.values.iter().map(|v| v * v).sum::<f64>() * h * h).sqrt()
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        let h = self.h();
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * h * h).powf(1.0 / p)
    }

    pub fn dot(&self, other: &ScalarGrid) -> f64 {
        let h = self.h();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * h
            * h
    }

    pub fn remove_mean(&self) -> ScalarGrid {
        let m = self.mean();
        self.map(|v| v - m)
    }
}

/// Two-component vector field; `c[0]` is the first component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorGrid {
    pub c: [ScalarGrid; 2],
}

impl VectorGrid {
    pub fn new(a: ScalarGrid, b: ScalarGrid) -> Result<Self> {
        a.check_same(&b)?;
        Ok(Self { c: [a, b] })
    }

    pub fn zeros(n: usize, l: f64) -> Self {
        Self {
            c: [ScalarGrid::zeros(n, l), ScalarGrid::zeros(n, l)],
        }
    }

    pub fn from_fn(n: usize, l: f64, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let a = ScalarGrid::from_fn(n, l, |x, y| f(x, y)[0]);
        let b = ScalarGrid::from_fn(n, l, |x, y| f(x, y)[1]);
        Self { c: [a, b] }
    }

    pub fn n(&self) -> usize {
        self.c[0].n()
    }

    pub fn l(&self) -> f64 {
        self.c[0].l()
    }

    pub fn h(&self) -> f64 {
        self.c[0].h()
    }

    pub fn at(&self, idx: usize) -> [f64; 2] {
        [self.c[0].values()[idx], self.c[1].values()[idx]]
    }

    pub fn add(&self, o: &VectorGrid) -> VectorGrid {
        VectorGrid {
            c: [self.c[0].add(&o.c[0]), self.c[1].add(&o.c[1])],
        }
    }

    pub fn sub(&self, o: &VectorGrid) -> VectorGrid {
        VectorGrid {
            c: [self.c[0].sub(&o.c[0]), self.c[1].sub(&o.c[1])],
        }
    }

    pub fn scale(&self, s: f64) -> VectorGrid {
        VectorGrid {
            c: [self.c[0].scale(s), self.c[1].scale(s)],
        }
    }

    pub fn mul_scalar_field(&self, a: &ScalarGrid) -> VectorGrid {
        VectorGrid {
            c: [self.c[0].mul(a), self.c[1].mul(a)],
        }
    }

    pub fn axpy(&mut self, a: f64, x: &VectorGrid) {
        self.c[0].axpy(a, &x.c[0]);
        self.c[1].axpy(a, &x.c[1]);
    }

    pub fn max_norm(&self) -> f64 {
        self.c[0]
            .values()
            .iter()
            .zip(self.c[1].values())
            .fold(0.0, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.c[0].l2_norm().powi(2) + self.c[1].l2_norm().powi(2)).sqrt()
    }

    pub fn dot(&self, o: &VectorGrid) -> f64 {
        self.c[0].dot(&o.c[0]) + self.c[1].dot(&o.c[1])
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        self.c[0].check_finite(what)?;
        self.c[1].check_finite(what)
    }
}

/// 2x2 matrix field, `c[j][k]` holding entry `(j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGrid {
    pub c: [[ScalarGrid; 2]; 2],
}

impl MatrixGrid {
    pub fn zeros(n: usize, l: f64) -> Self {
        let z = ScalarGrid::zeros(n, l);
        Self {
            c: [[z.clone(), z.clone()], [z.clone(), z]],
        }
    }

    pub fn n(&self) -> usize {
        self.c[0][0].n()
    }

    pub fn l(&self) -> f64 {
        self.c[0][0].l()
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.c[0][1]
            .values()
            .iter()
            .zip(self.c[1][0].values())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        let a = self.max_asymmetry();
        let scale = self.c[0][1].max_abs().max(self.c[1][0].max_abs()).max(1.0);
        if a > tol * scale {
            Err(Error::Asymmetric(a))
        } else {
            Ok(())
        }
    }

    pub fn mul_scalar_field(&self, a: &ScalarGrid) -> MatrixGrid {
        MatrixGrid {
            c: [
                [self.c[0][0].mul(a), self.c[0][1].mul(a)],
                [self.c[1][0].mul(a), self.c[1][1].mul(a)],
            ],
        }
    }

    pub fn trace(&self) -> ScalarGrid {
        self.c[0][0].add(&self.c[1][1])
    }

    pub fn transpose(&self) -> MatrixGrid {
        MatrixGrid {
            c: [
                [self.c[0][0].clone(), self.c[1][0].clone()],
                [self.c[0][1].clone(), self.c[1][1].clone()],
            ],
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        for row in &self.c {
            for e in row {
                e.check_finite(what)?;
            }
        }
        Ok(())
    }
}

/// Wraps a coordinate into `[0, l)`.
#[inline]
pub fn wrap(x: f64, l: f64) -> f64 {
    let r = x.rem_euclid(l);
    if r >= l {
        0.0
    } else {
        r
    }
}

/// Minimum-image difference `a - b` on a circle of length `l`.
#[inline]
pub fn periodic_delta(a: f64, b: f64, l: f64) -> f64 {
    let d = a - b;
    d - l * (d / l).round()
}
