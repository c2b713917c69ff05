//! Pseudo-spectral operators on the periodic square.
//!
//! Wavenumbers are `k = 2 pi m / L` with `m` in `[-n/2, n/2)`. First
//! derivatives (and any operator odd in a single wavenumber component)
//! zero the Nyquist mode so that real fields stay real. Inverse operators
//! map the mean mode to zero.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{MatrixGrid, ScalarGrid, VectorGrid};

/// Which singular integral a commutator is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `K(M) = 2 (-Delta)^-1 d_j d_k M^{jk}`
    K,
    /// `K'(M) = 2 (-Delta)^-1 (d_1 d_k M^{2k} - d_2 d_k M^{1k})`
    KPrime,
}

/// FFT plans and wavenumber tables for one grid size.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    l: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Full wavenumbers, Nyquist kept (used by even operators).
    k_even: Vec<f64>,
    /// Wavenumbers with the Nyquist entry zeroed (used by odd operators).
    k_odd: Vec<f64>,
    /// Signed integer mode numbers.
    modes: Vec<i64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("n", &self.n)
            .field("l", &self.l)
            .finish()
    }
}

/// Signed mode number of FFT index `i` on an `n`-point grid.
pub fn mode_number(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Spectral {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "n must be even and >= 4, got {n}"
            )));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidGrid(format!("L must be positive, got {l}")));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let modes: Vec<i64> = (0..n).map(|i| mode_number(i, n)).collect();
        let k_even: Vec<f64> = modes
            .iter()
            .map(|&m| 2.0 * std::f64::consts::PI * m as f64 / l)
            .collect();
        let k_odd: Vec<f64> = k_even
            .iter()
            .enumerate()
            .map(|(i, &k)| if i == n / 2 { 0.0 } else { k })
            .collect();
        Ok(Self {
            n,
            l,
            fwd,
            inv,
            k_even,
            k_odd,
            modes,
        })
    }

    pub fn for_grid(g: &ScalarGrid) -> Result<Self> {
        Self::new(g.n(), g.l())
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

    pub fn k_even(&self) -> &[f64] {
        &self.k_even
    }

    pub fn k_odd(&self) -> &[f64] {
        &self.k_odd
    }

    pub fn modes(&self) -> &[i64] {
        &self.modes
    }

    fn check(&self, g: &ScalarGrid) -> Result<()> {
        if g.n() != self.n || g.l() != self.l {
            return Err(Error::GridMismatch(format!(
                "field on n={} L={}, operator on n={} L={}",
                g.n(),
                g.l(),
                self.n,
                self.l
            )));
        }
        g.check_finite("spectral operator input")
    }

    /// Rows, transpose, rows, transpose back.
    fn fft2(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
        plan.process_with_scratch(data, &mut scratch);
        transpose::transpose(data, &mut tmp, n, n);
        plan.process_with_scratch(&mut tmp, &mut scratch);
        transpose::transpose(&tmp, data, n, n);
    }

    /// Unnormalized forward transform; entry `i * n + j` holds mode `(m_i, m_j)`.
    pub fn forward(&self, g: &ScalarGrid) -> Result<Vec<Complex64>> {
        self.check(g)?;
        Ok(self.forward_unchecked(g.values()))
    }

    fn forward_unchecked(&self, v: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft2(&mut data, &self.fwd);
        data
    }

    /// Inverse transform, normalized, real part kept.
    pub fn inverse(&self, mut data: Vec<Complex64>) -> ScalarGrid {
        self.fft2(&mut data, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        let values = data.iter().map(|c| c.re * s).collect();
        ScalarGrid::from_values(self.n, self.l, values).expect("size matches")
    }

    /// Applies a Fourier multiplier `sym(i, j)` indexed by FFT indices.
    pub fn apply_multiplier(
        &self,
        g: &ScalarGrid,
        sym: impl Fn(usize, usize) -> Complex64,
    ) -> Result<ScalarGrid> {
        let mut hat = self.forward(g)?;
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                hat[i * n + j] *= sym(i, j);
            }
        }
        Ok(self.inverse(hat))
    }

    #[inline]
    fn kk_even(&self, i: usize, j: usize) -> f64 {
        self.k_even[i] * self.k_even[i] + self.k_even[j] * self.k_even[j]
    }

    /// Symbol of the `axis` derivative at FFT index `(i, j)`.
    #[inline]
    pub fn derivative_symbol(&self, axis: usize, i: usize, j: usize) -> Complex64 {
        let k = if axis == 0 {
            self.k_odd[i]
        } else {
            self.k_odd[j]
        };
        Complex64::new(0.0, k)
    }

    /// Symbol `k_a k_b / |k|^2` of `riesz2`; zero at the mean mode.
    #[inline]
    pub fn riesz_symbol(&self, a: usize, b: usize, i: usize, j: usize) -> f64 {
        let kk = self.kk_even(i, j);
        if kk == 0.0 {
            return 0.0;
        }
        let num = if a == b {
            let k = if a == 0 {
                self.k_even[i]
            } else {
                self.k_even[j]
            };
            k * k
        } else {
            self.k_odd[i] * self.k_odd[j]
        };
        num / kk
    }

    pub fn derivative(&self, g: &ScalarGrid, axis: usize) -> Result<ScalarGrid> {
        self.apply_multiplier(g, |i, j| self.derivative_symbol(axis, i, j))
    }

    pub fn gradient(&self, g: &ScalarGrid) -> Result<VectorGrid> {
        let hat = self.forward(g)?;
        let comp = |axis: usize| {
            let mut d = hat.clone();
            for i in 0..self.n {
                for j in 0..self.n {
                    d[i * self.n + j] *= self.derivative_symbol(axis, i, j);
                }
            }
            self.inverse(d)
        };
        Ok(VectorGrid {
            c: [comp(0), comp(1)],
        })
    }

    /// `d_1 v^1 + d_2 v^2`.
    pub fn divergence(&self, v: &VectorGrid) -> Result<ScalarGrid> {
        self.combine_first_derivatives(v, [1.0, 0.0], [0.0, 1.0])
    }

    /// Scalar curl `d_1 v^2 - d_2 v^1`.
    pub fn rot2(&self, v: &VectorGrid) -> Result<ScalarGrid> {
        self.combine_first_derivatives(v, [0.0, -1.0], [1.0, 0.0])
    }

    /// Returns `sum_c sum_axis coef[c][axis] d_axis v^c` where the two
    /// arrays are the coefficients for components 1 and 2.
    fn combine_first_derivatives(
        &self,
        v: &VectorGrid,
        c1: [f64; 2],
        c2: [f64; 2],
    ) -> Result<ScalarGrid> {
        let a = self.forward(&v.c[0])?;
        let b = self.forward(&v.c[1])?;
        let n = self.n;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let d1 = self.derivative_symbol(0, i, j);
                let d2 = self.derivative_symbol(1, i, j);
                out[idx] = a[idx] * (d1 * c1[0] + d2 * c1[1]) + b[idx] * (d1 * c2[0] + d2 * c2[1]);
            }
        }
        Ok(self.inverse(out))
    }

    pub fn laplacian(&self, g: &ScalarGrid) -> Result<ScalarGrid> {
        self.apply_multiplier(g, |i, j| Complex64::new(-self.kk_even(i, j), 0.0))
    }

    /// `(-Delta)^-1`, applied to the zero-mean part of `g`.
    pub fn inv_laplacian(&self, g: &ScalarGrid) -> Result<ScalarGrid> {
        self.apply_multiplier(g, |i, j| {
            let kk = self.kk_even(i, j);
            Complex64::new(if kk == 0.0 { 0.0 } else { 1.0 / kk }, 0.0)
        })
    }

    /// Riesz-type operator with multiplier `k_a k_b / |k|^2`.
    pub fn riesz2(&self, g: &ScalarGrid, a: usize, b: usize) -> Result<ScalarGrid> {
        if a > 1 || b > 1 {
            return Err(Error::InvalidInput(format!(
                "riesz indices must be 0 or 1, got ({a}, {b})"
            )));
        }
        self.apply_multiplier(g, |i, j| Complex64::new(self.riesz_symbol(a, b, i, j), 0.0))
    }

    fn matrix_hat(&self, m: &MatrixGrid) -> Result<[[Vec<Complex64>; 2]; 2]> {
        Ok([
            [self.forward(&m.c[0][0])?, self.forward(&m.c[0][1])?],
            [self.forward(&m.c[1][0])?, self.forward(&m.c[1][1])?],
        ])
    }

    /// `K(M) = 2 (-Delta)^-1 d_j d_k M^{jk}`; multiplier `-2 k_j k_k / |k|^2`.
    pub fn k_op(&self, m: &MatrixGrid) -> Result<ScalarGrid> {
        m.check_symmetric(1e-10)?;
        let hat = self.matrix_hat(m)?;
        let n = self.n;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..2 {
                    for b in 0..2 {
                        acc += hat[a][b][idx] * self.riesz_symbol(a, b, i, j);
                    }
                }
                out[idx] = -2.0 * acc;
            }
        }
        Ok(self.inverse(out))
    }

    /// `K'(M) = 2 (-Delta)^-1 (d_1 d_k M^{2k} - d_2 d_k M^{1k})`.
    pub fn kp_op(&self, m: &MatrixGrid) -> Result<ScalarGrid> {
        m.check_symmetric(1e-10)?;
        let hat = self.matrix_hat(m)?;
        let n = self.n;
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let idx = i * n + j;
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..2 {
                    acc += hat[1][k][idx] * self.riesz_symbol(0, k, i, j);
                    acc -= hat[0][k][idx] * self.riesz_symbol(1, k, i, j);
                }
                out[idx] = -2.0 * acc;
            }
        }
        Ok(self.inverse(out))
    }

    pub fn kernel(&self, kind: KernelKind, m: &MatrixGrid) -> Result<ScalarGrid> {
        match kind {
            KernelKind::K => self.k_op(m),
            KernelKind::KPrime => self.kp_op(m),
        }
    }

    /// `[T, a] M = T(a M) - a T(M)` for `T` in `{K, K'}`.
    ///
    /// With `dealias` both pointwise products go through the 2/3 rule.
    pub fn commutator_k(
        &self,
        a: &ScalarGrid,
        m: &MatrixGrid,
        kind: KernelKind,
        dealias: bool,
    ) -> Result<ScalarGrid> {
        self.check(a)?;
        let prod = |x: &ScalarGrid, y: &ScalarGrid| -> Result<ScalarGrid> {
            if dealias {
                self.dealiased_product(x, y)
            } else {
                Ok(x.mul(y))
            }
        };
        let am = MatrixGrid {
            c: [
                [prod(a, &m.c[0][0])?, prod(a, &m.c[0][1])?],
                [prod(a, &m.c[1][0])?, prod(a, &m.c[1][1])?],
            ],
        };
        let t_am = self.kernel(kind, &am)?;
        let t_m = self.kernel(kind, m)?;
        let a_tm = prod(a, &t_m)?;
        Ok(t_am.sub(&a_tm))
    }

    /// Zeroes the Nyquist rows and columns of a spectrum.
    pub fn drop_nyquist(&self, hat: &mut [Complex64]) {
        let (n, h) = (self.n, self.n / 2);
        for k in 0..n {
            hat[h * n + k] = Complex64::new(0.0, 0.0);
            hat[k * n + h] = Complex64::new(0.0, 0.0);
        }
    }

    /// `g` without its Nyquist rows and columns, the modes that the odd
    /// first-derivative symbols do not see.
    pub fn off_nyquist(&self, g: &ScalarGrid) -> Result<ScalarGrid> {
        let mut hat = self.forward(g)?;
        self.drop_nyquist(&mut hat);
        Ok(self.inverse(hat))
    }

    /// True when mode `(i, j)` survives the 2/3 truncation.
    #[inline]
    pub fn in_dealias_band(&self, i: usize, j: usize) -> bool {
        let cut = (self.n / 3) as i64;
        self.modes[i].abs() <= cut && self.modes[j].abs() <= cut
    }

    pub fn truncate_23(&self, g: &ScalarGrid) -> Result<ScalarGrid> {
        self.apply_multiplier(g, |i, j| {
            Complex64::new(if self.in_dealias_band(i, j) { 1.0 } else { 0.0 }, 0.0)
        })
    }

    /// Product of the 2/3-truncated inputs, itself truncated to the 2/3 band.
    /// This is free of aliasing.
    pub fn dealiased_product(&self, a: &ScalarGrid, b: &ScalarGrid) -> Result<ScalarGrid> {
        let ta = self.truncate_23(a)?;
        let tb = self.truncate_23(b)?;
        self.truncate_23(&ta.mul(&tb))
    }

    /// `grad u` with entry `(j, k) = d_k u^j`.
    pub fn velocity_gradient(&self, u: &VectorGrid) -> Result<MatrixGrid> {
        let g0 = self.gradient(&u.c[0])?;
        let g1 = self.gradient(&u.c[1])?;
        let [a, b] = g0.c;
        let [c, d] = g1.c;
        Ok(MatrixGrid {
            c: [[a, b], [c, d]],
        })
    }

    /// Symmetric gradient `Du = (grad u + grad u^T) / 2`.
    pub fn strain(&self, u: &VectorGrid) -> Result<MatrixGrid> {
        let g = self.velocity_gradient(u)?;
        Ok(strain_from_gradient(&g))
    }

    /// `div` of a matrix field row-wise: `(div M)^j = d_k M^{jk}`.
    pub fn matrix_divergence(&self, m: &MatrixGrid) -> Result<VectorGrid> {
        let r0 = VectorGrid {
            c: [m.c[0][0].clone(), m.c[0][1].clone()],
        };
        let r1 = VectorGrid {
            c: [m.c[1][0].clone(), m.c[1][1].clone()],
        };
        Ok(VectorGrid {
            c: [self.divergence(&r0)?, self.divergence(&r1)?],
        })
    }

    /// Spectral `H^1` norm squared `||g||^2 + ||grad g||^2`.
    pub fn h1_norm_sq(&self, g: &ScalarGrid) -> Result<f64> {
        let gr = self.gradient(g)?;
        Ok(g.l2_norm().powi(2) + gr.l2_norm().powi(2))
    }
}

pub fn strain_from_gradient(g: &MatrixGrid) -> MatrixGrid {
    let off = g.c[0][1].add(&g.c[1][0]).scale(0.5);
    MatrixGrid {
        c: [[g.c[0][0].clone(), off.clone()], [off, g.c[1][1].clone()]],
    }
}
