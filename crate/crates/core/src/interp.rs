//! Periodic tensor-product cubic Lagrange interpolation.
//!
//! Exact on polynomials of degree three in each variable (in particular on
//! bilinear fields), fourth-order accurate on smooth fields.

use crate::grid::{ScalarGrid, VectorGrid};

/// `v mod n` in `[0, n)`; a mask when `n` is a power of two.
#[inline]
pub fn wrap_index(v: i64, n: usize) -> usize {
    if n.is_power_of_two() {
        (v & (n as i64 - 1)) as usize
    } else {
        v.rem_euclid(n as i64) as usize
    }
}

/// Precomputed stencil for one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub rows: [usize; 4],
    pub cols: [usize; 4],
    pub wx: [f64; 4],
    pub wy: [f64; 4],
}

#[inline]
fn cubic_weights(t: f64) -> [f64; 4] {
    let tm1 = t - 1.0;
    let tm2 = t - 2.0;
    let tp1 = t + 1.0;
    [
        -t * tm1 * tm2 / 6.0,
        tp1 * tm1 * tm2 / 2.0,
        -tp1 * t * tm2 / 2.0,
        tp1 * t * tm1 / 6.0,
    ]
}

impl Stencil {
    #[inline]
    pub fn new(n: usize, l: f64, x: [f64; 2]) -> Self {
        let inv_h = n as f64 / l;
        let sx = x[0] * inv_h;
        let sy = x[1] * inv_h;
        let fx = sx.floor();
        let fy = sy.floor();
        let i0 = wrap_index(fx as i64 - 1, n);
        let j0 = wrap_index(fy as i64 - 1, n);
        let mut rows = [0usize; 4];
        let mut cols = [0usize; 4];
        for a in 0..4 {
            let r = i0 + a;
            let c = j0 + a;
            rows[a] = if r >= n { r - n } else { r } * n;
            cols[a] = if c >= n { c - n } else { c };
        }
        Self {
            rows,
            cols,
            wx: cubic_weights(sx - fx),
            wy: cubic_weights(sy - fy),
        }
    }

    #[inline]
    pub fn apply(&self, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for a in 0..4 {
            let r = self.rows[a];
            let mut s = 0.0;
            for b in 0..4 {
                s += self.wy[b] * v[r + self.cols[b]];
            }
            acc += self.wx[a] * s;
        }
        acc
    }

    /// Node indices of the 16 stencil points.
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .iter()
            .flat_map(move |&r| self.cols.iter().map(move |&c| r + c))
    }
}

/// Interpolates `f` at `x` (any real coordinates; wrapped periodically).
#[inline]
pub fn interpolate(f: &ScalarGrid, x: [f64; 2]) -> f64 {
    Stencil::new(f.n(), f.l(), x).apply(f.values())
}

pub fn interpolate_many(f: &ScalarGrid, pts: &[[f64; 2]]) -> Vec<f64> {
    pts.iter().map(|&p| interpolate(f, p)).collect()
}

#[inline]
pub fn interpolate_vector(v: &VectorGrid, x: [f64; 2]) -> [f64; 2] {
    let s = Stencil::new(v.n(), v.l(), x);
    [s.apply(v.c[0].values()), s.apply(v.c[1].values())]
}
