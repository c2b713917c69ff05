//! Operator verification: every spectral operator against a symbol table
//! built here from the integer mode numbers, and the `K`, `K'` identities
//! on random band-limited velocities.

use std::f64::consts::PI;

use patchflow::grid::{MatrixGrid, ScalarGrid, VectorGrid};
use patchflow::spectral::strain_from_gradient;
use patchflow::Spectral;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SYMBOL_TOL: f64 = 1e-11;
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolCheck {
    pub operator: String,
    /// `max_k |out_k - sym_k in_k| / max_k |sym_k in_k|`.
    pub error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub identity: String,
    pub fields: usize,
    /// Largest `max |residual - mean| / max |reference|` over the fields.
    pub error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorReport {
    pub n: usize,
    pub l: f64,
    pub seed: u64,
    pub symbol_tol: f64,
    pub identity_tol: f64,
    pub symbols: Vec<SymbolCheck>,
    pub identities: Vec<IdentityCheck>,
    pub pass: bool,
}

type Sym = Box<dyn Fn(i64, i64) -> (f64, f64)>;

/// Signed mode numbers in FFT order.
fn modes(n: usize) -> Vec<i64> {
    (0..n as i64).map(|i| if i < n as i64 / 2 { i } else { i - n as i64 }).collect()
}

struct Table {
    n: usize,
    l: f64,
}

impl Table {
    fn k(&self, m: i64) -> f64 {
        2.0 * PI * m as f64 / self.l
    }

    /// Wavenumber of an odd factor: zero on the Nyquist line.
    fn k_odd(&self, m: i64) -> f64 {
        if m == -(self.n as i64) / 2 {
            0.0
        } else {
            self.k(m)
        }
    }

    fn riesz(&self, a: usize, b: usize, m1: i64, m2: i64) -> f64 {
        let kk = self.k(m1).powi(2) + self.k(m2).powi(2);
        if kk == 0.0 {
            return 0.0;
        }
        let num = match (a, b) {
            (0, 0) => self.k(m1).powi(2),
            (1, 1) => self.k(m2).powi(2),
            _ => self.k_odd(m1) * self.k_odd(m2),
        };
        num / kk
    }
}

fn cmul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, l: f64) -> ScalarGrid {
    let v = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScalarGrid::from_values(n, l, v).expect("size matches")
}

/// Compares `out` with `sum_c sym_c * in_c` mode by mode.
fn compare(sp: &Spectral, name: &str, out: &ScalarGrid, inputs: &[(&ScalarGrid, &Sym)]) -> Result<SymbolCheck, CliError> {
    let n = sp.n();
    let ms = modes(n);
    let num = |e: patchflow::Error| CliError::Numerical(e.to_string());
    let got = sp.forward(out).map_err(num)?;
    let hats = inputs.iter().map(|(g, _)| sp.forward(g)).collect::<Result<Vec<_>, _>>().map_err(num)?;
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            let idx = i * n + j;
            let mut want = (0.0, 0.0);
            for (c, (_, sym)) in inputs.iter().enumerate() {
                let h = (hats[c][idx].re, hats[c][idx].im);
                let t = cmul(sym(ms[i], ms[j]), h);
                want = (want.0 + t.0, want.1 + t.1);
            }
            let g = got[idx];
            diff = diff.max((g.re - want.0).hypot(g.im - want.1));
            scale = scale.max(want.0.hypot(want.1));
        }
    }
    let error = if scale > 0.0 { diff / scale } else { diff };
    Ok(SymbolCheck { operator: name.into(), error, pass: error < SYMBOL_TOL })
}

fn symbol_checks(sp: &Spectral, rng: &mut ChaCha8Rng) -> Result<Vec<SymbolCheck>, CliError> {
    let (n, l) = (sp.n(), sp.l());
    let t = std::rc::Rc::new(Table { n, l });
    let num = |e: patchflow::Error| CliError::Numerical(e.to_string());
    let g = random_field(rng, n, l);
    let g2 = random_field(rng, n, l);
    let g3 = random_field(rng, n, l);
    let mut out = Vec::new();

    let sym = |f: Box<dyn Fn(&Table, i64, i64) -> (f64, f64)>| -> Sym {
        let t = t.clone();
        Box::new(move |a, b| f(&t, a, b))
    };
    let dx = sym(Box::new(|t, a, _| (0.0, t.k_odd(a))));
    let dy = sym(Box::new(|t, _, b| (0.0, t.k_odd(b))));
    let neg_dy = sym(Box::new(|t, _, b| (0.0, -t.k_odd(b))));
    let lap = sym(Box::new(|t, a, b| (-(t.k(a).powi(2) + t.k(b).powi(2)), 0.0)));
    let inv_lap = sym(Box::new(|t, a, b| {
        let kk = t.k(a).powi(2) + t.k(b).powi(2);
        (if kk == 0.0 { 0.0 } else { 1.0 / kk }, 0.0)
    }));
    let trunc = sym(Box::new(|t, a, b| {
        let cut = (t.n / 3) as i64;
        (if a.abs() <= cut && b.abs() <= cut { 1.0 } else { 0.0 }, 0.0)
    }));

    out.push(compare(sp, "derivative_x", &sp.derivative(&g, 0).map_err(num)?, &[(&g, &dx)])?);
    out.push(compare(sp, "derivative_y", &sp.derivative(&g, 1).map_err(num)?, &[(&g, &dy)])?);
    let grad = sp.gradient(&g).map_err(num)?;
    out.push(compare(sp, "gradient_x", &grad.c[0], &[(&g, &dx)])?);
    out.push(compare(sp, "gradient_y", &grad.c[1], &[(&g, &dy)])?);
    let v = VectorGrid { c: [g.clone(), g2.clone()] };
    out.push(compare(sp, "divergence", &sp.divergence(&v).map_err(num)?, &[(&g, &dx), (&g2, &dy)])?);
    out.push(compare(sp, "rot2", &sp.rot2(&v).map_err(num)?, &[(&g, &neg_dy), (&g2, &dx)])?);
    out.push(compare(sp, "laplacian", &sp.laplacian(&g).map_err(num)?, &[(&g, &lap)])?);
    out.push(compare(sp, "inv_laplacian", &sp.inv_laplacian(&g).map_err(num)?, &[(&g, &inv_lap)])?);
    for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let r = sym(Box::new(move |t, x, y| (t.riesz(a, b, x, y), 0.0)));
        out.push(compare(sp, &format!("riesz2_{}{}", a + 1, b + 1), &sp.riesz2(&g, a, b).map_err(num)?, &[(&g, &r)])?);
    }
    out.push(compare(sp, "truncate_23", &sp.truncate_23(&g).map_err(num)?, &[(&g, &trunc)])?);

    // Symmetric matrix input (M11, M12 = M21, M22).
    let m = MatrixGrid { c: [[g.clone(), g2.clone()], [g2.clone(), g3.clone()]] };
    let k_entry = |a: usize, b: usize, w: f64| sym(Box::new(move |t, x, y| (-2.0 * w * t.riesz(a, b, x, y), 0.0)));
    let (k11, k12, k22) = (k_entry(0, 0, 1.0), k_entry(0, 1, 2.0), k_entry(1, 1, 1.0));
    out.push(compare(sp, "k_op", &sp.k_op(&m).map_err(num)?, &[(&g, &k11), (&g2, &k12), (&g3, &k22)])?);
    // K'(M) = -2 sum_k [R_1k M^2k - R_2k M^1k].
    let kp11 = sym(Box::new(|t, x, y| (2.0 * t.riesz(1, 0, x, y), 0.0)));
    let kp12 = sym(Box::new(|t, x, y| (-2.0 * (t.riesz(0, 0, x, y) - t.riesz(1, 1, x, y)), 0.0)));
    let kp22 = sym(Box::new(|t, x, y| (-2.0 * t.riesz(0, 1, x, y), 0.0)));
    out.push(compare(sp, "kp_op", &sp.kp_op(&m).map_err(num)?, &[(&g, &kp11), (&g2, &kp12), (&g3, &kp22)])?);
    Ok(out)
}

/// Random velocity with modes `|m| <= band` in each direction.
fn band_limited(rng: &mut ChaCha8Rng, n: usize, l: f64, band: i64) -> VectorGrid {
    let mut terms = Vec::new();
    for m1 in -band..=band {
        for m2 in 0..=band {
            if m2 == 0 && m1 <= 0 {
                continue;
            }
            terms.push((m1, m2, [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]));
        }
    }
    let k = 2.0 * PI / l;
    let comp = |c: usize| {
        ScalarGrid::from_fn(n, l, |x, y| {
            terms
                .iter()
                .map(|(m1, m2, a)| {
                    let ph = k * (*m1 as f64 * x + *m2 as f64 * y);
                    a[2 * c] * ph.cos() + a[2 * c + 1] * ph.sin()
                })
                .sum()
        })
    };
    VectorGrid { c: [comp(0), comp(1)] }
}

fn mean_free_sup(g: &ScalarGrid) -> f64 {
    let m = g.values().iter().sum::<f64>() / g.values().len() as f64;
    g.values().iter().fold(0.0f64, |a, v| a.max((v - m).abs()))
}

fn identity_checks(sp: &Spectral, rng: &mut ChaCha8Rng, fields: usize) -> Result<Vec<IdentityCheck>, CliError> {
    let num = |e: patchflow::Error| CliError::Numerical(e.to_string());
    let (n, l) = (sp.n(), sp.l());
    let (mut ek, mut ekp) = (0.0f64, 0.0f64);
    for _ in 0..fields {
        let u = band_limited(rng, n, l, (n / 8) as i64);
        let du = strain_from_gradient(&sp.velocity_gradient(&u).map_err(num)?);
        let div = sp.divergence(&u).map_err(num)?;
        let rot = sp.rot2(&u).map_err(num)?;
        let rk = sp.k_op(&du).map_err(num)?.add(&div.scale(2.0));
        let rkp = sp.kp_op(&du).map_err(num)?.add(&rot);
        ek = ek.max(mean_free_sup(&rk) / mean_free_sup(&div.scale(2.0)));
        ekp = ekp.max(mean_free_sup(&rkp) / mean_free_sup(&rot));
    }
    Ok(vec![
        IdentityCheck { identity: "K(Du) + 2 div u".into(), fields, error: ek, pass: ek < IDENTITY_TOL },
        IdentityCheck { identity: "K'(Du) + rot u".into(), fields, error: ekp, pass: ekp < IDENTITY_TOL },
    ])
}

pub fn verify_operators(n: usize, l: f64, seed: u64, fields: usize) -> Result<OperatorReport, CliError> {
    let sp = Spectral::new(n, l).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = symbol_checks(&sp, &mut rng)?;
    let identities = identity_checks(&sp, &mut rng, fields)?;
    let pass = symbols.iter().all(|s| s.pass) && identities.iter().all(|s| s.pass);
    Ok(OperatorReport { n, l, seed, symbol_tol: SYMBOL_TOL, identity_tol: IDENTITY_TOL, symbols, identities, pass })
}
