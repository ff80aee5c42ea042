//! Brent's bracketing root finder with geometric bracket expansion.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_EXPANSIONS: usize = 60;
const MAX_ITER: usize = 500;

/// Finds a root of `f` starting from `[lo, hi]`. If the endpoints do not
/// bracket a sign change the interval is doubled about its centre, up to 60
/// times. The returned `x` satisfies `|f(x)| <= tol` or lies in a bracket of
/// width `<= tol`.
pub fn brent_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = f(a);
    let mut fb = f(b);
    let mut expansions = 0;
    while !(fa * fb <= 0.0) {
        if expansions == MAX_EXPANSIONS || !fa.is_finite() && !fb.is_finite() {
            return Err(Error::NoBracket {
                lo: a,
                hi: b,
                f_lo: fa,
                f_hi: fb,
            });
        }
        let c = 0.5 * (a + b);
        let half = (b - a).max(1e-12);
        a = c - half;
        b = c + half;
        fa = f(a);
        fb = f(b);
        expansions += 1;
    }
    brent_root_bracketed(f, a, b, fa, fb, tol)
}

/// Brent iteration on a known bracket (`fa · fb <= 0`).
pub fn brent_root_bracketed<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    tol: f64,
) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::NoBracket {
            lo: a,
            hi: b,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        // iterate to machine precision unless the residual target is met first
        let xtol = 2.0 * f64::EPSILON * b.abs() + 4.0 * f64::MIN_POSITIVE;
        let m = 0.5 * (c - b);
        if fb.abs() <= tol || m.abs() <= xtol {
            return Ok(b);
        }
        if e.abs() >= xtol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (xtol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > xtol { d } else { xtol.copysign(m) };
        fb = f(b);
    }
    Ok(b)
}
