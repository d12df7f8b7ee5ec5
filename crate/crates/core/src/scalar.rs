//! Bracketing root finders and one-dimensional maximization.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Plain bisection on `[a, b]`; requires a sign change.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<Root> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            fx: fa,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            fx: fb,
            iterations: 0,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Solver(format!(
            "bisection: no sign change on [{a}, {b}]"
        )));
    }
    let mut it = 0;
    while (b - a).abs() > xtol && it < 200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        it += 1;
        if fm == 0.0 {
            return Ok(Root {
                x: m,
                fx: 0.0,
                iterations: it,
            });
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let x = 0.5 * (a + b);
    Ok(Root {
        x,
        fx: f(x),
        iterations: it,
    })
}

/// Brent's method: inverse quadratic interpolation safeguarded by bisection.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> Result<Root> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            fx: fa,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            fx: fb,
            iterations: 0,
        });
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::Solver(format!(
            "brent: no sign change on [{a}, {b}] (f = {fa}, {fb})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for it in 1..=200 {
        if fb.signum() == fc.signum() {
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
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(Root {
                x: b,
                fx: fb,
                iterations: it,
            });
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
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
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::Solver("brent: iteration limit reached".into()))
}

/// Golden-section search for a maximum of a unimodal function on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > xtol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Widen `[lo, hi]` geometrically (dividing `lo`, multiplying `hi` by
/// `factor`) until `f` changes sign or the limits are passed. Intended for
/// positive abscissae such as diffusion times.
pub fn expand_positive_bracket<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    min_lo: f64,
    max_hi: f64,
    factor: f64,
) -> Option<(f64, f64)> {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    loop {
        if flo.is_finite() && fhi.is_finite() && flo.signum() != fhi.signum() {
            return Some((lo, hi));
        }
        let can_lo = lo > min_lo;
        let can_hi = hi < max_hi;
        if !can_lo && !can_hi {
            return None;
        }
        if can_lo {
            lo = (lo / factor).max(min_lo);
            flo = f(lo);
        }
        if can_hi {
            hi = (hi * factor).min(max_hi);
            fhi = f(hi);
        }
    }
}
