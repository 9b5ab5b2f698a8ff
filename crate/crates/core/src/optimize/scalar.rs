//! Bounded scalar minimization (golden section with parabolic steps).

use crate::error::{Error, Result};

const MAX_EVALS: usize = 500;

/// Minimize `f` on `[lo, hi]` to an abscissa tolerance `tol`.
///
/// Brent's bounded method: for unimodal `f` the returned point is within
/// `tol` of the minimizer, otherwise it is a local minimum. The endpoints
/// themselves are never evaluated.
pub fn bounded_scalar_minimize(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Parameter(format!("invalid interval [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter("tolerance must be positive".into()));
    }
    let sqrt_eps = f64::EPSILON.sqrt();
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let (mut a, mut b) = (lo, hi);
    let mut v = a + golden * (b - a);
    let mut w = v;
    let mut x = v;
    let mut fx = f(x);
    let (mut fv, mut fw) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut evals = 1;
    loop {
        let xm = 0.5 * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) || evals >= MAX_EVALS {
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            let mut r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            r = e;
            e = d;
            if p.abs() < (0.5 * q * r).abs() && p > q * (a - x) && p < q * (b - x) {
                use_golden = false;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
            }
        }
        if use_golden {
            e = if x >= xm { a - x } else { b - x };
            d = golden * e;
        }
        let step = if d >= 0.0 { d.abs().max(tol1) } else { -d.abs().max(tol1) };
        let u = x + step;
        let fu = f(u);
        evals += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Ok((x, fx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let (x, fx) = bounded_scalar_minimize(|x| (x - 0.3).powi(2), 0.0, 0.5, 1e-6).unwrap();
        assert!((x - 0.3).abs() < 1e-6);
        assert!(fx < 1e-12);
    }

    #[test]
    fn constant() {
        let (x, fx) = bounded_scalar_minimize(|_| 4.0, 0.0, 0.5, 1e-6).unwrap();
        assert!((0.0..=0.5).contains(&x));
        assert_eq!(fx, 4.0);
    }

    #[test]
    fn oscillating_returns_local_min() {
        let f = |x: f64| (10.0 * x).sin();
        let (x, _) = bounded_scalar_minimize(f, 0.0, 0.5, 1e-6).unwrap();
        let h = 1e-4;
        let slope = (f(x + h) - f(x - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-4, "x = {x}, slope = {slope}");
    }

    #[test]
    fn minimum_at_boundary() {
        let (x, _) = bounded_scalar_minimize(|x| x, 0.0, 0.5, 1e-6).unwrap();
        assert!(x < 1e-5);
    }

    #[test]
    fn invalid_interval() {
        assert!(bounded_scalar_minimize(|x| x, 1.0, 0.0, 1e-6).is_err());
        assert!(bounded_scalar_minimize(|x| x, 0.0, 1.0, 0.0).is_err());
    }
}
