//! Bracketed root finding.

use crate::error::{Error, Result};

/// Default absolute tolerance on the objective.
pub const ROOT_TOL: f64 = 1e-10;

/// Smallest bracket width at which the search stops.
pub const MIN_WIDTH: f64 = 1e-12;

const MAX_ITER: usize = 200;

/// Brent's method: inverse quadratic / secant steps guarded by bisection.
///
/// Returns `x` with `|f(x)| <= tol` or a bracket narrower than
/// [`MIN_WIDTH`] (relative to `|x|` when that exceeds one). The iteration
/// sequence is fully determined by the inputs.
pub fn find_root<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::InvalidArgument(format!("bad bracket [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a)?, f(b)?);
    if fa.is_nan() || fb.is_nan() {
        return Err(Error::Numerical("objective returned NaN".into()));
    }
    if fa.abs() <= tol {
        return Ok(a);
    }
    if fb.abs() <= tol {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootNotBracketed {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
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
        let width_tol = 0.5 * MIN_WIDTH * b.abs().max(1.0);
        let m = 0.5 * (c - b);
        if fb.abs() <= tol || m.abs() <= width_tol {
            return Ok(b);
        }
        if e.abs() >= width_tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (width_tol * q).abs()).min((e * q).abs()) {
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
        b += if d.abs() > width_tol {
            d
        } else {
            width_tol.copysign(m)
        };
        fb = f(b)?;
        if fb.is_nan() {
            return Err(Error::Numerical("objective returned NaN".into()));
        }
    }
    Err(Error::Numerical(format!(
        "root search did not converge in {MAX_ITER} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_root() {
        let x = find_root(|x| Ok(x - 0.5), 0.0, 1.0, ROOT_TOL).unwrap();
        assert!((x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn uniform_spending_identity() {
        let x = find_root(|c| Ok(c - 0.001525), 0.0, 1.0, 1e-14).unwrap();
        assert!((x - 0.001525).abs() < 1e-13);
    }

    #[test]
    fn no_sign_change() {
        let err = find_root(|x| Ok(x * x + 1.0), -1.0, 1.0, ROOT_TOL).unwrap_err();
        assert!(matches!(err, Error::RootNotBracketed { .. }));
        assert!(err.is_numerical());
    }

    #[test]
    fn steep_and_flat_objectives() {
        let x = find_root(|x| Ok((x - 0.3f64).powi(3)), 0.0, 1.0, 1e-30).unwrap();
        assert!((x - 0.3).abs() < 1e-9);
        let x = find_root(|x: f64| Ok(x.exp() - 2.0), -5.0, 5.0, 1e-14).unwrap();
        assert!((x - 2f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn bracket_refinement_invariance() {
        let f = |x: f64| Ok(x.tanh() - 0.2);
        let wide = find_root(f, -3.0, 4.0, ROOT_TOL).unwrap();
        let narrow = find_root(f, 0.1, 0.3, ROOT_TOL).unwrap();
        assert!((wide - narrow).abs() <= 1e-10);
    }

    #[test]
    fn errors_propagate() {
        let err = find_root(|_| Err(Error::Numerical("boom".into())), 0.0, 1.0, ROOT_TOL);
        assert!(err.is_err());
    }
}
