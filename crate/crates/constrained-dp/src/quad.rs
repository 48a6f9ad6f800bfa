//! Adaptive quadrature on boxes, used to compute normalizing constants and
//! moments of constrained densities in low dimension.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {tol} (best error estimate {best})")]
    QuadratureFailure { tol: f64, best: f64 },
    #[error("dimension {0} exceeds the quadrature limit of 4")]
    DimensionTooLarge(usize),
}

const MAX_DEPTH: u32 = 40;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth >= MAX_DEPTH || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
            + adaptive_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
    }
}

/// Adaptive Simpson integration of `f` over `[a, b]` with absolute tolerance `tol`.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    // Split at interior points so kinks at the midpoint do not fool the
    // error estimate of a single panel.
    let n0 = 16;
    let h = (b - a) / n0 as f64;
    let mut total = 0.0;
    for i in 0..n0 {
        let x0 = a + i as f64 * h;
        let x1 = x0 + h;
        let m = 0.5 * (x0 + x1);
        let (fa, fm, fb) = (f(x0), f(m), f(x1));
        let whole = simpson(fa, fm, fb, h);
        total += adaptive_rec(&f, x0, x1, fa, fm, fb, whole, tol / n0 as f64, 0);
    }
    total
}

/// Iterated adaptive Simpson integration over an axis-aligned box, `dim ≤ 4`.
///
/// The per-level tolerance is split geometrically; the outermost levels see
/// the integrand only through inner integrals, so the result is accurate to
/// roughly `tol` relative to the magnitude of the integral.
pub fn integrate_box<F>(f: &F, lo: &[f64], hi: &[f64], tol: f64) -> Result<f64, QuadError>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = lo.len();
    assert_eq!(dim, hi.len());
    if dim == 0 {
        return Ok(f(&[]));
    }
    if dim > 4 {
        return Err(QuadError::DimensionTooLarge(dim));
    }
    let mut point = vec![0.0; dim];
    Ok(nested(f, lo, hi, tol, 0, &mut point))
}

fn nested<F>(f: &F, lo: &[f64], hi: &[f64], tol: f64, axis: usize, point: &mut Vec<f64>) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let dim = lo.len();
    if axis == dim - 1 {
        let g = |x: f64| {
            let mut p = point.clone();
            p[axis] = x;
            f(&p)
        };
        integrate_1d(g, lo[axis], hi[axis], tol)
    } else {
        let g = |x: f64| {
            let mut p = point.clone();
            p[axis] = x;
            nested(f, lo, hi, tol / (hi[axis] - lo[axis]).max(1.0), axis + 1, &mut p)
        };
        integrate_1d(g, lo[axis], hi[axis], tol)
    }
}
