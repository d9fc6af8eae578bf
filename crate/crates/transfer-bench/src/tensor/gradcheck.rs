//! Central finite differences for verifying autodiff gradients.
//!
//! The checks here never touch the tape's backward pass: they only re-run a
//! user-supplied forward evaluation at perturbed inputs, so they stay an
//! independent oracle for it.

use super::Element;

/// Central difference of `f` at coordinate `idx`, step `h`.
pub fn central_diff<E, F>(f: &mut F, x: &[E], idx: usize, h: f64) -> f64
where
    E: Element,
    F: FnMut(&[E]) -> E,
{
    let mut xp = x.to_vec();
    xp[idx] = E::from_f64(x[idx].to_f64() + h);
    let mut xm = x.to_vec();
    xm[idx] = E::from_f64(x[idx].to_f64() - h);
    (f(&xp).to_f64() - f(&xm).to_f64()) / (2.0 * h)
}

/// Relative error between an autodiff gradient and the central difference,
/// with the usual `max(|a|, |b|, floor)` denominator.
pub fn rel_err(autodiff: f64, numeric: f64, floor: f64) -> f64 {
    (autodiff - numeric).abs() / autodiff.abs().max(numeric.abs()).max(floor)
}

/// Central difference that vouches for itself: the quotients at `h` and
/// `h/2` must agree to `consistency` relative error, otherwise the function
/// is locally too rough (a ReLU kink inside the stencil, or dtype noise) for
/// the quotient to be a usable oracle and `None` is returned.
pub fn consistent_central_diff<E, F>(
    f: &mut F,
    x: &[E],
    idx: usize,
    h: f64,
    consistency: f64,
) -> Option<f64>
where
    E: Element,
    F: FnMut(&[E]) -> E,
{
    let wide = central_diff(f, x, idx, h);
    let tight = central_diff(f, x, idx, h / 2.0);
    (rel_err(wide, tight, 1e-12) <= consistency).then_some(tight)
}

/// Worst relative error over the given coordinates.
///
/// Coordinates whose gradient magnitude falls below `min_grad` are skipped:
/// at float32 the finite-difference quotient loses all significant digits
/// there, so they say nothing about the autodiff path. Coordinates where the
/// quotient fails its own consistency check are skipped for the same reason.
pub fn max_rel_err_over<E, F>(
    f: &mut F,
    x: &[E],
    grad: &[E],
    coords: &[usize],
    h: f64,
    min_grad: f64,
) -> (f64, usize)
where
    E: Element,
    F: FnMut(&[E]) -> E,
{
    let mut worst = 0.0f64;
    let mut checked = 0;
    for &idx in coords {
        let g = grad[idx].to_f64();
        if g.abs() < min_grad {
            continue;
        }
        let fd = central_diff(f, x, idx, h);
        worst = worst.max(rel_err(g, fd, min_grad));
        checked += 1;
    }
    (worst, checked)
}
