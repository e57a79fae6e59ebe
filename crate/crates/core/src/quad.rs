//! Gauss–Legendre quadrature helpers.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

fn rule(degree: usize) -> &'static GaussLegendre {
    static R20: OnceLock<GaussLegendre> = OnceLock::new();
    static R128: OnceLock<GaussLegendre> = OnceLock::new();
    let cell = match degree {
        20 => &R20,
        128 => &R128,
        _ => unreachable!("unsupported rule degree {degree}"),
    };
    cell.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(degree).unwrap()))
}

/// Fixed 128-node Gauss–Legendre rule on `[a, b]`.
pub fn legendre_128<F: FnMut(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    rule(128).integrate(a, b, f)
}

/// Adaptive bisection with a 20-point Gauss–Legendre rule per panel.
///
/// A panel is accepted when the rule and the sum over its two halves agree
/// within the panel's share of `tol`, or within rounding of the panel sum.
pub fn adaptive_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let whole = rule(20).integrate(a, b, &f);
    recurse(&f, a, b, whole, tol.max(f64::MIN_POSITIVE), 0)
}

fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = rule(20).integrate(a, mid, f);
    let right = rule(20).integrate(mid, b, f);
    let split = left + right;
    let floor = 16.0 * f64::EPSILON * (left.abs() + right.abs());
    if (split - whole).abs() <= tol.max(floor) || depth >= 40 || mid <= a || mid >= b {
        split
    } else {
        recurse(f, a, mid, left, 0.5 * tol, depth + 1) + recurse(f, mid, b, right, 0.5 * tol, depth + 1)
    }
}
