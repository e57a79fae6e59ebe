//! Scalar probability kernels: the standard normal and the standardized
//! skew-normal law `SN(0, 1, shape)` with density `2 φ(x) Φ(shape·x)`.
//!
//! Everything here is a pure function of its arguments. Sampling takes the
//! random stream explicitly.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{check_open_unit, Error, Result};

/// `1/√(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, finite far into the lower tail where `Φ` itself underflows.
pub fn norm_log_cdf(x: f64) -> f64 {
    if x > -35.0 {
        norm_cdf(x).ln()
    } else {
        // Mills-ratio asymptotic series.
        let z2 = x * x;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

pub fn norm_quantile(p: f64) -> Result<f64> {
    check_open_unit("p", p)?;
    let q = -SQRT_2 * erfc_inv(2.0 * p);
    // one Halley step against the accurate cdf
    let e = (norm_cdf(q) - p) / norm_pdf(q);
    if e.is_finite() {
        Ok(q - e / (1.0 + 0.5 * q * e))
    } else {
        Ok(q)
    }
}

pub fn shape_from_loading(rho: f64, delta: f64) -> f64 {
    let beta = rho * delta;
    beta / (1.0 - beta * beta).sqrt()
}

/// Factor shape `γ = δ/√(1−δ²)` of `√(1−δ²)·X₁ + δ·|W|`.
pub fn shape_from_delta(delta: f64) -> f64 {
    delta / (1.0 - delta * delta).sqrt()
}

/// Inverse of [`shape_from_delta`]: `δ = γ/√(1+γ²)`.
pub fn delta_from_shape(shape: f64) -> f64 {
    shape / (1.0 + shape * shape).sqrt()
}

#[inline]
pub fn sn_pdf(x: f64, shape: f64) -> f64 {
    2.0 * norm_pdf(x) * norm_cdf(shape * x)
}

/// Skew-normal cdf through Owen's T: `Φ(x) − 2 T(x, shape)`.
pub fn sn_cdf(x: f64, shape: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if shape == 0.0 {
        return norm_cdf(x);
    }
    let t = owens_t::owens_t(x, shape);
    if x <= 0.0 {
        let phi = norm_cdf(x);
        let f = phi - 2.0 * t;
        if shape > 0.0 && f < 1e-4 * phi {
            return sn_lower_tail(x, shape);
        }
        f.clamp(0.0, 1.0)
    } else {
        // upper tail 1 − F = Φ(−x) + 2T(x, shape)
        (1.0 - (norm_cdf(-x) + 2.0 * t)).clamp(0.0, 1.0)
    }
}

/// `F(x)` for `x ≤ 0 < shape`, where `Φ(x) − 2T` cancels:
/// `F = 2 φ(x) Φ(shape·x) ∫₀^∞ e^{xs − s²/2} Φ(shape(x−s))/Φ(shape·x) ds`.
fn sn_lower_tail(x: f64, shape: f64) -> f64 {
    let base = norm_log_cdf(shape * x);
    let rate = (-x * (1.0 + shape * shape)).max(1.0);
    let upper = (60.0 / rate).min(40.0);
    let integral = crate::quad::adaptive_legendre(
        |s| (x * s - 0.5 * s * s + norm_log_cdf(shape * (x - s)) - base).exp(),
        0.0,
        upper,
        1e-11 / rate,
    );
    (std::f64::consts::LN_2 - LN_SQRT_2PI - 0.5 * x * x + base + integral.ln()).exp()
}

/// Bracketing search followed by bisection-safeguarded Newton on [`sn_cdf`].
pub fn sn_quantile(p: f64, shape: f64) -> Result<f64> {
    check_open_unit("p", p)?;
    if !shape.is_finite() {
        return Err(Error::domain("shape", shape, "finite reals"));
    }
    if shape == 0.0 {
        return norm_quantile(p);
    }
    let f = |x: f64| sn_cdf(x, shape) - p;

    // Start from the moment-matched normal approximation.
    let d = delta_from_shape(shape);
    let mean = (2.0 / PI).sqrt() * d;
    let sd = (1.0 - 2.0 / PI * d * d).sqrt();
    let x0 = mean + sd * norm_quantile(p)?;

    let mut step = 0.5;
    let (mut lo, mut hi) = (x0 - step, x0 + step);
    while f(lo) > 0.0 {
        step *= 2.0;
        lo = x0 - step;
        if step > 1e4 {
            return Err(Error::domain("p", p, "(0, 1) with a representable quantile"));
        }
    }
    step = 0.5;
    while f(hi) < 0.0 {
        step *= 2.0;
        hi = x0 + step;
        if step > 1e4 {
            return Err(Error::domain("p", p, "(0, 1) with a representable quantile"));
        }
    }

    let mut x = x0.clamp(lo, hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = sn_pdf(x, shape);
        let newton = if dens > 0.0 { x - fx / dens } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// One draw of `√(1−δ²)·X₁ + δ·|W|`, distributed `SN(0, 1, δ/√(1−δ²))`.
pub fn sn_sample<R: Rng + ?Sized>(stream: &mut R, delta: f64) -> Result<f64> {
    if !(delta.abs() < 1.0) {
        return Err(Error::domain("delta", delta, "(-1, 1)"));
    }
    let x1: f64 = stream.sample(StandardNormal);
    let w: f64 = stream.sample(StandardNormal);
    Ok((1.0 - delta * delta).sqrt() * x1 + delta * w.abs())
}

/// Standardized skew-normal law `SN(0, 1, shape)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewNormal {
    shape: f64,
}

impl SkewNormal {
    pub fn new(shape: f64) -> Result<Self> {
        if shape.is_finite() {
            Ok(Self { shape })
        } else {
            Err(Error::domain("shape", shape, "finite reals"))
        }
    }

    pub fn from_delta(delta: f64) -> Result<Self> {
        if !(delta.abs() < 1.0) {
            return Err(Error::domain("delta", delta, "(-1, 1)"));
        }
        Self::new(shape_from_delta(delta))
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn delta(&self) -> f64 {
        delta_from_shape(self.shape)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        sn_pdf(x, self.shape)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        sn_cdf(x, self.shape)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        sn_quantile(p, self.shape)
    }

    pub fn mean(&self) -> f64 {
        (2.0 / PI).sqrt() * self.delta()
    }

    pub fn variance(&self) -> f64 {
        let d = self.delta();
        1.0 - 2.0 / PI * d * d
    }

    pub fn sample<R: Rng + ?Sized>(&self, stream: &mut R) -> f64 {
        let d = self.delta();
        let x1: f64 = stream.sample(StandardNormal);
        let w: f64 = stream.sample(StandardNormal);
        (1.0 - d * d).sqrt() * x1 + d * w.abs()
    }
}
