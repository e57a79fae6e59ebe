//! Large-portfolio limit of the two-class loss.
//!
//! With infinitely granular exposures the portfolio loss converges to
//! `v(X) = ω_b L_b(X) + ω_g L_g(X)` where `L_a(x) = Φ((K_a − ρ_a x)/√(1−ρ_a²))`
//! and `X` is the combined skew-normal factor. `v` is decreasing, so the law
//! of the limit loss follows from the factor law by change of variables.

use std::f64::consts::LN_2;

use crate::dist::{norm_cdf, norm_log_cdf, norm_quantile, shape_from_delta, sn_cdf, SkewNormal, INV_SQRT_2PI};
use crate::error::{check_open_unit, Error, Result};
use crate::model::{ClassKernel, LoanClassParams, PortfolioSpec};
use crate::quad::adaptive_legendre;

const DELTA_TOL: f64 = 1e-12;
const MAX_ROOT_ITERS: usize = 400;

/// Conditional default probability `L_a(x)` of one class given its factor.
pub fn conditional_loss(class: &LoanClassParams, x: f64) -> Result<f64> {
    Ok(ClassKernel::new(class)?.pd_given(x))
}

/// One term `ω · Φ(h(s·x + o))` of a mixture map.
#[derive(Debug, Clone, Copy)]
struct Term {
    omega: f64,
    kernel: ClassKernel,
    scale: f64,
    offset: f64,
}

impl Term {
    fn h(&self, x: f64) -> f64 {
        self.kernel.h(self.scale * x + self.offset)
    }

    fn moves(&self) -> bool {
        self.omega > 0.0 && self.kernel.rho > 0.0 && self.scale != 0.0
    }

    /// `|d/dx| Φ(h)` in log space: `ln(ρ s/√(1−ρ²)) + ln φ(h)`.
    fn log_neg_slope(&self, x: f64) -> f64 {
        let h = self.h(x);
        (self.omega * self.kernel.rho * self.scale / self.kernel.idio_scale).ln() + INV_SQRT_2PI.ln() - 0.5 * h * h
    }
}

/// Decreasing map `x ↦ Σ ω_a Φ(h_a(s_a x + o_a))`, evaluated together with
/// its complement so that levels near 1 are inverted without cancellation.
#[derive(Debug, Clone)]
struct Mixture {
    terms: Vec<Term>,
}

impl Mixture {
    fn value(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.omega * norm_cdf(t.h(x))).sum()
    }

    fn complement(&self, x: f64) -> f64 {
        self.terms.iter().map(|t| t.omega * norm_cdf(-t.h(x))).sum()
    }

    fn slope(&self, x: f64) -> f64 {
        -self.log_neg_slope(x).exp()
    }

    fn log_neg_slope(&self, x: f64) -> f64 {
        let logs: Vec<f64> = self.terms.iter().filter(|t| t.moves()).map(|t| t.log_neg_slope(x)).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    fn is_constant(&self) -> bool {
        !self.terms.iter().any(Term::moves)
    }

    /// Infimum and supremum of the map over the real line.
    fn range(&self) -> (f64, f64) {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for t in &self.terms {
            if t.moves() {
                hi += t.omega;
            } else {
                let c = t.omega * norm_cdf(t.h(0.0));
                lo += c;
                hi += c;
            }
        }
        (lo, hi)
    }

    /// Solves `value(x) = level` for `level` strictly inside `range()`.
    fn solve(&self, level: f64) -> Result<f64> {
        let upper = level > 0.5;
        let target = if upper { 1.0 - level } else { level };
        // Decreasing in x in both branches.
        let residual = |x: f64| {
            if upper {
                target - self.complement(x)
            } else {
                self.value(x) - target
            }
        };

        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        let r0 = residual(0.0);
        if r0 == 0.0 {
            return Ok(0.0);
        }
        let mut step = 1.0;
        if r0 > 0.0 {
            loop {
                hi = lo + step;
                if residual(hi) <= 0.0 {
                    break;
                }
                lo = hi;
                step *= 2.0;
                if step > 1e300 {
                    return Err(Error::domain("level", level, "the range of the loss map"));
                }
            }
        } else {
            loop {
                lo = hi - step;
                if residual(lo) >= 0.0 {
                    break;
                }
                hi = lo;
                step *= 2.0;
                if step > 1e300 {
                    return Err(Error::domain("level", level, "the range of the loss map"));
                }
            }
        }

        let mut x = 0.5 * (lo + hi);
        for _ in 0..MAX_ROOT_ITERS {
            let r = residual(x);
            if r == 0.0 {
                return Ok(x);
            }
            if r > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let slope = self.slope(x);
            let newton = x - r / slope;
            let next = if slope < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let tol = 2.0 * f64::EPSILON * x.abs().max(1.0);
            if (next - x).abs() <= tol || hi - lo <= tol {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }
}

/// Limit loss law of a two-class portfolio with a common skew mixing parameter.
#[derive(Debug, Clone)]
pub struct LimitModel {
    green: LoanClassParams,
    brown: LoanClassParams,
    factor: SkewNormal,
    map: Mixture,
}

impl LimitModel {
    pub fn new(green: LoanClassParams, brown: LoanClassParams) -> Result<Self> {
        green.validate()?;
        brown.validate()?;
        let total = green.omega + brown.omega;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "class exposure budgets must sum to 1, got {total}"
            )));
        }
        if (green.delta - brown.delta).abs() > DELTA_TOL {
            return Err(Error::DeltaMismatch {
                green: green.delta,
                brown: brown.delta,
            });
        }
        let factor = SkewNormal::new(shape_from_delta(brown.delta))?;
        let term = |class: &LoanClassParams| -> Result<Term> {
            Ok(Term {
                omega: class.omega,
                kernel: ClassKernel::new(class)?,
                scale: 1.0,
                offset: 0.0,
            })
        };
        let map = Mixture {
            terms: vec![term(&brown)?, term(&green)?],
        };
        Ok(Self {
            green,
            brown,
            factor,
            map,
        })
    }

    pub fn from_spec(spec: &PortfolioSpec) -> Result<Self> {
        Self::new(spec.green, spec.brown)
    }

    pub fn green(&self) -> &LoanClassParams {
        &self.green
    }

    pub fn brown(&self) -> &LoanClassParams {
        &self.brown
    }

    /// Shape `γ` of the combined systematic factor.
    pub fn gamma(&self) -> f64 {
        self.factor.shape()
    }

    /// Default thresholds `(K_g, K_b)`.
    pub fn thresholds(&self) -> (f64, f64) {
        (self.map.terms[1].kernel.threshold, self.map.terms[0].kernel.threshold)
    }

    /// Infimum and supremum of the limit loss.
    pub fn loss_range(&self) -> (f64, f64) {
        self.map.range()
    }

    /// `v(x) = ω_b L_b(x) + ω_g L_g(x)`.
    pub fn mix_loss(&self, x: f64) -> f64 {
        self.map.value(x)
    }

    /// `v'(x)`, never positive.
    pub fn mix_loss_slope(&self, x: f64) -> f64 {
        self.map.slope(x)
    }

    /// `x*(ℓ) = v⁻¹(ℓ)`.
    pub fn invert_v(&self, level: f64) -> Result<f64> {
        check_open_unit("level", level)?;
        if self.map.is_constant() {
            return Err(Error::NonInvertible);
        }
        let (lo, hi) = self.map.range();
        if level <= lo || level >= hi {
            return Err(Error::domain("level", level, "the range of the loss map"));
        }
        self.map.solve(level)
    }

    /// Density of the limit loss. Zero outside the support.
    pub fn mix_density(&self, level: f64) -> Result<f64> {
        Ok(self.mix_log_density(level)?.exp())
    }

    /// Log density `ln f_γ(x*) − ln|v'(x*)|`.
    pub fn mix_log_density(&self, level: f64) -> Result<f64> {
        if level.is_nan() {
            return Err(Error::domain("level", level, "(0, 1)"));
        }
        if self.map.is_constant() {
            return Err(Error::NonInvertible);
        }
        let (lo, hi) = self.map.range();
        if level <= lo.max(0.0) || level >= hi.min(1.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let x = self.map.solve(level)?;
        let log_pdf = LN_2 + INV_SQRT_2PI.ln() - 0.5 * x * x + norm_log_cdf(self.gamma() * x);
        Ok(log_pdf - self.map.log_neg_slope(x))
    }

    /// `P(L ≤ ℓ) = 1 − F_γ(x*(ℓ))`.
    pub fn mix_cdf(&self, level: f64) -> Result<f64> {
        if level.is_nan() {
            return Err(Error::domain("level", level, "[0, 1]"));
        }
        let (lo, hi) = self.map.range();
        if self.map.is_constant() {
            return Ok(if level >= lo { 1.0 } else { 0.0 });
        }
        if level <= lo {
            return Ok(0.0);
        }
        if level >= hi {
            return Ok(1.0);
        }
        let x = self.map.solve(level)?;
        // 1 − F_γ(x) = F_{−γ}(−x), without cancellation for large x.
        Ok(sn_cdf(-x, -self.gamma()))
    }

    /// Value-at-risk `v(F_γ⁻¹(1−β))`.
    pub fn mix_var(&self, beta: f64) -> Result<f64> {
        check_open_unit("beta", beta)?;
        Ok(self.map.value(self.factor.quantile(1.0 - beta)?))
    }
}

/// Closed-form limit density of a single class with factor shape `γ`.
pub fn single_class_density(pd: f64, rho: f64, gamma: f64, level: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain("rho", rho, "(0, 1)"));
    }
    check_open_unit("pd", pd)?;
    if !gamma.is_finite() {
        return Err(Error::domain("gamma", gamma, "finite reals"));
    }
    if level.is_nan() {
        return Err(Error::domain("level", level, "(0, 1)"));
    }
    if level <= 0.0 || level >= 1.0 {
        return Ok(0.0);
    }
    let delta = gamma / (1.0 + gamma * gamma).sqrt();
    let class = LoanClassParams::new(pd, rho, delta, 1.0, 1)?;
    let k = ClassKernel::new(&class)?.threshold;
    let s = (1.0 - rho * rho).sqrt();
    let z = norm_quantile(level)?;
    let x = (k - s * z) / rho;
    let log_f = LN_2 + (s / rho).ln() + norm_log_cdf(gamma * x) - 0.5 * (x - z) * (x + z);
    Ok(log_f.exp())
}

/// Limit cdf `P(L ≤ ℓ)` when the classes may carry different skew mixing
/// parameters.
///
/// Conditional on `X₂ = t` the loss is decreasing in `X₁`, so
/// `P(L ≤ ℓ) = ∫₀^∞ 2φ(t) Φ(−x₁*(t)) dt` with `x₁*(t)` the inner root.
pub fn general_mix_cdf(green: &LoanClassParams, brown: &LoanClassParams, level: f64) -> Result<f64> {
    green.validate()?;
    brown.validate()?;
    let total = green.omega + brown.omega;
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParams(format!(
            "class exposure budgets must sum to 1, got {total}"
        )));
    }
    if level.is_nan() {
        return Err(Error::domain("level", level, "[0, 1]"));
    }
    let kb = ClassKernel::new(brown)?;
    let kg = ClassKernel::new(green)?;
    let inner = |t: f64| Mixture {
        terms: vec![
            Term {
                omega: brown.omega,
                kernel: kb,
                scale: kb.x1_coef,
                offset: kb.delta * t,
            },
            Term {
                omega: green.omega,
                kernel: kg,
                scale: kg.x1_coef,
                offset: kg.delta * t,
            },
        ],
    };
    let probe = inner(0.0);
    let (lo, hi) = probe.range();
    if probe.is_constant() {
        return Ok(if level >= lo { 1.0 } else { 0.0 });
    }
    if level <= lo {
        return Ok(0.0);
    }
    if level >= hi {
        return Ok(1.0);
    }
    let failure = std::cell::RefCell::new(None);
    let integrand = |t: f64| match inner(t).solve(level) {
        Ok(x1) => 2.0 * INV_SQRT_2PI * (-0.5 * t * t).exp() * norm_cdf(-x1),
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let p = adaptive_legendre(integrand, 0.0, 13.0, 1e-13);
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(p.clamp(0.0, 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{delta_from_shape, sn_quantile};
    use proptest::prelude::*;

    fn class(pd: f64, rho: f64, delta: f64, omega: f64) -> LoanClassParams {
        LoanClassParams::new(pd, rho, delta, omega, 1).unwrap()
    }

    fn scenario(gamma: f64) -> LimitModel {
        let d = delta_from_shape(gamma);
        LimitModel::new(class(0.005, 0.1, d, 0.3), class(0.01, 0.1, d, 0.7)).unwrap()
    }

    #[test]
    fn conditional_loss_examples() {
        let c = class(0.01, 0.1, 0.0, 1.0);
        let l = conditional_loss(&c, -0.23263 / 0.1).unwrap();
        assert!((l - 0.01767764085703154).abs() < 1e-14);
        let flat = class(0.037, 0.0, 0.3, 1.0);
        assert!((conditional_loss(&flat, 5.0).unwrap() - 0.037).abs() < 1e-14);
        assert!(conditional_loss(&c, 1e6).unwrap() < 1e-300);
        assert!((conditional_loss(&c, -1e6).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vasicek_var_and_cdf() {
        let m = LimitModel::new(class(0.01, 0.1, 0.0, 0.4), class(0.01, 0.1, 0.0, 0.6)).unwrap();
        assert!((m.mix_var(0.99).unwrap() - 0.017677850596966495).abs() < 1e-14);
        assert!((m.mix_cdf(0.017677850596966495).unwrap() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn vasicek_density_example() {
        let m = LimitModel::new(class(0.02, 0.3, 0.0, 0.5), class(0.02, 0.3, 0.0, 0.5)).unwrap();
        let f = m.mix_density(0.02).unwrap();
        assert!((f - 24.929330083682743).abs() < 1e-10);
        let g = single_class_density(0.02, 0.3, 0.0, 0.02).unwrap();
        assert!((g - 2.0 * 0.5 * 24.929330083682743).abs() < 1e-9);
    }

    #[test]
    fn single_class_density_matches_mixture() {
        for &gamma in &[-2.0, -0.5, 0.0, 0.5, 3.0] {
            let d = delta_from_shape(gamma);
            let m = LimitModel::new(class(0.03, 0.2, d, 0.25), class(0.03, 0.2, d, 0.75)).unwrap();
            for &l in &[1e-6, 0.01, 0.03, 0.2, 0.7, 0.999] {
                let a = m.mix_density(l).unwrap();
                let b = single_class_density(0.03, 0.2, gamma, l).unwrap();
                assert!((a - b).abs() <= 1e-9 * b.max(1e-300), "γ={gamma} ℓ={l}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        for &gamma in &[-1.0, 0.5, 2.0] {
            let m = scenario(gamma);
            let total = adaptive_legendre(|l| m.mix_density(l).unwrap(), 0.0, 1.0, 1e-11);
            assert!((total - 1.0).abs() < 1e-8, "γ={gamma}: {total}");
        }
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        let m = scenario(0.5);
        for &l in &[0.002, 0.008, 0.015, 0.02] {
            let h = 1e-5 * l;
            let fd = (m.mix_cdf(l + h).unwrap() - m.mix_cdf(l - h).unwrap()) / (2.0 * h);
            let f = m.mix_density(l).unwrap();
            assert!((fd - f).abs() < 1e-5 * f, "ℓ={l}: {fd} vs {f}");
        }
    }

    #[test]
    fn invert_v_examples_and_errors() {
        let m = scenario(0.5);
        for &x in &[-30.0, -3.0, 0.0, 1.7, 12.0] {
            let l = m.mix_loss(x);
            let back = m.invert_v(l).unwrap();
            assert!((back - x).abs() < 1e-9 * x.abs().max(1.0), "{x} -> {l} -> {back}");
        }
        assert!(matches!(m.invert_v(0.0), Err(Error::Domain { .. })));
        assert!(matches!(m.invert_v(1.0), Err(Error::Domain { .. })));
        assert!(matches!(m.invert_v(f64::NAN), Err(Error::Domain { .. })));
        let flat = LimitModel::new(class(0.01, 0.0, 0.2, 0.5), class(0.02, 0.0, 0.2, 0.5)).unwrap();
        assert!(matches!(flat.invert_v(0.015), Err(Error::NonInvertible)));
        assert!(matches!(flat.mix_density(0.015), Err(Error::NonInvertible)));
        assert_eq!(flat.mix_cdf(0.0149).unwrap(), 0.0);
        assert_eq!(flat.mix_cdf(0.0151).unwrap(), 1.0);
    }

    #[test]
    fn partially_flat_support() {
        let m = LimitModel::new(class(0.02, 0.0, 0.3, 0.4), class(0.05, 0.2, 0.3, 0.6)).unwrap();
        let (lo, hi) = m.loss_range();
        assert!((lo - 0.008).abs() < 1e-15 && (hi - 0.608).abs() < 1e-15);
        assert_eq!(m.mix_cdf(0.007).unwrap(), 0.0);
        assert_eq!(m.mix_cdf(0.7).unwrap(), 1.0);
        assert_eq!(m.mix_density(0.7).unwrap(), 0.0);
        assert!(matches!(m.invert_v(0.7), Err(Error::Domain { .. })));
        let l = m.mix_var(0.99).unwrap();
        assert!((m.mix_cdf(l).unwrap() - 0.99).abs() < 1e-12);
    }

    #[test]
    fn endpoints() {
        let m = scenario(0.5);
        assert_eq!(m.mix_density(0.0).unwrap(), 0.0);
        assert_eq!(m.mix_density(1.0).unwrap(), 0.0);
        assert_eq!(m.mix_cdf(0.0).unwrap(), 0.0);
        assert_eq!(m.mix_cdf(1.0).unwrap(), 1.0);
        assert_eq!(m.mix_cdf(-0.5).unwrap(), 0.0);
        assert!(m.mix_var(1.0).is_err());
    }

    #[test]
    fn delta_mismatch_rejected() {
        let r = LimitModel::new(class(0.01, 0.1, 0.3, 0.5), class(0.01, 0.1, 0.2, 0.5));
        assert!(matches!(r, Err(Error::DeltaMismatch { .. })));
        let r = LimitModel::new(class(0.01, 0.1, 0.3, 0.5), class(0.01, 0.1, 0.3, 0.6));
        assert!(matches!(r, Err(Error::InvalidParams(_))));
        assert!(single_class_density(0.01, 0.0, 0.5, 0.1).is_err());
    }

    #[test]
    fn general_cdf_reduces_to_common_delta_law() {
        for &d in &[0.0, 0.4472135954999579, -0.6, 0.9] {
            let g = class(0.005, 0.1, d, 0.3);
            let b = class(0.01, 0.15, d, 0.7);
            let m = LimitModel::new(g, b).unwrap();
            for &beta in &[0.5, 0.9, 0.99, 0.999] {
                let l = m.mix_var(beta).unwrap();
                let p = general_mix_cdf(&g, &b, l).unwrap();
                assert!((p - beta).abs() < 1e-10, "δ={d} β={beta}: {p}");
            }
        }
    }

    #[test]
    fn general_cdf_with_distinct_deltas_against_simulation_free_oracle() {
        // Brute-force double integral over (X₁, X₂) on a fine tensor grid.
        let g = class(0.02, 0.2, 0.1, 0.4);
        let b = class(0.03, 0.3, 0.7, 0.6);
        let (kg, kb) = (ClassKernel::new(&g).unwrap(), ClassKernel::new(&b).unwrap());
        let level = 0.06;
        let oracle = adaptive_legendre(
            |t| {
                let w = 2.0 * INV_SQRT_2PI * (-0.5 * t * t).exp();
                w * adaptive_legendre(
                    |x1| {
                        let v = g.omega * kg.pd_given(kg.factor(x1, t)) + b.omega * kb.pd_given(kb.factor(x1, t));
                        if v <= level {
                            INV_SQRT_2PI * (-0.5 * x1 * x1).exp()
                        } else {
                            0.0
                        }
                    },
                    -12.0,
                    12.0,
                    1e-12,
                )
            },
            0.0,
            10.0,
            1e-10,
        );
        let p = general_mix_cdf(&g, &b, level).unwrap();
        assert!((p - oracle).abs() < 1e-6, "{p} vs {oracle}");
    }

    #[test]
    fn var_matches_factor_quantile() {
        let m = scenario(0.5);
        let q = sn_quantile(0.01, 0.5).unwrap();
        assert_eq!(m.mix_var(0.99).unwrap(), m.mix_loss(q));
    }

    proptest! {
        #[test]
        fn var_is_affine_in_budget(
            pg in 0.001f64..0.2, pb in 0.001f64..0.2,
            rg in 0.01f64..0.6, rb in 0.01f64..0.6,
            gamma in -3.0f64..3.0, w in 0.0f64..1.0, beta in 0.5f64..0.999,
        ) {
            let d = delta_from_shape(gamma);
            let at = |w: f64| LimitModel::new(class(pg, rg, d, w), class(pb, rb, d, 1.0 - w)).unwrap().mix_var(beta).unwrap();
            let (v0, v1, vw) = (at(0.0), at(1.0), at(w));
            prop_assert!((vw - (w * v1 + (1.0 - w) * v0)).abs() <= 1e-12 * v0.max(v1));
        }

        #[test]
        fn var_increasing_in_level(
            pg in 0.001f64..0.2, pb in 0.001f64..0.2,
            rg in 0.01f64..0.6, rb in 0.01f64..0.6,
            gamma in -3.0f64..3.0, w in 0.0f64..1.0,
            b1 in 0.01f64..0.99, b2 in 0.01f64..0.99,
        ) {
            let d = delta_from_shape(gamma);
            let m = LimitModel::new(class(pg, rg, d, w), class(pb, rb, d, 1.0 - w)).unwrap();
            let (lo, hi) = if b1 < b2 { (b1, b2) } else { (b2, b1) };
            prop_assert!(m.mix_var(lo).unwrap() <= m.mix_var(hi).unwrap());
        }

        #[test]
        fn cdf_inverts_var(
            pg in 0.001f64..0.2, pb in 0.001f64..0.2,
            rg in 0.02f64..0.6, rb in 0.02f64..0.6,
            gamma in -3.0f64..3.0, w in 0.0f64..1.0, beta in 0.01f64..0.999,
        ) {
            let d = delta_from_shape(gamma);
            let m = LimitModel::new(class(pg, rg, d, w), class(pb, rb, d, 1.0 - w)).unwrap();
            let l = m.mix_var(beta).unwrap();
            prop_assert!((m.mix_cdf(l).unwrap() - beta).abs() < 1e-9);
        }

        #[test]
        fn cdf_monotone_and_density_nonnegative(
            gamma in -3.0f64..3.0, a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let m = scenario(gamma);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.mix_cdf(lo).unwrap() <= m.mix_cdf(hi).unwrap());
            prop_assert!(m.mix_density(a).unwrap() >= 0.0);
        }
    }
}
