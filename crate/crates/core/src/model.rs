//! Joint dependence structure of obligor returns.
//!
//! Each obligor `h` in class `a` has latent return
//!
//! ```text
//! Y = ρ_a √(1−δ_a²) X₁ + ρ_a δ_a X₂ + √(1−ρ_a²) Z_h,   X₁ ~ N(0,1), X₂ = |W|, W ~ N(0,1)
//! ```
//!
//! and defaults when `Y ≤ K_a`. Obligors are ordered brown first
//! (indices `0..N_b`), then green.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{norm_cdf, shape_from_loading, sn_quantile};
use crate::error::{Error, Result};
use crate::exposure::ExposureLaw;

/// Parameters of one homogeneous loan class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoanClassParams {
    /// Long-run default probability.
    pub pd: f64,
    /// Factor loading, `0 ≤ rho < 1`.
    pub rho: f64,
    /// Weight of the half-normal factor, `|delta| < 1`.
    #[serde(default)]
    pub delta: f64,
    /// Share of total portfolio exposure held in this class.
    #[serde(default = "one")]
    pub omega: f64,
    /// Number of obligors.
    #[serde(default = "one_count")]
    pub count: usize,
}

fn one() -> f64 {
    1.0
}

fn one_count() -> usize {
    1
}

impl LoanClassParams {
    pub fn new(pd: f64, rho: f64, delta: f64, omega: f64, count: usize) -> Result<Self> {
        let c = Self {
            pd,
            rho,
            delta,
            omega,
            count,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pd > 0.0 && self.pd < 1.0) {
            return Err(Error::domain("pd", self.pd, "(0, 1)"));
        }
        if !(self.rho >= 0.0 && self.rho < 1.0) {
            return Err(Error::domain("rho", self.rho, "[0, 1)"));
        }
        if !(self.delta.abs() < 1.0) {
            return Err(Error::domain("delta", self.delta, "(-1, 1)"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::domain("omega", self.omega, "[0, 1]"));
        }
        Ok(())
    }

    /// `β = ρ δ`, the loading on the half-normal factor.
    pub fn beta(&self) -> f64 {
        self.rho * self.delta
    }

    /// Shape of the marginal skew-normal law of a single return.
    pub fn marginal_shape(&self) -> f64 {
        shape_from_loading(self.rho, self.delta)
    }

    pub fn with_count(self, count: usize) -> Self {
        Self { count, ..self }
    }

    pub fn with_omega(self, omega: f64) -> Self {
        Self { omega, ..self }
    }
}

/// Default threshold `K` such that `P(Y ≤ K) = pd` under the marginal law.
pub fn default_threshold(class: &LoanClassParams) -> Result<f64> {
    class.validate()?;
    sn_quantile(class.pd, class.marginal_shape())
}

/// Green and brown classes plus the within-class exposure law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub green: LoanClassParams,
    pub brown: LoanClassParams,
    #[serde(default)]
    pub exposure_law: ExposureLaw,
}

impl PortfolioSpec {
    pub fn new(green: LoanClassParams, brown: LoanClassParams, exposure_law: ExposureLaw) -> Result<Self> {
        let spec = Self {
            green,
            brown,
            exposure_law,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.green.validate()?;
        self.brown.validate()?;
        self.exposure_law.validate()?;
        let total = self.green.omega + self.brown.omega;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "class exposure budgets must sum to 1, got {total}"
            )));
        }
        Ok(())
    }

    pub fn total_count(&self) -> usize {
        self.green.count + self.brown.count
    }

    /// Resize to `n` obligors split in proportion to the exposure budgets,
    /// so uniform weights `1/n` reproduce the class budgets.
    pub fn with_total_count(&self, n: usize) -> Self {
        let n_green = (self.green.omega * n as f64).round() as usize;
        Self {
            green: self.green.with_count(n_green),
            brown: self.brown.with_count(n - n_green),
            exposure_law: self.exposure_law,
        }
    }

    pub fn with_exposure_law(&self, exposure_law: ExposureLaw) -> Self {
        Self {
            exposure_law,
            ..self.clone()
        }
    }

    /// Classes in obligor order: brown, then green.
    pub fn classes(&self) -> [&LoanClassParams; 2] {
        [&self.brown, &self.green]
    }
}

fn within_class_corr(class: &LoanClassParams) -> f64 {
    let b2 = class.beta().powi(2);
    (class.rho * class.rho - b2) / (1.0 - b2)
}

fn check_counts(spec: &PortfolioSpec) -> Result<()> {
    if spec.brown.count == 0 || spec.green.count == 0 {
        return Err(Error::Degenerate(format!(
            "class counts must be positive (brown {}, green {})",
            spec.brown.count, spec.green.count
        )));
    }
    Ok(())
}

/// The partitioned correlation matrix `Σ` of the Gaussian part `V` in
/// `Y = b X₂ + D V`.
///
/// Materializes an `N × N` matrix; intended for validation on small books.
pub fn build_sigma(spec: &PortfolioSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_counts(spec)?;
    let (nb, ng) = (spec.brown.count, spec.green.count);
    let cb = within_class_corr(&spec.brown);
    let cg = within_class_corr(&spec.green);
    let cross = cb.sqrt() * cg.sqrt();
    let n = nb + ng;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            match (i < nb, j < nb) {
                (true, true) => cb,
                (false, false) => cg,
                _ => cross,
            }
        }
    }))
}

/// Loading vector `b = (β_b 1_b, β_g 1_g)`.
pub fn skew_loadings(spec: &PortfolioSpec) -> DVector<f64> {
    let (nb, ng) = (spec.brown.count, spec.green.count);
    DVector::from_fn(nb + ng, |i, _| if i < nb { spec.brown.beta() } else { spec.green.beta() })
}

/// Diagonal of `D = diag(√(1−β_b²) 1_b, √(1−β_g²) 1_g)`.
pub fn gaussian_scales(spec: &PortfolioSpec) -> DVector<f64> {
    let (nb, ng) = (spec.brown.count, spec.green.count);
    let s = |c: &LoanClassParams| (1.0 - c.beta().powi(2)).sqrt();
    DVector::from_fn(nb + ng, |i, _| if i < nb { s(&spec.brown) } else { s(&spec.green) })
}

/// `E[Y Yᵀ] = b bᵀ + D Σ D`; unit diagonal since `E[X₂²] = 1`.
pub fn second_moment_matrix(spec: &PortfolioSpec) -> Result<DMatrix<f64>> {
    let sigma = build_sigma(spec)?;
    let b = skew_loadings(spec);
    let d = DMatrix::from_diagonal(&gaussian_scales(spec));
    Ok(&b * b.transpose() + &d * sigma * &d)
}

/// `Cov(Y) = (1 − 2/π) b bᵀ + D Σ D`, using `Var(|W|) = 1 − 2/π`.
pub fn covariance_matrix(spec: &PortfolioSpec) -> Result<DMatrix<f64>> {
    let sigma = build_sigma(spec)?;
    let b = skew_loadings(spec);
    let d = DMatrix::from_diagonal(&gaussian_scales(spec));
    Ok((1.0 - 2.0 / PI) * (&b * b.transpose()) + &d * sigma * &d)
}

/// One joint draw of the common factors and the return vector.
#[derive(Debug, Clone)]
pub struct ReturnDraw {
    pub x1: f64,
    pub x2: f64,
    /// Brown returns first, then green.
    pub returns: Vec<f64>,
}

pub fn sample_returns_with_factors<R: Rng + ?Sized>(spec: &PortfolioSpec, stream: &mut R) -> ReturnDraw {
    let x1: f64 = stream.sample(StandardNormal);
    let w: f64 = stream.sample(StandardNormal);
    let x2 = w.abs();
    let mut returns = Vec::with_capacity(spec.total_count());
    for class in spec.classes() {
        let systematic =
            class.rho * (1.0 - class.delta * class.delta).sqrt() * x1 + class.rho * class.delta * x2;
        let idio = (1.0 - class.rho * class.rho).sqrt();
        for _ in 0..class.count {
            let z: f64 = stream.sample(StandardNormal);
            returns.push(systematic + idio * z);
        }
    }
    ReturnDraw { x1, x2, returns }
}

/// One joint draw of `Y`, O(N) without materializing `Σ`.
pub fn sample_returns<R: Rng + ?Sized>(spec: &PortfolioSpec, stream: &mut R) -> Vec<f64> {
    sample_returns_with_factors(spec, stream).returns
}

/// Per-class quantities needed to evaluate conditional default probabilities.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ClassKernel {
    pub rho: f64,
    pub threshold: f64,
    pub idio_scale: f64,
    pub x1_coef: f64,
    pub delta: f64,
}

impl ClassKernel {
    pub fn new(class: &LoanClassParams) -> Result<Self> {
        Ok(Self {
            rho: class.rho,
            threshold: default_threshold(class)?,
            idio_scale: (1.0 - class.rho * class.rho).sqrt(),
            x1_coef: (1.0 - class.delta * class.delta).sqrt(),
            delta: class.delta,
        })
    }

    /// Combined systematic factor `X^a = √(1−δ²) X₁ + δ X₂`.
    #[inline]
    pub fn factor(&self, x1: f64, x2: f64) -> f64 {
        self.x1_coef * x1 + self.delta * x2
    }

    /// `h(x) = (K − ρx)/√(1−ρ²)`.
    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        (self.threshold - self.rho * x) / self.idio_scale
    }

    /// `P(default | X^a = x) = Φ(h(x))`.
    #[inline]
    pub fn pd_given(&self, x: f64) -> f64 {
        norm_cdf(self.h(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{norm_quantile, sn_cdf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn class(pd: f64, rho: f64, delta: f64, omega: f64, count: usize) -> LoanClassParams {
        LoanClassParams::new(pd, rho, delta, omega, count).unwrap()
    }

    fn spec(green: LoanClassParams, brown: LoanClassParams) -> PortfolioSpec {
        PortfolioSpec::new(green, brown, ExposureLaw::uniform()).unwrap()
    }

    #[test]
    fn class_validation() {
        assert!(LoanClassParams::new(0.0, 0.1, 0.0, 1.0, 1).is_err());
        assert!(LoanClassParams::new(0.1, 1.0, 0.0, 1.0, 1).is_err());
        assert!(LoanClassParams::new(0.1, 0.1, -1.0, 1.0, 1).is_err());
        assert!(LoanClassParams::new(0.1, 0.1, 0.0, 1.2, 1).is_err());
        let g = class(0.01, 0.1, 0.0, 0.3, 3);
        let b = class(0.01, 0.1, 0.0, 0.6, 7);
        assert!(PortfolioSpec::new(g, b, ExposureLaw::uniform()).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert!(default_threshold(&class(0.5, 0.3, 0.0, 1.0, 1)).unwrap().abs() < 1e-15);
        let k = default_threshold(&class(0.01, 0.4, 0.0, 1.0, 1)).unwrap();
        assert!((k - norm_quantile(0.01).unwrap()).abs() < 1e-14);
        assert!((k + 2.326_347_874_040_841).abs() < 1e-12);

        let c = class(0.028, 0.1, 0.4472, 1.0, 1);
        let k = default_threshold(&c).unwrap();
        assert!((sn_cdf(k, c.marginal_shape()) - 0.028).abs() < 1e-10);
        // reference from an independent skew-normal implementation
        assert!((k + 1.874_128_727_977_461).abs() < 1e-9);
    }

    #[test]
    fn sigma_reduces_to_vasicek() {
        let s = spec(class(0.02, 0.5, 0.0, 0.5, 3), class(0.02, 0.5, 0.0, 0.5, 4));
        let sigma = build_sigma(&s).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let want = if i == j { 1.0 } else { 0.25 };
                assert!((sigma[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert_eq!(second_moment_matrix(&s).unwrap(), sigma);
    }

    #[test]
    fn sigma_within_brown_block() {
        let s = spec(class(0.02, 0.2, 0.1, 0.25, 2), class(0.02, 0.5, 0.6, 0.75, 3));
        let sigma = build_sigma(&s).unwrap();
        let want = (0.25 - 0.09) / 0.91;
        assert!((sigma[(0, 1)] - want).abs() < 1e-15);
        assert!((want - 0.175_824_175_824_175_8).abs() < 1e-15);
        let cg = (0.04 - 0.0004) / (1.0 - 0.0004);
        assert!((sigma[(3, 4)] - cg).abs() < 1e-15);
        assert!((sigma[(0, 4)] - (want * cg).sqrt()).abs() < 1e-15);
        assert_eq!(sigma[(0, 4)], sigma[(4, 0)]);
    }

    #[test]
    fn sigma_needs_both_classes() {
        let g = class(0.02, 0.2, 0.1, 0.0, 0);
        let b = class(0.02, 0.5, 0.6, 1.0, 3);
        assert!(matches!(build_sigma(&spec(g, b)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sigma_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..12 {
            let og: f64 = rng.random_range(0.0..1.0);
            let g = class(0.02, rng.random_range(0.0..0.99), rng.random_range(-0.99..0.99), og, rng.random_range(1..100));
            let b = class(0.03, rng.random_range(0.0..0.99), rng.random_range(-0.99..0.99), 1.0 - og, rng.random_range(1..100));
            let s = spec(g, b);
            let eig = build_sigma(&s).unwrap().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10);
            let eig = second_moment_matrix(&s).unwrap().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }

    /// Sample mean of products `Y_i Y_j` (or centered products) with standard errors.
    fn moment_check(s: &PortfolioSpec, n: usize, seed: u64, centered: bool, target: &DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = s.total_count();
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_returns(s, &mut rng)).collect();
        let mean: Vec<f64> = (0..dim)
            .map(|i| if centered { draws.iter().map(|y| y[i]).sum::<f64>() / n as f64 } else { 0.0 })
            .collect();
        for i in 0..dim {
            for j in 0..dim {
                let prods: Vec<f64> = draws.iter().map(|y| (y[i] - mean[i]) * (y[j] - mean[j])).collect();
                let m = prods.iter().sum::<f64>() / n as f64;
                let sd = (prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
                let se = sd / (n as f64).sqrt();
                assert!((m - target[(i, j)]).abs() < 3.0 * se, "({i},{j}): {m} vs {} (se {se})", target[(i, j)]);
            }
        }
    }

    #[test]
    fn sampler_without_loadings_is_uncorrelated() {
        let s = spec(class(0.02, 0.0, 0.5, 0.5, 2), class(0.02, 0.0, -0.3, 0.5, 2));
        moment_check(&s, 100_000, 1, true, &DMatrix::identity(4, 4));
    }

    #[test]
    fn sampler_gaussian_single_class_correlation() {
        let s = spec(class(0.02, 0.6, 0.0, 0.5, 2), class(0.02, 0.6, 0.0, 0.5, 2));
        let want = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.36 });
        moment_check(&s, 200_000, 2, true, &want);
    }

    #[test]
    fn sampler_matches_factor_moments() {
        let s = spec(class(0.02, 0.7, 0.8, 0.4, 2), class(0.05, 0.5, -0.6, 0.6, 2));
        moment_check(&s, 1_000_000, 3, false, &second_moment_matrix(&s).unwrap());
        moment_check(&s, 1_000_000, 4, true, &covariance_matrix(&s).unwrap());
    }

    #[test]
    fn sampler_marginals_are_skew_normal() {
        let s = spec(class(0.02, 0.7, 0.8, 0.4, 1), class(0.05, 0.5, -0.6, 0.6, 1));
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut brown = Vec::with_capacity(n);
        let mut green = Vec::with_capacity(n);
        for _ in 0..n {
            let y = sample_returns(&s, &mut rng);
            brown.push(y[0]);
            green.push(y[1]);
        }
        for (mut xs, c) in [(brown, s.brown), (green, s.green)] {
            xs.sort_by(f64::total_cmp);
            let shape = c.marginal_shape();
            let ks = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = sn_cdf(x, shape);
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 1.628 / (n as f64).sqrt(), "ks={ks}");
            let mean = xs.iter().sum::<f64>() / n as f64;
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let var = m2 - mean * mean;
            let expected = 1.0 - 2.0 / PI * c.beta().powi(2);
            assert!((var - expected).abs() < 3.0 * (2.0 / n as f64).sqrt());
            assert!((m2 - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn defaults_conditionally_uncorrelated() {
        // E[(I_i − p_i(X))(I_j − p_j(X))] = 0 for i ≠ j, using exact conditioning on (X₁, X₂).
        let s = spec(class(0.05, 0.6, 0.7, 0.5, 2), class(0.1, 0.5, -0.4, 0.5, 2));
        let kb = ClassKernel::new(&s.brown).unwrap();
        let kg = ClassKernel::new(&s.green).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 400_000;
        let pairs = [(0usize, 1usize), (0, 2), (1, 3), (2, 3)];
        let mut acc = vec![Vec::with_capacity(n); pairs.len()];
        let mut uncond = Vec::with_capacity(n);
        for _ in 0..n {
            let d = sample_returns_with_factors(&s, &mut rng);
            let pb = kb.pd_given(kb.factor(d.x1, d.x2));
            let pg = kg.pd_given(kg.factor(d.x1, d.x2));
            let resid: Vec<f64> = d
                .returns
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let (k, p) = if i < 2 { (kb.threshold, pb) } else { (kg.threshold, pg) };
                    f64::from(u8::from(y <= k)) - p
                })
                .collect();
            for (slot, &(i, j)) in acc.iter_mut().zip(&pairs) {
                slot.push(resid[i] * resid[j]);
            }
            let ib = f64::from(u8::from(d.returns[0] <= kb.threshold));
            let ig = f64::from(u8::from(d.returns[2] <= kg.threshold));
            uncond.push((ib - 0.1) * (ig - 0.05));
        }
        for v in &acc {
            let m = v.iter().sum::<f64>() / n as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
            assert!(m.abs() < 3.0 * sd / (n as f64).sqrt(), "m={m}");
        }
        // unconditionally the defaults are clearly correlated
        let m = uncond.iter().sum::<f64>() / n as f64;
        let sd = (uncond.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(m > 6.0 * sd / (n as f64).sqrt(), "m={m}");
    }
}
