//! Monte Carlo simulation of finite-portfolio losses.
//!
//! Replications are grouped into fixed-size chunks. Chunk `c` draws its
//! factors from ChaCha stream `2c` and its idiosyncratic shocks from stream
//! `2c + 1` of the same seed, so results do not depend on how chunks are
//! scheduled, and portfolios of different sizes share factor paths.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_open_unit, Error, Result};
use crate::exposure::{compensated_sum, hhi, make_weights, ExposureLaw};
use crate::limit::LimitModel;
use crate::model::{ClassKernel, LoanClassParams, PortfolioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default = "default_levels")]
    pub quantile_levels: Vec<f64>,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

fn default_levels() -> Vec<f64> {
    vec![0.99, 0.995, 0.999]
}

fn default_chunk() -> usize {
    4096
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 1_000_000,
            seed: 0,
            quantile_levels: default_levels(),
            chunk_size: default_chunk(),
        }
    }
}

impl McConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            ..Self::default()
        }
    }

    pub fn with_levels(self, quantile_levels: Vec<f64>) -> Self {
        Self {
            quantile_levels,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParams("n_samples must be positive".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidParams("chunk_size must be positive".into()));
        }
        for &level in &self.quantile_levels {
            check_open_unit("quantile level", level)?;
        }
        if self.quantile_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams("quantile levels must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantileEstimate {
    pub level: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSampleSummary {
    pub empirical_quantiles: Vec<QuantileEstimate>,
    pub mean: f64,
    pub variance: f64,
    pub n_samples: usize,
    /// HHI of the green weights renormalized to sum to one.
    pub hhi_green: f64,
    pub hhi_brown: f64,
}

impl LossSampleSummary {
    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.empirical_quantiles.iter().find(|q| q.level == level).map(|q| q.loss)
    }

    /// Standard error of the sample mean.
    pub fn mean_stderr(&self) -> f64 {
        (self.variance / self.n_samples as f64).sqrt()
    }
}

/// Exposure weights of one class, scaled to its budget.
fn class_weights(class: &LoanClassParams, law: ExposureLaw, label: &str) -> Result<Vec<f64>> {
    if class.count == 0 {
        if class.omega > 0.0 {
            return Err(Error::InvalidParams(format!(
                "{label} class has budget {} but no obligors",
                class.omega
            )));
        }
        return Ok(Vec::new());
    }
    if class.omega == 0.0 {
        return Ok(vec![0.0; class.count]);
    }
    Ok(make_weights(class.count, law, class.omega)?.into_inner())
}

fn class_hhi(class: &LoanClassParams, law: ExposureLaw) -> Result<f64> {
    if class.count == 0 {
        return Ok(0.0);
    }
    Ok(hhi(&make_weights(class.count, law, 1.0)?))
}

/// Per-class HHI `(green, brown)` on weights renormalized within each class.
pub fn class_hhis(spec: &PortfolioSpec) -> Result<(f64, f64)> {
    Ok((
        class_hhi(&spec.green, spec.exposure_law)?,
        class_hhi(&spec.brown, spec.exposure_law)?,
    ))
}

/// `Σ u_i²` over the whole portfolio with budget-scaled weights.
pub fn portfolio_hhi(spec: &PortfolioSpec) -> Result<f64> {
    let (g, b) = class_hhis(spec)?;
    Ok(spec.green.omega.powi(2) * g + spec.brown.omega.powi(2) * b)
}

/// Exact `E[L | X₁ = x1, X₂ = x2] = ω_b Φ(h_b(X^b)) + ω_g Φ(h_g(X^g))`.
pub fn conditional_loss_given_factors(spec: &PortfolioSpec, x1: f64, x2: f64) -> Result<f64> {
    if !(x2 >= 0.0) {
        return Err(Error::domain("x2", x2, "[0, inf)"));
    }
    spec.validate()?;
    let kb = ClassKernel::new(&spec.brown)?;
    let kg = ClassKernel::new(&spec.green)?;
    Ok(spec.brown.omega * kb.pd_given(kb.factor(x1, x2)) + spec.green.omega * kg.pd_given(kg.factor(x1, x2)))
}

/// Compiled portfolio: kernels and weights in obligor order.
struct Simulator {
    kernels: [ClassKernel; 2],
    omegas: [f64; 2],
    weights: [Vec<f64>; 2],
    uniform: [bool; 2],
}

/// One replication: realized loss and its conditional mean given the factors.
#[derive(Debug, Clone, Copy)]
struct Draw {
    loss: f64,
    conditional: f64,
}

impl Simulator {
    fn new(spec: &PortfolioSpec) -> Result<Self> {
        spec.validate()?;
        let uniform = matches!(spec.exposure_law, ExposureLaw::Uniform);
        Ok(Self {
            kernels: [ClassKernel::new(&spec.brown)?, ClassKernel::new(&spec.green)?],
            omegas: [spec.brown.omega, spec.green.omega],
            weights: [
                class_weights(&spec.brown, spec.exposure_law, "brown")?,
                class_weights(&spec.green, spec.exposure_law, "green")?,
            ],
            uniform: [uniform, uniform],
        })
    }

    fn chunk(&self, seed: u64, chunk: u64, len: usize) -> Vec<Draw> {
        let mut factors = ChaCha8Rng::seed_from_u64(seed);
        factors.set_stream(2 * chunk);
        let mut idio = ChaCha8Rng::seed_from_u64(seed);
        idio.set_stream(2 * chunk + 1);
        (0..len).map(|_| self.replicate(&mut factors, &mut idio)).collect()
    }

    fn replicate(&self, factors: &mut ChaCha8Rng, idio: &mut ChaCha8Rng) -> Draw {
        let x1: f64 = factors.sample(StandardNormal);
        let w: f64 = factors.sample(StandardNormal);
        let x2 = w.abs();
        let mut loss = 0.0;
        let mut conditional = 0.0;
        for a in 0..2 {
            let k = &self.kernels[a];
            let p = k.pd_given(k.factor(x1, x2));
            conditional += self.omegas[a] * p;
            let weights = &self.weights[a];
            if weights.is_empty() {
                continue;
            }
            // Y ≤ K given the factor happens with probability p; compare a
            // uniform 64-bit draw against p·2⁶⁴.
            let cutoff = p * 18_446_744_073_709_551_616.0;
            let cutoff = if cutoff >= 18_446_744_073_709_551_615.0 {
                u64::MAX
            } else {
                cutoff as u64
            };
            if self.uniform[a] {
                let defaults = (0..weights.len()).filter(|_| idio.next_u64() < cutoff).count();
                loss += weights[0] * defaults as f64;
            } else {
                let mut s = 0.0;
                for &u in weights {
                    if idio.next_u64() < cutoff {
                        s += u;
                    }
                }
                loss += s;
            }
        }
        Draw { loss, conditional }
    }

    fn run(&self, mc: &McConfig) -> Result<Vec<Draw>> {
        mc.validate()?;
        let n_chunks = mc.n_samples.div_ceil(mc.chunk_size);
        let chunks: Vec<Vec<Draw>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let len = mc.chunk_size.min(mc.n_samples - c * mc.chunk_size);
                self.chunk(mc.seed, c as u64, len)
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Raw simulated losses in replication order.
pub fn simulate_loss_samples(spec: &PortfolioSpec, mc: &McConfig) -> Result<Vec<f64>> {
    Ok(Simulator::new(spec)?.run(mc)?.into_iter().map(|d| d.loss).collect())
}

/// Simulates `mc.n_samples` portfolio losses and summarizes them.
pub fn simulate_losses(spec: &PortfolioSpec, mc: &McConfig) -> Result<LossSampleSummary> {
    let mut samples = simulate_loss_samples(spec, mc)?;
    summarize(spec, mc, &mut samples)
}

/// Summary of raw losses; sorts `samples` in place.
pub fn summarize(spec: &PortfolioSpec, mc: &McConfig, samples: &mut [f64]) -> Result<LossSampleSummary> {
    mc.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = samples.len() as f64;
    let mean = compensated_sum(samples.iter().copied()) / n;
    let variance = if samples.len() > 1 {
        compensated_sum(samples.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0)
    } else {
        0.0
    };
    samples.sort_unstable_by(f64::total_cmp);
    let empirical_quantiles = mc
        .quantile_levels
        .iter()
        .map(|&level| {
            Ok(QuantileEstimate {
                level,
                loss: empirical_quantile(samples, level)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (hhi_green, hhi_brown) = class_hhis(spec)?;
    Ok(LossSampleSummary {
        empirical_quantiles,
        mean,
        variance,
        n_samples: samples.len(),
        hhi_green,
        hhi_brown,
    })
}

/// Upper order statistic: the `⌈level·n⌉`-th smallest value (1-based).
pub fn empirical_quantile(sorted: &[f64], level: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    check_open_unit("level", level)?;
    let n = sorted.len();
    let t = level * n as f64;
    // 0.99·500 evaluates to 495.00000000000006
    let k = if (t - t.round()).abs() <= 1e-9 * t.max(1.0) {
        t.round()
    } else {
        t.ceil()
    };
    let k = (k as usize).clamp(1, n);
    Ok(sorted[k - 1])
}

/// Kolmogorov–Smirnov distance between a sorted sample and a continuous cdf.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        let f = cdf(v);
        d = d.max((f - i as f64 / n).abs()).max((f - j as f64 / n).abs());
        i = j;
    }
    Ok(d)
}

/// Monte Carlo estimate of `E[(L − E[L | X₁, X₂])²]` against its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceCheck {
    pub lhs: f64,
    pub stderr: f64,
    /// `¼ Σ u_i²` with budget-scaled weights.
    pub bound: f64,
    /// `¼ (HHI_b + HHI_g)` with per-class renormalized weights.
    pub class_bound: f64,
}

impl VarianceCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.bound + 3.0 * self.stderr
    }
}

pub fn variance_decomposition_check(spec: &PortfolioSpec, mc: &McConfig) -> Result<VarianceCheck> {
    let draws = Simulator::new(spec)?.run(mc)?;
    let n = draws.len() as f64;
    let sq: Vec<f64> = draws.iter().map(|d| (d.loss - d.conditional).powi(2)).collect();
    let lhs = compensated_sum(sq.iter().copied()) / n;
    let var = compensated_sum(sq.iter().map(|s| (s - lhs).powi(2))) / (n - 1.0).max(1.0);
    let (g, b) = class_hhis(spec)?;
    Ok(VarianceCheck {
        lhs,
        stderr: (var / n).sqrt(),
        bound: 0.25 * portfolio_hhi(spec)?,
        class_bound: 0.25 * (g + b),
    })
}

/// One line of a convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub a: f64,
    pub level: f64,
    pub var_empirical: f64,
    pub var_analytic: f64,
    pub error: f64,
    pub hhi_g: f64,
    pub hhi_b: f64,
}

/// Empirical against analytic VaR along a grid of portfolio sizes.
///
/// Every size reuses the same seed, so rows share factor paths.
pub fn convergence_experiment(
    template: &PortfolioSpec,
    sizes: &[usize],
    mc: &McConfig,
    analytic: &LimitModel,
) -> Result<Vec<ConvergenceRow>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParams("portfolio sizes must be strictly increasing".into()));
    }
    let analytic_vars = mc
        .quantile_levels
        .iter()
        .map(|&level| analytic.mix_var(level))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(sizes.len() * mc.quantile_levels.len());
    for &n in sizes {
        let spec = template.with_total_count(n);
        let summary = simulate_losses(&spec, mc)?;
        log::info!("simulated n={n}: mean loss {:.6}", summary.mean);
        for (q, &var_analytic) in summary.empirical_quantiles.iter().zip(&analytic_vars) {
            rows.push(ConvergenceRow {
                n,
                a: template.exposure_law.decay(),
                level: q.level,
                var_empirical: q.loss,
                var_analytic,
                error: q.loss - var_analytic,
                hhi_g: summary.hhi_green,
                hhi_b: summary.hhi_brown,
            });
        }
    }
    Ok(rows)
}
