//! Exposure weights, Herfindahl–Hirschman concentration and power-law fitting.

use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of ranked exposure weights within a class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExposureLaw {
    /// All obligors of a class carry the same weight.
    #[default]
    Uniform,
    /// `u_i ∝ (shift + i)^(-decay)` for ranks `i = 1, 2, …`.
    Power {
        decay: f64,
        #[serde(default)]
        shift: f64,
    },
}

impl ExposureLaw {
    pub fn uniform() -> Self {
        ExposureLaw::Uniform
    }

    /// A power law; zero decay collapses to [`ExposureLaw::Uniform`].
    pub fn power(decay: f64, shift: f64) -> Self {
        if decay == 0.0 {
            ExposureLaw::Uniform
        } else {
            ExposureLaw::Power { decay, shift }
        }
    }

    pub fn decay(&self) -> f64 {
        match *self {
            ExposureLaw::Uniform => 0.0,
            ExposureLaw::Power { decay, .. } => decay,
        }
    }

    pub fn shift(&self) -> f64 {
        match *self {
            ExposureLaw::Uniform => 0.0,
            ExposureLaw::Power { shift, .. } => shift,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ExposureLaw::Power { decay, shift } = *self {
            if !(decay > 0.0 && decay.is_finite()) {
                return Err(Error::domain("decay", decay, "(0, inf); use the uniform law for 0"));
            }
            if !(shift > -1.0 && shift.is_finite()) {
                return Err(Error::domain("shift", shift, "(-1, inf)"));
            }
        }
        Ok(())
    }
}

/// Ordered nonnegative exposure weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureVector {
    weights: Vec<f64>,
}

impl ExposureVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::domain("weight", w, "[0, inf)"));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    pub fn hhi(&self) -> f64 {
        hhi(self)
    }

    /// Rescaled copy summing to `budget`.
    pub fn rescaled(&self, budget: f64) -> Self {
        let total = self.total();
        Self {
            weights: self.weights.iter().map(|w| w * budget / total).collect(),
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] >= w[1])
    }
}

/// Neumaier-compensated summation.
pub(crate) fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `n` weights following `law`, normalized exactly to `budget`.
pub fn make_weights(n: usize, law: ExposureLaw, budget: f64) -> Result<ExposureVector> {
    if n == 0 {
        return Err(Error::InvalidParams("exposure vector needs at least one obligor".into()));
    }
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::domain("budget", budget, "(0, inf)"));
    }
    law.validate()?;
    let raw: Vec<f64> = match law {
        ExposureLaw::Uniform => vec![1.0; n],
        ExposureLaw::Power { decay, shift } => (1..=n).map(|i| (shift + i as f64).powf(-decay)).collect(),
    };
    let total = compensated_sum(raw.iter().rev().copied());
    Ok(ExposureVector {
        weights: raw.into_iter().map(|w| w / total * budget).collect(),
    })
}

/// Sum of squared weights.
pub fn hhi(v: &ExposureVector) -> f64 {
    compensated_sum(v.weights.iter().rev().map(|w| w * w))
}

/// Large-`N` behaviour of the HHI of normalized weights `u_i ∝ i^(-a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhiLimit {
    /// Limit obtained by replacing the power sums with integrals.
    pub limit: f64,
    /// Exponent `r` in `HHI_N = O(N^r)` when the limit is zero.
    pub rate_exponent: Option<f64>,
    /// Exact limit `ζ(2a)/ζ(a)²`, for `a > 1`.
    pub exact_limit: Option<f64>,
}

pub fn hhi_powerlaw_limit(a: f64) -> Result<HhiLimit> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::domain("a", a, "[0, inf)"));
    }
    if a == 1.0 || a == 0.5 {
        return Err(Error::BoundaryCase(a));
    }
    Ok(if a < 0.5 {
        HhiLimit {
            limit: 0.0,
            rate_exponent: Some(-1.0),
            exact_limit: None,
        }
    } else if a < 1.0 {
        HhiLimit {
            limit: 0.0,
            rate_exponent: Some(-2.0 * (1.0 - a)),
            exact_limit: None,
        }
    } else {
        HhiLimit {
            limit: (a - 1.0).powi(2) / (2.0 * a - 1.0),
            rate_exponent: None,
            exact_limit: Some(zeta(2.0 * a) / zeta(a).powi(2)),
        }
    })
}

/// Integral approximation of `HHI_N(a)` at finite `N`.
pub fn hhi_powerlaw_approx(a: f64, n: usize) -> Result<f64> {
    if a == 1.0 || a == 0.5 {
        return Err(Error::BoundaryCase(a));
    }
    let n = n as f64;
    let num = if 2.0 * a < 1.0 {
        (n.powf(1.0 - 2.0 * a) - 1.0) / (1.0 - 2.0 * a)
    } else {
        (1.0 - n.powf(1.0 - 2.0 * a)) / (2.0 * a - 1.0)
    };
    let den = if a < 1.0 {
        (n.powf(1.0 - a) - 1.0) / (1.0 - a)
    } else {
        (1.0 - n.powf(1.0 - a)) / (a - 1.0)
    };
    Ok(num / (den * den))
}

/// Riemann zeta for real `s > 1` by Euler–Maclaurin summation.
pub fn zeta(s: f64) -> f64 {
    assert!(s > 1.0, "zeta is only implemented for s > 1");
    // B_{2j} / (2j)!
    const B: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30_240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
        1.0 / 74_724_249_600.0,
        -3617.0 / 10_670_622_842_880_000.0,
    ];
    let n = 16.0f64;
    let head = compensated_sum((1..16).rev().map(|k| (k as f64).powf(-s)));
    let mut tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // rising product s(s+1)…(s+2j−2) times N^(−s−2j+1)
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (j, b) in B.iter().enumerate() {
        tail += b * rising * power;
        let k = 2.0 * j as f64;
        rising *= (s + k + 1.0) * (s + k + 2.0);
        power /= n * n;
    }
    head + tail
}

/// Least-squares fit of `u_i = c / (b + i)^a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rmse: f64,
    /// Coefficient of determination; NaN for constant data.
    pub r2: f64,
    pub iterations: usize,
}

impl PowerLawFit {
    pub fn predict(&self, rank: usize) -> f64 {
        self.c / (self.b + rank as f64).powf(self.a)
    }

    /// True when the data carry no power-law decay.
    pub fn is_degenerate(&self) -> bool {
        self.a.abs() < 1e-3 || self.r2.is_nan()
    }
}

const FIT_MAX_ITER: usize = 500;

/// Fit `u_i = c/(b+i)^a` by Levenberg–Marquardt on `(a, ln(b+1), ln c)`.
///
/// `observed` must hold at least four strictly positive weights sorted
/// nonincreasing by rank.
pub fn fit_power_law(observed: &ExposureVector) -> Result<PowerLawFit> {
    let u = observed.weights();
    if u.len() < 4 {
        return Err(Error::InvalidParams("power-law fit needs at least 4 observations".into()));
    }
    if u.iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidParams("power-law fit needs strictly positive weights".into()));
    }
    if !observed.is_nonincreasing() {
        return Err(Error::InvalidParams("power-law fit needs weights sorted nonincreasing".into()));
    }

    // slope of ln u against ln i over the top decile
    let top = (u.len() / 10).max(4);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, w) in u.iter().take(top).enumerate() {
        let x = ((i + 1) as f64).ln();
        let y = w.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let m = top as f64;
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let a0 = (-slope).max(0.0);

    let primary = levenberg_marquardt(u, Vector3::new(a0, 0.0, u[0].ln()));
    let converged_well = |r: &std::result::Result<LmState, LmState>| match r {
        Ok(s) => s.sse <= 1e-20 * sum_sq(u) || s.rel_change_small,
        Err(_) => false,
    };
    let best = if converged_well(&primary) {
        primary
    } else {
        // Deterministic restarts over the offset; keep the lowest SSE.
        let mut best = primary;
        for b0 in [-0.5f64, 1.0, 3.0, 10.0, 30.0] {
            let c0 = u[0] * (1.0 + b0).powf(a0);
            let candidate = levenberg_marquardt(u, Vector3::new(a0, (1.0 + b0).ln(), c0.ln()));
            let better = match (&candidate, &best) {
                (Ok(c), Ok(b)) => c.sse < b.sse,
                (Ok(_), Err(_)) => true,
                (Err(c), Err(b)) => c.sse < b.sse,
                (Err(_), Ok(_)) => false,
            };
            if better {
                best = candidate;
            }
        }
        best
    };

    match best {
        Ok(state) => Ok(summarize(u, &state)),
        Err(state) => {
            let (a, b, c) = unpack(&state.theta);
            Err(Error::FitNoConvergence {
                iterations: state.iterations,
                a,
                b,
                c,
                sse: state.sse,
            })
        }
    }
}

fn sum_sq(u: &[f64]) -> f64 {
    u.iter().map(|w| w * w).sum()
}

fn unpack(theta: &Vector3<f64>) -> (f64, f64, f64) {
    (theta[0], theta[1].exp() - 1.0, theta[2].exp())
}

struct LmState {
    theta: Vector3<f64>,
    sse: f64,
    iterations: usize,
    rel_change_small: bool,
}

fn sse_at(u: &[f64], theta: &Vector3<f64>) -> f64 {
    let (a, b, _) = unpack(theta);
    let lnc = theta[2];
    compensated_sum(u.iter().enumerate().map(|(i, &w)| {
        let m = (lnc - a * (b + (i + 1) as f64).ln()).exp();
        (w - m) * (w - m)
    }))
}

fn levenberg_marquardt(u: &[f64], theta0: Vector3<f64>) -> std::result::Result<LmState, LmState> {
    let mut theta = theta0;
    let mut sse = sse_at(u, &theta);
    let mut lambda = 1e-3;
    let scale = sum_sq(u);

    for iter in 1..=FIT_MAX_ITER {
        if sse <= 1e-30 * scale {
            return Ok(LmState {
                theta,
                sse,
                iterations: iter - 1,
                rel_change_small: true,
            });
        }
        let (a, b, _) = unpack(&theta);
        let lnc = theta[2];
        let eb = theta[1].exp();
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (i, &w) in u.iter().enumerate() {
            let x = b + (i + 1) as f64;
            let m = (lnc - a * x.ln()).exp();
            let grad = Vector3::new(-x.ln() * m, -a * m * eb / x, m);
            jtj += grad * grad.transpose();
            jtr += grad * (w - m);
        }
        let diag_floor = 1e-12 * jtj.diagonal().max();

        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(diag_floor);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = theta + step;
            let trial_sse = sse_at(u, &trial);
            if trial_sse.is_finite() && trial_sse < sse {
                let small = step.iter().zip(theta.iter()).all(|(s, t)| s.abs() <= 1e-12 * (1.0 + t.abs()));
                let rel_drop = (sse - trial_sse) / sse;
                theta = trial;
                sse = trial_sse;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if small || rel_drop < 1e-15 {
                    return Ok(LmState {
                        theta,
                        sse,
                        iterations: iter,
                        rel_change_small: true,
                    });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No descent direction left: a stationary point to working precision.
            return Ok(LmState {
                theta,
                sse,
                iterations: iter,
                rel_change_small: lambda > 1e10,
            });
        }
    }
    Err(LmState {
        theta,
        sse,
        iterations: FIT_MAX_ITER,
        rel_change_small: false,
    })
}

fn summarize(u: &[f64], state: &LmState) -> PowerLawFit {
    let (a, b, c) = unpack(&state.theta);
    let n = u.len() as f64;
    let mean = u.iter().sum::<f64>() / n;
    let sst = compensated_sum(u.iter().map(|w| (w - mean) * (w - mean)));
    let r2 = if sst > 0.0 { 1.0 - state.sse / sst } else { f64::NAN };
    PowerLawFit {
        a,
        b,
        c,
        rmse: (state.sse / n).sqrt(),
        r2,
        iterations: state.iterations,
    }
}

/// Ranked exposures read from a `rank,weight` CSV.
#[derive(Debug, Clone)]
pub struct RankedExposures {
    pub weights: ExposureVector,
    /// Set when the input did not sum to 1 within `1e-6` and was rescaled.
    pub renormalized: bool,
}

pub fn read_ranked_exposures(path: impl AsRef<Path>) -> Result<RankedExposures> {
    let file = std::fs::File::open(path)?;
    parse_ranked_exposures(file)
}

/// Parse `rank,weight` rows after a single header row. Rows are ordered by rank.
pub fn parse_ranked_exposures<R: Read>(input: R) -> Result<RankedExposures> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Ingest {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "rank" || &headers[1] != "weight" {
        return Err(Error::Ingest {
            line: 1,
            message: format!("expected header `rank,weight`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut rows: Vec<(u64, f64, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Ingest {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Ingest { line, message };
        if record.len() != 2 {
            return Err(bad(format!("expected 2 fields, found {}", record.len())));
        }
        let rank: u64 = record[0].parse().map_err(|_| bad(format!("invalid rank `{}`", &record[0])))?;
        let weight: f64 = record[1].parse().map_err(|_| bad(format!("invalid weight `{}`", &record[1])))?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(bad(format!("weight must be nonnegative, got {weight}")));
        }
        if rank == 0 {
            return Err(bad("ranks start at 1".into()));
        }
        rows.push((rank, weight, line));
    }
    if rows.is_empty() {
        return Err(Error::Ingest {
            line: 1,
            message: "no data rows".into(),
        });
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Ingest {
            line: w[1].2,
            message: format!("duplicate rank {}", w[1].0),
        });
    }

    let weights = ExposureVector::new(rows.into_iter().map(|r| r.1).collect())?;
    let total = weights.total();
    if (total - 1.0).abs() > 1e-6 {
        log::warn!("exposure weights sum to {total}; renormalizing to 1");
        Ok(RankedExposures {
            weights: weights.rescaled(1.0),
            renormalized: true,
        })
    } else {
        Ok(RankedExposures {
            weights,
            renormalized: false,
        })
    }
}
