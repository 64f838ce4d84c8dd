//! Stein's equation `f'(w) - w f(w) = 1(w <= x) - Φ(x)` for the standard
//! normal law, Kolmogorov distances, and the Berry-Esseen rate experiment.

use rand::Rng;

use crate::environment::{EnvironmentModel, IncrementLaw};
use crate::error::{BpreError, Result};
use crate::quad::composite_gauss_legendre;
use crate::rng::{stream_rng, StreamDomain};
use crate::simulator::{run_monte_carlo, SimConfig};
use crate::special::{lower_mills, normal_cdf, normal_sf, upper_mills, SQRT_2PI};
use crate::stats::{fit_line, percentile_interval};

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteinEval {
    pub x: f64,
    pub w: f64,
    pub f: f64,
    pub f_prime: f64,
    /// Finite-difference residual of the closed form on the active branch.
    pub residual: f64,
}

/// Branch `w <= x`: `√(2π) e^{w²/2} Φ(w) (1 - Φ(x))`, continued analytically.
fn f_left(x: f64, w: f64) -> f64 {
    if w <= 0.0 || w > x {
        SQRT_2PI * lower_mills(w) * normal_sf(x)
    } else {
        // 0 < w <= x: fold e^{w²/2} into the tail of x
        SQRT_2PI * normal_cdf(w) * (0.5 * (w - x) * (w + x)).exp() * upper_mills(x)
    }
}

/// Branch `w > x`: `√(2π) e^{w²/2} Φ(x) (1 - Φ(w))`.
fn f_right(x: f64, w: f64) -> f64 {
    if w >= 0.0 || w < x {
        SQRT_2PI * normal_cdf(x) * upper_mills(w)
    } else {
        // x < w < 0
        SQRT_2PI * (0.5 * (w - x) * (w + x)).exp() * lower_mills(x) * normal_sf(w)
    }
}

fn indicator(w: f64, x: f64) -> f64 {
    if w <= x {
        1.0
    } else {
        0.0
    }
}

/// The bounded solution `f_x` at `w`, with `f'` taken from the equation.
pub fn stein_solution(x: f64, w: f64) -> SteinEval {
    let branch: fn(f64, f64) -> f64 = if w <= x { f_left } else { f_right };
    let f = branch(x, w);
    let rhs = indicator(w, x) - normal_cdf(x);
    let f_prime = w * f + rhs;
    // f is bounded by 1, so an absolute step keeps rounding and truncation balanced
    let h = FD_STEP;
    let derivative = (branch(x, w + h) - branch(x, w - h)) / (2.0 * h);
    SteinEval {
        x,
        w,
        f,
        f_prime,
        residual: (derivative - w * f - rhs).abs(),
    }
}

/// `|f_x(x-) - f_x(x+)|`: both closed-form branches evaluated at `w = x`.
pub fn branch_gap(x: f64) -> f64 {
    (f_left(x, x) - f_right(x, x)).abs()
}

/// `Q(a) = ∫_0^∞ e^{-a s - s²/2} ds` by a fixed composite Gauss-Legendre rule.
fn gaussian_laplace(a: f64) -> f64 {
    let peak = (-a).max(0.0);
    let upper = peak + 12.0;
    let width = 1.0 / (a / 4.0).max(1.0);
    let panels = (upper / width).ceil() as usize;
    composite_gauss_legendre(|s| (-a * s - 0.5 * s * s).exp(), 0.0, upper, panels)
}

/// `f_x(w)` from its integral form `e^{w²/2} ∫_{-∞}^w (1(t <= x) - Φ(x)) e^{-t²/2} dt`.
pub fn stein_solution_quadrature(x: f64, w: f64) -> f64 {
    if w <= x {
        normal_sf(x) * gaussian_laplace(-w)
    } else {
        normal_cdf(x) * gaussian_laplace(w)
    }
}

/// `|(f(w+h) - f(w-h))/(2h) - w f(w) - (1(w <= x) - Φ(x))|` with the
/// quadrature-based `f`.
pub fn stein_residual_fd(x: f64, w: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(BpreError::Domain(format!("step must be positive, got {h}")));
    }
    if (w - x).abs() <= 2.0 * h {
        return Err(BpreError::Domain(format!(
            "w = {w} is within 2h of the discontinuity at x = {x}"
        )));
    }
    let f = |v: f64| stein_solution_quadrature(x, v);
    let derivative = (f(w + h) - f(w - h)) / (2.0 * h);
    Ok((derivative - w * f(w) - (indicator(w, x) - normal_cdf(x))).abs())
}

/// `sup_t |F̂(t) - Φ(t)|`, evaluated on both sides of every jump of `F̂`.
pub fn kolmogorov_distance(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(BpreError::EmptyInput("Kolmogorov distance of no samples"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(weighted_kolmogorov(&sorted, None))
}

/// Same as [`kolmogorov_distance`] on sorted data, with optional multiplicities
/// (used by the bootstrap to avoid re-sorting).
fn weighted_kolmogorov(sorted: &[f64], counts: Option<&[u32]>) -> f64 {
    let total: f64 = match counts {
        Some(c) => c.iter().map(|&k| k as f64).sum(),
        None => sorted.len() as f64,
    };
    let mut below = 0.0;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        let mut mass = 0.0;
        while i < sorted.len() && sorted[i] == v {
            mass += counts.map_or(1.0, |c| c[i] as f64);
            i += 1;
        }
        if mass == 0.0 {
            continue;
        }
        let phi = normal_cdf(v);
        let before = below / total;
        below += mass;
        let after = below / total;
        d = d.max((phi - before).abs()).max((after - phi).abs());
    }
    d
}

/// `(1/m) Σ [f_x'(s_i) - s_i f_x(s_i)]`.
pub fn empirical_stein_expectation(samples: &[f64], x: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(BpreError::EmptyInput("Stein expectation of no samples"));
    }
    let total: f64 = samples
        .iter()
        .map(|&s| {
            let e = stein_solution(x, s);
            e.f_prime - s * e.f
        })
        .sum();
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerryEsseenPoint {
    pub n: usize,
    pub distance: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerryEsseenFit {
    pub points: Vec<BerryEsseenPoint>,
    /// Slope of `log d_n` against `log n`.
    pub slope: f64,
    pub intercept: f64,
    /// Percentile bootstrap interval for the slope.
    pub slope_ci: (f64, f64),
    pub ci_level: f64,
}

impl BerryEsseenFit {
    /// `exp(intercept)`, the fitted constant in `d_n ≈ C n^slope`.
    pub fn amplitude(&self) -> f64 {
        self.intercept.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerryEsseenOptions {
    pub replications: usize,
    pub seed: u64,
    pub workers: usize,
    pub bootstrap: usize,
    pub ci_level: f64,
    pub sim: SimConfig,
}

/// Kolmogorov distance of the standardized `log Z_n` from the normal law for
/// each `n`, and the log-log slope of `d_n` against `n`.
pub fn berry_esseen_fit(
    model: &EnvironmentModel,
    n_grid: &[usize],
    opts: &BerryEsseenOptions,
) -> Result<BerryEsseenFit> {
    let mut distinct = n_grid.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(BpreError::Precondition(format!(
            "Berry-Esseen fit needs at least 3 distinct n, got {}",
            distinct.len()
        )));
    }
    let (mu, sigma) = (model.mean(), model.variance().sqrt());
    let mut sorted_sets = Vec::with_capacity(n_grid.len());
    let mut points = Vec::with_capacity(n_grid.len());
    for (k, &n) in n_grid.iter().enumerate() {
        // each n gets its own seed so grids can be extended without aliasing
        let seed = crate::rng::derive_seed(opts.seed, StreamDomain::Auxiliary(1), k as u64);
        let set = run_monte_carlo(model, n, opts.replications, seed, opts.workers, &opts.sim)?;
        let mut z = set.standardized(mu, sigma);
        z.sort_by(f64::total_cmp);
        points.push(BerryEsseenPoint {
            n,
            distance: weighted_kolmogorov(&z, None),
            replications: opts.replications,
        });
        sorted_sets.push(z);
    }
    let log_n: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let log_d: Vec<f64> = points.iter().map(|p| p.distance.ln()).collect();
    let fit = fit_line(&log_n, &log_d)?;

    let slopes = crate::parallel::try_ordered_map(opts.bootstrap, opts.workers, |b| {
        let mut rng = stream_rng(opts.seed, StreamDomain::Bootstrap, b as u64);
        let mut counts = Vec::new();
        let log_d: Vec<f64> = sorted_sets
            .iter()
            .map(|z| {
                counts.clear();
                counts.resize(z.len(), 0u32);
                for _ in 0..z.len() {
                    counts[rng.random_range(0..z.len())] += 1;
                }
                weighted_kolmogorov(z, Some(&counts)).ln()
            })
            .collect();
        Ok(fit_line(&log_n, &log_d)?.slope)
    })?;
    let slope_ci = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        percentile_interval(slopes, opts.ci_level)
    };
    Ok(BerryEsseenFit {
        points,
        slope: fit.slope,
        intercept: fit.intercept,
        slope_ci,
        ci_level: opts.ci_level,
    })
}
