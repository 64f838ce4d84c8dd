//! Large-deviation machinery: tilted moments, the Cramér series, the
//! saddlepoint `λ(x)`, the integral `I1` and the tail-ratio predictions.

use crate::environment::{CumulantSet, IncrementLaw, DEFAULT_CUMULANT_ORDER};
use crate::error::{BpreError, Result};
use crate::quad::{integrate_to_infinity, Tolerance};
use crate::special::{normal_half_interval, upper_mills};

pub const DEFAULT_SERIES_RADIUS: f64 = 0.25;
pub const DEFAULT_REGIME_GUARD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CramerOptions {
    /// Largest `|t|` at which the truncated series is evaluated.
    pub series_radius: f64,
    /// `x` must not exceed `guard * √n * λ0 * σ`.
    pub regime_guard: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CramerOptions {
    fn default() -> Self {
        CramerOptions {
            series_radius: DEFAULT_SERIES_RADIUS,
            regime_guard: DEFAULT_REGIME_GUARD,
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub lambda: f64,
    pub mu_lambda: f64,
    pub sigma2_lambda: f64,
    pub rho_lambda: f64,
}

pub fn tilted_moments<L: IncrementLaw + ?Sized>(law: &L, lambda: f64) -> TiltedMoments {
    TiltedMoments {
        lambda,
        mu_lambda: law.tilted_mean(lambda),
        sigma2_lambda: law.tilted_variance(lambda),
        rho_lambda: law.tilted_third_abs(lambda),
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `Σ_k γ_k λ^(k-1) / (k-1)!`, the power series of `μ_λ`.
pub fn mu_series(cumulants: &CumulantSet, lambda: f64) -> f64 {
    (1..=cumulants.order())
        .map(|k| cumulants.get(k) * lambda.powi(k as i32 - 1) / factorial(k - 1))
        .sum()
}

/// `Σ_k γ_k λ^(k-2) / (k-2)!`, the power series of `σ_λ²`.
pub fn sigma2_series(cumulants: &CumulantSet, lambda: f64) -> f64 {
    (2..=cumulants.order())
        .map(|k| cumulants.get(k) * lambda.powi(k as i32 - 2) / factorial(k - 2))
        .sum()
}

/// `𝓛(t)` truncated after its `t²` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CramerSeries {
    pub coefficients: [f64; 3],
    pub radius: f64,
}

impl CramerSeries {
    pub fn new(cumulants: &CumulantSet, radius: f64) -> Result<Self> {
        let (g2, g3, g4, g5) = (cumulants.get(2), cumulants.get(3), cumulants.get(4), cumulants.get(5));
        if !(g2 > 0.0) {
            return Err(BpreError::Domain(format!("Cramér series needs γ_2 > 0, got {g2}")));
        }
        let c0 = g3 / (6.0 * g2.powf(1.5));
        let c1 = (g4 * g2 - 3.0 * g3 * g3) / (24.0 * g2.powi(3));
        let c2 = (g5 * g2 * g2 - 10.0 * g4 * g3 * g2 + 15.0 * g3.powi(3)) / (120.0 * g2.powf(4.5));
        Ok(CramerSeries {
            coefficients: [c0, c1, c2],
            radius,
        })
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t.abs() <= self.radius) {
            return Err(BpreError::Domain(format!(
                "Cramér series evaluated at |t| = {} beyond radius {}",
                t.abs(),
                self.radius
            )));
        }
        let [c0, c1, c2] = self.coefficients;
        Ok(c0 + t * (c1 + t * c2))
    }
}

pub fn cramer_series(cumulants: &CumulantSet, t: f64, radius: f64) -> Result<f64> {
    CramerSeries::new(cumulants, radius)?.eval(t)
}

/// Power-series start for `λ(x)` in `t = x/√n`.
pub fn lambda_series(cumulants: &CumulantSet, t: f64) -> f64 {
    let (g2, g3, g4) = (cumulants.get(2), cumulants.get(3), cumulants.get(4));
    t / g2.sqrt() - g3 / (2.0 * g2 * g2) * t * t - (g4 * g2 - 3.0 * g3 * g3) / (6.0 * g2.powf(3.5)) * t.powi(3)
}

fn check_regime<L: IncrementLaw + ?Sized>(law: &L, x: f64, n: usize, opts: &CramerOptions) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(BpreError::Domain(format!("x must be finite and nonnegative, got {x}")));
    }
    if n == 0 {
        return Err(BpreError::Precondition("n must be at least 1".into()));
    }
    let limit = opts.regime_guard * (n as f64).sqrt() * law.lambda0() * law.variance().sqrt();
    if x > limit {
        return Err(BpreError::Precondition(format!(
            "x = {x} is outside the moderate-deviation regime (limit {limit:.6} at n = {n})"
        )));
    }
    Ok(())
}

/// Solves `xσ√n = n(μ_λ - μ)` by Newton steps safeguarded with bisection.
pub fn solve_lambda<L: IncrementLaw + ?Sized>(law: &L, x: f64, n: usize, opts: &CramerOptions) -> Result<f64> {
    check_regime(law, x, n, opts)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let sigma = law.variance().sqrt();
    let target = x * sigma * nf.sqrt();
    let tol = opts.tolerance * target.max(1.0);
    let residual = |lambda: f64| nf * law.tilted_mean_shift(lambda) - target;

    let cumulants = law.cumulants(DEFAULT_CUMULANT_ORDER);
    let start = lambda_series(&cumulants, x / nf.sqrt());
    let mut lo = 0.0;
    let mut hi = if start > 0.0 { start } else { target / (nf * law.variance()) };
    let mut expansions = 0;
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return Err(BpreError::Convergence {
                iterations: expansions,
                context: format!("no bracket for λ(x) at x = {x}, n = {n}"),
            });
        }
    }
    let mut lambda = if start > lo && start <= hi { start } else { 0.5 * (lo + hi) };
    for _ in 0..opts.max_iterations {
        let f = residual(lambda);
        if f.abs() <= tol {
            // One extra Newton step is nearly free and usually lands on the
            // floating-point root.
            let polished = lambda - f / (nf * law.tilted_variance(lambda));
            if residual(polished).abs() < f.abs() {
                return Ok(polished);
            }
            return Ok(lambda);
        }
        if f < 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let newton = lambda - f / (nf * law.tilted_variance(lambda));
        lambda = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(BpreError::Convergence {
        iterations: opts.max_iterations,
        context: format!("λ(x) at x = {x}, n = {n}"),
    })
}

/// Leading-order tail predictions at deviation `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub x: f64,
    pub n: usize,
    pub lambda: f64,
    /// `(x³/√n) 𝓛(x/√n)`.
    pub cramer_term: f64,
    /// `-(x³/√n) 𝓛(-x/√n)`.
    pub cramer_term_lower: f64,
    /// `P(· > x) / (1 - Φ(x))`, stored as `exp(cramer_term)`.
    pub ratio_upper: f64,
    /// `P(· < -x) / Φ(-x)`.
    pub ratio_lower: f64,
    /// `x <= n^(1/6)`, where the normal approximation already applies.
    pub normal_zone: bool,
}

impl Prediction {
    /// Ratio 1 in the normal zone, the Cramér ratio beyond it.
    pub fn zone_ratio_upper(&self) -> f64 {
        if self.normal_zone {
            1.0
        } else {
            self.ratio_upper
        }
    }
}

pub fn tail_ratio_prediction<L: IncrementLaw + ?Sized>(
    law: &L,
    x: f64,
    n: usize,
    opts: &CramerOptions,
) -> Result<Prediction> {
    let lambda = solve_lambda(law, x, n, opts)?;
    let series = CramerSeries::new(&law.cumulants(DEFAULT_CUMULANT_ORDER), opts.series_radius)?;
    let root_n = (n as f64).sqrt();
    let t = x / root_n;
    let scale = x.powi(3) / root_n;
    let cramer_term = scale * series.eval(t)?;
    let cramer_term_lower = -scale * series.eval(-t)?;
    Ok(Prediction {
        x,
        n,
        lambda,
        cramer_term,
        cramer_term_lower,
        ratio_upper: cramer_term.exp(),
        ratio_lower: cramer_term_lower.exp(),
        normal_zone: x <= (n as f64).powf(1.0 / 6.0),
    })
}

/// `I1 = u ∫_0^∞ e^{-uy} (Φ(y) - 1/2) dy` with `u = λ σ_λ √n`, computed by
/// quadrature in `s = u y`.
pub fn integral_i1(lambda: f64, sigma_lambda: f64, n: usize) -> Result<f64> {
    let u = lambda * sigma_lambda * (n as f64).sqrt();
    if !(u > 0.0 && u.is_finite()) {
        return Err(BpreError::Domain(format!("I1 needs λσ_λ√n > 0, got {u}")));
    }
    let est = integrate_to_infinity(
        |s| (-s).exp() * normal_half_interval(s / u),
        0.0,
        Tolerance::relative(1e-10),
    )?;
    Ok(est.value)
}

/// `e^{x²/2} (1 - Φ(x))`, the leading term of the `I1` expansion.
pub fn i1_leading_term(x: f64) -> f64 {
    upper_mills(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyIdentity {
    pub lambda: f64,
    /// `x²/2 + n(ψ(λ) - λ μ_λ)`, exact.
    pub lhs: f64,
    /// `(x³/√n) 𝓛(x/√n)` with the truncated series.
    pub rhs: f64,
    pub residual: f64,
}

pub fn key_identity_check<L: IncrementLaw + ?Sized>(
    law: &L,
    x: f64,
    n: usize,
    opts: &CramerOptions,
) -> Result<KeyIdentity> {
    let lambda = solve_lambda(law, x, n, opts)?;
    let nf = n as f64;
    // ψ(λ) - λμ_λ = (ψ(λ) - λμ) - λ(μ_λ - μ)
    let lhs = 0.5 * x * x + nf * (law.centered_log_mgf(lambda) - lambda * law.tilted_mean_shift(lambda));
    let series = CramerSeries::new(&law.cumulants(DEFAULT_CUMULANT_ORDER), opts.series_radius)?;
    let rhs = x.powi(3) / nf.sqrt() * series.eval(x / nf.sqrt())?;
    Ok(KeyIdentity {
        lambda,
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}
