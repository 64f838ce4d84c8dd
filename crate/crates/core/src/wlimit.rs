//! The martingale limit `W`: Laplace transforms, the polynomial tail of `φ`,
//! harmonic moments and the `L^p` convergence rate of `W_n`.

use std::fmt;

use rand::Rng;

use crate::environment::{EnvironmentModel, IncrementLaw};
use crate::error::{BpreError, Result};
use crate::interp::Pchip;
use crate::offspring::OffspringLaw;
use crate::parallel::try_ordered_map;
use crate::quad::{integrate, Tolerance};
use crate::rng::{stream_rng, StreamDomain};
use crate::simulator::{run_monte_carlo, simulate_path, SimConfig};
use crate::special::gamma;
use crate::stats::{fit_line, mean_and_se, percentile_interval};

/// Residual RMS (in `log φ`) above which a power law is rejected.
pub const SUPER_POLYNOMIAL_RMS: f64 = 1.0;
pub const DEFAULT_LP_LAG: usize = 20;
const GAMMA_BATCHES: usize = 20;
const EXACT_ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceEstimator {
    MonteCarlo { n: usize, replications: usize },
    QuenchedRecursion { depth: usize, env_paths: usize },
}

impl fmt::Display for LaplaceEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LaplaceEstimator::MonteCarlo { n, replications } => write!(f, "mc(n={n};reps={replications})"),
            LaplaceEstimator::QuenchedRecursion { depth, env_paths } => {
                write!(f, "quenched(depth={depth};paths={env_paths})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceCurve {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    pub se: Vec<f64>,
    pub estimator: LaplaceEstimator,
}

/// Log-spaced grid with `per_decade` points per factor of ten, both ends included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let steps = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=steps)
        .map(|i| lo * 10f64.powf(decades * i as f64 / steps as f64))
        .collect()
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(BpreError::EmptyInput("Laplace transform needs a t grid"));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(BpreError::Domain(format!("t must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// `φ̂(t) = mean of exp(-t W_i)` with `W_i = exp(log_w_i)`.
pub fn laplace_from_log_w(log_w: &[f64], t_grid: &[f64], estimator: LaplaceEstimator) -> Result<LaplaceCurve> {
    check_grid(t_grid)?;
    let w: Vec<f64> = log_w.iter().map(|v| v.exp()).collect();
    let mut phi = Vec::with_capacity(t_grid.len());
    let mut se = Vec::with_capacity(t_grid.len());
    let mut values = vec![0.0; w.len()];
    for &t in t_grid {
        for (v, wi) in values.iter_mut().zip(&w) {
            *v = (-t * wi).exp();
        }
        let est = mean_and_se(&values)?;
        phi.push(est.mean);
        se.push(est.std_error);
    }
    Ok(LaplaceCurve {
        t: t_grid.to_vec(),
        phi,
        se,
        estimator,
    })
}

/// Laplace transform of `W` estimated through `W_n`.
pub fn laplace_mc(
    model: &EnvironmentModel,
    t_grid: &[f64],
    n: usize,
    replications: usize,
    seed: u64,
    workers: usize,
    cfg: &SimConfig,
) -> Result<LaplaceCurve> {
    check_grid(t_grid)?;
    let set = run_monte_carlo(model, n, replications, seed, workers, cfg)?;
    let log_w: Vec<f64> = set.samples.iter().map(|s| s.log_w).collect();
    laplace_from_log_w(&log_w, t_grid, LaplaceEstimator::MonteCarlo { n, replications })
}

/// `φ_ξ(t)` for a fixed environment path through
/// `φ_ξ(t) = f_0(φ_{Tξ}(t / m_0))`, unrolled to `depth` generations with
/// terminal condition `φ(s) = e^{-s}`.
pub fn laplace_quenched_recursion(env_path: &[&OffspringLaw], t: f64, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(BpreError::Precondition("recursion depth must be at least 1".into()));
    }
    if env_path.len() < depth {
        return Err(BpreError::Precondition(format!(
            "environment path of length {} is shorter than depth {depth}",
            env_path.len()
        )));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(BpreError::Domain(format!("t must be finite and nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let path = &env_path[..depth];
    let log_pi: f64 = path.iter().map(|l| l.log_mean()).sum();
    // Track u = φ and c = 1 - φ, each in the regime where it is accurate.
    let c0 = -(-(t.ln() - log_pi).exp()).exp_m1();
    let mut c = c0;
    let mut u = 1.0 - c0;
    if u < 0.5 {
        u = (-(t.ln() - log_pi).exp()).exp();
    }
    for law in path.iter().rev() {
        if u < 0.5 {
            u = law.pgf(u)?;
            c = 1.0 - u;
        } else {
            c = law.pgf_complement(c)?;
            u = 1.0 - c;
        }
    }
    Ok(u)
}

/// Annealed `φ(t)` by averaging the quenched recursion over sampled paths.
pub fn laplace_quenched(
    model: &EnvironmentModel,
    t_grid: &[f64],
    depth: usize,
    env_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<LaplaceCurve> {
    check_grid(t_grid)?;
    if env_paths == 0 {
        return Err(BpreError::Precondition("need at least one environment path".into()));
    }
    let per_path = try_ordered_map(env_paths, workers, |i| {
        let mut rng = stream_rng(seed, StreamDomain::EnvironmentPaths, i as u64);
        let path: Vec<&OffspringLaw> = (0..depth)
            .map(|_| &model.atoms()[model.sample_atom(&mut rng)].law)
            .collect();
        t_grid
            .iter()
            .map(|&t| laplace_quenched_recursion(&path, t, depth))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut phi = Vec::with_capacity(t_grid.len());
    let mut se = Vec::with_capacity(t_grid.len());
    let mut column = vec![0.0; env_paths];
    for j in 0..t_grid.len() {
        for (c, row) in column.iter_mut().zip(&per_path) {
            *c = row[j];
        }
        let est = mean_and_se(&column)?;
        phi.push(est.mean);
        se.push(est.std_error);
    }
    Ok(LaplaceCurve {
        t: t_grid.to_vec(),
        phi,
        se,
        estimator: LaplaceEstimator::QuenchedRecursion { depth, env_paths },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    /// `-slope` of `log φ` against `log t`.
    pub exponent: f64,
    pub intercept: f64,
    pub rms_residual: f64,
    pub points_used: usize,
    /// The power law does not describe the curve (e.g. exponential decay).
    pub super_polynomial: bool,
}

/// Power-law fit `φ(t) ≈ C t^{-a}` over the grid points in `[t_lo, t_hi]` that
/// sit above three standard errors.
pub fn tail_exponent_fit(curve: &LaplaceCurve, t_lo: f64, t_hi: f64) -> Result<TailFit> {
    let window: Vec<usize> = (0..curve.t.len())
        .filter(|&i| curve.t[i] >= t_lo && curve.t[i] <= t_hi && curve.t[i] > 0.0)
        .collect();
    if window.len() < 3 {
        return Err(BpreError::Precondition(format!(
            "tail fit needs at least 3 grid points in the window, got {}",
            window.len()
        )));
    }
    let kept: Vec<usize> = window
        .into_iter()
        .filter(|&i| curve.phi[i] > 3.0 * curve.se[i] && curve.phi[i] > 0.0)
        .collect();
    if kept.is_empty() {
        return Err(BpreError::Precondition("every φ value in the window is below the noise floor".into()));
    }
    if kept.len() < 3 {
        // Too few usable points for a power law: the curve decays faster.
        return Ok(TailFit {
            exponent: f64::INFINITY,
            intercept: f64::NAN,
            rms_residual: f64::INFINITY,
            points_used: kept.len(),
            super_polynomial: true,
        });
    }
    let x: Vec<f64> = kept.iter().map(|&i| curve.t[i].ln()).collect();
    let y: Vec<f64> = kept.iter().map(|&i| curve.phi[i].ln()).collect();
    let fit = fit_line(&x, &y)?;
    let rms = fit.rms_residual();
    Ok(TailFit {
        exponent: -fit.slope,
        intercept: fit.intercept,
        rms_residual: rms,
        points_used: kept.len(),
        super_polynomial: rms > SUPER_POLYNOMIAL_RMS,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarmonicMethod {
    Direct,
    GammaIntegral,
}

impl fmt::Display for HarmonicMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HarmonicMethod::Direct => "direct",
            HarmonicMethod::GammaIntegral => "gamma_integral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicEstimate {
    pub a: f64,
    pub estimate: f64,
    pub se: f64,
    pub method: HarmonicMethod,
    /// `a >= a_0`: finiteness is not guaranteed.
    pub warn: bool,
}

/// Grid used to tabulate `φ̂` for the Gamma-integral estimator.
const GAMMA_T_MIN: f64 = 1e-4;
const GAMMA_T_MAX: f64 = 1e9;
const GAMMA_PER_DECADE: usize = 12;
/// Upper decades used to extrapolate `φ̂` beyond the grid.
const GAMMA_TAIL_DECADES: f64 = 1.0;

fn direct_estimate(log_w: &[f64], a: f64) -> Result<(f64, f64)> {
    let values: Vec<f64> = log_w.iter().map(|v| (-a * v).exp()).collect();
    let est = mean_and_se(&values)?;
    Ok((est.mean, est.std_error))
}

/// `(1/Γ(a)) ∫_0^∞ φ̂(t) t^{a-1} dt` for the empirical Laplace transform of the
/// given samples.
fn gamma_integral_estimate(log_w: &[f64], a: f64) -> Result<f64> {
    let grid = log_grid(GAMMA_T_MIN, GAMMA_T_MAX, GAMMA_PER_DECADE);
    let curve = laplace_from_log_w(log_w, &grid, LaplaceEstimator::MonteCarlo { n: 0, replications: log_w.len() })?;
    // keep the grid prefix where φ̂ is representable
    let valid = curve.phi.iter().take_while(|p| **p > 1e-300).count();
    if valid < 4 {
        return Err(BpreError::Precondition("empirical Laplace transform vanishes on the grid".into()));
    }
    let log_t: Vec<f64> = curve.t[..valid].iter().map(|t| t.ln()).collect();
    let log_phi: Vec<f64> = curve.phi[..valid].iter().map(|p| p.ln()).collect();
    let spline = Pchip::new(log_t.clone(), log_phi.clone())?;

    let (t_min, phi_min) = (curve.t[0], curve.phi[0]);
    // φ̂ is linear in t to first order below the grid.
    let head = t_min.powf(a) / a + (phi_min - 1.0) * t_min.powf(a) / (a + 1.0);

    // ∫ φ(t) t^a d(log t) across the tabulated range
    let body = integrate(
        |s| (spline.eval(s) + a * s).exp(),
        log_t[0],
        log_t[valid - 1],
        Tolerance {
            absolute: 0.0,
            relative: 1e-10,
            max_intervals: 20_000,
        },
    )?
    .value;

    // power-law tail fitted on the last decade
    let upper = log_t[valid - 1];
    let tail_idx: Vec<usize> = (0..valid)
        .filter(|&i| log_t[i] >= upper - GAMMA_TAIL_DECADES * std::f64::consts::LN_10)
        .collect();
    let fit = fit_line(
        &tail_idx.iter().map(|&i| log_t[i]).collect::<Vec<_>>(),
        &tail_idx.iter().map(|&i| log_phi[i]).collect::<Vec<_>>(),
    )?;
    let b = -fit.slope;
    let tail = if b > a {
        let t_max = upper.exp();
        curve.phi[valid - 1] * t_max.powf(a) / (b - a)
    } else {
        f64::INFINITY
    };
    Ok((head + body + tail) / gamma(a))
}

/// `E W^{-a}` estimated from samples of `log W_n`.
pub fn harmonic_moment_from_log_w(log_w: &[f64], a: f64, method: HarmonicMethod, a0: f64) -> Result<HarmonicEstimate> {
    if log_w.is_empty() {
        return Err(BpreError::EmptyInput("harmonic moment of no samples"));
    }
    if !(a >= 0.0 && a.is_finite()) {
        return Err(BpreError::Domain(format!("harmonic moment order must be nonnegative, got {a}")));
    }
    let warn = a >= a0;
    if a == 0.0 {
        return Ok(HarmonicEstimate {
            a,
            estimate: 1.0,
            se: 0.0,
            method,
            warn,
        });
    }
    let (estimate, se) = match method {
        HarmonicMethod::Direct => direct_estimate(log_w, a)?,
        HarmonicMethod::GammaIntegral => {
            let estimate = gamma_integral_estimate(log_w, a)?;
            let batches = GAMMA_BATCHES.min(log_w.len());
            let size = log_w.len() / batches;
            let se = if batches >= 2 && size >= 4 {
                let values = (0..batches)
                    .map(|b| gamma_integral_estimate(&log_w[b * size..(b + 1) * size], a))
                    .collect::<Result<Vec<f64>>>()?;
                mean_and_se(&values)?.std_error
            } else {
                f64::NAN
            };
            (estimate, se)
        }
    };
    Ok(HarmonicEstimate {
        a,
        estimate,
        se,
        method,
        warn,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn harmonic_moment(
    model: &EnvironmentModel,
    a: f64,
    n: usize,
    replications: usize,
    method: HarmonicMethod,
    seed: u64,
    workers: usize,
    cfg: &SimConfig,
) -> Result<HarmonicEstimate> {
    let set = run_monte_carlo(model, n, replications, seed, workers, cfg)?;
    let log_w: Vec<f64> = set.samples.iter().map(|s| s.log_w).collect();
    let a0 = model.a0_bound(model.lambda0()).unwrap_or(f64::INFINITY);
    harmonic_moment_from_log_w(&log_w, a, method, a0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpVerdict {
    /// Norms shrink geometrically.
    Geometric,
    /// `W_n` does not move at all (a deterministic process).
    ExactZero,
    /// Norms grow with `n`, contradicting the geometric rate.
    Growth,
}

impl fmt::Display for LpVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpVerdict::Geometric => "geometric",
            LpVerdict::ExactZero => "exact_zero",
            LpVerdict::Growth => "growth",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRateFit {
    /// `(n, (E|W_n - W_{n+k}|^p)^{1/p})`.
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
    pub delta: f64,
    pub delta_ci: (f64, f64),
    pub verdict: LpVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub replications: usize,
    pub lag: usize,
    pub seed: u64,
    pub workers: usize,
    pub bootstrap: usize,
    pub ci_level: f64,
    pub exact_threshold: u64,
}

/// Geometric rate of `W_n → W` in `L^p`, with `W` proxied by `W_{n+lag}` on
/// the same trajectory.
pub fn lp_rate_fit(model: &EnvironmentModel, p: f64, n_grid: &[usize], opts: &LpOptions) -> Result<LpRateFit> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(BpreError::Domain(format!("p must lie in (1, 2], got {p}")));
    }
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BpreError::Precondition("n_grid must be increasing with at least 3 values".into()));
    }
    if opts.replications == 0 {
        return Err(BpreError::Precondition("replications must be at least 1".into()));
    }
    // W keeps moving at any size; the fluctuation cutoff would freeze it.
    let cfg = SimConfig {
        exact_threshold: opts.exact_threshold,
        fluctuation_cutoff: f64::INFINITY,
    };
    let horizon = n_grid[n_grid.len() - 1] + opts.lag;
    let mut checkpoints: Vec<usize> = n_grid.iter().flat_map(|&n| [n, n + opts.lag]).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();

    // |W_n - W_{n+lag}|^p per replication and grid point
    let diffs = try_ordered_map(opts.replications, opts.workers, |i| {
        let mut rng = stream_rng(opts.seed, StreamDomain::Trajectories, i as u64);
        let mut log_w = vec![0.0; checkpoints.len()];
        simulate_path(model, horizon, &cfg, &mut rng, |state| {
            if let Ok(k) = checkpoints.binary_search(&state.generation) {
                log_w[k] = state.log_w();
            }
        })?;
        let at = |g: usize| log_w[checkpoints.binary_search(&g).expect("checkpoint")];
        Ok(n_grid
            .iter()
            .map(|&n| {
                let (a, b) = (at(n), at(n + opts.lag));
                // W_n - W_{n+k} = W_n (1 - e^{b - a}), exact for tiny gaps
                (a.exp() * (-(b - a).exp_m1())).abs().powf(p)
            })
            .collect::<Vec<f64>>())
    })?;

    let norms_for = |weights: Option<&[u32]>| -> Vec<f64> {
        (0..n_grid.len())
            .map(|j| {
                let (mut sum, mut count) = (0.0, 0.0);
                for (i, row) in diffs.iter().enumerate() {
                    let w = weights.map_or(1.0, |w| w[i] as f64);
                    sum += w * row[j];
                    count += w;
                }
                (sum / count).powf(1.0 / p)
            })
            .collect()
    };
    let norms = norms_for(None);
    let points: Vec<(usize, f64)> = n_grid.iter().copied().zip(norms.iter().copied()).collect();
    // rounding in log Π_n leaves residue far below any real fluctuation
    if norms.iter().all(|v| *v < EXACT_ZERO_NORM) {
        return Ok(LpRateFit {
            points,
            slope: f64::NEG_INFINITY,
            delta: 0.0,
            delta_ci: (0.0, 0.0),
            verdict: LpVerdict::ExactZero,
        });
    }
    let xs: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let fit = fit_line(&xs, &norms.iter().map(|v| v.ln()).collect::<Vec<_>>())?;

    let slopes = try_ordered_map(opts.bootstrap, opts.workers, |b| {
        let mut rng = stream_rng(opts.seed, StreamDomain::Bootstrap, b as u64);
        let mut weights = vec![0u32; diffs.len()];
        for _ in 0..diffs.len() {
            weights[rng.random_range(0..diffs.len())] += 1;
        }
        let logs: Vec<f64> = norms_for(Some(&weights)).iter().map(|v| v.ln()).collect();
        Ok(fit_line(&xs, &logs)?.slope)
    })?;
    let (lo, hi) = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        percentile_interval(slopes, opts.ci_level)
    };
    Ok(LpRateFit {
        points,
        slope: fit.slope,
        delta: fit.slope.exp(),
        delta_ci: (lo.exp(), hi.exp()),
        verdict: if fit.slope > 0.0 {
            LpVerdict::Growth
        } else {
            LpVerdict::Geometric
        },
    })
}
