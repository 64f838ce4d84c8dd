//! Trajectories of `(Z_n, S_n, W_n)` under the annealed law or a tilted one.
//!
//! Populations are tracked as exact integers until they pass
//! `exact_threshold`, then as `log W_n` with a delta-method Gaussian
//! fluctuation per generation. Past `fluctuation_cutoff` the fluctuation is
//! dropped and the population simply grows by `m` each generation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::environment::{EnvironmentModel, IncrementLaw};
use crate::error::{BpreError, Result};
use crate::offspring::OffspringLaw;
use crate::parallel::try_ordered_map;
use crate::rng::{stream_rng, SimRng, StreamDomain};
use crate::stats::{mean_and_se, MeanEstimate};

pub const DEFAULT_EXACT_THRESHOLD: u64 = 1 << 40;
pub const DEFAULT_FLUCTUATION_CUTOFF: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub exact_threshold: u64,
    pub fluctuation_cutoff: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            fluctuation_cutoff: DEFAULT_FLUCTUATION_CUTOFF,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PopulationMode {
    Exact(u64),
    /// `log W_n = log Z_n - S_n`.
    LogScale { log_w: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationState {
    pub generation: usize,
    /// `S_n = log Π_n`.
    pub log_pi: f64,
    pub mode: PopulationMode,
}

impl PopulationState {
    pub fn initial() -> Self {
        PopulationState {
            generation: 0,
            log_pi: 0.0,
            mode: PopulationMode::Exact(1),
        }
    }

    pub fn log_z(&self) -> f64 {
        match self.mode {
            PopulationMode::Exact(z) => (z as f64).ln(),
            PopulationMode::LogScale { log_w } => self.log_pi + log_w,
        }
    }

    pub fn log_w(&self) -> f64 {
        match self.mode {
            PopulationMode::Exact(z) => (z as f64).ln() - self.log_pi,
            PopulationMode::LogScale { log_w } => log_w,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.mode, PopulationMode::Exact(_))
    }
}

/// Log-scale increment of `log W` for a generation with `exp(log_z)` parents.
fn fluctuation<R: Rng + ?Sized>(law: &OffspringLaw, log_z: f64, cfg: &SimConfig, rng: &mut R) -> f64 {
    if log_z > cfg.fluctuation_cutoff.ln() {
        return 0.0;
    }
    // Z'/(z m) - 1 has variance v / (m² z); first order in log space.
    let g: f64 = StandardNormal.sample(rng);
    g * law.variance().sqrt() / law.mean() * (-0.5 * log_z).exp()
}

/// One generation with offspring law `law`.
pub fn step<R: Rng + ?Sized>(
    state: &PopulationState,
    law: &OffspringLaw,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<PopulationState> {
    let log_pi = state.log_pi + law.log_mean();
    let generation = state.generation + 1;
    let mode = match state.mode {
        PopulationMode::Exact(z) => match law.sample_sum(z, rng) {
            Ok(next) if next <= cfg.exact_threshold => PopulationMode::Exact(next),
            Ok(next) => PopulationMode::LogScale {
                log_w: (next as f64).ln() - log_pi,
            },
            Err(BpreError::Overflow { .. }) => PopulationMode::LogScale {
                log_w: state.log_w() + fluctuation(law, (z as f64).ln(), cfg, rng),
            },
            Err(e) => return Err(e),
        },
        PopulationMode::LogScale { log_w } => PopulationMode::LogScale {
            log_w: log_w + fluctuation(law, state.log_z(), cfg, rng),
        },
    };
    Ok(PopulationState {
        generation,
        log_pi,
        mode,
    })
}

/// Terminal statistics of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub log_z: f64,
    pub s: f64,
    /// Stored as `log_z - s`.
    pub log_w: f64,
    pub weight: f64,
    pub mode_switch_generation: Option<usize>,
}

impl TrajectorySample {
    fn from_state(state: &PopulationState, switch: Option<usize>) -> Self {
        let log_z = state.log_z();
        TrajectorySample {
            log_z,
            s: state.log_pi,
            log_w: log_z - state.log_pi,
            weight: 1.0,
            mode_switch_generation: switch,
        }
    }

    /// `(log Z_n - nμ) / (σ√n)`.
    pub fn standardized(&self, n: usize, mu: f64, sigma: f64) -> f64 {
        (self.log_z - n as f64 * mu) / (sigma * (n as f64).sqrt())
    }

    /// `Y_n = (S_n - nμ) / (σ√n)`.
    pub fn y(&self, n: usize, mu: f64, sigma: f64) -> f64 {
        (self.s - n as f64 * mu) / (sigma * (n as f64).sqrt())
    }

    /// `V_n = log W_n / (σ√n)`.
    pub fn v(&self, n: usize, sigma: f64) -> f64 {
        self.log_w / (sigma * (n as f64).sqrt())
    }
}

/// Runs `n` generations, calling `observe` after each one.
pub fn simulate_path<R, F>(
    model: &EnvironmentModel,
    n: usize,
    cfg: &SimConfig,
    rng: &mut R,
    mut observe: F,
) -> Result<(PopulationState, Option<usize>)>
where
    R: Rng + ?Sized,
    F: FnMut(&PopulationState),
{
    let mut state = PopulationState::initial();
    let mut switch = None;
    for _ in 0..n {
        let atom = model.sample_atom(rng);
        state = step(&state, &model.atoms()[atom].law, cfg, rng)?;
        if switch.is_none() && !state.is_exact() {
            switch = Some(state.generation);
        }
        observe(&state);
    }
    Ok((state, switch))
}

pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    n: usize,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<TrajectorySample> {
    if n == 0 {
        return Err(BpreError::Precondition("trajectories need n >= 1".into()));
    }
    let (state, switch) = simulate_path(model, n, cfg, rng, |_| {})?;
    Ok(TrajectorySample::from_state(&state, switch))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub fingerprint: String,
    pub n: usize,
    pub seed: u64,
    /// Tilt parameter the trajectories were drawn under.
    pub lambda: f64,
    pub samples: Vec<TrajectorySample>,
}

impl SampleSet {
    pub fn log_z(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.log_z).collect()
    }

    pub fn standardized(&self, mu: f64, sigma: f64) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.standardized(self.n, mu, sigma))
            .collect()
    }
}

fn check_replications(replications: usize) -> Result<()> {
    if replications == 0 {
        return Err(BpreError::Precondition("replications must be at least 1".into()));
    }
    Ok(())
}

/// Replication `i` draws from stream `i` of the trajectory domain of `seed`,
/// so the result is identical for every worker count.
pub fn run_monte_carlo(
    model: &EnvironmentModel,
    n: usize,
    replications: usize,
    seed: u64,
    workers: usize,
    cfg: &SimConfig,
) -> Result<SampleSet> {
    tilted_sample_set(model, 0.0, n, replications, seed, workers, cfg)
}

/// Trajectories under the tilted environment, each weighted by
/// `exp(-λ S_n + n ψ(λ))` so that weighted averages estimate annealed
/// expectations.
pub fn tilted_sample_set(
    model: &EnvironmentModel,
    lambda: f64,
    n: usize,
    replications: usize,
    seed: u64,
    workers: usize,
    cfg: &SimConfig,
) -> Result<SampleSet> {
    check_replications(replications)?;
    if !lambda.is_finite() {
        return Err(BpreError::Domain(format!("tilt must be finite, got {lambda}")));
    }
    let tilted = model.tilt(lambda);
    let mu = model.mean();
    let psi_c = model.centered_log_mgf(lambda);
    let samples = try_ordered_map(replications, workers, |i| {
        let mut rng: SimRng = stream_rng(seed, StreamDomain::Trajectories, i as u64);
        let mut sample = simulate_trajectory(&tilted, n, cfg, &mut rng)?;
        if lambda != 0.0 {
            // centred form keeps the exponent O(1) even when S_n is large
            sample.weight = (-lambda * (sample.s - n as f64 * mu) + n as f64 * psi_c).exp();
        }
        Ok(sample)
    })?;
    Ok(SampleSet {
        fingerprint: model.fingerprint(),
        n,
        seed,
        lambda,
        samples,
    })
}

/// Weighted mean of `1(log Z_n > threshold)` with its standard error.
pub fn weighted_exceedance(set: &SampleSet, threshold: f64) -> Result<MeanEstimate> {
    let values: Vec<f64> = set
        .samples
        .iter()
        .map(|s| if s.log_z > threshold { s.weight } else { 0.0 })
        .collect();
    mean_and_se(&values)
}

/// Importance-sampling estimate of `P(log Z_n > threshold)`.
#[allow(clippy::too_many_arguments)]
pub fn tilted_estimate(
    model: &EnvironmentModel,
    lambda: f64,
    n: usize,
    replications: usize,
    threshold: f64,
    seed: u64,
    workers: usize,
    cfg: &SimConfig,
) -> Result<MeanEstimate> {
    let set = tilted_sample_set(model, lambda, n, replications, seed, workers, cfg)?;
    weighted_exceedance(&set, threshold)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::environment::Atom;
    use crate::stats::{ks_two_sample, ks_two_sample_critical};

    fn deterministic_two() -> EnvironmentModel {
        EnvironmentModel::single(OffspringLaw::finite(vec![0.0, 1.0]).unwrap())
    }

    fn poisson_mixture() -> EnvironmentModel {
        EnvironmentModel::new(
            vec![
                Atom {
                    law: OffspringLaw::shifted_poisson(0.5).unwrap(),
                    prob: 0.4,
                },
                Atom {
                    law: OffspringLaw::finite(vec![0.1, 0.3, 0.6]).unwrap(),
                    prob: 0.6,
                },
            ],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_step() {
        let law = OffspringLaw::finite(vec![0.0, 1.0]).unwrap();
        let mut rng = stream_rng(1, StreamDomain::Auxiliary(0), 0);
        let next = step(&PopulationState::initial(), &law, &SimConfig::default(), &mut rng).unwrap();
        assert_eq!(next.mode, PopulationMode::Exact(2));
    }

    #[test]
    fn exact_step_mean() {
        let law = OffspringLaw::shifted_geometric(0.4).unwrap();
        let cfg = SimConfig::default();
        let start = PopulationState {
            generation: 0,
            log_pi: 0.0,
            mode: PopulationMode::Exact(7),
        };
        let mut rng = stream_rng(2, StreamDomain::Auxiliary(0), 0);
        let values: Vec<f64> = (0..100_000)
            .map(|_| match step(&start, &law, &cfg, &mut rng).unwrap().mode {
                PopulationMode::Exact(z) => z as f64,
                PopulationMode::LogScale { .. } => unreachable!(),
            })
            .collect();
        let est = mean_and_se(&values).unwrap();
        assert!((est.mean - 7.0 * law.mean()).abs() < 5.0 * est.std_error);
    }

    #[test]
    fn log_scale_beyond_cutoff_is_deterministic() {
        let law = OffspringLaw::shifted_poisson(2.0).unwrap();
        let state = PopulationState {
            generation: 5,
            log_pi: 60.0,
            mode: PopulationMode::LogScale { log_w: 40.0 },
        };
        let mut rng = stream_rng(3, StreamDomain::Auxiliary(0), 0);
        let next = step(&state, &law, &SimConfig::default(), &mut rng).unwrap();
        assert_eq!(next.log_z(), 100.0 + 3f64.ln());
        assert_eq!(next.log_w(), 40.0);
    }

    #[test]
    fn overflow_switches_to_log_scale() {
        let law = OffspringLaw::finite(vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = SimConfig {
            exact_threshold: u64::MAX,
            fluctuation_cutoff: DEFAULT_FLUCTUATION_CUTOFF,
        };
        let mut rng = stream_rng(4, StreamDomain::Auxiliary(0), 0);
        let model = EnvironmentModel::single(law);
        let sample = simulate_trajectory(&model, 40, &cfg, &mut rng).unwrap();
        // 4^26 > 2^53 first
        assert_eq!(sample.mode_switch_generation, Some(27));
        assert!((sample.log_z - 40.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_trajectory() {
        let mut rng = stream_rng(5, StreamDomain::Auxiliary(0), 0);
        let sample = simulate_trajectory(&deterministic_two(), 10, &SimConfig::default(), &mut rng).unwrap();
        assert!((sample.log_z - 10.0 * 2f64.ln()).abs() < 1e-12);
        assert!(sample.log_w.abs() < 1e-12);
        assert_eq!(sample.weight, 1.0);
    }

    #[test]
    fn single_generation_is_one_draw() {
        let law = OffspringLaw::shifted_geometric(0.5).unwrap();
        let model = EnvironmentModel::single(law);
        let set = run_monte_carlo(&model, 1, 1_000_000, 6, 1, &SimConfig::default()).unwrap();
        let mut counts = vec![0u64; 64];
        for s in &set.samples {
            let k = s.log_z.exp().round() as usize;
            counts[k.min(63)] += 1;
        }
        let tv: f64 = (1..64)
            .map(|k| (counts[k] as f64 / 1e6 - 0.5f64.powi(k as i32)).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.01, "tv = {tv}");
    }

    #[test]
    fn replications_must_be_positive() {
        let model = EnvironmentModel::two_point_geometric();
        assert!(run_monte_carlo(&model, 5, 0, 1, 1, &SimConfig::default()).is_err());
    }

    #[test]
    fn workers_do_not_change_results() {
        let model = EnvironmentModel::two_point_geometric();
        let cfg = SimConfig::default();
        let one = run_monte_carlo(&model, 30, 500, 9, 1, &cfg).unwrap();
        let eight = run_monte_carlo(&model, 30, 500, 9, 8, &cfg).unwrap();
        assert_eq!(one, eight);
        for s in &one.samples {
            assert_eq!(s.log_w, s.log_z - s.s);
        }
    }

    #[test]
    fn martingale_mean_is_one() {
        let cfg = SimConfig::default();
        for model in [EnvironmentModel::two_point_geometric(), poisson_mixture()] {
            for n in [10, 50, 200] {
                let set = run_monte_carlo(&model, n, 100_000, 10 + n as u64, 1, &cfg).unwrap();
                let w: Vec<f64> = set.samples.iter().map(|s| s.log_w.exp()).collect();
                let est = mean_and_se(&w).unwrap();
                assert!((est.mean - 1.0).abs() < 5.0 * est.std_error, "n={n} {est:?}");
            }
        }
    }

    #[test]
    fn disjoint_seeds_agree_in_law() {
        let model = EnvironmentModel::two_point_geometric();
        let cfg = SimConfig::default();
        let a = run_monte_carlo(&model, 20, 100_000, 100, 1, &cfg).unwrap().log_z();
        let b = run_monte_carlo(&model, 20, 100_000, 200, 1, &cfg).unwrap().log_z();
        let d = ks_two_sample(&a, &b).unwrap();
        assert!(d < ks_two_sample_critical(0.001, a.len(), b.len()), "d = {d}");
    }

    #[test]
    fn mode_switch_does_not_distort() {
        let model = EnvironmentModel::two_point_geometric();
        let low = SimConfig {
            exact_threshold: 1 << 20,
            ..SimConfig::default()
        };
        let high = SimConfig::default();
        let a = run_monte_carlo(&model, 30, 100_000, 300, 1, &low).unwrap().log_z();
        let b = run_monte_carlo(&model, 30, 100_000, 301, 1, &high).unwrap().log_z();
        let d = ks_two_sample(&a, &b).unwrap();
        assert!(d < ks_two_sample_critical(0.001, a.len(), b.len()), "d = {d}");
    }

    #[test]
    fn tilted_drift_and_weights() {
        let model = EnvironmentModel::two_point_geometric();
        let n = 40;
        let lambda = 0.5;
        let set = tilted_sample_set(&model, lambda, n, 100_000, 400, 1, &SimConfig::default()).unwrap();
        let drift: Vec<f64> = set.samples.iter().map(|s| s.s / n as f64).collect();
        let est = mean_and_se(&drift).unwrap();
        assert!((est.mean - model.tilted_mean(lambda)).abs() < 5.0 * est.std_error);
        let weights: Vec<f64> = set.samples.iter().map(|s| s.weight).collect();
        let est = mean_and_se(&weights).unwrap();
        assert!((est.mean - 1.0).abs() < 5.0 * est.std_error, "{est:?}");
        assert!(weights.iter().all(|w| *w > 0.0));
    }

    #[test]
    fn zero_tilt_is_direct_estimate() {
        let model = EnvironmentModel::two_point_geometric();
        let cfg = SimConfig::default();
        let direct = run_monte_carlo(&model, 20, 2000, 7, 1, &cfg).unwrap();
        let tilted = tilted_sample_set(&model, 0.0, 20, 2000, 7, 1, &cfg).unwrap();
        assert_eq!(direct, tilted);
        let est = tilted_estimate(&model, 0.3, 20, 50_000, f64::NEG_INFINITY, 8, 1, &cfg).unwrap();
        assert!((est.mean - 1.0).abs() < 5.0 * est.std_error);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn exact_counts_stay_positive(seed in any::<u64>(), n in 1usize..30) {
            let model = poisson_mixture();
            let mut rng = stream_rng(seed, StreamDomain::Trajectories, 0);
            let (state, switch) = simulate_path(&model, n, &SimConfig::default(), &mut rng, |s| {
                if let PopulationMode::Exact(z) = s.mode {
                    assert!(z >= 1);
                }
            }).unwrap();
            prop_assert_eq!(state.generation, n);
            if let Some(g) = switch {
                prop_assert!(g <= n);
            }
        }
    }
}
