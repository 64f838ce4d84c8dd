//! Reproduction laws on `{1, 2, 3, ...}`.
//!
//! A law can never put mass on zero children, so every process built from
//! these laws survives forever and `Z_n >= 1`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{BpreError, Result};
use crate::special::ln_gamma;

/// Largest population count that sampling will report exactly.
pub const EXACT_CAPACITY: u64 = 1 << 53;

/// Below this many parents a finite law is summed draw by draw.
const FINITE_DIRECT_LIMIT: u64 = 64;

const MOMENT_SERIES_TOL: f64 = 1e-12;
const MOMENT_SERIES_MAX_TERMS: usize = 50_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum OffspringFamily {
    /// `P(N = k) = p (1-p)^(k-1)` for `k >= 1`.
    ShiftedGeometric { p: f64 },
    /// `N = 1 + Poisson(rate)`.
    ShiftedPoisson { rate: f64 },
    /// `pmf[k - 1] = P(N = k)`.
    Finite { pmf: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    family: OffspringFamily,
    mean: f64,
    log_mean: f64,
    variance: f64,
    second_factorial: f64,
    cumulative: Vec<f64>,
}

impl OffspringLaw {
    pub fn shifted_geometric(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(BpreError::InvalidLaw(format!(
                "shifted geometric needs p in (0, 1], got {p}"
            )));
        }
        let mean = 1.0 / p;
        let variance = (1.0 - p) / (p * p);
        Ok(Self::assemble(
            OffspringFamily::ShiftedGeometric { p },
            mean,
            variance,
            Vec::new(),
        ))
    }

    /// Geometric law on `{1, 2, ...}` with the given mean (`p = 1/mean`).
    pub fn shifted_geometric_with_mean(mean: f64) -> Result<Self> {
        if !(mean >= 1.0 && mean.is_finite()) {
            return Err(BpreError::InvalidLaw(format!(
                "shifted geometric mean must be finite and >= 1, got {mean}"
            )));
        }
        let mut law = Self::shifted_geometric(1.0 / mean)?;
        // keep the requested mean exactly rather than 1/(1/mean)
        law.mean = mean;
        law.log_mean = mean.ln();
        Ok(law)
    }

    pub fn shifted_poisson(rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(BpreError::InvalidLaw(format!(
                "shifted Poisson needs a finite rate >= 0, got {rate}"
            )));
        }
        Ok(Self::assemble(
            OffspringFamily::ShiftedPoisson { rate },
            1.0 + rate,
            rate,
            Vec::new(),
        ))
    }

    /// `pmf[k - 1]` is the probability of exactly `k` children.
    pub fn finite(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(BpreError::InvalidLaw("finite law needs at least one weight".into()));
        }
        if let Some(w) = pmf.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(BpreError::InvalidLaw(format!(
                "finite law weights must be nonnegative, got {w}"
            )));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BpreError::InvalidLaw(format!(
                "finite law weights must sum to 1, got {total}"
            )));
        }
        let mut pmf = pmf;
        while pmf.len() > 1 && *pmf.last().unwrap() == 0.0 {
            pmf.pop();
        }
        let mean: f64 = pmf.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum();
        let second: f64 = pmf
            .iter()
            .enumerate()
            .map(|(i, w)| ((i + 1) as f64).powi(2) * w)
            .sum();
        let variance = (second - mean * mean).max(0.0);
        let mut acc = 0.0;
        let cumulative = pmf
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self::assemble(
            OffspringFamily::Finite { pmf },
            mean,
            variance,
            cumulative,
        ))
    }

    /// Builds a finite law from `{children: weight}`. Zero children may only
    /// appear with weight zero.
    pub fn finite_from_map(map: &BTreeMap<u32, f64>) -> Result<Self> {
        if let Some(w) = map.get(&0) {
            if *w != 0.0 {
                return Err(BpreError::InvalidLaw(format!(
                    "p0 fails: each individual must have at least one child, got P(N = 0) = {w}"
                )));
            }
        }
        let max = map.keys().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(BpreError::InvalidLaw("finite law has no mass on {1, 2, ...}".into()));
        }
        let mut pmf = vec![0.0; max as usize];
        for (&k, &w) in map.iter().filter(|(k, _)| **k > 0) {
            pmf[k as usize - 1] = w;
        }
        Self::finite(pmf)
    }

    fn assemble(family: OffspringFamily, mean: f64, variance: f64, cumulative: Vec<f64>) -> Self {
        OffspringLaw {
            family,
            mean,
            log_mean: mean.ln(),
            variance,
            second_factorial: variance + mean * mean - mean,
            cumulative,
        }
    }

    pub fn family(&self) -> &OffspringFamily {
        &self.family
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn log_mean(&self) -> f64 {
        self.log_mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `E N(N-1)`.
    pub fn second_factorial_moment(&self) -> f64 {
        self.second_factorial
    }

    /// Probability of exactly one child.
    pub fn p1(&self) -> f64 {
        match &self.family {
            OffspringFamily::ShiftedGeometric { p } => *p,
            OffspringFamily::ShiftedPoisson { rate } => (-rate).exp(),
            OffspringFamily::Finite { pmf } => pmf[0],
        }
    }

    /// Generating function `f(s) = sum_k P(N = k) s^k`.
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(BpreError::Domain(format!("pgf argument must lie in [0, 1], got {s}")));
        }
        Ok(match &self.family {
            OffspringFamily::ShiftedGeometric { p } => p * s / (p + (1.0 - p) * (1.0 - s)),
            OffspringFamily::ShiftedPoisson { rate } => s * (rate * (s - 1.0)).exp(),
            OffspringFamily::Finite { pmf } => s * pmf.iter().rev().fold(0.0, |acc, w| acc * s + w),
        })
    }

    /// `1 - f(1 - u)`, evaluated without forming `1 - u`. Keeps full relative
    /// precision when `u` is tiny, which the quenched Laplace recursion needs.
    pub fn pgf_complement(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(BpreError::Domain(format!(
                "pgf complement argument must lie in [0, 1], got {u}"
            )));
        }
        Ok(match &self.family {
            OffspringFamily::ShiftedGeometric { p } => u / (p + (1.0 - p) * u),
            OffspringFamily::ShiftedPoisson { rate } => {
                let damp = (-rate * u).exp();
                -(-rate * u).exp_m1() + u * damp
            }
            OffspringFamily::Finite { pmf } => {
                let log1m = (-u).ln_1p();
                pmf.iter()
                    .enumerate()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(i, w)| w * -(((i + 1) as f64) * log1m).exp_m1())
                    .sum()
            }
        })
    }

    /// `E N^q` for real `q >= 0`. Parametric families are summed as series
    /// truncated at relative tail `1e-12`; `inf` means the series did not
    /// settle in floating point.
    pub fn moment(&self, q: f64) -> f64 {
        match &self.family {
            OffspringFamily::Finite { pmf } => pmf
                .iter()
                .enumerate()
                .map(|(i, w)| w * ((i + 1) as f64).powf(q))
                .sum(),
            OffspringFamily::ShiftedGeometric { p } => geometric_moment(*p, q),
            OffspringFamily::ShiftedPoisson { rate } => poisson_moment(*rate, q),
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.family {
            OffspringFamily::ShiftedGeometric { p } => {
                if *p >= 1.0 {
                    return 1;
                }
                // Inversion: failures before the first success.
                let u: f64 = 1.0 - rng.random::<f64>();
                1 + (u.ln() / (-p).ln_1p()).floor() as u64
            }
            OffspringFamily::ShiftedPoisson { rate } => {
                if *rate == 0.0 {
                    1
                } else {
                    1 + Poisson::new(*rate).expect("valid rate").sample(rng) as u64
                }
            }
            OffspringFamily::Finite { .. } => self.draw_finite(rng),
        }
    }

    fn draw_finite<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cumulative.iter().position(|c| u < *c).unwrap_or(self.cumulative.len() - 1);
        idx as u64 + 1
    }

    /// Exact draw of `N_1 + ... + N_z` for i.i.d. `N_i` from this law.
    ///
    /// Uses the convolution identities `sum of z shifted geometrics = z +
    /// NegBin(z, p)` (drawn as a Gamma-mixed Poisson) and `sum of z shifted
    /// Poissons = z + Poisson(z * rate)`. Finite laws are summed directly for
    /// small `z` and through multinomial category counts otherwise.
    pub fn sample_sum<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> Result<u64> {
        if z == 0 {
            return Err(BpreError::Precondition("sample_sum needs z >= 1".into()));
        }
        let total: u128 = match &self.family {
            OffspringFamily::ShiftedGeometric { p } => {
                if *p >= 1.0 {
                    z as u128
                } else if z == 1 {
                    self.sample_one(rng) as u128
                } else {
                    let gamma = Gamma::new(z as f64, (1.0 - p) / p)
                        .map_err(|e| BpreError::Domain(format!("gamma mixing law: {e}")))?;
                    let intensity = gamma.sample(rng);
                    z as u128 + poisson_count(intensity, rng)?
                }
            }
            OffspringFamily::ShiftedPoisson { rate } => {
                z as u128 + poisson_count(z as f64 * rate, rng)?
            }
            OffspringFamily::Finite { pmf } => {
                if pmf.len() == 1 {
                    z as u128
                } else if z <= FINITE_DIRECT_LIMIT {
                    (0..z).map(|_| self.draw_finite(rng) as u128).sum()
                } else {
                    multinomial_weighted_sum(pmf, z, rng)?
                }
            }
        };
        if total > EXACT_CAPACITY as u128 {
            return Err(BpreError::Overflow {
                capacity: EXACT_CAPACITY,
            });
        }
        Ok(total as u64)
    }
}

fn poisson_count<R: Rng + ?Sized>(intensity: f64, rng: &mut R) -> Result<u128> {
    if intensity <= 0.0 {
        return Ok(0);
    }
    if intensity >= EXACT_CAPACITY as f64 {
        return Err(BpreError::Overflow {
            capacity: EXACT_CAPACITY,
        });
    }
    let draw = Poisson::new(intensity)
        .map_err(|e| BpreError::Domain(format!("Poisson intensity {intensity}: {e}")))?
        .sample(rng);
    if draw >= EXACT_CAPACITY as f64 {
        return Err(BpreError::Overflow {
            capacity: EXACT_CAPACITY,
        });
    }
    Ok(draw as u128)
}

/// Category counts by sequential conditional binomials, then `sum k * count_k`.
fn multinomial_weighted_sum<R: Rng + ?Sized>(pmf: &[f64], z: u64, rng: &mut R) -> Result<u128> {
    let mut remaining = z;
    let mut mass_left = 1.0;
    let mut total: u128 = 0;
    let last = pmf.len() - 1;
    for (i, &w) in pmf.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let count = if i == last || w >= mass_left {
            remaining
        } else if w <= 0.0 {
            0
        } else {
            let prob = (w / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, prob)
                .map_err(|e| BpreError::Domain(format!("binomial category draw: {e}")))?
                .sample(rng)
        };
        total += (i as u128 + 1) * count as u128;
        remaining -= count;
        mass_left -= w;
    }
    Ok(total)
}

fn geometric_moment(p: f64, q: f64) -> f64 {
    if p >= 1.0 || q == 0.0 {
        return 1.0;
    }
    let fail = 1.0 - p;
    let mut sum = 0.0;
    let mut weight = p;
    for k in 1..=MOMENT_SERIES_MAX_TERMS {
        let kf = k as f64;
        let term = weight * kf.powf(q);
        sum += term;
        // For k past the mode the term ratio stays below r, so the tail is
        // bounded by a geometric series.
        let ratio = fail * ((kf + 1.0) / kf).powf(q);
        if ratio < 1.0 && term * ratio / (1.0 - ratio) <= MOMENT_SERIES_TOL * sum {
            return sum;
        }
        weight *= fail;
        if !sum.is_finite() {
            break;
        }
    }
    f64::INFINITY
}

fn poisson_moment(rate: f64, q: f64) -> f64 {
    if rate == 0.0 || q == 0.0 {
        return 1.0;
    }
    let mode = rate.floor() as usize;
    let mut sum = 0.0;
    for j in 0..MOMENT_SERIES_MAX_TERMS {
        let jf = j as f64;
        let log_term = -rate + jf * rate.ln() - ln_gamma(jf + 1.0) + q * (jf + 1.0).ln();
        let term = log_term.exp();
        sum += term;
        if j > mode {
            // ratio of successive terms is rate/(j+1) * ((j+2)/(j+1))^q
            let ratio = rate / (jf + 1.0) * ((jf + 2.0) / (jf + 1.0)).powf(q);
            if ratio < 1.0 && term * ratio / (1.0 - ratio) <= MOMENT_SERIES_TOL * sum {
                return sum;
            }
        }
    }
    f64::INFINITY
}

/// Config-file form of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    ShiftedGeometric {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<f64>,
    },
    ShiftedPoisson {
        rate: f64,
    },
    Finite {
        pmf: BTreeMap<String, f64>,
    },
}

impl TryFrom<&LawSpec> for OffspringLaw {
    type Error = BpreError;

    fn try_from(spec: &LawSpec) -> Result<Self> {
        match spec {
            LawSpec::ShiftedGeometric { p: Some(p), mean: None } => OffspringLaw::shifted_geometric(*p),
            LawSpec::ShiftedGeometric { p: None, mean: Some(m) } => {
                OffspringLaw::shifted_geometric_with_mean(*m)
            }
            LawSpec::ShiftedGeometric { .. } => Err(BpreError::InvalidLaw(
                "shifted_geometric needs exactly one of \"p\" or \"mean\"".into(),
            )),
            LawSpec::ShiftedPoisson { rate } => OffspringLaw::shifted_poisson(*rate),
            LawSpec::Finite { pmf } => {
                let mut map = BTreeMap::new();
                for (key, w) in pmf {
                    let k: u32 = key.trim().parse().map_err(|_| {
                        BpreError::InvalidLaw(format!("finite pmf key {key:?} is not a child count"))
                    })?;
                    map.insert(k, *w);
                }
                OffspringLaw::finite_from_map(&map)
            }
        }
    }
}

impl From<&OffspringLaw> for LawSpec {
    fn from(law: &OffspringLaw) -> Self {
        match &law.family {
            OffspringFamily::ShiftedGeometric { p } => LawSpec::ShiftedGeometric {
                p: Some(*p),
                mean: None,
            },
            OffspringFamily::ShiftedPoisson { rate } => LawSpec::ShiftedPoisson { rate: *rate },
            OffspringFamily::Finite { pmf } => LawSpec::Finite {
                pmf: pmf
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(i, w)| ((i + 1).to_string(), *w))
                    .collect(),
            },
        }
    }
}
