//! The i.i.d. random environment: a finite mixture of offspring laws.
//!
//! The increment of the associated random walk is `X = log m_0`. Every
//! expectation over the environment is an exact finite sum over atoms.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BpreError, Result};
use crate::offspring::{LawSpec, OffspringLaw};

pub const DEFAULT_LAMBDA0: f64 = 1.0;
pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_CUMULANT_ORDER: usize = 6;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub law: OffspringLaw,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    atoms: Vec<Atom>,
    lambda0: f64,
    log_means: Vec<f64>,
    cumulative: Vec<f64>,
    mean: f64,
    variance: f64,
}

/// Cumulants `gamma[k-1] = γ_k` of the increment `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantSet {
    pub gamma: Vec<f64>,
}

impl CumulantSet {
    pub fn new(gamma: Vec<f64>) -> Self {
        CumulantSet { gamma }
    }

    /// `γ_k`, zero beyond the stored order.
    pub fn get(&self, k: usize) -> f64 {
        assert!(k >= 1, "cumulants are indexed from 1");
        self.gamma.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn order(&self) -> usize {
        self.gamma.len()
    }
}

/// Distribution of the walk increment, as needed by the tilting machinery.
///
/// Implemented by finite environment mixtures and by a Gaussian surrogate
/// whose cumulants beyond the second vanish.
pub trait IncrementLaw {
    fn mean(&self) -> f64;
    fn variance(&self) -> f64;
    fn lambda0(&self) -> f64;
    /// `ψ(λ) - λμ`, kept separate from `ψ` to avoid cancellation near 0.
    fn centered_log_mgf(&self, lambda: f64) -> f64;
    /// `μ_λ - μ`.
    fn tilted_mean_shift(&self, lambda: f64) -> f64;
    /// `σ_λ²`.
    fn tilted_variance(&self, lambda: f64) -> f64;
    /// `E_λ |X - μ_λ|³`.
    fn tilted_third_abs(&self, lambda: f64) -> f64;
    fn cumulants(&self, order: usize) -> CumulantSet;

    fn log_mgf(&self, lambda: f64) -> f64 {
        self.centered_log_mgf(lambda) + lambda * self.mean()
    }

    fn tilted_mean(&self, lambda: f64) -> f64 {
        self.mean() + self.tilted_mean_shift(lambda)
    }
}

/// Normal increments with mean `mu` and variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianIncrement {
    pub mu: f64,
    pub sigma2: f64,
    pub lambda0: f64,
}

impl IncrementLaw for GaussianIncrement {
    fn mean(&self) -> f64 {
        self.mu
    }
    fn variance(&self) -> f64 {
        self.sigma2
    }
    fn lambda0(&self) -> f64 {
        self.lambda0
    }
    fn centered_log_mgf(&self, lambda: f64) -> f64 {
        0.5 * self.sigma2 * lambda * lambda
    }
    fn tilted_mean_shift(&self, lambda: f64) -> f64 {
        self.sigma2 * lambda
    }
    fn tilted_variance(&self, _lambda: f64) -> f64 {
        self.sigma2
    }
    fn tilted_third_abs(&self, _lambda: f64) -> f64 {
        // E|N(0, s²)|³ = 2 √(2/π) s³
        2.0 * (2.0 / std::f64::consts::PI).sqrt() * self.sigma2.powf(1.5)
    }
    fn cumulants(&self, order: usize) -> CumulantSet {
        let mut gamma = vec![0.0; order.max(2)];
        gamma[0] = self.mu;
        gamma[1] = self.sigma2;
        CumulantSet::new(gamma)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl EnvironmentModel {
    pub fn new(atoms: Vec<Atom>, lambda0: f64) -> Result<Self> {
        if atoms.is_empty() {
            return Err(BpreError::InvalidModel("environment needs at least one atom".into()));
        }
        if let Some(a) = atoms.iter().find(|a| !(a.prob > 0.0 && a.prob.is_finite())) {
            return Err(BpreError::InvalidModel(format!(
                "atom probabilities must be positive, got {}",
                a.prob
            )));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(BpreError::InvalidModel(format!(
                "atom probabilities must sum to 1, got {total}"
            )));
        }
        if !lambda0.is_finite() {
            return Err(BpreError::InvalidModel(format!("lambda0 must be finite, got {lambda0}")));
        }
        Ok(Self::from_parts(atoms, lambda0))
    }

    /// Single-atom environment (a Galton-Watson process).
    pub fn single(law: OffspringLaw) -> Self {
        Self::from_parts(vec![Atom { law, prob: 1.0 }], DEFAULT_LAMBDA0)
    }

    /// The standard test model: shifted geometric laws with means `e` and
    /// `e²`, equiprobable. `X ∈ {1, 2}`.
    pub fn two_point_geometric() -> Self {
        let e = std::f64::consts::E;
        let atoms = vec![
            Atom {
                law: OffspringLaw::shifted_geometric_with_mean(e).expect("valid mean"),
                prob: 0.5,
            },
            Atom {
                law: OffspringLaw::shifted_geometric_with_mean(e * e).expect("valid mean"),
                prob: 0.5,
            },
        ];
        Self::from_parts(atoms, DEFAULT_LAMBDA0)
    }

    fn from_parts(atoms: Vec<Atom>, lambda0: f64) -> Self {
        let log_means: Vec<f64> = atoms.iter().map(|a| a.law.log_mean()).collect();
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.prob;
                acc
            })
            .collect();
        let mean: f64 = atoms.iter().zip(&log_means).map(|(a, x)| a.prob * x).sum();
        let variance: f64 = atoms
            .iter()
            .zip(&log_means)
            .map(|(a, x)| a.prob * (x - mean).powi(2))
            .sum();
        EnvironmentModel {
            atoms,
            lambda0,
            log_means,
            cumulative,
            mean,
            variance,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn log_means(&self) -> &[f64] {
        &self.log_means
    }

    pub fn with_lambda0(mut self, lambda0: f64) -> Self {
        self.lambda0 = lambda0;
        self
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Index of an atom drawn from the environment law.
    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|c| u < *c)
            .unwrap_or(self.atoms.len() - 1)
    }

    /// Log-weights of the tilted atoms, `log(q_j m_j^λ / L(λ))`.
    fn tilted_log_weights(&self, lambda: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .atoms
            .iter()
            .zip(&self.log_means)
            .map(|(a, x)| a.prob.ln() + lambda * (x - self.mean))
            .collect();
        let norm = log_sum_exp(raw.iter().copied());
        raw.into_iter().map(|v| v - norm).collect()
    }

    pub fn tilted_weights(&self, lambda: f64) -> Vec<f64> {
        self.tilted_log_weights(lambda).into_iter().map(f64::exp).collect()
    }

    /// Environment with atom probabilities `q_j m_j^λ / L(λ)`. The offspring
    /// laws are unchanged.
    pub fn tilt(&self, lambda: f64) -> EnvironmentModel {
        if lambda == 0.0 {
            return self.clone();
        }
        let atoms = self
            .atoms
            .iter()
            .zip(self.tilted_weights(lambda))
            .map(|(a, w)| Atom {
                law: a.law.clone(),
                prob: w,
            })
            .collect();
        Self::from_parts(atoms, self.lambda0)
    }

    /// `E p_1(ξ_0)`.
    pub fn expected_p1(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.law.p1()).sum()
    }

    /// `E m_0^λ`.
    pub fn mean_power(&self, lambda: f64) -> f64 {
        self.log_mgf(lambda).exp()
    }

    /// The harmonic-moment threshold `a_0` evaluated at `lambda0`.
    pub fn a0_bound(&self, lambda0: f64) -> Result<f64> {
        if !(lambda0 > 0.0) {
            return Err(BpreError::Precondition(format!("lambda0 must be positive, got {lambda0}")));
        }
        if self.atoms.iter().all(|a| a.law.p1() == 0.0) {
            return Ok(lambda0);
        }
        a0_from_moments(lambda0, self.log_mgf(lambda0), self.expected_p1())
    }

    /// Central moments `E (X - μ)^k` for `k = 0..=order` under tilt `lambda`.
    fn central_moments(&self, lambda: f64, order: usize) -> (f64, Vec<f64>) {
        let weights = self.tilted_weights(lambda);
        let center: f64 = weights.iter().zip(&self.log_means).map(|(w, x)| w * x).sum();
        let mut moments = vec![0.0; order + 1];
        for (w, x) in weights.iter().zip(&self.log_means) {
            let d = x - center;
            let mut power = 1.0;
            for m in moments.iter_mut() {
                *m += w * power;
                power *= d;
            }
        }
        (center, moments)
    }

    /// Stable identifier of the model, used to tag sample sets and outputs.
    pub fn fingerprint(&self) -> String {
        let spec = EnvironmentSpec::from(self);
        let json = serde_json::to_string(&spec).expect("environment serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate_assumptions(&self, p: f64, epsilon: f64) -> AssumptionReport {
        let mut conditions = Vec::new();
        let mut push = |kind: Condition, holds: bool, value: f64, detail: String| {
            conditions.push(ConditionCheck {
                kind,
                holds,
                value,
                detail,
            })
        };

        // A1: finite mixtures have X bounded, so every moment exists.
        let third: f64 = self
            .atoms
            .iter()
            .zip(&self.log_means)
            .map(|(a, x)| a.prob * x.abs().powf(3.0 + epsilon.max(0.0)))
            .sum();
        push(
            Condition::A1,
            epsilon > 0.0 && third.is_finite(),
            epsilon,
            if epsilon > 0.0 {
                format!("E X^(3+ε) = {third:.6e} with ε = {epsilon}")
            } else {
                format!("A1 fails: ε must be positive, got {epsilon}")
            },
        );

        let law_moments: Vec<f64> = self.atoms.iter().map(|a| a.law.moment(p)).collect();
        let a2: f64 = self
            .atoms
            .iter()
            .zip(&law_moments)
            .map(|(a, m)| a.prob * m / a.law.mean().powf(p))
            .sum();
        let a4: f64 = self
            .atoms
            .iter()
            .zip(&law_moments)
            .map(|(a, m)| a.prob * m / a.law.mean())
            .sum();
        let p_ok = p > 1.0;
        push(
            Condition::A2,
            p_ok && a2.is_finite(),
            p,
            if !p_ok {
                format!("A2 fails: p must exceed 1, got {p}")
            } else if a2.is_finite() {
                format!("E (Z_1/m_0)^p = {a2:.6e} with p = {p}")
            } else {
                "A2 fails: E (Z_1/m_0)^p diverges".into()
            },
        );

        let a3 = self.mean_power(self.lambda0);
        push(
            Condition::A3,
            self.lambda0 > 0.0 && a3.is_finite(),
            self.lambda0,
            if self.lambda0 > 0.0 {
                format!("E m_0^λ0 = {a3:.6e} with λ0 = {}", self.lambda0)
            } else {
                format!("A3 fails: λ0 must be positive, got {}", self.lambda0)
            },
        );

        push(
            Condition::A4,
            p_ok && a4.is_finite(),
            p,
            if !p_ok {
                format!("A4 fails: p must exceed 1, got {p}")
            } else if a4.is_finite() {
                format!("E Z_1^p/m_0 = {a4:.6e} with p = {p}")
            } else {
                "A4 fails: E Z_1^p/m_0 diverges".into()
            },
        );

        // Laws cannot carry mass at zero, so this holds by construction.
        let p0_max = self
            .atoms
            .iter()
            .map(|a| a.law.pgf(0.0).unwrap_or(0.0))
            .fold(0.0, f64::max);
        push(
            Condition::P0,
            p0_max == 0.0,
            p0_max,
            "each individual has at least one child".into(),
        );

        push(
            Condition::Supercritical,
            self.mean > 0.0,
            self.mean,
            if self.mean > 0.0 {
                format!("μ = {}", self.mean)
            } else {
                format!("supercriticality fails: μ = {} must be positive", self.mean)
            },
        );

        push(
            Condition::NonDegenerate,
            self.variance > 0.0,
            self.variance,
            if self.variance > 0.0 {
                format!("σ² = {}", self.variance)
            } else {
                "non-degenerate σ² required".into()
            },
        );

        let ep1 = self.expected_p1();
        push(
            Condition::ExpectedP1,
            ep1 < 1.0,
            ep1,
            if ep1 < 1.0 {
                format!("E p_1 = {ep1}")
            } else {
                format!("E p_1 < 1 fails: E p_1 = {ep1}")
            },
        );

        AssumptionReport { conditions }
    }
}

/// `λ0 / (1 - log E m^λ0 / log E p_1)` from its ingredients.
pub fn a0_from_moments(lambda0: f64, log_mean_power: f64, expected_p1: f64) -> Result<f64> {
    if expected_p1 >= 1.0 {
        return Err(BpreError::Precondition(format!(
            "a0 is undefined when E p_1 = {expected_p1}; E p_1 < 1 is required"
        )));
    }
    if expected_p1 <= 0.0 {
        return Ok(lambda0);
    }
    Ok(lambda0 / (1.0 - log_mean_power / expected_p1.ln()))
}

impl IncrementLaw for EnvironmentModel {
    fn mean(&self) -> f64 {
        self.mean
    }

    fn variance(&self) -> f64 {
        self.variance
    }

    fn lambda0(&self) -> f64 {
        self.lambda0
    }

    fn centered_log_mgf(&self, lambda: f64) -> f64 {
        log_sum_exp(
            self.atoms
                .iter()
                .zip(&self.log_means)
                .map(|(a, x)| a.prob.ln() + lambda * (x - self.mean)),
        )
    }

    fn tilted_mean_shift(&self, lambda: f64) -> f64 {
        self.tilted_weights(lambda)
            .iter()
            .zip(&self.log_means)
            .map(|(w, x)| w * (x - self.mean))
            .sum()
    }

    fn tilted_variance(&self, lambda: f64) -> f64 {
        self.central_moments(lambda, 2).1[2]
    }

    fn tilted_third_abs(&self, lambda: f64) -> f64 {
        let weights = self.tilted_weights(lambda);
        let center = self.tilted_mean(lambda);
        weights
            .iter()
            .zip(&self.log_means)
            .map(|(w, x)| w * (x - center).abs().powi(3))
            .sum()
    }

    /// Moment-to-cumulant recursion on central moments, so `γ_k` for `k >= 2`
    /// does not suffer from the size of the mean.
    fn cumulants(&self, order: usize) -> CumulantSet {
        let order = order.max(2);
        let (_, central) = self.central_moments(0.0, order);
        let mut gamma = vec![0.0; order + 1];
        for n in 2..=order {
            let mut value = central[n];
            let mut binom = 1.0; // C(n-1, k-1) starting at k = 1
            for k in 1..n {
                value -= binom * gamma[k] * central[n - k];
                binom = binom * (n - k) as f64 / k as f64;
            }
            gamma[n] = value;
        }
        gamma[1] = self.mean;
        gamma.remove(0);
        CumulantSet::new(gamma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    A1,
    A2,
    A3,
    A4,
    P0,
    Supercritical,
    NonDegenerate,
    ExpectedP1,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Condition::A1 => "A1",
            Condition::A2 => "A2",
            Condition::A3 => "A3",
            Condition::A4 => "A4",
            Condition::P0 => "p0",
            Condition::Supercritical => "supercritical",
            Condition::NonDegenerate => "non_degenerate",
            Condition::ExpectedP1 => "E_p1_below_1",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCheck {
    pub kind: Condition,
    pub holds: bool,
    /// Diagnostic value: the parameter used or the quantity checked.
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub conditions: Vec<ConditionCheck>,
}

impl AssumptionReport {
    pub fn admissible(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn get(&self, kind: Condition) -> &ConditionCheck {
        self.conditions
            .iter()
            .find(|c| c.kind == kind)
            .expect("report covers every condition")
    }

    pub fn failures(&self) -> Vec<String> {
        self.conditions
            .iter()
            .filter(|c| !c.holds)
            .map(|c| c.detail.clone())
            .collect()
    }

    /// `Ok` for admissible models, otherwise a validation error naming every
    /// failing condition.
    pub fn into_result(self) -> Result<()> {
        let failures = self.failures();
        if failures.is_empty() {
            Ok(())
        } else {
            Err(BpreError::Validation(failures))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub law: LawSpec,
    pub prob: f64,
}

/// Config-file form of an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub atoms: Vec<AtomSpec>,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
}

fn default_lambda0() -> f64 {
    DEFAULT_LAMBDA0
}

impl TryFrom<&EnvironmentSpec> for EnvironmentModel {
    type Error = BpreError;

    fn try_from(spec: &EnvironmentSpec) -> Result<Self> {
        let atoms = spec
            .atoms
            .iter()
            .map(|a| {
                Ok(Atom {
                    law: OffspringLaw::try_from(&a.law)?,
                    prob: a.prob,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EnvironmentModel::new(atoms, spec.lambda0)
    }
}

impl From<&EnvironmentModel> for EnvironmentSpec {
    fn from(model: &EnvironmentModel) -> Self {
        EnvironmentSpec {
            atoms: model
                .atoms
                .iter()
                .map(|a| AtomSpec {
                    law: LawSpec::from(&a.law),
                    prob: a.prob,
                })
                .collect(),
            lambda0: model.lambda0,
        }
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::E;

    use proptest::prelude::*;

    use super::*;

    fn symmetric(mu: f64, c: f64) -> EnvironmentModel {
        let atoms = [mu - c, mu + c]
            .iter()
            .map(|x| Atom {
                law: OffspringLaw::shifted_geometric_with_mean(x.exp()).unwrap(),
                prob: 0.5,
            })
            .collect();
        EnvironmentModel::new(atoms, 1.0).unwrap()
    }

    fn skewed() -> EnvironmentModel {
        let atoms = vec![
            Atom {
                law: OffspringLaw::finite(vec![0.2, 0.8]).unwrap(),
                prob: 0.3,
            },
            Atom {
                law: OffspringLaw::shifted_poisson(2.0).unwrap(),
                prob: 0.5,
            },
            Atom {
                law: OffspringLaw::shifted_geometric(0.1).unwrap(),
                prob: 0.2,
            },
        ];
        EnvironmentModel::new(atoms, 1.0).unwrap()
    }

    #[test]
    fn log_mgf_examples() {
        let model = EnvironmentModel::two_point_geometric();
        assert_eq!(model.log_mgf(0.0), 0.0);
        let expected = ((E + E * E) / 2.0).ln();
        assert!((model.log_mgf(1.0) - expected).abs() < 1e-14);
        let single = EnvironmentModel::single(OffspringLaw::shifted_geometric_with_mean(E.powf(0.7)).unwrap());
        for l in [-1.0, 0.3, 2.0] {
            assert!((single.log_mgf(l) - 0.7 * l).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_cumulants() {
        let (mu, c) = (1.5, 0.5);
        let model = symmetric(mu, c);
        let k = model.cumulants(6);
        assert!((k.get(1) - mu).abs() < 1e-14);
        assert!((k.get(2) - c * c).abs() < 1e-14);
        assert!(k.get(3).abs() < 1e-15);
        assert!((k.get(4) + 2.0 * c.powi(4)).abs() < 1e-14);
        assert!(k.get(5).abs() < 1e-15);
        // log cosh(λc) = c²λ²/2 - c⁴λ⁴/12 + c⁶λ⁶/45 - ..., so γ_6 = 16 c⁶
        assert!((k.get(6) - 16.0 * c.powi(6)).abs() < 1e-13);
    }

    #[test]
    fn fourth_cumulant_against_finite_differences() {
        let model = symmetric(1.5, 0.5);
        // Centered 4th difference of ψ at 0 with Richardson extrapolation.
        let d4 = |h: f64| {
            let psi = |l: f64| model.log_mgf(l);
            (psi(2.0 * h) - 4.0 * psi(h) + 6.0 * psi(0.0) - 4.0 * psi(-h) + psi(-2.0 * h)) / h.powi(4)
        };
        let h = 1e-2;
        let extrapolated = (4.0 * d4(h / 2.0) - d4(h)) / 3.0;
        assert!((extrapolated - model.cumulants(6).get(4)).abs() < 1e-5, "{extrapolated}");
    }

    #[test]
    fn single_atom_has_no_spread() {
        let model = EnvironmentModel::single(OffspringLaw::shifted_poisson(1.0).unwrap());
        let k = model.cumulants(6);
        assert!((k.get(1) - 2f64.ln()).abs() < 1e-15);
        for order in 2..=6 {
            assert_eq!(k.get(order), 0.0);
        }
    }

    #[test]
    fn cumulants_match_model_moments() {
        let model = skewed();
        let k = model.cumulants(6);
        assert!((k.get(1) - model.mean()).abs() < 1e-10);
        assert!((k.get(2) - model.variance()).abs() < 1e-10);
    }

    #[test]
    fn tilt_examples() {
        let model = EnvironmentModel::two_point_geometric();
        assert_eq!(model.tilt(0.0), model);
        let w = model.tilt(1.0);
        let probs: Vec<f64> = w.atoms().iter().map(|a| a.prob).collect();
        let oracle = [E / 2.0, E * E / 2.0];
        let total = oracle[0] + oracle[1];
        assert!((probs[0] - oracle[0] / total).abs() < 1e-14);
        assert!((probs[1] - oracle[1] / total).abs() < 1e-14);
        assert!((probs[0] - 1.0 / (1.0 + E)).abs() < 1e-14);
        for l in [-1.0, 0.5, model.lambda0()] {
            let s: f64 = model.tilt(l).atoms().iter().map(|a| a.prob).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn a0_examples() {
        let no_p1 = EnvironmentModel::new(
            vec![
                Atom {
                    law: OffspringLaw::finite(vec![0.0, 1.0]).unwrap(),
                    prob: 0.5,
                },
                Atom {
                    law: OffspringLaw::finite(vec![0.0, 0.0, 1.0]).unwrap(),
                    prob: 0.5,
                },
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(no_p1.a0_bound(1.0).unwrap(), 1.0);
        assert!((a0_from_moments(1.0, 2f64.ln(), 0.5).unwrap() - 0.5).abs() < 1e-15);
        let base = a0_from_moments(1.0, 2f64.ln(), 0.5).unwrap();
        assert!((a0_from_moments(2.0, 2f64.ln(), 0.5).unwrap() - 2.0 * base).abs() < 1e-15);
        assert!(a0_from_moments(1.0, 2f64.ln(), 1.0).is_err());
        let degenerate = EnvironmentModel::single(OffspringLaw::finite(vec![1.0]).unwrap());
        assert!(degenerate.a0_bound(1.0).is_err());
    }

    #[test]
    fn two_point_model_is_admissible() {
        let report = EnvironmentModel::two_point_geometric().validate_assumptions(1.5, 1.0);
        assert!(report.admissible(), "{:?}", report.failures());
    }

    #[test]
    fn rejecting_configurations() {
        let single = EnvironmentModel::single(OffspringLaw::shifted_geometric(0.5).unwrap());
        let report = single.validate_assumptions(1.5, 1.0);
        assert!(!report.get(Condition::NonDegenerate).holds);
        assert_eq!(report.failures(), vec!["non-degenerate σ² required".to_string()]);

        let stuck = EnvironmentModel::single(OffspringLaw::finite(vec![1.0]).unwrap());
        let report = stuck.validate_assumptions(1.5, 1.0);
        assert!(!report.get(Condition::ExpectedP1).holds);
        assert!(!report.get(Condition::Supercritical).holds);

        let model = EnvironmentModel::two_point_geometric();
        let report = model.validate_assumptions(1.0, 1.0);
        assert!(!report.get(Condition::A2).holds && !report.get(Condition::A4).holds);
        assert!(!model.validate_assumptions(1.5, 0.0).get(Condition::A1).holds);
        assert!(!model.clone().with_lambda0(0.0).validate_assumptions(1.5, 1.0).get(Condition::A3).holds);
    }

    #[test]
    fn spec_round_trip() {
        let json = r#"{"atoms":[{"law":{"family":"shifted_geometric","p":0.5},"prob":0.5},
                       {"law":{"family":"finite","pmf":{"1":0.3,"2":0.7}},"prob":0.5}]}"#;
        let spec: EnvironmentSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.lambda0, 1.0);
        let model = EnvironmentModel::try_from(&spec).unwrap();
        let again = EnvironmentModel::try_from(&EnvironmentSpec::from(&model)).unwrap();
        assert_eq!(model, again);
        assert_eq!(model.fingerprint(), again.fingerprint());
        assert_ne!(model.fingerprint(), EnvironmentModel::two_point_geometric().fingerprint());
    }

    #[test]
    fn gaussian_surrogate() {
        let g = GaussianIncrement {
            mu: 1.0,
            sigma2: 0.25,
            lambda0: 1.0,
        };
        assert_eq!(g.log_mgf(2.0), 2.0 + 0.5);
        assert_eq!(g.tilted_mean(0.4), 1.1);
        assert_eq!(g.cumulants(6).get(5), 0.0);
    }

    #[test]
    fn log_mgf_is_convex() {
        for model in [EnvironmentModel::two_point_geometric(), skewed()] {
            let l0 = model.lambda0();
            let grid: Vec<f64> = (0..21).map(|i| -1.0 + (l0 + 1.0) * i as f64 / 20.0).collect();
            for w in grid.windows(3) {
                let d2 = model.log_mgf(w[0]) - 2.0 * model.log_mgf(w[1]) + model.log_mgf(w[2]);
                assert!(d2 >= -1e-9);
            }
            let h = 1e-5;
            let d1 = (model.log_mgf(h) - model.log_mgf(-h)) / (2.0 * h);
            assert!((d1 - model.cumulants(3).get(1)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn tilting_composes(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let model = skewed();
            let twice = model.tilt(a).tilt(b);
            let once = model.tilt(a + b);
            for (x, y) in twice.atoms().iter().zip(once.atoms()) {
                prop_assert!((x.prob - y.prob).abs() < 1e-12);
            }
        }

        #[test]
        fn tilted_mean_is_first_cumulant(l in -1.0f64..1.0) {
            let model = skewed();
            let direct = model.tilt(l).cumulants(3).get(1);
            prop_assert!((direct - model.tilted_mean(l)).abs() < 1e-10);
        }
    }
}
