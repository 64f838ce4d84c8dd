use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cramer::CramerOptions;
use crate::environment::{EnvironmentModel, EnvironmentSpec, IncrementLaw, DEFAULT_EPSILON};
use crate::error::{BpreError, Result};
use crate::parallel::default_workers;
use crate::simulator::{SimConfig, DEFAULT_EXACT_THRESHOLD, DEFAULT_FLUCTUATION_CUTOFF};
use crate::wlimit::log_grid;

pub const DEFAULT_P: f64 = 1.5;
pub const DEFAULT_BOOTSTRAP: usize = 200;
pub const DEFAULT_STEIN_N: usize = 100;
pub const DEFAULT_WTAIL_N: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    BeScan,
    CramerScan,
    SteinCheck,
    #[serde(rename = "wtail")]
    WTail,
    Validate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Simulate,
        ExperimentKind::BeScan,
        ExperimentKind::CramerScan,
        ExperimentKind::SteinCheck,
        ExperimentKind::WTail,
        ExperimentKind::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::BeScan => "be-scan",
            ExperimentKind::CramerScan => "cramer-scan",
            ExperimentKind::SteinCheck => "stein-check",
            ExperimentKind::WTail => "wtail",
            ExperimentKind::Validate => "validate",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: EnvironmentSpec,
    kind: Option<ExperimentKind>,
    seed: Option<u64>,
    replications: Option<usize>,
    workers: Option<usize>,
    n: Option<usize>,
    n_grid: Option<Vec<usize>>,
    x_grid: Option<Vec<f64>>,
    t_grid: Option<Vec<f64>>,
    p: Option<f64>,
    epsilon: Option<f64>,
    exact_threshold: Option<u64>,
    fluctuation_cutoff: Option<f64>,
    bootstrap: Option<usize>,
}

/// Values supplied outside the config document, typically from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfigOverrides {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// A validated experiment with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: EnvironmentModel,
    pub seed: u64,
    pub replications: usize,
    pub workers: usize,
    /// Zero for kinds that scan `n_grid` instead.
    pub n: usize,
    pub n_grid: Vec<usize>,
    pub x_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub p: f64,
    pub epsilon: f64,
    pub sim: SimConfig,
    pub bootstrap: usize,
}

/// Everything that determines the output; `workers` is deliberately absent.
#[derive(Serialize)]
struct Canonical<'a> {
    kind: ExperimentKind,
    model: EnvironmentSpec,
    seed: u64,
    replications: usize,
    n: usize,
    n_grid: &'a [usize],
    x_grid: &'a [f64],
    t_grid: &'a [f64],
    p: f64,
    epsilon: f64,
    exact_threshold: u64,
    fluctuation_cutoff: f64,
    bootstrap: usize,
    version: &'static str,
}

impl ExperimentConfig {
    pub fn config_hash(&self) -> String {
        let canonical = Canonical {
            kind: self.kind,
            model: EnvironmentSpec::from(&self.model),
            seed: self.seed,
            replications: self.replications,
            n: self.n,
            n_grid: &self.n_grid,
            x_grid: &self.x_grid,
            t_grid: &self.t_grid,
            p: self.p,
            epsilon: self.epsilon,
            exact_threshold: self.sim.exact_threshold,
            fluctuation_cutoff: self.sim.fluctuation_cutoff,
            bootstrap: self.bootstrap,
            version: env!("CARGO_PKG_VERSION"),
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// The metadata line: hash, seed, version and the resolved scalar settings.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let mut meta = vec![
            ("config_hash".to_owned(), self.config_hash()),
            ("seed".to_owned(), self.seed.to_string()),
            ("version".to_owned(), env!("CARGO_PKG_VERSION").to_owned()),
            ("kind".to_owned(), self.kind.to_string()),
            ("model".to_owned(), self.model.fingerprint()),
            ("replications".to_owned(), self.replications.to_string()),
        ];
        if self.n > 0 {
            meta.push(("n".into(), self.n.to_string()));
        }
        meta.extend([
            ("p".to_owned(), format!("{:?}", self.p)),
            ("epsilon".to_owned(), format!("{:?}", self.epsilon)),
            ("exact_threshold".to_owned(), self.sim.exact_threshold.to_string()),
            ("fluctuation_cutoff".to_owned(), format!("{:?}", self.sim.fluctuation_cutoff)),
            ("bootstrap".to_owned(), self.bootstrap.to_string()),
        ]);
        meta
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, &ConfigOverrides::default())
}

pub fn parse_config_with(text: &str, overrides: &ConfigOverrides) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| BpreError::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let kind = match (raw.kind, overrides.kind) {
        (Some(a), Some(b)) if a != b => {
            return Err(BpreError::Config(format!("config is for {a} but {b} was requested")))
        }
        (_, Some(k)) | (Some(k), None) => k,
        (None, None) => return Err(BpreError::Config("experiment kind is missing".into())),
    };
    let seed = overrides
        .seed
        .or(raw.seed)
        .ok_or_else(|| BpreError::Config("seed is mandatory".into()))?;
    let replications = raw
        .replications
        .ok_or_else(|| BpreError::Config("replications is mandatory".into()))?;
    if replications == 0 {
        return Err(BpreError::Config("replications must be at least 1".into()));
    }
    let workers = overrides.workers.or(raw.workers).unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(BpreError::Config("workers must be at least 1".into()));
    }

    let model = EnvironmentModel::try_from(&raw.model)?;
    let p = raw.p.unwrap_or(DEFAULT_P);
    let epsilon = raw.epsilon.unwrap_or(DEFAULT_EPSILON);
    model.validate_assumptions(p, epsilon).into_result()?;

    let sim = SimConfig {
        exact_threshold: raw.exact_threshold.unwrap_or(DEFAULT_EXACT_THRESHOLD),
        fluctuation_cutoff: raw.fluctuation_cutoff.unwrap_or(DEFAULT_FLUCTUATION_CUTOFF),
    };
    if sim.exact_threshold == 0 || !(sim.fluctuation_cutoff > 0.0) {
        return Err(BpreError::Config("simulation thresholds must be positive".into()));
    }

    let require_n = |default: Option<usize>| -> Result<usize> {
        match raw.n.or(default) {
            Some(0) => Err(BpreError::Config("n must be at least 1".into())),
            Some(n) => Ok(n),
            None => Err(BpreError::Config(format!("{kind} needs n"))),
        }
    };
    let (n, n_grid) = match kind {
        ExperimentKind::BeScan => {
            let grid = raw
                .n_grid
                .clone()
                .ok_or_else(|| BpreError::Config("be-scan needs n_grid".into()))?;
            let mut distinct = grid.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 || distinct[0] == 0 {
                return Err(BpreError::Config("n_grid needs at least 3 distinct positive values".into()));
            }
            (0, grid)
        }
        ExperimentKind::Validate => (raw.n.unwrap_or(0), Vec::new()),
        ExperimentKind::SteinCheck => (require_n(Some(DEFAULT_STEIN_N))?, Vec::new()),
        ExperimentKind::WTail => (require_n(Some(DEFAULT_WTAIL_N))?, Vec::new()),
        _ => (require_n(None)?, Vec::new()),
    };

    let x_grid = match kind {
        ExperimentKind::CramerScan => {
            let grid = raw
                .x_grid
                .clone()
                .ok_or_else(|| BpreError::Config("cramer-scan needs x_grid".into()))?;
            check_cramer_grid(&model, &grid, n)?;
            grid
        }
        ExperimentKind::SteinCheck => raw
            .x_grid
            .clone()
            .unwrap_or_else(|| (0..161).map(|i| -8.0 + 0.1 * i as f64).collect()),
        _ => Vec::new(),
    };
    if x_grid.iter().any(|x| !x.is_finite()) {
        return Err(BpreError::Config("x_grid values must be finite".into()));
    }

    let t_grid = match kind {
        ExperimentKind::WTail => raw.t_grid.clone().unwrap_or_else(|| log_grid(1e-2, 1e6, 4)),
        _ => Vec::new(),
    };
    if t_grid.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(BpreError::Config("t_grid values must be finite and nonnegative".into()));
    }

    Ok(ExperimentConfig {
        kind,
        model,
        seed,
        replications,
        workers,
        n,
        n_grid,
        x_grid,
        t_grid,
        p,
        epsilon,
        sim,
        bootstrap: raw.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP),
    })
}

fn check_cramer_grid(model: &EnvironmentModel, grid: &[f64], n: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(BpreError::Config("x_grid is empty".into()));
    }
    let guard = CramerOptions::default().regime_guard;
    let limit = guard * (n as f64).sqrt() * model.lambda0() * model.variance().sqrt();
    for &x in grid {
        if !(x >= 0.0 && x <= limit) {
            return Err(BpreError::Config(format!(
                "x = {x} is outside the Cramér regime [0, {limit}] for n = {n}"
            )));
        }
    }
    Ok(())
}
