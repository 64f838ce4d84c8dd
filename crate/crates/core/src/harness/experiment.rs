use crate::cramer::{tail_ratio_prediction, CramerOptions};
use crate::environment::IncrementLaw;
use crate::error::Result;
use crate::rng::{derive_seed, StreamDomain};
use crate::simulator::{run_monte_carlo, tilted_estimate};
use crate::special::{normal_cdf, normal_sf};
use crate::stein::{berry_esseen_fit, branch_gap, empirical_stein_expectation, stein_solution, BerryEsseenOptions};
use crate::wlimit::{
    harmonic_moment_from_log_w, laplace_from_log_w, tail_exponent_fit, HarmonicMethod, LaplaceEstimator,
};

use super::config::{ExperimentConfig, ExperimentKind};
use super::table::{Cell, ResultTable};

pub const BE_CI_LEVEL: f64 = 0.95;
/// Window of `t` used for the power-law tail fit when the grid covers it.
pub const TAIL_WINDOW: (f64, f64) = (1e2, 1e6);
const STEIN_W_POINTS: usize = 161;
const STEIN_W_RANGE: f64 = 8.0;

pub fn columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::Simulate => &["replication", "log_z", "s", "log_w", "standardized", "mode_switch"],
        ExperimentKind::BeScan => &["row", "n", "replications", "distance", "slope", "intercept", "ci_low", "ci_high"],
        ExperimentKind::CramerScan => &[
            "x",
            "lambda",
            "predicted_ratio",
            "normal_zone",
            "direct_prob",
            "direct_se",
            "tilted_prob",
            "tilted_se",
            "direct_ratio",
            "tilted_ratio",
        ],
        ExperimentKind::SteinCheck => &[
            "x",
            "max_abs_f",
            "max_abs_f_prime",
            "max_fd_residual",
            "branch_gap",
            "identity_gap",
        ],
        ExperimentKind::WTail => &[
            "row",
            "t",
            "phi",
            "se",
            "a",
            "estimate",
            "method",
            "warn",
            "exponent",
            "rms_residual",
            "super_polynomial",
        ],
        ExperimentKind::Validate => &["condition", "holds", "value", "detail"],
    }
}

/// Runs the configured experiment. The table depends on `(config, seed)` only,
/// never on `workers`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    let mut table = ResultTable::new(columns(config.kind));
    table.metadata = config.metadata();
    let result = match config.kind {
        ExperimentKind::Simulate => simulate(config, &mut table),
        ExperimentKind::BeScan => be_scan(config, &mut table),
        ExperimentKind::CramerScan => cramer_scan(config, &mut table),
        ExperimentKind::SteinCheck => stein_check(config, &mut table),
        ExperimentKind::WTail => wtail(config, &mut table),
        ExperimentKind::Validate => validate(config, &mut table),
    };
    result.map_err(|e| e.context(format!("{} experiment", config.kind)))?;
    Ok(table)
}

fn simulate(cfg: &ExperimentConfig, table: &mut ResultTable) -> Result<()> {
    let model = &cfg.model;
    let set = run_monte_carlo(model, cfg.n, cfg.replications, cfg.seed, cfg.workers, &cfg.sim)?;
    let (mu, sigma) = (model.mean(), model.variance().sqrt());
    for (i, s) in set.samples.iter().enumerate() {
        table.push(vec![
            i.into(),
            s.log_z.into(),
            s.s.into(),
            s.log_w.into(),
            s.standardized(cfg.n, mu, sigma).into(),
            s.mode_switch_generation.into(),
        ]);
    }
    Ok(())
}

fn be_scan(cfg: &ExperimentConfig, table: &mut ResultTable) -> Result<()> {
    let opts = BerryEsseenOptions {
        replications: cfg.replications,
        seed: cfg.seed,
        workers: cfg.workers,
        bootstrap: cfg.bootstrap,
        ci_level: BE_CI_LEVEL,
        sim: cfg.sim,
    };
    let fit = berry_esseen_fit(&cfg.model, &cfg.n_grid, &opts)?;
    for p in &fit.points {
        table.push(vec![
            "point".into(),
            p.n.into(),
            p.replications.into(),
            p.distance.into(),
            Cell::Missing,
            Cell::Missing,
            Cell::Missing,
            Cell::Missing,
        ]);
    }
    table.push(vec![
        "fit".into(),
        Cell::Missing,
        cfg.replications.into(),
        Cell::Missing,
        fit.slope.into(),
        fit.intercept.into(),
        fit.slope_ci.0.into(),
        fit.slope_ci.1.into(),
    ]);
    Ok(())
}

fn cramer_scan(cfg: &ExperimentConfig, table: &mut ResultTable) -> Result<()> {
    let model = &cfg.model;
    let n = cfg.n;
    let opts = CramerOptions::default();
    let (mu, sigma) = (model.mean(), model.variance().sqrt());
    for (k, &x) in cfg.x_grid.iter().enumerate() {
        let at_x = |e: crate::error::BpreError| e.context(format!("x = {x}"));
        let pred = tail_ratio_prediction(model, x, n, &opts).map_err(at_x)?;
        let threshold = n as f64 * mu + x * sigma * (n as f64).sqrt();
        // the two estimators use unrelated streams so their errors are independent
        let direct_seed = derive_seed(cfg.seed, StreamDomain::Auxiliary(2), k as u64);
        let tilted_seed = derive_seed(cfg.seed, StreamDomain::Auxiliary(3), k as u64);
        let direct = tilted_estimate(model, 0.0, n, cfg.replications, threshold, direct_seed, cfg.workers, &cfg.sim)
            .map_err(at_x)?;
        let tilted = tilted_estimate(
            model,
            pred.lambda,
            n,
            cfg.replications,
            threshold,
            tilted_seed,
            cfg.workers,
            &cfg.sim,
        )
        .map_err(at_x)?;
        let tail = normal_sf(x);
        table.push(vec![
            x.into(),
            pred.lambda.into(),
            pred.ratio_upper.into(),
            pred.normal_zone.into(),
            direct.mean.into(),
            direct.std_error.into(),
            tilted.mean.into(),
            tilted.std_error.into(),
            (direct.mean / tail).into(),
            (tilted.mean / tail).into(),
        ]);
    }
    Ok(())
}

fn stein_check(cfg: &ExperimentConfig, table: &mut ResultTable) -> Result<()> {
    let model = &cfg.model;
    let set = run_monte_carlo(model, cfg.n, cfg.replications, cfg.seed, cfg.workers, &cfg.sim)?;
    let samples = set.standardized(model.mean(), model.variance().sqrt());
    let step = 2.0 * STEIN_W_RANGE / (STEIN_W_POINTS - 1) as f64;
    for &x in &cfg.x_grid {
        let (mut max_f, mut max_fp, mut max_res) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..STEIN_W_POINTS {
            let w = -STEIN_W_RANGE + step * j as f64;
            let e = stein_solution(x, w);
            max_f = max_f.max(e.f.abs());
            max_fp = max_fp.max(e.f_prime.abs());
            max_res = max_res.max(e.residual);
        }
        let empirical_cdf = samples.iter().filter(|&&s| s <= x).count() as f64 / samples.len() as f64;
        let identity = empirical_stein_expectation(&samples, x)?;
        table.push(vec![
            x.into(),
            max_f.into(),
            max_fp.into(),
            max_res.into(),
            branch_gap(x).into(),
            (identity - (empirical_cdf - normal_cdf(x))).abs().into(),
        ]);
    }
    Ok(())
}

fn wtail(cfg: &ExperimentConfig, table: &mut ResultTable) -> Result<()> {
    let model = &cfg.model;
    let set = run_monte_carlo(model, cfg.n, cfg.replications, cfg.seed, cfg.workers, &cfg.sim)?;
    let log_w: Vec<f64> = set.samples.iter().map(|s| s.log_w).collect();
    let estimator = LaplaceEstimator::MonteCarlo {
        n: cfg.n,
        replications: cfg.replications,
    };
    let curve = laplace_from_log_w(&log_w, &cfg.t_grid, estimator)?;
    let pad = |row: &mut Vec<Cell>| row.resize(columns(ExperimentKind::WTail).len(), Cell::Missing);
    for i in 0..curve.t.len() {
        let mut row = vec!["laplace".into(), curve.t[i].into(), curve.phi[i].into(), curve.se[i].into()];
        pad(&mut row);
        table.push(row);
    }

    let in_window = curve.t.iter().filter(|t| **t >= TAIL_WINDOW.0 && **t <= TAIL_WINDOW.1).count();
    let (lo, hi) = if in_window >= 3 {
        TAIL_WINDOW
    } else {
        (0.0, f64::INFINITY)
    };
    let fit = tail_exponent_fit(&curve, lo, hi)?;
    let mut row: Vec<Cell> = vec!["tail_fit".into()];
    pad(&mut row);
    row[8] = fit.exponent.into();
    row[9] = fit.rms_residual.into();
    row[10] = fit.super_polynomial.into();
    table.push(row);

    let a0 = model.a0_bound(model.lambda0())?;
    for a in [a0 / 4.0, a0 / 2.0] {
        for method in [HarmonicMethod::Direct, HarmonicMethod::GammaIntegral] {
            let h = harmonic_moment_from_log_w(&log_w, a, method, a0)?;
            table.push(vec![
                "harmonic".into(),
                Cell::Missing,
                Cell::Missing,
                h.se.into(),
                h.a.into(),
                h.estimate.into(),
                method.to_string().into(),
                h.warn.into(),
                Cell::Missing,
                Cell::Missing,
                Cell::Missing,
            ]);
        }
    }
    Ok(())
}

fn validate(cfg: &ExperimentConfig, table: &mut ResultTable) -> Result<()> {
    let report = cfg.model.validate_assumptions(cfg.p, cfg.epsilon);
    for c in &report.conditions {
        table.push(vec![c.kind.to_string().into(), c.holds.into(), c.value.into(), c.detail.clone().into()]);
    }
    let model = &cfg.model;
    let a0 = model.a0_bound(model.lambda0())?;
    table.push(vec![
        "a0".into(),
        1usize.into(),
        a0.into(),
        "harmonic moments of W are finite below a0".into(),
    ]);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{parse_config, parse_config_with, ConfigOverrides};

    const TWO_POINT: &str = r#"{"atoms": [
        {"law": {"family": "shifted_geometric", "mean": 2.718281828459045}, "prob": 0.5},
        {"law": {"family": "shifted_geometric", "mean": 7.38905609893065}, "prob": 0.5}]}"#;

    fn run(kind: &str, extra: &str, workers: usize) -> ResultTable {
        let text = format!(r#"{{"kind": "{kind}", "seed": 11, "replications": 400, "model": {TWO_POINT}{extra}}}"#);
        let cfg = parse_config_with(
            &text,
            &ConfigOverrides {
                workers: Some(workers),
                ..Default::default()
            },
        )
        .unwrap();
        run_experiment(&cfg).unwrap()
    }

    fn real(cell: &Cell) -> f64 {
        match cell {
            Cell::Real(v) => *v,
            other => panic!("expected a real, got {other:?}"),
        }
    }

    #[test]
    fn cramer_scan_at_zero_predicts_one() {
        let t = run("cramer-scan", r#", "n": 100, "x_grid": [0.0, 1.0]"#, 2);
        assert_eq!(real(&t.rows()[0][2]), 1.0);
        assert_eq!(real(&t.rows()[0][1]), 0.0);
        assert_eq!(t.rows().len(), 2);
    }

    #[test]
    fn be_scan_has_points_and_fit() {
        let t = run("be-scan", r#", "n_grid": [16, 64, 256], "bootstrap": 20"#, 2);
        assert_eq!(t.rows().len(), 4);
        assert_eq!(t.rows()[3][0], Cell::Text("fit".into()));
    }

    #[test]
    fn stein_check_respects_bounds() {
        let t = run("stein-check", r#", "n": 20, "x_grid": [-2.0, 0.0, 1.5]"#, 1);
        for row in t.rows() {
            assert!(real(&row[1]) <= 1.0 && real(&row[2]) <= 1.0);
            assert!(real(&row[3]) <= 1e-8 && real(&row[4]) <= 1e-10 && real(&row[5]) <= 1e-12);
        }
    }

    #[test]
    fn wtail_and_validate_tables() {
        let t = run("wtail", r#", "n": 30, "t_grid": [0.0, 1.0, 10.0, 100.0, 1000.0]"#, 2);
        assert_eq!(real(&t.rows()[0][2]), 1.0);
        assert_eq!(t.rows().iter().filter(|r| r[0] == Cell::Text("harmonic".into())).count(), 4);
        let v = run("validate", "", 1);
        assert_eq!(v.rows().len(), 9);
        assert!(v.rows().iter().all(|r| r[1] == Cell::Int(1)));
    }

    #[test]
    fn output_is_independent_of_workers() {
        let cases = [
            ("simulate", r#", "n": 40"#),
            ("cramer-scan", r#", "n": 100, "x_grid": [0.5, 2.0]"#),
            ("wtail", r#", "n": 20, "t_grid": [1.0, 10.0, 100.0]"#),
        ];
        for (kind, extra) in cases {
            let one = run(kind, extra, 1).to_csv_string();
            assert_eq!(one, run(kind, extra, 4).to_csv_string(), "{kind}");
            assert_eq!(one, run(kind, extra, 8).to_csv_string(), "{kind}");
        }
    }

    #[test]
    fn runtime_errors_carry_context() {
        // φ vanishes on the whole grid, so no tail can be fitted
        let text = format!(
            r#"{{"kind": "wtail", "seed": 1, "replications": 50, "n": 20, "t_grid": [1e5, 1e6, 1e7], "model": {TWO_POINT}}}"#
        );
        let err = run_experiment(&parse_config(&text).unwrap()).unwrap_err();
        assert!(err.to_string().starts_with("wtail experiment"), "{err}");
        assert!(!err.is_config_error());
    }
}
