//! End-to-end experiments, diagnostics and report emission.

mod config;
mod experiments;
mod report;

pub use config::{ExperimentKind, RunConfig, RunParams, VarMode, CONFIG_SCHEMA_VERSION};
pub use experiments::{
    default_phi_method, run, run_counterexample_lower, run_counterexample_upper,
    run_invariance_check, run_remark84,
};
pub use report::{
    ClockRow, DecayRow, DiagnosticsReport, GaussianRef, KsRow, LowerCounterexampleSection,
    MartingaleStats, QuantileRow, RBetaRow, Remark84Section, UpperCounterexampleSection,
    REPORT_SCHEMA_VERSION,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvKind, EnvSpec};
    use crate::stats;

    fn small_constant_config() -> RunConfig {
        let mut cfg = RunConfig::new(ExperimentKind::Diagnose, EnvSpec::constant(1.0), 99);
        cfg.run.n_paths = 400;
        cfg.run.n_ladder = vec![25.0, 100.0];
        cfg.run.var_paths = 2000;
        cfg.run.var_time = 50.0;
        cfg.run.var_mode = VarMode::Quenched;
        cfg.run.martingale_paths = 500;
        cfg.run.martingale_horizon = 40.0;
        cfg.run.dual_paths = 50;
        cfg.run.dual_horizon = 100.0;
        cfg.run.phi_envs = 50;
        cfg.run.ks_threshold = 0.2;
        cfg
    }

    #[test]
    fn constant_diagnose_hits_exact_values() {
        let report = run(&small_constant_config()).unwrap();
        assert!(report.errors.is_empty(), "errors: {:?}", report.errors);
        // phi == 1 makes the dual-side expressions exact
        let phi2 = report.sigma2_phi.unwrap();
        assert!((phi2.value - 2.0).abs() < 1e-12);
        let mart = report.sigma2_martingale.unwrap();
        assert!((mart.value - 2.0).abs() < 1e-12);
        let dual = report.sigma2_dual.unwrap();
        assert!((dual.value - 2.0).abs() < 1e-12);
        let walk = report.sigma2_walk.unwrap();
        assert!((walk.value - 2.0).abs() < 4.0 * walk.se, "Var/t = {}", walk.value);
        let r84 = report.remark84.as_ref().unwrap();
        assert_eq!(r84.gap.value, 0.0);
        assert!(r84.gap_consistent_with_zero);
        assert!(report.check_failures().is_empty(), "{:?}", report.check_failures());
    }

    #[test]
    fn static_diagnose_matches_harmonic_mean() {
        let mut cfg = small_constant_config();
        cfg.env = EnvSpec::static_iid_12();
        cfg.run.var_paths = 4000;
        cfg.run.var_time = 400.0;
        cfg.run.var_mode = VarMode::Annealed;
        cfg.run.dual_paths = 100;
        cfg.run.dual_horizon = 500.0;
        cfg.run.phi_envs = 4000;
        let report = run(&cfg).unwrap();
        assert!(report.errors.is_empty(), "errors: {:?}", report.errors);
        let target = 8.0 / 3.0;
        let phi2 = report.sigma2_phi.unwrap();
        assert!(
            phi2.within_k_se(target, 3.0),
            "2E[a phi^2] = {} +- {}",
            phi2.value,
            phi2.se
        );
        let r84 = report.remark84.as_ref().unwrap();
        assert!(
            r84.gap.within_k_se(0.0, 3.0),
            "gap {} +- {}",
            r84.gap.value,
            r84.gap.se
        );
        let walk = report.sigma2_walk.unwrap();
        assert!(
            (walk.value - target).abs() / target < 0.10,
            "Var/t = {}",
            walk.value
        );
    }

    #[test]
    fn lower_counterexample_sections_populate() {
        let mut cfg = RunConfig::new(
            ExperimentKind::CounterexampleLower,
            EnvSpec::new(EnvKind::StaticHeavyInverse {
                exponent: 2.0,
                offset: 0.0,
            }),
            5,
        );
        cfg.run.n_ladder = vec![25.0, 100.0];
        cfg.run.n_paths = 600;
        cfg.run.replicates = 6;
        let report = run(&cfg).unwrap();
        let section = report.lower_counterexample.as_ref().unwrap();
        assert_eq!(section.decay.len(), 2);
        assert_eq!(section.r_beta.len(), 2);
        for row in &section.r_beta {
            assert!(row.estimate.value <= row.upper_bound + 3.0 * row.estimate.se);
            assert!(row.estimate.value > 0.0);
        }
    }

    #[test]
    fn upper_counterexample_quantiles_grow() {
        let mut cfg = RunConfig::new(
            ExperimentKind::CounterexampleUpper,
            EnvSpec::new(EnvKind::HomogeneousHeavyUpper { pareto_alpha: 0.75 }),
            7,
        );
        cfg.run.n_ladder = vec![100.0, 10_000.0];
        cfg.run.n_paths = 2000;
        cfg.run.replicates = 10;
        let report = run(&cfg).unwrap();
        let section = report.upper_counterexample.as_ref().unwrap();
        assert!(
            section.median_growth_factor > 1.5,
            "growth {}",
            section.median_growth_factor
        );
        // the realized clock slope rises along the ladder in the median
        assert!(section.clock[1].median_clock_over_t > section.clock[0].median_clock_over_t);
    }

    #[test]
    fn upper_fast_path_matches_event_driven_simulator() {
        // the homogeneous time-change representation against simulate_x
        let spec = EnvSpec::new(EnvKind::HomogeneousInSpace {
            law: crate::env::LevelLaw::TwoPoint {
                lo: 0.5,
                hi: 1.5,
                p_hi: 0.5,
            },
            switch_rate: 1.0,
        });
        let t = 40.0;
        let n = 4000;
        let env = crate::walk::build_walk_env(&spec, 0, t, 77).unwrap();
        let direct: Vec<f64> = (0..n)
            .map(|i| {
                crate::walk::simulate_x(&env, 0, t, crate::walk::path_seed(3, i as u64), 1_000_000)
                    .unwrap()
                    .position_at(t) as f64
            })
            .collect();
        let a_t = 2.0 * env.integrated_rate(crate::env::Edge::new(0), 0.0, t).unwrap();
        let mut stream = crate::rng::Substream::new(4);
        let fast: Vec<f64> = (0..n)
            .map(|_| {
                use rand::Rng;
                let jumps: u64 =
                    stream.sample(rand_distr::Poisson::new(a_t).unwrap()) as u64;
                let ups = stream.sample(rand_distr::Binomial::new(jumps, 0.5).unwrap());
                (2 * ups as i64 - jumps as i64) as f64
            })
            .collect();
        let d = stats::ks_two_sample(&direct, &fast);
        let p = stats::ks_two_sample_p_value(d, n, n);
        assert!(p > 0.001, "representations disagree: D = {d}, p = {p}");
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = small_constant_config();
        let a = run(&cfg).unwrap().to_json();
        let b = run(&cfg).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn long_csv_has_rows() {
        let report = run(&small_constant_config()).unwrap();
        let csv = report.to_long_csv();
        assert!(csv.lines().count() > 5);
        assert!(csv.starts_with("section,series,x,value\n"));
    }
}
