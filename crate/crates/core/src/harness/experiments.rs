//! End-to-end experiment stages.
//!
//! Every stage draws its randomness from named substreams of the master
//! seed and aggregates in path-index order, so a report is a pure function
//! of `(config, master seed)` regardless of worker count. Stages that fail
//! leave their section empty and record the failure in the report.

use crate::corrector::{
    build_phi, build_psi, harmonic_mean_constant, sublinearity_report, PhiMethod,
};
use crate::dual::{clock_slope, ensemble_y};
use crate::env::{annealed_env_seed, Edge, EnvSpec, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::kernel::{phi_eps, recommended_phi_radius, t_max_for, PhiSweep, WindowSpec};
use crate::rng::{self, derive_key, Substream};
use crate::stats::{self, Estimate};
use crate::walk::{
    build_walk_env, ensemble_x_with, path_seed, quenched_env_seed, simulate_x,
    simulate_x_sampled, EnsembleMode, DEFAULT_MAX_STEPS,
};
use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentKind, RunConfig, VarMode};
use super::report::{
    ClockRow, DecayRow, DiagnosticsReport, GaussianRef, KsRow, LowerCounterexampleSection,
    MartingaleStats, QuantileRow, RBetaRow, Remark84Section, UpperCounterexampleSection,
};

mod stage {
    pub const KS_ENSEMBLE: u64 = 0x01;
    pub const VAR_ENSEMBLE: u64 = 0x02;
    pub const MARTINGALE: u64 = 0x03;
    pub const DUAL: u64 = 0x04;
    pub const PHI_MOMENTS: u64 = 0x05;
    pub const LOWER_DECAY: u64 = 0x06;
    pub const R_BETA: u64 = 0x07;
    pub const UPPER_ENV: u64 = 0x08;
    pub const UPPER_PATHS: u64 = 0x09;
    pub const STATIC_FIELD: u64 = 0x0A;
}

fn stage_seed(master: u64, tag: u64, extra: &[u64]) -> u64 {
    let mut words = vec![rng::stream::HARNESS, tag];
    words.extend_from_slice(extra);
    derive_key(master, &words)
}

/// Default density method for a spec.
pub fn default_phi_method(spec: &EnvSpec) -> PhiMethod {
    if spec.spatially_homogeneous() {
        PhiMethod::HomogeneousUnit
    } else if spec.static_in_time() && harmonic_mean_constant(spec).is_ok() {
        PhiMethod::StaticClosedForm
    } else {
        PhiMethod::KernelExtrapolated
    }
}

/// Per-environment samples of the dual-side moments
/// `(2 b phi^2, 2 b phi, 2 b, 2 b (phi^2 - phi))` at the space-time origin.
fn dual_side_moments(
    cfg: &RunConfig,
) -> Result<(Estimate, Estimate, Estimate, Estimate)> {
    let spec = &cfg.env;
    let method = default_phi_method(spec);
    let n = cfg.run.phi_envs;
    let seed = stage_seed(cfg.master_seed, stage::PHI_MOMENTS, &[]);
    let samples: Vec<(f64, f64, f64)> = match method {
        PhiMethod::HomogeneousUnit => (0..n)
            .into_par_iter()
            .map(|i| {
                let env =
                    EnvironmentWindow::build(spec, -2, 2, -1.0, 1.0, annealed_env_seed(seed, i as u64))?;
                let b = env.rate_at(Edge::new(0), 0.0)?;
                Ok((2.0 * b, 2.0 * b, 2.0 * b))
            })
            .collect::<Result<_>>()?,
        PhiMethod::StaticClosedForm => {
            let c_h = harmonic_mean_constant(spec)?;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let env = EnvironmentWindow::build(
                        spec,
                        -2,
                        2,
                        -1.0,
                        1.0,
                        annealed_env_seed(seed, i as u64),
                    )?;
                    let b = env.rate_at(Edge::new(0), 0.0)?;
                    let phi = c_h / b;
                    Ok((2.0 * b * phi * phi, 2.0 * b * phi, 2.0 * b))
                })
                .collect::<Result<_>>()?
        }
        PhiMethod::KernelExtrapolated => {
            let sweep = PhiSweep {
                eps_schedule: cfg.run.eps_schedule.clone(),
                tail_tol: cfg.run.tail_tol,
                uniform_tol: cfg.run.uniform_tol,
                ..PhiSweep::default()
            };
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let env = EnvironmentWindow::build(
                        spec,
                        -2,
                        2,
                        -1.0,
                        1.0,
                        annealed_env_seed(seed, i as u64),
                    )?;
                    let b = env.rate_at(Edge::new(0), 0.0)?;
                    let mut raws = Vec::with_capacity(sweep.eps_schedule.len());
                    for &eps in &sweep.eps_schedule {
                        let radius =
                            recommended_phi_radius(spec, t_max_for(eps, sweep.tail_tol), 3.5, 10);
                        let rec = phi_eps(
                            &env,
                            eps,
                            None,
                            &[(0.0, 0)],
                            &WindowSpec::new(radius).with_tolerance(sweep.uniform_tol),
                            sweep.tail_tol,
                        )?;
                        raws.push(rec.value_grid[0]);
                    }
                    let phi = sweep.extrapolate(&raws);
                    Ok((2.0 * b * phi * phi, 2.0 * b * phi, 2.0 * b))
                })
                .collect::<Result<_>>()?
        }
    };
    let phi2: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let phi1: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let plain: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let gaps: Vec<f64> = samples.iter().map(|s| s.0 - s.1).collect();
    Ok((
        Estimate::from_samples(&phi2),
        Estimate::from_samples(&phi1),
        Estimate::from_samples(&plain),
        Estimate::from_samples(&gaps),
    ))
}

/// Closed-form density field over a quenched walk environment, for the
/// martingale diagnostics.
fn closed_form_fields(
    env: &EnvironmentWindow,
    method: PhiMethod,
) -> Result<(crate::corrector::PhiField, crate::corrector::PsiField)> {
    let phi = build_phi(
        env,
        method,
        &[0.0],
        env.x_min() + 1,
        env.x_max() - 1,
        &PhiSweep::default(),
    )?;
    let psi = build_psi(env, &phi, &[0.0], env.x_min() + 2, env.x_max() - 2)?;
    Ok((phi, psi))
}

fn martingale_stage(cfg: &RunConfig, method: PhiMethod) -> Result<MartingaleStats> {
    if method == PhiMethod::KernelExtrapolated {
        return Err(Error::config(
            "martingale diagnostics require a closed-form density method",
        ));
    }
    let horizon = cfg.run.martingale_horizon;
    let n_paths = cfg.run.martingale_paths;
    let k = cfg.run.martingale_intervals.max(2);
    let seed = stage_seed(cfg.master_seed, stage::MARTINGALE, &[]);
    let env = build_walk_env(&cfg.env, 0, horizon, quenched_env_seed(seed))?;
    let (phi, psi) = closed_form_fields(&env, method)?;
    let times: Vec<f64> = (1..=k).map(|i| horizon * i as f64 / k as f64).collect();

    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            // full record for the bracket integral, sampled psi for increments
            let path = simulate_x(&env, 0, horizon, path_seed(seed, i as u64), DEFAULT_MAX_STEPS)?;
            let mut m_values = Vec::with_capacity(k + 1);
            m_values.push(psi.value(0, 0));
            for &t in &times {
                let x = path.position_at(t);
                if x < psi.x_lo || x > psi.x_hi {
                    return Err(Error::range(format!(
                        "path left the coordinate field at {x}"
                    )));
                }
                m_values.push(psi.value(0, x));
            }
            // <M>_T = sum over constant-position segments of
            // phi(x)^2 int b(x) + phi(x-1)^2 int b(x-1)
            let mut bracket = 0.0;
            let mut seg_start = 0.0;
            let mut pos = path.start_vertex;
            let mut add_segment = |x: i64, a: f64, b: f64| -> Result<()> {
                if b > a {
                    let right = phi.value(0, x).powi(2)
                        * env.integrated_rate(Edge::new(x), a, b)?;
                    let left = phi.value(0, x - 1).powi(2)
                        * env.integrated_rate(Edge::new(x - 1), a, b)?;
                    bracket += right + left;
                }
                Ok(())
            };
            for (j, &jt) in path.jump_times.iter().enumerate() {
                add_segment(pos, seg_start, jt)?;
                pos = path.positions[j];
                seg_start = jt;
            }
            add_segment(pos, seg_start, horizon)?;
            Ok((m_values, bracket))
        })
        .collect();

    let mut final_increments = Vec::with_capacity(n_paths);
    let mut pair_first = Vec::new();
    let mut pair_second = Vec::new();
    let mut bracket_rates = Vec::with_capacity(n_paths);
    for row in rows {
        let (m_values, bracket) = row?;
        final_increments.push(m_values[k] - m_values[0]);
        let increments: Vec<f64> = m_values.windows(2).map(|w| w[1] - w[0]).collect();
        for w in increments.windows(2) {
            pair_first.push(w[0]);
            pair_second.push(w[1]);
        }
        bracket_rates.push(bracket / horizon);
    }
    let mean_increment = Estimate::from_samples(&final_increments);
    // pooled lag-1 correlation of interval increments across paths
    let n_pairs = pair_first.len();
    let mean_a = pair_first.iter().sum::<f64>() / n_pairs as f64;
    let mean_b = pair_second.iter().sum::<f64>() / n_pairs as f64;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..n_pairs {
        let da = pair_first[i] - mean_a;
        let db = pair_second[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    let corr = cov / (var_a.sqrt() * var_b.sqrt()).max(1e-300);
    let lag1 = Estimate::new(corr, 1.0 / (n_pairs as f64).sqrt(), n_pairs);
    let bracket_rate = Estimate::from_samples(&bracket_rates);
    Ok(MartingaleStats {
        mean_increment,
        lag1_autocorrelation: lag1,
        bracket_rate,
    })
}

/// Diffusivity estimators, rescaled-law table, tightness quantiles and
/// martingale diagnostics.
pub fn run_invariance_check(cfg: &RunConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    let mut report = DiagnosticsReport::new(cfg.content_hash(), cfg.master_seed, cfg.env.clone());
    let method = default_phi_method(&cfg.env);

    // dual-side moments: sigma^2 = 2 E[b phi^2]
    match dual_side_moments(cfg) {
        Ok((phi2, _, _, _)) => {
            report.sigma2_phi = Some(phi2);
            report.theta_mean = Some(phi2);
        }
        Err(e) => report.errors.push(format!("phi moments: {e}")),
    }

    // empirical diffusivity
    let var_seed = stage_seed(cfg.master_seed, stage::VAR_ENSEMBLE, &[]);
    let var_mode = match cfg.run.var_mode {
        VarMode::Quenched => EnsembleMode::Quenched,
        VarMode::Annealed => EnsembleMode::Annealed,
    };
    match ensemble_x_with(
        &cfg.env,
        var_mode,
        cfg.run.var_paths,
        &[cfg.run.var_time],
        var_seed,
        DEFAULT_MAX_STEPS,
        0,
    ) {
        Ok(summary) => {
            let xs = summary.column_f64(0);
            let var = stats::variance_estimate(&xs);
            report.sigma2_walk = Some(Estimate::new(
                var.value / cfg.run.var_time,
                var.se / cfg.run.var_time,
                var.n,
            ));
        }
        Err(e) => report.errors.push(format!("variance ensemble: {e}")),
    }

    // dual clock
    match ensemble_y(
        &cfg.env,
        EnsembleMode::Annealed,
        cfg.run.dual_paths,
        cfg.run.dual_horizon,
        stage_seed(cfg.master_seed, stage::DUAL, &[]),
    )
    .and_then(|ens| clock_slope(&ens))
    {
        Ok(slope) => report.sigma2_dual = Some(slope),
        Err(e) => report.errors.push(format!("dual clock: {e}")),
    }

    // rescaled-law table and tightness quantiles (quenched)
    let sigma2_ref = report.sigma2_phi.map(|e| e.value).unwrap_or(f64::NAN);
    report.w_ref = Some(GaussianRef {
        variance_per_unit_time: sigma2_ref,
    });
    let mut sample_times: Vec<f64> = Vec::new();
    for &n in &cfg.run.n_ladder {
        for &t in &cfg.run.t_grid {
            sample_times.push(n * t);
        }
    }
    sample_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sample_times.dedup();
    match ensemble_x_with(
        &cfg.env,
        EnsembleMode::Quenched,
        cfg.run.n_paths,
        &sample_times,
        stage_seed(cfg.master_seed, stage::KS_ENSEMBLE, &[]),
        DEFAULT_MAX_STEPS,
        0,
    ) {
        Ok(summary) => {
            for &n in &cfg.run.n_ladder {
                let mut per_t_quantiles = Vec::new();
                for &t in &cfg.run.t_grid {
                    let idx = summary
                        .sample_times
                        .iter()
                        .position(|&s| s == n * t)
                        .expect("sample grid built from the ladder");
                    let xs: Vec<f64> = (0..summary.n_paths)
                        .map(|p| summary.row(p)[idx] as f64 / n.sqrt())
                        .collect();
                    let d = stats::ks_distance(&xs, |x| {
                        stats::gaussian_cdf(x, sigma2_ref * t)
                    });
                    report.ks_table.push(KsRow {
                        n,
                        t,
                        distance: d,
                        n_paths: xs.len(),
                        threshold: cfg.run.ks_threshold,
                    });
                    let abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
                    per_t_quantiles.push(stats::quantile(&abs, cfg.run.quantile));
                }
                report.tightness_quantiles.push(QuantileRow {
                    n,
                    median_quantile: *per_t_quantiles.last().unwrap(),
                    quantiles: per_t_quantiles,
                });
            }
        }
        Err(e) => report.errors.push(format!("rescaled-law ensemble: {e}")),
    }

    // bracket and increment diagnostics need a closed-form coordinate field
    if method != PhiMethod::KernelExtrapolated {
        match martingale_stage(cfg, method) {
            Ok(m) => {
                report.sigma2_martingale = Some(m.bracket_rate);
                report.martingale = Some(m);
            }
            Err(e) => report.errors.push(format!("martingale: {e}")),
        }
        // cheap closed-form sublinearity ratios
        match sublinearity_closed_form(cfg, method) {
            Ok(s) => report.sublinearity = Some(s),
            Err(e) => report.errors.push(format!("sublinearity: {e}")),
        }
    }

    Ok(report)
}

fn sublinearity_closed_form(
    cfg: &RunConfig,
    method: PhiMethod,
) -> Result<crate::corrector::SublinearityReport> {
    let n_max = *cfg.run.n_ladder.last().unwrap();
    let xr = n_max.sqrt().ceil() as i64 + 2;
    let env = EnvironmentWindow::build(
        &cfg.env,
        -xr - 4,
        xr + 4,
        -1.0,
        1.0,
        quenched_env_seed(stage_seed(cfg.master_seed, stage::STATIC_FIELD, &[])),
    )?;
    let phi = build_phi(&env, method, &[0.0], -xr - 3, xr + 3, &PhiSweep::default())?;
    let psi = build_psi(&env, &phi, &[0.0], -xr - 2, xr + 2)?;
    sublinearity_report(&psi, &cfg.run.n_ladder)
}

/// The two dual-side diffusivity expressions and their measured gap.
pub fn run_remark84(cfg: &RunConfig) -> Result<Remark84Section> {
    cfg.validate()?;
    let (phi2, phi1, _, gap) = dual_side_moments(cfg)?;
    let slope = clock_slope(&ensemble_y(
        &cfg.env,
        EnsembleMode::Annealed,
        cfg.run.dual_paths,
        cfg.run.dual_horizon,
        stage_seed(cfg.master_seed, stage::DUAL, &[1]),
    )?)?;
    let consistent = gap.value.abs() <= 2.0 * gap.se.max(1e-15);
    Ok(Remark84Section {
        two_e_b_phi2: phi2,
        two_e_b_phi: phi1,
        clock_slope: slope,
        gap,
        gap_consistent_with_zero: consistent,
    })
}

/// Escape-probability decay and the Laplace-averaged return functional for
/// environments with a diverging inverse moment.
pub fn run_counterexample_lower(cfg: &RunConfig) -> Result<LowerCounterexampleSection> {
    cfg.validate()?;
    let delta = cfg.run.delta;
    let beta = cfg.run.beta;
    let reps = cfg.run.replicates.max(1);
    let per_rep = (cfg.run.n_paths / reps).max(100);

    let mut decay = Vec::new();
    for (ti, &t) in cfg.run.n_ladder.iter().enumerate() {
        let threshold = delta * t.sqrt();
        let reps_vals: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = stage_seed(cfg.master_seed, stage::LOWER_DECAY, &[ti as u64, r as u64]);
                let summary = ensemble_x_with(
                    &cfg.env,
                    EnsembleMode::Annealed,
                    per_rep,
                    &[t],
                    seed,
                    DEFAULT_MAX_STEPS,
                    0,
                )?;
                let escapes = (0..summary.n_paths)
                    .filter(|&p| (summary.row(p)[0] as f64).abs() >= threshold)
                    .count();
                Ok(escapes as f64 / summary.n_paths as f64)
            })
            .collect::<Result<_>>()?;
        decay.push(DecayRow {
            t,
            median_escape: stats::median(&reps_vals),
            replicates: reps_vals,
        });
    }

    let mut r_beta = Vec::new();
    for (ti, &t) in cfg.run.n_ladder.iter().enumerate() {
        let m = t.sqrt().floor() as i64;
        let box_count = (2 * m + 1) as f64;
        let n_samples = cfg.run.n_paths;
        let values: Vec<f64> = (0..n_samples)
            .into_par_iter()
            .map(|i| {
                let seed = stage_seed(cfg.master_seed, stage::R_BETA, &[ti as u64, i as u64]);
                let mut stream = Substream::new(seed);
                let u = stream.exp(beta);
                let horizon = t * u;
                let env = build_walk_env(
                    &cfg.env,
                    0,
                    horizon,
                    annealed_env_seed(seed, 1),
                )?;
                let (positions, _) = simulate_x_sampled(
                    &env,
                    0,
                    &[horizon],
                    derive_key(seed, &[rng::stream::WALK]),
                    DEFAULT_MAX_STEPS,
                )?;
                let x = positions[0].abs() as f64;
                Ok((box_count - x).max(0.0) / (beta * t.sqrt()))
            })
            .collect::<Result<_>>()?;
        r_beta.push(RBetaRow {
            t,
            estimate: Estimate::from_samples(&values),
            upper_bound: (2.0 * t.sqrt() + 1.0) / (beta * t.sqrt()),
        });
    }

    Ok(LowerCounterexampleSection {
        delta,
        beta,
        decay,
        r_beta,
    })
}

/// Quantile blow-up and clock divergence for spatially homogeneous
/// environments with a diverging mean.
///
/// Spatial homogeneity makes the walk an exact time change of the
/// constant-speed simple walk, so the quantile samples draw
/// `Z_{N(A(t))}` directly: `N ~ Poisson(A(t))` with `A(t) = 2 int eta`,
/// and `Z_N` a symmetric binomial. The generic event-driven simulator is
/// cross-validated against this representation in the tests.
pub fn run_counterexample_upper(cfg: &RunConfig) -> Result<UpperCounterexampleSection> {
    cfg.validate()?;
    let reps = cfg.run.replicates.max(1);
    let t_scale = *cfg.run.t_grid.last().unwrap_or(&1.0);
    let horizon_max = cfg.run.n_ladder.last().unwrap() * t_scale;
    let n_paths = cfg.run.n_paths;
    let q = cfg.run.quantile;

    let per_env: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..reps)
        .into_par_iter()
        .map(|e| {
            let env_seed = annealed_env_seed(
                stage_seed(cfg.master_seed, stage::UPPER_ENV, &[]),
                e as u64,
            );
            let env = EnvironmentWindow::build(&cfg.env, 0, 2, 0.0, horizon_max, env_seed)?;
            let mut clocks = Vec::new();
            let mut quantiles = Vec::new();
            for (ni, &n) in cfg.run.n_ladder.iter().enumerate() {
                let t = n * t_scale;
                let a_t = 2.0 * env.integrated_rate(Edge::new(0), 0.0, t)?;
                clocks.push(a_t / t);
                let mut stream = Substream::new(stage_seed(
                    cfg.master_seed,
                    stage::UPPER_PATHS,
                    &[e as u64, ni as u64],
                ));
                let mut samples = Vec::with_capacity(n_paths);
                for _ in 0..n_paths {
                    let jumps: u64 = if a_t > 0.0 {
                        stream.sample(rand_distr::Poisson::new(a_t).map_err(|err| {
                            Error::config(format!("poisson sampler: {err}"))
                        })?) as u64
                    } else {
                        0
                    };
                    let ups = if jumps > 0 {
                        stream.sample(
                            rand_distr::Binomial::new(jumps, 0.5)
                                .map_err(|err| Error::config(format!("binomial sampler: {err}")))?,
                        )
                    } else {
                        0
                    };
                    let z = 2 * ups as i64 - jumps as i64;
                    samples.push((z as f64).abs() / n.sqrt());
                }
                quantiles.push(stats::quantile(&samples, q));
            }
            Ok((clocks, quantiles))
        })
        .collect();

    let mut clock_rows: Vec<ClockRow> = cfg
        .run
        .n_ladder
        .iter()
        .map(|&n| ClockRow {
            t: n * t_scale,
            median_clock_over_t: 0.0,
            values: Vec::new(),
        })
        .collect();
    let mut quantile_rows: Vec<QuantileRow> = cfg
        .run
        .n_ladder
        .iter()
        .map(|&n| QuantileRow {
            n,
            median_quantile: 0.0,
            quantiles: Vec::new(),
        })
        .collect();
    let mut growth = Vec::new();
    for env_result in per_env {
        let (clocks, quantiles) = env_result?;
        for (i, c) in clocks.iter().enumerate() {
            clock_rows[i].values.push(*c);
        }
        for (i, qv) in quantiles.iter().enumerate() {
            quantile_rows[i].quantiles.push(*qv);
        }
        let first = quantiles.first().copied().unwrap_or(f64::NAN);
        let last = quantiles.last().copied().unwrap_or(f64::NAN);
        growth.push(if first > 0.0 { last / first } else { f64::INFINITY });
    }
    for row in clock_rows.iter_mut() {
        row.median_clock_over_t = stats::median(&row.values);
    }
    for row in quantile_rows.iter_mut() {
        row.median_quantile = stats::median(&row.quantiles);
    }
    Ok(UpperCounterexampleSection {
        quantile_level: q,
        quantiles: quantile_rows,
        median_growth_factor: stats::median(&growth),
        clock: clock_rows,
    })
}

/// Runs the experiment the config asks for and assembles the report.
pub fn run(cfg: &RunConfig) -> Result<DiagnosticsReport> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Invariance => run_invariance_check(cfg),
        ExperimentKind::Remark84 => {
            let mut report =
                DiagnosticsReport::new(cfg.content_hash(), cfg.master_seed, cfg.env.clone());
            match run_remark84(cfg) {
                Ok(section) => {
                    report.sigma2_dual = Some(section.clock_slope);
                    report.remark84 = Some(section);
                }
                Err(e) => report.errors.push(format!("remark84: {e}")),
            }
            Ok(report)
        }
        ExperimentKind::Diagnose => {
            let mut report = run_invariance_check(cfg)?;
            match run_remark84(cfg) {
                Ok(section) => report.remark84 = Some(section),
                Err(e) => report.errors.push(format!("remark84: {e}")),
            }
            Ok(report)
        }
        ExperimentKind::CounterexampleLower => {
            let mut report =
                DiagnosticsReport::new(cfg.content_hash(), cfg.master_seed, cfg.env.clone());
            match run_counterexample_lower(cfg) {
                Ok(section) => report.lower_counterexample = Some(section),
                Err(e) => report.errors.push(format!("lower counterexample: {e}")),
            }
            Ok(report)
        }
        ExperimentKind::CounterexampleUpper => {
            let mut report =
                DiagnosticsReport::new(cfg.content_hash(), cfg.master_seed, cfg.env.clone());
            match run_counterexample_upper(cfg) {
                Ok(section) => report.upper_counterexample = Some(section),
                Err(e) => report.errors.push(format!("upper counterexample: {e}")),
            }
            Ok(report)
        }
    }
}
