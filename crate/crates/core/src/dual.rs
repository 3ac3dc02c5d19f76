//! The dual walk: a variable-speed simple symmetric walk with jump rate
//! `2 b_t(x)` at its current vertex, run backward in environment time.
//!
//! The primary construction is the explicit time change: a discrete simple
//! random walk `Z`, an independent rate-1 Poisson process with arrivals
//! `tau_k`, and the inverse clock `W` solved piece by piece from
//! `int_{W(tau_k)}^{W(t)} 2 b_{-s}(Z_k) ds = t - tau_k`. The clock
//! `A = W^{-1}` then gives `Y_t = Z_{N(A(t))}`. Everything is exact on
//! piecewise-constant tracks. An independent event-driven simulator lives in
//! [`oracle`] and is used to cross-validate the construction.
//!
//! Elapsed dual time `s` queries the environment at time `-s`; environments
//! for dual runs must cover `[-horizon, 0]`.

use crate::env::{annealed_env_seed, Edge, EnvSpec, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::rng::{self, derive_key, Substream};
use crate::stats::{self, Estimate, Kahan};
use crate::walk::EnsembleMode;
use rayon::prelude::*;

/// Step guard for a single dual path.
pub const DEFAULT_MAX_STEPS: usize = 100_000_000;

/// One realized dual path with its clock.
#[derive(Debug, Clone)]
pub struct DualPathRecord {
    pub start_vertex: i64,
    /// Steps of the discrete walk: `Z_{k+1} - Z_k`, each +-1.
    pub srw_steps: Vec<i64>,
    /// Poisson arrival times `tau_1 < tau_2 < ...`.
    pub poisson_arrivals: Vec<f64>,
    /// Time-change inverse at the arrivals, `W(tau_k)`; strictly increasing.
    pub w_values: Vec<f64>,
    pub horizon: f64,
    /// Sampled `(t, A(t))` pairs, always including `t = horizon`.
    pub clock_samples: Vec<(f64, f64)>,
    pub seed: u64,
}

impl DualPathRecord {
    pub fn jump_count(&self) -> usize {
        self.srw_steps.len()
    }

    /// `A(horizon)`.
    pub fn a_at_horizon(&self) -> f64 {
        self.clock_samples
            .iter()
            .rev()
            .find(|(t, _)| *t == self.horizon)
            .map(|&(_, a)| a)
            .expect("horizon clock sample always recorded")
    }

    /// Position `Y_t` by step reconstruction (right-continuous).
    pub fn position_at(&self, t: f64) -> i64 {
        debug_assert!((0.0..=self.horizon).contains(&t));
        let mut x = self.start_vertex;
        for (w, dx) in self.w_values.iter().zip(&self.srw_steps) {
            if *w <= t {
                x += dx;
            } else {
                break;
            }
        }
        x
    }

    pub fn final_position(&self) -> i64 {
        self.start_vertex + self.srw_steps.iter().sum::<i64>()
    }
}

fn check_dual_coverage(env: &EnvironmentWindow, horizon: f64) -> Result<()> {
    if horizon < 0.0 {
        return Err(Error::config("negative horizon"));
    }
    if env.t_min() > -horizon || env.t_max() < 0.0 {
        return Err(Error::config(format!(
            "environment time range [{}, {}] does not cover [-{horizon}, 0]",
            env.t_min(),
            env.t_max()
        )));
    }
    Ok(())
}

fn ensure_dual_coverage(env: &mut EnvironmentWindow, z: i64) -> Result<()> {
    if z >= env.x_min() && z < env.x_max() {
        return Ok(());
    }
    let width = (env.x_max() - env.x_min()).max(64);
    *env = env.extended(
        env.x_min().min(z) - width,
        env.x_max().max(z) + width,
        env.t_min(),
        env.t_max(),
    )?;
    Ok(())
}

/// Simulates the dual walk by the time-change construction, recording the
/// clock at `clock_times` (sorted) and at the horizon.
pub fn simulate_y_with_clock(
    env: &EnvironmentWindow,
    x0: i64,
    horizon: f64,
    seed: u64,
    clock_times: &[f64],
    max_steps: usize,
) -> Result<DualPathRecord> {
    check_dual_coverage(env, horizon)?;
    debug_assert!(clock_times.windows(2).all(|w| w[0] <= w[1]));
    let mut env = env.clone();
    let mut stream = Substream::new(seed);

    let mut srw_steps = Vec::new();
    let mut arrivals = Vec::new();
    let mut w_values = Vec::new();
    let mut clock_samples = Vec::with_capacity(clock_times.len() + 1);

    let mut z = x0;
    ensure_dual_coverage(&mut env, z)?;
    let mut tau = Kahan::new(); // Poisson time of the last arrival
    let mut w = 0.0f64; // Y-time of the last arrival, W(tau_n)
    let mut clock_idx = 0usize;

    loop {
        if srw_steps.len() >= max_steps {
            return Err(Error::Numerical {
                context: "dual walk exceeded its step guard".into(),
                rate_bound: f64::NAN,
                slice_start: 0.0,
                slice_end: horizon,
            });
        }
        let gap = stream.exp1();
        // W(tau_{n+1}) solves int over env time [-W_next, -w] of 2 b_r(z) = gap
        let r_next = env.invert_mass_down(Edge::new(z), -w, gap / 2.0, -horizon)?;
        match r_next {
            None => {
                // no further arrival before the horizon: A(t) on [w, horizon]
                while clock_idx < clock_times.len() && clock_times[clock_idx] <= horizon {
                    let t = clock_times[clock_idx];
                    if t >= w {
                        let a = tau.value()
                            + 2.0 * env.integrated_rate(Edge::new(z), -t, -w)?;
                        clock_samples.push((t, a));
                    }
                    clock_idx += 1;
                }
                let a_h = tau.value() + 2.0 * env.integrated_rate(Edge::new(z), -horizon, -w)?;
                clock_samples.push((horizon, a_h));
                return Ok(DualPathRecord {
                    start_vertex: x0,
                    srw_steps,
                    poisson_arrivals: arrivals,
                    w_values,
                    horizon,
                    clock_samples,
                    seed,
                });
            }
            Some(r1) => {
                let w_next = -r1;
                while clock_idx < clock_times.len() && clock_times[clock_idx] < w_next {
                    let t = clock_times[clock_idx];
                    if t >= w {
                        let a = tau.value()
                            + 2.0 * env.integrated_rate(Edge::new(z), -t, -w)?;
                        clock_samples.push((t, a));
                    }
                    clock_idx += 1;
                }
                tau.add(gap);
                arrivals.push(tau.value());
                w_values.push(w_next);
                let dx = stream.sign();
                srw_steps.push(dx);
                z += dx;
                ensure_dual_coverage(&mut env, z)?;
                w = w_next;
            }
        }
    }
}

/// Simulates the dual walk; the clock is recorded at the horizon.
pub fn simulate_y(
    env: &EnvironmentWindow,
    x0: i64,
    horizon: f64,
    seed: u64,
) -> Result<DualPathRecord> {
    simulate_y_with_clock(env, x0, horizon, seed, &[], DEFAULT_MAX_STEPS)
}

/// Event-driven cross-validation simulator.
pub mod oracle {
    use super::*;

    /// Simulates the dual walk directly: at `(t, y)` the next jump time is
    /// sampled by inverting the integrated rate `2 b_{-s}(y)`, and the step
    /// is +-1 with equal probability. Cross-checks the time-change
    /// construction; not the primary path.
    pub fn simulate_y_event_driven(
        env: &EnvironmentWindow,
        x0: i64,
        horizon: f64,
        seed: u64,
        max_steps: usize,
    ) -> Result<(i64, usize)> {
        check_dual_coverage(env, horizon)?;
        let mut env = env.clone();
        let mut stream = Substream::new(seed);
        let mut t = 0.0f64;
        let mut y = x0;
        ensure_dual_coverage(&mut env, y)?;
        let mut jumps = 0usize;
        loop {
            if jumps >= max_steps {
                return Err(Error::Numerical {
                    context: "event-driven dual walk exceeded its step guard".into(),
                    rate_bound: f64::NAN,
                    slice_start: 0.0,
                    slice_end: horizon,
                });
            }
            let target = stream.exp1();
            match env.invert_mass_down(Edge::new(y), -t, target / 2.0, -horizon)? {
                None => return Ok((y, jumps)),
                Some(r1) => {
                    t = -r1;
                    y += stream.sign();
                    ensure_dual_coverage(&mut env, y)?;
                    jumps += 1;
                }
            }
        }
    }
}

/// Compressed dual ensemble: per-path endpoint, clock value and jump count.
#[derive(Debug, Clone)]
pub struct DualEnsemble {
    pub mode: EnsembleMode,
    pub horizon: f64,
    pub final_positions: Vec<i64>,
    pub a_at_horizon: Vec<f64>,
    pub jump_counts: Vec<usize>,
    pub spec: EnvSpec,
    pub master_seed: u64,
}

/// Sizing for dual windows (same diffusive rule as the walk).
pub fn build_dual_env(
    spec: &EnvSpec,
    x0: i64,
    horizon: f64,
    env_seed: u64,
) -> Result<EnvironmentWindow> {
    let mean = spec.mean_rate().unwrap_or(1.0);
    let hw = (6.0 * (2.0 * mean * horizon.max(1.0)).sqrt()).ceil() as i64 + 64;
    EnvironmentWindow::build(
        spec,
        x0 - hw,
        x0 + hw,
        -horizon.max(f64::MIN_POSITIVE),
        0.0,
        env_seed,
    )
}

/// Derives the dual-path seed for path `i`.
pub fn dual_path_seed(master_seed: u64, path_index: u64) -> u64 {
    derive_key(master_seed, &[rng::stream::DUAL, path_index])
}

/// Simulates a dual ensemble, parallel over paths with deterministic
/// aggregation by path index.
pub fn ensemble_y(
    spec: &EnvSpec,
    mode: EnsembleMode,
    n_paths: usize,
    horizon: f64,
    master_seed: u64,
) -> Result<DualEnsemble> {
    if n_paths == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    let quenched_env = match mode {
        EnsembleMode::Quenched => Some(build_dual_env(
            spec,
            0,
            horizon,
            derive_key(master_seed, &[rng::stream::ENV]),
        )?),
        EnsembleMode::Annealed => None,
    };
    let rows: Vec<Result<(i64, f64, usize)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let env = match &quenched_env {
                Some(env) => env.clone(),
                None => build_dual_env(spec, 0, horizon, annealed_env_seed(master_seed, i as u64))?,
            };
            let rec = simulate_y_with_clock(
                &env,
                0,
                horizon,
                dual_path_seed(master_seed, i as u64),
                &[],
                DEFAULT_MAX_STEPS,
            )?;
            Ok((rec.final_position(), rec.a_at_horizon(), rec.jump_count()))
        })
        .collect();
    let mut final_positions = Vec::with_capacity(n_paths);
    let mut a_at_horizon = Vec::with_capacity(n_paths);
    let mut jump_counts = Vec::with_capacity(n_paths);
    for row in rows {
        let (pos, a, jumps) = row?;
        final_positions.push(pos);
        a_at_horizon.push(a);
        jump_counts.push(jumps);
    }
    Ok(DualEnsemble {
        mode,
        horizon,
        final_positions,
        a_at_horizon,
        jump_counts,
        spec: spec.clone(),
        master_seed,
    })
}

/// Estimates `lim A(t)/t` (the dual diffusivity `2 E(b phi)`) as the mean of
/// `A(horizon)/horizon` across paths, with its standard error.
pub fn clock_slope(ensemble: &DualEnsemble) -> Result<Estimate> {
    if ensemble.a_at_horizon.is_empty() {
        return Err(Error::config("clock_slope needs a nonempty ensemble"));
    }
    let slopes: Vec<f64> = ensemble
        .a_at_horizon
        .iter()
        .map(|a| a / ensemble.horizon)
        .collect();
    Ok(Estimate::from_samples(&slopes))
}

/// KS distance of `Y_horizon / sqrt(horizon)` against a centered Gaussian
/// with the clock-slope variance. Returns `(distance, n_paths)`.
pub fn dual_clt_check(ensemble: &DualEnsemble) -> Result<(f64, usize)> {
    if ensemble.final_positions.len() < 100 {
        return Err(Error::config("dual CLT check needs at least 100 paths"));
    }
    let sigma2 = clock_slope(ensemble)?.value;
    let sqrt_h = ensemble.horizon.sqrt();
    let xs: Vec<f64> = ensemble
        .final_positions
        .iter()
        .map(|&y| y as f64 / sqrt_h)
        .collect();
    let d = stats::ks_distance(&xs, |x| stats::gaussian_cdf(x, sigma2));
    Ok((d, xs.len()))
}

/// Clock-sample CSV with columns `path_id,t,A_t`.
pub fn clock_csv(records: &[DualPathRecord]) -> String {
    let mut out = String::from("path_id,t,A_t\n");
    for (i, rec) in records.iter().enumerate() {
        for (t, a) in &rec.clock_samples {
            out.push_str(&format!("{i},{t},{a}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_env(c: f64, horizon: f64, seed: u64) -> EnvironmentWindow {
        build_dual_env(&EnvSpec::constant(c), 0, horizon, seed).unwrap()
    }

    #[test]
    fn zero_horizon_is_constant_path() {
        let env = constant_env(1.0, 1.0, 3);
        let rec = simulate_y(&env, 5, 0.0, 9).unwrap();
        assert!(rec.srw_steps.is_empty());
        assert_eq!(rec.position_at(0.0), 5);
        assert_eq!(rec.a_at_horizon(), 0.0);
    }

    #[test]
    fn constant_rate_clock_is_linear() {
        // A(t) = 2 c t exactly for constant rate
        let c = 0.7;
        let env = constant_env(c, 50.0, 4);
        let times: Vec<f64> = (1..=10).map(|k| 5.0 * k as f64).collect();
        let rec = simulate_y_with_clock(&env, 0, 50.0, 77, &times, DEFAULT_MAX_STEPS).unwrap();
        for &(t, a) in &rec.clock_samples {
            assert!(
                (a - 2.0 * c * t).abs() <= 1e-10 * (1.0 + a.abs()),
                "A({t}) = {a} vs {}",
                2.0 * c * t
            );
        }
    }

    #[test]
    fn record_invariants() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = build_dual_env(&spec, 0, 30.0, 8).unwrap();
        for seed in 0..200 {
            let rec = simulate_y(&env, 0, 30.0, seed).unwrap();
            assert!(rec.w_values.windows(2).all(|w| w[0] < w[1]));
            assert!(rec.poisson_arrivals.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(rec.w_values.len(), rec.srw_steps.len());
            assert!(rec.srw_steps.iter().all(|d| d.abs() == 1));
            assert!(rec
                .clock_samples
                .windows(2)
                .all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn clock_consistency_identity() {
        // A(t) recomputed by integrating 2 b_{-s}(Y_s) along the realized path
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let horizon = 20.0;
        let env = build_dual_env(&spec, 0, horizon, 21).unwrap();
        for seed in 0..100 {
            let rec = simulate_y(&env, 0, horizon, seed).unwrap();
            let mut a = 0.0;
            let mut z = rec.start_vertex;
            let mut w_prev = 0.0;
            for (k, &w) in rec.w_values.iter().enumerate() {
                a += 2.0 * env.integrated_rate(Edge::new(z), -w, -w_prev).unwrap();
                z += rec.srw_steps[k];
                w_prev = w;
            }
            a += 2.0 * env.integrated_rate(Edge::new(z), -horizon, -w_prev).unwrap();
            let stored = rec.a_at_horizon();
            assert!(
                (a - stored).abs() <= 1e-10 * (1.0 + stored.abs()),
                "A mismatch: {a} vs {stored}"
            );
        }
    }

    #[test]
    fn constant_rate_return_probability_matches_kernel_oracle() {
        // P(Y_1 = 0) = exp(-1) I_0(1) for c = 0.5
        let c = 0.5;
        let spec = EnvSpec::constant(c);
        let n = 100_000usize;
        let env = build_dual_env(&spec, 0, 1.0, 2).unwrap();
        let hits: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let rec = simulate_y(&env, 0, 1.0, dual_path_seed(5150, i as u64)).unwrap();
                (rec.final_position() == 0) as u8 as f64
            })
            .collect();
        let est = Estimate::from_samples(&hits);
        let oracle = stats::constant_rate_kernel(c, 1.0, 0);
        assert!(
            est.within_k_se(oracle, 3.0),
            "P(Y_1 = 0) = {} +- {} vs {oracle}",
            est.value,
            est.se
        );
    }

    #[test]
    fn clock_slope_constant_exact() {
        let spec = EnvSpec::constant(1.0);
        let ens = ensemble_y(&spec, EnsembleMode::Quenched, 50, 100.0, 3).unwrap();
        let est = clock_slope(&ens).unwrap();
        assert!((est.value - 2.0).abs() < 1e-12, "slope {}", est.value);
        assert!(est.se < 1e-12);
    }

    #[test]
    fn clock_slope_static_iid_harmonic() {
        // sigma_hat^2 = 2 E(a phi) = 2 c_h = 8/3 for the {1,2} law
        let spec = EnvSpec::static_iid_12();
        let ens = ensemble_y(&spec, EnsembleMode::Annealed, 200, 2000.0, 1776).unwrap();
        let est = clock_slope(&ens).unwrap();
        let target = 8.0 / 3.0;
        assert!(
            (est.value - target).abs() / target < 0.05,
            "slope {} +- {}",
            est.value,
            est.se
        );
    }

    #[test]
    fn clock_slope_empty_rejected() {
        let ens = DualEnsemble {
            mode: EnsembleMode::Quenched,
            horizon: 1.0,
            final_positions: vec![],
            a_at_horizon: vec![],
            jump_counts: vec![],
            spec: EnvSpec::constant(1.0),
            master_seed: 0,
        };
        assert!(clock_slope(&ens).is_err());
    }

    #[test]
    fn clt_check_requires_paths() {
        let spec = EnvSpec::constant(1.0);
        let ens = ensemble_y(&spec, EnsembleMode::Quenched, 10, 10.0, 3).unwrap();
        assert!(dual_clt_check(&ens).is_err());
    }

    #[test]
    fn clt_check_constant_small() {
        let spec = EnvSpec::constant(1.0);
        let ens = ensemble_y(&spec, EnsembleMode::Quenched, 2000, 200.0, 31).unwrap();
        let (d, n) = dual_clt_check(&ens).unwrap();
        assert_eq!(n, 2000);
        assert!(d < 0.04, "KS distance {d}");
    }

    #[test]
    fn time_change_matches_event_driven_marginal() {
        // two-sample KS between the two simulators at the horizon
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let horizon = 50.0;
        let env = build_dual_env(&spec, 0, horizon, 44).unwrap();
        let n = 10_000usize;
        let a: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                simulate_y(&env, 0, horizon, dual_path_seed(100, i as u64))
                    .unwrap()
                    .final_position() as f64
            })
            .collect();
        let b: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                oracle::simulate_y_event_driven(
                    &env,
                    0,
                    horizon,
                    dual_path_seed(200, i as u64),
                    DEFAULT_MAX_STEPS,
                )
                .unwrap()
                .0 as f64
            })
            .collect();
        let d = stats::ks_two_sample(&a, &b);
        let p = stats::ks_two_sample_p_value(d, n, n);
        assert!(p > 0.001, "simulators disagree: D = {d}, p = {p}");
    }

    #[test]
    fn jump_rate_stable_across_horizon_doubling() {
        // non-explosion proxy: jumps per unit horizon have a stable finite
        // mean when the horizon doubles (annealed, independent draws)
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let e1 = ensemble_y(&spec, EnsembleMode::Annealed, 1000, 500.0, 5).unwrap();
        let e2 = ensemble_y(&spec, EnsembleMode::Annealed, 1000, 1000.0, 6).unwrap();
        let r1: Vec<f64> = e1.jump_counts.iter().map(|&c| c as f64 / 500.0).collect();
        let r2: Vec<f64> = e2.jump_counts.iter().map(|&c| c as f64 / 1000.0).collect();
        let m1 = Estimate::from_samples(&r1);
        let m2 = Estimate::from_samples(&r2);
        let gap = (m1.value - m2.value).abs();
        assert!(
            gap / m1.value < 0.03,
            "jump rates {} vs {} drift more than 3%",
            m1.value,
            m2.value
        );
    }

    #[test]
    fn clock_csv_shape() {
        let env = constant_env(1.0, 5.0, 3);
        let rec = simulate_y_with_clock(&env, 0, 5.0, 7, &[1.0, 2.0], DEFAULT_MAX_STEPS).unwrap();
        let csv = clock_csv(std::slice::from_ref(&rec));
        assert!(csv.starts_with("path_id,t,A_t\n"));
        assert!(csv.lines().count() >= 4);
    }
}
