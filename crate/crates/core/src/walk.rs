//! Exact event-driven simulation of the variable-speed walk.
//!
//! The walk sits at a vertex until one of its two incident edges "rings"; the
//! next ring time of an edge with piecewise-constant rate is sampled exactly
//! by drawing an Exponential(1) target and inverting the integrated rate
//! along the track, so there is no thinning and no time discretization.
//!
//! ## Ensemble binary trace format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic   8 bytes  b"CWTRACE1"
//! version u64      1
//! n_paths u64
//! n_times u64
//! times   f64 * n_times
//! per path:
//!   path_id   u64
//!   truncated u64 (0/1)
//!   positions i64 * n_times
//! ```

use crate::env::{annealed_env_seed, Edge, EnvSpec, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::rng::{self, derive_key, Substream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Default step guard for a single path.
pub const DEFAULT_MAX_STEPS: usize = 10_000_000;

/// A realized cadlag trajectory: jump times and the position after each jump.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub start_vertex: i64,
    pub jump_times: Vec<f64>,
    pub positions: Vec<i64>,
    pub horizon: f64,
    pub seed: u64,
    /// Set when the step guard stopped the path before the horizon.
    pub truncated: bool,
}

impl PathRecord {
    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Right-continuous step interpolation on `[0, horizon]`.
    pub fn position_at(&self, t: f64) -> i64 {
        debug_assert!((0.0..=self.horizon).contains(&t));
        match self
            .jump_times
            .binary_search_by(|jt| jt.partial_cmp(&t).unwrap())
        {
            Ok(i) => self.positions[i],
            Err(0) => self.start_vertex,
            Err(i) => self.positions[i - 1],
        }
    }
}

/// Quenched ensembles reuse one environment; annealed ensembles draw a fresh
/// environment per path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Quenched,
    Annealed,
}

/// Positions of an ensemble of paths at fixed sample times.
#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub mode: EnsembleMode,
    pub n_paths: usize,
    pub sample_times: Vec<f64>,
    /// Row-major `n_paths x sample_times.len()`.
    pub positions: Vec<i64>,
    pub spec: EnvSpec,
    pub master_seed: u64,
    /// The shared environment seed in quenched mode.
    pub env_seed: Option<u64>,
    pub truncated_paths: Vec<usize>,
}

impl EnsembleSummary {
    pub fn row(&self, path: usize) -> &[i64] {
        let w = self.sample_times.len();
        &self.positions[path * w..(path + 1) * w]
    }

    /// Positions at one sample time across paths, as floats.
    pub fn column_f64(&self, time_idx: usize) -> Vec<f64> {
        (0..self.n_paths)
            .map(|p| self.row(p)[time_idx] as f64)
            .collect()
    }

    /// CSV with columns `path_id,time,position`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path_id,time,position\n");
        for p in 0..self.n_paths {
            for (k, t) in self.sample_times.iter().enumerate() {
                out.push_str(&format!("{p},{t},{}\n", self.row(p)[k]));
            }
        }
        out
    }

    /// Compact binary trace (see module docs).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"CWTRACE1")?;
        w.write_all(&1u64.to_le_bytes())?;
        w.write_all(&(self.n_paths as u64).to_le_bytes())?;
        w.write_all(&(self.sample_times.len() as u64).to_le_bytes())?;
        for t in &self.sample_times {
            w.write_all(&t.to_le_bytes())?;
        }
        for p in 0..self.n_paths {
            w.write_all(&(p as u64).to_le_bytes())?;
            w.write_all(&(self.truncated_paths.contains(&p) as u64).to_le_bytes())?;
            for x in self.row(p) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads back a binary trace; returns `(times, positions, truncated)`.
    pub fn read_binary<R: Read>(mut r: R) -> Result<(Vec<f64>, Vec<i64>, Vec<usize>)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"CWTRACE1" {
            return Err(Error::config("bad trace magic"));
        }
        let mut u = [0u8; 8];
        r.read_exact(&mut u)?;
        if u64::from_le_bytes(u) != 1 {
            return Err(Error::config("unsupported trace version"));
        }
        r.read_exact(&mut u)?;
        let n_paths = u64::from_le_bytes(u) as usize;
        r.read_exact(&mut u)?;
        let n_times = u64::from_le_bytes(u) as usize;
        let mut times = Vec::with_capacity(n_times);
        for _ in 0..n_times {
            r.read_exact(&mut u)?;
            times.push(f64::from_le_bytes(u));
        }
        let mut positions = Vec::with_capacity(n_paths * n_times);
        let mut truncated = Vec::new();
        for p in 0..n_paths {
            r.read_exact(&mut u)?; // path id
            r.read_exact(&mut u)?;
            if u64::from_le_bytes(u) == 1 {
                truncated.push(p);
            }
            for _ in 0..n_times {
                r.read_exact(&mut u)?;
                positions.push(i64::from_le_bytes(u));
            }
        }
        Ok((times, positions, truncated))
    }
}

/// Sizing rule for ensemble windows: diffusive scale with a safety margin.
pub fn default_half_width(spec: &EnvSpec, horizon: f64) -> i64 {
    let mean = spec.mean_rate().unwrap_or(1.0);
    (6.0 * (2.0 * mean * horizon).sqrt()).ceil() as i64 + 64
}

/// Builds an environment window adequate for walks over `[0, horizon]`.
pub fn build_walk_env(spec: &EnvSpec, x0: i64, horizon: f64, env_seed: u64) -> Result<EnvironmentWindow> {
    let hw = default_half_width(spec, horizon.max(1.0));
    EnvironmentWindow::build(spec, x0 - hw, x0 + hw, 0.0, horizon.max(f64::MIN_POSITIVE), env_seed)
}

struct Stepper {
    env: EnvironmentWindow,
    allow_extension: bool,
}

impl Stepper {
    /// Ensures edges `x-1` and `x` are queryable, extending if allowed.
    fn ensure_coverage(&mut self, x: i64) -> Result<()> {
        if x - 1 >= self.env.x_min() && x < self.env.x_max() {
            return Ok(());
        }
        if !self.allow_extension {
            return Err(Error::WindowExhausted(format!(
                "walk reached {x}, window vertices [{}, {}]",
                self.env.x_min(),
                self.env.x_max()
            )));
        }
        let width = (self.env.x_max() - self.env.x_min()).max(64);
        self.env = self.env.extended(
            self.env.x_min().min(x) - width,
            self.env.x_max().max(x) + width,
            self.env.t_min(),
            self.env.t_max(),
        )?;
        Ok(())
    }

    /// Runs the walk, invoking `on_jump(time, new_position)` per jump.
    /// Returns whether the step guard truncated the path.
    fn run<F: FnMut(f64, i64)>(
        &mut self,
        x0: i64,
        horizon: f64,
        seed: u64,
        max_steps: usize,
        mut on_jump: F,
    ) -> Result<bool> {
        let mut stream = Substream::new(seed);
        let mut t = 0.0;
        let mut x = x0;
        self.ensure_coverage(x)?;
        let mut steps = 0usize;
        while t < horizon {
            if steps >= max_steps {
                return Ok(true);
            }
            // fresh Exponential(1) targets each visit: exact by memorylessness
            let target_right = stream.exp1();
            let target_left = stream.exp1();
            let ring_right = self.env.invert_mass_up(Edge::new(x), t, target_right, horizon)?;
            let ring_left = self.env.invert_mass_up(Edge::new(x - 1), t, target_left, horizon)?;
            let (jump_time, dx) = match (ring_right, ring_left) {
                (None, None) => break,
                (Some(tr), None) => (tr, 1),
                (None, Some(tl)) => (tl, -1),
                (Some(tr), Some(tl)) => {
                    if tr <= tl {
                        (tr, 1)
                    } else {
                        (tl, -1)
                    }
                }
            };
            t = jump_time;
            x += dx;
            self.ensure_coverage(x)?;
            on_jump(t, x);
            steps += 1;
        }
        Ok(false)
    }
}

/// Simulates one path of the walk on `[0, horizon]`.
///
/// The path is a deterministic function of `(env, seed)`; the environment is
/// extended deterministically if the walk wanders outside its vertex range.
pub fn simulate_x(
    env: &EnvironmentWindow,
    x0: i64,
    horizon: f64,
    seed: u64,
    max_steps: usize,
) -> Result<PathRecord> {
    check_time_coverage(env, horizon)?;
    let mut jump_times = Vec::new();
    let mut positions = Vec::new();
    let mut stepper = Stepper {
        env: env.clone(),
        allow_extension: true,
    };
    let truncated = stepper.run(x0, horizon, seed, max_steps, |t, x| {
        jump_times.push(t);
        positions.push(x);
    })?;
    Ok(PathRecord {
        start_vertex: x0,
        jump_times,
        positions,
        horizon,
        seed,
        truncated,
    })
}

/// Simulates one path, recording positions only at the given sorted sample
/// times. Identical dynamics and randomness consumption to [`simulate_x`].
pub fn simulate_x_sampled(
    env: &EnvironmentWindow,
    x0: i64,
    sample_times: &[f64],
    seed: u64,
    max_steps: usize,
) -> Result<(Vec<i64>, bool)> {
    let horizon = sample_times.last().copied().unwrap_or(0.0);
    check_time_coverage(env, horizon)?;
    let mut stepper = Stepper {
        env: env.clone(),
        allow_extension: true,
    };
    let mut out = Vec::with_capacity(sample_times.len());
    let mut current = x0;
    let mut k = 0usize;
    let truncated = stepper.run(x0, horizon, seed, max_steps, |t, x| {
        while k < sample_times.len() && sample_times[k] < t {
            out.push(current);
            k += 1;
        }
        current = x;
    })?;
    while k < sample_times.len() {
        out.push(current);
        k += 1;
    }
    Ok((out, truncated))
}

fn check_time_coverage(env: &EnvironmentWindow, horizon: f64) -> Result<()> {
    if horizon < 0.0 {
        return Err(Error::config("negative horizon"));
    }
    if env.t_min() > 0.0 || env.t_max() < horizon {
        return Err(Error::config(format!(
            "environment time range [{}, {}] does not cover [0, {horizon}]",
            env.t_min(),
            env.t_max()
        )));
    }
    Ok(())
}

/// Derives the walk seed for path `i` of an ensemble.
pub fn path_seed(master_seed: u64, path_index: u64) -> u64 {
    derive_key(master_seed, &[rng::stream::WALK, path_index])
}

/// Derives the shared environment seed of a quenched ensemble.
pub fn quenched_env_seed(master_seed: u64) -> u64 {
    derive_key(master_seed, &[rng::stream::ENV])
}

/// Simulates an ensemble, parallel over paths with deterministic aggregation
/// by path index. Results are independent of worker count.
pub fn ensemble_x(
    spec: &EnvSpec,
    mode: EnsembleMode,
    n_paths: usize,
    sample_times: &[f64],
    master_seed: u64,
) -> Result<EnsembleSummary> {
    ensemble_x_with(spec, mode, n_paths, sample_times, master_seed, DEFAULT_MAX_STEPS, 0)
}

/// [`ensemble_x`] with an explicit step guard and start vertex.
pub fn ensemble_x_with(
    spec: &EnvSpec,
    mode: EnsembleMode,
    n_paths: usize,
    sample_times: &[f64],
    master_seed: u64,
    max_steps: usize,
    x0: i64,
) -> Result<EnsembleSummary> {
    if n_paths == 0 {
        return Err(Error::config("n_paths must be at least 1"));
    }
    if sample_times.is_empty() || sample_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::config("sample_times must be nonempty and sorted"));
    }
    if sample_times[0] <= 0.0 && sample_times.len() > 1 {
        // a single t=0 sample is allowed for degenerate checks
        return Err(Error::config("sample_times must be positive"));
    }
    let horizon = *sample_times.last().unwrap();
    let quenched_env = match mode {
        EnsembleMode::Quenched => Some(build_walk_env(
            spec,
            x0,
            horizon,
            quenched_env_seed(master_seed),
        )?),
        EnsembleMode::Annealed => None,
    };
    let rows: Vec<Result<(Vec<i64>, bool)>> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let env = match &quenched_env {
                Some(env) => env.clone(),
                None => build_walk_env(spec, x0, horizon, annealed_env_seed(master_seed, i as u64))?,
            };
            simulate_x_sampled(&env, x0, sample_times, path_seed(master_seed, i as u64), max_steps)
                .map_err(|e| match e {
                    Error::WindowExhausted(msg) => {
                        Error::WindowExhausted(format!("path {i}: {msg}"))
                    }
                    other => other,
                })
        })
        .collect();
    let mut positions = Vec::with_capacity(n_paths * sample_times.len());
    let mut truncated_paths = Vec::new();
    for (i, row) in rows.into_iter().enumerate() {
        let (row, truncated) = row?;
        positions.extend_from_slice(&row);
        if truncated {
            truncated_paths.push(i);
        }
    }
    Ok(EnsembleSummary {
        mode,
        n_paths,
        sample_times: sample_times.to_vec(),
        positions,
        spec: spec.clone(),
        master_seed,
        env_seed: quenched_env.map(|e| e.base_seed()),
        truncated_paths,
    })
}

/// Diffusively rescaled sample matrix: `X_{n t} / sqrt(n)` for each `t` in
/// the grid. The summary must have been sampled exactly at the times `n * t`.
pub fn rescale_paths(summary: &EnsembleSummary, n: f64, t_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    if n <= 0.0 {
        return Err(Error::config("rescaling index must be positive"));
    }
    let sqrt_n = n.sqrt();
    let mut col_idx = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let target = n * t;
        let idx = summary
            .sample_times
            .iter()
            .position(|&s| s == target)
            .ok_or_else(|| {
                Error::config(format!(
                    "sample grid mismatch: time {target} (= {n} * {t}) not sampled"
                ))
            })?;
        col_idx.push(idx);
    }
    Ok((0..summary.n_paths)
        .map(|p| {
            let row = summary.row(p);
            col_idx.iter().map(|&k| row[k] as f64 / sqrt_n).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn zero_horizon_path_is_empty() {
        let spec = EnvSpec::constant(1.0);
        let env = EnvironmentWindow::build(&spec, -4, 4, 0.0, 1.0, 3).unwrap();
        let path = simulate_x(&env, 0, 0.0, 11, 1000).unwrap();
        assert!(path.jump_times.is_empty());
        assert_eq!(path.position_at(0.0), 0);
        assert!(!path.truncated);
    }

    #[test]
    fn paths_are_nearest_neighbor_cadlag() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = build_walk_env(&spec, 0, 20.0, 5).unwrap();
        for seed in 0..1000u64 {
            let path = simulate_x(&env, 0, 20.0, seed, 100_000).unwrap();
            let mut prev_t = 0.0;
            let mut prev_x = path.start_vertex;
            for (k, (&t, &x)) in path.jump_times.iter().zip(&path.positions).enumerate() {
                assert!(t > prev_t, "jump times not strictly increasing at {k}");
                assert!(t <= path.horizon);
                assert_eq!((x - prev_x).abs(), 1, "jump size != 1 at {k}");
                prev_t = t;
                prev_x = x;
            }
        }
    }

    #[test]
    fn constant_rate_jump_count_oracle() {
        // total jump rate 2c; jumps on [0, t] ~ Poisson(2ct)
        let (c, t, n) = (1.0, 50.0, 10_000usize);
        let spec = EnvSpec::constant(c);
        let env = build_walk_env(&spec, 0, t, 7).unwrap();
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                simulate_x(&env, 0, t, path_seed(40, i as u64), 1_000_000)
                    .unwrap()
                    .jump_count() as f64
            })
            .collect();
        let est = stats::Estimate::from_samples(&counts);
        assert!(
            est.within_k_se(2.0 * c * t, 3.0),
            "mean jumps {} +- {} vs {}",
            est.value,
            est.se,
            2.0 * c * t
        );
    }

    #[test]
    fn constant_rate_variance_oracle() {
        // Var(X_t) = 2 c t for the compound +-1 Poisson walk
        let (c, t, n) = (1.0, 50.0, 10_000usize);
        let spec = EnvSpec::constant(c);
        let summary =
            ensemble_x(&spec, EnsembleMode::Quenched, n, &[t], 1234).unwrap();
        let xs = summary.column_f64(0);
        let est = stats::variance_estimate(&xs);
        assert!(
            (est.value / t - 2.0 * c).abs() < 3.0 * est.se / t,
            "Var/t = {} +- {}",
            est.value / t,
            est.se / t
        );
    }

    #[test]
    fn clock_inversion_is_exponential() {
        // next-ring sampling on a constant-c track: gaps ~ Exponential(c)
        let c = 0.7;
        let spec = EnvSpec::constant(c);
        let env = EnvironmentWindow::build(&spec, 0, 2, 0.0, 1e7, 1).unwrap();
        let mut stream = Substream::new(2024);
        let gaps: Vec<f64> = (0..10_000)
            .map(|k| {
                let t0 = (k % 100) as f64;
                let ring = env
                    .invert_mass_up(Edge::new(0), t0, stream.exp1(), 1e7)
                    .unwrap()
                    .unwrap();
                ring - t0
            })
            .collect();
        let d = stats::ks_distance(&gaps, |x| 1.0 - (-c * x).exp());
        let p = stats::ks_p_value(d, gaps.len());
        assert!(p > 0.001, "KS p = {p}, D = {d}");
    }

    #[test]
    fn no_truncation_for_bounded_compliant_spec() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let summary = ensemble_x_with(
            &spec,
            EnsembleMode::Quenched,
            200,
            &[1000.0],
            555,
            1_000_000,
            0,
        )
        .unwrap();
        assert!(summary.truncated_paths.is_empty());
    }

    #[test]
    fn quenched_determinism() {
        let spec = EnvSpec::static_iid_12();
        let a = ensemble_x(&spec, EnsembleMode::Quenched, 50, &[5.0, 10.0], 99).unwrap();
        let b = ensemble_x(&spec, EnsembleMode::Quenched, 50, &[5.0, 10.0], 99).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.truncated_paths, b.truncated_paths);
    }

    #[test]
    fn worker_count_independence() {
        let spec = EnvSpec::static_iid_12();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1
            .install(|| ensemble_x(&spec, EnsembleMode::Quenched, 64, &[8.0], 7).unwrap());
        let b = pool4
            .install(|| ensemble_x(&spec, EnsembleMode::Quenched, 64, &[8.0], 7).unwrap());
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn single_path_ensemble_matches_simulate() {
        let spec = EnvSpec::constant(1.0);
        let summary = ensemble_x(&spec, EnsembleMode::Quenched, 1, &[3.0, 7.0], 42).unwrap();
        let env = build_walk_env(&spec, 0, 7.0, quenched_env_seed(42)).unwrap();
        let path = simulate_x(&env, 0, 7.0, path_seed(42, 0), DEFAULT_MAX_STEPS).unwrap();
        assert_eq!(summary.row(0), &[path.position_at(3.0), path.position_at(7.0)]);
    }

    #[test]
    fn rescale_identity_and_grid_mismatch() {
        let spec = EnvSpec::constant(1.0);
        let summary = ensemble_x(&spec, EnsembleMode::Quenched, 10, &[2.0, 4.0], 1).unwrap();
        let scaled = rescale_paths(&summary, 1.0, &[2.0, 4.0]).unwrap();
        for p in 0..10 {
            assert_eq!(scaled[p][0], summary.row(p)[0] as f64);
        }
        assert!(rescale_paths(&summary, 2.0, &[3.0]).is_err());
        // n = 4 with t-grid {1}: uses the t = 4 column / 2
        let scaled = rescale_paths(&summary, 4.0, &[1.0]).unwrap();
        for p in 0..10 {
            assert_eq!(scaled[p][0], summary.row(p)[1] as f64 / 2.0);
        }
    }

    #[test]
    fn zero_positions_rescale_to_zero() {
        let summary = EnsembleSummary {
            mode: EnsembleMode::Quenched,
            n_paths: 3,
            sample_times: vec![10.0],
            positions: vec![0, 0, 0],
            spec: EnvSpec::constant(1.0),
            master_seed: 0,
            env_seed: None,
            truncated_paths: vec![],
        };
        let scaled = rescale_paths(&summary, 10.0, &[1.0]).unwrap();
        assert!(scaled.iter().all(|row| row[0] == 0.0));
    }

    #[test]
    fn binary_trace_roundtrip() {
        let spec = EnvSpec::constant(1.0);
        let summary = ensemble_x(&spec, EnsembleMode::Quenched, 5, &[1.0, 2.0], 3).unwrap();
        let mut buf = Vec::new();
        summary.write_binary(&mut buf).unwrap();
        let (times, positions, truncated) =
            EnsembleSummary::read_binary(buf.as_slice()).unwrap();
        assert_eq!(times, summary.sample_times);
        assert_eq!(positions, summary.positions);
        assert_eq!(truncated, summary.truncated_paths);
    }

    #[test]
    fn csv_shape() {
        let spec = EnvSpec::constant(1.0);
        let summary = ensemble_x(&spec, EnsembleMode::Quenched, 2, &[1.0], 3).unwrap();
        let csv = summary.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "path_id,time,position");
        assert_eq!(lines.len(), 3);
    }
}
