//! Kolmogorov solves for the sub-stochastic kernel of the dual walk.
//!
//! The kernel `K(s, x; t, y)` is the probability that the dual walk started
//! at vertex `x` at time `s` sits at `y` after running down to the earlier
//! time `t <= s`. Grids are produced two ways:
//!
//! - anchoring the target `(t, y)` and evolving the source variables upward
//!   (the backward equation), or
//! - anchoring the source `(s, x)` and evolving the target variables
//!   downward (the forward equation).
//!
//! Both propagate by uniformization on constant-rate slices with an absorbing
//! spatial boundary; leaked mass is recorded, never redistributed. The
//! `n`-jump truncated kernels come from the same sweeps with explicit
//! jump-count bookkeeping.

mod phi;
mod slices;
mod uniform;

pub use phi::{
    chi_eps_truncated, chi_identity_residual, phi_eps, phi_eps_with_chi, phi_field_drive,
    phi_mean_check, phi_rows_at_times, recommended_phi_radius, t_max_for, weighted_l2_check,
    ChiEpsRecord, PhiEpsRecord, PhiSweep, SlicePhi,
};

use crate::env::EnvironmentWindow;
use crate::error::{Error, Result};
use crate::rng::Substream;
use crate::stats::poisson_upper_tail;
use serde::Serialize;
use slices::{SliceWalkerDown, SliceWalkerUp};
use uniform::{expmv_batch, expmv_levels, Orientation, Slice};

/// Solver window parameters: spatial radius around the anchor vertex,
/// uniformization tolerance, and optional extra time-grid points. The
/// boundary is always absorbing.
#[derive(Debug, Clone)]
pub struct WindowSpec {
    pub radius: i64,
    pub tolerance: f64,
    pub extra_times: Vec<f64>,
}

impl WindowSpec {
    pub fn new(radius: i64) -> Self {
        WindowSpec {
            radius,
            tolerance: 1e-12,
            extra_times: Vec::new(),
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_extra_times(mut self, times: Vec<f64>) -> Self {
        self.extra_times = times;
        self
    }
}

/// Smallest radius whose absorbing boundary leaks less than `tol` over a
/// solve of the given duration at the given rate bound, by the Poisson
/// jump-count tail.
pub fn radius_for_deficit(rate_bound: f64, duration: f64, tol: f64) -> i64 {
    let mean = 2.0 * rate_bound * duration;
    let mut r = mean.ceil() as u64 + 2;
    while poisson_upper_tail(mean, r) >= tol {
        r += (r / 4).max(2);
    }
    r as i64
}

/// Which kernel argument a grid is anchored at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Anchor {
    /// Fix the source `(s, x)`; the grid holds `K(s, x; t, y)` over `(t, y)`.
    Source { time: f64, vertex: i64 },
    /// Fix the target `(t, y)`; the grid holds `K(s, x; t, y)` over `(s, x)`.
    Target { time: f64, vertex: i64 },
}

impl Anchor {
    pub fn vertex(&self) -> i64 {
        match *self {
            Anchor::Source { vertex, .. } | Anchor::Target { vertex, .. } => vertex,
        }
    }

    pub fn time(&self) -> f64 {
        match *self {
            Anchor::Source { time, .. } | Anchor::Target { time, .. } => time,
        }
    }
}

/// Kernel values on a space-time grid.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    pub anchor: Anchor,
    pub x_lo: i64,
    pub x_hi: i64,
    /// Ascending; slice boundaries of the environment plus requested extras.
    pub times: Vec<f64>,
    /// Row-major `times.len() x width`.
    pub values: Vec<f64>,
    /// Truncation level; `None` is the untruncated kernel.
    pub n_jumps: Option<u32>,
    /// Per time: `1 - row mass`, attributable to jump truncation and spatial
    /// absorption. For target-anchored grids this is the worst case over
    /// in-window sources of the companion survival solve.
    pub mass_deficit: Vec<f64>,
    /// Per time: cumulative mass absorbed at the spatial boundary
    /// (source-anchored grids only).
    pub absorbed: Vec<f64>,
}

impl KernelGrid {
    pub fn width(&self) -> usize {
        (self.x_hi - self.x_lo + 1) as usize
    }

    pub fn row(&self, time_idx: usize) -> &[f64] {
        let w = self.width();
        &self.values[time_idx * w..(time_idx + 1) * w]
    }

    /// Value at `(time index, vertex)`; zero outside the window.
    pub fn value(&self, time_idx: usize, vertex: i64) -> f64 {
        if vertex < self.x_lo || vertex > self.x_hi {
            return 0.0;
        }
        self.row(time_idx)[(vertex - self.x_lo) as usize]
    }

    pub fn row_sum(&self, time_idx: usize) -> f64 {
        self.row(time_idx).iter().sum()
    }

    /// Index of an exact grid time.
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// CSV with columns `time,vertex,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,vertex,value\n");
        for (i, t) in self.times.iter().enumerate() {
            for x in self.x_lo..=self.x_hi {
                out.push_str(&format!("{t},{x},{}\n", self.value(i, x)));
            }
        }
        out
    }

    /// JSON summary: anchor, window, truncation, per-time mass accounting.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            anchor: &'a Anchor,
            x_lo: i64,
            x_hi: i64,
            n_times: usize,
            n_jumps: Option<u32>,
            final_row_sum: f64,
            max_mass_deficit: f64,
        }
        serde_json::to_string_pretty(&Summary {
            anchor: &self.anchor,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            n_times: self.times.len(),
            n_jumps: self.n_jumps,
            final_row_sum: self.row_sum(self.times.len() - 1),
            max_mass_deficit: self
                .mass_deficit
                .iter()
                .cloned()
                .fold(0.0f64, f64::max),
        })
        .expect("serializable")
    }
}

fn level_count(n_jumps: Option<u32>) -> usize {
    match n_jumps {
        // K_n restricts to fewer than n jumps: levels 0..n-1
        Some(n) => n as usize,
        None => 1,
    }
}

/// Solves for the untruncated kernel on `interval = [t_lo, t_hi]`.
///
/// For a target anchor, `anchor.time` must equal `t_lo`; for a source
/// anchor it must equal `t_hi`.
pub fn solve_kernel(
    env: &EnvironmentWindow,
    anchor: Anchor,
    interval: (f64, f64),
    window: &WindowSpec,
) -> Result<KernelGrid> {
    solve(env, anchor, interval, window, None)
}

/// Solves for the `n`-jump truncated kernel; `n = 0` is identically zero.
pub fn kernel_n(
    env: &EnvironmentWindow,
    anchor: Anchor,
    interval: (f64, f64),
    window: &WindowSpec,
    n: u32,
) -> Result<KernelGrid> {
    solve(env, anchor, interval, window, Some(n))
}

fn solve(
    env: &EnvironmentWindow,
    anchor: Anchor,
    interval: (f64, f64),
    window: &WindowSpec,
    n_jumps: Option<u32>,
) -> Result<KernelGrid> {
    let (t_lo, t_hi) = interval;
    if !(t_lo <= t_hi) {
        return Err(Error::config(format!("bad solve interval [{t_lo}, {t_hi}]")));
    }
    if window.radius < 1 {
        return Err(Error::config("window radius must be at least 1"));
    }
    match anchor {
        Anchor::Target { time, .. } if time != t_lo => {
            return Err(Error::config(
                "target anchor time must sit at the lower end of the interval",
            ))
        }
        Anchor::Source { time, .. } if time != t_hi => {
            return Err(Error::config(
                "source anchor time must sit at the upper end of the interval",
            ))
        }
        _ => {}
    }
    let center = anchor.vertex();
    let x_lo = center - window.radius;
    let x_hi = center + window.radius;
    let width = (x_hi - x_lo + 1) as usize;
    let levels_n = level_count(n_jumps);
    let truncated_to_zero = n_jumps == Some(0);

    // cut times: requested extras, strictly inside the interval
    let mut cuts: Vec<f64> = window
        .extra_times
        .iter()
        .cloned()
        .filter(|t| *t > t_lo && *t < t_hi)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut deficits = Vec::new();
    let mut absorbed_cum = Vec::new();

    match anchor {
        Anchor::Target { vertex, .. } => {
            // backward sweep upward; companion survival solve for deficits
            let mut levels: Vec<Vec<f64>> = vec![vec![0.0; width]; levels_n.max(1)];
            if !truncated_to_zero {
                levels[0][(vertex - x_lo) as usize] = 1.0;
            }
            let mut survival: Vec<Vec<f64>> = vec![vec![0.0; width]; levels_n.max(1)];
            if !truncated_to_zero {
                for x in survival[0].iter_mut() {
                    *x = 1.0;
                }
            }
            let mut walker = SliceWalkerUp::new(env, x_lo, x_hi, t_lo, t_hi)?;
            let record =
                |t: f64, levels: &[Vec<f64>], survival: &[Vec<f64>], times: &mut Vec<f64>, values: &mut Vec<f64>, deficits: &mut Vec<f64>| {
                    times.push(t);
                    for i in 0..width {
                        values.push(levels.iter().map(|l| l[i]).sum::<f64>());
                    }
                    let worst = (0..width)
                        .map(|i| 1.0 - survival.iter().map(|l| l[i]).sum::<f64>())
                        .fold(0.0f64, f64::max);
                    deficits.push(worst.max(0.0));
                };
            record(t_lo, &levels, &survival, &mut times, &mut values, &mut deficits);
            let mut cut_idx = 0usize;
            while let Some((a, c)) = walker.next_slice() {
                let b = walker.rates().to_vec();
                let mut seg_lo = a;
                loop {
                    let seg_hi = if cut_idx < cuts.len() && cuts[cut_idx] > seg_lo && cuts[cut_idx] < c {
                        let s = cuts[cut_idx];
                        cut_idx += 1;
                        s
                    } else {
                        c
                    };
                    let slice = Slice {
                        b: &b,
                        dt: seg_hi - seg_lo,
                        orientation: Orientation::Backward,
                        tol: window.tolerance,
                    };
                    if n_jumps.is_none() {
                        expmv_batch(&slice, &mut [&mut levels[0], &mut survival[0]])?;
                    } else if !truncated_to_zero {
                        expmv_levels(&slice, &mut levels, None)?;
                        expmv_levels(&slice, &mut survival, None)?;
                    }
                    record(seg_hi, &levels, &survival, &mut times, &mut values, &mut deficits);
                    if seg_hi == c {
                        break;
                    }
                    seg_lo = seg_hi;
                }
            }
        }
        Anchor::Source { vertex, .. } => {
            let mut levels: Vec<Vec<f64>> = vec![vec![0.0; width]; levels_n.max(1)];
            if !truncated_to_zero {
                levels[0][(vertex - x_lo) as usize] = 1.0;
            }
            let mut walker = SliceWalkerDown::new(env, x_lo, x_hi, t_hi, t_lo)?;
            let mut rows_rev: Vec<(f64, Vec<f64>, f64)> = Vec::new();
            let mut absorbed = 0.0f64;
            let push_row = |t: f64,
                            levels: &[Vec<f64>],
                            absorbed: f64,
                            rows: &mut Vec<(f64, Vec<f64>, f64)>| {
                let mut row = vec![0.0; width];
                for (i, r) in row.iter_mut().enumerate() {
                    *r = levels.iter().map(|l| l[i]).sum::<f64>();
                }
                rows.push((t, row, absorbed));
            };
            push_row(t_hi, &levels, absorbed, &mut rows_rev);
            let mut cuts_rev = cuts.clone();
            cuts_rev.reverse();
            let mut cut_idx = 0usize;
            while let Some((a, c)) = walker.next_slice()? {
                let b = walker.rates().to_vec();
                let mut seg_hi = c;
                loop {
                    let seg_lo = if cut_idx < cuts_rev.len()
                        && cuts_rev[cut_idx] < seg_hi
                        && cuts_rev[cut_idx] > a
                    {
                        let s = cuts_rev[cut_idx];
                        cut_idx += 1;
                        s
                    } else {
                        a
                    };
                    let slice = Slice {
                        b: &b,
                        dt: seg_hi - seg_lo,
                        orientation: Orientation::Adjoint,
                        tol: window.tolerance,
                    };
                    if n_jumps.is_none() {
                        absorbed += expmv_batch(&slice, &mut [&mut levels[0]])?;
                    } else if !truncated_to_zero {
                        let before: f64 = levels.iter().map(|l| l.iter().sum::<f64>()).sum();
                        expmv_levels(&slice, &mut levels, None)?;
                        let after: f64 = levels.iter().map(|l| l.iter().sum::<f64>()).sum();
                        // for truncated kernels the deficit also counts mass
                        // parked in never-tracked higher jump levels
                        absorbed += (before - after).max(0.0);
                    }
                    push_row(seg_lo, &levels, absorbed, &mut rows_rev);
                    if seg_lo == a {
                        break;
                    }
                    seg_hi = seg_lo;
                }
            }
            rows_rev.reverse();
            for (t, row, abs_mass) in rows_rev {
                times.push(t);
                let mass: f64 = row.iter().sum();
                values.extend_from_slice(&row);
                deficits.push((1.0 - mass).max(0.0));
                absorbed_cum.push(abs_mass);
            }
        }
    }

    Ok(KernelGrid {
        anchor,
        x_lo,
        x_hi,
        times,
        values,
        n_jumps,
        mass_deficit: deficits,
        absorbed: absorbed_cum,
    })
}

/// Compares the kernel computed on `env` against the kernel computed on
/// random shift views at corresponding arguments; returns the maximum
/// absolute violation over the probes.
pub fn shift_covariance_check(
    env: &EnvironmentWindow,
    n_probes: usize,
    probe_seed: u64,
    window: &WindowSpec,
) -> Result<f64> {
    let mut stream = Substream::new(probe_seed);
    let mut worst = 0.0f64;
    for _ in 0..n_probes {
        let u = 4.0 * stream.next_f64() - 2.0;
        let z = (stream.next_u64() % 11) as i64 - 5;
        let t_hi = 1.0 + stream.next_f64();
        let dt = 0.5 + 0.5 * stream.next_f64();
        let grid = solve_kernel(
            env,
            Anchor::Source {
                time: t_hi,
                vertex: 0,
            },
            (t_hi - dt, t_hi),
            window,
        )?;
        let shifted = env.shift_view(u, z);
        let grid_shifted = solve_kernel(
            &shifted,
            Anchor::Source {
                time: t_hi - u,
                vertex: -z,
            },
            (t_hi - dt - u, t_hi - u),
            window,
        )?;
        // same slice structure, so rows correspond index by index
        if grid.times.len() != grid_shifted.times.len() {
            return Err(Error::config(
                "shifted solve produced a different slice structure",
            ));
        }
        for (i, _) in grid.times.iter().enumerate() {
            for y in (grid.x_lo)..=(grid.x_hi) {
                let lhs = grid.value(i, y);
                let rhs = grid_shifted.value(i, y - z);
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(worst)
}
