//! The Laplace-averaged invariant density and the truncated stationary
//! corrector.
//!
//! `phi_eps` is the exponentially weighted time average of the source-summed
//! kernel, `eps int_0^inf e^{-eps t} sum_y K(t, y; 0, 0) dt`. Three
//! evaluation strategies share the same uniformization core:
//!
//! - a single upward sweep from one anchor (used for Monte-Carlo moment
//!   checks over environments),
//! - a single downward accumulation sweep that yields `phi_eps` rows for a
//!   whole grid of space-time shifts and several `eps` at once (used to build
//!   density fields), and
//! - a family of downward sweeps feeding a Gauss-Legendre quadrature for the
//!   truncated corrector `chi_{eps,n}` (whose inner time integrals are
//!   evaluated in closed form per slice).
//!
//! Laplace weights are integrated exactly per constant-rate slice through the
//! Poisson-mixture identity, so there is no quadrature grid in `t`; the only
//! numerical knobs are the series tolerance, the spatial window and the
//! integral truncation horizon, each of which carries an explicit bound.

use crate::env::{annealed_env_seed, Edge, EnvSpec, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::stats::Estimate;
use rayon::prelude::*;
use serde::Serialize;

use super::slices::{SliceWalkerDown, SliceWalkerUp};
use super::uniform::{expmv_batch, expmv_levels, laplace_ones, LevelIntegrals, Orientation, Slice};
use super::WindowSpec;

/// Truncation horizon with `e^{-eps t_max} = tail_tol`.
pub fn t_max_for(eps: f64, tail_tol: f64) -> f64 {
    -(tail_tol.ln()) / eps
}

/// Diffusive window radius for a sweep of duration `t_max`.
pub fn recommended_phi_radius(spec: &EnvSpec, t_max: f64, sigma_pad: f64, margin: i64) -> i64 {
    let mean = spec.mean_rate().unwrap_or(1.0);
    (sigma_pad * (2.0 * mean * t_max).sqrt()).ceil() as i64 + margin
}

/// `phi_eps` (or its jump-truncated version) on a grid of space-time shifts.
#[derive(Debug, Clone, Serialize)]
pub struct PhiEpsRecord {
    pub epsilon: f64,
    /// `None` is the untruncated kernel.
    pub n_jumps: Option<u32>,
    pub shifts: Vec<(f64, i64)>,
    pub value_grid: Vec<f64>,
    /// Truncated corrector values on the same grid (only for finite `n_jumps`).
    pub chi_eps_grid: Option<Vec<f64>>,
    pub t_max_integral: f64,
    pub tail_bound: f64,
}

/// `chi_{eps,n}` values with the a-priori bound reported alongside.
#[derive(Debug, Clone, Serialize)]
pub struct ChiEpsRecord {
    pub epsilon: f64,
    pub n_jumps: u32,
    pub shifts: Vec<(f64, i64)>,
    pub values: Vec<f64>,
    /// Per shift: `(2n+1) int_0^{t_max} e^{-eps u} [b(x) + b(x-1)] du`.
    pub bounds: Vec<f64>,
    /// Per shift: the finite-truncation defect
    /// `2 int_0^inf e^{-eps t} b_t(x) (phi_{eps,n+1} - phi_{eps,n})(t, x) dt`.
    /// The exact lattice-gradient identity at truncation level `n` reads
    /// `chi(x+1) - chi(x) = phi_{eps,n+1} - 1 + correction(x)`; the
    /// correction vanishes as `n` grows.
    pub corrections: Vec<f64>,
    pub t_max_integral: f64,
}

/// One `phi_eps` evaluation by an upward sweep from the anchor.
///
/// Returns the per-level Laplace sums: `phi_{eps,n} = eps * sum_{j<n}` and
/// the untruncated value is the single entry when `n_jumps` is `None`.
fn phi_sweep_up(
    env: &EnvironmentWindow,
    eps: f64,
    n_jumps: Option<u32>,
    anchor_t: f64,
    anchor_x: i64,
    radius: i64,
    uniform_tol: f64,
    t_max: f64,
) -> Result<Vec<f64>> {
    let x_lo = anchor_x - radius;
    let x_hi = anchor_x + radius;
    let width = (x_hi - x_lo + 1) as usize;
    let n_levels = match n_jumps {
        Some(0) => return Ok(vec![]),
        Some(n) => n as usize,
        None => 1,
    };
    let coupled = n_jumps.is_some();
    let mut levels: Vec<Vec<f64>> = vec![vec![0.0; width]; n_levels];
    levels[0][(anchor_x - x_lo) as usize] = 1.0;
    let mut sums = vec![0.0f64; n_levels];
    let t_top = anchor_t + t_max;
    let mut walker = SliceWalkerUp::new(env, x_lo, x_hi, anchor_t, t_top)?;
    while let Some((a, c)) = walker.next_slice() {
        let dt = c - a;
        let slice = Slice {
            b: walker.rates(),
            dt,
            orientation: Orientation::Backward,
            tol: uniform_tol * (dt / t_max).max(1e-6),
        };
        let scale = (-eps * (a - anchor_t)).exp();
        if coupled {
            expmv_levels(
                &slice,
                &mut levels,
                Some(LevelIntegrals {
                    laplace: Some((eps, scale, &mut sums)),
                    plain_vec: None,
                }),
            )?;
        } else {
            // untruncated: same machinery with the full flow in one level
            expmv_full(&slice, &mut levels[0], eps, scale, &mut sums[0])?;
        }
    }
    Ok(sums)
}

/// Full-flow variant of the leveled sweep: evolves one vector under the plain
/// uniformization step while accumulating its Laplace-weighted window sum.
fn expmv_full(
    slice: &Slice,
    v: &mut Vec<f64>,
    eps: f64,
    scale: f64,
    sum: &mut f64,
) -> Result<()> {
    // reuse the leveled engine with a single uncoupled level by exploiting
    // that Independent evolution equals JumpLevels with the feed redirected;
    // simplest correct route: treat the full flow as levels with a large
    // cap is wrong, so this calls the dedicated independent path below.
    super::uniform::expmv_independent_with_laplace(slice, v, eps, scale, sum)
}

/// Evaluates `phi_eps` (and, for finite `n`, `chi_{eps,n}`) at a grid of
/// space-time shifts.
pub fn phi_eps(
    env: &EnvironmentWindow,
    epsilon: f64,
    n_jumps: Option<u32>,
    shifts: &[(f64, i64)],
    window: &WindowSpec,
    tail_tol: f64,
) -> Result<PhiEpsRecord> {
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon must be positive"));
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return Err(Error::config("tail tolerance must lie in (0, 1)"));
    }
    let t_max = t_max_for(epsilon, tail_tol);
    let values: Vec<f64> = shifts
        .par_iter()
        .map(|&(t, x)| {
            let sums = phi_sweep_up(
                env,
                epsilon,
                n_jumps,
                t,
                x,
                window.radius,
                window.tolerance,
                t_max,
            )?;
            Ok(epsilon * sums.iter().sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(PhiEpsRecord {
        epsilon,
        n_jumps,
        shifts: shifts.to_vec(),
        value_grid: values,
        chi_eps_grid: None,
        t_max_integral: t_max,
        tail_bound: (-epsilon * t_max).exp(),
    })
}

/// [`phi_eps`] with the truncated-corrector grid filled in (finite `n` only;
/// the corrector sweeps are much heavier than the density sweeps, so they
/// are opt-in).
pub fn phi_eps_with_chi(
    env: &EnvironmentWindow,
    epsilon: f64,
    n_jumps: u32,
    shifts: &[(f64, i64)],
    window: &WindowSpec,
    tail_tol: f64,
) -> Result<PhiEpsRecord> {
    let mut rec = phi_eps(env, epsilon, Some(n_jumps), shifts, window, tail_tol)?;
    rec.chi_eps_grid = if n_jumps >= 1 {
        Some(chi_eps_truncated(env, epsilon, n_jumps, shifts, window.tolerance, tail_tol)?.values)
    } else {
        Some(vec![0.0; shifts.len()])
    };
    Ok(rec)
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// The truncated corrector
/// `chi_{eps,n} = int_0^inf e^{-eps t} [b_t(0) phi_{eps,n}(t,0) - b_t(-1) phi_{eps,n}(t,-1)] dt`
/// evaluated at a grid of shifts.
///
/// The double integral is evaluated by swapping the order of the anchor-time
/// and Laplace-horizon integrals: for each outer quadrature node `s0`, one
/// downward sweep of the source-summed truncated kernel supplies the inner
/// time integral in closed form per slice. The outer integrand is piecewise
/// analytic between track breakpoints, so composite Gauss-Legendre panels cut
/// at the breakpoints converge spectrally.
pub fn chi_eps_truncated(
    env: &EnvironmentWindow,
    epsilon: f64,
    n: u32,
    shifts: &[(f64, i64)],
    uniform_tol: f64,
    tail_tol: f64,
) -> Result<ChiEpsRecord> {
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon must be positive"));
    }
    let t_max = t_max_for(epsilon, tail_tol);
    if n == 0 {
        return Ok(ChiEpsRecord {
            epsilon,
            n_jumps: 0,
            shifts: shifts.to_vec(),
            values: vec![0.0; shifts.len()],
            bounds: vec![0.0; shifts.len()],
            corrections: vec![0.0; shifts.len()],
            t_max_integral: t_max,
        });
    }
    // columns feeding any anchor
    let mut cols: Vec<i64> = shifts.iter().flat_map(|&(_, x)| [x - 1, x]).collect();
    cols.sort_unstable();
    cols.dedup();
    let col_lo = *cols.first().unwrap();
    let col_hi = *cols.last().unwrap();
    // paths with at most n jumps travel at most n steps (the sweep carries
    // level n for the correction term): this window is exact
    let x_lo = col_lo - n as i64 - 2;
    let x_hi = col_hi + n as i64 + 2;
    let width = (x_hi - x_lo + 1) as usize;
    let n_levels = n as usize + 1;

    let mut anchor_times: Vec<f64> = shifts.iter().map(|&(t, _)| t).collect();
    anchor_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    anchor_times.dedup();
    let t_min = anchor_times[0];
    let t_top = anchor_times.last().unwrap() + t_max;

    // outer quadrature panels: track breakpoints of the window edges, capped
    let mut boundaries = vec![t_min];
    {
        let mut walker = SliceWalkerUp::new(env, x_lo, x_hi, t_min, t_top)?;
        while let Some((_, c)) = walker.next_slice() {
            boundaries.push(c);
        }
    }
    let h_max = 0.5;
    let mut panels: Vec<(f64, f64)> = Vec::new();
    for w in boundaries.windows(2) {
        let (a, c) = (w[0], w[1]);
        let m = ((c - a) / h_max).ceil().max(1.0) as usize;
        let step = (c - a) / m as f64;
        for k in 0..m {
            panels.push((a + k as f64 * step, a + (k + 1) as f64 * step));
        }
    }

    // per outer node: one downward sweep, snapshotting the inner integral at
    // the anchors; nodes are independent, so run them in parallel
    let node_results: Vec<Result<Vec<Vec<f64>>>> = panels
        .par_iter()
        .flat_map(|&(pa, pc)| {
            (0..8usize)
                .into_par_iter()
                .map(move |qi| (pa, pc, qi))
        })
        .map(|(pa, pc, qi)| {
            let s0 = 0.5 * (pa + pc) + 0.5 * (pc - pa) * GL8_NODES[qi];
            let glw = 0.5 * (pc - pa) * GL8_WEIGHTS[qi];
            // snapshot[anchor_time][col] of int_{t_hat}^{s0} b_t(x) m_t(x) dt
            // (first half: levels j < n for chi; second half: level n alone
            // for the truncation-defect correction), scaled by glw e^{-eps s0}
            let mut snapshots = vec![vec![0.0f64; 2 * cols.len()]; anchor_times.len()];
            let mut acc = vec![0.0f64; 2 * cols.len()];
            let mut levels: Vec<Vec<f64>> = vec![vec![0.0; width]; n_levels];
            for x in levels[0].iter_mut() {
                *x = 1.0;
            }
            let mut integral: Vec<Vec<f64>> = vec![vec![0.0; width]; n_levels];
            let mut walker = SliceWalkerDown::new(env, x_lo, x_hi, s0, t_min)?;
            // anchors visited from the top down
            let mut pending: Vec<usize> = (0..anchor_times.len())
                .filter(|&i| anchor_times[i] <= s0)
                .collect();
            pending.sort_by(|&i, &j| anchor_times[j].partial_cmp(&anchor_times[i]).unwrap());
            let mut pending_idx = 0usize;
            while let Some((a, c)) = walker.next_slice()? {
                // anchors at or above the slice top see the integral so far
                while pending_idx < pending.len() && anchor_times[pending[pending_idx]] >= c {
                    snapshots[pending[pending_idx]].copy_from_slice(&acc);
                    pending_idx += 1;
                }
                let mut seg_hi = c;
                loop {
                    // split at the next pending anchor inside this slice
                    let next_anchor = if pending_idx < pending.len() {
                        let ta = anchor_times[pending[pending_idx]];
                        if ta < seg_hi && ta > a {
                            Some(ta)
                        } else {
                            None
                        }
                    } else {
                        None
                    };
                    let seg_lo = next_anchor.unwrap_or(a);
                    let dt = seg_hi - seg_lo;
                    if dt > 0.0 {
                        for v in integral.iter_mut() {
                            for x in v.iter_mut() {
                                *x = 0.0;
                            }
                        }
                        let slice = Slice {
                            b: walker.rates(),
                            dt,
                            orientation: Orientation::Adjoint,
                            tol: uniform_tol * (dt / t_top.max(1.0)).max(1e-6),
                        };
                        expmv_levels(
                            &slice,
                            &mut levels,
                            Some(LevelIntegrals {
                                laplace: None,
                                plain_vec: Some(&mut integral),
                            }),
                        )?;
                        for (ci, &col) in cols.iter().enumerate() {
                            let i = (col - x_lo) as usize;
                            let m_int: f64 =
                                integral.iter().take(n as usize).map(|l| l[i]).sum();
                            acc[ci] += walker.rates()[i] * m_int;
                            acc[cols.len() + ci] +=
                                walker.rates()[i] * integral[n as usize][i];
                        }
                    }
                    if let Some(ta) = next_anchor {
                        let ai = pending[pending_idx];
                        snapshots[ai].copy_from_slice(&acc);
                        pending_idx += 1;
                        seg_hi = ta;
                        if seg_hi == a {
                            break;
                        }
                    } else {
                        break;
                    }
                }
            }
            while pending_idx < pending.len() {
                let ai = pending[pending_idx];
                snapshots[ai].copy_from_slice(&acc);
                pending_idx += 1;
            }
            let outer = glw * (-epsilon * s0).exp();
            for row in snapshots.iter_mut() {
                for v in row.iter_mut() {
                    *v *= outer;
                }
            }
            Ok(snapshots)
        })
        .collect();

    let mut weighted = vec![vec![0.0f64; 2 * cols.len()]; anchor_times.len()];
    for node in node_results {
        let node = node?;
        for (row, acc_row) in node.iter().zip(weighted.iter_mut()) {
            for (v, w) in row.iter().zip(acc_row.iter_mut()) {
                *w += v;
            }
        }
    }

    let col_index = |x: i64| cols.iter().position(|&c| c == x).unwrap();
    let anchor_index = |t: f64| {
        anchor_times
            .iter()
            .position(|&a| a == t)
            .expect("anchor time present")
    };
    let values: Vec<f64> = shifts
        .iter()
        .map(|&(t, x)| {
            let ti = anchor_index(t);
            let plus = weighted[ti][col_index(x)];
            let minus = weighted[ti][col_index(x - 1)];
            epsilon * (epsilon * t).exp() * (plus - minus)
        })
        .collect();
    let corrections: Vec<f64> = shifts
        .iter()
        .map(|&(t, x)| {
            let ti = anchor_index(t);
            2.0 * epsilon * (epsilon * t).exp() * weighted[ti][cols.len() + col_index(x)]
        })
        .collect();

    // a-priori bound per shift, exact per constant piece
    let bounds: Vec<f64> = shifts
        .iter()
        .map(|&(t, x)| {
            let mut total = 0.0;
            for edge in [x - 1, x] {
                let mut walker = SliceWalkerUp::new(env, edge, edge, t, t + t_max)?;
                while let Some((a, c)) = walker.next_slice() {
                    let b = walker.rates()[0];
                    total += b * ((-epsilon * (a - t)).exp() - (-epsilon * (c - t)).exp())
                        / epsilon;
                }
            }
            Ok((2.0 * n as f64 + 1.0) * total)
        })
        .collect::<Result<_>>()?;

    Ok(ChiEpsRecord {
        epsilon,
        n_jumps: n,
        shifts: shifts.to_vec(),
        values,
        bounds,
        corrections,
        t_max_integral: t_max,
    })
}

/// Residuals of the lattice-gradient identity at truncation level `n`,
/// anchored at the space-time origin: returns `(raw, corrected)` where
///
/// - `raw = |(chi(0,1) - chi(0,0)) - (phi_{eps,n+1} - 1)|` is the residual of
///   the identity in its idealized form, which carries an O(1) truncation
///   defect at small `n`, and
/// - `corrected` subtracts the exact defect
///   `2 int e^{-eps t} b_t(0) (phi_{eps,n+1} - phi_{eps,n})(t,0) dt`
///   and must vanish to solver accuracy at every `n`.
pub fn chi_identity_residual(
    env: &EnvironmentWindow,
    epsilon: f64,
    n: u32,
    uniform_tol: f64,
    tail_tol: f64,
) -> Result<(f64, f64)> {
    let chi = chi_eps_truncated(
        env,
        epsilon,
        n,
        &[(0.0, 0), (0.0, 1)],
        uniform_tol,
        tail_tol,
    )?;
    let radius = n as i64 + 3;
    let t_max = t_max_for(epsilon, tail_tol);
    let sums = phi_sweep_up(env, epsilon, Some(n + 1), 0.0, 0, radius, uniform_tol, t_max)?;
    let phi_np1 = epsilon * sums.iter().sum::<f64>();
    let lhs = chi.values[1] - chi.values[0];
    let rhs = phi_np1 - 1.0;
    let raw = (lhs - rhs).abs();
    let corrected = (lhs - rhs - chi.corrections[0]).abs();
    Ok((raw, corrected))
}

/// Monte-Carlo estimate of `E[phi_eps]` over annealed environments.
pub fn phi_mean_check(
    spec: &EnvSpec,
    epsilon: f64,
    n_envs: usize,
    master_seed: u64,
    tail_tol: f64,
    uniform_tol: f64,
) -> Result<Estimate> {
    let t_max = t_max_for(epsilon, tail_tol);
    let radius = recommended_phi_radius(spec, t_max, 3.5, 10);
    let samples: Vec<f64> = (0..n_envs)
        .into_par_iter()
        .map(|i| {
            let env = EnvironmentWindow::build(
                spec,
                -2,
                2,
                -1.0,
                1.0,
                annealed_env_seed(master_seed, i as u64),
            )?;
            let sums = phi_sweep_up(&env, epsilon, None, 0.0, 0, radius, uniform_tol, t_max)?;
            Ok(epsilon * sums[0])
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// Monte-Carlo estimates of `E[b phi_eps^2]` and `E[b]` over annealed
/// environments (the weighted L2 inequality bounds the first by the second).
pub fn weighted_l2_check(
    spec: &EnvSpec,
    epsilon: f64,
    n_envs: usize,
    master_seed: u64,
    tail_tol: f64,
    uniform_tol: f64,
) -> Result<(Estimate, Estimate)> {
    if !spec.assumption1_compliant() {
        return Err(Error::config(
            "weighted L2 check requires an assumption-compliant spec",
        ));
    }
    let t_max = t_max_for(epsilon, tail_tol);
    let radius = recommended_phi_radius(spec, t_max, 3.5, 10);
    let pairs: Vec<(f64, f64)> = (0..n_envs)
        .into_par_iter()
        .map(|i| {
            let env = EnvironmentWindow::build(
                spec,
                -2,
                2,
                -1.0,
                1.0,
                annealed_env_seed(master_seed, i as u64),
            )?;
            let b0 = env.rate_at(Edge::new(0), 0.0)?;
            let sums = phi_sweep_up(&env, epsilon, None, 0.0, 0, radius, uniform_tol, t_max)?;
            let phi = epsilon * sums[0];
            Ok((b0 * phi * phi, b0))
        })
        .collect::<Result<_>>()?;
    let weighted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let plain: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok((
        Estimate::from_samples(&weighted),
        Estimate::from_samples(&plain),
    ))
}

/// Parameters of the downward density-field sweep.
#[derive(Debug, Clone)]
pub struct PhiSweep {
    /// Strictly decreasing, e.g. `[1e-1, 1e-2, 1e-3]`.
    pub eps_schedule: Vec<f64>,
    pub tail_tol: f64,
    pub uniform_tol: f64,
    pub sigma_pad: f64,
    pub margin: i64,
}

impl Default for PhiSweep {
    fn default() -> Self {
        PhiSweep {
            eps_schedule: vec![1e-1, 1e-2, 1e-3],
            tail_tol: 1e-3,
            uniform_tol: 1e-9,
            sigma_pad: 4.0,
            margin: 16,
        }
    }
}

impl PhiSweep {
    pub fn eps_min(&self) -> f64 {
        self.eps_schedule
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Richardson-style extrapolation in `eps` from the two smallest values
    /// of the schedule (first-order model `phi_eps = phi + c eps`).
    pub fn extrapolate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.eps_schedule.len());
        let k = self.eps_schedule.len();
        if k == 1 {
            return values[0];
        }
        let (e1, e2) = (self.eps_schedule[k - 2], self.eps_schedule[k - 1]);
        let (v1, v2) = (values[k - 2], values[k - 1]);
        (e1 * v2 - e2 * v1) / (e1 - e2)
    }
}

/// One visited slice of the density-field sweep. Rows live on the padded
/// window `[full_x_lo, full_x_lo + rates.len() - 1]`.
pub struct SlicePhi<'a> {
    /// Slice `[t_lo, t_hi]`, `t_hi` above `t_lo`; zero length for the very
    /// first visit at the top of the range.
    pub t_lo: f64,
    pub t_hi: f64,
    pub full_x_lo: i64,
    pub rates: &'a [f64],
    pub eps: &'a [f64],
    u_top: &'a [Vec<f64>],
    u_bottom: &'a [Vec<f64>],
}

impl<'a> SlicePhi<'a> {
    #[inline]
    fn col(&self, x: i64) -> usize {
        (x - self.full_x_lo) as usize
    }

    /// `phi_{eps_k}` at the slice top.
    #[inline]
    pub fn phi_top(&self, eps_idx: usize, x: i64) -> f64 {
        self.eps[eps_idx] * self.u_top[eps_idx][self.col(x)]
    }

    /// `phi_{eps_k}` at the slice bottom.
    #[inline]
    pub fn phi_bottom(&self, eps_idx: usize, x: i64) -> f64 {
        self.eps[eps_idx] * self.u_bottom[eps_idx][self.col(x)]
    }

    /// Rate of edge `(x, x+1)` on this slice.
    #[inline]
    pub fn rate(&self, x: i64) -> f64 {
        self.rates[self.col(x)]
    }
}

/// Downward density-field sweep over columns `[x_lo, x_hi]` and times
/// `[t_lo, t_hi]`: computes `phi_eps` rows for every epsilon of the schedule
/// at every slice boundary, visiting each slice below `t_hi` in descending
/// order. `cuts` forces extra slice boundaries. The first visit is a
/// zero-length slice at `t_hi` exposing the initial rows.
pub fn phi_field_drive<F>(
    env: &EnvironmentWindow,
    x_lo: i64,
    x_hi: i64,
    t_lo: f64,
    t_hi: f64,
    sweep: &PhiSweep,
    cuts: &[f64],
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&SlicePhi<'_>) -> Result<()>,
{
    if sweep.eps_schedule.is_empty() {
        return Err(Error::config("empty epsilon schedule"));
    }
    if !(t_lo <= t_hi) {
        return Err(Error::config("bad sweep range"));
    }
    let eps = &sweep.eps_schedule;
    let t_max = t_max_for(sweep.eps_min(), sweep.tail_tol);
    let radius = recommended_phi_radius(env.spec(), t_max, sweep.sigma_pad, sweep.margin);
    let full_lo = x_lo - radius;
    let full_hi = x_hi + radius;
    let width = (full_hi - full_lo + 1) as usize;
    let t_top = t_hi + t_max;
    let total_t = t_top - t_lo;

    let mut u_cur: Vec<Vec<f64>> = vec![vec![0.0; width]; eps.len()];
    let mut u_next: Vec<Vec<f64>> = vec![vec![0.0; width]; eps.len()];
    let mut inject: Vec<Vec<f64>> = vec![vec![0.0; width]; eps.len()];

    let mut sorted_cuts: Vec<f64> = cuts
        .iter()
        .cloned()
        .filter(|t| *t > t_lo && *t < t_hi)
        .collect();
    sorted_cuts.push(t_hi);
    sorted_cuts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted_cuts.dedup();
    let mut cut_idx = 0usize;

    let mut walker = SliceWalkerDown::new(env, full_lo, full_hi, t_top, t_lo)?;
    let mut visited_top = false;
    while let Some((a, c)) = walker.next_slice()? {
        let rates = walker.rates().to_vec();
        let mut seg_hi = c;
        loop {
            let seg_lo = if cut_idx < sorted_cuts.len()
                && sorted_cuts[cut_idx] < seg_hi
                && sorted_cuts[cut_idx] > a
            {
                let s = sorted_cuts[cut_idx];
                cut_idx += 1;
                s
            } else {
                a
            };
            let dt = seg_hi - seg_lo;
            let slice = Slice {
                b: &rates,
                dt,
                orientation: Orientation::Adjoint,
                tol: sweep.uniform_tol * (dt / total_t).max(1e-9),
            };
            // evolve the accumulators down and add the slice injections
            for (n, c_)
                in u_next.iter_mut().zip(u_cur.iter()) {
                n.clone_from(c_);
            }
            {
                let mut refs: Vec<&mut Vec<f64>> = u_next.iter_mut().collect();
                expmv_batch(&slice, &mut refs)?;
            }
            for v in inject.iter_mut() {
                for x in v.iter_mut() {
                    *x = 0.0;
                }
            }
            laplace_ones(&slice, eps, &mut inject)?;
            for (k, e) in eps.iter().enumerate() {
                let decay = (-e * dt).exp();
                for (u, add) in u_next[k].iter_mut().zip(inject[k].iter()) {
                    *u = *u * decay + add;
                }
            }
            if seg_hi <= t_hi {
                if !visited_top && seg_hi == t_hi {
                    // degenerate first visit exposing the rows at t_hi
                    visit(&SlicePhi {
                        t_lo: t_hi,
                        t_hi,
                        full_x_lo: full_lo,
                        rates: &rates,
                        eps,
                        u_top: &u_cur,
                        u_bottom: &u_cur,
                    })?;
                    visited_top = true;
                }
                visit(&SlicePhi {
                    t_lo: seg_lo,
                    t_hi: seg_hi,
                    full_x_lo: full_lo,
                    rates: &rates,
                    eps,
                    u_top: &u_cur,
                    u_bottom: &u_next,
                })?;
            }
            std::mem::swap(&mut u_cur, &mut u_next);
            if seg_lo == a {
                break;
            }
            seg_hi = seg_lo;
        }
    }
    Ok(())
}

/// `phi_eps` rows for every epsilon of the schedule at the requested times.
/// Returns `out[time][eps][column]` for columns `x_lo..=x_hi`.
pub fn phi_rows_at_times(
    env: &EnvironmentWindow,
    x_lo: i64,
    x_hi: i64,
    times: &[f64],
    sweep: &PhiSweep,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("times must be nonempty and strictly increasing"));
    }
    let n_cols = (x_hi - x_lo + 1) as usize;
    let mut rows: Vec<Option<Vec<Vec<f64>>>> = vec![None; times.len()];
    let t_lo = times[0];
    let t_hi = *times.last().unwrap();
    phi_field_drive(env, x_lo, x_hi, t_lo, t_hi, sweep, times, |s| {
        for (k, &t) in times.iter().enumerate() {
            if rows[k].is_none() {
                let grab_top = s.t_hi == t;
                let grab_bottom = s.t_lo == t;
                if grab_top || grab_bottom {
                    let mut per_eps = Vec::with_capacity(s.eps.len());
                    for e in 0..s.eps.len() {
                        let mut row = Vec::with_capacity(n_cols);
                        for x in x_lo..=x_hi {
                            row.push(if grab_top {
                                s.phi_top(e, x)
                            } else {
                                s.phi_bottom(e, x)
                            });
                        }
                        per_eps.push(row);
                    }
                    rows[k] = Some(per_eps);
                }
            }
        }
        Ok(())
    })?;
    rows.into_iter()
        .enumerate()
        .map(|(k, r)| r.ok_or_else(|| Error::config(format!("time {} never visited", times[k]))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvKind, LevelLaw};

    fn shell(spec: &EnvSpec, seed: u64) -> EnvironmentWindow {
        EnvironmentWindow::build(spec, -2, 2, -1.0, 1.0, seed).unwrap()
    }

    #[test]
    fn phi_is_one_for_homogeneous_envs() {
        // translation invariance makes the source-summed kernel mass one
        for spec in [
            EnvSpec::constant(0.8),
            EnvSpec::new(EnvKind::HomogeneousInSpace {
                law: LevelLaw::TwoPoint {
                    lo: 0.5,
                    hi: 1.5,
                    p_hi: 0.5,
                },
                switch_rate: 1.0,
            }),
        ] {
            let env = shell(&spec, 7);
            let rec = phi_eps(
                &env,
                0.1,
                None,
                &[(0.0, 0), (1.5, 2)],
                &WindowSpec::new(recommended_phi_radius(&spec, t_max_for(0.1, 1e-6), 4.0, 16))
                    .with_tolerance(1e-10),
                1e-6,
            )
            .unwrap();
            for v in &rec.value_grid {
                assert!(
                    (v - 1.0).abs() < 1e-5 + rec.tail_bound,
                    "phi = {v} for {spec:?}"
                );
            }
        }
    }

    #[test]
    fn phi_mean_is_one() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let est = phi_mean_check(&spec, 0.1, 60, 99, 1e-4, 1e-8).unwrap();
        assert!(
            est.within_k_se(1.0, 3.0),
            "E[phi_eps] = {} +- {}",
            est.value,
            est.se
        );
    }

    #[test]
    fn phi_static_matches_harmonic_closed_form() {
        // static law: phi = c_h / a(0,1) with c_h = 4/3 for the {1,2} law.
        // At eps = 1e-3 the dual walk averages ~50 edges, so a single
        // environment still fluctuates by a few percent around the limit;
        // check the median relative error over seeds.
        let spec = EnvSpec::static_iid_12();
        let radius = recommended_phi_radius(&spec, t_max_for(1e-3, 1e-3), 3.5, 10);
        let errs: Vec<f64> = [3u64, 5, 8, 13, 21]
            .iter()
            .map(|&seed| {
                let env = shell(&spec, seed);
                let rec = phi_eps(
                    &env,
                    1e-3,
                    None,
                    &[(0.0, 0)],
                    &WindowSpec::new(radius).with_tolerance(1e-9),
                    1e-3,
                )
                .unwrap();
                let a0 = env.rate_at(Edge::new(0), 0.0).unwrap();
                let want = (4.0 / 3.0) / a0;
                (rec.value_grid[0] - want).abs() / want
            })
            .collect();
        let med = crate::stats::median(&errs);
        assert!(med < 0.05, "median relative error {med}, errs {errs:?}");
    }

    #[test]
    fn weighted_l2_constant_is_exact() {
        let spec = EnvSpec::constant(0.7);
        let (wl2, mean_b) = weighted_l2_check(&spec, 0.1, 10, 5, 1e-6, 1e-10).unwrap();
        assert!((wl2.value - 0.7).abs() < 1e-4, "E[b phi^2] = {}", wl2.value);
        assert!((mean_b.value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn weighted_l2_static_heads_to_harmonic_mean() {
        // E[a phi_eps^2] -> c_h = 4/3 < E[a] = 3/2 as eps -> 0
        let spec = EnvSpec::static_iid_12();
        let (wl2, mean_b) = weighted_l2_check(&spec, 1e-3, 40, 11, 1e-3, 1e-8).unwrap();
        assert!(
            (wl2.value - 4.0 / 3.0).abs() < 0.06,
            "E[a phi^2] = {} +- {}",
            wl2.value,
            wl2.se
        );
        assert!((mean_b.value - 1.5).abs() < 3.0 * mean_b.se + 1e-9);
        assert!(wl2.value <= mean_b.value + 3.0 * (wl2.se + mean_b.se));
    }

    #[test]
    fn truncated_phi_monotone_and_bounded() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = shell(&spec, 21);
        let window = WindowSpec::new(10).with_tolerance(1e-10);
        let mut prev = 0.0;
        for n in 0..=5u32 {
            let rec = phi_eps(&env, 0.5, Some(n), &[(0.0, 0)], &window, 1e-8).unwrap();
            let v = rec.value_grid[0];
            assert!(v >= prev - 1e-12, "phi_eps_n not monotone at n = {n}");
            assert!(v <= 2.0 * n as f64 + 1.0 + 1e-12, "bound violated at n = {n}");
            prev = v;
        }
        // and the truncated values approach the untruncated one
        let full = phi_eps(
            &env,
            0.5,
            None,
            &[(0.0, 0)],
            &WindowSpec::new(radius_hint(&spec, 0.5)).with_tolerance(1e-10),
            1e-8,
        )
        .unwrap()
        .value_grid[0];
        let n20 = phi_eps(
            &env,
            0.5,
            Some(20),
            &[(0.0, 0)],
            &WindowSpec::new(radius_hint(&spec, 0.5)).with_tolerance(1e-10),
            1e-8,
        )
        .unwrap()
        .value_grid[0];
        assert!((full - n20).abs() < 1e-4, "K_20 mass gap: {full} vs {n20}");
    }

    fn radius_hint(spec: &EnvSpec, eps: f64) -> i64 {
        recommended_phi_radius(spec, t_max_for(eps, 1e-8), 4.5, 16)
    }

    #[test]
    fn chi_vanishes_for_homogeneous_envs() {
        let spec = EnvSpec::new(EnvKind::HomogeneousInSpace {
            law: LevelLaw::TwoPoint {
                lo: 0.5,
                hi: 1.5,
                p_hi: 0.5,
            },
            switch_rate: 1.0,
        });
        let env = shell(&spec, 3);
        let rec = chi_eps_truncated(&env, 1.0, 4, &[(0.0, 0)], 1e-10, 1e-8).unwrap();
        assert!(rec.values[0].abs() < 1e-7, "chi = {}", rec.values[0]);
        assert!(rec.values[0].abs() <= rec.bounds[0]);
    }

    #[test]
    fn chi_one_static_closed_form() {
        // static rates: phi_{eps,1}(t,x) = eps/(eps + 2 b(x)) independent of t,
        // so chi_{eps,1} = b(0)/(eps + 2 b(0)) - b(-1)/(eps + 2 b(-1))
        let spec = EnvSpec::static_iid_12();
        let env = shell(&spec, 4);
        let eps = 0.7;
        let rec = chi_eps_truncated(&env, eps, 1, &[(0.0, 0)], 1e-11, 1e-10).unwrap();
        let b0 = env.rate_at(Edge::new(0), 0.0).unwrap();
        let bm1 = env.rate_at(Edge::new(-1), 0.0).unwrap();
        let want = b0 / (eps + 2.0 * b0) - bm1 / (eps + 2.0 * bm1);
        assert!(
            (rec.values[0] - want).abs() < 1e-7,
            "chi_{{eps,1}} = {} vs {want}",
            rec.values[0]
        );
    }

    #[test]
    fn chi_identity_lemma_small_n() {
        // the exact finite-n gradient identity: chi(0,1) - chi(0,0) equals
        // phi_{eps,n+1} - 1 plus the truncation-defect correction; the
        // corrected residual vanishes to solver accuracy, while the raw
        // residual is an O(1) defect that shrinks with n
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = shell(&spec, 12);
        let eps = 1.0;
        let mut prev_raw = f64::INFINITY;
        for n in 1..=3u32 {
            let (raw, corrected) = chi_identity_residual(&env, eps, n, 1e-10, 1e-9).unwrap();
            assert!(
                corrected < 1e-6,
                "n = {n}: corrected residual {corrected}"
            );
            assert!(raw < prev_raw, "raw defect should shrink with n");
            prev_raw = raw;
        }
    }

    #[test]
    fn chi_identity_static_closed_form_all_terms() {
        // on a static environment every piece of the corrected identity has
        // a closed form; verify the correction term itself
        let spec = EnvSpec::static_iid_12();
        let env = shell(&spec, 4);
        let eps = 0.8;
        let b0 = env.rate_at(Edge::new(0), 0.0).unwrap();
        let rec = chi_eps_truncated(&env, eps, 1, &[(0.0, 0)], 1e-11, 1e-10).unwrap();
        // phi_{eps,1}(x) = eps/(eps+2b(x)); phi_{eps,2}(x) adds one jump layer:
        // eps/(eps+2bx) + eps [ b(x+1)... ] evaluated below for x = 0
        let phi1 = |x: i64| {
            let b = env.rate_at(Edge::new(x), 0.0).unwrap();
            eps / (eps + 2.0 * b)
        };
        let b1 = env.rate_at(Edge::new(1), 0.0).unwrap();
        let bm1 = env.rate_at(Edge::new(-1), 0.0).unwrap();
        let phi2_0 = eps / (eps + 2.0 * b0)
            + eps * b1 / ((eps + 2.0 * b1) * (eps + 2.0 * b0))
            + eps * bm1 / ((eps + 2.0 * bm1) * (eps + 2.0 * b0));
        let _ = phi1;
        // correction = 2 b0 (phi2 - phi1)(0) / eps in the static case
        let want = 2.0 * b0 * (phi2_0 - eps / (eps + 2.0 * b0)) / eps;
        assert!(
            (rec.corrections[0] - want).abs() < 1e-8,
            "correction {} vs {want}",
            rec.corrections[0]
        );
    }

    #[test]
    fn phi_rows_match_upward_sweep() {
        // the downward field sweep and the per-anchor upward sweep are
        // independent code paths; they must agree
        let spec = EnvSpec::on_off(1.0, 1.0, 0.1, 1.0);
        let env = shell(&spec, 31);
        let sweep = PhiSweep {
            eps_schedule: vec![0.2, 0.05],
            tail_tol: 1e-7,
            uniform_tol: 1e-9,
            sigma_pad: 4.5,
            margin: 16,
        };
        let rows = phi_rows_at_times(&env, -2, 2, &[0.0, 1.25, 3.0], &sweep).unwrap();
        for (ti, &t) in [0.0, 1.25, 3.0].iter().enumerate() {
            for (ei, &eps) in sweep.eps_schedule.iter().enumerate() {
                for (ci, x) in (-2..=2).enumerate() {
                    let up = phi_sweep_up(
                        &env,
                        eps,
                        None,
                        t,
                        x,
                        recommended_phi_radius(&spec, t_max_for(eps, 1e-7), 4.5, 16),
                        1e-9,
                        t_max_for(eps, 1e-7),
                    )
                    .unwrap();
                    let want = eps * up[0];
                    let got = rows[ti][ei][ci];
                    assert!(
                        (got - want).abs() < 2e-5,
                        "t = {t}, eps = {eps}, x = {x}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn extrapolation_recovers_linear_trend() {
        let sweep = PhiSweep {
            eps_schedule: vec![0.1, 0.01, 0.001],
            ..PhiSweep::default()
        };
        // phi_eps = 2 + 5 eps exactly
        let values = [2.5, 2.05, 2.005];
        let got = sweep.extrapolate(&values);
        assert!((got - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_epsilon() {
        let env = shell(&EnvSpec::constant(1.0), 1);
        assert!(phi_eps(&env, 0.0, None, &[(0.0, 0)], &WindowSpec::new(4), 1e-6).is_err());
        assert!(phi_eps(&env, 0.5, None, &[(0.0, 0)], &WindowSpec::new(4), 2.0).is_err());
    }
}
