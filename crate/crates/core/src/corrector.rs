//! The invariant density field, parabolic coordinates and the corrector.
//!
//! The parabolic coordinate is assembled from the density field by the
//! lattice sum and time integral
//!
//! ```text
//! psi(t, x) = sum_{k=0}^{x-1} phi(0, k) + chi_col(t, x),
//! chi_col(t, x) = -int_0^t [ b_s(x) phi(s, x) - b_s(x-1) phi(s, x-1) ] ds,
//! ```
//!
//! with the usual orientation conventions for negative `x` and `t` (swap the
//! summation/integration limits and flip the sign). Its spatial gradients are
//! the density itself, the corrector is `chi(t, x) = psi(t, x) - x`, and
//! `psi(t, X_t)` is a martingale.
//!
//! Density fields come in three flavors: exact closed forms for spatially
//! homogeneous and static environments, and the Laplace-averaged kernel
//! construction with Richardson extrapolation in `eps` for everything else.

use crate::dual::simulate_y;
use crate::env::{Edge, EnvKind, EnvSpec, EnvironmentWindow};
use crate::error::{Error, Result};
use crate::kernel::{phi_rows_at_times, solve_kernel, Anchor, PhiSweep, WindowSpec};
use crate::rng::{derive_key, word_from_i64};
use crate::stats::{self, Estimate};
use rayon::prelude::*;
use serde::Serialize;

/// How a density field was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMethod {
    /// Laplace-averaged kernel values extrapolated in `eps`.
    KernelExtrapolated,
    /// `phi(t, x) = c_h / a(x, x+1)` with the harmonic-mean constant.
    StaticClosedForm,
    /// `phi == 1` (any spatially homogeneous field).
    HomogeneousUnit,
}

/// The invariant density on a space-time grid of shifts.
#[derive(Debug, Clone)]
pub struct PhiField {
    pub times: Vec<f64>,
    pub x_lo: i64,
    pub x_hi: i64,
    /// Row-major `times x columns`; extrapolated values for the kernel method.
    pub values: Vec<f64>,
    pub method: PhiMethod,
    /// Empirical spatial mean over the window at the first grid time.
    pub normalization: Estimate,
    /// Kernel method only: the eps schedule and the raw per-eps grids.
    pub eps_schedule: Vec<f64>,
    pub raw_values: Vec<Vec<f64>>,
    /// Kernel method only: sweep parameters, reused by dependent builds.
    pub sweep: Option<PhiSweep>,
}

impl PhiField {
    pub fn width(&self) -> usize {
        (self.x_hi - self.x_lo + 1) as usize
    }

    pub fn value(&self, time_idx: usize, x: i64) -> f64 {
        debug_assert!(x >= self.x_lo && x <= self.x_hi);
        self.values[time_idx * self.width() + (x - self.x_lo) as usize]
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// CSV with columns `t,x,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,value\n");
        for (i, t) in self.times.iter().enumerate() {
            for x in self.x_lo..=self.x_hi {
                out.push_str(&format!("{t},{x},{}\n", self.value(i, x)));
            }
        }
        out
    }

    pub fn metadata_json(&self) -> String {
        #[derive(Serialize)]
        struct Meta<'a> {
            method: PhiMethod,
            x_lo: i64,
            x_hi: i64,
            n_times: usize,
            spatial_mean: f64,
            spatial_mean_se: f64,
            eps_schedule: &'a [f64],
        }
        serde_json::to_string_pretty(&Meta {
            method: self.method,
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            n_times: self.times.len(),
            spatial_mean: self.normalization.value,
            spatial_mean_se: self.normalization.se,
            eps_schedule: &self.eps_schedule,
        })
        .expect("serializable")
    }
}

/// Harmonic-mean constant `c_h = (E[1/a])^{-1}` for the closed-form static
/// density.
pub fn harmonic_mean_constant(spec: &EnvSpec) -> Result<f64> {
    match &spec.kind {
        EnvKind::Constant { c } => Ok(*c),
        EnvKind::StaticIid { law } => Ok(1.0 / law.mean_inverse()),
        _ => Err(Error::config(
            "closed-form static density needs a static environment with known inverse moment",
        )),
    }
}

/// Builds the density field on `times x [x_lo, x_hi]` by the requested
/// method.
pub fn build_phi(
    env: &EnvironmentWindow,
    method: PhiMethod,
    times: &[f64],
    x_lo: i64,
    x_hi: i64,
    sweep: &PhiSweep,
) -> Result<PhiField> {
    if times.is_empty() || x_lo > x_hi {
        return Err(Error::config("empty density grid"));
    }
    let width = (x_hi - x_lo + 1) as usize;
    let spec = env.spec();
    let (values, eps_schedule, raw_values, kept_sweep) = match method {
        PhiMethod::HomogeneousUnit => {
            if !spec.spatially_homogeneous() {
                return Err(Error::config(
                    "homogeneous-unit density requires a spatially homogeneous spec",
                ));
            }
            (vec![1.0; times.len() * width], vec![], vec![], None)
        }
        PhiMethod::StaticClosedForm => {
            if !spec.static_in_time() {
                return Err(Error::config(
                    "closed-form static density requires a static spec",
                ));
            }
            let c_h = harmonic_mean_constant(spec)?;
            let mut row = Vec::with_capacity(width);
            for x in x_lo..=x_hi {
                row.push(c_h / env.rate_at_unbounded(Edge::new(x), times[0])?);
            }
            let mut values = Vec::with_capacity(times.len() * width);
            for _ in times {
                values.extend_from_slice(&row);
            }
            (values, vec![], vec![], None)
        }
        PhiMethod::KernelExtrapolated => {
            let rows = phi_rows_at_times(env, x_lo, x_hi, times, sweep)?;
            let k = sweep.eps_schedule.len();
            let mut raw: Vec<Vec<f64>> = vec![Vec::with_capacity(times.len() * width); k];
            let mut values = Vec::with_capacity(times.len() * width);
            let mut per_point = vec![0.0; k];
            for row in &rows {
                for c in 0..width {
                    for (e, re) in row.iter().enumerate() {
                        per_point[e] = re[c];
                        raw[e].push(re[c]);
                    }
                    values.push(sweep.extrapolate(&per_point));
                }
            }
            (values, sweep.eps_schedule.clone(), raw, Some(sweep.clone()))
        }
    };
    let first_row: Vec<f64> = values[..width].to_vec();
    let normalization = Estimate::from_samples(&first_row);
    Ok(PhiField {
        times: times.to_vec(),
        x_lo,
        x_hi,
        values,
        method,
        normalization,
        eps_schedule,
        raw_values,
        sweep: kept_sweep,
    })
}

/// Maximum relative residual of the kernel self-consistency identity
/// `phi(0, x0) = sum_x phi(t, x) K(t, x; 0, x0)` over the probe vertices.
pub fn phi_selfconsistency(
    env: &EnvironmentWindow,
    phi: &PhiField,
    t: f64,
    probes: &[i64],
    window: &WindowSpec,
) -> Result<f64> {
    let t0_idx = phi
        .time_index(0.0)
        .ok_or_else(|| Error::config("density grid must contain t = 0"))?;
    let t_idx = phi
        .time_index(t)
        .ok_or_else(|| Error::config(format!("density grid must contain t = {t}")))?;
    let mut worst = 0.0f64;
    for &x0 in probes {
        if x0 - window.radius < phi.x_lo || x0 + window.radius > phi.x_hi {
            return Err(Error::config(format!(
                "probe {x0} needs density columns [{}, {}]",
                x0 - window.radius,
                x0 + window.radius
            )));
        }
        let grid = solve_kernel(
            env,
            Anchor::Target {
                time: 0.0,
                vertex: x0,
            },
            (0.0, t),
            window,
        )?;
        let row = grid.times.len() - 1;
        let mut rhs = 0.0;
        for x in grid.x_lo..=grid.x_hi {
            rhs += phi.value(t_idx, x) * grid.value(row, x);
        }
        let lhs = phi.value(t0_idx, x0);
        worst = worst.max((rhs - lhs).abs() / lhs.abs().max(1e-12));
    }
    Ok(worst)
}

/// Parabolic coordinates on a grid, with the corrector derived.
#[derive(Debug, Clone)]
pub struct PsiField {
    pub times: Vec<f64>,
    pub x_lo: i64,
    pub x_hi: i64,
    /// Row-major `times x columns`.
    pub psi: Vec<f64>,
    pub phi_method: PhiMethod,
}

impl PsiField {
    pub fn width(&self) -> usize {
        (self.x_hi - self.x_lo + 1) as usize
    }

    pub fn value(&self, time_idx: usize, x: i64) -> f64 {
        debug_assert!(x >= self.x_lo && x <= self.x_hi);
        self.psi[time_idx * self.width() + (x - self.x_lo) as usize]
    }

    /// Corrector `chi(t, x) = psi(t, x) - x`.
    pub fn chi(&self, time_idx: usize, x: i64) -> f64 {
        self.value(time_idx, x) - x as f64
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    /// All spatial gradients `psi(t, x+1) - psi(t, x)` strictly positive.
    pub fn gradients_positive(&self) -> bool {
        (0..self.times.len())
            .all(|i| (self.x_lo..self.x_hi).all(|x| self.value(i, x + 1) > self.value(i, x)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,psi,chi\n");
        for (i, t) in self.times.iter().enumerate() {
            for x in self.x_lo..=self.x_hi {
                out.push_str(&format!(
                    "{t},{x},{},{}\n",
                    self.value(i, x),
                    self.chi(i, x)
                ));
            }
        }
        out
    }
}

/// Lattice sum `sum_{k=0}^{x-1} phi(0, k)` with the negative-`x` convention.
fn spatial_sum(phi_row: impl Fn(i64) -> f64, x: i64) -> f64 {
    if x >= 0 {
        (0..x).map(&phi_row).sum()
    } else {
        -((x..0).map(&phi_row).sum::<f64>())
    }
}

/// Builds the parabolic coordinates from a density field.
///
/// Requires `phi` to cover columns `[x_lo - 1, x_hi]` at `t = 0`; the kernel
/// method redrives the density sweep to integrate the time component at
/// slice resolution (trapezoidal in the slice endpoints, exact in the rates).
pub fn build_psi(
    env: &EnvironmentWindow,
    phi: &PhiField,
    times: &[f64],
    x_lo: i64,
    x_hi: i64,
) -> Result<PsiField> {
    if times.is_empty() || times[0] != 0.0 || times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(
            "psi grid times must start at 0 and increase strictly",
        ));
    }
    if x_lo > 0 || x_hi < 0 {
        return Err(Error::config("psi grid must contain the origin column"));
    }
    let t0 = phi
        .time_index(0.0)
        .ok_or_else(|| Error::config("density grid must contain t = 0"))?;
    if phi.x_lo > x_lo - 1 || phi.x_hi < x_hi {
        return Err(Error::config(format!(
            "density columns [{}, {}] do not cover psi columns [{}, {}] plus margin",
            phi.x_lo, phi.x_hi, x_lo, x_hi
        )));
    }
    let width = (x_hi - x_lo + 1) as usize;
    let spatial: Vec<f64> = (x_lo..=x_hi)
        .map(|x| spatial_sum(|k| phi.value(t0, k), x))
        .collect();

    let mut psi = Vec::with_capacity(times.len() * width);
    match phi.method {
        PhiMethod::HomogeneousUnit | PhiMethod::StaticClosedForm => {
            // the time integrand vanishes identically for both closed forms
            for _ in times {
                psi.extend_from_slice(&spatial);
            }
        }
        PhiMethod::KernelExtrapolated => {
            let sweep = phi
                .sweep
                .clone()
                .ok_or_else(|| Error::config("kernel density field lost its sweep"))?;
            let t_hi = *times.last().unwrap();
            // suffix integrals of g_x(s) = b_s(x) phi(s,x) - b_s(x-1) phi(s,x-1)
            let mut suffix = vec![0.0f64; width];
            let mut rows_rev: Vec<Vec<f64>> = Vec::with_capacity(times.len());
            let mut pp = vec![0.0; sweep.eps_schedule.len()];
            crate::kernel::phi_field_drive(env, x_lo - 1, x_hi, 0.0, t_hi, &sweep, times, |s| {
                if s.t_hi == t_hi && s.t_lo == t_hi && rows_rev.is_empty() {
                    rows_rev.push(suffix.clone());
                }
                let dt = s.t_hi - s.t_lo;
                if dt > 0.0 {
                    for (ci, x) in (x_lo..=x_hi).enumerate() {
                        let phi_at = |top: bool, xx: i64, pp: &mut Vec<f64>| {
                            for e in 0..s.eps.len() {
                                pp[e] = if top {
                                    s.phi_top(e, xx)
                                } else {
                                    s.phi_bottom(e, xx)
                                };
                            }
                            sweep.extrapolate(pp)
                        };
                        let g_top = s.rate(x) * phi_at(true, x, &mut pp)
                            - s.rate(x - 1) * phi_at(true, x - 1, &mut pp);
                        let g_bot = s.rate(x) * phi_at(false, x, &mut pp)
                            - s.rate(x - 1) * phi_at(false, x - 1, &mut pp);
                        suffix[ci] += 0.5 * dt * (g_top + g_bot);
                    }
                }
                if s.t_lo < s.t_hi && times.contains(&s.t_lo) {
                    rows_rev.push(suffix.clone());
                }
                Ok(())
            })?;
            if rows_rev.len() != times.len() {
                return Err(Error::config(format!(
                    "psi sweep visited {} of {} grid times",
                    rows_rev.len(),
                    times.len()
                )));
            }
            // suffix at time t is int_t^{t_hi} g; chi_col(t) = suffix(t) - suffix(0)
            let total = rows_rev.last().unwrap().clone();
            rows_rev.reverse();
            for row in rows_rev {
                for (ci, x) in (x_lo..=x_hi).enumerate() {
                    let chi_col = row[ci] - total[ci];
                    psi.push(spatial[(x - x_lo) as usize] + chi_col);
                }
            }
        }
    }
    Ok(PsiField {
        times: times.to_vec(),
        x_lo,
        x_hi,
        psi,
        phi_method: phi.method,
    })
}

/// The corrector's time component at the origin, `chi(t, 0)`, for signed
/// `t` (negative times integrate backward with the matching sign flip).
/// Exactly zero for the closed-form density methods.
pub fn chi_time_at_origin(env: &EnvironmentWindow, phi: &PhiField, t: f64) -> Result<f64> {
    match phi.method {
        PhiMethod::HomogeneousUnit | PhiMethod::StaticClosedForm => Ok(0.0),
        PhiMethod::KernelExtrapolated => {
            let sweep = phi
                .sweep
                .clone()
                .ok_or_else(|| Error::config("kernel density field lost its sweep"))?;
            let (lo, hi) = if t >= 0.0 { (0.0, t) } else { (t, 0.0) };
            let mut integral = 0.0;
            let mut pp = vec![0.0; sweep.eps_schedule.len()];
            crate::kernel::phi_field_drive(env, -1, 0, lo, hi, &sweep, &[], |s| {
                let dt = s.t_hi - s.t_lo;
                if dt > 0.0 {
                    let mut g = |top: bool| {
                        let phi_at = |xx: i64, pp: &mut Vec<f64>| {
                            for e in 0..s.eps.len() {
                                pp[e] = if top {
                                    s.phi_top(e, xx)
                                } else {
                                    s.phi_bottom(e, xx)
                                };
                            }
                            sweep.extrapolate(pp)
                        };
                        let a = phi_at(0, &mut pp);
                        let b = phi_at(-1, &mut pp);
                        s.rate(0) * a - s.rate(-1) * b
                    };
                    let g_top = g(true);
                    let g_bot = g(false);
                    integral += 0.5 * dt * (g_top + g_bot);
                }
                Ok(())
            })?;
            // chi(t, 0) = -int_0^t g ds as a signed integral
            Ok(if t >= 0.0 { -integral } else { integral })
        }
    }
}

/// Monte-Carlo estimate of `chi(-t, 0)` through the dual-walk representation.
#[derive(Debug, Clone, Serialize)]
pub struct ChiDualEstimate {
    pub value: f64,
    pub se: f64,
    pub n_paths_per_vertex: usize,
    pub vertex_range: (i64, i64),
    /// Gaussian proxy for the mass beyond the vertex truncation.
    pub truncation_tail: f64,
}

/// Estimates
/// `sum_{x>=0} phi(0,x) P^x(Y_t < 0) - sum_{x<0} phi(0,x) P^x(Y_t >= 0)`
/// with start vertices truncated at `|x| <= m_sigmas sqrt(t)`.
pub fn chi_dual_mc(
    env: &EnvironmentWindow,
    phi: &PhiField,
    t: f64,
    n_paths: usize,
    m_sigmas: f64,
    master_seed: u64,
) -> Result<ChiDualEstimate> {
    if t <= 0.0 || n_paths == 0 {
        return Err(Error::config("chi_dual_mc needs t > 0 and paths"));
    }
    let reach = (m_sigmas * t.sqrt()).floor() as i64;
    let t0 = phi
        .time_index(0.0)
        .ok_or_else(|| Error::config("density grid must contain t = 0"))?;
    if phi.x_lo > -reach || phi.x_hi < reach {
        return Err(Error::config(format!(
            "density columns do not cover the start-vertex box [{}, {}]",
            -reach, reach
        )));
    }
    let vertices: Vec<i64> = (-reach..=reach).collect();
    let per_vertex: Vec<(f64, f64)> = vertices
        .par_iter()
        .map(|&x| {
            let mut hits = 0usize;
            for i in 0..n_paths {
                let seed = derive_key(
                    master_seed,
                    &[crate::rng::stream::DUAL, word_from_i64(x), i as u64],
                );
                let rec = simulate_y(env, x, t, seed)?;
                let y = rec.final_position();
                let hit = if x >= 0 { y < 0 } else { y >= 0 };
                hits += hit as usize;
            }
            let p = hits as f64 / n_paths as f64;
            let var = p * (1.0 - p) / n_paths as f64;
            Ok((p, var))
        })
        .collect::<Result<_>>()?;
    let mut value = 0.0;
    let mut var = 0.0;
    for (&x, &(p, v)) in vertices.iter().zip(per_vertex.iter()) {
        let w = phi.value(t0, x);
        let sign = if x >= 0 { 1.0 } else { -1.0 };
        value += sign * w * p;
        var += w * w * v;
    }
    // Gaussian tail proxy for the truncated starts: the dual walk spreads
    // like sqrt(2 E[b phi] t) <= sqrt(2 E[b] t)
    let sigma = (2.0 * env.spec().mean_rate().unwrap_or(1.0)).sqrt().max(1e-9);
    let mut tail = 0.0;
    for k in 0..200 {
        let x = (reach + 1 + k) as f64;
        tail += 2.0 * stats::normal_cdf(-x / (sigma * t.sqrt()));
    }
    Ok(ChiDualEstimate {
        value,
        se: var.sqrt(),
        n_paths_per_vertex: n_paths,
        vertex_range: (-reach, reach),
        truncation_tail: tail,
    })
}

/// Sublinearity ratios of the corrector over diffusive boxes.
#[derive(Debug, Clone, Serialize)]
pub struct SublinearityReport {
    pub n_ladder: Vec<f64>,
    /// `max_{|x| <= sqrt n, 0 <= t <= n} |chi(t, x)| / sqrt n`.
    pub box_ratios: Vec<f64>,
    /// `max_{|x| <= sqrt n} |chi(0, x)| / sqrt n`.
    pub spatial_ratios: Vec<f64>,
    /// `|chi(n, 0)| / sqrt n`.
    pub temporal_ratios: Vec<f64>,
}

/// Grid-based sublinearity ratios from a materialized field. The maxima run
/// over the grid points inside each box.
pub fn sublinearity_report(psi: &PsiField, n_ladder: &[f64]) -> Result<SublinearityReport> {
    let mut box_ratios = Vec::new();
    let mut spatial_ratios = Vec::new();
    let mut temporal_ratios = Vec::new();
    for &n in n_ladder {
        let half = n.sqrt();
        let xr = half.floor() as i64;
        if xr > psi.x_hi || -xr < psi.x_lo {
            return Err(Error::config(format!(
                "psi grid does not cover the box for n = {n}"
            )));
        }
        let mut best = 0.0f64;
        let mut spatial = 0.0f64;
        for (i, &t) in psi.times.iter().enumerate() {
            if t > n {
                break;
            }
            for x in -xr..=xr {
                best = best.max(psi.chi(i, x).abs());
                if t == 0.0 {
                    spatial = spatial.max(psi.chi(i, x).abs());
                }
            }
        }
        let temporal = psi
            .time_index(n)
            .map(|i| psi.chi(i, 0).abs())
            .unwrap_or(0.0);
        box_ratios.push(best / half);
        spatial_ratios.push(spatial / half);
        temporal_ratios.push(temporal / half);
    }
    Ok(SublinearityReport {
        n_ladder: n_ladder.to_vec(),
        box_ratios,
        spatial_ratios,
        temporal_ratios,
    })
}

/// Streaming sublinearity scan for dynamic environments: one downward
/// density sweep accumulates, per column, the corrector's time integral at
/// slice resolution, tracking per-box extrema without materializing fields.
pub fn sublinearity_scan(
    env: &EnvironmentWindow,
    sweep: &PhiSweep,
    n_ladder: &[f64],
) -> Result<SublinearityReport> {
    if n_ladder.is_empty() || n_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("n ladder must be increasing"));
    }
    let n_max = *n_ladder.last().unwrap();
    let xr = n_max.sqrt().floor() as i64;
    let cols: Vec<i64> = (-xr..=xr).collect();
    let width = cols.len();
    let n_eps = sweep.eps_schedule.len();

    let mut suffix = vec![0.0f64; width]; // int_t^{n_max} g_x
    let mut box_min = vec![vec![f64::INFINITY; width]; n_ladder.len()];
    let mut box_max = vec![vec![f64::NEG_INFINITY; width]; n_ladder.len()];
    let mut temporal_at = vec![f64::NAN; n_ladder.len()];
    let mut phi_zero_row: Vec<f64> = Vec::new();
    let mut pp = vec![0.0; n_eps];

    let cuts: Vec<f64> = n_ladder.to_vec();
    crate::kernel::phi_field_drive(env, -xr - 1, xr, 0.0, n_max, sweep, &cuts, |s| {
        // record extrema at the slice top when it opens a box
        for (bi, &n) in n_ladder.iter().enumerate() {
            if s.t_hi == n {
                for ci in 0..width {
                    box_min[bi][ci] = box_min[bi][ci].min(suffix[ci]);
                    box_max[bi][ci] = box_max[bi][ci].max(suffix[ci]);
                }
                temporal_at[bi] = suffix[xr as usize];
            }
        }
        let dt = s.t_hi - s.t_lo;
        if dt > 0.0 {
            for (ci, &x) in cols.iter().enumerate() {
                let phi_at = |top: bool, xx: i64, pp: &mut Vec<f64>| {
                    for e in 0..n_eps {
                        pp[e] = if top {
                            s.phi_top(e, xx)
                        } else {
                            s.phi_bottom(e, xx)
                        };
                    }
                    sweep.extrapolate(pp)
                };
                let g_top = s.rate(x) * phi_at(true, x, &mut pp)
                    - s.rate(x - 1) * phi_at(true, x - 1, &mut pp);
                let g_bot = s.rate(x) * phi_at(false, x, &mut pp)
                    - s.rate(x - 1) * phi_at(false, x - 1, &mut pp);
                suffix[ci] += 0.5 * dt * (g_top + g_bot);
            }
            for (bi, &n) in n_ladder.iter().enumerate() {
                if s.t_lo <= n {
                    for ci in 0..width {
                        box_min[bi][ci] = box_min[bi][ci].min(suffix[ci]);
                        box_max[bi][ci] = box_max[bi][ci].max(suffix[ci]);
                    }
                }
            }
        }
        if s.t_lo == 0.0 && phi_zero_row.is_empty() {
            // phi(0, k) for k in [-xr - 1, xr]
            for x in (-xr - 1)..=xr {
                for e in 0..n_eps {
                    pp[e] = s.phi_bottom(e, x);
                }
                phi_zero_row.push(sweep.extrapolate(&pp));
            }
        }
        Ok(())
    })?;
    if phi_zero_row.is_empty() {
        return Err(Error::config("sublinearity sweep never reached t = 0"));
    }

    // chi(t, x) = S_x + suffix_x(t) - suffix_x(0), S_x = sum_{k<x} phi(0,k) - x
    let phi0 = |k: i64| phi_zero_row[(k + xr + 1) as usize];
    let mut box_ratios = Vec::new();
    let mut spatial_ratios = Vec::new();
    let mut temporal_ratios = Vec::new();
    for (bi, &n) in n_ladder.iter().enumerate() {
        let half = n.sqrt();
        let r = half.floor() as i64;
        let mut best = 0.0f64;
        let mut spatial = 0.0f64;
        for &x in cols.iter().filter(|&&x| x.abs() <= r) {
            let ci = (x + xr) as usize;
            let s_x = spatial_sum(phi0, x) - x as f64;
            let base = s_x - suffix[ci];
            best = best
                .max((base + box_max[bi][ci]).abs())
                .max((base + box_min[bi][ci]).abs());
            spatial = spatial.max(s_x.abs());
        }
        let temporal = (temporal_at[bi] - suffix[xr as usize]).abs();
        box_ratios.push(best / half);
        spatial_ratios.push(spatial / half);
        temporal_ratios.push(temporal / half);
    }
    Ok(SublinearityReport {
        n_ladder: n_ladder.to_vec(),
        box_ratios,
        spatial_ratios,
        temporal_ratios,
    })
}

/// Builds a dual-run environment adequate for [`chi_dual_mc`] at time `t`.
pub fn chi_dual_env(
    spec: &EnvSpec,
    t: f64,
    m_sigmas: f64,
    env_seed: u64,
) -> Result<EnvironmentWindow> {
    let reach = (m_sigmas * t.sqrt()).ceil() as i64;
    let mean = spec.mean_rate().unwrap_or(1.0);
    let hw = reach + (6.0 * (2.0 * mean * t).sqrt()).ceil() as i64 + 64;
    EnvironmentWindow::build(spec, -hw, hw, -t, 1.0, env_seed)
}
