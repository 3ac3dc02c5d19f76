//! Uniformization on constant-rate slices.
//!
//! On a slice where every rate is constant, the generator of the dual walk
//! restricted to a window with absorbing boundary is a fixed tridiagonal
//! matrix `G`, and `exp(dt G) v` is evaluated as a Poisson mixture of powers
//! of `P = I + G/lambda`. The mixture preserves nonnegativity and
//! sub-stochasticity and its truncation error is an explicit Poisson tail.
//! Laplace-weighted time integrals over the slice use the companion identity
//! `int_0^dt e^{-eps r} e^{-lambda r} (lambda r)^k / k! dr
//!     = (lambda/(lambda+eps))^k (lambda+eps)^{-1} P(Pois((lambda+eps) dt) >= k+1)`,
//! so no quadrature grid is ever introduced.

use crate::error::{Error, Result};

/// Which coordinate of the kernel the slice generator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Orientation {
    /// Generator on the source coordinate: `(G u)(x) = b(x) [u(x+1) + u(x-1) - 2 u(x)]`.
    Backward,
    /// Adjoint on the target coordinate:
    /// `(G u)(y) = b(y+1) u(y+1) + b(y-1) u(y-1) - 2 b(y) u(y)`.
    Adjoint,
}

/// Largest `lambda * dt` handled by a single Poisson series; longer slices
/// split exactly via the semigroup property.
const LAMBDA_DT_MAX: f64 = 256.0;

/// One constant-rate slice.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Slice<'a> {
    pub b: &'a [f64],
    pub dt: f64,
    pub orientation: Orientation,
    /// Truncation tolerance for this call.
    pub tol: f64,
}

impl<'a> Slice<'a> {
    fn lambda(&self) -> f64 {
        2.0 * self.b.iter().cloned().fold(0.0f64, f64::max)
    }
}

/// `out = (I + G/lambda) u` plus, when `feed` is given, the off-diagonal part
/// applied to the level below (jump-count bookkeeping).
#[inline]
fn step(
    orientation: Orientation,
    b: &[f64],
    lambda: f64,
    u: &[f64],
    feed: Option<&[f64]>,
    out: &mut [f64],
) {
    let n = b.len();
    let inv = 1.0 / lambda;
    let src = feed.unwrap_or(u);
    match orientation {
        Orientation::Backward => {
            for i in 0..n {
                let left = if i > 0 { src[i - 1] } else { 0.0 };
                let right = if i + 1 < n { src[i + 1] } else { 0.0 };
                let diag = u[i] * (1.0 - 2.0 * b[i] * inv);
                out[i] = diag + b[i] * inv * (left + right);
            }
        }
        Orientation::Adjoint => {
            for i in 0..n {
                let left = if i > 0 { b[i - 1] * src[i - 1] } else { 0.0 };
                let right = if i + 1 < n { b[i + 1] * src[i + 1] } else { 0.0 };
                let diag = u[i] * (1.0 - 2.0 * b[i] * inv);
                out[i] = diag + inv * (left + right);
            }
        }
    }
}

/// For jump-leveled systems the diagonal keeps the level and the off-diagonal
/// feeds from the level below: `out_j = D u_j + J u_{j-1}`.
#[inline]
fn step_level(
    orientation: Orientation,
    b: &[f64],
    lambda: f64,
    u_same: &[f64],
    u_below: Option<&[f64]>,
    out: &mut [f64],
) {
    let n = b.len();
    let inv = 1.0 / lambda;
    match orientation {
        Orientation::Backward => {
            for i in 0..n {
                let mut v = u_same[i] * (1.0 - 2.0 * b[i] * inv);
                if let Some(w) = u_below {
                    let left = if i > 0 { w[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { w[i + 1] } else { 0.0 };
                    v += b[i] * inv * (left + right);
                }
                out[i] = v;
            }
        }
        Orientation::Adjoint => {
            for i in 0..n {
                let mut v = u_same[i] * (1.0 - 2.0 * b[i] * inv);
                if let Some(w) = u_below {
                    let left = if i > 0 { b[i - 1] * w[i - 1] } else { 0.0 };
                    let right = if i + 1 < n { b[i + 1] * w[i + 1] } else { 0.0 };
                    v += inv * (left + right);
                }
                out[i] = v;
            }
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Whether the Poisson tail is small enough for vectors of the given sup
/// norm. Once `cum` saturates to within a few ulps of one the weights are
/// exhausted at f64 resolution and further terms are no-ops, so that state
/// counts as converged regardless of the requested tolerance.
#[inline]
fn series_converged(cum: f64, scale: f64, tol: f64) -> bool {
    let remaining = 1.0 - cum;
    remaining <= 1e-14 || remaining * scale <= tol.max(scale * 3e-16)
}

fn term_cap(mu: f64) -> usize {
    (mu + 60.0 * (mu + 1.0).sqrt() + 60.0).ceil() as usize
}

// The engine runs once per constant-rate slice, millions of times per sweep;
// series work vectors come from a thread-local pool instead of the allocator.
thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<Vec<f64>>> =
        const { std::cell::RefCell::new(Vec::new()) };
}

fn with_scratch<R>(count: usize, n: usize, f: impl FnOnce(&mut [Vec<f64>]) -> R) -> R {
    SCRATCH.with(|cell| {
        let mut pool = cell.borrow_mut();
        if pool.len() < count {
            pool.resize_with(count, Vec::new);
        }
        for v in pool.iter_mut().take(count) {
            v.clear();
            v.resize(n, 0.0);
        }
        f(&mut pool[..count])
    })
}

fn cap_error(slice: &Slice, what: &str) -> Error {
    Error::Numerical {
        context: format!("uniformization series for {what} did not meet tolerance"),
        rate_bound: slice.lambda(),
        slice_start: 0.0,
        slice_end: slice.dt,
    }
}

/// Evolves a batch of independent vectors to the slice endpoint:
/// `v <- exp(dt G) v`. Returns the total mass absorbed at the window
/// boundary, summed over the batch (meaningful for distribution vectors).
pub(crate) fn expmv_batch(slice: &Slice, vecs: &mut [&mut Vec<f64>]) -> Result<f64> {
    if vecs.is_empty() || slice.dt == 0.0 {
        return Ok(0.0);
    }
    let lambda = slice.lambda();
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let n = vecs[0].len();
    let pieces = (lambda * slice.dt / LAMBDA_DT_MAX).ceil().max(1.0) as usize;
    let delta = slice.dt / pieces as f64;
    let mu = lambda * delta;
    let tol = (slice.tol / pieces as f64).max(1e-15);
    let cap = term_cap(mu);
    let mut absorbed = 0.0;
    with_scratch(3, n, |scratch| {
        let (power, rest) = scratch.split_at_mut(1);
        let (next, acc) = rest.split_at_mut(1);
        let power = &mut power[0];
        let next = &mut next[0];
        let acc = &mut acc[0];
        for _ in 0..pieces {
            for v in vecs.iter_mut() {
                let before: f64 = v.iter().sum();
                power.copy_from_slice(v);
                let mut weight = (-mu).exp();
                let mut cum = weight;
                for (x, p) in acc.iter_mut().zip(power.iter()) {
                    *x = weight * p;
                }
                let mut running_max = sup_norm(power);
                let mut k = 0usize;
                while !series_converged(cum, running_max, tol) {
                    k += 1;
                    if k > cap {
                        return Err(cap_error(slice, "expmv"));
                    }
                    step(slice.orientation, slice.b, lambda, power, None, next);
                    std::mem::swap(power, next);
                    weight *= mu / k as f64;
                    cum += weight;
                    running_max = running_max.max(sup_norm(power));
                    for (x, p) in acc.iter_mut().zip(power.iter()) {
                        *x += weight * p;
                    }
                }
                v.copy_from_slice(acc);
                let after: f64 = v.iter().sum();
                absorbed += (before - after).max(0.0);
            }
        }
        Ok(())
    })?;
    Ok(absorbed)
}

/// Integral coefficients for one sub-slice:
/// `c_k = (lambda/(lambda+eps))^k (lambda+eps)^{-1} P(Pois((lambda+eps) delta) >= k+1)`.
struct LaplaceCoeffs {
    ratio: f64,
    inv_rate: f64,
    /// `q = P(Pois(mu') >= k+1)` maintained iteratively.
    q: f64,
    /// `p = pmf(k; mu')`.
    p: f64,
    mu_prime: f64,
    k: usize,
    ratio_pow: f64,
}

impl LaplaceCoeffs {
    fn new(lambda: f64, eps: f64, delta: f64) -> Self {
        let mu_prime = (lambda + eps) * delta;
        let p0 = (-mu_prime).exp();
        LaplaceCoeffs {
            ratio: lambda / (lambda + eps),
            inv_rate: 1.0 / (lambda + eps),
            q: (1.0 - p0).max(0.0),
            p: p0,
            mu_prime,
            k: 0,
            ratio_pow: 1.0,
        }
    }

    /// Coefficient for the current `k`, then advances.
    fn next_coeff(&mut self) -> f64 {
        let c = self.ratio_pow * self.inv_rate * self.q;
        // advance: p_{k+1} = p_k mu'/(k+1); q_{k+2} = q_{k+1} - p_{k+1}
        self.p *= self.mu_prime / (self.k + 1) as f64;
        self.q = (self.q - self.p).max(0.0);
        self.ratio_pow *= self.ratio;
        self.k += 1;
        c
    }
}

/// Evolves jump-leveled vectors to the slice endpoint. Optionally
/// accumulates, per level, the Laplace-weighted window sums
/// `out[j] += scale * sum_y int_0^dt e^{-eps r} (e^{rG} levels)_j(y) dr`
/// and/or the plain integral vectors
/// `out_vec[j][i] += int_0^dt (e^{rG} levels)_j(i) dr`.
pub(crate) struct LevelIntegrals<'a> {
    pub laplace: Option<(f64, f64, &'a mut [f64])>, // (eps, scale, per-level sums)
    pub plain_vec: Option<&'a mut [Vec<f64>]>,
}

pub(crate) fn expmv_levels(
    slice: &Slice,
    levels: &mut [Vec<f64>],
    mut integrals: Option<LevelIntegrals>,
) -> Result<()> {
    if levels.is_empty() || slice.dt == 0.0 {
        return Ok(());
    }
    let lambda = slice.lambda();
    let n = levels[0].len();
    let n_levels = levels.len();
    if lambda == 0.0 {
        // no motion; integrals reduce to the identity flow
        if let Some(ints) = integrals.as_mut() {
            if let Some((eps, scale, out)) = ints.laplace.as_mut() {
                let w = if *eps == 0.0 {
                    slice.dt
                } else {
                    (1.0 - (-*eps * slice.dt).exp()) / *eps
                };
                for (j, level) in levels.iter().enumerate() {
                    out[j] += *scale * w * level.iter().sum::<f64>();
                }
            }
            if let Some(out) = ints.plain_vec.as_mut() {
                for (j, level) in levels.iter().enumerate() {
                    for (o, v) in out[j].iter_mut().zip(level.iter()) {
                        *o += slice.dt * v;
                    }
                }
            }
        }
        return Ok(());
    }
    let pieces = (lambda * slice.dt / LAMBDA_DT_MAX).ceil().max(1.0) as usize;
    let delta = slice.dt / pieces as f64;
    let mu = lambda * delta;
    let tol = (slice.tol / pieces as f64).max(1e-15);
    let cap = term_cap(mu);

    with_scratch(3 * n_levels, n, |scratch| {
    let (power, rest) = scratch.split_at_mut(n_levels);
    let (next, acc) = rest.split_at_mut(n_levels);
    let mut offset = 0.0f64; // time already consumed, for Laplace offsets

    for _ in 0..pieces {
        for (p, l) in power.iter_mut().zip(levels.iter()) {
            p.copy_from_slice(l);
        }
        for a in acc.iter_mut() {
            for x in a.iter_mut() {
                *x = 0.0;
            }
        }
        let mut weight = (-mu).exp();
        let mut cum = weight;
        let mut lap = integrals
            .as_ref()
            .and_then(|i| i.laplace.as_ref().map(|(eps, _, _)| LaplaceCoeffs::new(lambda, *eps, delta)));
        let mut plain = integrals
            .as_ref()
            .and_then(|i| i.plain_vec.as_ref().map(|_| LaplaceCoeffs::new(lambda, 0.0, delta)));
        let mut running_max: f64 = power.iter().map(|p| sup_norm(p)).fold(0.0, f64::max);

        // k = 0 contributions
        let consume = |k_weight: f64,
                           lap_c: Option<f64>,
                           plain_c: Option<f64>,
                           power: &[Vec<f64>],
                           acc: &mut [Vec<f64>],
                           integrals: &mut Option<LevelIntegrals>,
                           offset: f64| {
            for (a, p) in acc.iter_mut().zip(power.iter()) {
                for (x, y) in a.iter_mut().zip(p.iter()) {
                    *x += k_weight * y;
                }
            }
            if let Some(ints) = integrals.as_mut() {
                if let (Some(c), Some((eps, scale, out))) = (lap_c, ints.laplace.as_mut()) {
                    let w = *scale * (-*eps * offset).exp() * c;
                    for (j, p) in power.iter().enumerate() {
                        out[j] += w * p.iter().sum::<f64>();
                    }
                }
                if let (Some(c), Some(out)) = (plain_c, ints.plain_vec.as_mut()) {
                    for (j, p) in power.iter().enumerate() {
                        for (o, v) in out[j].iter_mut().zip(p.iter()) {
                            *o += c * v;
                        }
                    }
                }
            }
        };

        consume(
            weight,
            lap.as_mut().map(|l| l.next_coeff()),
            plain.as_mut().map(|l| l.next_coeff()),
            &*power,
            acc,
            &mut integrals,
            offset,
        );
        let mut k = 0usize;
        while !series_converged(cum, running_max.max(1.0), tol) {
            k += 1;
            if k > cap {
                return Err(cap_error(slice, "leveled expmv"));
            }
            for j in (0..n_levels).rev() {
                let feed = if j > 0 {
                    Some(power[j - 1].as_slice())
                } else {
                    None
                };
                step_level(
                    slice.orientation,
                    slice.b,
                    lambda,
                    power[j].as_slice(),
                    feed,
                    &mut next[j],
                );
            }
            for (p, nx) in power.iter_mut().zip(next.iter_mut()) {
                std::mem::swap(p, nx);
            }
            weight *= mu / k as f64;
            cum += weight;
            running_max = running_max.max(power.iter().map(|p| sup_norm(p)).fold(0.0, f64::max));
            consume(
                weight,
                lap.as_mut().map(|l| l.next_coeff()),
                plain.as_mut().map(|l| l.next_coeff()),
                &*power,
                acc,
                &mut integrals,
                offset,
            );
        }
        for (l, a) in levels.iter_mut().zip(acc.iter()) {
            l.copy_from_slice(a);
        }
        offset += delta;
    }
    Ok(())
    })
}

/// Evolves one vector under the full (uncoupled) flow while accumulating its
/// Laplace-weighted window sum:
/// `sum += scale * int_0^dt e^{-eps r} sum_y (e^{rG} v)(y) dr`.
pub(crate) fn expmv_independent_with_laplace(
    slice: &Slice,
    v: &mut Vec<f64>,
    eps: f64,
    scale: f64,
    sum: &mut f64,
) -> Result<()> {
    if slice.dt == 0.0 {
        return Ok(());
    }
    let lambda = slice.lambda();
    if lambda == 0.0 {
        let w = if eps == 0.0 {
            slice.dt
        } else {
            (1.0 - (-eps * slice.dt).exp()) / eps
        };
        *sum += scale * w * v.iter().sum::<f64>();
        return Ok(());
    }
    let n = v.len();
    let pieces = (lambda * slice.dt / LAMBDA_DT_MAX).ceil().max(1.0) as usize;
    let delta = slice.dt / pieces as f64;
    let mu = lambda * delta;
    let tol = (slice.tol / pieces as f64).max(1e-15);
    let cap = term_cap(mu);
    with_scratch(3, n, |scratch| {
        let (power, rest) = scratch.split_at_mut(1);
        let (next, acc) = rest.split_at_mut(1);
        let power = &mut power[0];
        let next = &mut next[0];
        let acc = &mut acc[0];
        let mut offset = 0.0f64;
        for _ in 0..pieces {
            power.copy_from_slice(v);
            let mut weight = (-mu).exp();
            let mut cum = weight;
            let mut coeffs = LaplaceCoeffs::new(lambda, eps, delta);
            let mut running_max = sup_norm(power);
            let outer = scale * (-eps * offset).exp();
            let c0 = coeffs.next_coeff();
            let mut lap_acc = c0 * power.iter().sum::<f64>();
            for (x, p) in acc.iter_mut().zip(power.iter()) {
                *x = weight * p;
            }
            let mut k = 0usize;
            while !series_converged(cum, running_max.max(1.0), tol) {
                k += 1;
                if k > cap {
                    return Err(cap_error(slice, "expmv with laplace"));
                }
                step(slice.orientation, slice.b, lambda, power, None, next);
                std::mem::swap(power, next);
                weight *= mu / k as f64;
                cum += weight;
                running_max = running_max.max(sup_norm(power));
                let ck = coeffs.next_coeff();
                lap_acc += ck * power.iter().sum::<f64>();
                for (x, p) in acc.iter_mut().zip(power.iter()) {
                    *x += weight * p;
                }
            }
            *sum += outer * lap_acc;
            v.copy_from_slice(acc);
            offset += delta;
        }
        Ok(())
    })
}

/// Laplace-weighted integrals of the flow applied to the all-ones vector,
/// one output per epsilon: `out[k][i] = int_0^dt e^{-eps_k r} (e^{rG} 1)(i) dr`.
pub(crate) fn laplace_ones(slice: &Slice, eps: &[f64], out: &mut [Vec<f64>]) -> Result<()> {
    debug_assert_eq!(eps.len(), out.len());
    let n = slice.b.len();
    let lambda = slice.lambda();
    if lambda == 0.0 || slice.dt == 0.0 {
        for (k, e) in eps.iter().enumerate() {
            let w = if *e == 0.0 {
                slice.dt
            } else {
                (1.0 - (-e * slice.dt).exp()) / e
            };
            for x in out[k].iter_mut() {
                *x += w;
            }
        }
        return Ok(());
    }
    let pieces = (lambda * slice.dt / LAMBDA_DT_MAX).ceil().max(1.0) as usize;
    let delta = slice.dt / pieces as f64;
    let mu = lambda * delta;
    let tol = (slice.tol / pieces as f64).max(1e-15);
    let cap = term_cap(mu);
    with_scratch(3, n, |scratch| {
    let (power, rest) = scratch.split_at_mut(1);
    let (next, endpoint) = rest.split_at_mut(1);
    let power = &mut power[0];
    let next = &mut next[0];
    let endpoint = &mut endpoint[0];
    let mut offset = 0.0f64;
    for piece in 0..pieces {
        if piece > 0 {
            // the integrand for later pieces is the flow of the evolved ones
            // vector, not fresh ones
            power.copy_from_slice(endpoint);
        } else {
            for x in power.iter_mut() {
                *x = 1.0;
            }
        }
        for x in endpoint.iter_mut() {
            *x = 0.0;
        }
        let mut weight = (-mu).exp();
        let mut cum = weight;
        let mut coeffs: Vec<LaplaceCoeffs> = eps
            .iter()
            .map(|e| LaplaceCoeffs::new(lambda, *e, delta))
            .collect();
        let mut running_max = sup_norm(power);
        for (x, p) in endpoint.iter_mut().zip(power.iter()) {
            *x += weight * p;
        }
        for (ci, c) in coeffs.iter_mut().enumerate() {
            let cc = c.next_coeff();
            let scale = (-eps[ci] * offset).exp();
            for (o, p) in out[ci].iter_mut().zip(power.iter()) {
                *o += scale * cc * p;
            }
        }
        let mut k = 0usize;
        while !series_converged(cum, running_max.max(1.0), tol) {
            k += 1;
            if k > cap {
                return Err(cap_error(slice, "laplace_ones"));
            }
            step(slice.orientation, slice.b, lambda, power, None, next);
            std::mem::swap(power, next);
            weight *= mu / k as f64;
            cum += weight;
            running_max = running_max.max(sup_norm(power));
            for (x, p) in endpoint.iter_mut().zip(power.iter()) {
                *x += weight * p;
            }
            for (ci, c) in coeffs.iter_mut().enumerate() {
                let cc = c.next_coeff();
                let scale = (-eps[ci] * offset).exp();
                for (o, p) in out[ci].iter_mut().zip(power.iter()) {
                    *o += scale * cc * p;
                }
            }
        }
        offset += delta;
    }
    Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::constant_rate_kernel;

    #[test]
    fn expmv_matches_bessel_kernel() {
        // constant rate c: exp(dt G) delta_0 = e^{-2c dt} I_d(2c dt)
        let c = 0.5;
        let n = 41;
        let b = vec![c; n];
        let mut v = vec![0.0; n];
        v[20] = 1.0;
        let slice = Slice {
            b: &b,
            dt: 1.0,
            orientation: Orientation::Backward,
            tol: 1e-13,
        };
        expmv_batch(&slice, &mut [&mut v]).unwrap();
        for d in -5i64..=5 {
            let got = v[(20 + d) as usize];
            let want = constant_rate_kernel(c, 1.0, d);
            assert!(
                (got - want).abs() < 1e-10,
                "d = {d}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn adjoint_matches_backward_for_symmetric_field() {
        // for constant b the generator is symmetric, so both orientations agree
        let b = vec![0.8; 31];
        let mut v1 = vec![0.0; 31];
        v1[15] = 1.0;
        let mut v2 = v1.clone();
        let s1 = Slice {
            b: &b,
            dt: 0.7,
            orientation: Orientation::Backward,
            tol: 1e-13,
        };
        let s2 = Slice {
            b: &b,
            dt: 0.7,
            orientation: Orientation::Adjoint,
            tol: 1e-13,
        };
        expmv_batch(&s1, &mut [&mut v1]).unwrap();
        expmv_batch(&s2, &mut [&mut v2]).unwrap();
        for (a, b) in v1.iter().zip(v2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn long_slice_splitting_preserves_mass() {
        // lambda dt far beyond one series: splitting must stay stochasticity
        let b = vec![1.0; 201];
        let mut v = vec![0.0; 201];
        v[100] = 1.0;
        let slice = Slice {
            b: &b,
            dt: 400.0,
            orientation: Orientation::Backward,
            tol: 1e-10,
        };
        expmv_batch(&slice, &mut [&mut v]).unwrap();
        let total: f64 = v.iter().sum();
        assert!(total <= 1.0 + 1e-10);
        assert!(total > 0.9, "mass lost: {total}"); // window wide enough
        assert!(v.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn levels_sum_to_untruncated_flow() {
        // with enough levels the jump-split flow equals the plain flow
        let b: Vec<f64> = (0..21).map(|i| 0.3 + 0.05 * (i % 4) as f64).collect();
        let mut plain = vec![0.0; 21];
        plain[10] = 1.0;
        let mut levels: Vec<Vec<f64>> = vec![vec![0.0; 21]; 30];
        levels[0][10] = 1.0;
        let slice = Slice {
            b: &b,
            dt: 1.3,
            orientation: Orientation::Backward,
            tol: 1e-13,
        };
        expmv_batch(&slice, &mut [&mut plain]).unwrap();
        expmv_levels(&slice, &mut levels, None).unwrap();
        for i in 0..21 {
            let total: f64 = levels.iter().map(|l| l[i]).sum();
            assert!(
                (total - plain[i]).abs() < 1e-11,
                "site {i}: {total} vs {}",
                plain[i]
            );
        }
    }

    #[test]
    fn level_zero_is_pure_decay() {
        let b = vec![0.4, 0.9, 0.2];
        let mut levels: Vec<Vec<f64>> = vec![vec![1.0, 1.0, 1.0], vec![0.0; 3]];
        let slice = Slice {
            b: &b,
            dt: 0.9,
            orientation: Orientation::Backward,
            tol: 1e-14,
        };
        expmv_levels(&slice, &mut levels, None).unwrap();
        for i in 0..3 {
            let want = (-2.0 * b[i] * 0.9f64).exp();
            assert!(
                (levels[0][i] - want).abs() < 1e-12,
                "site {i}: {} vs {want}",
                levels[0][i]
            );
        }
    }

    #[test]
    fn laplace_integral_of_constant_flow() {
        // scalar check: for the 1-site window with rate b, exp(rG) keeps the
        // value e^{-2br}, so the Laplace integral has the closed form
        // (1 - e^{-(2b+eps) dt}) / (2b + eps)
        let b = vec![0.6];
        let mut levels = vec![vec![1.0]];
        let mut sums = vec![0.0];
        let slice = Slice {
            b: &b,
            dt: 2.0,
            orientation: Orientation::Backward,
            tol: 1e-14,
        };
        let eps = 0.25;
        expmv_levels(
            &slice,
            &mut levels,
            Some(LevelIntegrals {
                laplace: Some((eps, 1.0, &mut sums)),
                plain_vec: None,
            }),
        )
        .unwrap();
        let rate = 2.0 * 0.6 + eps;
        let want = (1.0 - (-rate * 2.0f64).exp()) / rate;
        assert!((sums[0] - want).abs() < 1e-12, "{} vs {want}", sums[0]);
        // endpoint too
        let want_end = (-2.0 * 0.6 * 2.0f64).exp();
        assert!((levels[0][0] - want_end).abs() < 1e-12);
    }

    #[test]
    fn laplace_ones_single_site() {
        let b = vec![0.5];
        let mut out = vec![vec![0.0], vec![0.0]];
        let slice = Slice {
            b: &b,
            dt: 1.5,
            orientation: Orientation::Adjoint,
            tol: 1e-14,
        };
        laplace_ones(&slice, &[0.1, 1.0], &mut out).unwrap();
        for (k, &eps) in [0.1, 1.0].iter().enumerate() {
            let rate = 2.0 * 0.5 + eps;
            let want = (1.0 - (-rate * 1.5f64).exp()) / rate;
            assert!(
                (out[k][0] - want).abs() < 1e-12,
                "eps {eps}: {} vs {want}",
                out[k][0]
            );
        }
    }

    #[test]
    fn plain_integral_vector() {
        // int_0^dt e^{-2br} dr on one site
        let b = vec![0.7];
        let mut levels = vec![vec![1.0]];
        let mut out = vec![vec![0.0]];
        let slice = Slice {
            b: &b,
            dt: 1.1,
            orientation: Orientation::Backward,
            tol: 1e-14,
        };
        expmv_levels(
            &slice,
            &mut levels,
            Some(LevelIntegrals {
                laplace: None,
                plain_vec: Some(&mut out),
            }),
        )
        .unwrap();
        let want = (1.0 - (-1.4f64 * 1.1).exp()) / 1.4;
        assert!((out[0][0] - want).abs() < 1e-12, "{} vs {want}", out[0][0]);
    }
}
