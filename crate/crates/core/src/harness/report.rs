//! Diagnostics report: every estimate carries its sample size and standard
//! error, and the whole document is reproducible from the config hash and
//! master seed.

use crate::corrector::SublinearityReport;
use crate::env::EnvSpec;
use crate::stats::Estimate;
use serde::Serialize;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct KsRow {
    pub n: f64,
    pub t: f64,
    pub distance: f64,
    pub n_paths: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleStats {
    /// Mean of `M_T - M_0` across paths.
    pub mean_increment: Estimate,
    /// Pooled lag-1 autocorrelation of the interval increments, with its
    /// large-sample standard error.
    pub lag1_autocorrelation: Estimate,
    /// `E[<M>_T] / T`.
    pub bracket_rate: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct Remark84Section {
    /// `2 E[b phi^2]` (the walk-side diffusivity).
    pub two_e_b_phi2: Estimate,
    /// `2 E[b phi]` (the dual-side diffusivity).
    pub two_e_b_phi: Estimate,
    /// Clock-slope estimate of the dual diffusivity.
    pub clock_slope: Estimate,
    /// `two_e_b_phi2 - two_e_b_phi` with combined standard error.
    pub gap: Estimate,
    /// Whether the gap is within two combined standard errors of zero at the
    /// measured precision; no claim beyond that is asserted.
    pub gap_consistent_with_zero: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub t: f64,
    /// Median over replicates of the annealed escape probability.
    pub median_escape: f64,
    pub replicates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RBetaRow {
    pub t: f64,
    pub estimate: Estimate,
    /// The elementary upper bound `(2 sqrt t + 1)/(beta sqrt t)`.
    pub upper_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerCounterexampleSection {
    pub delta: f64,
    pub beta: f64,
    pub decay: Vec<DecayRow>,
    pub r_beta: Vec<RBetaRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileRow {
    pub n: f64,
    /// Median over environments of the per-environment quantile of
    /// `|X_{n t}| / sqrt(n)`.
    pub median_quantile: f64,
    pub quantiles: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClockRow {
    pub t: f64,
    /// Median over environments of the realized clock slope.
    pub median_clock_over_t: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperCounterexampleSection {
    pub quantile_level: f64,
    pub quantiles: Vec<QuantileRow>,
    /// Median growth factor of the quantile from the smallest to the largest
    /// ladder entry.
    pub median_growth_factor: f64,
    pub clock: Vec<ClockRow>,
}

/// Gaussian reference law used in the rescaled-law comparisons.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaussianRef {
    pub variance_per_unit_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub spec: EnvSpec,
    /// Empirical `Var(X_t)/t`.
    pub sigma2_walk: Option<Estimate>,
    /// `2 E[b phi^2]`.
    pub sigma2_phi: Option<Estimate>,
    /// `E[<M>_T]/T`.
    pub sigma2_martingale: Option<Estimate>,
    /// Dual clock slope.
    pub sigma2_dual: Option<Estimate>,
    /// `E[Theta] = 2 E[b phi^2]`.
    pub theta_mean: Option<Estimate>,
    pub w_ref: Option<GaussianRef>,
    pub ks_table: Vec<KsRow>,
    pub martingale: Option<MartingaleStats>,
    pub sublinearity: Option<SublinearityReport>,
    pub tightness_quantiles: Vec<QuantileRow>,
    pub remark84: Option<Remark84Section>,
    pub lower_counterexample: Option<LowerCounterexampleSection>,
    pub upper_counterexample: Option<UpperCounterexampleSection>,
    /// Stage failures: the report is partial when nonempty.
    pub errors: Vec<String>,
}

impl DiagnosticsReport {
    pub fn new(config_hash: String, master_seed: u64, spec: EnvSpec) -> Self {
        DiagnosticsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config_hash,
            master_seed,
            spec,
            sigma2_walk: None,
            sigma2_phi: None,
            sigma2_martingale: None,
            sigma2_dual: None,
            theta_mean: None,
            w_ref: None,
            ks_table: Vec::new(),
            martingale: None,
            sublinearity: None,
            tightness_quantiles: Vec::new(),
            remark84: None,
            lower_counterexample: None,
            upper_counterexample: None,
            errors: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }

    /// Threshold violations for `--check` runs. The sigma-estimator
    /// concordance demands pairwise agreement within two combined standard
    /// errors; KS rows compare against their frozen thresholds.
    pub fn check_failures(&self) -> Vec<String> {
        let mut failures = Vec::new();
        for e in &self.errors {
            failures.push(format!("stage failure: {e}"));
        }
        let estimators: Vec<(&str, Estimate)> = [
            ("sigma2_walk", self.sigma2_walk),
            ("sigma2_phi", self.sigma2_phi),
            ("sigma2_martingale", self.sigma2_martingale),
        ]
        .into_iter()
        .filter_map(|(n, e)| e.map(|e| (n, e)))
        .collect();
        for i in 0..estimators.len() {
            for j in (i + 1)..estimators.len() {
                let (na, a) = estimators[i];
                let (nb, b) = estimators[j];
                let combined = (a.se.powi(2) + b.se.powi(2)).sqrt();
                // SE-free exact estimators still deserve slack for MC noise
                // of the partner: use a floor of 1% of the value
                let slack = (2.0 * combined).max(0.01 * a.value.abs());
                if (a.value - b.value).abs() > slack {
                    failures.push(format!(
                        "estimator mismatch: {na} = {} vs {nb} = {}",
                        a.value, b.value
                    ));
                }
            }
        }
        for row in &self.ks_table {
            if row.distance > row.threshold {
                failures.push(format!(
                    "KS distance {} at n = {} exceeds threshold {}",
                    row.distance, row.n, row.threshold
                ));
            }
        }
        if let Some(m) = &self.martingale {
            if !m.mean_increment.within_k_se(0.0, 3.0) {
                failures.push(format!(
                    "martingale mean increment {} +- {} not consistent with 0",
                    m.mean_increment.value, m.mean_increment.se
                ));
            }
            if !m.lag1_autocorrelation.within_k_se(0.0, 3.0) {
                failures.push(format!(
                    "martingale lag-1 autocorrelation {} +- {} not consistent with 0",
                    m.lag1_autocorrelation.value, m.lag1_autocorrelation.se
                ));
            }
        }
        failures
    }

    /// Plot-ready long-format CSV: one `(section, series, x, value)` row per
    /// datum.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("section,series,x,value\n");
        let mut push = |section: &str, series: &str, x: f64, v: f64| {
            out.push_str(&format!("{section},{series},{x},{v}\n"));
        };
        for (name, est) in [
            ("sigma2_walk", self.sigma2_walk),
            ("sigma2_phi", self.sigma2_phi),
            ("sigma2_martingale", self.sigma2_martingale),
            ("sigma2_dual", self.sigma2_dual),
            ("theta_mean", self.theta_mean),
        ] {
            if let Some(e) = est {
                push("diffusivity", name, 0.0, e.value);
                push("diffusivity", &format!("{name}_se"), 0.0, e.se);
            }
        }
        for row in &self.ks_table {
            push("ks", &format!("t={}", row.t), row.n, row.distance);
        }
        if let Some(s) = &self.sublinearity {
            for (i, &n) in s.n_ladder.iter().enumerate() {
                push("sublinearity", "box_ratio", n, s.box_ratios[i]);
                push("sublinearity", "spatial_ratio", n, s.spatial_ratios[i]);
                push("sublinearity", "temporal_ratio", n, s.temporal_ratios[i]);
            }
        }
        for row in &self.tightness_quantiles {
            push("tightness", "quantile", row.n, row.median_quantile);
        }
        if let Some(l) = &self.lower_counterexample {
            for row in &l.decay {
                push("lower", "escape_median", row.t, row.median_escape);
            }
            for row in &l.r_beta {
                push("lower", "r_beta", row.t, row.estimate.value);
                push("lower", "r_beta_bound", row.t, row.upper_bound);
            }
        }
        if let Some(u) = &self.upper_counterexample {
            for row in &u.quantiles {
                push("upper", "quantile_median", row.n, row.median_quantile);
            }
            for row in &u.clock {
                push("upper", "clock_over_t_median", row.t, row.median_clock_over_t);
            }
        }
        out
    }
}
