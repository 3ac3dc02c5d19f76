//! Experiment configuration: a versioned key-value document that fully
//! determines a run together with the master seed.

use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::rng::fnv1a;
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Diffusivity estimators, rescaled-law table, martingale checks.
    Invariance,
    /// The two dual-side diffusivity expressions and their gap.
    Remark84,
    /// Both of the above.
    Diagnose,
    CounterexampleLower,
    CounterexampleUpper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarMode {
    Quenched,
    Annealed,
}

/// Numerical knobs of a run. Every field has a default so configs stay
/// short; the acceptance configs pin them explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    /// Paths for the rescaled-law (KS) table, quenched.
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    pub n_ladder: Vec<f64>,
    /// Diffusivity estimator: mode, horizon and paths.
    pub var_mode: VarMode,
    pub var_time: f64,
    pub var_paths: usize,
    /// Martingale diagnostics (closed-form density methods only).
    pub martingale_paths: usize,
    pub martingale_horizon: f64,
    pub martingale_intervals: usize,
    /// Dual-walk clock estimator.
    pub dual_paths: usize,
    pub dual_horizon: f64,
    /// Environments for the annealed moment estimates.
    pub phi_envs: usize,
    pub eps_schedule: Vec<f64>,
    pub tail_tol: f64,
    pub uniform_tol: f64,
    /// KS acceptance threshold for the rescaled-law table (calibrated on the
    /// constant-rate null and frozen here).
    pub ks_threshold: f64,
    /// Counterexample machinery.
    pub replicates: usize,
    pub beta: f64,
    pub delta: f64,
    pub quantile: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            n_paths: 10_000,
            t_grid: vec![1.0],
            n_ladder: vec![100.0, 1000.0, 10_000.0],
            var_mode: VarMode::Annealed,
            var_time: 2000.0,
            var_paths: 20_000,
            martingale_paths: 4000,
            martingale_horizon: 200.0,
            martingale_intervals: 8,
            dual_paths: 400,
            dual_horizon: 10_000.0,
            phi_envs: 200,
            eps_schedule: vec![1e-1, 1e-2, 1e-3],
            tail_tol: 1e-4,
            uniform_tol: 1e-9,
            ks_threshold: 0.03,
            replicates: 20,
            beta: 1.0,
            delta: 0.5,
            quantile: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub master_seed: u64,
    pub env: EnvSpec,
    #[serde(default)]
    pub run: RunParams,
}

impl RunConfig {
    pub fn new(kind: ExperimentKind, env: EnvSpec, master_seed: u64) -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            kind,
            master_seed,
            env,
            run: RunParams::default(),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::config(format!("bad run config: {e}")))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported config schema_version {}",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        let r = &self.run;
        if r.n_paths == 0 || r.var_paths == 0 || r.dual_paths == 0 {
            return Err(Error::config("path counts must be positive"));
        }
        if r.t_grid.is_empty() || r.n_ladder.is_empty() {
            return Err(Error::config("time grids must be nonempty"));
        }
        if r.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("n ladder must increase strictly"));
        }
        if r.eps_schedule.is_empty() || r.eps_schedule.iter().any(|e| *e <= 0.0) {
            return Err(Error::config("eps schedule must be positive"));
        }
        if !(r.beta > 0.0 && r.delta > 0.0 && (0.0..1.0).contains(&r.quantile)) {
            return Err(Error::config("bad counterexample parameters"));
        }
        match self.kind {
            ExperimentKind::Invariance | ExperimentKind::Remark84 | ExperimentKind::Diagnose => {
                if !self.env.assumption1_compliant() {
                    return Err(Error::config(
                        "theory-checking experiments require an assumption-compliant spec",
                    ));
                }
            }
            ExperimentKind::CounterexampleLower => {
                if !matches!(self.env.kind, crate::env::EnvKind::StaticHeavyInverse { .. }) {
                    return Err(Error::config(
                        "the lower counterexample runs on static heavy-inverse specs",
                    ));
                }
            }
            ExperimentKind::CounterexampleUpper => {
                if !matches!(
                    self.env.kind,
                    crate::env::EnvKind::HomogeneousHeavyUpper { .. }
                ) {
                    return Err(Error::config(
                        "the upper counterexample runs on homogeneous heavy-upper specs",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stable hash of the canonical serialization, hex-encoded.
    pub fn content_hash(&self) -> String {
        format!("{:016x}", fnv1a(self.to_toml_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;

    #[test]
    fn roundtrip_is_identity() {
        let mut cfg = RunConfig::new(ExperimentKind::Diagnose, EnvSpec::static_iid_12(), 42);
        cfg.run.n_paths = 1234;
        cfg.run.eps_schedule = vec![0.5, 0.25];
        let s = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&s).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.content_hash(), back.content_hash());
    }

    #[test]
    fn kind_spec_compatibility_enforced() {
        let heavy = EnvSpec::new(EnvKind::StaticHeavyInverse {
            exponent: 2.0,
            offset: 0.0,
        });
        let cfg = RunConfig::new(ExperimentKind::Invariance, heavy.clone(), 1);
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::new(ExperimentKind::CounterexampleLower, heavy, 1);
        assert!(cfg.validate().is_ok());
        let cfg = RunConfig::new(ExperimentKind::CounterexampleUpper, EnvSpec::constant(1.0), 1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_fill_missing_fields() {
        let doc = r#"
schema_version = 1
kind = "invariance"
master_seed = 7
[env]
kind = "constant"
c = 1.0
"#;
        let cfg = RunConfig::from_toml_str(doc).unwrap();
        assert_eq!(cfg.run.n_paths, RunParams::default().n_paths);
    }
}
