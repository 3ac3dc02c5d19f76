//! Environment specifications: the menu of conductance-field generators and
//! their moment-condition bookkeeping.

use crate::error::{Error, Result};
use crate::rng::{fnv1a, Substream};
use serde::{Deserialize, Serialize};

/// Marginal law for per-edge static draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum MarginalLaw {
    /// Takes `lo` with probability `1 - p_hi` and `hi` with probability `p_hi`.
    TwoPoint { lo: f64, hi: f64, p_hi: f64 },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl MarginalLaw {
    pub fn sample(&self, stream: &mut Substream) -> f64 {
        match *self {
            MarginalLaw::TwoPoint { lo, hi, p_hi } => {
                if stream.next_f64() < p_hi {
                    hi
                } else {
                    lo
                }
            }
            MarginalLaw::Uniform { lo, hi } => lo + (hi - lo) * stream.next_f64(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            MarginalLaw::TwoPoint { lo, hi, p_hi } => lo * (1.0 - p_hi) + hi * p_hi,
            MarginalLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn mean_inverse(&self) -> f64 {
        match *self {
            MarginalLaw::TwoPoint { lo, hi, p_hi } => (1.0 - p_hi) / lo + p_hi / hi,
            MarginalLaw::Uniform { lo, hi } => (hi.ln() - lo.ln()) / (hi - lo),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            MarginalLaw::TwoPoint { lo, hi, p_hi } => {
                if !(lo > 0.0 && lo.is_finite() && hi > 0.0 && hi.is_finite()) {
                    return Err(Error::config("two-point law requires positive finite levels"));
                }
                if !(0.0..=1.0).contains(&p_hi) {
                    return Err(Error::config("two-point law requires p_hi in [0, 1]"));
                }
            }
            MarginalLaw::Uniform { lo, hi } => {
                if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::config("uniform law requires 0 < lo < hi < inf"));
                }
            }
        }
        Ok(())
    }
}

/// Level law for spatially homogeneous switching environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LevelLaw {
    TwoPoint { lo: f64, hi: f64, p_hi: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Pareto with scale 1: density `alpha x^{-alpha-1}` on `[1, inf)`.
    /// The mean is `alpha/(alpha-1)` for `alpha > 1` and infinite otherwise.
    Pareto { alpha: f64 },
}

impl LevelLaw {
    pub fn sample(&self, stream: &mut Substream) -> f64 {
        match *self {
            LevelLaw::TwoPoint { lo, hi, p_hi } => {
                if stream.next_f64() < p_hi {
                    hi
                } else {
                    lo
                }
            }
            LevelLaw::Uniform { lo, hi } => lo + (hi - lo) * stream.next_f64(),
            LevelLaw::Pareto { alpha } => stream.next_f64_open().powf(-1.0 / alpha),
        }
    }

    /// Mean level, `None` when infinite.
    pub fn mean(&self) -> Option<f64> {
        match *self {
            LevelLaw::TwoPoint { lo, hi, p_hi } => Some(lo * (1.0 - p_hi) + hi * p_hi),
            LevelLaw::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            LevelLaw::Pareto { alpha } => (alpha > 1.0).then(|| alpha / (alpha - 1.0)),
        }
    }

    pub fn mean_inverse(&self) -> f64 {
        match *self {
            LevelLaw::TwoPoint { lo, hi, p_hi } => (1.0 - p_hi) / lo + p_hi / hi,
            LevelLaw::Uniform { lo, hi } => (hi.ln() - lo.ln()) / (hi - lo),
            LevelLaw::Pareto { alpha } => alpha / (alpha + 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LevelLaw::TwoPoint { lo, hi, p_hi } => {
                if !(lo > 0.0 && lo.is_finite() && hi > 0.0 && hi.is_finite()) {
                    return Err(Error::config("two-point law requires positive finite levels"));
                }
                if !(0.0..=1.0).contains(&p_hi) {
                    return Err(Error::config("two-point law requires p_hi in [0, 1]"));
                }
            }
            LevelLaw::Uniform { lo, hi } => {
                if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                    return Err(Error::config("uniform law requires 0 < lo < hi < inf"));
                }
            }
            LevelLaw::Pareto { alpha } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::config("pareto law requires alpha > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Which of the two first-moment conditions on the conductances fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentViolation {
    /// `E[a]` diverges.
    UpperMoment,
    /// `E[1/a]` diverges.
    LowerMoment,
}

/// The generator menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    /// Every edge carries the fixed value `c` at all times.
    Constant { c: f64 },
    /// Time-constant, i.i.d. per edge from a marginal law.
    StaticIid { #[serde(flatten)] law: MarginalLaw },
    /// Per-edge independent two-state switching. The high state is left at
    /// rate `rate_on` (holding time Exponential(rate_on)) and the low state
    /// at rate `rate_off`, so the stationary fraction of time at `high` is
    /// `rate_off / (rate_on + rate_off)`.
    OnOffSwitching {
        rate_on: f64,
        rate_off: f64,
        low: f64,
        high: f64,
    },
    /// A single level process shared by all edges: it jumps at `switch_rate`
    /// to a fresh i.i.d. level from the law.
    HomogeneousInSpace {
        #[serde(flatten)]
        law: LevelLaw,
        switch_rate: f64,
    },
    /// Static per-edge `a = U^exponent + offset` with `U` uniform on (0,1).
    /// For `exponent >= 1` and `offset = 0` the inverse moment diverges.
    StaticHeavyInverse { exponent: f64, #[serde(default)] offset: f64 },
    /// Spatially homogeneous levels jumping at rate 1 to i.i.d. Pareto(alpha)
    /// values. For `alpha <= 1` the mean level diverges.
    HomogeneousHeavyUpper { pareto_alpha: f64 },
}

/// A complete environment description: generator plus policy flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    /// Explicit opt-in for environments outside the positivity assumption
    /// (for example ON/OFF with true zeros). Theory-checking suites refuse
    /// these.
    #[serde(default)]
    pub out_of_theory: bool,
}

const SCHEMA_VERSION: u32 = 1;

/// On-disk form of [`EnvSpec`] with a schema version and an optional
/// compliance claim that is validated on load.
#[derive(Debug, Serialize, Deserialize)]
struct EnvSpecDoc {
    schema_version: u32,
    #[serde(flatten)]
    spec: EnvSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    assumption1_compliant: Option<bool>,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        EnvSpec {
            kind,
            out_of_theory: false,
        }
    }

    pub fn constant(c: f64) -> Self {
        EnvSpec::new(EnvKind::Constant { c })
    }

    /// The static two-point environment used throughout the test suites:
    /// conductances i.i.d. uniform on {1, 2}.
    pub fn static_iid_12() -> Self {
        EnvSpec::new(EnvKind::StaticIid {
            law: MarginalLaw::TwoPoint {
                lo: 1.0,
                hi: 2.0,
                p_hi: 0.5,
            },
        })
    }

    pub fn on_off(rate_on: f64, rate_off: f64, low: f64, high: f64) -> Self {
        EnvSpec::new(EnvKind::OnOffSwitching {
            rate_on,
            rate_off,
            low,
            high,
        })
    }

    /// Whether both first moments of the conductance law are finite.
    pub fn assumption1_compliant(&self) -> bool {
        self.moment_violation().is_none() && !self.out_of_theory
    }

    /// Which moment condition fails, if any.
    pub fn moment_violation(&self) -> Option<MomentViolation> {
        match self.kind {
            EnvKind::Constant { .. }
            | EnvKind::StaticIid { .. }
            | EnvKind::OnOffSwitching { .. } => None,
            EnvKind::HomogeneousInSpace { ref law, .. } => {
                if law.mean().is_none() {
                    Some(MomentViolation::UpperMoment)
                } else {
                    None
                }
            }
            EnvKind::StaticHeavyInverse { exponent, offset } => {
                if offset <= 0.0 && exponent >= 1.0 {
                    Some(MomentViolation::LowerMoment)
                } else {
                    None
                }
            }
            EnvKind::HomogeneousHeavyUpper { pareto_alpha } => {
                if pareto_alpha <= 1.0 {
                    Some(MomentViolation::UpperMoment)
                } else {
                    None
                }
            }
        }
    }

    /// Mean of the stationary marginal rate, `None` when infinite.
    pub fn mean_rate(&self) -> Option<f64> {
        match self.kind {
            EnvKind::Constant { c } => Some(c),
            EnvKind::StaticIid { ref law } => Some(law.mean()),
            EnvKind::OnOffSwitching {
                rate_on,
                rate_off,
                low,
                high,
            } => Some((rate_off * high + rate_on * low) / (rate_on + rate_off)),
            EnvKind::HomogeneousInSpace { ref law, .. } => law.mean(),
            EnvKind::StaticHeavyInverse { exponent, offset } => {
                Some(1.0 / (exponent + 1.0) + offset)
            }
            EnvKind::HomogeneousHeavyUpper { pareto_alpha } => {
                LevelLaw::Pareto {
                    alpha: pareto_alpha,
                }
                .mean()
            }
        }
    }

    /// An a.s. upper bound on the rate when one exists (used for window
    /// sizing and uniformization constants).
    pub fn rate_bound(&self) -> Option<f64> {
        match self.kind {
            EnvKind::Constant { c } => Some(c),
            EnvKind::StaticIid { ref law } => Some(match *law {
                MarginalLaw::TwoPoint { lo, hi, .. } => lo.max(hi),
                MarginalLaw::Uniform { hi, .. } => hi,
            }),
            EnvKind::OnOffSwitching { low, high, .. } => Some(low.max(high)),
            EnvKind::HomogeneousInSpace { ref law, .. } => match *law {
                LevelLaw::TwoPoint { lo, hi, .. } => Some(lo.max(hi)),
                LevelLaw::Uniform { hi, .. } => Some(hi),
                LevelLaw::Pareto { .. } => None,
            },
            EnvKind::StaticHeavyInverse { offset, .. } => Some(1.0 + offset),
            EnvKind::HomogeneousHeavyUpper { .. } => None,
        }
    }

    /// True when all edges share one track.
    pub fn spatially_homogeneous(&self) -> bool {
        matches!(
            self.kind,
            EnvKind::Constant { .. }
                | EnvKind::HomogeneousInSpace { .. }
                | EnvKind::HomogeneousHeavyUpper { .. }
        )
    }

    /// True when tracks are constant in time.
    pub fn static_in_time(&self) -> bool {
        matches!(
            self.kind,
            EnvKind::Constant { .. }
                | EnvKind::StaticIid { .. }
                | EnvKind::StaticHeavyInverse { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EnvKind::Constant { c } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::config("constant rate must be positive and finite"));
                }
            }
            EnvKind::StaticIid { ref law } => law.validate()?,
            EnvKind::OnOffSwitching {
                rate_on,
                rate_off,
                low,
                high,
            } => {
                if !(rate_on > 0.0 && rate_on.is_finite() && rate_off > 0.0 && rate_off.is_finite())
                {
                    return Err(Error::config("switching rates must be positive and finite"));
                }
                if !(high > 0.0 && high.is_finite() && low >= 0.0 && low < high) {
                    return Err(Error::config("levels must satisfy 0 <= low < high < inf"));
                }
                if low == 0.0 && !self.out_of_theory {
                    return Err(Error::config(
                        "ON/OFF with a true zero level requires the out_of_theory flag",
                    ));
                }
            }
            EnvKind::HomogeneousInSpace {
                ref law,
                switch_rate,
            } => {
                law.validate()?;
                if !(switch_rate > 0.0 && switch_rate.is_finite()) {
                    return Err(Error::config("switch_rate must be positive and finite"));
                }
            }
            EnvKind::StaticHeavyInverse { exponent, offset } => {
                if !(exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::config("exponent must be positive and finite"));
                }
                if !(offset >= 0.0 && offset.is_finite()) {
                    return Err(Error::config("offset must be nonnegative and finite"));
                }
            }
            EnvKind::HomogeneousHeavyUpper { pareto_alpha } => {
                if !(pareto_alpha > 0.0 && pareto_alpha.is_finite()) {
                    return Err(Error::config("pareto_alpha must be positive and finite"));
                }
            }
        }
        Ok(())
    }

    /// Serializes to the versioned key-value document format.
    pub fn to_toml_string(&self) -> String {
        let doc = EnvSpecDoc {
            schema_version: SCHEMA_VERSION,
            spec: self.clone(),
            assumption1_compliant: Some(self.assumption1_compliant()),
        };
        toml::to_string(&doc).expect("spec serialization cannot fail")
    }

    /// Parses the document format, validating parameters and any compliance
    /// claim it carries.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let doc: EnvSpecDoc =
            toml::from_str(s).map_err(|e| Error::config(format!("bad env spec: {e}")))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported env spec schema_version {}",
                doc.schema_version
            )));
        }
        doc.spec.validate()?;
        if let Some(claim) = doc.assumption1_compliant {
            if claim && !doc.spec.assumption1_compliant() {
                return Err(Error::config(
                    "spec claims assumption1_compliant = true but its moments violate the assumption",
                ));
            }
        }
        Ok(doc.spec)
    }

    /// Stable content hash of the canonical serialization.
    pub fn content_hash(&self) -> u64 {
        fnv1a(self.to_toml_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let specs = [
            EnvSpec::constant(1.5),
            EnvSpec::static_iid_12(),
            EnvSpec::on_off(1.0, 1.0, 0.1, 1.0),
            EnvSpec::new(EnvKind::HomogeneousInSpace {
                law: LevelLaw::Pareto { alpha: 2.0 },
                switch_rate: 1.0,
            }),
            EnvSpec::new(EnvKind::StaticHeavyInverse {
                exponent: 2.0,
                offset: 0.0,
            }),
            EnvSpec::new(EnvKind::HomogeneousHeavyUpper { pareto_alpha: 0.75 }),
        ];
        for spec in specs {
            let s = spec.to_toml_string();
            let back = EnvSpec::from_toml_str(&s).unwrap();
            assert_eq!(spec, back, "roundtrip failed for {s}");
        }
    }

    #[test]
    fn compliance_flags() {
        assert!(EnvSpec::constant(1.0).assumption1_compliant());
        assert!(EnvSpec::static_iid_12().assumption1_compliant());
        assert!(EnvSpec::on_off(1.0, 1.0, 0.1, 1.0).assumption1_compliant());

        let heavy_lower = EnvSpec::new(EnvKind::StaticHeavyInverse {
            exponent: 2.0,
            offset: 0.0,
        });
        assert_eq!(
            heavy_lower.moment_violation(),
            Some(MomentViolation::LowerMoment)
        );

        let heavy_upper = EnvSpec::new(EnvKind::HomogeneousHeavyUpper { pareto_alpha: 0.75 });
        assert_eq!(
            heavy_upper.moment_violation(),
            Some(MomentViolation::UpperMoment)
        );

        // offset regularizes the inverse moment
        let control = EnvSpec::new(EnvKind::StaticHeavyInverse {
            exponent: 2.0,
            offset: 0.1,
        });
        assert!(control.assumption1_compliant());

        // finite-mean Pareto is compliant
        let control = EnvSpec::new(EnvKind::HomogeneousHeavyUpper { pareto_alpha: 2.0 });
        assert!(control.assumption1_compliant());
    }

    #[test]
    fn compliance_claim_rejected_for_heavy_spec() {
        let heavy = EnvSpec::new(EnvKind::StaticHeavyInverse {
            exponent: 2.0,
            offset: 0.0,
        });
        let mut doc = heavy.to_toml_string();
        doc = doc.replace("assumption1_compliant = false", "assumption1_compliant = true");
        assert!(matches!(
            EnvSpec::from_toml_str(&doc),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_level_requires_out_of_theory() {
        let spec = EnvSpec::on_off(1.0, 1.0, 0.0, 1.0);
        assert!(spec.validate().is_err());
        let mut flagged = spec;
        flagged.out_of_theory = true;
        assert!(flagged.validate().is_ok());
        assert!(!flagged.assumption1_compliant());
    }

    #[test]
    fn on_off_mean_rate() {
        let spec = EnvSpec::on_off(1.0, 3.0, 0.1, 1.0);
        // P(high) = rate_off / (rate_on + rate_off) = 3/4
        assert!((spec.mean_rate().unwrap() - (0.75 * 1.0 + 0.25 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(EnvSpec::constant(0.0).validate().is_err());
        assert!(EnvSpec::constant(-1.0).validate().is_err());
        assert!(EnvSpec::on_off(0.0, 1.0, 0.1, 1.0).validate().is_err());
        assert!(EnvSpec::new(EnvKind::StaticIid {
            law: MarginalLaw::TwoPoint {
                lo: -1.0,
                hi: 2.0,
                p_hi: 0.5
            }
        })
        .validate()
        .is_err());
    }
}
