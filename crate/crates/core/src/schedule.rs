use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Inverse-temperature schedule indexed by iteration or epoch (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSchedule {
    /// `beta_t = base * t`
    Linear {
        base: f64,
    },
    Constant {
        value: f64,
    },
    /// `beta_t = base * t^exponent`
    Power {
        base: f64,
        exponent: f64,
    },
}

impl BetaSchedule {
    pub fn beta(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            BetaSchedule::Linear { base } => base * t,
            BetaSchedule::Constant { value } => value,
            BetaSchedule::Power { base, exponent } => base * t.powf(exponent),
        }
    }

    /// Rebuilds the schedule around a new base coefficient, keeping its shape.
    pub fn with_base(self, base: f64) -> Self {
        match self {
            BetaSchedule::Linear { .. } => BetaSchedule::Linear { base },
            BetaSchedule::Constant { .. } => BetaSchedule::Constant { value: base },
            BetaSchedule::Power { exponent, .. } => BetaSchedule::Power { base, exponent },
        }
    }

    pub fn base(&self) -> f64 {
        match *self {
            BetaSchedule::Linear { base } | BetaSchedule::Power { base, .. } => base,
            BetaSchedule::Constant { value } => value,
        }
    }

    pub fn rule_name(&self) -> String {
        match *self {
            BetaSchedule::Linear { .. } => "linear".into(),
            BetaSchedule::Constant { .. } => "constant".into(),
            BetaSchedule::Power { exponent, .. } => format!("power:{exponent:?}"),
        }
    }

    /// Parses a rule name (`linear`, `constant`, `power:<exp>`) with the given base.
    pub fn from_rule(rule: &str, base: f64) -> Result<Self, Error> {
        if !(base >= 0.0) || !base.is_finite() {
            return Err(Error::Config(format!("beta base must be nonnegative, got {base}")));
        }
        match rule {
            "linear" => Ok(BetaSchedule::Linear { base }),
            "constant" => Ok(BetaSchedule::Constant { value: base }),
            other => match other.strip_prefix("power:") {
                Some(exp) => {
                    let exponent: f64 = exp
                        .parse()
                        .map_err(|_| Error::Config(format!("bad power exponent '{exp}'")))?;
                    if !(exponent >= 0.0) {
                        return Err(Error::Config("power exponent must be nonnegative".into()));
                    }
                    Ok(BetaSchedule::Power { base, exponent })
                }
                None => Err(Error::Config(format!("unknown beta rule '{other}'"))),
            },
        }
    }
}

impl fmt::Display for BetaSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:?}", self.rule_name(), self.base())
    }
}

/// Accepts `<rule>:<base>`, e.g. `linear:1`, `constant:0`, `power:2:0.5`.
impl FromStr for BetaSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let (rule, base) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Config(format!("schedule '{s}' is not <rule>:<base>")))?;
        let base: f64 = base
            .parse()
            .map_err(|_| Error::Config(format!("bad schedule base in '{s}'")))?;
        Self::from_rule(rule, base)
    }
}
