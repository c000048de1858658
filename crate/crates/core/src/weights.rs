//! Weight families that define the target population.
//!
//! Each estimand carries a weight function `lambda(t)` of the propensity
//! score together with closed-form derivatives up to third order. The
//! derivatives feed the influence-function denominator `D`, numerator `N`,
//! and the orthogonality analysis, so they are the numerical backbone of the
//! whole engine and are tested against finite differences.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Highest supported derivative order of `lambda`.
pub const MAX_DERIVATIVE_ORDER: usize = 3;

/// A target-population estimand, identified by its weight family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimand {
    /// Overall population: `lambda(t) = 1`.
    Ate,
    /// Treated population: `lambda(t) = t`.
    Att,
    /// Control population: `lambda(t) = 1 - t`.
    Atc,
    /// Overlap population: `lambda(t) = t (1 - t)`.
    Ato,
    /// Entropy population: `lambda(t) = -t ln t - (1 - t) ln(1 - t)`.
    Aten,
    /// Beta family: `lambda(t) = t^(nu1 - 1) (1 - t)^(nu2 - 1)`.
    Atb { nu1: f64, nu2: f64 },
}

/// `x^e` with an exact fast path for small integer exponents.
fn pw(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == e.trunc() && e.abs() <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

/// `c * t^et * (1-t)^eu`, short-circuiting zero coefficients so lower-order
/// beta parameters never touch negative powers they do not need.
fn term(c: f64, t: f64, et: f64, eu: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c * pw(t, et) * pw(1.0 - t, eu)
    }
}

impl Estimand {
    /// Beta-family estimand with validated parameters.
    pub fn atb(nu1: f64, nu2: f64) -> Result<Self> {
        if !(nu1.is_finite() && nu2.is_finite() && nu1 >= 1.0 && nu2 >= 1.0) {
            return Err(Error::Config(format!(
                "ATB parameters must be finite and >= 1, got ({nu1}, {nu2})"
            )));
        }
        Ok(Estimand::Atb { nu1, nu2 })
    }

    /// The canonical family this estimand reduces to, if any:
    /// ATB(1,1) is ATE, ATB(2,1) is ATT, ATB(1,2) is ATC, ATB(2,2) is ATO.
    pub fn reduce(&self) -> Estimand {
        match *self {
            Estimand::Atb { nu1, nu2 } if nu1 == 1.0 && nu2 == 1.0 => Estimand::Ate,
            Estimand::Atb { nu1, nu2 } if nu1 == 2.0 && nu2 == 1.0 => Estimand::Att,
            Estimand::Atb { nu1, nu2 } if nu1 == 1.0 && nu2 == 2.0 => Estimand::Atc,
            Estimand::Atb { nu1, nu2 } if nu1 == 2.0 && nu2 == 2.0 => Estimand::Ato,
            other => other,
        }
    }

    /// Instability warning carried into reports, when applicable.
    pub fn warning(&self) -> Option<String> {
        match *self {
            Estimand::Atb { nu1, nu2 } if nu1 < 2.0 || nu2 < 2.0 => Some(format!(
                "ATB({}, {}) has weight derivatives that grow without bound near the \
                 propensity boundary for parameters below 2; estimates can be unstable \
                 under weak overlap",
                fmt_nu(nu1),
                fmt_nu(nu2)
            )),
            _ => None,
        }
    }

    /// `lambda(t)`. Assumes `t` strictly inside (0, 1); see [`Estimand::eval`]
    /// for the checked entry point.
    pub fn weight(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0 && t < 1.0);
        match *self {
            Estimand::Ate => 1.0,
            Estimand::Att => t,
            Estimand::Atc => 1.0 - t,
            Estimand::Ato => t * (1.0 - t),
            Estimand::Aten => -(t * t.ln()) - (1.0 - t) * (1.0 - t).ln(),
            Estimand::Atb { nu1, nu2 } => term(1.0, t, nu1 - 1.0, nu2 - 1.0),
        }
    }

    /// First derivative of `lambda`.
    pub fn d1(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0 && t < 1.0);
        match *self {
            Estimand::Ate => 0.0,
            Estimand::Att => 1.0,
            Estimand::Atc => -1.0,
            Estimand::Ato => 1.0 - 2.0 * t,
            Estimand::Aten => ((1.0 - t) / t).ln(),
            Estimand::Atb { nu1, nu2 } => {
                let (a, b) = (nu1 - 1.0, nu2 - 1.0);
                term(a, t, a - 1.0, b) - term(b, t, a, b - 1.0)
            }
        }
    }

    /// Second derivative of `lambda`.
    pub fn d2(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0 && t < 1.0);
        match *self {
            Estimand::Ate | Estimand::Att | Estimand::Atc => 0.0,
            Estimand::Ato => -2.0,
            Estimand::Aten => -1.0 / (t * (1.0 - t)),
            Estimand::Atb { nu1, nu2 } => {
                let (a, b) = (nu1 - 1.0, nu2 - 1.0);
                term(a * (a - 1.0), t, a - 2.0, b) - term(2.0 * a * b, t, a - 1.0, b - 1.0)
                    + term(b * (b - 1.0), t, a, b - 2.0)
            }
        }
    }

    /// Third derivative of `lambda`.
    pub fn d3(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0 && t < 1.0);
        match *self {
            Estimand::Ate | Estimand::Att | Estimand::Atc | Estimand::Ato => 0.0,
            Estimand::Aten => {
                let u = t * (1.0 - t);
                (1.0 - 2.0 * t) / (u * u)
            }
            Estimand::Atb { nu1, nu2 } => {
                let (a, b) = (nu1 - 1.0, nu2 - 1.0);
                term(a * (a - 1.0) * (a - 2.0), t, a - 3.0, b)
                    - term(3.0 * a * (a - 1.0) * b, t, a - 2.0, b - 1.0)
                    + term(3.0 * a * b * (b - 1.0), t, a - 1.0, b - 2.0)
                    - term(b * (b - 1.0) * (b - 2.0), t, a, b - 3.0)
            }
        }
    }

    /// Checked evaluation of `lambda` (order 0) or one of its derivatives.
    pub fn eval(&self, t: f64, order: usize) -> Result<f64> {
        if order > MAX_DERIVATIVE_ORDER {
            return Err(Error::Config(format!(
                "weight derivative order {order} not supported (maximum {MAX_DERIVATIVE_ORDER})"
            )));
        }
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "weight function evaluated at t={t}, outside (0, 1)"
            )));
        }
        Ok(match order {
            0 => self.weight(t),
            1 => self.d1(t),
            2 => self.d2(t),
            _ => self.d3(t),
        })
    }

    /// Tilting factor applied to an observation in the given arm:
    /// `lambda(t)/t` for the treated, `lambda(t)/(1-t)` for controls.
    pub fn tilting(&self, t: f64, treated: bool) -> Result<f64> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Domain(format!(
                "tilting weight evaluated at t={t}, outside (0, 1)"
            )));
        }
        Ok(if treated {
            self.weight(t) / t
        } else {
            self.weight(t) / (1.0 - t)
        })
    }
}

fn fmt_nu(nu: f64) -> String {
    if nu == nu.trunc() {
        format!("{}", nu as i64)
    } else {
        format!("{nu}")
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Estimand::Ate => write!(f, "ATE"),
            Estimand::Att => write!(f, "ATT"),
            Estimand::Atc => write!(f, "ATC"),
            Estimand::Ato => write!(f, "ATO"),
            Estimand::Aten => write!(f, "ATEN"),
            Estimand::Atb { nu1, nu2 } => write!(f, "ATB({},{})", fmt_nu(nu1), fmt_nu(nu2)),
        }
    }
}

impl FromStr for Estimand {
    type Err = Error;

    /// Accepts `ate`, `att`, `atc`, `ato`, `aten`, `atb:NU1,NU2`, and
    /// `atb(NU1,NU2)`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "ate" => return Ok(Estimand::Ate),
            "att" => return Ok(Estimand::Att),
            "atc" => return Ok(Estimand::Atc),
            "ato" => return Ok(Estimand::Ato),
            "aten" => return Ok(Estimand::Aten),
            _ => {}
        }
        let params = lower.strip_prefix("atb:").map(str::to_string).or_else(|| {
            lower
                .strip_prefix("atb(")
                .and_then(|rest| rest.strip_suffix(')'))
                .map(str::to_string)
        });
        if let Some(params) = params {
            let parts: Vec<&str> = params.split(',').map(str::trim).collect();
            if parts.len() == 2 {
                if let (Ok(nu1), Ok(nu2)) = (parts[0].parse::<f64>(), parts[1].parse::<f64>()) {
                    return Estimand::atb(nu1, nu2);
                }
            }
        }
        Err(Error::Config(format!(
            "unknown estimand '{s}'; valid choices: ate, att, atc, ato, aten, atb:NU1,NU2"
        )))
    }
}
