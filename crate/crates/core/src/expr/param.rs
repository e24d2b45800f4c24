use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExprError;
use crate::mdl::{self, MdlConfig};

/// A constant bound to a placeholder in an expression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Param {
    Real(f64),
    Integer(i64),
    /// Numerator and denominator, always in lowest terms with a positive
    /// denominator. Use [`Param::rational`] to construct.
    Rational(i64, u64),
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Param {
    /// Reduces to lowest terms; a unit denominator collapses to `Integer`.
    pub fn rational(num: i64, den: i64) -> Result<Param, ExprError> {
        if den == 0 {
            return Err(ExprError::InvalidParam("zero denominator".into()));
        }
        let sign = if (num < 0) != (den < 0) { -1 } else { 1 };
        let (n, d) = (num.unsigned_abs(), den.unsigned_abs());
        let g = gcd(n, d).max(1);
        let (n, d) = (n / g, d / g);
        let n = i64::try_from(n).map_err(|_| ExprError::InvalidParam("overflow".into()))? * sign;
        if d == 1 {
            Ok(Param::Integer(n))
        } else {
            Ok(Param::Rational(n, d))
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Param::Real(r) => r,
            Param::Integer(m) => m as f64,
            Param::Rational(m, n) => m as f64 / n as f64,
        }
    }

    pub fn is_real(&self) -> bool {
        matches!(self, Param::Real(_))
    }

    /// Description length of this constant in bits.
    pub fn description_length(&self, cfg: &MdlConfig) -> f64 {
        match *self {
            Param::Real(r) => mdl::dl_real(r, cfg),
            Param::Integer(m) => mdl::dl_integer(m),
            Param::Rational(m, n) => mdl::dl_rational(m, n).unwrap_or(f64::INFINITY),
        }
    }

    /// Parses `2`, `-3/4` or `3.25` (a real needs a `.`, `e`, `inf` or `nan`).
    pub fn parse(text: &str) -> Result<Param, ExprError> {
        let bad = || ExprError::InvalidParam(format!("cannot parse constant '{text}'"));
        if let Some((a, b)) = text.split_once('/') {
            let m: i64 = a.trim().parse().map_err(|_| bad())?;
            let n: i64 = b.trim().parse().map_err(|_| bad())?;
            if n <= 0 {
                return Err(bad());
            }
            return Param::rational(m, n);
        }
        if let Ok(m) = text.parse::<i64>() {
            return Ok(Param::Integer(m));
        }
        let r: f64 = text.parse().map_err(|_| bad())?;
        if !r.is_finite() {
            return Err(bad());
        }
        Ok(Param::Real(r))
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            // Debug formatting always keeps a '.' or exponent, so reals stay reals.
            Param::Real(r) => write!(f, "{r:?}"),
            Param::Integer(m) => write!(f, "{m}"),
            Param::Rational(m, n) => write!(f, "{m}/{n}"),
        }
    }
}

/// Constants bound to placeholders, in placeholder order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub entries: Vec<Param>,
}

impl ParamVector {
    pub fn description_length(&self, cfg: &MdlConfig) -> f64 {
        self.entries.iter().map(|p| p.description_length(cfg)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals_reduce_to_lowest_terms() {
        assert_eq!(Param::rational(6, 8).unwrap(), Param::Rational(3, 4));
        assert_eq!(Param::rational(-6, 8).unwrap(), Param::Rational(-3, 4));
        assert_eq!(Param::rational(6, -8).unwrap(), Param::Rational(-3, 4));
        assert_eq!(Param::rational(4, 2).unwrap(), Param::Integer(2));
        assert!(Param::rational(1, 0).is_err());
    }

    #[test]
    fn parse_and_display_round_trip() {
        for text in ["2", "-7", "1/3", "-3/4", "3.25", "1e-9", "-0.5"] {
            let p = Param::parse(text).unwrap();
            assert_eq!(Param::parse(&p.to_string()).unwrap(), p, "{text}");
        }
        assert_eq!(Param::parse("2").unwrap(), Param::Integer(2));
        assert_eq!(Param::parse("2.0").unwrap(), Param::Real(2.0));
        assert!(Param::parse("x").is_err());
        assert!(Param::parse("1/0").is_err());
    }
}
