//! Description lengths in bits and the mean error-description-length.

use serde::{Deserialize, Serialize};

/// Bits charged for an invalid model. Orders above every finite score.
pub const INVALID_BITS: f64 = f64::INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdlConfig {
    /// Precision floor. Residuals well below it cost almost nothing.
    pub epsilon: f64,
}

impl Default for MdlConfig {
    fn default() -> Self {
        MdlConfig {
            epsilon: (-30f64).exp2(),
        }
    }
}

impl MdlConfig {
    /// Floor given as a negative power of two, e.g. 30 for 2^-30.
    pub fn from_bits(bits: f64) -> Option<MdlConfig> {
        let epsilon = (-bits).exp2();
        (epsilon > 0.0 && epsilon.is_finite()).then_some(MdlConfig { epsilon })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub complexity_bits: f64,
    pub medl_bits: f64,
}

impl ModelScore {
    pub fn new(complexity_bits: f64, medl_bits: f64) -> Self {
        ModelScore {
            complexity_bits,
            medl_bits,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.complexity_bits.is_finite() && self.medl_bits.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MdlError {
    #[error("natural number must be at least 1")]
    NotNatural,
    #[error("mean of an empty residual set")]
    Empty,
}

pub fn dl_natural(n: u64) -> Result<f64, MdlError> {
    if n == 0 {
        return Err(MdlError::NotNatural);
    }
    Ok((n as f64).log2())
}

pub fn dl_integer(m: i64) -> f64 {
    (1.0 + m.unsigned_abs() as f64).log2()
}

pub fn dl_rational(m: i64, n: u64) -> Result<f64, MdlError> {
    Ok(dl_integer(m) + dl_natural(n)?)
}

/// `log+(x) = ½·log2(1+x²)`, written to stay accurate for tiny and huge x.
#[inline]
pub fn log_plus(x: f64) -> f64 {
    let a = x.abs();
    if a > 1e150 {
        // 1+x² overflows; ½·log2(x²) = log2|x| to double precision here.
        a.log2()
    } else if a > 1e4 {
        // log2|x| + ½·log2(1+x⁻²), second-order term below 1e-17.
        a.log2() + 0.5 / (a * a * std::f64::consts::LN_2)
    } else {
        0.5 * (a * a).ln_1p() / std::f64::consts::LN_2
    }
}

/// Derivative of [`log_plus`].
#[inline]
pub fn log_plus_deriv(x: f64) -> f64 {
    x / ((1.0 + x * x) * std::f64::consts::LN_2)
}

#[inline]
pub fn dl_real(r: f64, cfg: &MdlConfig) -> f64 {
    if !r.is_finite() {
        return INVALID_BITS;
    }
    log_plus(r / cfg.epsilon)
}

/// d/dr of [`dl_real`].
#[inline]
pub fn dl_real_deriv(r: f64, cfg: &MdlConfig) -> f64 {
    log_plus_deriv(r / cfg.epsilon) / cfg.epsilon
}

/// Mean residual description length. Any non-finite residual gives the
/// invalid sentinel.
pub fn medl(residuals: &[f64], cfg: &MdlConfig) -> Result<f64, MdlError> {
    if residuals.is_empty() {
        return Err(MdlError::Empty);
    }
    let mut sum = 0.0;
    for &r in residuals {
        let d = dl_real(r, cfg);
        if !d.is_finite() {
            return Ok(INVALID_BITS);
        }
        sum += d;
    }
    Ok(sum / residuals.len() as f64)
}

/// Mean and sample standard deviation of per-point bits.
pub fn mean_std(bits: &[f64]) -> (f64, f64) {
    let n = bits.len();
    if n == 0 {
        return (INVALID_BITS, 0.0);
    }
    let mean = bits.iter().sum::<f64>() / n as f64;
    if n < 2 || !mean.is_finite() {
        return (mean, 0.0);
    }
    let var = bits.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn closed_forms() {
        assert_eq!(dl_natural(1).unwrap(), 0.0);
        assert_relative_eq!(dl_natural(3).unwrap(), 3f64.log2());
        assert_eq!(dl_natural(4).unwrap(), 2.0);
        assert!(dl_natural(0).is_err());
        assert_eq!(dl_integer(0), 0.0);
        assert_relative_eq!(dl_integer(2), 3f64.log2());
        assert_eq!(dl_integer(-7), 3.0);
        assert_eq!(dl_rational(0, 1).unwrap(), 0.0);
        assert_eq!(dl_rational(1, 2).unwrap(), 2.0);
        assert_eq!(dl_rational(-3, 4).unwrap(), 4.0);
        assert!(dl_rational(1, 0).is_err());
    }

    #[test]
    fn real_lengths() {
        let cfg = MdlConfig::default();
        assert_eq!(dl_real(0.0, &cfg), 0.0);
        assert_relative_eq!(dl_real(cfg.epsilon, &cfg), 0.5, epsilon = 1e-12);
        assert_relative_eq!(dl_real(1.0, &cfg), 30.0, epsilon = 1e-9);
        assert_eq!(dl_real(f64::NAN, &cfg), INVALID_BITS);
        assert_relative_eq!(dl_real(1e200, &cfg), dl_real(-1e200, &cfg));
        assert!(dl_real(1e200, &cfg).is_finite());
    }

    #[test]
    fn medl_examples() {
        let cfg = MdlConfig::default();
        assert_eq!(medl(&[0.0, 0.0, 0.0], &cfg).unwrap(), 0.0);
        assert_relative_eq!(medl(&[1.0, 0.0], &cfg).unwrap(), 15.0, epsilon = 1e-9);
        assert_eq!(medl(&[1.0, f64::INFINITY], &cfg).unwrap(), INVALID_BITS);
        assert!(medl(&[], &cfg).is_err());
    }

    #[test]
    fn epsilon_from_bits() {
        assert_eq!(MdlConfig::from_bits(30.0).unwrap(), MdlConfig::default());
        assert!(MdlConfig::from_bits(5000.0).is_none());
    }
}
