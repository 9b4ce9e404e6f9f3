//! Utility functions, weight functions and step-size schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Increasing, strictly concave utility of a long-term throughput.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Utility {
    /// `U(x) = log x` (proportional fairness).
    #[default]
    Log,
    /// `U(x) = x^(1-alpha) / (1-alpha)` with `alpha > 0`, `alpha != 1`.
    AlphaFair { alpha: f64 },
}

impl Utility {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Utility::Log => Ok(()),
            Utility::AlphaFair { alpha } if alpha > 0.0 && alpha != 1.0 && alpha.is_finite() => Ok(()),
            Utility::AlphaFair { alpha } => {
                Err(Error::InvalidParameter(format!("alpha-fair utility needs alpha > 0 and alpha != 1, got {alpha}")))
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => x.ln(),
            Utility::AlphaFair { alpha } => x.powf(1.0 - alpha) / (1.0 - alpha),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Utility::Log => 1.0 / x,
            Utility::AlphaFair { alpha } => x.powf(-alpha),
        }
    }

    /// `U'^{-1}(y)` for `y > 0`.
    pub fn inverse_derivative(&self, y: f64) -> f64 {
        match *self {
            Utility::Log => 1.0 / y,
            Utility::AlphaFair { alpha } => y.powf(-1.0 / alpha),
        }
    }

    pub fn total(&self, gamma: &[f64]) -> f64 {
        gamma.iter().map(|&x| self.value(x)).sum()
    }
}

/// Strictly increasing, continuously differentiable map from a virtual queue
/// to the CSMA exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    /// `W(x) = slope * x`.
    Linear { slope: f64 },
    /// `W(x) = scale * ln(1 + x)`.
    Log1p { scale: f64 },
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Linear { slope: 1.0 }
    }
}

impl Weight {
    pub const IDENTITY: Weight = Weight::Linear { slope: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let c = match *self {
            Weight::Linear { slope } => slope,
            Weight::Log1p { scale } => scale,
        };
        if c > 0.0 && c.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("weight function coefficient must be positive, got {c}")))
        }
    }

    pub fn value(&self, q: f64) -> f64 {
        match *self {
            Weight::Linear { slope } => slope * q,
            Weight::Log1p { scale } => scale * q.ln_1p(),
        }
    }

    pub fn derivative(&self, q: f64) -> f64 {
        match *self {
            Weight::Linear { slope } => slope,
            Weight::Log1p { scale } => scale / (1.0 + q),
        }
    }

    pub fn inverse(&self, w: f64) -> f64 {
        match *self {
            Weight::Linear { slope } => w / slope,
            Weight::Log1p { scale } => (w / scale).exp_m1(),
        }
    }
}

/// Step sizes `b[t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSize {
    Constant {
        b0: f64,
    },
    /// `b[t] = b0 / (t0 + t)^p` with `p` in `(1/2, 1]`, so that the steps sum
    /// to infinity while their squares are summable.
    Diminishing {
        b0: f64,
        t0: f64,
        p: f64,
    },
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Constant { b0: 0.001 }
    }
}

impl StepSize {
    /// `1/(100 + t)`.
    pub const HARMONIC: StepSize = StepSize::Diminishing { b0: 1.0, t0: 100.0, p: 1.0 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSize::Constant { b0 } if b0 > 0.0 && b0.is_finite() => Ok(()),
            StepSize::Constant { b0 } => {
                Err(Error::InvalidParameter(format!("constant step must be positive, got {b0}")))
            }
            StepSize::Diminishing { b0, t0, p } => {
                if !(b0 > 0.0 && b0.is_finite()) {
                    return Err(Error::InvalidParameter(format!("step scale b0 must be positive, got {b0}")));
                }
                if !(t0 > 0.0 && t0.is_finite()) {
                    return Err(Error::InvalidParameter(format!("step offset t0 must be positive, got {t0}")));
                }
                if !(p > 0.5 && p <= 1.0) {
                    return Err(Error::InvalidParameter(format!("step exponent p must lie in (1/2, 1], got {p}")));
                }
                Ok(())
            }
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        match *self {
            StepSize::Constant { b0 } => b0,
            StepSize::Diminishing { b0, t0, p } => b0 / (t0 + t as f64).powf(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_utility_inverse() {
        let u = Utility::Log;
        assert_eq!(u.inverse_derivative(0.5), 2.0);
        for x in [0.1, 0.5, 0.9] {
            assert!((u.inverse_derivative(u.derivative(x)) - x).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_fair_inverse() {
        let u = Utility::AlphaFair { alpha: 2.0 };
        u.validate().unwrap();
        for x in [0.1, 0.5, 0.9] {
            assert!((u.inverse_derivative(u.derivative(x)) - x).abs() < 1e-12);
        }
        assert!(Utility::AlphaFair { alpha: 1.0 }.validate().is_err());
        assert!(Utility::AlphaFair { alpha: -1.0 }.validate().is_err());
    }

    #[test]
    fn weight_inverse_and_derivative() {
        for w in [Weight::IDENTITY, Weight::Linear { slope: 2.5 }, Weight::Log1p { scale: 3.0 }] {
            w.validate().unwrap();
            for q in [0.1, 1.0, 7.0] {
                assert!((w.inverse(w.value(q)) - q).abs() < 1e-12);
                let h = 1e-6;
                let fd = (w.value(q + h) - w.value(q - h)) / (2.0 * h);
                assert!((fd - w.derivative(q)).abs() < 1e-6);
            }
        }
        assert!(Weight::Linear { slope: 0.0 }.validate().is_err());
    }

    #[test]
    fn step_sizes() {
        assert_eq!(StepSize::HARMONIC.at(0), 0.01);
        assert_eq!(StepSize::HARMONIC.at(900), 0.001);
        assert!(StepSize::Diminishing { b0: 1.0, t0: 100.0, p: 0.5 }.validate().is_err());
        assert!(StepSize::Diminishing { b0: 1.0, t0: 100.0, p: 0.6 }.validate().is_ok());
        assert!(StepSize::Constant { b0: 0.0 }.validate().is_err());
    }

    #[test]
    fn serde_tags() {
        let s: StepSize = serde_json::from_str(r#"{"kind":"diminishing","b0":1,"t0":100,"p":1}"#).unwrap();
        assert_eq!(s, StepSize::HARMONIC);
        let u: Utility = serde_json::from_str(r#"{"kind":"alpha_fair","alpha":2}"#).unwrap();
        assert_eq!(u, Utility::AlphaFair { alpha: 2.0 });
        let w: Weight = serde_json::from_str(r#"{"kind":"linear","slope":1}"#).unwrap();
        assert_eq!(w, Weight::IDENTITY);
    }
}
