use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Damage weight ψ multiplying the bulk density.
///
/// Arguments are clamped to `[0, 1]` before evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PsiFunction {
    /// `ψ(v) = v^q`, `q ≥ 1`.
    Power { q: f64 },
    /// Piecewise-linear interpolation of `(v, ψ(v))` knots.
    Custom { samples: Vec<(f64, f64)> },
}

impl Default for PsiFunction {
    fn default() -> Self {
        PsiFunction::Power { q: 2.0 }
    }
}

impl PsiFunction {
    pub fn power(q: f64) -> Result<Self> {
        let psi = PsiFunction::Power { q };
        psi.validate()?;
        Ok(psi)
    }

    /// Knots must start at `(0, 0)`, end at `(1, 1)` and be strictly
    /// increasing in both coordinates.
    pub fn custom(samples: Vec<(f64, f64)>) -> Result<Self> {
        let psi = PsiFunction::Custom { samples };
        psi.validate()?;
        Ok(psi)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PsiFunction::Power { q } => {
                if !(q.is_finite() && *q >= 1.0) {
                    return invalid(format!("psi exponent must be >= 1, got {q}"));
                }
            }
            PsiFunction::Custom { samples } => {
                if samples.len() < 2 {
                    return invalid("psi table needs at least two knots");
                }
                let first = samples[0];
                let last = samples[samples.len() - 1];
                if first != (0.0, 0.0) || last != (1.0, 1.0) {
                    return invalid("psi table must start at (0,0) and end at (1,1)");
                }
                if samples
                    .windows(2)
                    .any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1))
                {
                    return invalid("psi table must be strictly increasing");
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            PsiFunction::Power { q } => {
                if *q == 2.0 {
                    v * v
                } else {
                    v.powf(*q)
                }
            }
            PsiFunction::Custom { samples } => {
                let k = segment(samples, v);
                let (v0, p0) = samples[k];
                let (v1, p1) = samples[k + 1];
                p0 + (p1 - p0) * (v - v0) / (v1 - v0)
            }
        }
    }

    /// Derivative on `[0, 1]` (one-sided at the ends, right derivative at
    /// interior knots of a table).
    pub fn derivative(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            PsiFunction::Power { q } => {
                if *q == 2.0 {
                    2.0 * v
                } else if *q == 1.0 {
                    1.0
                } else {
                    q * v.powf(q - 1.0)
                }
            }
            PsiFunction::Custom { samples } => {
                let k = segment(samples, v);
                let (v0, p0) = samples[k];
                let (v1, p1) = samples[k + 1];
                (p1 - p0) / (v1 - v0)
            }
        }
    }

    /// Second derivative on `[0, 1]` (zero for tables).
    pub fn second_derivative(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match self {
            PsiFunction::Power { q } if *q == 2.0 => 2.0,
            PsiFunction::Power { q } if *q == 1.0 => 0.0,
            PsiFunction::Power { q } => q * (q - 1.0) * v.powf(q - 2.0),
            PsiFunction::Custom { .. } => 0.0,
        }
    }
}

fn segment(samples: &[(f64, f64)], v: f64) -> usize {
    let last = samples.len() - 2;
    samples[1..]
        .iter()
        .position(|&(knot, _)| v < knot)
        .unwrap_or(last)
        .min(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_two_values() {
        let psi = PsiFunction::default();
        assert_eq!(psi.eval(1.0), 1.0);
        assert_eq!(psi.eval(0.0), 0.0);
        assert_eq!(psi.eval(0.5), 0.25);
        assert_eq!(psi.eval(-0.3), 0.0);
        assert_eq!(psi.eval(1.7), 1.0);
    }

    #[test]
    fn custom_table_interpolates() {
        let psi = PsiFunction::custom(vec![(0.0, 0.0), (0.5, 0.1), (1.0, 1.0)]).unwrap();
        assert!((psi.eval(0.25) - 0.05).abs() < 1e-15);
        assert!((psi.eval(0.75) - 0.55).abs() < 1e-15);
        assert_eq!(psi.eval(1.0), 1.0);
        assert!((psi.derivative(0.75) - 1.8).abs() < 1e-12);
        assert!(PsiFunction::custom(vec![(0.0, 0.0), (0.5, 0.6), (0.4, 0.7), (1.0, 1.0)]).is_err());
        assert!(PsiFunction::power(0.5).is_err());
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for psi in [PsiFunction::power(1.5).unwrap(), PsiFunction::default()] {
            for v in [0.1, 0.4, 0.9] {
                let d = (psi.eval(v + 1e-6) - psi.eval(v - 1e-6)) / 2e-6;
                assert!((d - psi.derivative(v)).abs() < 1e-6);
            }
        }
    }
}
