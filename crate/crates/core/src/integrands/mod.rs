//! Bulk and surface integrands in coefficient form, and the damage weight ψ.
//!
//! Bulk densities are `f(x, ξ) = a(x)|ξ|^p`, surface densities are
//! `g(x, v, w) = b(x)(|1 - v|^p + |w|^p)`. With a coefficient range
//! `[a_min, a_max]` the growth constants are exactly `c_lo = a_min`,
//! `c_hi = a_max`.

mod field;
mod psi;
mod validate;

pub use field::{
    Checkerboard, CoefficientField, DiscreteDistribution, FieldRegistry, Homogeneous, Laminate,
    RandomCheckerboard, Rescaled, SharedField,
};
pub use psi::PsiFunction;
pub use validate::{validate_bulk, validate_surface, AxiomCheck, ClassReport};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Result};

/// Declared class constants: growth bounds and the Lipschitz modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassConstants {
    pub c_lo: f64,
    pub c_hi: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
}

/// JSON description shared by both integrand kinds:
/// `{"kind": ..., "p": ..., "params": {...}, "constants": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandDesc {
    pub kind: String,
    pub p: f64,
    #[serde(default)]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants: Option<ClassConstants>,
}

fn check_p(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 1.0) {
        return invalid(format!("exponent p must be > 1, got {p}"));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return invalid(format!("non-finite entry in {what}"));
    }
    Ok(())
}

/// `f(x, ξ) = a(x)|ξ|^p` with `|ξ|` the Frobenius norm.
#[derive(Debug, Clone)]
pub struct BulkIntegrand {
    field: SharedField,
    p: f64,
    constants: ClassConstants,
}

impl BulkIntegrand {
    /// Constants default to the coefficient range and `L = p·c_hi`.
    pub fn new(field: SharedField, p: f64) -> Result<Self> {
        check_p(p)?;
        let (lo, hi) = field.range();
        let constants = ClassConstants {
            c_lo: lo,
            c_hi: hi,
            lipschitz: p * hi,
        };
        Ok(Self {
            field,
            p,
            constants,
        })
    }

    pub fn homogeneous(c: f64, p: f64) -> Result<Self> {
        Self::new(Arc::new(Homogeneous::new(c)?), p)
    }

    /// Overrides the declared constants (they are checked, not trusted, by
    /// [`validate_bulk`]).
    pub fn with_constants(mut self, constants: ClassConstants) -> Result<Self> {
        check_finite(
            &[constants.c_lo, constants.c_hi, constants.lipschitz],
            "constants",
        )?;
        if constants.c_lo <= 0.0 || constants.c_lo > constants.c_hi || constants.lipschitz <= 0.0 {
            return invalid("constants must satisfy 0 < c_lo <= c_hi and L > 0");
        }
        self.constants = constants;
        Ok(self)
    }

    pub fn from_desc(desc: &IntegrandDesc, registry: &FieldRegistry) -> Result<Self> {
        let field = registry.build(&desc.kind, &desc.params)?;
        let f = Self::new(field, desc.p)?;
        match desc.constants {
            Some(c) => f.with_constants(c),
            None => Ok(f),
        }
    }

    pub fn to_desc(&self) -> IntegrandDesc {
        IntegrandDesc {
            kind: self.field.kind().to_string(),
            p: self.p,
            params: self.field.params(),
            constants: Some(self.constants),
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn constants(&self) -> ClassConstants {
        self.constants
    }
    pub fn field(&self) -> &SharedField {
        &self.field
    }
    pub fn coefficient(&self, x: &[f64]) -> f64 {
        self.field.value_at(x)
    }

    /// Same integrand with the coefficient multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let field: SharedField = Arc::new(Scaled::new(self.field.clone(), factor)?);
        Self::new(field, self.p)
    }

    /// `f(x, ξ)` for a flattened `m×n` matrix `ξ`.
    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        check_finite(x, "x")?;
        check_finite(xi, "ξ")?;
        let norm_sq: f64 = xi.iter().map(|e| e * e).sum();
        Ok(self.coefficient(x) * norm_sq.powf(0.5 * self.p))
    }
}

/// `g(x, v, w) = b(x)(|1 - v|^p + |w|^p)`.
#[derive(Debug, Clone)]
pub struct SurfaceIntegrand {
    field: SharedField,
    p: f64,
    constants: ClassConstants,
}

impl SurfaceIntegrand {
    /// Constants default to the coefficient range and
    /// `L = p·c_hi·max(1, 2^{p-2})`, which bounds the `v`-derivative
    /// `p·b|1 - v|^{p-1}` in the form of the continuity axiom.
    pub fn new(field: SharedField, p: f64) -> Result<Self> {
        check_p(p)?;
        let (lo, hi) = field.range();
        let lipschitz = p * hi * 2f64.powf(p - 2.0).max(1.0);
        Ok(Self {
            field,
            p,
            constants: ClassConstants {
                c_lo: lo,
                c_hi: hi,
                lipschitz,
            },
        })
    }

    pub fn homogeneous(b: f64, p: f64) -> Result<Self> {
        Self::new(Arc::new(Homogeneous::new(b)?), p)
    }

    pub fn with_constants(mut self, constants: ClassConstants) -> Result<Self> {
        check_finite(
            &[constants.c_lo, constants.c_hi, constants.lipschitz],
            "constants",
        )?;
        if constants.c_lo <= 0.0 || constants.c_lo > constants.c_hi || constants.lipschitz <= 0.0 {
            return invalid("constants must satisfy 0 < c_lo <= c_hi and L > 0");
        }
        self.constants = constants;
        Ok(self)
    }

    pub fn from_desc(desc: &IntegrandDesc, registry: &FieldRegistry) -> Result<Self> {
        let field = registry.build(&desc.kind, &desc.params)?;
        let g = Self::new(field, desc.p)?;
        match desc.constants {
            Some(c) => g.with_constants(c),
            None => Ok(g),
        }
    }

    pub fn to_desc(&self) -> IntegrandDesc {
        IntegrandDesc {
            kind: self.field.kind().to_string(),
            p: self.p,
            params: self.field.params(),
            constants: Some(self.constants),
        }
    }

    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn constants(&self) -> ClassConstants {
        self.constants
    }
    pub fn field(&self) -> &SharedField {
        &self.field
    }
    pub fn coefficient(&self, x: &[f64]) -> f64 {
        self.field.value_at(x)
    }

    pub fn eval(&self, x: &[f64], v: f64, w: &[f64]) -> Result<f64> {
        check_finite(x, "x")?;
        check_finite(&[v], "v")?;
        check_finite(w, "w")?;
        let w_sq: f64 = w.iter().map(|e| e * e).sum();
        Ok(self.coefficient(x) * ((1.0 - v).abs().powf(self.p) + w_sq.powf(0.5 * self.p)))
    }
}

/// `x -> factor · inner(x)`.
#[derive(Debug, Clone)]
struct Scaled {
    inner: SharedField,
    factor: f64,
}

impl Scaled {
    fn new(inner: SharedField, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return invalid("scale factor must be positive");
        }
        Ok(Self { inner, factor })
    }
}

impl CoefficientField for Scaled {
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }
    fn value_at(&self, x: &[f64]) -> f64 {
        self.factor * self.inner.value_at(x)
    }
    fn range(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.range();
        (self.factor * lo, self.factor * hi)
    }
    fn period(&self) -> Option<f64> {
        self.inner.period()
    }
    fn check_dimension(&self, n: usize) -> Result<()> {
        self.inner.check_dimension(n)
    }
    fn params(&self) -> Value {
        // Scaling is only representable for the homogeneous kind; other
        // kinds get their value lists scaled.
        let mut params = self.inner.params();
        if let Some(obj) = params.as_object_mut() {
            for key in ["c", "values"] {
                if let Some(v) = obj.get_mut(key) {
                    scale_json(v, self.factor);
                }
            }
        }
        params
    }
}

fn scale_json(v: &mut Value, factor: f64) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                *v = Value::from(x * factor);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|i| scale_json(i, factor)),
        _ => {}
    }
}
