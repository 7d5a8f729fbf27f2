//! Scalar coefficient fields `a(x)` used by the coefficient-form integrands.
//!
//! Every variant implements [`CoefficientField`]; the [`FieldRegistry`] maps
//! the `kind` string of a JSON description to a builder so new variants can be
//! plugged in without touching the integrand code.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{invalid, Error, Result};

/// A measurable, bounded, strictly positive coefficient on `R^n`.
pub trait CoefficientField: Send + Sync + fmt::Debug {
    /// Registry name of the variant.
    fn kind(&self) -> &'static str;
    fn value_at(&self, x: &[f64]) -> f64;
    /// Smallest and largest value the field can take.
    fn range(&self) -> (f64, f64);
    /// Length of the periodicity cell, if the field is periodic (or lattice based).
    fn period(&self) -> Option<f64> {
        None
    }
    /// Checks that the field can be evaluated in dimension `n`.
    fn check_dimension(&self, _n: usize) -> Result<()> {
        Ok(())
    }
    /// Parameters in the JSON layout accepted by the registry builder.
    fn params(&self) -> Value;
}

pub type SharedField = Arc<dyn CoefficientField>;

fn positive_values(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return invalid(format!("{what}: empty value list"));
    }
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return invalid(format!("{what}: values must be finite and positive"));
    }
    Ok(())
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Constant coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Homogeneous {
    pub c: f64,
}

impl Homogeneous {
    pub fn new(c: f64) -> Result<Self> {
        positive_values(&[c], "homogeneous")?;
        Ok(Self { c })
    }
}

impl CoefficientField for Homogeneous {
    fn kind(&self) -> &'static str {
        "homogeneous"
    }
    fn value_at(&self, _x: &[f64]) -> f64 {
        self.c
    }
    fn range(&self) -> (f64, f64) {
        (self.c, self.c)
    }
    fn params(&self) -> Value {
        json!({ "c": self.c })
    }
}

/// Stripes orthogonal to `direction`; each value occupies a slab of width
/// `period / values.len()`, starting at `offset` along the direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Laminate {
    pub values: Vec<f64>,
    pub direction: Vec<f64>,
    pub period: f64,
    pub offset: f64,
}

impl Laminate {
    pub fn new(values: Vec<f64>, direction: Vec<f64>, period: f64, offset: f64) -> Result<Self> {
        positive_values(&values, "laminate")?;
        if !(period.is_finite() && period > 0.0) {
            return invalid("laminate: period must be positive");
        }
        let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
        if direction.is_empty() || (norm - 1.0).abs() > 1e-9 {
            return invalid("laminate: direction must be a unit vector");
        }
        if !offset.is_finite() {
            return invalid("laminate: offset must be finite");
        }
        Ok(Self {
            values,
            direction,
            period,
            offset,
        })
    }
}

impl CoefficientField for Laminate {
    fn kind(&self) -> &'static str {
        "laminate"
    }
    fn value_at(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
        let width = self.period / self.values.len() as f64;
        let k = ((s - self.offset) / width).floor() as i64;
        self.values[k.rem_euclid(self.values.len() as i64) as usize]
    }
    fn range(&self) -> (f64, f64) {
        min_max(&self.values)
    }
    fn period(&self) -> Option<f64> {
        Some(self.period)
    }
    fn check_dimension(&self, n: usize) -> Result<()> {
        if self.direction.len() != n {
            return invalid(format!(
                "laminate direction has {} entries, grid dimension is {n}",
                self.direction.len()
            ));
        }
        Ok(())
    }
    fn params(&self) -> Value {
        json!({
            "values": self.values,
            "direction": self.direction,
            "period": self.period,
            "offset": self.offset,
        })
    }
}

/// Two-valued checkerboard: cell `z = floor(x / period)` carries
/// `values[(z_1 + ... + z_n) mod 2]`, cells being half-open `[z, z + period)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkerboard {
    pub values: [f64; 2],
    pub period: f64,
}

impl Checkerboard {
    pub fn new(values: [f64; 2], period: f64) -> Result<Self> {
        positive_values(&values, "checkerboard")?;
        if !(period.is_finite() && period > 0.0) {
            return invalid("checkerboard: period must be positive");
        }
        Ok(Self { values, period })
    }
}

impl CoefficientField for Checkerboard {
    fn kind(&self) -> &'static str {
        "checkerboard"
    }
    fn value_at(&self, x: &[f64]) -> f64 {
        let parity: i64 = x.iter().map(|xi| (xi / self.period).floor() as i64).sum();
        self.values[parity.rem_euclid(2) as usize]
    }
    fn range(&self) -> (f64, f64) {
        min_max(&self.values)
    }
    fn period(&self) -> Option<f64> {
        Some(self.period)
    }
    fn params(&self) -> Value {
        json!({ "values": self.values, "period": self.period })
    }
}

/// Finite-support probability distribution over positive reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(values: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        positive_values(&values, "distribution")?;
        if values.len() != probabilities.len() {
            return invalid("distribution: values and probabilities differ in length");
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("distribution: probabilities must be non-negative");
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return invalid(format!("distribution: probabilities sum to {total}, not 1"));
        }
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { values, cumulative })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|c| {
                let p = c - prev;
                prev = *c;
                p
            })
            .collect()
    }

    /// Inverse-CDF lookup for a uniform sample in `[0, 1)`.
    pub fn quantile(&self, uniform: f64) -> f64 {
        let last = self.values.len() - 1;
        let k = self.cumulative[..last]
            .iter()
            .position(|&c| uniform < c)
            .unwrap_or(last);
        self.values[k]
    }

    pub fn range(&self) -> (f64, f64) {
        // Zero-probability atoms never occur in a realization.
        let probs = self.probabilities();
        let support: Vec<f64> = self
            .values
            .iter()
            .zip(&probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(v, _)| *v)
            .collect();
        min_max(&support)
    }
}

/// One realization of an i.i.d. random checkerboard on the `Z^n` lattice.
///
/// The value of cell `z` is a pure function of `(master_seed, seed, z)`: a
/// ChaCha8 key is built from the two seeds and the cell index selects the
/// stream, so any window of the realization can be generated independently
/// and overlapping windows agree exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCheckerboard {
    pub distribution: DiscreteDistribution,
    pub master_seed: u64,
    pub seed: u64,
}

fn zigzag(z: i64) -> u64 {
    ((z << 1) ^ (z >> 63)) as u64
}

impl RandomCheckerboard {
    pub fn new(distribution: DiscreteDistribution, master_seed: u64, seed: u64) -> Self {
        Self {
            distribution,
            master_seed,
            seed,
        }
    }

    /// Coefficient carried by lattice cell `z`.
    pub fn cell_value(&self, z: &[i64]) -> f64 {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.seed.to_le_bytes());
        key[16..24].copy_from_slice(&(z.len() as u64).to_le_bytes());
        let stream = match z {
            [] => 0,
            [a] => zigzag(*a),
            [a, b, ..] => (zigzag(*a) & 0xffff_ffff) << 32 | (zigzag(*b) & 0xffff_ffff),
        };
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        let u: f64 = rng.gen();
        self.distribution.quantile(u)
    }
}

impl CoefficientField for RandomCheckerboard {
    fn kind(&self) -> &'static str {
        "random_checkerboard"
    }
    fn value_at(&self, x: &[f64]) -> f64 {
        let z: Vec<i64> = x.iter().map(|xi| xi.floor() as i64).collect();
        self.cell_value(&z)
    }
    fn range(&self) -> (f64, f64) {
        self.distribution.range()
    }
    fn period(&self) -> Option<f64> {
        Some(1.0)
    }
    fn check_dimension(&self, n: usize) -> Result<()> {
        if n > 2 {
            return invalid("random checkerboard supports n <= 2");
        }
        Ok(())
    }
    fn params(&self) -> Value {
        json!({
            "values": self.distribution.values(),
            "probabilities": self.distribution.probabilities(),
            "master_seed": self.master_seed,
            "seed": self.seed,
        })
    }
}

/// `x -> inner(x / factor)`: the oscillating coefficient `a(x / eps)` of a
/// rescaled problem.
#[derive(Debug, Clone)]
pub struct Rescaled {
    pub inner: SharedField,
    pub factor: f64,
}

impl Rescaled {
    pub fn new(inner: SharedField, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return invalid("rescaled: factor must be positive");
        }
        Ok(Self { inner, factor })
    }
}

impl CoefficientField for Rescaled {
    fn kind(&self) -> &'static str {
        "rescaled"
    }
    fn value_at(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().map(|xi| xi / self.factor).collect();
        self.inner.value_at(&y)
    }
    fn range(&self) -> (f64, f64) {
        self.inner.range()
    }
    fn period(&self) -> Option<f64> {
        self.inner.period().map(|p| p * self.factor)
    }
    fn check_dimension(&self, n: usize) -> Result<()> {
        self.inner.check_dimension(n)
    }
    fn params(&self) -> Value {
        json!({
            "factor": self.factor,
            "inner": { "kind": self.inner.kind(), "params": self.inner.params() },
        })
    }
}

type Builder = fn(&FieldRegistry, &Value) -> Result<SharedField>;

/// Name-indexed constructors for coefficient fields.
pub struct FieldRegistry {
    builders: BTreeMap<&'static str, Builder>,
}

fn parse<T: for<'de> Deserialize<'de>>(kind: &str, params: &Value) -> Result<T> {
    serde_json::from_value(params.clone())
        .map_err(|e| Error::InvalidInput(format!("{kind} params: {e}")))
}

fn build_homogeneous(_: &FieldRegistry, params: &Value) -> Result<SharedField> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        c: f64,
    }
    let p: P = parse("homogeneous", params)?;
    Ok(Arc::new(Homogeneous::new(p.c)?))
}

fn build_laminate(_: &FieldRegistry, params: &Value) -> Result<SharedField> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        values: Vec<f64>,
        direction: Vec<f64>,
        period: f64,
        #[serde(default)]
        offset: f64,
    }
    let p: P = parse("laminate", params)?;
    Ok(Arc::new(Laminate::new(
        p.values,
        p.direction,
        p.period,
        p.offset,
    )?))
}

fn build_checkerboard(_: &FieldRegistry, params: &Value) -> Result<SharedField> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        values: [f64; 2],
        #[serde(default = "unit")]
        period: f64,
    }
    let p: P = parse("checkerboard", params)?;
    Ok(Arc::new(Checkerboard::new(p.values, p.period)?))
}

fn build_random(_: &FieldRegistry, params: &Value) -> Result<SharedField> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        values: Vec<f64>,
        probabilities: Vec<f64>,
        #[serde(default)]
        master_seed: u64,
        #[serde(default)]
        seed: u64,
    }
    let p: P = parse("random_checkerboard", params)?;
    let dist = DiscreteDistribution::new(p.values, p.probabilities)?;
    Ok(Arc::new(RandomCheckerboard::new(
        dist,
        p.master_seed,
        p.seed,
    )))
}

fn build_rescaled(registry: &FieldRegistry, params: &Value) -> Result<SharedField> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        kind: String,
        #[serde(default)]
        params: Value,
    }
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct P {
        factor: f64,
        inner: Inner,
    }
    let p: P = parse("rescaled", params)?;
    let inner = registry.build(&p.inner.kind, &p.inner.params)?;
    Ok(Arc::new(Rescaled::new(inner, p.factor)?))
}

fn unit() -> f64 {
    1.0
}

impl FieldRegistry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// Registry holding every field shipped with the crate.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("homogeneous", build_homogeneous);
        r.register("laminate", build_laminate);
        r.register("checkerboard", build_checkerboard);
        r.register("random_checkerboard", build_random);
        r.register("rescaled", build_rescaled);
        r
    }

    pub fn register(&mut self, kind: &'static str, builder: Builder) {
        self.builders.insert(kind, builder);
    }

    pub fn kinds(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }

    pub fn build(&self, kind: &str, params: &Value) -> Result<SharedField> {
        let builder = self.builders.get(kind).ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown coefficient kind '{kind}' (known: {})",
                self.kinds().join(", ")
            ))
        })?;
        builder(self, params)
    }
}
