//! Randomised check of the class axioms for a concrete integrand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BulkIntegrand, SurfaceIntegrand};

/// Outcome of one axiom over all samples. `worst_violation` is the largest
/// positive amount by which the inequality failed, relative to the size of
/// its right-hand side; `witness` holds the offending sample.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomCheck {
    pub axiom: &'static str,
    pub description: &'static str,
    pub passed: bool,
    pub samples: usize,
    pub worst_violation: f64,
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub checks: Vec<AxiomCheck>,
}

impl ClassReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, axiom: &str) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.axiom == axiom)
    }
}

const REL_TOL: f64 = 1e-12;

struct Tracker {
    check: AxiomCheck,
}

impl Tracker {
    fn new(axiom: &'static str, description: &'static str) -> Self {
        Self {
            check: AxiomCheck {
                axiom,
                description,
                passed: true,
                samples: 0,
                worst_violation: 0.0,
                witness: None,
            },
        }
    }

    /// Records the inequality `lhs <= rhs`.
    fn le(&mut self, lhs: f64, rhs: f64, witness: impl FnOnce() -> Vec<f64>) {
        self.check.samples += 1;
        let scale = rhs.abs().max(lhs.abs()).max(1e-300);
        let excess = (lhs - rhs) / scale;
        if excess > REL_TOL && excess > self.check.worst_violation {
            self.check.passed = false;
            self.check.worst_violation = excess;
            self.check.witness = Some(witness());
        }
    }
}

fn sample_point(rng: &mut ChaCha8Rng, n: usize, period: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-5.0..5.0) * period).collect()
}

fn sample_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
    (0..len).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Samples `(x, ξ)` with `x ∈ R^n`, `ξ ∈ R^{m×n}` and checks (f2)–(f4) and
/// `f(x, 0) = 0`.
pub fn validate_bulk(
    f: &BulkIntegrand,
    n: usize,
    m: usize,
    sample_count: usize,
    seed: u64,
) -> ClassReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = f.field().period().unwrap_or(1.0);
    let c = f.constants();
    let p = f.p();
    let mut zero = Tracker::new("f0", "f(x,0) = 0");
    let mut lower = Tracker::new("f2", "c_lo |xi|^p <= f(x,xi)");
    let mut upper = Tracker::new("f3", "f(x,xi) <= c_hi |xi|^p");
    let mut lip = Tracker::new(
        "f4",
        "|f(x,xi1)-f(x,xi2)| <= L (1+|xi1|^(p-1)+|xi2|^(p-1)) |xi1-xi2|",
    );
    for _ in 0..sample_count.max(1) {
        let x = sample_point(&mut rng, n, period);
        let xi1 = sample_vector(&mut rng, m * n);
        let xi2 = sample_vector(&mut rng, m * n);
        let f0 = f.eval(&x, &vec![0.0; m * n]).unwrap_or(f64::NAN);
        zero.le(f0.abs(), 0.0, || x.clone());
        let f1 = f.eval(&x, &xi1).unwrap_or(f64::NAN);
        let f2 = f.eval(&x, &xi2).unwrap_or(f64::NAN);
        let n1 = norm(&xi1).powf(p);
        lower.le(c.c_lo * n1, f1, || concat(&[&x, &xi1]));
        upper.le(f1, c.c_hi * n1, || concat(&[&x, &xi1]));
        let bound = c.lipschitz
            * (1.0 + norm(&xi1).powf(p - 1.0) + norm(&xi2).powf(p - 1.0))
            * dist(&xi1, &xi2);
        lip.le((f1 - f2).abs(), bound, || concat(&[&x, &xi1, &xi2]));
    }
    ClassReport {
        checks: vec![zero.check, lower.check, upper.check, lip.check],
    }
}

/// Samples `(x, v, w)` with `v ∈ [-1, 2]` and checks (g2)–(g6) and
/// `g(x, 1, 0) = 0`.
pub fn validate_surface(
    g: &SurfaceIntegrand,
    n: usize,
    sample_count: usize,
    seed: u64,
) -> ClassReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = g.field().period().unwrap_or(1.0);
    let c = g.constants();
    let p = g.p();
    let at = |x: &[f64], v: f64, w: &[f64]| g.eval(x, v, w).unwrap_or(f64::NAN);
    let mut minimum = Tracker::new("g0", "g(x,1,0) = 0");
    let mut lower = Tracker::new("g2", "c_lo (|1-v|^p+|w|^p) <= g(x,v,w)");
    let mut upper = Tracker::new("g3", "g(x,v,w) <= c_hi (|1-v|^p+|w|^p)");
    let mut lip = Tracker::new("g4", "continuity in v and w with modulus L");
    let mut mono = Tracker::new(
        "g5",
        "g(x,.,w) decreasing on (-inf,1), increasing on [1,inf)",
    );
    let mut wmin = Tracker::new("g6", "g(x,v,0) <= g(x,v,w)");
    let zero_w = vec![0.0; n];
    for _ in 0..sample_count.max(1) {
        let x = sample_point(&mut rng, n, period);
        let v1: f64 = rng.gen_range(-1.0..2.0);
        let v2: f64 = rng.gen_range(-1.0..2.0);
        let w1 = sample_vector(&mut rng, n);
        let w2 = sample_vector(&mut rng, n);
        minimum.le(at(&x, 1.0, &zero_w).abs(), 0.0, || x.clone());
        let g1 = at(&x, v1, &w1);
        let g2 = at(&x, v2, &w2);
        let model = (1.0 - v1).abs().powf(p) + norm(&w1).powf(p);
        let wit = || concat(&[&x, &[v1], &w1]);
        lower.le(c.c_lo * model, g1, wit);
        upper.le(g1, c.c_hi * model, wit);
        let bound = c.lipschitz
            * ((1.0 + v1.abs().powf(p - 1.0) + v2.abs().powf(p - 1.0)) * (v1 - v2).abs()
                + (1.0 + norm(&w1).powf(p - 1.0) + norm(&w2).powf(p - 1.0)) * dist(&w1, &w2));
        lip.le((g1 - g2).abs(), bound, || {
            concat(&[&x, &[v1, v2], &w1, &w2])
        });
        let (lo, hi) = if v1 < v2 { (v1, v2) } else { (v2, v1) };
        let (glo, ghi) = (at(&x, lo, &w1), at(&x, hi, &w1));
        if hi < 1.0 {
            mono.le(ghi, glo, || concat(&[&x, &[lo, hi], &w1]));
        } else if lo >= 1.0 {
            mono.le(glo, ghi, || concat(&[&x, &[lo, hi], &w1]));
        }
        wmin.le(at(&x, v1, &zero_w), g1, wit);
    }
    ClassReport {
        checks: vec![
            minimum.check,
            lower.check,
            upper.check,
            lip.check,
            mono.check,
            wmin.check,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrands::{Checkerboard, ClassConstants, CoefficientField, Laminate};
    use std::sync::Arc;

    #[test]
    fn homogeneous_passes_everything() {
        let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
        assert!(validate_bulk(&f, 2, 1, 500, 1).all_passed());
        let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
        assert!(validate_surface(&g, 2, 500, 1).all_passed());
    }

    #[test]
    fn checkerboard_with_exact_constants_passes() {
        let cb = Arc::new(Checkerboard::new([1.0, 4.0], 1.0).unwrap());
        let f = BulkIntegrand::new(cb.clone(), 2.0).unwrap();
        assert!(validate_bulk(&f, 2, 2, 1000, 3).all_passed());
        let g = SurfaceIntegrand::new(cb, 3.0).unwrap();
        assert!(validate_surface(&g, 2, 1000, 3).all_passed());
    }

    #[test]
    fn understated_upper_constant_is_caught_in_a_stiff_cell() {
        let cb = Arc::new(Checkerboard::new([1.0, 4.0], 1.0).unwrap());
        let f = BulkIntegrand::new(cb.clone(), 2.0)
            .unwrap()
            .with_constants(ClassConstants {
                c_lo: 1.0,
                c_hi: 2.0,
                lipschitz: 8.0,
            })
            .unwrap();
        let report = validate_bulk(&f, 2, 1, 400, 7);
        let f3 = report.get("f3").unwrap();
        assert!(!f3.passed);
        assert!(report.get("f2").unwrap().passed);
        let w = f3.witness.as_ref().unwrap();
        assert_eq!(cb.value_at(&w[..2]), 4.0);
        assert!((f3.worst_violation - 0.5).abs() < 1e-12);
    }

    #[test]
    fn laminate_surface_passes() {
        let lam = Arc::new(Laminate::new(vec![1.0, 3.0], vec![0.0, 1.0], 2.0, 0.0).unwrap());
        let g = SurfaceIntegrand::new(lam, 2.5).unwrap();
        assert!(validate_surface(&g, 2, 800, 11).all_passed());
    }
}
