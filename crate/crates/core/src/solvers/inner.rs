//! Inner minimisers for the convex `u`- and `v`-substeps, selectable by
//! name through [`InnerRegistry`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Hessian-vector product, diagonal and linear term of a quadratic
/// objective `½ xᵀAx - bᵀx`.
pub trait Quadratic {
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;
    fn rhs(&self) -> Vec<f64>;
}

/// A smooth objective over `x ∈ R^len`, some entries held fixed.
pub trait SubProblem {
    fn len(&self) -> usize;
    /// Entries the minimiser may change.
    fn free(&self) -> &[bool];
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient and returns the value.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
    /// Box constraint applied to every free entry.
    fn bounds(&self) -> Option<(f64, f64)> {
        None
    }
    fn quadratic(&self) -> Option<&dyn Quadratic> {
        None
    }
    /// Positive diagonal used to scale gradient steps.
    fn scaling(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
    /// Writes the Hessian applied to `d` into `out`; `false` when not
    /// available.
    fn hess_vec(&self, _x: &[f64], _d: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    /// Factor turning nodal gradients into densities (the cell volume).
    fn density(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InnerOptions {
    pub max_iter: usize,
    /// Stop once the density-scaled KKT residual is below this.
    pub grad_tol: f64,
    pub linear_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerReport {
    pub iterations: usize,
    pub converged: bool,
    pub value: f64,
}

/// A named strategy for one substep.
pub trait InnerSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn minimize(
        &self,
        problem: &dyn SubProblem,
        x: &mut [f64],
        opts: &InnerOptions,
    ) -> Result<InnerReport>;
}

/// Largest diagonal-Newton step `|g_i| / H_ii` over free entries not held
/// by a bound (plain `|g_i| / density` without a scaling). Scale free, so
/// one tolerance serves every penalty and grid size.
pub fn kkt_residual(problem: &dyn SubProblem, x: &[f64], grad: &[f64]) -> f64 {
    let scale = problem.scaling(x).map(floored);
    let density = problem.density();
    let bounds = problem.bounds();
    let mut worst: f64 = 0.0;
    for (i, ((&free, &xi), &gi)) in problem.free().iter().zip(x).zip(grad).enumerate() {
        if !free {
            continue;
        }
        let active = match bounds {
            Some((lo, hi)) => (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0),
            None => false,
        };
        if !active {
            let d = scale.as_ref().map_or(density, |s| s[i]);
            worst = worst.max(gi.abs() / d);
        }
    }
    worst
}

/// Scaling diagonal with a relative floor (or ones if it vanishes).
fn floored(mut d: Vec<f64>) -> Vec<f64> {
    let top = d.iter().fold(0.0f64, |a, b| a.max(*b));
    let floor = if top > 0.0 { 1e-10 * top } else { 1.0 };
    d.iter_mut().for_each(|v| *v = v.max(floor));
    d
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mask(free: &[bool], v: &mut [f64]) {
    for (x, &f) in v.iter_mut().zip(free) {
        if !f {
            *x = 0.0;
        }
    }
}

/// Jacobi-preconditioned conjugate gradients on the free block of a
/// quadratic subproblem. Free entries with a zero diagonal are decoupled
/// and left untouched.
#[derive(Debug, Default)]
pub struct Pcg;

impl InnerSolver for Pcg {
    fn name(&self) -> &'static str {
        "pcg"
    }

    fn minimize(
        &self,
        problem: &dyn SubProblem,
        x: &mut [f64],
        opts: &InnerOptions,
    ) -> Result<InnerReport> {
        let quad = problem
            .quadratic()
            .ok_or_else(|| Error::Unsupported("pcg needs a quadratic subproblem".into()))?;
        let n = problem.len();
        let diag = quad.diagonal();
        let active: Vec<bool> = problem
            .free()
            .iter()
            .zip(&diag)
            .map(|(&f, &d)| f && d > 0.0)
            .collect();
        let b = quad.rhs();

        // residual scale: right-hand side seen by the free block
        let mut fixed_part = x.to_vec();
        for (xi, &a) in fixed_part.iter_mut().zip(&active) {
            if a {
                *xi = 0.0;
            }
        }
        let mut ax = vec![0.0; n];
        quad.apply(&fixed_part, &mut ax);
        let mut rhs_eff: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        mask(&active, &mut rhs_eff);
        let b_norm = dot(&rhs_eff, &rhs_eff).sqrt();

        quad.apply(x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        mask(&active, &mut r);
        let r0 = dot(&r, &r).sqrt();
        let target = opts.linear_tol * b_norm.max(r0);
        let cap = opts.max_iter.max(20 * (n as f64).sqrt() as usize);

        let precond = |r: &[f64], z: &mut [f64]| {
            for i in 0..n {
                z[i] = if active[i] { r[i] / diag[i] } else { 0.0 };
            }
        };
        let mut z = vec![0.0; n];
        precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut iterations = 0;
        let mut r_norm = r0;
        let scaled = |r: &[f64]| {
            (0..n)
                .filter(|&i| active[i])
                .fold(0.0f64, |a, i| a.max(r[i].abs() / diag[i]))
        };
        let mut step_norm = scaled(&r);
        while r_norm > target && step_norm > opts.grad_tol && iterations < cap {
            quad.apply(&p, &mut ap);
            mask(&active, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                if r_norm <= 1e3 * target {
                    break;
                }
                return Err(Error::Solver(format!(
                    "conjugate gradient breakdown (pAp = {pap:e}) after {iterations} iterations"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            r_norm = dot(&r, &r).sqrt();
            step_norm = scaled(&r);
            iterations += 1;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "conjugate gradient produced non-finite values".into(),
            ));
        }
        Ok(InnerReport {
            iterations,
            converged: r_norm <= target || step_norm <= opts.grad_tol,
            value: problem.value(x),
        })
    }
}

/// Monotone gradient method with Barzilai–Borwein trial steps, Armijo
/// backtracking and, when the subproblem has bounds, projection onto the
/// box (spectral projected gradient).
#[derive(Debug)]
pub struct SpectralGradient {
    name: &'static str,
    project: bool,
}

impl SpectralGradient {
    pub fn descent() -> Self {
        Self {
            name: "armijo-descent",
            project: false,
        }
    }
    pub fn projected() -> Self {
        Self {
            name: "projected-gradient",
            project: true,
        }
    }
}

impl InnerSolver for SpectralGradient {
    fn name(&self) -> &'static str {
        self.name
    }

    fn minimize(
        &self,
        problem: &dyn SubProblem,
        x: &mut [f64],
        opts: &InnerOptions,
    ) -> Result<InnerReport> {
        let bounds = if self.project { problem.bounds() } else { None };
        if problem.bounds().is_some() && bounds.is_none() {
            return Err(Error::Unsupported(format!(
                "{} cannot handle box constraints",
                self.name
            )));
        }
        let n = problem.len();
        let free = problem.free();
        let project = |v: f64| match bounds {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        };
        for i in 0..n {
            if free[i] {
                x[i] = project(x[i]);
            }
        }
        let mut g = vec![0.0; n];
        let mut f = problem.value_grad(x, &mut g);
        mask(free, &mut g);
        let metric = |x: &[f64]| problem.scaling(x).map_or_else(|| vec![1.0; n], floored);
        let scaled = problem.scaling(x).is_some();
        let mut d = metric(x);
        let g_max = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut step = if scaled {
            1.0
        } else if g_max > 0.0 {
            1.0 / g_max
        } else {
            1.0
        };
        let mut trial = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut iterations = 0;
        let mut converged = kkt_residual(problem, x, &g) <= opts.grad_tol;
        while !converged && iterations < opts.max_iter {
            if scaled && iterations > 0 && iterations % 10 == 0 {
                d = metric(x);
            }
            for i in 0..n {
                trial[i] = if free[i] {
                    project(x[i] - step * g[i] / d[i])
                } else {
                    x[i]
                };
            }
            let slope: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if !(slope < 0.0) {
                converged = true;
                break;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = if t == 1.0 {
                    trial.clone()
                } else {
                    (0..n).map(|i| x[i] + t * (trial[i] - x[i])).collect()
                };
                let f_c = problem.value_grad(&cand, &mut g_new);
                mask(free, &mut g_new);
                // below rounding level the value test is blind; fall back
                // on the optimality residual
                let flat = f_c - f <= 4.0 * f64::EPSILON * f.abs()
                    && kkt_residual(problem, &cand, &g_new) < kkt_residual(problem, x, &g);
                if f_c <= f + opts.armijo_c * t * slope || flat {
                    accepted = Some((cand, f_c.min(f)));
                    break;
                }
                t *= opts.armijo_shrink;
            }
            let Some((cand, f_c)) = accepted else { break };
            let (mut sds, mut sy) = (0.0, 0.0);
            for i in 0..n {
                let s = cand[i] - x[i];
                sds += s * s * d[i];
                sy += s * (g_new[i] - g[i]);
            }
            step = if sy > 0.0 {
                (sds / sy).clamp(1e-30, 1e30)
            } else {
                step * 4.0
            };
            x.copy_from_slice(&cand);
            std::mem::swap(&mut g, &mut g_new);
            let decrease = f - f_c;
            f = f_c;
            iterations += 1;
            converged = kkt_residual(problem, x, &g) <= opts.grad_tol;
            if decrease <= f64::EPSILON * f.abs() && sds == 0.0 {
                break;
            }
        }
        Ok(InnerReport {
            iterations,
            converged,
            value: f,
        })
    }
}

/// Projected truncated Newton: conjugate gradients on the free block with
/// exact Hessian products and adaptive Levenberg damping, a scaled gradient
/// step on the nearly active entries, and Armijo backtracking along the
/// projection arc. Decreases below the rounding level of the objective
/// count as stationary.
#[derive(Debug, Default)]
pub struct ProjectedNewton;

impl InnerSolver for ProjectedNewton {
    fn name(&self) -> &'static str {
        "projected-newton"
    }

    fn minimize(
        &self,
        problem: &dyn SubProblem,
        x: &mut [f64],
        opts: &InnerOptions,
    ) -> Result<InnerReport> {
        let n = problem.len();
        let free = problem.free();
        let bounds = problem.bounds();
        let project = |v: f64| match bounds {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        };
        for i in 0..n {
            if free[i] {
                x[i] = project(x[i]);
            }
        }
        let mut g = vec![0.0; n];
        let mut f = problem.value_grad(x, &mut g);
        mask(free, &mut g);
        let mut g_probe = vec![0.0; n];
        let mut probe = vec![0.0; n];
        let mut iterations = 0;
        let mut converged = kkt_residual(problem, x, &g) <= opts.grad_tol;
        // Levenberg damping `H + mu D`, raised when the line search has to cut the step
        let mut mu = 0.0f64;
        while !converged && iterations < opts.max_iter {
            let d = problem.scaling(x).map_or_else(|| vec![1.0; n], floored);
            // entries within `band` of a bound and pushed against it are held
            let mut band = 0.0f64;
            for i in 0..n {
                if free[i] {
                    band = band.max((x[i] - project(x[i] - g[i] / d[i])).abs());
                }
            }
            let band = band.min(1e-3);
            let held: Vec<bool> = (0..n)
                .map(|i| {
                    free[i]
                        && match bounds {
                            Some((lo, hi)) => {
                                (x[i] <= lo + band && g[i] > 0.0)
                                    || (x[i] >= hi - band && g[i] < 0.0)
                            }
                            None => false,
                        }
                })
                .collect();
            let inner: Vec<bool> = (0..n).map(|i| free[i] && !held[i]).collect();

            // truncated CG on the inner block
            let mut step = vec![0.0; n];
            let mut r: Vec<f64> = (0..n).map(|i| if inner[i] { -g[i] } else { 0.0 }).collect();
            let r0 = dot(&r, &r).sqrt();
            let forcing = (0.5f64).min(r0.sqrt()) * r0;
            let mut z: Vec<f64> = (0..n).map(|i| r[i] / d[i]).collect();
            let mut dir = z.clone();
            let mut rz = dot(&r, &z);
            let x_scale = x.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            for k in 0..opts.max_iter.max(50) {
                let p_max = dir.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if p_max == 0.0 {
                    break;
                }
                let mut hp = vec![0.0; n];
                if !problem.hess_vec(x, &dir, &mut hp) {
                    let t = 1e-7 * x_scale / p_max;
                    for i in 0..n {
                        probe[i] = x[i] + t * dir[i];
                    }
                    problem.value_grad(&probe, &mut g_probe);
                    for i in 0..n {
                        hp[i] = (g_probe[i] - g[i]) / t;
                    }
                }
                for i in 0..n {
                    hp[i] += mu * d[i] * dir[i];
                }
                mask(&inner, &mut hp);
                let curv = dot(&dir, &hp);
                if !(curv > 0.0) {
                    if k == 0 {
                        step.copy_from_slice(&z);
                    }
                    break;
                }
                let alpha = rz / curv;
                for i in 0..n {
                    step[i] += alpha * dir[i];
                    r[i] -= alpha * hp[i];
                }
                if dot(&r, &r).sqrt() <= forcing {
                    break;
                }
                for i in 0..n {
                    z[i] = r[i] / d[i];
                }
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    dir[i] = z[i] + beta * dir[i];
                }
            }
            for i in 0..n {
                if held[i] {
                    step[i] = -g[i] / d[i];
                }
            }

            let noise = (n as f64).sqrt() * 8.0 * f64::EPSILON * f.abs();
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<f64> = (0..n)
                    .map(|i| {
                        if free[i] {
                            project(x[i] + t * step[i])
                        } else {
                            x[i]
                        }
                    })
                    .collect();
                let model: f64 = (0..n)
                    .map(|i| {
                        if inner[i] {
                            t * g[i] * step[i]
                        } else {
                            g[i] * (cand[i] - x[i])
                        }
                    })
                    .sum();
                let f_c = problem.value_grad(&cand, &mut g_probe);
                mask(free, &mut g_probe);
                // below the summation noise of the objective the value test
                // is blind: a full step is taken on trust, shorter ones are
                // not worth trying
                let flat = -model <= noise;
                if (model < 0.0 && f_c <= f + opts.armijo_c * model)
                    || (flat && t == 1.0 && f_c - f <= noise)
                {
                    accepted = Some((cand, f_c.min(f)));
                    break;
                }
                if flat {
                    break;
                }
                t *= opts.armijo_shrink;
            }
            mu = if t == 1.0 {
                if mu < 1e-8 {
                    0.0
                } else {
                    mu / 4.0
                }
            } else {
                (mu * 4.0).max(1e-3)
            };
            let Some((cand, f_c)) = accepted else { break };
            x.copy_from_slice(&cand);
            std::mem::swap(&mut g, &mut g_probe);
            f = f_c;
            iterations += 1;
            converged = kkt_residual(problem, x, &g) <= opts.grad_tol;
        }
        Ok(InnerReport {
            iterations,
            converged,
            value: f,
        })
    }
}

/// Name → inner solver table.
#[derive(Clone)]
pub struct InnerRegistry {
    solvers: BTreeMap<&'static str, Arc<dyn InnerSolver>>,
}

impl std::fmt::Debug for InnerRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.solvers.keys()).finish()
    }
}

impl Default for InnerRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl InnerRegistry {
    pub fn empty() -> Self {
        Self {
            solvers: BTreeMap::new(),
        }
    }

    /// `pcg`, `armijo-descent`, `projected-gradient` and `projected-newton`.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(Pcg));
        reg.register(Arc::new(SpectralGradient::descent()));
        reg.register(Arc::new(SpectralGradient::projected()));
        reg.register(Arc::new(ProjectedNewton));
        reg
    }

    pub fn register(&mut self, solver: Arc<dyn InnerSolver>) {
        self.solvers.insert(solver.name(), solver);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.solvers.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn InnerSolver>> {
        self.solvers.get(name).cloned().ok_or_else(|| {
            Error::Config(format!(
                "unknown inner solver '{name}' (known: {})",
                self.names().join(", ")
            ))
        })
    }
}
