//! Discrete phase-field energy and its exact gradient.
//!
//! Per cell `c` with corners `k`, volume `h^n` and coefficients `a_c`, `b_c`
//! taken at the cell center:
//!
//! ```text
//! bulk    = Σ_c a_c (Σ_e ω_e^{2/p} |D_e u|²)^{p/2} h^n,   ω_e = harmonic mean of ψ at the ends of e
//! surface = Σ_c (b_c/ε)(|1 - v̄_c|^p + ε^p |Dv_c|^p) h^n,   v̄_c = corner mean
//! ```
//!
//! The inner sum runs over the cell edges; `|D_e u|²` is the squared
//! difference quotient along `e` divided by the number of edges parallel
//! to it, so `Σ_e |D_e u|²` is `|Du_c|²`. An edge carries no bulk energy
//! as soon as one of its ends has `ψ(v) = 0`. Everything is rotation
//! invariant and computed in grid-local axes.

use serde::{Deserialize, Serialize};

use crate::discretization::{Grid, PhaseFieldState};
use crate::error::{invalid, Result};
use crate::integrands::{BulkIntegrand, PsiFunction, SurfaceIntegrand};

const V_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub bulk: f64,
    pub surface: f64,
    /// Data term `Σ h^n |u - d|^q`; zero unless a fidelity term is attached.
    pub fidelity: f64,
    pub total: f64,
    pub eps: f64,
}

/// `Σ_nodes h^n |u - d|^q`, with `d` stored like `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityTerm {
    pub data: Vec<f64>,
    pub q: f64,
}

#[derive(Debug, Clone)]
struct SurfaceTerm {
    p: f64,
    b: Vec<f64>,
}

/// Edges of a cell as corner pairs, grouped by axis.
const EDGES_1D: [(usize, usize); 1] = [(0, 1)];
const EDGES_2D: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];

#[inline]
fn pow_p(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else {
        x.powf(p)
    }
}

/// `s^{p/2}` and its derivative in `s`.
#[inline]
fn pow_half(s: f64, p: f64) -> (f64, f64) {
    if p == 2.0 {
        (s, 1.0)
    } else if s > 0.0 {
        let v = s.powf(0.5 * p);
        (v, 0.5 * p * v / s)
    } else {
        (0.0, 0.0)
    }
}

/// First and second derivative of `s ↦ s^{p/2}` (zero at `s = 0`).
#[inline]
fn pow_half_second(s: f64, p: f64) -> (f64, f64) {
    if p == 2.0 {
        (1.0, 0.0)
    } else if s > 0.0 {
        let d1 = 0.5 * p * s.powf(0.5 * p - 1.0);
        (d1, (0.5 * p - 1.0) * d1 / s)
    } else {
        (0.0, 0.0)
    }
}

/// Harmonic mean of two non-negative numbers, zero if either is.
#[inline]
fn harmonic(x: f64, y: f64) -> f64 {
    if x <= 0.0 || y <= 0.0 {
        0.0
    } else {
        2.0 * x * y / (x + y)
    }
}

/// Discrete energy on a fixed grid with cached cell coefficients.
///
/// The objective minimised by the solvers is
/// `penalty · bulk + surface + fidelity`.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    grid: Grid,
    m: usize,
    p: f64,
    psi: PsiFunction,
    eps: f64,
    a: Vec<f64>,
    surface: Option<SurfaceTerm>,
    penalty: f64,
    fidelity: Option<FidelityTerm>,
    corners: Vec<[usize; 4]>,
    edge_weight: f64,
}

impl EnergyModel {
    pub fn new(
        grid: &Grid,
        m: usize,
        f: &BulkIntegrand,
        g: &SurfaceIntegrand,
        psi: &PsiFunction,
        eps: f64,
    ) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return invalid("eps must be positive");
        }
        let mut model = Self::bulk_only(grid, m, f)?.with_psi(psi)?;
        let centers = grid.cell_centers();
        model.surface = Some(SurfaceTerm {
            p: g.p(),
            b: centers.iter().map(|x| g.coefficient(x)).collect(),
        });
        model.eps = eps;
        Ok(model)
    }

    /// Bulk term only (`v` is then a parameter, not an unknown).
    pub fn bulk_only(grid: &Grid, m: usize, f: &BulkIntegrand) -> Result<Self> {
        if m == 0 || m > 2 {
            return invalid(format!("m = {m} not supported (m must be 1 or 2)"));
        }
        let centers = grid.cell_centers();
        let per_axis = (grid.corners_per_cell() / 2) as f64;
        Ok(Self {
            grid: grid.clone(),
            m,
            p: f.p(),
            psi: PsiFunction::default(),
            eps: 1.0,
            a: centers.iter().map(|x| f.coefficient(x)).collect(),
            surface: None,
            penalty: 1.0,
            fidelity: None,
            corners: (0..grid.cell_count())
                .map(|c| grid.cell_corners(c))
                .collect(),
            edge_weight: 1.0 / (per_axis * grid.spacing() * grid.spacing()),
        })
    }

    pub fn with_psi(mut self, psi: &PsiFunction) -> Result<Self> {
        psi.validate()?;
        self.psi = psi.clone();
        Ok(self)
    }

    /// Multiplies the bulk term by `lambda` in the objective.
    pub fn with_penalty(mut self, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return invalid("penalty must be positive");
        }
        self.penalty = lambda;
        Ok(self)
    }

    pub fn with_fidelity(mut self, term: FidelityTerm) -> Result<Self> {
        if term.data.len() != self.m * self.grid.node_count() {
            return invalid("fidelity data must have one value per node and component");
        }
        if !(term.q.is_finite() && term.q >= 1.0) || term.data.iter().any(|d| !d.is_finite()) {
            return invalid("fidelity exponent must be >= 1 and data finite");
        }
        self.fidelity = Some(term);
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn components(&self) -> usize {
        self.m
    }
    pub fn bulk_exponent(&self) -> f64 {
        self.p
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn penalty(&self) -> f64 {
        self.penalty
    }
    pub fn has_surface(&self) -> bool {
        self.surface.is_some()
    }
    pub fn fidelity(&self) -> Option<&FidelityTerm> {
        self.fidelity.as_ref()
    }
    fn edges(&self) -> &'static [(usize, usize)] {
        if self.grid.dim() == 1 {
            &EDGES_1D
        } else {
            &EDGES_2D
        }
    }
    fn volume(&self) -> f64 {
        self.grid.cell_volume()
    }

    /// Whether the `u`-subproblem is quadratic (bulk `p = 2`, no fidelity
    /// or `q = 2`).
    pub fn u_is_quadratic(&self) -> bool {
        self.p == 2.0 && self.fidelity.as_ref().is_none_or(|t| t.q == 2.0)
    }

    /// `|D x_c|²` for a field with `comps` components per node.
    #[inline]
    fn cell_sq(&self, x: &[f64], comps: usize, corners: &[usize; 4]) -> f64 {
        let mut s = 0.0;
        for &(i, j) in self.edges() {
            for c in 0..comps {
                let d = x[corners[j] * comps + c] - x[corners[i] * comps + c];
                s += d * d;
            }
        }
        s * self.edge_weight
    }

    /// Adds `scale · ∂|D x_c|²/∂x` into `out`.
    #[inline]
    fn add_cell_sq_grad(
        &self,
        x: &[f64],
        comps: usize,
        corners: &[usize; 4],
        scale: f64,
        out: &mut [f64],
    ) {
        let w = 2.0 * self.edge_weight * scale;
        for &(i, j) in self.edges() {
            for c in 0..comps {
                let (ni, nj) = (corners[i] * comps + c, corners[j] * comps + c);
                let d = w * (x[nj] - x[ni]);
                out[nj] += d;
                out[ni] -= d;
            }
        }
    }

    /// `ψ` at the two ends of edge `e`.
    #[inline]
    fn ends(&self, v: &[f64], corners: &[usize; 4], e: (usize, usize)) -> (f64, f64) {
        (
            self.psi.eval(v[corners[e.0]]),
            self.psi.eval(v[corners[e.1]]),
        )
    }

    /// `ω^{2/p}` for an edge weight `ω`.
    #[inline]
    fn edge_factor(&self, w: f64) -> f64 {
        if self.p == 2.0 {
            w
        } else {
            w.powf(2.0 / self.p)
        }
    }

    /// Per cell and edge `u`-stiffness `(penalty · a_c h^n ω_e)^{2/p}` at
    /// fixed `v`, `cells × edges` entries.
    pub fn cell_weights(&self, v: &[f64]) -> Vec<f64> {
        let scale = self.penalty * self.volume();
        let mut out = Vec::with_capacity(self.corners.len() * self.edges().len());
        for (c, a) in self.corners.iter().zip(&self.a) {
            for &e in self.edges() {
                let (x, y) = self.ends(v, c, e);
                out.push(self.edge_factor(scale * a * harmonic(x, y)));
            }
        }
        out
    }

    /// Per cell and edge `(penalty · a_c h^n)^{2/p} |D_e u|²` at fixed `u`.
    pub fn bulk_densities(&self, u: &[f64]) -> Vec<f64> {
        let scale = self.penalty * self.volume();
        let mut out = Vec::with_capacity(self.corners.len() * self.edges().len());
        for (c, a) in self.corners.iter().zip(&self.a) {
            let f = self.edge_factor(scale * a) * self.edge_weight;
            for &(i, j) in self.edges() {
                let mut d2 = 0.0;
                for comp in 0..self.m {
                    let d = u[c[j] * self.m + comp] - u[c[i] * self.m + comp];
                    d2 += d * d;
                }
                out.push(f * d2);
            }
        }
        out
    }

    /// `Σ_e κ_e |D_e x|²` for one cell.
    #[inline]
    fn weighted_sq(&self, x: &[f64], corners: &[usize; 4], kappa: &[f64]) -> f64 {
        let mut s = 0.0;
        for (&(i, j), k) in self.edges().iter().zip(kappa) {
            if *k > 0.0 {
                for c in 0..self.m {
                    let d = x[corners[j] * self.m + c] - x[corners[i] * self.m + c];
                    s += k * d * d;
                }
            }
        }
        s * self.edge_weight
    }

    /// Adds `scale · ∂/∂x Σ_e κ_e |D_e x|²` into `out`.
    #[inline]
    fn add_weighted_sq_grad(
        &self,
        x: &[f64],
        corners: &[usize; 4],
        kappa: &[f64],
        scale: f64,
        out: &mut [f64],
    ) {
        let w = 2.0 * self.edge_weight * scale;
        for (&(i, j), k) in self.edges().iter().zip(kappa) {
            if *k > 0.0 {
                for c in 0..self.m {
                    let (ni, nj) = (corners[i] * self.m + c, corners[j] * self.m + c);
                    let d = w * k * (x[nj] - x[ni]);
                    out[nj] += d;
                    out[ni] -= d;
                }
            }
        }
    }

    /// `Σ_e ω_e^{2/p} β_e` for one cell.
    #[inline]
    fn bulk_in_v(&self, v: &[f64], corners: &[usize; 4], beta: &[f64]) -> f64 {
        let mut t = 0.0;
        for (&e, b) in self.edges().iter().zip(beta) {
            if *b > 0.0 {
                let (x, y) = self.ends(v, corners, e);
                t += b * self.edge_factor(harmonic(x, y));
            }
        }
        t
    }

    /// Calls `add(node, ∂ω_e^{2/p}/∂ψ · β_e · outer)` for both ends of every
    /// edge, with `outer` the derivative of `t ↦ t^{p/2}` at the cell value.
    #[inline]
    fn bulk_v_terms(
        &self,
        v: &[f64],
        corners: &[usize; 4],
        beta: &[f64],
        mut add: impl FnMut(usize, f64),
    ) -> f64 {
        let (value, outer) = pow_half(self.bulk_in_v(v, corners, beta), self.p);
        if outer == 0.0 && self.p != 2.0 {
            return value;
        }
        for (&e, b) in self.edges().iter().zip(beta) {
            if *b <= 0.0 {
                continue;
            }
            let (x, y) = self.ends(v, corners, e);
            let w = harmonic(x, y);
            let dz = if self.p == 2.0 {
                1.0
            } else if w > 0.0 {
                (2.0 / self.p) * w.powf(2.0 / self.p - 1.0)
            } else {
                0.0
            };
            if dz == 0.0 || x + y <= 0.0 {
                continue;
            }
            let (dx, dy) = (
                2.0 * y * y / ((x + y) * (x + y)),
                2.0 * x * x / ((x + y) * (x + y)),
            );
            add(corners[e.0], outer * b * dz * dx);
            add(corners[e.1], outer * b * dz * dy);
        }
        value
    }

    /// Adds `∂/∂v (Σ_e ω_e^{2/p} β_e)^{p/2}` into `out`; returns the value.
    #[inline]
    fn add_bulk_v_grad(
        &self,
        v: &[f64],
        corners: &[usize; 4],
        beta: &[f64],
        out: &mut [f64],
    ) -> f64 {
        self.bulk_v_terms(v, corners, beta, |node, d| {
            out[node] += d * self.psi.derivative(v[node])
        })
    }

    fn fidelity_value(&self, u: &[f64]) -> f64 {
        match &self.fidelity {
            None => 0.0,
            Some(t) => {
                self.volume()
                    * u.iter()
                        .zip(&t.data)
                        .map(|(x, d)| pow_p((x - d).abs(), t.q))
                        .sum::<f64>()
            }
        }
    }

    fn add_fidelity_grad(&self, u: &[f64], out: &mut [f64]) {
        if let Some(t) = &self.fidelity {
            let vol = self.volume();
            for ((o, x), d) in out.iter_mut().zip(u).zip(&t.data) {
                let r = x - d;
                if r != 0.0 {
                    *o += vol * t.q * r.abs().powf(t.q - 1.0) * r.signum();
                }
            }
        }
    }

    /// `u`-subproblem objective `Σ_c (Σ_e κ_e |D_e u|²)^{p/2} + fidelity`.
    pub fn u_value(&self, kappa: &[f64], u: &[f64]) -> f64 {
        let ne = self.edges().len();
        let bulk: f64 = self
            .corners
            .iter()
            .zip(kappa.chunks_exact(ne))
            .map(|(c, k)| pow_half(self.weighted_sq(u, c, k), self.p).0)
            .sum();
        bulk + self.fidelity_value(u)
    }

    /// Gradient of [`Self::u_value`] written into `out`; returns the value.
    pub fn u_gradient(&self, kappa: &[f64], u: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ne = self.edges().len();
        let mut value = 0.0;
        for (c, k) in self.corners.iter().zip(kappa.chunks_exact(ne)) {
            let (e, de) = pow_half(self.weighted_sq(u, c, k), self.p);
            value += e;
            if de != 0.0 {
                self.add_weighted_sq_grad(u, c, k, de, out);
            }
        }
        self.add_fidelity_grad(u, out);
        value + self.fidelity_value(u)
    }

    /// Hessian-vector product of the quadratic `u`-subproblem (`p = 2`).
    pub fn quadratic_apply(&self, kappa: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ne = self.edges().len();
        for (c, k) in self.corners.iter().zip(kappa.chunks_exact(ne)) {
            self.add_weighted_sq_grad(x, c, k, 1.0, out);
        }
        if let Some(t) = &self.fidelity {
            let w = 2.0 * self.volume();
            debug_assert!(t.q == 2.0);
            for (o, xi) in out.iter_mut().zip(x) {
                *o += w * xi;
            }
        }
    }

    /// Diagonal of [`Self::quadratic_apply`].
    pub fn quadratic_diagonal(&self, kappa: &[f64]) -> Vec<f64> {
        self.u_diagonal(kappa, &vec![0.0; self.m * self.grid.node_count()])
    }

    /// Linear term `b` of the quadratic `u`-subproblem `½ xᵀAx - bᵀx`.
    pub fn quadratic_rhs(&self) -> Vec<f64> {
        match &self.fidelity {
            None => vec![0.0; self.m * self.grid.node_count()],
            Some(t) => t.data.iter().map(|d| 2.0 * self.volume() * d).collect(),
        }
    }

    /// `v`-subproblem objective `Σ_c (Σ_e ω_e(v)^{2/p} β_e)^{p/2} + surface(v)`.
    pub fn v_value(&self, beta: &[f64], v: &[f64]) -> f64 {
        let ne = self.edges().len();
        let mut value = 0.0;
        for (idx, (c, b)) in self.corners.iter().zip(beta.chunks_exact(ne)).enumerate() {
            value += pow_half(self.bulk_in_v(v, c, b), self.p).0;
            value += self.surface_cell(idx, v, c);
        }
        value
    }

    /// Positive approximation of the Hessian diagonal of [`Self::u_value`]
    /// (the rank-one part of `|·|^p` is dropped).
    pub fn u_diagonal(&self, kappa: &[f64], u: &[f64]) -> Vec<f64> {
        let mut diag = vec![0.0; u.len()];
        let ne = self.edges().len();
        let w = 2.0 * self.edge_weight;
        for (c, k) in self.corners.iter().zip(kappa.chunks_exact(ne)) {
            let de = if self.p == 2.0 {
                1.0
            } else {
                pow_half(self.weighted_sq(u, c, k), self.p).1
            };
            if de == 0.0 {
                continue;
            }
            for (&(i, j), ke) in self.edges().iter().zip(k) {
                for comp in 0..self.m {
                    diag[c[i] * self.m + comp] += w * ke * de;
                    diag[c[j] * self.m + comp] += w * ke * de;
                }
            }
        }
        if let Some(t) = &self.fidelity {
            let vol = self.volume();
            for ((d, x), y) in diag.iter_mut().zip(u).zip(&t.data) {
                let r = (x - y).abs();
                *d += vol * t.q * (t.q - 1.0) * if t.q == 2.0 { 1.0 } else { r.powf(t.q - 2.0) };
            }
        }
        diag
    }

    /// Positive approximation of the Hessian diagonal of [`Self::v_value`]
    /// (concave parts of the bulk weight are dropped).
    pub fn v_diagonal(&self, beta: &[f64], v: &[f64]) -> Vec<f64> {
        let mut diag = vec![0.0; v.len()];
        let k = self.grid.corners_per_cell();
        let kf = k as f64;
        let ne = self.edges().len();
        for (idx, (c, b)) in self.corners.iter().zip(beta.chunks_exact(ne)).enumerate() {
            self.bulk_v_terms(v, c, b, |node, d| {
                diag[node] += d * self.psi.second_derivative(v[node])
            });
            if let Some(s) = &self.surface {
                let scale = s.b[idx] * self.volume() / self.eps;
                let mean = c[..k].iter().map(|&i| v[i]).sum::<f64>() / kf;
                let r = (1.0 - mean).abs();
                let pot = if s.p == 2.0 {
                    2.0
                } else {
                    s.p * (s.p - 1.0) * r.powf(s.p - 2.0)
                };
                let de = pow_half(self.cell_sq(v, 1, c), s.p).1;
                let lap =
                    2.0 * self.edge_weight * pow_p(self.eps, s.p) * de * self.grid.dim() as f64;
                for &node in &c[..k] {
                    diag[node] += scale * (pot / (kf * kf) + lap);
                }
            }
        }
        diag
    }

    /// Hessian of [`Self::u_value`] applied to `d`.
    pub fn u_hess_vec(&self, kappa: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ne = self.edges().len();
        let m = self.m;
        let w = 2.0 * self.edge_weight;
        for (c, k) in self.corners.iter().zip(kappa.chunks_exact(ne)) {
            let (d1, d2) = if self.p == 2.0 {
                (1.0, 0.0)
            } else {
                let sq = self.weighted_sq(u, c, k);
                pow_half_second(sq, self.p)
            };
            if d1 == 0.0 && d2 == 0.0 {
                continue;
            }
            // ∇S·d with S = Σ_e κ_e |D_e u|²
            let mut sd = 0.0;
            if d2 != 0.0 {
                for (&(i, j), ke) in self.edges().iter().zip(k) {
                    for comp in 0..m {
                        let (ni, nj) = (c[i] * m + comp, c[j] * m + comp);
                        sd += w * ke * (u[nj] - u[ni]) * (d[nj] - d[ni]);
                    }
                }
            }
            for (&(i, j), ke) in self.edges().iter().zip(k) {
                for comp in 0..m {
                    let (ni, nj) = (c[i] * m + comp, c[j] * m + comp);
                    let t = w * ke * (d1 * (d[nj] - d[ni]) + d2 * sd * (u[nj] - u[ni]));
                    out[nj] += t;
                    out[ni] -= t;
                }
            }
        }
        if let Some(t) = &self.fidelity {
            let vol = self.volume();
            for (((o, x), y), di) in out.iter_mut().zip(u).zip(&t.data).zip(d) {
                let r = (x - y).abs();
                let h = if t.q == 2.0 {
                    2.0
                } else if r > 0.0 {
                    t.q * (t.q - 1.0) * r.powf(t.q - 2.0)
                } else {
                    0.0
                };
                *o += vol * h * di;
            }
        }
    }

    /// Hessian of [`Self::v_value`] applied to `d`.
    pub fn v_hess_vec(&self, beta: &[f64], v: &[f64], d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ne = self.edges().len();
        let k = self.grid.corners_per_cell();
        let kf = k as f64;
        let two_p = 2.0 / self.p;
        for (idx, (c, b)) in self.corners.iter().zip(beta.chunks_exact(ne)).enumerate() {
            if b.iter().any(|x| *x > 0.0) {
                let (d1, d2) = if self.p == 2.0 {
                    (1.0, 0.0)
                } else {
                    pow_half_second(self.bulk_in_v(v, c, b), self.p)
                };
                // per edge: gradient (gi, gj) and 2x2 Hessian of β z(ω(ψ_i, ψ_j))
                let mut td = 0.0;
                let mut local = [(0usize, 0usize, 0.0, 0.0, 0.0, 0.0, 0.0); 4];
                for (slot, (&e, be)) in local.iter_mut().zip(self.edges().iter().zip(b)) {
                    let (ni, nj) = (c[e.0], c[e.1]);
                    let (x, y) = self.ends(v, c, e);
                    let w = harmonic(x, y);
                    if *be <= 0.0 || x + y <= 0.0 || (self.p != 2.0 && w <= 0.0) {
                        *slot = (ni, nj, 0.0, 0.0, 0.0, 0.0, 0.0);
                        continue;
                    }
                    let (z1, z2) = if self.p == 2.0 {
                        (1.0, 0.0)
                    } else {
                        (
                            two_p * w.powf(two_p - 1.0),
                            two_p * (two_p - 1.0) * w.powf(two_p - 2.0),
                        )
                    };
                    let s3 = (x + y).powi(3);
                    let (wx, wy) = (
                        2.0 * y * y / ((x + y) * (x + y)),
                        2.0 * x * x / ((x + y) * (x + y)),
                    );
                    let (wxx, wyy, wxy) = (-4.0 * y * y / s3, -4.0 * x * x / s3, 4.0 * x * y / s3);
                    let (pi, pj) = (self.psi.derivative(v[ni]), self.psi.derivative(v[nj]));
                    let (qi, qj) = (
                        self.psi.second_derivative(v[ni]),
                        self.psi.second_derivative(v[nj]),
                    );
                    let gi = be * z1 * wx * pi;
                    let gj = be * z1 * wy * pj;
                    let hii = be * (z2 * (wx * pi).powi(2) + z1 * (wxx * pi * pi + wx * qi));
                    let hjj = be * (z2 * (wy * pj).powi(2) + z1 * (wyy * pj * pj + wy * qj));
                    let hij = be * (z2 * wx * wy * pi * pj + z1 * wxy * pi * pj);
                    td += gi * d[ni] + gj * d[nj];
                    *slot = (ni, nj, gi, gj, hii, hjj, hij);
                }
                for &(ni, nj, gi, gj, hii, hjj, hij) in &local[..ne] {
                    out[ni] += d1 * (hii * d[ni] + hij * d[nj]) + d2 * td * gi;
                    out[nj] += d1 * (hij * d[ni] + hjj * d[nj]) + d2 * td * gj;
                }
            }
            if let Some(s) = &self.surface {
                let scale = s.b[idx] * self.volume() / self.eps;
                let mean = c[..k].iter().map(|&i| v[i]).sum::<f64>() / kf;
                let r = (1.0 - mean).abs();
                let pot = if s.p == 2.0 {
                    2.0
                } else if r > 0.0 {
                    s.p * (s.p - 1.0) * r.powf(s.p - 2.0)
                } else {
                    0.0
                };
                let dsum: f64 = c[..k].iter().map(|&i| d[i]).sum();
                for &node in &c[..k] {
                    out[node] += scale * pot * dsum / (kf * kf);
                }
                let (g1, g2) = if s.p == 2.0 {
                    (1.0, 0.0)
                } else {
                    pow_half_second(self.cell_sq(v, 1, c), s.p)
                };
                let epsp = pow_p(self.eps, s.p);
                let w = 2.0 * self.edge_weight;
                let mut qd = 0.0;
                if g2 != 0.0 {
                    for &(i, j) in self.edges() {
                        qd += w * (v[c[j]] - v[c[i]]) * (d[c[j]] - d[c[i]]);
                    }
                }
                for &(i, j) in self.edges() {
                    let t = scale
                        * epsp
                        * w
                        * (g1 * (d[c[j]] - d[c[i]]) + g2 * qd * (v[c[j]] - v[c[i]]));
                    out[c[j]] += t;
                    out[c[i]] -= t;
                }
            }
        }
    }

    /// Gradient of [`Self::v_value`] written into `out`; returns the value.
    pub fn v_gradient(&self, beta: &[f64], v: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        let ne = self.edges().len();
        let mut value = 0.0;
        for (idx, (c, b)) in self.corners.iter().zip(beta.chunks_exact(ne)).enumerate() {
            value += self.add_bulk_v_grad(v, c, b, out);
            value += self.add_surface_grad(idx, v, c, out);
        }
        value
    }

    #[inline]
    fn surface_cell(&self, idx: usize, v: &[f64], corners: &[usize; 4]) -> f64 {
        let Some(s) = &self.surface else { return 0.0 };
        let k = self.grid.corners_per_cell();
        let mean = corners[..k].iter().map(|&i| v[i]).sum::<f64>() / k as f64;
        let grad = pow_half(self.cell_sq(v, 1, corners), s.p).0;
        s.b[idx] * self.volume() / self.eps
            * (pow_p((1.0 - mean).abs(), s.p) + pow_p(self.eps, s.p) * grad)
    }

    #[inline]
    fn add_surface_grad(
        &self,
        idx: usize,
        v: &[f64],
        corners: &[usize; 4],
        out: &mut [f64],
    ) -> f64 {
        let Some(s) = &self.surface else { return 0.0 };
        let k = self.grid.corners_per_cell();
        let scale = s.b[idx] * self.volume() / self.eps;
        let mean = corners[..k].iter().map(|&i| v[i]).sum::<f64>() / k as f64;
        let r = 1.0 - mean;
        let epsp = pow_p(self.eps, s.p);
        let (grad, dgrad) = pow_half(self.cell_sq(v, 1, corners), s.p);
        if r != 0.0 {
            let dr = -scale * s.p * r.abs().powf(s.p - 1.0) * r.signum() / k as f64;
            for &i in &corners[..k] {
                out[i] += dr;
            }
        }
        if dgrad != 0.0 {
            self.add_cell_sq_grad(v, 1, corners, scale * epsp * dgrad, out);
        }
        scale * (pow_p(r.abs(), s.p) + epsp * grad)
    }

    /// Energy parts without checking the range of `v` (ψ still clamps).
    pub fn evaluate_unchecked(&self, state: &PhaseFieldState) -> EnergyBreakdown {
        let vol = self.volume();
        let mut bulk = 0.0;
        let mut surface = 0.0;
        let mut kappa = [0.0; 4];
        for (idx, c) in self.corners.iter().enumerate() {
            for (slot, &e) in kappa.iter_mut().zip(self.edges()) {
                let (x, y) = self.ends(&state.v, c, e);
                *slot = self.edge_factor(harmonic(x, y));
            }
            let sq = self.weighted_sq(&state.u, c, &kappa);
            bulk += self.a[idx] * vol * pow_half(sq, self.p).0;
            surface += self.surface_cell(idx, &state.v, c);
        }
        let fidelity = self.fidelity_value(&state.u);
        EnergyBreakdown {
            bulk,
            surface,
            fidelity,
            total: bulk + surface + fidelity,
            eps: self.eps,
        }
    }

    /// Energy parts of a state with `v ∈ [0, 1]`.
    pub fn evaluate(&self, state: &PhaseFieldState) -> Result<EnergyBreakdown> {
        self.check_state(state)?;
        Ok(self.evaluate_unchecked(state))
    }

    /// `penalty · bulk + surface + fidelity`.
    pub fn objective(&self, parts: &EnergyBreakdown) -> f64 {
        self.penalty * parts.bulk + parts.surface + parts.fidelity
    }

    fn check_state(&self, state: &PhaseFieldState) -> Result<()> {
        state.check_size(&self.grid)?;
        if state.m != self.m {
            return invalid(format!(
                "state has m = {}, model expects {}",
                state.m, self.m
            ));
        }
        if state.u.iter().chain(&state.v).any(|x| !x.is_finite()) {
            return invalid("state has non-finite entries");
        }
        if state
            .v
            .iter()
            .any(|&v| !(-V_TOL..=1.0 + V_TOL).contains(&v))
        {
            return invalid("v outside [0, 1]; clamp before evaluating");
        }
        Ok(())
    }

    /// Gradient of the objective in `(u, v)`; entries flagged in `fixed`
    /// (per node) are zeroed.
    pub fn gradient(
        &self,
        state: &PhaseFieldState,
        fixed: Option<&[bool]>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state(state)?;
        let kappa = self.cell_weights(&state.v);
        let mut gu = vec![0.0; state.u.len()];
        self.u_gradient(&kappa, &state.u, &mut gu);
        let mut gv = vec![0.0; state.v.len()];
        if self.has_surface() {
            let beta = self.bulk_densities(&state.u);
            self.v_gradient(&beta, &state.v, &mut gv);
        } else {
            // v is still differentiable through the bulk weight.
            let beta = self.bulk_densities(&state.u);
            let ne = self.edges().len();
            for (c, b) in self.corners.iter().zip(beta.chunks_exact(ne)) {
                self.add_bulk_v_grad(&state.v, c, b, &mut gv);
            }
        }
        if let Some(mask) = fixed {
            for (node, &f) in mask.iter().enumerate() {
                if f {
                    gv[node] = 0.0;
                    gu[node * self.m..(node + 1) * self.m]
                        .iter_mut()
                        .for_each(|g| *g = 0.0);
                }
            }
        }
        Ok((gu, gv))
    }
}

/// Bulk and surface energy of a state.
pub fn evaluate_energy(
    grid: &Grid,
    f: &BulkIntegrand,
    g: &SurfaceIntegrand,
    psi: &PsiFunction,
    eps: f64,
    state: &PhaseFieldState,
) -> Result<EnergyBreakdown> {
    EnergyModel::new(grid, state.m, f, g, psi, eps)?.evaluate(state)
}

/// Exact gradient of `bulk + surface`; nodes flagged in `fixed` get zero.
pub fn energy_gradient(
    grid: &Grid,
    f: &BulkIntegrand,
    g: &SurfaceIntegrand,
    psi: &PsiFunction,
    eps: f64,
    state: &PhaseFieldState,
    fixed: Option<&[bool]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    EnergyModel::new(grid, state.m, f, g, psi, eps)?.gradient(state, fixed)
}
