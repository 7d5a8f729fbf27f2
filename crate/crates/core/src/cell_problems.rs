//! Finite-scale bulk and surface cell values.

use serde::{Deserialize, Serialize};

use crate::discretization::{
    affine_datum, build_cube_grid, check_layer_resolution, jump_datum, BoundaryMode, Grid,
    PhaseFieldState,
};
use crate::energy::EnergyModel;
use crate::error::{config, invalid, Result};
use crate::integrands::{BulkIntegrand, PsiFunction, SurfaceIntegrand};
use crate::solvers::{AlternatingSolver, SolveDiagnostics, SolveOptions, Unknowns};

/// Default penalty ladder for the surface constraint.
pub const DEFAULT_LADDER: [f64; 5] = [10.0, 40.0, 160.0, 640.0, 2560.0];

/// One rung of the penalty ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderRung {
    pub lambda: f64,
    /// Surface energy of the penalised minimiser.
    pub value: f64,
    /// Bulk energy of the penalised minimiser (zero iff `v ∇u = 0` holds).
    pub residual: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub value: f64,
    /// `value / ρ^n` (bulk) or `value / ρ^{n-1}` (surface).
    pub normalised: f64,
    pub rho: f64,
    pub h: f64,
    pub eps: Option<f64>,
    pub state: PhaseFieldState,
    pub diagnostics: SolveDiagnostics,
    pub ladder: Vec<LadderRung>,
    /// Normalised surface limit `λ → ∞` from the last two rungs, assuming
    /// `value(λ) = V - C/λ`.
    pub extrapolated: Option<f64>,
}

impl CellResult {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged && self.ladder.iter().all(|r| r.converged)
    }

    /// Surface values non-decreasing along the ladder (relative slack `tol`).
    pub fn ladder_value_monotone(&self, tol: f64) -> bool {
        self.ladder
            .windows(2)
            .all(|w| w[1].value >= w[0].value * (1.0 - tol))
    }

    /// Constraint residuals non-increasing along the ladder.
    pub fn ladder_residual_monotone(&self) -> bool {
        self.ladder
            .windows(2)
            .all(|w| w[1].residual <= w[0].residual * (1.0 + 1e-9) + 1e-15)
    }
}

fn unit_normal(n: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[n - 1] = 1.0;
    e
}

/// Starting point for the surface ladder: `u` jumps across a single cell
/// row and `v` vanishes only on the nodes nearest the crack plane, rising
/// like `1 - exp(-|s|/eps)`. Starting from the datum itself leaves a zero
/// band of width `eps` that alternating steps cannot thin out.
fn sharp_start(grid: &Grid, datum: &PhaseFieldState, zeta: &[f64], eps: f64) -> PhaseFieldState {
    let h = grid.spacing();
    let m = zeta.len();
    let mut state = datum.clone();
    for node in 0..grid.node_count() {
        let s = grid.normal_coordinate(node);
        let ramp = (s / h + 0.5).clamp(0.0, 1.0);
        for c in 0..m {
            state.u[node * m + c] = ramp * zeta[c];
        }
        state.v[node] = 1.0 - (-(s.abs() - 0.5 * h).max(0.0) / eps).exp();
        if s.abs() < 0.5 * h {
            state.v[node] = 0.0;
        }
    }
    state
}

fn warn_if_misaligned(period: Option<f64>, rho: f64) {
    if let Some(per) = period {
        let ratio = rho / per;
        if (ratio - ratio.round()).abs() > 1e-9 {
            log::warn!("cube side {rho} is not a multiple of the coefficient period {per}");
        }
    }
}

/// `min { ∫_Q f(x, ∇u) : u = u_ξ near ∂Q }` on `Q = Q_ρ(x)` with `v ≡ 1`.
pub fn bulk_cell_value(
    f: &BulkIntegrand,
    xi: &[f64],
    x: &[f64],
    rho: f64,
    h: f64,
    opts: &SolveOptions,
) -> Result<CellResult> {
    let n = x.len();
    if n == 0 || !xi.len().is_multiple_of(n) || xi.is_empty() {
        return invalid("xi must be an m×n matrix matching the dimension of x");
    }
    let m = xi.len() / n;
    warn_if_misaligned(f.field().period(), rho);
    let (grid, mask) = build_cube_grid(x, rho, &unit_normal(n), h, None, BoundaryMode::Dirichlet)?;
    let datum = affine_datum(&grid, xi, m)?;
    let model = EnergyModel::bulk_only(&grid, m, f)?;
    let fixed = mask.fixed();
    let (state, parts, diagnostics) =
        AlternatingSolver::new(&model, &fixed, Unknowns::U, opts)?.solve(&datum, &datum)?;
    Ok(CellResult {
        value: parts.bulk,
        normalised: parts.bulk / rho.powi(n as i32),
        rho,
        h: grid.spacing(),
        eps: None,
        state,
        diagnostics,
        ladder: Vec::new(),
        extrapolated: None,
    })
}

/// Geometry and boundary mode of a surface cell problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub nu: Vec<f64>,
    pub x: Vec<f64>,
    /// Side lengths; the last is measured along `ν`.
    pub extents: Vec<f64>,
    pub eps: f64,
    pub h: f64,
    pub mode: BoundaryMode,
}

impl SurfaceCell {
    pub fn cube(nu: &[f64], x: &[f64], rho: f64, eps: f64, h: f64, mode: BoundaryMode) -> Self {
        Self {
            nu: nu.to_vec(),
            x: x.to_vec(),
            extents: vec![rho; nu.len()],
            eps,
            h,
            mode,
        }
    }

    /// `(n-1)`-dimensional measure of the cross-section orthogonal to `ν`.
    pub fn cross_section(&self) -> f64 {
        self.extents[..self.extents.len() - 1].iter().product()
    }
}

/// Penalised minimisation of `𝓕^s` over pairs attaining the jump datum near
/// the boundary, for each penalty in `ladder` (warm-started rung to rung).
pub fn surface_cell_problem(
    g: &SurfaceIntegrand,
    f: &BulkIntegrand,
    psi: &PsiFunction,
    cell: &SurfaceCell,
    ladder: &[f64],
    opts: &SolveOptions,
) -> Result<CellResult> {
    let n = cell.nu.len();
    let across = cell.extents[n - 1];
    if across <= 2.0 * cell.eps {
        return config(format!(
            "cube side {across} must exceed 2*eps = {} along the normal",
            2.0 * cell.eps
        ));
    }
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 0.0 {
        return invalid("penalty ladder must be positive and strictly increasing");
    }
    let (grid, mask) = crate::discretization::build_box_grid(
        &cell.x,
        &cell.extents,
        &cell.nu,
        cell.h,
        Some(cell.eps),
        cell.mode,
    )?;
    check_layer_resolution(grid.spacing(), cell.eps)?;
    warn_if_misaligned(g.field().period(), across);
    let datum = jump_datum(&grid, &cell.x, &cell.nu, cell.eps, &[1.0])?;
    let fixed = mask.fixed();
    let base = EnergyModel::new(&grid, 1, f, g, psi, cell.eps)?;
    let mut state = sharp_start(&grid, &datum, &[1.0], cell.eps);
    let mut rungs = Vec::with_capacity(ladder.len());
    let mut last = None;
    for &lambda in ladder {
        let model = base.clone().with_penalty(lambda)?;
        let (next, parts, diag) =
            AlternatingSolver::new(&model, &fixed, Unknowns::Both, opts)?.solve(&datum, &state)?;
        state = next;
        rungs.push(LadderRung {
            lambda,
            value: parts.surface,
            residual: parts.bulk,
            outer_iterations: diag.outer_iterations,
            converged: diag.converged,
        });
        last = Some(diag);
    }
    let mut diagnostics = last.expect("non-empty ladder");
    diagnostics.outer_iterations = rungs.iter().map(|r| r.outer_iterations).sum();
    diagnostics.converged = rungs.iter().all(|r| r.converged);
    let section = cell.cross_section();
    let top = rungs.last().expect("non-empty ladder");
    let extrapolated = (rungs.len() >= 2).then(|| {
        let a = &rungs[rungs.len() - 2];
        (top.lambda * top.value - a.lambda * a.value) / (top.lambda - a.lambda) / section
    });
    Ok(CellResult {
        value: top.value,
        normalised: top.value / section,
        rho: across,
        h: grid.spacing(),
        eps: Some(cell.eps),
        state,
        diagnostics,
        ladder: rungs,
        extrapolated,
    })
}

/// Surface cell value on the cube `Q^ν_ρ(x)`; see [`surface_cell_problem`].
#[allow(clippy::too_many_arguments)]
pub fn surface_cell_value(
    g: &SurfaceIntegrand,
    f: &BulkIntegrand,
    psi: &PsiFunction,
    nu: &[f64],
    x: &[f64],
    rho: f64,
    eps: f64,
    h: f64,
    mode: BoundaryMode,
    ladder: &[f64],
    opts: &SolveOptions,
) -> Result<CellResult> {
    let cell = SurfaceCell::cube(nu, x, rho, eps, h, mode);
    surface_cell_problem(g, f, psi, &cell, ladder, opts)
}

/// Bulk energy `∫ ψ(v) f(x, ∇u)` of a state: zero iff the discrete
/// constraint `v ∇u = 0` holds in every cell.
pub fn constraint_residual(
    grid: &Grid,
    f: &BulkIntegrand,
    psi: &PsiFunction,
    state: &PhaseFieldState,
) -> Result<f64> {
    let model = EnergyModel::bulk_only(grid, state.m, f)?.with_psi(psi)?;
    Ok(model.evaluate(state)?.bulk)
}

/// `∫ ((1 - v)^p + |v'|^p) dt` for the piecewise-linear transition profile
/// `v(t) = clamp(2|t| - 1, 0, 1)`.
pub fn profile_constant(p: f64) -> f64 {
    1.0 + 1.0 / (p + 1.0) + 2f64.powf(p)
}

/// Optimal one-dimensional transition cost `2 (p - 1)^{(1-p)/p}`.
pub fn c_p(p: f64) -> f64 {
    2.0 * (p - 1.0).powf((1.0 - p) / p)
}
