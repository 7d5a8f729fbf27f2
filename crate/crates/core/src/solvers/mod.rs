//! Alternating minimisation of the discrete energy and the 1D transition
//! profile solver.

mod inner;
mod profile;

pub use inner::{
    kkt_residual, InnerOptions, InnerRegistry, InnerReport, InnerSolver, Pcg, Quadratic,
    SpectralGradient, SubProblem,
};
pub use profile::profile_1d_value;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{BoundaryMask, Grid, PhaseFieldState};
use crate::energy::{EnergyBreakdown, EnergyModel};
use crate::error::{invalid, Result};
use crate::integrands::{BulkIntegrand, PsiFunction, SurfaceIntegrand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Relative energy decrease below which the outer loop may stop.
    pub tol_energy: f64,
    /// Bound on the largest diagonal-Newton step `|g_i| / H_ii` (see
    /// [`kkt_residual`]).
    pub tol_grad: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub linear_tol: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub seed: u64,
    pub restarts: usize,
    /// Inner solver for `u` (`auto`: `pcg` when quadratic, else `armijo-descent`).
    pub u_solver: String,
    /// Inner solver for `v` (`auto`: `projected-newton`).
    pub v_solver: String,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_energy: 1e-8,
            tol_grad: 1e-7,
            max_outer: 500,
            max_inner: 2000,
            linear_tol: 1e-10,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            seed: 0,
            restarts: 1,
            u_solver: "auto".into(),
            v_solver: "auto".into(),
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.tol_energy,
            self.tol_grad,
            self.linear_tol,
            self.armijo_c,
        ];
        if positive.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return invalid("solver tolerances must be positive");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) || self.armijo_c >= 1.0 {
            return invalid("armijo parameters must lie in (0, 1)");
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.restarts == 0 {
            return invalid("iteration limits and restarts must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Objective after every outer iteration of the best restart.
    pub energy_trace: Vec<f64>,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub wall_time: f64,
    pub best_restart: usize,
    pub u_solver: String,
    pub v_solver: String,
}

impl SolveDiagnostics {
    /// Largest increase between consecutive trace entries (≤ 0 if monotone).
    pub fn max_increase(&self) -> f64 {
        self.energy_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Which unknowns the alternating loop updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unknowns {
    /// `u` only, `v` frozen at its initial value.
    U,
    /// Both fields.
    Both,
}

struct USub<'a> {
    model: &'a EnergyModel,
    kappa: Vec<f64>,
    free: Vec<bool>,
}

impl Quadratic for USub<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.model.quadratic_apply(&self.kappa, x, out);
    }
    fn diagonal(&self) -> Vec<f64> {
        self.model.quadratic_diagonal(&self.kappa)
    }
    fn rhs(&self) -> Vec<f64> {
        self.model.quadratic_rhs()
    }
}

impl SubProblem for USub<'_> {
    fn len(&self) -> usize {
        self.free.len()
    }
    fn free(&self) -> &[bool] {
        &self.free
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.model.u_value(&self.kappa, x)
    }
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.model.u_gradient(&self.kappa, x, grad)
    }
    fn scaling(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.model.u_diagonal(&self.kappa, x))
    }
    fn hess_vec(&self, x: &[f64], d: &[f64], out: &mut [f64]) -> bool {
        self.model.u_hess_vec(&self.kappa, x, d, out);
        true
    }
    fn quadratic(&self) -> Option<&dyn Quadratic> {
        if self.model.u_is_quadratic() {
            Some(self)
        } else {
            None
        }
    }
    fn density(&self) -> f64 {
        self.model.grid().cell_volume()
    }
}

struct VSub<'a> {
    model: &'a EnergyModel,
    beta: Vec<f64>,
    free: Vec<bool>,
}

impl SubProblem for VSub<'_> {
    fn len(&self) -> usize {
        self.free.len()
    }
    fn free(&self) -> &[bool] {
        &self.free
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.model.v_value(&self.beta, x)
    }
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.model.v_gradient(&self.beta, x, grad)
    }
    fn bounds(&self) -> Option<(f64, f64)> {
        Some((0.0, 1.0))
    }
    fn scaling(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.model.v_diagonal(&self.beta, x))
    }
    fn hess_vec(&self, x: &[f64], d: &[f64], out: &mut [f64]) -> bool {
        self.model.v_hess_vec(&self.beta, x, d, out);
        true
    }
    fn density(&self) -> f64 {
        self.model.grid().cell_volume()
    }
}

/// Solves for the minimiser of `model`'s objective by alternating `u`- and
/// `v`-steps. Nodes flagged in `fixed` keep the values of `datum`.
pub struct AlternatingSolver<'a> {
    model: &'a EnergyModel,
    fixed: &'a [bool],
    unknowns: Unknowns,
    opts: SolveOptions,
    registry: InnerRegistry,
}

impl<'a> AlternatingSolver<'a> {
    pub fn new(
        model: &'a EnergyModel,
        fixed: &'a [bool],
        unknowns: Unknowns,
        opts: &SolveOptions,
    ) -> Result<Self> {
        opts.validate()?;
        if fixed.len() != model.grid().node_count() {
            return invalid("boundary mask does not match the grid");
        }
        if unknowns == Unknowns::Both && !model.has_surface() {
            return invalid("v cannot be solved for without a surface term");
        }
        Ok(Self {
            model,
            fixed,
            unknowns,
            opts: opts.clone(),
            registry: InnerRegistry::builtin(),
        })
    }

    pub fn with_registry(mut self, registry: InnerRegistry) -> Self {
        self.registry = registry;
        self
    }

    fn u_solver(&self) -> Result<std::sync::Arc<dyn InnerSolver>> {
        match self.opts.u_solver.as_str() {
            "auto" if self.model.u_is_quadratic() => self.registry.get("pcg"),
            "auto" => self.registry.get("armijo-descent"),
            name => self.registry.get(name),
        }
    }

    fn v_solver(&self) -> Result<std::sync::Arc<dyn InnerSolver>> {
        match self.opts.v_solver.as_str() {
            "auto" => self.registry.get("projected-newton"),
            name => self.registry.get(name),
        }
    }

    /// Best result over the configured restarts.
    pub fn solve(
        &self,
        datum: &PhaseFieldState,
        init: &PhaseFieldState,
    ) -> Result<(PhaseFieldState, EnergyBreakdown, SolveDiagnostics)> {
        let start = Instant::now();
        let grid = self.model.grid();
        datum.check_size(grid)?;
        init.check_size(grid)?;
        if datum.m != self.model.components() || init.m != datum.m {
            return invalid("state components do not match the energy model");
        }
        let restarts = if self.unknowns == Unknowns::Both {
            self.opts.restarts
        } else {
            1
        };
        let mut best: Option<(PhaseFieldState, EnergyBreakdown, SolveDiagnostics)> = None;
        for r in 0..restarts {
            let mut state = init.clone();
            if r > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
                rng.set_stream(r as u64);
                for v in state.v.iter_mut() {
                    *v += rng.gen_range(-0.1..0.1);
                }
            }
            let (state, parts, mut diag) = self.run(datum, state)?;
            diag.best_restart = r;
            let better = match &best {
                None => true,
                Some((_, b, _)) => self.model.objective(&parts) < self.model.objective(b),
            };
            if better {
                best = Some((state, parts, diag));
            }
        }
        let (state, parts, mut diag) = best.expect("at least one restart");
        diag.wall_time = start.elapsed().as_secs_f64();
        Ok((state, parts, diag))
    }

    fn impose(&self, datum: &PhaseFieldState, state: &mut PhaseFieldState) {
        let m = datum.m;
        for (node, &f) in self.fixed.iter().enumerate() {
            if f {
                state.v[node] = datum.v[node];
                state.u[node * m..(node + 1) * m]
                    .copy_from_slice(&datum.u[node * m..(node + 1) * m]);
            }
        }
        state.clamp_v();
    }

    fn inner_options(&self, grad_tol: f64) -> InnerOptions {
        InnerOptions {
            max_iter: self.opts.max_inner,
            grad_tol,
            linear_tol: self.opts.linear_tol,
            armijo_c: self.opts.armijo_c,
            armijo_shrink: self.opts.armijo_shrink,
        }
    }

    /// KKT residual of the full objective in both fields.
    fn grad_norm(&self, state: &PhaseFieldState) -> f64 {
        let m = self.model.components();
        let u_free: Vec<bool> = self
            .fixed
            .iter()
            .flat_map(|&f| std::iter::repeat_n(!f, m))
            .collect();
        let usub = USub {
            model: self.model,
            kappa: self.model.cell_weights(&state.v),
            free: u_free,
        };
        let mut gu = vec![0.0; state.u.len()];
        usub.value_grad(&state.u, &mut gu);
        let mut norm = kkt_residual(&usub, &state.u, &gu);
        if self.unknowns == Unknowns::Both {
            let vsub = VSub {
                model: self.model,
                beta: self.model.bulk_densities(&state.u),
                free: self.fixed.iter().map(|f| !f).collect(),
            };
            let mut gv = vec![0.0; state.v.len()];
            vsub.value_grad(&state.v, &mut gv);
            norm = norm.max(kkt_residual(&vsub, &state.v, &gv));
        }
        norm
    }

    fn run(
        &self,
        datum: &PhaseFieldState,
        mut state: PhaseFieldState,
    ) -> Result<(PhaseFieldState, EnergyBreakdown, SolveDiagnostics)> {
        let start = Instant::now();
        let model = self.model;
        let m = model.components();
        let u_solver = self.u_solver()?;
        let v_solver = if self.unknowns == Unknowns::Both {
            Some(self.v_solver()?)
        } else {
            None
        };
        self.impose(datum, &mut state);
        let u_free: Vec<bool> = self
            .fixed
            .iter()
            .flat_map(|&f| std::iter::repeat_n(!f, m))
            .collect();
        let v_free: Vec<bool> = self.fixed.iter().map(|f| !f).collect();

        let mut energy = model.objective(&model.evaluate_unchecked(&state));
        let mut trace = vec![energy];
        let mut inner_total = 0;
        let mut converged = false;
        let mut grad_norm = f64::INFINITY;
        let mut outer = 0;
        while outer < self.opts.max_outer {
            outer += 1;
            let inner_opts = self.inner_options(0.1 * self.opts.tol_grad);

            let usub = USub {
                model,
                kappa: model.cell_weights(&state.v),
                free: u_free.clone(),
            };
            let mut u = state.u.clone();
            let rep = u_solver.minimize(&usub, &mut u, &inner_opts)?;
            log::trace!(
                "u-step: {} iterations, converged {}",
                rep.iterations,
                rep.converged
            );
            inner_total += rep.iterations;
            if rep.value <= usub.value(&state.u) {
                state.u = u;
            }

            if let Some(vs) = &v_solver {
                let vsub = VSub {
                    model,
                    beta: model.bulk_densities(&state.u),
                    free: v_free.clone(),
                };
                let mut v = state.v.clone();
                let rep = vs.minimize(&vsub, &mut v, &inner_opts)?;
                log::trace!(
                    "v-step: {} iterations, converged {}",
                    rep.iterations,
                    rep.converged
                );
                inner_total += rep.iterations;
                if rep.value <= vsub.value(&state.v) {
                    state.v = v;
                }
            }

            let new_energy = model.objective(&model.evaluate_unchecked(&state));
            let decrease = energy - new_energy;
            energy = new_energy;
            trace.push(new_energy);
            grad_norm = self.grad_norm(&state);
            log::debug!(
                "outer {outer}: objective {new_energy:.10e}, kkt {grad_norm:.3e}, inner {inner_total}, {:.2} s",
                start.elapsed().as_secs_f64()
            );
            let small_change =
                decrease.abs() <= self.opts.tol_energy * new_energy.abs().max(1e-300);
            if grad_norm <= self.opts.tol_grad && (small_change || self.unknowns == Unknowns::U) {
                converged = true;
                break;
            }
            if self.unknowns == Unknowns::U && small_change {
                // v frozen: one more u-step cannot help
                break;
            }
        }
        if !converged {
            log::debug!("alternating minimisation stopped after {outer} outer iterations");
        }
        let parts = model.evaluate_unchecked(&state);
        let diag = SolveDiagnostics {
            outer_iterations: outer,
            inner_iterations: inner_total,
            energy_trace: trace,
            final_grad_norm: grad_norm,
            converged,
            wall_time: 0.0,
            best_restart: 0,
            u_solver: u_solver.name().to_string(),
            v_solver: v_solver.map_or_else(|| "none".to_string(), |s| s.name().to_string()),
        };
        Ok((state, parts, diag))
    }
}

/// Minimises `bulk + surface` over `(u, v)` with the datum imposed on the
/// nodes of `mask` selected by its mode.
#[allow(clippy::too_many_arguments)]
pub fn alternating_minimize(
    grid: &Grid,
    f: &BulkIntegrand,
    g: &SurfaceIntegrand,
    psi: &PsiFunction,
    eps: f64,
    boundary: (&PhaseFieldState, &BoundaryMask),
    init: &PhaseFieldState,
    opts: &SolveOptions,
) -> Result<(PhaseFieldState, EnergyBreakdown, SolveDiagnostics)> {
    let (datum, mask) = boundary;
    let model = EnergyModel::new(grid, datum.m, f, g, psi, eps)?;
    let fixed = mask.fixed();
    if init.v.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return invalid("initial v must lie in [0, 1]");
    }
    AlternatingSolver::new(&model, &fixed, Unknowns::Both, opts)?.solve(datum, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{affine_datum, build_cube_grid, jump_datum, BoundaryMode};

    #[test]
    fn zero_datum_gives_zero_energy() {
        let (grid, mask) = build_cube_grid(
            &[0.0, 0.0],
            1.0,
            &[0.0, 1.0],
            1.0 / 16.0,
            Some(0.25),
            BoundaryMode::Dirichlet,
        )
        .unwrap();
        let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
        let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
        let datum = affine_datum(&grid, &[0.0, 0.0], 1).unwrap();
        let (st, parts, diag) = alternating_minimize(
            &grid,
            &f,
            &g,
            &PsiFunction::default(),
            0.25,
            (&datum, &mask),
            &datum,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(parts.total, 0.0);
        assert!(st.u.iter().all(|u| *u == 0.0) && st.v.iter().all(|v| *v == 1.0));
        assert!(diag.converged);
    }

    #[test]
    fn step_datum_is_monotone_and_bounded() {
        let eps = 1.0 / 8.0;
        let (grid, mask) = build_cube_grid(
            &[0.0, 0.0],
            1.0,
            &[0.0, 1.0],
            eps / 4.0,
            Some(eps),
            BoundaryMode::Dirichlet,
        )
        .unwrap();
        let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
        let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
        let datum = jump_datum(&grid, &[0.0, 0.0], &[0.0, 1.0], eps, &[1.0]).unwrap();
        let opts = SolveOptions {
            restarts: 2,
            ..SolveOptions::default()
        };
        let (st, parts, diag) = alternating_minimize(
            &grid,
            &f,
            &g,
            &PsiFunction::default(),
            eps,
            (&datum, &mask),
            &datum,
            &opts,
        )
        .unwrap();
        assert!(diag.max_increase() <= 1e-12);
        assert!(st.v.iter().all(|v| (0.0..=1.0).contains(v)));
        let fixed = mask.fixed();
        for (i, &b) in fixed.iter().enumerate() {
            if b {
                assert_eq!(st.u[i].to_bits(), datum.u[i].to_bits());
                assert_eq!(st.v[i].to_bits(), datum.v[i].to_bits());
            }
        }
        assert!(parts.total <= diag.energy_trace[0]);
    }

    #[test]
    fn options_round_trip_and_validate() {
        let json = r#"{"tol_grad": 1e-6, "restarts": 3}"#;
        let o: SolveOptions = serde_json::from_str(json).unwrap();
        assert_eq!(o.restarts, 3);
        assert_eq!(o.max_outer, 500);
        assert!(serde_json::from_str::<SolveOptions>(r#"{"tolgrad": 1}"#).is_err());
        assert!(SolveOptions { tol_grad: 0.0, ..o }.validate().is_err());
    }
}
