//! Regularised minimisation with an `L^q` data term, and an exact 1D
//! Mumford–Shah oracle for `p = q = 2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{check_layer_resolution, Grid, PhaseFieldState};
use crate::energy::{EnergyModel, FidelityTerm};
use crate::error::{config, invalid, unsupported, Result};
use crate::integrands::{BulkIntegrand, PsiFunction, SurfaceIntegrand};
use crate::solvers::{AlternatingSolver, SolveOptions, Unknowns};

/// Data sampled on the nodes of a uniform grid over `A = Π [0, L_k]`.
#[derive(Debug, Clone)]
pub struct FidelityProblem {
    /// Nodal samples, first axis fastest.
    pub data: Vec<f64>,
    /// Side lengths of `A`; one entry per dimension (1 or 2).
    pub extents: Vec<f64>,
    pub q: f64,
    /// Strictly decreasing.
    pub eps_list: Vec<f64>,
    pub f: BulkIntegrand,
    pub g: SurfaceIntegrand,
    pub psi: PsiFunction,
    pub opts: SolveOptions,
}

/// Common data presets on `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `1_{x > 1/2}`.
    Step,
    /// `x`.
    Ramp,
    /// `0` on `(0, 1/3]`, `1` on `(1/3, 2/3]`, `2` beyond.
    TwoStep,
}

impl Preset {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Preset::Step => f64::from(u8::from(x > 0.5)),
            Preset::Ramp => x,
            Preset::TwoStep => {
                f64::from(u8::from(x > 1.0 / 3.0)) + f64::from(u8::from(x > 2.0 / 3.0))
            }
        }
    }

    /// Samples on `nodes` equispaced nodes of `[0, 1]`.
    pub fn sample(self, nodes: usize) -> Vec<f64> {
        let h = 1.0 / (nodes - 1) as f64;
        (0..nodes).map(|i| self.eval(i as f64 * h)).collect()
    }
}

impl FidelityProblem {
    fn grid(&self) -> Result<Grid> {
        let n = self.extents.len();
        if n == 0 || n > 2 {
            return invalid("fidelity domain must be 1D or 2D");
        }
        let h = match n {
            1 => {
                if self.data.len() < 2 {
                    return invalid("need at least 2 samples");
                }
                self.extents[0] / (self.data.len() - 1) as f64
            }
            _ => {
                // Square spacing: solve N = (L0/h + 1)(L1/h + 1) for h.
                let (a, b) = (self.extents[0], self.extents[1]);
                let k = self.data.len() as f64;
                let disc = (a + b).powi(2) + 4.0 * (k - 1.0) * a * b;
                2.0 * a * b / (disc.sqrt() - (a + b))
            }
        };
        let center: Vec<f64> = self.extents.iter().map(|l| 0.5 * l).collect();
        let nu: Vec<f64> = (0..n).map(|k| f64::from(u8::from(k == n - 1))).collect();
        let grid = Grid::new(&center, &self.extents, &nu, h)?;
        if grid.node_count() != self.data.len() {
            return invalid(format!(
                "{} samples do not fill a uniform grid on {:?}",
                self.data.len(),
                self.extents
            ));
        }
        Ok(grid)
    }

    fn validate(&self) -> Result<Grid> {
        if !(self.q.is_finite() && self.q >= 1.0) {
            return invalid("fidelity exponent q must be >= 1");
        }
        if self.eps_list.is_empty() || self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("eps list must be non-empty and strictly decreasing");
        }
        if self.data.iter().any(|d| !d.is_finite()) {
            return invalid("data must be finite");
        }
        let grid = self.grid()?;
        let smallest = *self.eps_list.last().expect("non-empty");
        check_layer_resolution(grid.spacing(), smallest)?;
        Ok(grid)
    }
}

/// Minimiser and value at one `ε`.
#[derive(Debug, Clone)]
pub struct FidelityLevel {
    pub eps: f64,
    /// `𝓕_ε(u, v) + Σ h^n |u - data|^q` at the computed minimiser.
    pub value: f64,
    /// `Σ h^n |1 - v|^p`.
    pub v_deviation: f64,
    pub state: PhaseFieldState,
    pub converged: bool,
}

/// Minimises `𝓕_ε + fidelity` with free boundary for each `ε`, starting
/// from `(u, v) = (data, 1)`.
pub fn at_fidelity_minimize(problem: &FidelityProblem) -> Result<Vec<FidelityLevel>> {
    let grid = problem.validate()?;
    let nodes = grid.node_count();
    let fixed = vec![false; nodes];
    let p = problem.g.p();
    let vol = grid.cell_volume();
    problem
        .eps_list
        .par_iter()
        .map(|&eps| {
            let model = EnergyModel::new(&grid, 1, &problem.f, &problem.g, &problem.psi, eps)?
                .with_fidelity(FidelityTerm {
                    data: problem.data.clone(),
                    q: problem.q,
                })?;
            let init = PhaseFieldState {
                m: 1,
                u: problem.data.clone(),
                v: vec![1.0; nodes],
            };
            let (state, parts, diag) =
                AlternatingSolver::new(&model, &fixed, Unknowns::Both, &problem.opts)?
                    .solve(&init, &init)?;
            let v_deviation = vol * state.v.iter().map(|v| (1.0 - v).abs().powf(p)).sum::<f64>();
            Ok(FidelityLevel {
                eps,
                value: model.objective(&parts),
                v_deviation,
                state,
                converged: diag.converged,
            })
        })
        .collect()
}

/// Exact discrete minimiser of the 1D Mumford–Shah functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSolution {
    pub value: f64,
    /// `i` in the list means a jump between nodes `i` and `i + 1`.
    pub jumps: Vec<usize>,
    pub u: Vec<f64>,
}

/// `α Σ (u_{k+1} - u_k)² / h + β #jumps + h Σ (u_k - d_k)²` on `N` nodes
/// of `[0, 1]` (`h = 1/(N-1)`), the sums running inside segments.
#[derive(Debug, Clone, Copy)]
struct Ms1d {
    h: f64,
    alpha: f64,
    beta: f64,
}

impl Ms1d {
    fn new(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        if n < 2 {
            return invalid("need at least 2 samples");
        }
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta >= 0.0) {
            return invalid("alpha must be positive and beta non-negative");
        }
        Ok(Self {
            h: 1.0 / (n - 1) as f64,
            alpha,
            beta,
        })
    }

    /// Thomas solve of `(α/h) L u + h (u - d) = 0` on one segment.
    fn solve_segment(&self, d: &[f64]) -> Vec<f64> {
        let k = d.len();
        let w = self.alpha / self.h;
        let diag = |i: usize| {
            let links = usize::from(i > 0) + usize::from(i + 1 < k);
            self.h + w * links as f64
        };
        let mut c = vec![0.0; k];
        let mut y = vec![0.0; k];
        let mut denom = diag(0);
        c[0] = -w / denom;
        y[0] = self.h * d[0] / denom;
        for i in 1..k {
            denom = diag(i) + w * c[i - 1];
            c[i] = -w / denom;
            y[i] = (self.h * d[i] + w * y[i - 1]) / denom;
        }
        for i in (0..k - 1).rev() {
            y[i] -= c[i] * y[i + 1];
        }
        y
    }

    fn evaluate(&self, d: &[f64], jumps: &[usize]) -> (f64, Vec<f64>) {
        let mut u = Vec::with_capacity(d.len());
        let mut start = 0;
        for end in jumps.iter().map(|j| j + 1).chain([d.len()]) {
            u.extend(self.solve_segment(&d[start..end]));
            start = end;
        }
        let mut value = self.beta * jumps.len() as f64;
        value += self.h * u.iter().zip(d).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let mut cut = jumps.iter().peekable();
        for i in 0..d.len() - 1 {
            if cut.peek() == Some(&&i) {
                cut.next();
                continue;
            }
            value += self.alpha * (u[i + 1] - u[i]).powi(2) / self.h;
        }
        (value, u)
    }

    fn solution(&self, d: &[f64], jumps: Vec<usize>) -> MsSolution {
        let (value, u) = self.evaluate(d, &jumps);
        MsSolution { value, jumps, u }
    }
}

fn check_exponents(p: f64, q: f64) -> Result<()> {
    if p != 2.0 || q != 2.0 {
        return unsupported(format!(
            "the exact oracle needs p = q = 2 (got p = {p}, q = {q})"
        ));
    }
    Ok(())
}

/// Dynamic program over the position of the last jump. For a fixed segment
/// start, the minimum over the segment as a function of its last value is a
/// quadratic that is updated in O(1) per added node, so all segment costs
/// take O(N²) overall.
pub fn ms1d_dp_oracle(data: &[f64], p: f64, q: f64, alpha: f64, beta: f64) -> Result<MsSolution> {
    check_exponents(p, q)?;
    let n = data.len();
    if n > 2000 {
        return config(format!("oracle supports at most 2000 nodes, got {n}"));
    }
    if data.iter().any(|d| !d.is_finite()) {
        return invalid("data must be finite");
    }
    let ms = Ms1d::new(n, alpha, beta)?;
    let w = alpha / ms.h;
    // best[j]: optimum on nodes 0..j (exclusive); from[j]: start of its last segment.
    let mut best = vec![f64::INFINITY; n + 1];
    let mut from = vec![0usize; n + 1];
    best[0] = 0.0;
    for i in 0..n {
        let offset = best[i] + if i > 0 { beta } else { 0.0 };
        let (mut a, mut b, mut c) = (ms.h, -2.0 * ms.h * data[i], ms.h * data[i] * data[i]);
        for j in i..n {
            if j > i {
                let s = a + w;
                let (na, nb, nc) = (a * w / s, b * w / s, c - b * b / (4.0 * s));
                a = na + ms.h;
                b = nb - 2.0 * ms.h * data[j];
                c = nc + ms.h * data[j] * data[j];
            }
            let seg = c - b * b / (4.0 * a);
            if offset + seg < best[j + 1] {
                best[j + 1] = offset + seg;
                from[j + 1] = i;
            }
        }
    }
    let mut jumps = Vec::new();
    let mut end = n;
    while from[end] > 0 {
        jumps.push(from[end] - 1);
        end = from[end];
    }
    jumps.reverse();
    Ok(ms.solution(data, jumps))
}

/// Exhaustive search over all `2^{N-1}` jump sets (`N ≤ 20`).
pub fn ms1d_brute_force(data: &[f64], p: f64, q: f64, alpha: f64, beta: f64) -> Result<MsSolution> {
    check_exponents(p, q)?;
    let n = data.len();
    if n > 20 {
        return config("brute force is limited to 20 nodes");
    }
    let ms = Ms1d::new(n, alpha, beta)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let jumps: Vec<usize> = (0..n - 1).filter(|i| mask >> i & 1 == 1).collect();
        let (value, _) = ms.evaluate(data, &jumps);
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, jumps));
        }
    }
    let (_, jumps) = best.expect("at least one configuration");
    Ok(ms.solution(data, jumps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(data: Vec<f64>, eps_list: Vec<f64>) -> FidelityProblem {
        FidelityProblem {
            data,
            extents: vec![1.0],
            q: 2.0,
            eps_list,
            f: BulkIntegrand::homogeneous(1.0, 2.0).unwrap(),
            g: SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap(),
            psi: PsiFunction::default(),
            opts: SolveOptions::default(),
        }
    }

    #[test]
    fn constant_data_needs_no_jump() {
        let sol = ms1d_dp_oracle(&[0.7; 30], 2.0, 2.0, 1.0, 0.5).unwrap();
        assert!(sol.jumps.is_empty());
        assert!(sol.value.abs() < 1e-14);
        assert!(sol.u.iter().all(|u| (u - 0.7).abs() < 1e-14));
    }

    #[test]
    fn dp_matches_brute_force() {
        let data = [
            0.0, 0.1, -0.2, 1.0, 1.3, 0.9, 2.5, 2.4, 2.6, 0.0, 0.2, 0.1, 3.0,
        ];
        for beta in [0.01, 0.1, 0.5, 10.0] {
            let dp = ms1d_dp_oracle(&data, 2.0, 2.0, 0.05, beta).unwrap();
            let bf = ms1d_brute_force(&data, 2.0, 2.0, 0.05, beta).unwrap();
            assert_eq!(dp.jumps, bf.jumps, "beta {beta}");
            assert_eq!(dp.value, bf.value);
        }
    }

    #[test]
    fn cheap_jump_sits_at_the_step() {
        let data = Preset::Step.sample(200);
        let sol = ms1d_dp_oracle(&data, 2.0, 2.0, 1.0, 0.01).unwrap();
        let k = data.iter().position(|d| *d > 0.5).unwrap();
        assert_eq!(sol.jumps, vec![k - 1]);
        assert!((sol.value - 0.01).abs() < 1e-12);
    }

    #[test]
    fn expensive_jump_is_avoided() {
        let data = Preset::Step.sample(200);
        let sol = ms1d_dp_oracle(&data, 2.0, 2.0, 1.0, 1e3).unwrap();
        assert!(sol.jumps.is_empty());
        let ms = Ms1d::new(200, 1.0, 1e3).unwrap();
        assert_eq!(sol.value, ms.evaluate(&data, &[]).0);
    }

    #[test]
    fn oracle_rejects_other_exponents() {
        let err = ms1d_dp_oracle(&[0.0, 1.0], 3.0, 2.0, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, crate::Error::Unsupported(_)));
        assert!(ms1d_dp_oracle(&[0.0, 1.0], 2.0, 1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_data_gives_zero_minimum() {
        let levels = at_fidelity_minimize(&problem(vec![0.0; 65], vec![0.25, 0.125])).unwrap();
        for l in levels {
            assert_eq!(l.value, 0.0);
            assert!(l.state.u.iter().all(|u| *u == 0.0));
            assert!(l.state.v.iter().all(|v| *v == 1.0));
        }
    }

    #[test]
    fn unresolved_eps_is_a_config_error() {
        let err = at_fidelity_minimize(&problem(vec![0.0; 17], vec![0.25, 0.125])).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn value_is_bounded_by_the_trivial_competitor() {
        let data = Preset::TwoStep.sample(129);
        let bound: f64 = data.iter().map(|d| d * d).sum::<f64>() / 128.0;
        for l in at_fidelity_minimize(&problem(data, vec![0.125, 0.0625, 0.03125])).unwrap() {
            assert!(l.value >= 0.0 && l.value <= bound, "{} {bound}", l.value);
        }
    }
}
