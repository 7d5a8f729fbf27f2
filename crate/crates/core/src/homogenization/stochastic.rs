//! Monte-Carlo estimates for i.i.d. random checkerboards on `Z^n`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_problems::{
    bulk_cell_value, profile_constant, surface_cell_problem, SurfaceCell, DEFAULT_LADDER,
};
use crate::discretization::{rotation_matrix, BoundaryMode};
use crate::error::{config, invalid, Result};
use crate::integrands::{
    BulkIntegrand, DiscreteDistribution, PsiFunction, RandomCheckerboard, SharedField,
    SurfaceIntegrand,
};
use crate::solvers::SolveOptions;

/// Law of the cell values plus the master seed shared by all realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFieldSpec {
    pub distribution: DiscreteDistribution,
    pub master_seed: u64,
}

impl RandomFieldSpec {
    pub fn new(values: Vec<f64>, probabilities: Vec<f64>, master_seed: u64) -> Result<Self> {
        Ok(Self {
            distribution: DiscreteDistribution::new(values, probabilities)?,
            master_seed,
        })
    }

    pub fn realization(&self, seed: u64) -> RandomCheckerboard {
        RandomCheckerboard::new(self.distribution.clone(), self.master_seed, seed)
    }
}

fn check_window(window: &[(i64, i64)]) -> Result<()> {
    if window.is_empty() || window.len() > 2 {
        return invalid("window must be a 1D or 2D lattice box");
    }
    if window.iter().any(|(lo, hi)| lo >= hi) {
        return invalid("window bounds must satisfy lo < hi");
    }
    Ok(())
}

/// Realization `seed` as a coefficient field. The field is defined on all of
/// `Z^n`; `window` (half-open per axis) only bounds what callers may query.
pub fn sample_random_checkerboard(
    spec: &RandomFieldSpec,
    seed: u64,
    window: &[(i64, i64)],
) -> Result<SharedField> {
    check_window(window)?;
    Ok(Arc::new(spec.realization(seed)))
}

/// Cell values over a window, first axis fastest.
pub fn window_values(spec: &RandomFieldSpec, seed: u64, window: &[(i64, i64)]) -> Result<Vec<f64>> {
    check_window(window)?;
    let field = spec.realization(seed);
    let mut out = Vec::new();
    match window {
        [(a0, a1)] => out.extend((*a0..*a1).map(|i| field.cell_value(&[i]))),
        [(a0, a1), (b0, b1)] => {
            for j in *b0..*b1 {
                out.extend((*a0..*a1).map(|i| field.cell_value(&[i, j])));
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

/// Which cell formula a Monte-Carlo run evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// `m^b(u_ξ, Q_r) / r^n` with the random field as bulk coefficient.
    Bulk { xi: Vec<f64> },
    /// `m^s(ū_ν, Q^ν_r) / r^{n-1}` (`ε = 1`) with the random field as
    /// surface coefficient.
    Surface { nu: Vec<f64> },
}

impl CellKind {
    pub fn name(&self) -> &'static str {
        match self {
            CellKind::Bulk { .. } => "bulk",
            CellKind::Surface { .. } => "surface",
        }
    }
}

/// Discretisation and solver settings shared by every realization.
#[derive(Debug, Clone)]
pub struct McSettings {
    pub p: f64,
    /// Grid cells per lattice cell (`h = 1 / cells_per_unit`).
    pub cells_per_unit: usize,
    pub ladder: Vec<f64>,
    pub opts: SolveOptions,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            p: 2.0,
            cells_per_unit: 8,
            ladder: DEFAULT_LADDER.to_vec(),
            opts: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub r: f64,
    pub shift: Vec<i64>,
    pub sample_count: usize,
    /// `(seed, normalised value)` for every successful solve, by seed.
    pub values: Vec<(u64, f64)>,
    /// Seeds whose solve failed, with the error message.
    pub failures: Vec<(u64, String)>,
    /// Seeds whose solve succeeded but hit an iteration limit.
    pub unconverged: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

impl McReport {
    /// Fraction of the requested solves that succeeded and converged.
    pub fn converged_fraction(&self) -> f64 {
        (self.values.len() - self.unconverged.len()) as f64 / self.sample_count as f64
    }
}

fn solve_one(
    kind: &CellKind,
    spec: &RandomFieldSpec,
    seed: u64,
    r: f64,
    center: &[f64],
    settings: &McSettings,
) -> Result<(f64, bool)> {
    let field: SharedField = Arc::new(spec.realization(seed));
    let h = 1.0 / settings.cells_per_unit as f64;
    match kind {
        CellKind::Bulk { xi } => {
            let f = BulkIntegrand::new(field, settings.p)?;
            let res = bulk_cell_value(&f, xi, center, r, h, &settings.opts)?;
            Ok((res.normalised, res.converged()))
        }
        CellKind::Surface { nu } => {
            let g = SurfaceIntegrand::new(field, settings.p)?;
            let f = BulkIntegrand::homogeneous(1.0, settings.p)?;
            let cell = SurfaceCell::cube(nu, center, r, 1.0, h, BoundaryMode::Dirichlet);
            let res = surface_cell_problem(
                &g,
                &f,
                &PsiFunction::default(),
                &cell,
                &settings.ladder,
                &settings.opts,
            )?;
            Ok((res.normalised, res.converged()))
        }
    }
}

fn check_kind(kind: &CellKind) -> Result<usize> {
    let n = match kind {
        CellKind::Bulk { xi } => xi.len(),
        CellKind::Surface { nu } => nu.len(),
    };
    if n == 0 || n > 2 {
        return config("stochastic runs support n = 1 or 2 with m = 1");
    }
    if let CellKind::Surface { nu } = kind {
        if nu.iter().filter(|c| c.abs() == 1.0).count() != 1 {
            return config("stochastic surface runs need an axis-aligned direction");
        }
    }
    Ok(n)
}

fn mc_shifted(
    kind: &CellKind,
    spec: &RandomFieldSpec,
    r: f64,
    shift: &[i64],
    sample_count: usize,
    settings: &McSettings,
) -> Result<McReport> {
    let n = check_kind(kind)?;
    if sample_count < 2 {
        return config("sample_count must be at least 2");
    }
    if !(r.is_finite() && r > 0.0) {
        return config("scale r must be positive");
    }
    if shift.len() != n {
        return config(format!("shift must have {n} components"));
    }
    let center: Vec<f64> = shift.iter().map(|z| *z as f64).collect();
    let seeds: Vec<u64> = (1..=sample_count as u64).collect();
    let results: Vec<(u64, Result<(f64, bool)>)> = seeds
        .par_iter()
        .map(|&s| (s, solve_one(kind, spec, s, r, &center, settings)))
        .collect();
    let mut values = Vec::new();
    let mut failures = Vec::new();
    let mut unconverged = Vec::new();
    for (seed, res) in results {
        match res {
            Ok((v, conv)) => {
                values.push((seed, v));
                if !conv {
                    unconverged.push(seed);
                }
            }
            Err(e @ crate::Error::Config(_)) => return Err(e),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let k = values.len() as f64;
    let (mean, variance) = if values.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = values.iter().map(|(_, v)| v).sum::<f64>() / k;
        let ss: f64 = values.iter().map(|(_, v)| (v - mean).powi(2)).sum();
        (
            mean,
            if values.len() > 1 {
                ss / (k - 1.0)
            } else {
                0.0
            },
        )
    };
    Ok(McReport {
        r,
        shift: shift.to_vec(),
        sample_count,
        values,
        failures,
        unconverged,
        mean,
        variance,
        stderr: (variance / k).sqrt(),
    })
}

/// Sample statistics of the normalised cell value on `Q_r(0)` over seeds
/// `1..=sample_count`.
pub fn mc_estimate(
    kind: &CellKind,
    spec: &RandomFieldSpec,
    r: f64,
    sample_count: usize,
    settings: &McSettings,
) -> Result<McReport> {
    let n = check_kind(kind)?;
    mc_shifted(kind, spec, r, &vec![0; n], sample_count, settings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub base: McReport,
    pub shifted: Vec<McReport>,
    /// `|mean(z) - mean(0)| / pooled stderr` per shift.
    pub z_scores: Vec<f64>,
    pub stationary: bool,
}

/// Compares Monte-Carlo means on `Q_r(z)` against `Q_r(0)` with the same
/// seeds; flags success when every gap is within 3 pooled standard errors.
pub fn stationarity_check(
    spec: &RandomFieldSpec,
    kind: &CellKind,
    r: f64,
    shifts: &[Vec<i64>],
    sample_count: usize,
    settings: &McSettings,
) -> Result<StationarityReport> {
    let base = mc_estimate(kind, spec, r, sample_count, settings)?;
    let mut shifted = Vec::with_capacity(shifts.len());
    let mut z_scores = Vec::with_capacity(shifts.len());
    let mut stationary = true;
    for z in shifts {
        let rep = mc_shifted(kind, spec, r, z, sample_count, settings)?;
        let gap = (rep.mean - base.mean).abs();
        let pooled = (rep.stderr.powi(2) + base.stderr.powi(2)).sqrt();
        stationary &= gap <= 3.0 * pooled;
        z_scores.push(if gap == 0.0 { 0.0 } else { gap / pooled });
        shifted.push(rep);
    }
    Ok(StationarityReport {
        base,
        shifted,
        z_scores,
        stationary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityReport {
    pub whole: f64,
    pub parts: Vec<f64>,
    pub parts_sum: f64,
    /// `μ(I) - Σ μ(I_i)`.
    pub slack: f64,
    /// `0.05 Σ μ(I_i)`.
    pub tolerance: f64,
    /// `c_4 C_v |I| (1 + 10%)`.
    pub upper_bound: f64,
    pub subadditive: bool,
    pub bounded: bool,
}

fn check_partition(interval: (i64, i64), parts: &[(i64, i64)]) -> Result<()> {
    if interval.0 >= interval.1 {
        return invalid("interval must satisfy lo < hi");
    }
    if parts.is_empty() || parts.iter().any(|(a, b)| a >= b) {
        return invalid("partition parts must be non-empty intervals");
    }
    let mut sorted = parts.to_vec();
    sorted.sort_unstable();
    let mut at = interval.0;
    for (a, b) in sorted {
        if a != at {
            return invalid(format!("partition is not exact at {at}"));
        }
        at = b;
    }
    if at != interval.1 {
        return invalid(format!(
            "partition ends at {at}, interval at {}",
            interval.1
        ));
    }
    Ok(())
}

/// `μ(I)` against `Σ μ(I_i)` for one realization, where `μ(J)` is the
/// surface cell value (`ε = 1`) on the box `J × (-c, c)` oriented by an
/// axis-aligned `ν` in `n = 2`. Intervals are half-open lattice intervals
/// along the tangent `R_ν e_1`.
#[allow(clippy::too_many_arguments)]
pub fn subadditivity_check(
    spec: &RandomFieldSpec,
    seed: u64,
    nu: &[f64],
    interval: (i64, i64),
    partition: &[(i64, i64)],
    half_height: f64,
    settings: &McSettings,
) -> Result<SubadditivityReport> {
    check_partition(interval, partition)?;
    if nu.len() != 2 {
        return crate::error::unsupported("subadditivity is implemented for n = 2 only");
    }
    check_kind(&CellKind::Surface { nu: nu.to_vec() })?;
    let rot = rotation_matrix(nu)?;
    let tangent = rot.apply(&[1.0, 0.0]);
    let g = SurfaceIntegrand::new(Arc::new(spec.realization(seed)), settings.p)?;
    let f = BulkIntegrand::homogeneous(1.0, settings.p)?;
    let psi = PsiFunction::default();
    let h = 1.0 / settings.cells_per_unit as f64;
    let mu = |(a, b): (i64, i64)| -> Result<f64> {
        let mid = 0.5 * (a + b) as f64;
        let cell = SurfaceCell {
            nu: nu.to_vec(),
            x: vec![mid * tangent[0], mid * tangent[1]],
            extents: vec![(b - a) as f64, 2.0 * half_height],
            eps: 1.0,
            h,
            mode: BoundaryMode::Dirichlet,
        };
        Ok(surface_cell_problem(&g, &f, &psi, &cell, &settings.ladder, &settings.opts)?.value)
    };
    let whole = mu(interval)?;
    let parts = partition
        .iter()
        .map(|&j| mu(j))
        .collect::<Result<Vec<f64>>>()?;
    let parts_sum: f64 = parts.iter().sum();
    let slack = whole - parts_sum;
    let tolerance = 0.05 * parts_sum;
    let c4 = g.constants().c_hi;
    let upper_bound = c4 * profile_constant(settings.p) * (interval.1 - interval.0) as f64 * 1.1;
    Ok(SubadditivityReport {
        whole,
        parts,
        parts_sum,
        slack,
        tolerance,
        upper_bound,
        subadditive: slack <= tolerance,
        bounded: (0.0..=upper_bound).contains(&whole),
    })
}
