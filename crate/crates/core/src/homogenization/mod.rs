//! `r → ∞` sweeps of normalised cell values, and their stochastic
//! counterparts.

mod stochastic;

pub use stochastic::{
    mc_estimate, sample_random_checkerboard, stationarity_check, subadditivity_check,
    window_values, CellKind, McReport, McSettings, RandomFieldSpec, StationarityReport,
    SubadditivityReport,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell_problems::{bulk_cell_value, surface_cell_value, CellResult};
use crate::discretization::BoundaryMode;
use crate::error::{config, invalid, Result};
use crate::integrands::{BulkIntegrand, PsiFunction, SurfaceIntegrand};
use crate::solvers::SolveOptions;

/// Minimum number of cells per coefficient period (bulk) or per unit
/// length (surface, where `ε = 1`).
pub const MIN_CELLS_PER_PERIOD: usize = 8;

/// Normalised cell value at one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub r: f64,
    pub value: f64,
    pub normalised: f64,
    pub converged: bool,
}

/// Least-squares fit of `value = limit + rate / r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitFit {
    pub limit: f64,
    pub rate: f64,
    /// Root-mean-square residual over the fitted points.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomEstimate {
    pub points: Vec<ScalePoint>,
    /// Scales whose solve failed, with the error message.
    pub failed: Vec<(f64, String)>,
    /// Smallest and largest normalised value over the tail half.
    pub tail_min: f64,
    pub tail_max: f64,
    pub fit: LimitFit,
}

impl HomEstimate {
    pub fn limit(&self) -> f64 {
        self.fit.limit
    }

    fn from_points(points: Vec<ScalePoint>, failed: Vec<(f64, String)>) -> Result<Self> {
        if points.len() < 2 {
            return invalid(format!(
                "only {} scale(s) solved successfully; cannot extrapolate",
                points.len()
            ));
        }
        let scales: Vec<f64> = points.iter().map(|p| p.r).collect();
        let values: Vec<f64> = points.iter().map(|p| p.normalised).collect();
        let fit = fit_tail(&scales, &values)?;
        let tail = &values[values.len() - tail_len(values.len())..];
        let tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let tail_max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            points,
            failed,
            tail_min,
            tail_max,
            fit,
        })
    }
}

fn tail_len(j: usize) -> usize {
    j.div_ceil(2).max(2).min(j)
}

fn fit_tail(scales: &[f64], values: &[f64]) -> Result<LimitFit> {
    let k = tail_len(scales.len());
    let s: Vec<f64> = scales[scales.len() - k..].iter().map(|r| 1.0 / r).collect();
    let y = &values[values.len() - k..];
    let kf = k as f64;
    let sm = s.iter().sum::<f64>() / kf;
    let ym = y.iter().sum::<f64>() / kf;
    let sxx: f64 = s.iter().map(|a| (a - sm).powi(2)).sum();
    if sxx <= 1e-300 * kf || sxx <= f64::EPSILON * sm * sm * kf {
        return invalid("degenerate fit: all fitted scales are equal");
    }
    let sxy: f64 = s.iter().zip(y).map(|(a, b)| (a - sm) * (b - ym)).sum();
    let rate = sxy / sxx;
    let limit = ym - rate * sm;
    let ss: f64 = s
        .iter()
        .zip(y)
        .map(|(a, b)| (b - limit - rate * a).powi(2))
        .sum();
    Ok(LimitFit {
        limit,
        rate,
        residual: (ss / kf).sqrt(),
    })
}

/// Fits `value = L + C / r` over the last `⌈J/2⌉` points (at least two).
pub fn extrapolate_limit(scales: &[f64], values: &[f64]) -> Result<LimitFit> {
    if scales.len() != values.len() {
        return invalid("scales and values differ in length");
    }
    if scales.len() < 3 {
        return invalid("extrapolation needs at least 3 points");
    }
    if scales.iter().chain(values).any(|v| !v.is_finite()) || scales.iter().any(|r| *r <= 0.0) {
        return invalid("scales must be positive and values finite");
    }
    fit_tail(scales, values)
}

fn check_scales(r_list: &[f64], period: Option<f64>) -> Result<()> {
    if r_list.len() < 3 {
        return config("r_list needs at least 3 entries");
    }
    if r_list.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return config("r_list entries must be positive");
    }
    if r_list.windows(2).any(|w| w[1] <= w[0]) {
        return config("r_list must be strictly increasing");
    }
    if let Some(per) = period {
        for r in r_list {
            let k = r / per;
            if (k - k.round()).abs() > 1e-9 {
                return config(format!("scale {r} is not a multiple of the period {per}"));
            }
        }
    }
    Ok(())
}

fn check_cells(cells: usize) -> Result<()> {
    if cells < MIN_CELLS_PER_PERIOD {
        return config(format!(
            "h_rule needs at least {MIN_CELLS_PER_PERIOD} cells per period, got {cells}"
        ));
    }
    Ok(())
}

fn sweep<F>(r_list: &[f64], dim: i32, solve: F) -> Result<HomEstimate>
where
    F: Fn(f64) -> Result<CellResult> + Sync,
{
    let results: Vec<(f64, Result<CellResult>)> =
        r_list.par_iter().map(|&r| (r, solve(r))).collect();
    let mut points = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in results {
        match res {
            Ok(cell) => points.push(ScalePoint {
                r,
                value: cell.value,
                normalised: cell.value / r.powi(dim),
                converged: cell.converged(),
            }),
            Err(e @ crate::Error::Config(_)) => return Err(e),
            Err(e) => {
                log::warn!("scale {r} failed: {e}");
                failed.push((r, e.to_string()));
            }
        }
    }
    HomEstimate::from_points(points, failed)
}

/// `f_hom(ξ)` from `m^b(u_ξ, Q_r(r x)) / r^n` at each scale, with
/// `cells_per_period` grid cells per coefficient period (unit length for
/// non-periodic fields).
pub fn f_hom_estimate(
    f: &BulkIntegrand,
    xi: &[f64],
    x: &[f64],
    r_list: &[f64],
    cells_per_period: usize,
    opts: &SolveOptions,
) -> Result<HomEstimate> {
    check_cells(cells_per_period)?;
    let period = f.field().period();
    check_scales(r_list, period)?;
    let h = period.unwrap_or(1.0) / cells_per_period as f64;
    let n = x.len();
    sweep(r_list, n as i32, |r| {
        let center: Vec<f64> = x.iter().map(|c| c * r).collect();
        bulk_cell_value(f, xi, &center, r, h, opts)
    })
}

/// Extra inputs of the surface sweep beyond the surface integrand.
#[derive(Debug, Clone)]
pub struct SurfaceSweep<'a> {
    /// Bulk integrand penalising `ψ(v)|∇u|^p`.
    pub f: &'a BulkIntegrand,
    pub psi: &'a PsiFunction,
    pub ladder: &'a [f64],
    pub mode: BoundaryMode,
}

/// `g_hom(ν)` from `m^s(ū_ν, Q^ν_r(r x)) / r^{n-1}` with `ε = 1`, using
/// `cells_per_unit` grid cells per unit length.
#[allow(clippy::too_many_arguments)]
pub fn g_hom_estimate(
    g: &SurfaceIntegrand,
    nu: &[f64],
    x: &[f64],
    r_list: &[f64],
    cells_per_unit: usize,
    sweep_setup: &SurfaceSweep<'_>,
    opts: &SolveOptions,
) -> Result<HomEstimate> {
    if cells_per_unit < 4 {
        return config(format!(
            "h_rule needs at least 4 cells per unit length, got {cells_per_unit}"
        ));
    }
    check_scales(r_list, g.field().period())?;
    if r_list[0] <= 2.0 {
        return config("surface scales must exceed 2 (= 2ε with ε = 1)");
    }
    let h = 1.0 / cells_per_unit as f64;
    let n = x.len();
    sweep(r_list, n as i32 - 1, |r| {
        let center: Vec<f64> = x.iter().map(|c| c * r).collect();
        surface_cell_value(
            g,
            sweep_setup.f,
            sweep_setup.psi,
            nu,
            &center,
            r,
            1.0,
            h,
            sweep_setup.mode,
            sweep_setup.ladder,
            opts,
        )
    })
}
