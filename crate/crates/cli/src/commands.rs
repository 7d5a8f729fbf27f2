//! Command registry. Each command validates the whole configuration in
//! `prepare` and only then hands back a job that performs the solves.

use std::collections::BTreeMap;
use std::sync::Arc;

use atcell::cell_problems::{bulk_cell_value, c_p, surface_cell_value, CellResult};
use atcell::discretization::BoundaryMode;
use atcell::fidelity::{at_fidelity_minimize, ms1d_dp_oracle, FidelityProblem, Preset};
use atcell::homogenization::{
    f_hom_estimate, g_hom_estimate, mc_estimate, stationarity_check, CellKind, HomEstimate,
    McReport, McSettings, RandomFieldSpec, SurfaceSweep,
};
use atcell::integrands::{
    validate_bulk, validate_surface, BulkIntegrand, PsiFunction, SurfaceIntegrand,
};
use atcell::solvers::{profile_1d_value, SolveOptions};
use serde_json::{json, Value};

use crate::config::{require, RunConfig};
use crate::error::{CliError, CliResult};

/// CSV table plus the command-specific part of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
}

pub trait Job: Send + Sync {
    fn run(&self) -> CliResult<Report>;
}

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>>;
}

pub struct CommandRegistry {
    commands: BTreeMap<&'static str, Arc<dyn Command>>,
}

impl CommandRegistry {
    pub fn empty() -> Self {
        Self {
            commands: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(CellBulk));
        r.register(Arc::new(CellSurface));
        r.register(Arc::new(HomogenizeBulk));
        r.register(Arc::new(HomogenizeSurface));
        r.register(Arc::new(Stochastic));
        r.register(Arc::new(Fidelity));
        r.register(Arc::new(Profile1d));
        r.register(Arc::new(Validate));
        r
    }

    pub fn register(&mut self, cmd: Arc<dyn Command>) {
        self.commands.insert(cmd.name(), cmd);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.commands.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> CliResult<Arc<dyn Command>> {
        self.commands.get(name).cloned().ok_or_else(|| {
            CliError::Config(format!(
                "unknown command '{name}'; valid commands: {}",
                self.names().join(", ")
            ))
        })
    }
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn vec_param(v: &[f64]) -> String {
    v.iter().map(|c| num(*c)).collect::<Vec<_>>().join(";")
}

const CELL_HEADER: [&str; 8] = [
    "mode",
    "kind",
    "param",
    "r",
    "seed",
    "value",
    "normalised",
    "converged",
];

fn cell_row(
    mode: &str,
    kind: &str,
    param: &str,
    r: f64,
    seed: &str,
    value: f64,
    norm: f64,
    conv: bool,
) -> Vec<String> {
    vec![
        mode.into(),
        kind.into(),
        param.into(),
        num(r),
        seed.into(),
        num(value),
        num(norm),
        conv.to_string(),
    ]
}

fn cell_summary(res: &CellResult) -> Value {
    json!({
        "value": res.value,
        "normalised": res.normalised,
        "h": res.h,
        "eps": res.eps,
        "extrapolated": res.extrapolated,
        "ladder": res.ladder,
        "diagnostics": res.diagnostics,
    })
}

fn hom_rows(kind: &str, param: &str, est: &HomEstimate) -> Vec<Vec<String>> {
    est.points
        .iter()
        .map(|pt| {
            cell_row(
                "deterministic",
                kind,
                param,
                pt.r,
                "",
                pt.value,
                pt.normalised,
                pt.converged,
            )
        })
        .collect()
}

fn hom_summary(est: &HomEstimate) -> Value {
    json!({
        "limit": est.fit.limit,
        "rate": est.fit.rate,
        "fit_residual": est.fit.residual,
        "tail_min": est.tail_min,
        "tail_max": est.tail_max,
        "failed": est.failed,
    })
}

/// `n` from `x` when given, else from the length of `ξ` with `m = 1`.
fn bulk_dims(cfg: &RunConfig, xi: &[f64]) -> CliResult<usize> {
    let n = cfg.x.as_ref().map_or(xi.len(), Vec::len);
    if n == 0 || xi.is_empty() || !xi.len().is_multiple_of(n) {
        return Err(CliError::Config(
            "xi must be an m×n matrix matching x".into(),
        ));
    }
    Ok(n)
}

struct CellBulk;
struct CellBulkJob {
    f: BulkIntegrand,
    xi: Vec<f64>,
    x: Vec<f64>,
    rho: f64,
    h: f64,
    opts: SolveOptions,
}

impl Command for CellBulk {
    fn name(&self) -> &'static str {
        "cell-bulk"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let xi = require(&cfg.xi, "xi")?.clone();
        let f = cfg.require_bulk()?;
        let n = bulk_dims(cfg, &xi)?;
        let rho = cfg.rho()?;
        let h = *require(&cfg.h, "h")?;
        if !(h > 0.0 && h <= rho / 8.0 * (1.0 + 1e-9)) {
            return Err(CliError::Config(format!(
                "h must satisfy 0 < h <= rho/8, got {h}"
            )));
        }
        Ok(Box::new(CellBulkJob {
            f,
            xi,
            x: cfg.point(n)?,
            rho,
            h,
            opts: cfg.solver()?,
        }))
    }
}

impl Job for CellBulkJob {
    fn run(&self) -> CliResult<Report> {
        let res = bulk_cell_value(&self.f, &self.xi, &self.x, self.rho, self.h, &self.opts)?;
        Ok(Report {
            header: CELL_HEADER.to_vec(),
            rows: vec![cell_row(
                "cell",
                "bulk",
                &vec_param(&self.xi),
                self.rho,
                "",
                res.value,
                res.normalised,
                res.converged(),
            )],
            summary: cell_summary(&res),
        })
    }
}

struct SurfaceSetup {
    g: SurfaceIntegrand,
    f: BulkIntegrand,
    psi: PsiFunction,
    nu: Vec<f64>,
    x: Vec<f64>,
    ladder: Vec<f64>,
    mode: BoundaryMode,
    opts: SolveOptions,
}

fn surface_setup(cfg: &RunConfig) -> CliResult<SurfaceSetup> {
    let nu = require(&cfg.nu, "nu")?.clone();
    atcell::discretization::rotation_matrix(&nu)?;
    let ladder = cfg.ladder();
    if ladder.is_empty() || ladder[0] <= 0.0 || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config(
            "ladder must be positive and strictly increasing".into(),
        ));
    }
    Ok(SurfaceSetup {
        g: cfg.surface()?,
        f: cfg.bulk()?,
        psi: cfg.psi()?,
        x: cfg.point(nu.len())?,
        nu,
        ladder,
        mode: cfg.mode.unwrap_or(BoundaryMode::Dirichlet),
        opts: cfg.solver()?,
    })
}

struct CellSurface;
struct CellSurfaceJob {
    s: SurfaceSetup,
    rho: f64,
    eps: f64,
    h: f64,
}

impl Command for CellSurface {
    fn name(&self) -> &'static str {
        "cell-surface"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let s = surface_setup(cfg)?;
        let eps = cfg.eps()?;
        let rho = cfg.rho()?;
        let h = cfg.h.unwrap_or(eps / 4.0);
        atcell::discretization::check_layer_resolution(h, eps)?;
        if rho <= 2.0 * eps {
            return Err(CliError::Config(format!(
                "rho must exceed 2*eps = {}",
                2.0 * eps
            )));
        }
        Ok(Box::new(CellSurfaceJob { s, rho, eps, h }))
    }
}

impl Job for CellSurfaceJob {
    fn run(&self) -> CliResult<Report> {
        let s = &self.s;
        let res = surface_cell_value(
            &s.g, &s.f, &s.psi, &s.nu, &s.x, self.rho, self.eps, self.h, s.mode, &s.ladder, &s.opts,
        )?;
        Ok(Report {
            header: CELL_HEADER.to_vec(),
            rows: vec![cell_row(
                "cell",
                "surface",
                &vec_param(&s.nu),
                self.rho,
                "",
                res.value,
                res.normalised,
                res.converged(),
            )],
            summary: cell_summary(&res),
        })
    }
}

struct HomogenizeBulk;
struct HomogenizeBulkJob {
    f: BulkIntegrand,
    xi: Vec<f64>,
    x: Vec<f64>,
    r_list: Vec<f64>,
    cells: usize,
    opts: SolveOptions,
}

impl Command for HomogenizeBulk {
    fn name(&self) -> &'static str {
        "homogenize-bulk"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let xi = require(&cfg.xi, "xi")?.clone();
        let f = cfg.require_bulk()?;
        let n = bulk_dims(cfg, &xi)?;
        let cells = cfg.h_rule.unwrap_or(8);
        if cells < 8 {
            return Err(CliError::Config(
                "h_rule must be at least 8 cells per period".into(),
            ));
        }
        Ok(Box::new(HomogenizeBulkJob {
            f,
            xi,
            x: cfg.point(n)?,
            r_list: cfg.r_list()?,
            cells,
            opts: cfg.solver()?,
        }))
    }
}

impl Job for HomogenizeBulkJob {
    fn run(&self) -> CliResult<Report> {
        let est = f_hom_estimate(
            &self.f,
            &self.xi,
            &self.x,
            &self.r_list,
            self.cells,
            &self.opts,
        )?;
        Ok(Report {
            header: CELL_HEADER.to_vec(),
            rows: hom_rows("bulk", &vec_param(&self.xi), &est),
            summary: hom_summary(&est),
        })
    }
}

struct HomogenizeSurface;
struct HomogenizeSurfaceJob {
    s: SurfaceSetup,
    r_list: Vec<f64>,
    cells: usize,
}

impl Command for HomogenizeSurface {
    fn name(&self) -> &'static str {
        "homogenize-surface"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let s = surface_setup(cfg)?;
        let cells = cfg.h_rule.unwrap_or(4);
        if cells < 4 {
            return Err(CliError::Config(
                "h_rule must be at least 4 cells per unit length".into(),
            ));
        }
        let r_list = cfg.r_list()?;
        if r_list[0] <= 2.0 {
            return Err(CliError::Config("surface scales must exceed 2".into()));
        }
        Ok(Box::new(HomogenizeSurfaceJob { s, r_list, cells }))
    }
}

impl Job for HomogenizeSurfaceJob {
    fn run(&self) -> CliResult<Report> {
        let s = &self.s;
        let sweep = SurfaceSweep {
            f: &s.f,
            psi: &s.psi,
            ladder: &s.ladder,
            mode: s.mode,
        };
        let est = g_hom_estimate(&s.g, &s.nu, &s.x, &self.r_list, self.cells, &sweep, &s.opts)?;
        Ok(Report {
            header: CELL_HEADER.to_vec(),
            rows: hom_rows("surface", &vec_param(&s.nu), &est),
            summary: hom_summary(&est),
        })
    }
}

struct Stochastic;
struct StochasticJob {
    kind: CellKind,
    spec: RandomFieldSpec,
    scales: Vec<f64>,
    seeds: usize,
    shifts: Vec<Vec<i64>>,
    settings: McSettings,
}

impl Command for Stochastic {
    fn name(&self) -> &'static str {
        "stochastic"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let kind = match require(&cfg.kind, "kind")?.as_str() {
            "bulk" => CellKind::Bulk {
                xi: require(&cfg.xi, "xi")?.clone(),
            },
            "surface" => CellKind::Surface {
                nu: require(&cfg.nu, "nu")?.clone(),
            },
            other => {
                return Err(CliError::Config(format!(
                    "kind must be bulk or surface, got '{other}'"
                )))
            }
        };
        let values = require(&cfg.values, "values")?.clone();
        let probabilities = require(&cfg.probabilities, "probabilities")?.clone();
        let spec = RandomFieldSpec::new(values, probabilities, cfg.master_seed.unwrap_or(0))?;
        let scales = match (&cfg.r, &cfg.r_list) {
            (Some(r), None) => vec![*r],
            (None, Some(list)) => list.clone(),
            (Some(_), Some(_)) => return Err(CliError::Config("give either r or r_list".into())),
            (None, None) => return Err(CliError::Config("missing field: r".into())),
        };
        if scales.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(CliError::Config("scales must be positive".into()));
        }
        let cells = cfg.h_rule.unwrap_or(8);
        if cells < 8 {
            return Err(CliError::Config(
                "h_rule must be at least 8 cells per lattice cell".into(),
            ));
        }
        let dim = match &kind {
            CellKind::Bulk { xi } => xi.len(),
            CellKind::Surface { nu } => nu.len(),
        };
        let shifts = cfg.shifts.clone().unwrap_or_default();
        if shifts.iter().any(|z| z.len() != dim) {
            return Err(CliError::Config(format!(
                "shifts must have {dim} components"
            )));
        }
        Ok(Box::new(StochasticJob {
            kind,
            spec,
            scales,
            seeds: cfg.seeds()?,
            shifts,
            settings: McSettings {
                p: cfg.exponent()?,
                cells_per_unit: cells,
                ladder: cfg.ladder(),
                opts: cfg.solver()?,
            },
        }))
    }
}

fn mc_rows(kind: &CellKind, param: &str, rep: &McReport) -> Vec<Vec<String>> {
    let mode = if rep.shift.iter().all(|z| *z == 0) {
        "stochastic".to_string()
    } else {
        format!(
            "stochastic@{}",
            rep.shift
                .iter()
                .map(|z| z.to_string())
                .collect::<Vec<_>>()
                .join(";")
        )
    };
    let dim = rep.shift.len() as i32 - i32::from(kind.name() == "surface");
    rep.values
        .iter()
        .map(|(seed, v)| {
            let conv = !rep.unconverged.contains(seed);
            cell_row(
                &mode,
                kind.name(),
                param,
                rep.r,
                &seed.to_string(),
                v * rep.r.powi(dim),
                *v,
                conv,
            )
        })
        .chain(rep.failures.iter().map(|(seed, _)| {
            cell_row(
                &mode,
                kind.name(),
                param,
                rep.r,
                &seed.to_string(),
                f64::NAN,
                f64::NAN,
                false,
            )
        }))
        .collect()
}

fn mc_summary(rep: &McReport) -> Value {
    json!({
        "r": rep.r,
        "shift": rep.shift,
        "samples": rep.sample_count,
        "mean": rep.mean,
        "variance": rep.variance,
        "stderr": rep.stderr,
        "failures": rep.failures,
        "converged_fraction": rep.converged_fraction(),
    })
}

impl Job for StochasticJob {
    fn run(&self) -> CliResult<Report> {
        let param = match &self.kind {
            CellKind::Bulk { xi } => vec_param(xi),
            CellKind::Surface { nu } => vec_param(nu),
        };
        let mut rows = Vec::new();
        let mut per_scale = Vec::new();
        for &r in &self.scales {
            if self.shifts.is_empty() {
                let rep = mc_estimate(&self.kind, &self.spec, r, self.seeds, &self.settings)?;
                rows.extend(mc_rows(&self.kind, &param, &rep));
                per_scale.push(mc_summary(&rep));
            } else {
                let st = stationarity_check(
                    &self.spec,
                    &self.kind,
                    r,
                    &self.shifts,
                    self.seeds,
                    &self.settings,
                )?;
                rows.extend(mc_rows(&self.kind, &param, &st.base));
                for rep in &st.shifted {
                    rows.extend(mc_rows(&self.kind, &param, rep));
                }
                per_scale.push(json!({
                    "base": mc_summary(&st.base),
                    "shifted": st.shifted.iter().map(mc_summary).collect::<Vec<_>>(),
                    "z_scores": st.z_scores,
                    "stationary": st.stationary,
                }));
            }
        }
        Ok(Report {
            header: CELL_HEADER.to_vec(),
            rows,
            summary: json!({ "scales": per_scale }),
        })
    }
}

struct Fidelity;
struct FidelityJob {
    problem: FidelityProblem,
    oracle: Option<(f64, f64)>,
}

fn load_data(cfg: &RunConfig) -> CliResult<Vec<f64>> {
    let source = require(&cfg.data, "data")?;
    let preset = match source.as_str() {
        "step" => Some(Preset::Step),
        "ramp" => Some(Preset::Ramp),
        "two_step" => Some(Preset::TwoStep),
        _ => None,
    };
    if let Some(p) = preset {
        let nodes = *require(&cfg.nodes, "nodes")?;
        if nodes < 2 {
            return Err(CliError::Config("nodes must be at least 2".into()));
        }
        return Ok(p.sample(nodes));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(source)
        .map_err(|e| CliError::Config(format!("cannot read data '{source}': {e}")))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("bad data file: {e}")))?;
        let field = rec.get(0).unwrap_or("").trim();
        let v: f64 = field
            .parse()
            .map_err(|_| CliError::Config(format!("bad data value '{field}'")))?;
        out.push(v);
    }
    Ok(out)
}

impl Command for Fidelity {
    fn name(&self) -> &'static str {
        "fidelity"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let data = load_data(cfg)?;
        let eps_list = require(&cfg.eps_list, "eps_list")?.clone();
        let q = cfg.q.unwrap_or(2.0);
        let f = cfg.bulk()?;
        let g = cfg.surface()?;
        let h = 1.0 / (data.len().max(2) - 1) as f64;
        if let Some(smallest) = eps_list.last() {
            atcell::discretization::check_layer_resolution(h, *smallest)?;
        }
        let oracle = {
            let homogeneous = |k: &str| k == "homogeneous";
            let a = f.coefficient(&[0.0]);
            let b = g.coefficient(&[0.0]);
            (homogeneous(f.field().kind())
                && homogeneous(g.field().kind())
                && f.p() == 2.0
                && q == 2.0
                && data.len() <= 2000)
                .then(|| (a, b * c_p(g.p())))
        };
        let problem = FidelityProblem {
            data,
            extents: vec![1.0],
            q,
            eps_list,
            f,
            g,
            psi: cfg.psi()?,
            opts: cfg.solver()?,
        };
        Ok(Box::new(FidelityJob { problem, oracle }))
    }
}

impl Job for FidelityJob {
    fn run(&self) -> CliResult<Report> {
        let levels = at_fidelity_minimize(&self.problem)?;
        let oracle = match self.oracle {
            Some((alpha, beta)) => {
                let sol = ms1d_dp_oracle(&self.problem.data, 2.0, 2.0, alpha, beta)?;
                Some(
                    json!({ "value": sol.value, "jumps": sol.jumps, "alpha": alpha, "beta": beta }),
                )
            }
            None => None,
        };
        let rows = levels
            .iter()
            .map(|l| {
                vec![
                    num(l.eps),
                    num(l.value),
                    num(l.v_deviation),
                    l.converged.to_string(),
                ]
            })
            .collect();
        Ok(Report {
            header: vec!["eps", "value", "v_deviation", "converged"],
            rows,
            summary: json!({
                "levels": levels.iter().map(|l| json!({
                    "eps": l.eps, "value": l.value, "v_deviation": l.v_deviation, "converged": l.converged,
                })).collect::<Vec<_>>(),
                "oracle": oracle,
            }),
        })
    }
}

struct Profile1d;
struct Profile1dJob {
    p: f64,
    length: f64,
    nodes: usize,
}

impl Command for Profile1d {
    fn name(&self) -> &'static str {
        "profile1d"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        let p = cfg.exponent()?;
        let length = *require(&cfg.length, "L")?;
        let nodes = *require(&cfg.n_nodes, "N")?;
        if !(length.is_finite() && length > 0.0) || nodes < 3 {
            return Err(CliError::Config(
                "L must be positive and N at least 3".into(),
            ));
        }
        Ok(Box::new(Profile1dJob { p, length, nodes }))
    }
}

impl Job for Profile1dJob {
    fn run(&self) -> CliResult<Report> {
        let value = profile_1d_value(self.p, self.length, self.nodes)?;
        Ok(Report {
            header: vec!["p", "L", "N", "value"],
            rows: vec![vec![
                num(self.p),
                num(self.length),
                self.nodes.to_string(),
                num(value),
            ]],
            summary: json!({ "value": value, "c_p": c_p(self.p) }),
        })
    }
}

struct Validate;
struct ValidateJob {
    f: Option<BulkIntegrand>,
    g: Option<SurfaceIntegrand>,
    n: usize,
    m: usize,
    samples: usize,
    seed: u64,
}

impl Command for Validate {
    fn name(&self) -> &'static str {
        "validate"
    }
    fn prepare(&self, cfg: &RunConfig) -> CliResult<Box<dyn Job>> {
        if cfg.f.is_none() && cfg.g.is_none() {
            return Err(CliError::Config("missing field: f".into()));
        }
        let n = cfg.n.unwrap_or(2);
        let m = cfg.m.unwrap_or(1);
        if !(1..=2).contains(&n) || m == 0 {
            return Err(CliError::Config("n must be 1 or 2 and m positive".into()));
        }
        Ok(Box::new(ValidateJob {
            f: cfg.f.as_ref().map(|_| cfg.bulk()).transpose()?,
            g: cfg.g.as_ref().map(|_| cfg.surface()).transpose()?,
            n,
            m,
            samples: cfg.samples.unwrap_or(1000),
            seed: cfg.seed.unwrap_or(0),
        }))
    }
}

impl Job for ValidateJob {
    fn run(&self) -> CliResult<Report> {
        let mut reports = Vec::new();
        if let Some(f) = &self.f {
            reports.push((
                "f",
                validate_bulk(f, self.n, self.m, self.samples, self.seed),
            ));
        }
        if let Some(g) = &self.g {
            reports.push(("g", validate_surface(g, self.n, self.samples, self.seed)));
        }
        let failed: Vec<String> = reports
            .iter()
            .flat_map(|(which, r)| {
                r.checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(move |c| format!("{which}:{}", c.axiom))
            })
            .collect();
        if !failed.is_empty() {
            return Err(CliError::Config(format!(
                "class axioms violated: {}",
                failed.join(", ")
            )));
        }
        let rows = reports
            .iter()
            .flat_map(|(which, r)| {
                r.checks.iter().map(move |c| {
                    vec![
                        which.to_string(),
                        c.axiom.to_string(),
                        c.passed.to_string(),
                        c.samples.to_string(),
                        num(c.worst_violation),
                    ]
                })
            })
            .collect();
        let summary = json!({
            "reports": reports.iter().map(|(w, r)| json!({ "integrand": w, "checks": r.checks })).collect::<Vec<_>>(),
        });
        Ok(Report {
            header: vec!["integrand", "axiom", "passed", "samples", "worst_violation"],
            rows,
            summary,
        })
    }
}
