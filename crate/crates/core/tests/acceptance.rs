//! End-to-end acceptance checks. Runs every criterion in order, prints one
//! PASS/FAIL line each and exits non-zero if any fails. Pass substrings as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- c07`.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use atcell::cell_problems::{bulk_cell_value, c_p, surface_cell_value, CellResult, DEFAULT_LADDER};
use atcell::discretization::{BoundaryMode, Grid, PhaseFieldState};
use atcell::energy::{energy_gradient, evaluate_energy, EnergyModel};
use atcell::fidelity::{
    at_fidelity_minimize, ms1d_brute_force, ms1d_dp_oracle, FidelityProblem, Preset,
};
use atcell::homogenization::{
    f_hom_estimate, g_hom_estimate, mc_estimate, stationarity_check, subadditivity_check, CellKind,
    McSettings, RandomFieldSpec, SurfaceSweep,
};
use atcell::integrands::{
    BulkIntegrand, Checkerboard, Laminate, PsiFunction, Rescaled, SharedField, SurfaceIntegrand,
};
use atcell::solvers::{profile_1d_value, SolveDiagnostics, SolveOptions};

/// Objective traces of every solve, for the monotonicity criterion.
#[derive(Default)]
struct Traces(Vec<(String, f64)>);

impl Traces {
    fn record(&mut self, label: impl Into<String>, d: &SolveDiagnostics) {
        let worst = d
            .energy_trace
            .windows(2)
            .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max);
        self.0.push((label.into(), worst));
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn field(f: impl atcell::integrands::CoefficientField + 'static) -> SharedField {
    Arc::new(f)
}

fn checkerboard(values: [f64; 2], period: f64) -> SharedField {
    field(Checkerboard::new(values, period).unwrap())
}

fn surface(
    g: &SurfaceIntegrand,
    f: &BulkIntegrand,
    nu: &[f64],
    eps: f64,
    mode: BoundaryMode,
) -> CellResult {
    surface_cell_value(
        g,
        f,
        &PsiFunction::default(),
        nu,
        &[0.0, 0.0],
        1.0,
        eps,
        eps / 4.0,
        mode,
        &DEFAULT_LADDER,
        &opts(),
    )
    .unwrap()
}

fn c01(t: &mut Traces) -> Outcome {
    let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
    let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
    let start = Instant::now();
    let r = surface(&g, &f, &[0.0, 1.0], 2f64.powi(-8), BoundaryMode::Dirichlet);
    let secs = start.elapsed().as_secs_f64();
    t.record("c01", &r.diagnostics);
    let pass = (1.9..=2.1).contains(&r.normalised) && secs <= 600.0;
    outcome(
        pass,
        format!("normalised {:.5} (target 2), {secs:.1} s", r.normalised),
    )
}

fn c02(t: &mut Traces) -> Outcome {
    let p = 3.0;
    let g = SurfaceIntegrand::homogeneous(1.0, p).unwrap();
    let f = BulkIntegrand::homogeneous(1.0, p).unwrap();
    let r = surface(&g, &f, &[0.0, 1.0], 2f64.powi(-6), BoundaryMode::Dirichlet);
    t.record("c02", &r.diagnostics);
    let target = c_p(p);
    let err = rel(r.normalised, target);
    outcome(
        err <= 0.07,
        format!(
            "normalised {:.5}, c_3 = {target:.5}, rel err {err:.3}",
            r.normalised
        ),
    )
}

fn c03(t: &mut Traces) -> Outcome {
    let g = SurfaceIntegrand::new(checkerboard([1.0, 2.0], 0.25), 2.0).unwrap();
    let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
    let r = surface(&g, &f, &[0.0, 1.0], 2f64.powi(-5), BoundaryMode::Dirichlet);
    t.record("c03", &r.diagnostics);
    let (lo, hi) = (0.95 * 2.0, 1.05 * 4.0);
    outcome(
        (lo..=hi).contains(&r.normalised),
        format!("normalised {:.5} in [{lo}, {hi}]", r.normalised),
    )
}

fn c04(t: &mut Traces) -> Outcome {
    let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
    let mut worst = 0.0f64;
    for xi in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
        let r = bulk_cell_value(&f, &xi, &[0.3, -0.2], 1.0, 1.0 / 16.0, &opts()).unwrap();
        t.record("c04", &r.diagnostics);
        let exact = xi[0] * xi[0] + xi[1] * xi[1];
        worst = worst.max((r.normalised - exact).abs());
    }
    outcome(worst <= 1e-8, format!("max |value - |xi|^2| = {worst:.2e}"))
}

fn c05(_: &mut Traces) -> Outcome {
    let lam = Laminate::new(vec![1.0, 4.0], vec![1.0, 0.0], 1.0, 0.0).unwrap();
    let f = BulkIntegrand::new(field(lam), 2.0).unwrap();
    let scales = [4.0, 8.0, 16.0];
    let across = f_hom_estimate(&f, &[1.0, 0.0], &[0.0, 0.0], &scales, 8, &opts()).unwrap();
    let along = f_hom_estimate(&f, &[0.0, 1.0], &[0.0, 0.0], &scales, 8, &opts()).unwrap();
    // series and parallel means of {1, 4}
    let (e1, e2) = (rel(across.limit(), 1.6), rel(along.limit(), 2.5));
    outcome(
        e1 <= 0.02 && e2 <= 0.02,
        format!(
            "across {:.5} (1.6, err {e1:.4}), along {:.5} (2.5, err {e2:.4})",
            across.limit(),
            along.limit()
        ),
    )
}

fn c06(_: &mut Traces) -> Outcome {
    let f = BulkIntegrand::new(checkerboard([1.0, 4.0], 1.0), 2.0).unwrap();
    let est = f_hom_estimate(&f, &[1.0, 0.0], &[0.0, 0.0], &[4.0, 8.0, 16.0], 8, &opts()).unwrap();
    // geometric mean of {1, 4}
    let err = rel(est.limit(), 2.0);
    outcome(
        err <= 0.05,
        format!("limit {:.5} (2.0, err {err:.4})", est.limit()),
    )
}

fn c07(t: &mut Traces) -> Outcome {
    let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
    let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
    let eps = 2f64.powi(-8);
    let d = surface(&g, &f, &[0.0, 1.0], eps, BoundaryMode::Dirichlet);
    let m = surface(&g, &f, &[0.0, 1.0], eps, BoundaryMode::Mixed);
    t.record("c07 dirichlet", &d.diagnostics);
    t.record("c07 mixed", &m.diagnostics);
    let err = rel(m.normalised, d.normalised);
    outcome(
        err <= 0.05,
        format!(
            "dirichlet {:.5}, mixed {:.5}, rel diff {err:.4}",
            d.normalised, m.normalised
        ),
    )
}

fn c08(_: &mut Traces) -> Outcome {
    let g = SurfaceIntegrand::new(checkerboard([1.0, 2.0], 1.0), 2.0).unwrap();
    let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
    let psi = PsiFunction::default();
    let setup = SurfaceSweep {
        f: &f,
        psi: &psi,
        ladder: &DEFAULT_LADDER,
        mode: BoundaryMode::Dirichlet,
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for nu in [[0.0, 1.0], [s, s]] {
        let minus = [-nu[0], -nu[1]];
        let est = |n: &[f64]| {
            g_hom_estimate(&g, n, &[0.0, 0.0], &[4.0, 6.0, 8.0], 4, &setup, &opts()).unwrap()
        };
        let (a, b) = (est(&nu), est(&minus));
        for (pa, pb) in a.points.iter().zip(&b.points) {
            worst = worst.max(rel(pb.normalised, pa.normalised));
        }
        worst = worst.max(rel(b.limit(), a.limit()));
        detail.push(format!(
            "({:.3},{:.3}): {:.5} vs {:.5}",
            nu[0],
            nu[1],
            a.limit(),
            b.limit()
        ));
    }
    outcome(
        worst <= 0.01,
        format!("{}; max rel diff {worst:.2e}", detail.join(", ")),
    )
}

fn c09(t: &mut Traces) -> Outcome {
    let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
    let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
    let eps = 2f64.powi(-5);
    let a = surface(&g, &f, &[0.0, 1.0], eps, BoundaryMode::Dirichlet);
    let b = surface(
        &g,
        &f.scaled(10.0).unwrap(),
        &[0.0, 1.0],
        eps,
        BoundaryMode::Dirichlet,
    );
    t.record("c09", &a.diagnostics);
    t.record("c09 scaled", &b.diagnostics);
    let top = |r: &CellResult| r.ladder.last().unwrap().value;
    let err = rel(top(&b), top(&a));
    outcome(
        err <= 0.02,
        format!(
            "top rung {:.5} vs {:.5} with 10 f, rel diff {err:.2e}",
            top(&a),
            top(&b)
        ),
    )
}

fn c10(_: &mut Traces) -> Outcome {
    let base = checkerboard([1.0, 3.0], 1.0);
    let psi = PsiFunction::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for (eps, p) in [(0.25, 2.0), (0.125, 3.0), (0.5, 1.5), (0.3, 2.0)] {
        let (x, rho, h) = ([0.3, -0.1], 1.0, 1.0 / 16.0);
        let fine = Grid::new(&x, &[rho, rho], &[0.0, 1.0], h).unwrap();
        let xs = [x[0] / eps, x[1] / eps];
        let coarse = Grid::new(&xs, &[rho / eps, rho / eps], &[0.0, 1.0], h / eps).unwrap();
        let nodes = fine.node_count();
        let mut state = PhaseFieldState::new(1, nodes);
        for i in 0..nodes {
            state.u[i] = rng.gen_range(-1.0..1.0);
            state.v[i] = rng.gen_range(0.0..1.0);
        }
        let mut scaled = state.clone();
        scaled.u.iter_mut().for_each(|u| *u /= eps);
        let f_eps =
            BulkIntegrand::new(field(Rescaled::new(base.clone(), eps).unwrap()), p).unwrap();
        let f_one = BulkIntegrand::new(base.clone(), p).unwrap();
        let lhs = EnergyModel::bulk_only(&fine, 1, &f_eps)
            .and_then(|m| m.with_psi(&psi))
            .and_then(|m| m.evaluate(&state))
            .unwrap()
            .bulk;
        let rhs = EnergyModel::bulk_only(&coarse, 1, &f_one)
            .and_then(|m| m.with_psi(&psi))
            .and_then(|m| m.evaluate(&scaled))
            .unwrap()
            .bulk;
        worst = worst.max(rel(eps.powi(2) * rhs, lhs));
    }
    outcome(worst <= 1e-12, format!("max rel deviation {worst:.2e}"))
}

fn c11(_: &mut Traces) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let psi = PsiFunction::default();
    let mut worst = 0.0f64;
    for k in 0..10 {
        let p = if k % 2 == 0 { 2.0 } else { 3.0 };
        let h = 0.25;
        let grid = Grid::new(&[0.0, 0.0], &[2.0 * h, 2.0 * h], &[0.0, 1.0], h).unwrap();
        let f = BulkIntegrand::new(checkerboard([1.0, 4.0], 0.2), p).unwrap();
        let g = SurfaceIntegrand::new(checkerboard([1.0, 2.0], 0.2), p).unwrap();
        let eps = 0.5;
        let mut state = PhaseFieldState::new(1, grid.node_count());
        for i in 0..grid.node_count() {
            state.u[i] = rng.gen_range(-1.0..1.0);
            state.v[i] = rng.gen_range(0.1..0.9);
        }
        let (gu, gv) = energy_gradient(&grid, &f, &g, &psi, eps, &state, None).unwrap();
        let total =
            |s: &PhaseFieldState| evaluate_energy(&grid, &f, &g, &psi, eps, s).unwrap().total;
        let step = 1e-6;
        let mut num = Vec::new();
        for field_is_v in [false, true] {
            for i in 0..grid.node_count() {
                let (mut a, mut b) = (state.clone(), state.clone());
                let (xa, xb) = if field_is_v {
                    (&mut a.v[i], &mut b.v[i])
                } else {
                    (&mut a.u[i], &mut b.u[i])
                };
                *xa += step;
                *xb -= step;
                num.push((total(&a) - total(&b)) / (2.0 * step));
            }
        }
        let exact: Vec<f64> = gu.iter().chain(&gv).copied().collect();
        let diff = exact
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 10 states"),
    )
}

fn c12(t: &mut Traces) -> Outcome {
    let f = BulkIntegrand::homogeneous(1.0, 3.0).unwrap();
    let g = SurfaceIntegrand::new(checkerboard([1.0, 2.0], 0.25), 3.0).unwrap();
    for mode in [BoundaryMode::Dirichlet, BoundaryMode::Mixed] {
        let r = surface(&g, &f, &[0.6, 0.8], 2f64.powi(-4), mode);
        t.record(format!("c12 {mode:?}"), &r.diagnostics);
    }
    let lam = Laminate::new(vec![1.0, 4.0], vec![0.6, 0.8], 0.5, 0.0).unwrap();
    let fb = BulkIntegrand::new(field(lam), 3.0).unwrap();
    let r = bulk_cell_value(&fb, &[1.0, 2.0], &[0.0, 0.0], 1.0, 1.0 / 16.0, &opts()).unwrap();
    t.record("c12 bulk p=3", &r.diagnostics);
    let (label, worst) =
        t.0.iter()
            .cloned()
            .fold((String::new(), f64::NEG_INFINITY), |acc, x| {
                if x.1 > acc.1 {
                    x
                } else {
                    acc
                }
            });
    outcome(
        worst <= 1e-12,
        format!(
            "{} runs, largest relative step increase {worst:.2e} ({label})",
            t.0.len()
        ),
    )
}

fn random_spec() -> RandomFieldSpec {
    RandomFieldSpec::new(vec![1.0, 4.0], vec![0.5, 0.5], 2024).unwrap()
}

fn c13(_: &mut Traces) -> Outcome {
    let spec = random_spec();
    let kind = CellKind::Bulk { xi: vec![1.0, 0.0] };
    let settings = McSettings::default();
    let run = |r: f64| mc_estimate(&kind, &spec, r, 50, &settings).unwrap();
    let (a, b, c) = (run(8.0), run(16.0), run(32.0));
    let var_ok = c.variance < 0.5 * a.variance;
    let pooled = (b.stderr.powi(2) + c.stderr.powi(2)).sqrt();
    let gap = (b.mean - c.mean).abs() / pooled;
    let conv = [&a, &b, &c]
        .iter()
        .map(|m| m.converged_fraction())
        .fold(1.0, f64::min);
    outcome(
        var_ok && gap <= 2.0 && conv >= 0.9,
        format!(
            "var r8 {:.4}, r32 {:.4}; means r16 {:.4}, r32 {:.4} ({gap:.2} SE); converged {:.0}%",
            a.variance,
            c.variance,
            b.mean,
            c.mean,
            100.0 * conv
        ),
    )
}

fn c14(_: &mut Traces) -> Outcome {
    let spec = random_spec();
    let kind = CellKind::Bulk { xi: vec![1.0, 0.0] };
    let shifts = vec![vec![1, 0], vec![5, 0], vec![3, 4]];
    let rep = stationarity_check(&spec, &kind, 8.0, &shifts, 30, &McSettings::default()).unwrap();
    let z: Vec<String> = rep.z_scores.iter().map(|z| format!("{z:.2}")).collect();
    outcome(rep.stationary, format!("z-scores [{}]", z.join(", ")))
}

fn c15(_: &mut Traces) -> Outcome {
    let spec = random_spec();
    let settings = McSettings {
        cells_per_unit: 4,
        ..McSettings::default()
    };
    let mut ok = true;
    let mut detail = Vec::new();
    let partitions: [&[(i64, i64)]; 2] = [&[(0, 4), (4, 8)], &[(0, 2), (2, 4), (4, 6), (6, 8)]];
    for parts in partitions {
        let rep =
            subadditivity_check(&spec, 1, &[0.0, 1.0], (0, 8), parts, 3.0, &settings).unwrap();
        ok &= rep.subadditive && rep.bounded && rep.whole >= 0.0;
        detail.push(format!(
            "{} parts: mu {:.4}, sum {:.4}, slack {:.4}, bound {:.2}",
            parts.len(),
            rep.whole,
            rep.parts_sum,
            rep.slack,
            rep.upper_bound
        ));
    }
    outcome(ok, detail.join("; "))
}

fn c16(_: &mut Traces) -> Outcome {
    let eps_list: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
    let nodes = (4.0 / eps_list[6]) as usize + 1;
    let problem = FidelityProblem {
        data: Preset::Step.sample(nodes),
        extents: vec![1.0],
        q: 2.0,
        eps_list,
        f: BulkIntegrand::homogeneous(1.0, 2.0).unwrap(),
        g: SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap(),
        psi: PsiFunction::default(),
        opts: opts(),
    };
    let levels = at_fidelity_minimize(&problem).unwrap();
    let oracle = ms1d_dp_oracle(&Preset::Step.sample(1025), 2.0, 2.0, 1.0, c_p(2.0)).unwrap();
    let gaps: Vec<f64> = levels
        .iter()
        .map(|l| (l.value - oracle.value).abs())
        .collect();
    let last = rel(levels[6].value, oracle.value);
    let tail_ok = gaps[4..].windows(2).all(|w| w[1] <= w[0] + 1e-3);

    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut exact = true;
    for n in [2usize, 5, 9, 14] {
        for beta in [0.001, 0.05, 0.5] {
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dp = ms1d_dp_oracle(&data, 2.0, 2.0, 0.3, beta).unwrap();
            let bf = ms1d_brute_force(&data, 2.0, 2.0, 0.3, beta).unwrap();
            exact &= dp.value == bf.value && dp.jumps == bf.jumps;
        }
    }
    let values: Vec<String> = levels.iter().map(|l| format!("{:.4}", l.value)).collect();
    outcome(
        last <= 0.05 && tail_ok && exact,
        format!(
            "M_eps [{}] vs oracle {:.4} (rel err {last:.4}); tail gaps monotone {tail_ok}; dp == brute force {exact}",
            values.join(", "),
            oracle.value
        ),
    )
}

fn c17(_: &mut Traces) -> Outcome {
    let v = profile_1d_value(2.0, 20.0, 4000).unwrap();
    let mut ok = (v - 1.0).abs() <= 1e-3;
    let mut detail = vec![format!("value(2, 20, 4000) = {v:.6}")];
    for p in [1.5, 2.0, 3.0] {
        let vals: Vec<f64> = [2.0, 5.0, 10.0, 20.0, 40.0]
            .iter()
            .map(|&l| profile_1d_value(p, l, (200.0 * l) as usize + 1).unwrap())
            .collect();
        let monotone = vals.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let floor = vals.iter().all(|&x| x >= 0.5 * c_p(p));
        ok &= monotone && floor;
        detail.push(format!(
            "p={p}: min {:.5} >= {:.5}, monotone {monotone}",
            vals.last().unwrap(),
            0.5 * c_p(p)
        ));
    }
    outcome(ok, detail.join("; "))
}

type Criterion = fn(&mut Traces) -> Outcome;

const CRITERIA: [(&str, &str, Criterion); 17] = [
    ("c01", "transition constant, p = 2", c01),
    ("c02", "transition constant, p = 3", c02),
    ("c03", "surface sandwich bounds", c03),
    ("c04", "bulk exactness", c04),
    ("c05", "laminate homogenisation", c05),
    ("c06", "checkerboard homogenisation", c06),
    ("c07", "dirichlet / mixed equivalence", c07),
    ("c08", "normal symmetry", c08),
    ("c09", "penalty decoupling", c09),
    ("c10", "rescaling identity", c10),
    ("c11", "gradient check", c11),
    ("c12", "monotone alternating minimisation", c12),
    ("c13", "stochastic averaging", c13),
    ("c14", "stationarity", c14),
    ("c15", "subadditivity", c15),
    ("c16", "fidelity convergence", c16),
    ("c17", "transition profile", c17),
];

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected = |id: &str| filters.is_empty() || filters.iter().any(|f| id.contains(f.as_str()));
    let mut traces = Traces::default();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !selected(id) {
            continue;
        }
        let start = Instant::now();
        let o = check(&mut traces);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{id} {verdict} {name}: {} [{:.1} s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
