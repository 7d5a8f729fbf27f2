use std::sync::Arc;

use proptest::prelude::*;

use atcell::cell_problems::{bulk_cell_value, surface_cell_value, DEFAULT_LADDER};
use atcell::discretization::{
    affine_datum, apply_gradient, build_cube_grid, jump_datum, BoundaryMode, Grid, PhaseFieldState,
};
use atcell::energy::{energy_gradient, evaluate_energy, EnergyModel};
use atcell::fidelity::{at_fidelity_minimize, ms1d_brute_force, ms1d_dp_oracle, FidelityProblem};
use atcell::homogenization::{extrapolate_limit, window_values, RandomFieldSpec};
use atcell::integrands::{
    BulkIntegrand, Checkerboard, Laminate, PsiFunction, Rescaled, SharedField, SurfaceIntegrand,
};
use atcell::solvers::{profile_1d_value, SolveOptions};

fn unit(angle: f64) -> [f64; 2] {
    [angle.cos(), angle.sin()]
}

fn checkerboard(a: f64, b: f64, period: f64) -> SharedField {
    Arc::new(Checkerboard::new([a, b], period).unwrap())
}

fn laminate(a: f64, b: f64, angle: f64) -> SharedField {
    Arc::new(Laminate::new(vec![a, b], unit(angle).to_vec(), 0.3, 0.1).unwrap())
}

/// Smooth-ish pseudo-random state with `v` overshooting `[0, 1]`.
fn raw_state(nodes: usize, seed: &[f64]) -> PhaseFieldState {
    let mut s = PhaseFieldState::new(1, nodes);
    for i in 0..nodes {
        let r = seed[i % seed.len()];
        s.u[i] = (r * (i as f64 + 1.3)).sin();
        s.v[i] = 0.5 + 0.7 * (r * (2.1 * i as f64 + 0.4)).cos();
    }
    s
}

fn random_state(nodes: usize, seed: &[f64]) -> PhaseFieldState {
    let mut s = raw_state(nodes, seed);
    s.clamp_v();
    s
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn square(h: f64) -> Grid {
    Grid::new(&[0.1, -0.2], &[1.0, 1.0], &[0.0, 1.0], h).unwrap()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn bulk_integrand_is_sandwiched(
        a in 0.1f64..5.0, b in 0.1f64..5.0, p in 1.2f64..4.0,
        x in prop::array::uniform2(-3.0f64..3.0), xi in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let f = BulkIntegrand::new(checkerboard(a, b, 0.7), p).unwrap();
        let c = f.constants();
        let norm = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt().powf(p);
        let val = f.eval(&x, &xi).unwrap();
        prop_assert!(c.c_lo * norm <= val * (1.0 + 1e-14));
        prop_assert!(val <= c.c_hi * norm * (1.0 + 1e-14));
        prop_assert_eq!(val.to_bits(), f.eval(&x, &xi).unwrap().to_bits());
    }

    #[test]
    fn surface_integrand_is_smallest_at_zero_gradient(
        a in 0.1f64..5.0, b in 0.1f64..5.0, p in 1.2f64..4.0, v in 0.0f64..1.0,
        x in prop::array::uniform2(-3.0f64..3.0), w in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let g = SurfaceIntegrand::new(laminate(a, b, 0.4), p).unwrap();
        prop_assert!(g.eval(&x, v, &[0.0, 0.0]).unwrap() <= g.eval(&x, v, &w).unwrap());
    }

    #[test]
    fn gradient_is_exact_on_affine_fields(
        angle in 0.0f64..std::f64::consts::TAU, xi in prop::array::uniform2(-3.0f64..3.0), c in -2.0f64..2.0,
    ) {
        let nu = unit(angle);
        let grid = Grid::new(&[0.2, 0.4], &[1.0, 1.0], &nu, 0.125).unwrap();
        let field: Vec<f64> = (0..grid.node_count())
            .map(|k| {
                let y = grid.node_position(k);
                xi[0] * y[0] + xi[1] * y[1] + c
            })
            .collect();
        let grad = apply_gradient(&grid, &field, 1).unwrap();
        for d in grad.chunks(2) {
            prop_assert!((d[0] - xi[0]).abs() < 1e-12 && (d[1] - xi[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_normals_share_nodes(angle in 0.0f64..std::f64::consts::TAU, x in prop::array::uniform2(-1.0f64..1.0)) {
        let nu = unit(angle);
        let minus = [-nu[0], -nu[1]];
        let (a, _) = build_cube_grid(&x, 1.0, &nu, 0.125, None, BoundaryMode::Dirichlet).unwrap();
        let (b, _) = build_cube_grid(&x, 1.0, &minus, 0.125, None, BoundaryMode::Dirichlet).unwrap();
        prop_assert_eq!(a.node_count(), b.node_count());
        for i in 0..a.node_count() {
            let y = a.node_position(i);
            let hit = (0..b.node_count()).any(|j| {
                let z = b.node_position(j);
                (y[0] - z[0]).abs() < 1e-12 && (y[1] - z[1]).abs() < 1e-12
            });
            prop_assert!(hit, "node {:?} missing", y);
        }
    }

    #[test]
    fn jump_datum_satisfies_the_constraint(angle in 0.0f64..std::f64::consts::TAU, eps in 0.125f64..0.3) {
        let nu = unit(angle);
        let x = [0.0, 0.0];
        let (grid, _) = build_cube_grid(&x, 1.0, &nu, eps / 4.0, Some(eps), BoundaryMode::Dirichlet)
            .unwrap();
        let d = jump_datum(&grid, &x, &nu, eps, &[1.0]).unwrap();
        let grad = apply_gradient(&grid, &d.u, 1).unwrap();
        // cells straddling |t| = 1/2 carry a slope and a corner with small v > 0
        let reach = 2.0 * std::f64::consts::SQRT_2 * grid.spacing() / eps;
        for cell in 0..grid.cell_count() {
            if grad[2 * cell].abs() + grad[2 * cell + 1].abs() > 0.0 {
                let v: Vec<f64> = grid.cell_corners(cell).iter().map(|&k| d.v[k]).collect();
                prop_assert!(v.iter().any(|x| *x == 0.0));
                prop_assert!(v.iter().all(|x| *x <= reach));
            }
        }
    }

    #[test]
    fn energy_is_sandwiched(
        a in 0.2f64..4.0, b in 0.2f64..4.0, p in 1.5f64..3.5, eps in 0.1f64..1.0,
        seed in prop::collection::vec(0.1f64..5.0, 3),
    ) {
        let grid = square(0.125);
        let psi = PsiFunction::default();
        let state = random_state(grid.node_count(), &seed);
        let f = BulkIntegrand::new(checkerboard(a, b, 0.3), p).unwrap();
        let g = SurfaceIntegrand::new(laminate(b, a, 1.0), p).unwrap();
        let f1 = BulkIntegrand::homogeneous(1.0, p).unwrap();
        let g1 = SurfaceIntegrand::homogeneous(1.0, p).unwrap();
        let e = evaluate_energy(&grid, &f, &g, &psi, eps, &state).unwrap();
        let e1 = evaluate_energy(&grid, &f1, &g1, &psi, eps, &state).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let tol = 1.0 + 1e-12;
        prop_assert!(lo * e1.bulk <= e.bulk * tol && e.bulk <= hi * e1.bulk * tol);
        prop_assert!(lo * e1.surface <= e.surface * tol && e.surface <= hi * e1.surface * tol);
    }

    #[test]
    fn truncating_v_never_increases_energy(
        p in 1.5f64..3.5, eps in 0.1f64..1.0, seed in prop::collection::vec(0.1f64..5.0, 3),
    ) {
        let grid = square(0.125);
        let psi = PsiFunction::default();
        let f = BulkIntegrand::new(checkerboard(1.0, 3.0, 0.3), p).unwrap();
        let g = SurfaceIntegrand::homogeneous(1.0, p).unwrap();
        let raw = raw_state(grid.node_count(), &seed);
        let model = EnergyModel::new(&grid, 1, &f, &g, &psi, eps).unwrap();
        let mut clamped = raw.clone();
        clamped.clamp_v();
        let before = model.evaluate_unchecked(&raw).total;
        let after = model.evaluate(&clamped).unwrap().total;
        prop_assert!(after <= before * (1.0 + 1e-12));
    }

    #[test]
    fn rescaling_identity(eps in 0.2f64..1.0, p in 1.5f64..3.0, seed in prop::collection::vec(0.1f64..5.0, 3)) {
        let base = checkerboard(1.0, 4.0, 0.5);
        let psi = PsiFunction::default();
        let (x, h) = ([0.3, -0.1], 0.0625);
        let fine = Grid::new(&x, &[1.0, 1.0], &[0.0, 1.0], h).unwrap();
        let coarse = Grid::new(&[x[0] / eps, x[1] / eps], &[1.0 / eps, 1.0 / eps], &[0.0, 1.0], h / eps)
            .unwrap();
        prop_assume!(coarse.node_count() == fine.node_count());
        let state = random_state(fine.node_count(), &seed);
        let mut scaled = state.clone();
        scaled.u.iter_mut().for_each(|u| *u /= eps);
        let f_eps = BulkIntegrand::new(Arc::new(Rescaled::new(base.clone(), eps).unwrap()), p).unwrap();
        let f_one = BulkIntegrand::new(base, p).unwrap();
        let bulk = |grid: &Grid, f: &BulkIntegrand, s: &PhaseFieldState| {
            EnergyModel::bulk_only(grid, 1, f).unwrap().with_psi(&psi).unwrap().evaluate(s).unwrap().bulk
        };
        let lhs = bulk(&fine, &f_eps, &state);
        let rhs = eps * eps * bulk(&coarse, &f_one, &scaled);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs(), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn quadratic_gradient_is_linear(
        seed_a in prop::collection::vec(0.1f64..5.0, 3), seed_b in prop::collection::vec(0.1f64..5.0, 3),
    ) {
        let grid = square(0.125);
        let psi = PsiFunction::default();
        let f = BulkIntegrand::new(checkerboard(1.0, 3.0, 0.3), 2.0).unwrap();
        let g = SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap();
        let nodes = grid.node_count();
        let with_u = |u: Vec<f64>| PhaseFieldState { m: 1, u, v: vec![1.0; nodes] };
        let a = random_state(nodes, &seed_a).u;
        let b = random_state(nodes, &seed_b).u;
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let gu = |s: PhaseFieldState| energy_gradient(&grid, &f, &g, &psi, 0.5, &s, None).unwrap().0;
        let (ga, gb, gs, g0) = (gu(with_u(a)), gu(with_u(b)), gu(with_u(sum)), gu(with_u(vec![0.0; nodes])));
        for i in 0..nodes {
            prop_assert!((gs[i] - (ga[i] + gb[i] - g0[i])).abs() <= 1e-12 * (1.0 + gs[i].abs()));
        }
    }

    #[test]
    fn dp_oracle_matches_brute_force(
        data in prop::collection::vec(-2.0f64..2.0, 2..=12), alpha in 0.01f64..2.0, beta in 0.0f64..1.0,
    ) {
        let dp = ms1d_dp_oracle(&data, 2.0, 2.0, alpha, beta).unwrap();
        let bf = ms1d_brute_force(&data, 2.0, 2.0, alpha, beta).unwrap();
        prop_assert_eq!(dp.value.to_bits(), bf.value.to_bits());
        prop_assert_eq!(dp.jumps, bf.jumps);
    }

    #[test]
    fn limit_fit_recovers_exact_models(l in -5.0f64..5.0, c in -5.0f64..5.0, r0 in 1.0f64..4.0) {
        let r: Vec<f64> = (0..5).map(|k| r0 * 2f64.powi(k)).collect();
        let y: Vec<f64> = r.iter().map(|r| l + c / r).collect();
        let fit = extrapolate_limit(&r, &y).unwrap();
        prop_assert!((fit.limit - l).abs() < 1e-9 && (fit.rate - c).abs() < 1e-9);
    }

    #[test]
    fn random_windows_are_deterministic(seed in 0u64..1000, master in 0u64..1000, lo in -20i64..20) {
        let spec = RandomFieldSpec::new(vec![1.0, 4.0], vec![0.3, 0.7], master).unwrap();
        let window = [(lo, lo + 6), (lo - 3, lo + 2)];
        let a = window_values(&spec, seed, &window).unwrap();
        prop_assert_eq!(&a, &window_values(&spec, seed, &window).unwrap());
        prop_assert!(a.iter().all(|v| *v == 1.0 || *v == 4.0));
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn profile_is_monotone_and_bounded(p in 1.3f64..4.0, l in 1.0f64..10.0) {
        let nodes = |l: f64| (50.0 * l) as usize + 1;
        let h = 1.0 / 50.0;
        let (l0, l1) = ((l / h).round() * h, (2.0 * l / h).round() * h);
        let a = profile_1d_value(p, l0, nodes(l0)).unwrap();
        let b = profile_1d_value(p, l1, nodes(l1)).unwrap();
        prop_assert!(b <= a + 1e-12, "{} {}", a, b);
        prop_assert!(b >= (p - 1.0).powf((1.0 - p) / p));
    }

    #[test]
    fn bulk_cell_respects_its_bounds(a in 0.5f64..4.0, b in 0.5f64..4.0, xi in prop::array::uniform2(-2.0f64..2.0)) {
        let f = BulkIntegrand::new(checkerboard(a, b, 0.25), 2.0).unwrap();
        let r = bulk_cell_value(&f, &xi, &[0.0, 0.0], 1.0, 0.0625, &SolveOptions::default()).unwrap();
        let norm = xi[0] * xi[0] + xi[1] * xi[1];
        prop_assert!(r.value <= a.max(b) * norm + 1e-9);
        prop_assert!(r.value >= a.min(b) * norm * (1.0 - 1e-9));
        prop_assert!(r.diagnostics.max_increase() <= 1e-12 * r.value.max(1.0));
    }

    #[test]
    fn surface_solves_keep_data_box_and_determinism(angle in 0.0f64..std::f64::consts::TAU, mixed in any::<bool>()) {
        let nu = unit(angle);
        let (eps, h) = (0.25, 0.0625);
        let mode = if mixed { BoundaryMode::Mixed } else { BoundaryMode::Dirichlet };
        let g = SurfaceIntegrand::new(checkerboard(1.0, 2.0, 0.5), 2.0).unwrap();
        let f = BulkIntegrand::homogeneous(1.0, 2.0).unwrap();
        let psi = PsiFunction::default();
        let opts = SolveOptions::default();
        let run = || surface_cell_value(&g, &f, &psi, &nu, &[0.0, 0.0], 1.0, eps, h, mode, &DEFAULT_LADDER, &opts)
            .unwrap();
        let r = run();
        let (grid, mask) = build_cube_grid(&[0.0, 0.0], 1.0, &nu, h, Some(eps), mode).unwrap();
        let datum = jump_datum(&grid, &[0.0, 0.0], &nu, eps, &[1.0]).unwrap();
        for (i, fixed) in mask.fixed().iter().enumerate() {
            if *fixed {
                prop_assert_eq!(r.state.u[i].to_bits(), datum.u[i].to_bits());
                prop_assert_eq!(r.state.v[i].to_bits(), datum.v[i].to_bits());
            }
        }
        prop_assert!(r.state.v.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(r.ladder_value_monotone(1e-9));
        prop_assert!(r.diagnostics.max_increase() <= 1e-12 * r.value.max(1.0));
        let upper = evaluate_energy(&grid, &f, &g, &psi, eps, &datum).unwrap().surface;
        prop_assert!(r.value <= upper * (1.0 + 1e-12));
        let again = run();
        prop_assert_eq!(r.value.to_bits(), again.value.to_bits());
        prop_assert_eq!(&r.state, &again.state);
    }

    #[test]
    fn fidelity_values_are_bounded(amp in prop::collection::vec(-2.0f64..2.0, 4)) {
        let nodes = 33;
        let data: Vec<f64> = (0..nodes)
            .map(|i| {
                let x = i as f64 / (nodes - 1) as f64;
                amp.iter().enumerate().map(|(k, a)| a * (k as f64 * 3.0 * x).cos()).sum()
            })
            .collect();
        let h = 1.0 / (nodes - 1) as f64;
        let bound: f64 = h * data.iter().map(|d| d * d).sum::<f64>();
        let problem = FidelityProblem {
            data,
            extents: vec![1.0],
            q: 2.0,
            eps_list: vec![0.25, 0.125],
            f: BulkIntegrand::homogeneous(1.0, 2.0).unwrap(),
            g: SurfaceIntegrand::homogeneous(1.0, 2.0).unwrap(),
            psi: PsiFunction::default(),
            opts: SolveOptions::default(),
        };
        for level in at_fidelity_minimize(&problem).unwrap() {
            prop_assert!(level.value >= 0.0 && level.value <= bound * (1.0 + 1e-12) + 1e-15);
        }
    }
}

#[test]
fn affine_datum_is_a_bulk_competitor() {
    let f = BulkIntegrand::homogeneous(2.0, 3.0).unwrap();
    let grid = square(0.125);
    let d = affine_datum(&grid, &[1.0, -0.5], 1).unwrap();
    let e = EnergyModel::bulk_only(&grid, 1, &f)
        .unwrap()
        .evaluate(&d)
        .unwrap();
    let expected = 2.0 * (1.25f64).powf(1.5);
    assert!((e.bulk - expected).abs() < 1e-12, "{}", e.bulk);
}
