use loopbif::eigen::reduced_principal;
use loopbif::linalg::{dist_inf, norm_inf};
use loopbif::nsolve::{deflated_solve, default_sep_tol, seed_ladder};
use loopbif::*;
use loopbif_oracles::{dense_weighted_eig, exhaustive_small_solutions};

const PI: f64 = std::f64::consts::PI;
const SIN3: &str = "sin(3*3.141592653589793*x)";

fn lap_and_field(n: usize, bc: Bc, a: &str, b: &str) -> (Grid, DiscreteLaplacian, WeightField) {
    let grid = build_grid(1, n, &[(0.0, 1.0)], bc).unwrap();
    let lap = assemble_laplacian(&grid);
    let field = sample_weights(a, b, &grid).unwrap();
    (grid, lap, field)
}

#[test]
fn dense_constant_weight_recovers_pi_squared() {
    let (_, lap, field) = lap_and_field(50, Bc::Dirichlet, "1", "0");
    let res = dense_weighted_eig(&lap, &field.a_vals).unwrap();
    let h = 1.0 / 51.0;
    let exact_discrete = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    let mu = res.mu_plus().unwrap();
    assert!((mu - exact_discrete).abs() < 1e-9 * exact_discrete);
    assert!((mu - PI * PI).abs() < 1e-2, "{mu}");
    for r in &res.residuals {
        assert!(*r <= 1e-10 * lap.max_abs() * 10.0, "{r}");
    }
}

#[test]
fn dense_negative_weight_has_no_positive_principal() {
    let (_, lap, field) = lap_and_field(50, Bc::Dirichlet, "-1", "0");
    let res = dense_weighted_eig(&lap, &field.a_vals).unwrap();
    assert!(res.mu_plus().is_none());
    assert!(res.mu_minus().is_some());
}

#[test]
fn lanczos_matches_dense_for_sign_changing_weight() {
    for n in [50, 120] {
        let (_, lap, field) = lap_and_field(n, Bc::Dirichlet, SIN3, "0");
        let dense = dense_weighted_eig(&lap, &field.a_vals).unwrap();
        let red = reduced_principal(&lap, &field.a_vals).unwrap();
        let (mp, mm) = (dense.mu_plus().unwrap(), dense.mu_minus().unwrap());
        assert!((red.mu_plus - mp).abs() <= 1e-8 * mp.abs(), "n={n}: {} vs {mp}", red.mu_plus);
        assert!((red.mu_minus - mm).abs() <= 1e-8 * mm.abs(), "n={n}: {} vs {mm}", red.mu_minus);
        let phi = dense.vector_of(mp).unwrap();
        let scale = norm_inf(&red.phi_plus);
        let diff = red.phi_plus.iter().zip(phi).map(|(a, b)| (a / scale - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "eigenvector mismatch {diff}");
    }
}

#[test]
fn lanczos_matches_dense_neumann() {
    let (_, lap, field) = lap_and_field(40, Bc::Neumann, "cos(3.141592653589793*x) - 0.2", "0");
    let dense = dense_weighted_eig(&lap, &field.a_vals).unwrap();
    let red = reduced_principal(&lap, &field.a_vals).unwrap();
    let mp = dense.mu_plus().unwrap();
    assert!((red.mu_plus - mp).abs() <= 1e-8 * mp, "{} vs {mp}", red.mu_plus);
    assert_eq!(red.mu_minus, 0.0);
}

fn lattice_vs_deflation(n: usize, bc: Bc, a: &str, b: &str, lam: f64, u_cap: f64) -> (usize, usize, usize) {
    let grid = build_grid(1, n, &[(0.0, 1.0)], bc).unwrap();
    let field = sample_weights(a, b, &grid).unwrap();
    let ctx = Ctx::new(grid, field, NonlinSpec::prototype(0.5, 2.0));
    let oracle = exhaustive_small_solutions(&ctx, lam, 1e-2, u_cap, 1e-6);
    let zero = vec![0.0; ctx.n()];
    let seeds = seed_ladder(ctx.n(), None, 60, 7);
    let found = deflated_solve(&[zero.clone()], lam, 1e-2, &ctx, &seeds, &SolveOptions::default());
    let sep = default_sep_tol(&oracle);
    let nontrivial: Vec<&Vec<f64>> = oracle.iter().filter(|u| dist_inf(u, &zero) > sep).collect();
    let missed = nontrivial.iter().filter(|o| found.iter().all(|s| dist_inf(o, &s.u) > sep)).count();
    (nontrivial.len(), found.len(), missed)
}

#[test]
fn lattice_finds_zero_and_the_positive_solution() {
    let (oracle, found, missed) = lattice_vs_deflation(4, Bc::Dirichlet, "1", "1", 0.0, 60.0);
    assert_eq!(oracle, 1);
    assert!(found >= 1);
    assert_eq!(missed, 0);
}

#[test]
fn lattice_small_sign_changing_weight() {
    let (oracle, found, missed) = lattice_vs_deflation(5, Bc::Dirichlet, SIN3, "1", 5.0, 60.0);
    assert!(found >= oracle);
    assert_eq!(missed, 0);
}

#[test]
fn lattice_six_unknowns_needs_the_long_ladder() {
    let (oracle, found, missed) = lattice_vs_deflation(6, Bc::Dirichlet, SIN3, "1", 20.0, 60.0);
    assert!(oracle >= 3);
    assert!(found >= oracle);
    assert_eq!(missed, 0);
}
