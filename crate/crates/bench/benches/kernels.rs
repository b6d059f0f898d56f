use criterion::{black_box, criterion_group, criterion_main, Criterion};

use loopbif::continuation::{trace, ContOptions};
use loopbif::eigen::{reduced_principal, Side};
use loopbif::nsolve::{deflated_solve, newton_solve, standard_seeds};
use loopbif::SolveOptions;
use loopbif_bench::dirichlet_ctx;

fn eigen(c: &mut Criterion) {
    for n in [200, 1000] {
        let ctx = dirichlet_ctx(n);
        c.bench_function(&format!("reduced_principal n={n}"), |b| {
            b.iter(|| reduced_principal(black_box(&ctx.lap), black_box(&ctx.field.a_vals)).unwrap())
        });
    }
}

fn solve(c: &mut Criterion) {
    let ctx = dirichlet_ctx(200);
    let red = reduced_principal(&ctx.lap, &ctx.field.a_vals).unwrap();
    let u0: Vec<f64> = red.phi_plus.iter().map(|p| 50.0 * p).collect();
    let opts = SolveOptions::default();
    c.bench_function("newton_solve n=200", |b| b.iter(|| newton_solve(black_box(&u0), 0.0, 1e-2, &ctx, &opts)));
    let seeds = standard_seeds(ctx.n(), Some(&red.phi_plus), 1);
    let zero = vec![vec![0.0; ctx.n()]];
    c.bench_function("deflated_solve 20 seeds n=200", |b| b.iter(|| deflated_solve(&zero, 0.0, 1e-2, &ctx, &seeds, &opts)));
}

fn continuation(c: &mut Criterion) {
    let ctx = dirichlet_ctx(100);
    let red = reduced_principal(&ctx.lap, &ctx.field.a_vals).unwrap();
    let pair = red.at_eps(&ctx.spec, 1e-2);
    let opts = ContOptions::default();
    let mut g = c.benchmark_group("continuation");
    g.sample_size(10);
    g.bench_function("trace eps=1e-2 n=100", |b| b.iter(|| trace(&pair, Side::Plus, &ctx, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, eigen, solve, continuation);
criterion_main!(benches);
