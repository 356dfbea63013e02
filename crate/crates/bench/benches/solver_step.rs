use criterion::{criterion_group, criterion_main, Criterion};
use sim_bench::{box_scene, tissue_params};
use sim_core::{SimConfig, Solver, Vec3};

fn solver_step(c: &mut Criterion) {
    let config = SimConfig::default();
    let mut group = c.benchmark_group("solver_step");
    group.sample_size(20);
    for (label, extent) in [
        ("1k_particles", Vec3::new(0.0425, 0.02, 0.0175)),
        ("10k_particles", Vec3::new(0.112, 0.04, 0.035)),
    ] {
        let mut scene = box_scene(extent, 0.0025, tissue_params());
        let mut solver = Solver::new();
        group.bench_function(label, |b| {
            b.iter(|| {
                solver
                    .step(&mut scene.system, &scene.constraints, &config)
                    .expect("step")
            })
        });
    }
    group.finish();
}

criterion_group!(benches, solver_step);
criterion_main!(benches);
