use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sim_core::{extract_rotation, Mat3};

fn rotation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let moments: Vec<Mat3> = (0..1024)
        .map(|_| Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) + Mat3::identity() * 0.5)
        .collect();
    let mut next = 0usize;
    c.bench_function("extract_rotation", |b| {
        b.iter(|| {
            let extraction = extract_rotation(&moments[next & 1023]);
            next = next.wrapping_add(1);
            extraction
        })
    });
}

criterion_group!(benches, rotation);
criterion_main!(benches);
