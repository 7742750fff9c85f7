// cargo bench -p hypojump-bench

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use hypojump::model::{builtin, ModelSource, SdeModel};
use hypojump::quad::QuadConfig;
use hypojump::simulate::{simulate_path, SimulationScheme};
use hypojump::symmetrize::{KappaFn, KernelTransform};
use hypojump::vecfield::DomainBox;
use hypojump::RngStream;

fn example(name: &str) -> SdeModel {
    match builtin(name).unwrap() {
        ModelSource::Sde(m) => m,
        ModelSource::Kinetic(k) => k.to_sde().unwrap(),
    }
}

fn bench_defect(c: &mut Criterion) {
    let m = example("example2");
    let h = m.hierarchy(2, false).unwrap();
    c.bench_function("spanning defect (example2, j0=2)", |b| {
        b.iter(|| h.defect(black_box(&[0.3, -0.7])).unwrap())
    });
    let domain = DomainBox::cube(2, -5.0, 5.0);
    c.bench_function("uniform check 500 points", |b| {
        b.iter(|| hypojump::vecfield::uniform_check(&h, &domain, 500, 1e-6, 0).unwrap())
    });
}

fn bench_path(c: &mut Criterion) {
    let m = example("example1");
    let scheme = SimulationScheme::default_for(&m, 1);
    c.bench_function("path example1 (T=1, h=1e-3, flows)", |b| {
        let mut stream = 0u64;
        b.iter(|| {
            stream += 1;
            let mut rng = RngStream::new(1, stream);
            simulate_path(&m, &scheme, &[0.0], 1.0, &mut rng).unwrap()
        })
    });
    let m4 = example("example4");
    let scheme4 = SimulationScheme::default_for(&m4, 2);
    c.bench_function("path example4 (T=1, h=1e-3, flows)", |b| {
        let mut stream = 0u64;
        b.iter(|| {
            stream += 1;
            let mut rng = RngStream::new(2, stream);
            simulate_path(&m4, &scheme4, &[0.2, -0.4], 1.0, &mut rng).unwrap()
        })
    });
}

fn bench_transform(c: &mut Criterion) {
    let kernel: KappaFn =
        std::sync::Arc::new(|_x: &[f64], z: &[f64]| 1.5 + 0.4 * (3.0 * z[0]).cos());
    let t = KernelTransform::new(kernel, 0.7, 1.0, 2.0, QuadConfig::default()).unwrap();
    c.bench_function("psi via cached ray", |b| {
        let ray = t.cached_ray(&[], &[1.0]).unwrap();
        let mut r = 0.1;
        b.iter(|| {
            r = if r > 0.9 { 0.1 } else { r + 1e-4 };
            ray.psi(black_box(r)).unwrap()
        })
    });
    c.bench_function("psi via direct quadrature", |b| {
        let ray = t.ray(&[], &[1.0]);
        b.iter(|| ray.psi(black_box(0.37)).unwrap())
    });
    c.bench_function("cached ray build", |b| {
        b.iter(|| t.cached_ray(&[], &[1.0]).unwrap())
    });
}

criterion_group!(benches, bench_defect, bench_path, bench_transform);
criterion_main!(benches);
