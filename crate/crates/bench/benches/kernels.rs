use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cribmil_core::eval::roc_auc;
use cribmil_core::fft::fft2d_in_place;
use cribmil_core::nn::descriptor::patch_descriptor;
use cribmil_core::nn::model::slide_prob;
use cribmil_core::raster::Mask;
use cribmil_core::registration::{phase_correlate, translate_mask};
use cribmil_core::train::init_params;
use image::{Rgb, RgbImage};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fft(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [128usize, 512] {
        let data: Vec<Complex64> = (0..n * n).map(|_| Complex64::new(rng.random(), 0.0)).collect();
        c.bench_with_input(BenchmarkId::new("fft2d", n), &data, |b, d| {
            b.iter(|| {
                let mut x = d.clone();
                fft2d_in_place(&mut x, n, n, false);
                x
            })
        });
    }
    let a = Mask::from_fn(1536, 1536, |x, y| {
        let (u, v) = (x as f64 - 700.0, y as f64 - 800.0);
        u * u / 4.0e5 + v * v / 6.0e4 < 1.0
    });
    let b = translate_mask(&a, 17, -9);
    c.bench_function("phase_correlate_1536", |bch| bch.iter(|| phase_correlate(&a, &b).unwrap()));
}

fn descriptor(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = RgbImage::from_fn(256, 256, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
    c.bench_function("patch_descriptor_256", |b| b.iter(|| patch_descriptor(&img)));
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = init_params(3, 0);
    for k in [100usize, 2200] {
        let bag: Vec<[f64; 40]> = (0..k).map(|_| std::array::from_fn(|_| rng.random())).collect();
        c.bench_with_input(BenchmarkId::new("slide_forward", k), &bag, |b, bag| {
            b.iter(|| slide_prob(&params, bag, None).unwrap())
        });
    }
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.3)).collect();
    c.bench_function("roc_auc_10k", |b| b.iter(|| roc_auc(&scores, &labels).unwrap()));
}

criterion_group!(benches, fft, descriptor, attention, auc);
criterion_main!(benches);
