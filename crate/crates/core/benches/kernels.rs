//! Sequential vs parallel kernel drivers at the shapes the desk-scale
//! models actually run, plus whole-model forward passes. On a single
//! hardware core the two drivers should track each other closely; the
//! comparison is the point of the suite.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use cpnet_core::models::{build_from_desc, Fraction, ModelDesc, UNetConfig, Variant};
use cpnet_core::tensor::kernels;
use cpnet_core::tensor::Tensor;
use std::time::Duration;

fn mk(dims: &[usize], phase: usize) -> Tensor<f32> {
    Tensor::from_fn(dims, |i| ((i * 31 + phase) % 97) as f32 * 0.02 - 0.97)
}

/// (cin, cout, spatial) of each conv stage in the 64x64 baseline.
const CONV_SHAPES: [(usize, usize, usize); 4] =
    [(12, 32, 64), (32, 64, 32), (64, 128, 16), (128, 256, 8)];

fn bench_conv2d(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_fwd");
    g.warm_up_time(Duration::from_millis(300)).measurement_time(Duration::from_secs(2));
    for (cin, cout, hw) in CONV_SHAPES {
        let x = mk(&[4, cin, hw, hw], 1);
        let w = mk(&[cout, cin, 3, 3], 2);
        let b = mk(&[cout], 3);
        let macs = (4 * cin * cout * 9 * hw * hw) as u64;
        g.throughput(Throughput::Elements(macs));
        let id = format!("{cin}x{cout}@{hw}");
        g.bench_with_input(BenchmarkId::new("seq", &id), &(), |bench, _| {
            bench.iter(|| kernels::seq::conv2d_fwd(&x, &w, &b, 1, 1).unwrap())
        });
        #[cfg(feature = "parallel")]
        g.bench_with_input(BenchmarkId::new("par", &id), &(), |bench, _| {
            bench.iter(|| kernels::par::conv2d_fwd(&x, &w, &b, 1, 1).unwrap())
        });
    }
    g.finish();
}

fn bench_conv2d_bwd(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_bwd");
    g.warm_up_time(Duration::from_millis(300)).measurement_time(Duration::from_secs(2));
    for (cin, cout, hw) in [(12usize, 32usize, 64usize), (128, 256, 8)] {
        let x = mk(&[4, cin, hw, hw], 1);
        let w = mk(&[cout, cin, 3, 3], 2);
        let b = mk(&[cout], 3);
        let dy = kernels::conv2d_fwd(&x, &w, &b, 1, 1).unwrap();
        let macs = (4 * cin * cout * 9 * hw * hw) as u64;
        g.throughput(Throughput::Elements(macs));
        let id = format!("{cin}x{cout}@{hw}");
        g.bench_with_input(BenchmarkId::new("seq_x", &id), &(), |bench, _| {
            bench.iter(|| kernels::seq::conv2d_bwd_x(&dy, &w, x.dims(), 1, 1).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("seq_w", &id), &(), |bench, _| {
            bench.iter(|| kernels::seq::conv2d_bwd_w(&dy, &x, 3, 1, 1).unwrap())
        });
        #[cfg(feature = "parallel")]
        {
            g.bench_with_input(BenchmarkId::new("par_x", &id), &(), |bench, _| {
                bench.iter(|| kernels::par::conv2d_bwd_x(&dy, &w, x.dims(), 1, 1).unwrap())
            });
            g.bench_with_input(BenchmarkId::new("par_w", &id), &(), |bench, _| {
                bench.iter(|| kernels::par::conv2d_bwd_w(&dy, &x, 3, 1, 1).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_convt2d(c: &mut Criterion) {
    let mut g = c.benchmark_group("convt2d_fwd");
    g.warm_up_time(Duration::from_millis(300)).measurement_time(Duration::from_secs(2));
    for (cin, cout, hw) in [(256usize, 128usize, 8usize), (64, 32, 32)] {
        let x = mk(&[4, cin, hw, hw], 1);
        let w = mk(&[cin, cout, 2, 2], 2);
        let b = mk(&[cout], 3);
        let macs = (4 * cin * cout * 4 * hw * hw) as u64;
        g.throughput(Throughput::Elements(macs));
        let id = format!("{cin}x{cout}@{hw}");
        g.bench_with_input(BenchmarkId::new("seq", &id), &(), |bench, _| {
            bench.iter(|| kernels::seq::convt2d_fwd(&x, &w, &b, 2, 0).unwrap())
        });
        #[cfg(feature = "parallel")]
        g.bench_with_input(BenchmarkId::new("par", &id), &(), |bench, _| {
            bench.iter(|| kernels::par::convt2d_fwd(&x, &w, &b, 2, 0).unwrap())
        });
    }
    g.finish();
}

fn bench_model_forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("model_forward");
    g.warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(4))
        .sample_size(10);
    for (name, variant, shift) in [
        ("baseline", Variant::Baseline, false),
        ("full_split_shift", Variant::FullSplit, true),
    ] {
        let desc = ModelDesc {
            variant,
            cfg: UNetConfig::default(),
            shift_enabled: shift,
            shift_fraction: Fraction::new(1, 4).unwrap(),
        };
        let model = build_from_desc::<f32>(&desc, 11).unwrap();
        let clip: Vec<Tensor<f32>> = (0..4).map(|f| mk(&[1, 3, 64, 64], f)).collect();
        g.bench_function(name, |bench| {
            bench.iter(|| model.forward_predict(&clip).unwrap())
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_conv2d_bwd,
    bench_convt2d,
    bench_model_forward
);
criterion_main!(benches);
