use std::hint::black_box;

use anocon::constraints::{
    entropy_term, entropy_term_grad, log_barrier_ext, pixel_softmax, size_term, size_term_grad,
    ConstraintKind, ConstraintSpec, TSchedule,
};
use anocon::maskops;
use anocon::metrics::{auroc, pr_curve};
use anocon::nn::layers::Conv2d;
use anocon::nn::Feat;
use anocon::vae::{ModelConfig, VaeModel};
use anocon_bench::{random_grid, random_image, random_mask, random_scores};
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_log_barrier(c: &mut Criterion) {
    c.bench_function("log_barrier_ext 10k evals", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..10_000 {
                let z = -2.0 + i as f64 * 4e-4;
                acc += log_barrier_ext(black_box(z), 10.0).unwrap();
            }
            acc
        })
    });
}

fn bench_constraints(c: &mut Criterion) {
    let batch: Vec<_> = (0..16).map(|i| random_grid(i, 32, 32, 0.01, 0.99)).collect();
    let spec = ConstraintSpec {
        kind: ConstraintKind::LogBarrier,
        lambda_s: 1e3,
        lambda_h: 0.0,
        t: 10.0,
        t_schedule: TSchedule::Fixed,
    };
    c.bench_function("size_term+grad, 16x32x32 logbarrier", |b| {
        b.iter(|| {
            let v = size_term(black_box(&batch), &spec, 3).unwrap();
            let g = size_term_grad(&batch, &spec, 3).unwrap();
            (v, g)
        })
    });

    let raw: Vec<_> = (0..16).map(|i| random_grid(100 + i, 32, 32, -3.0, 3.0)).collect();
    let brain = random_mask(7, 32, 32, 0.7);
    let brains: Vec<&_> = (0..16).map(|_| &brain).collect();
    let espec = ConstraintSpec {
        kind: ConstraintKind::Entropy,
        lambda_s: 0.0,
        lambda_h: 0.1,
        t: 1.0,
        t_schedule: TSchedule::Fixed,
    };
    c.bench_function("entropy_term+grad, 16x32x32", |b| {
        b.iter(|| {
            let v = entropy_term(black_box(&raw), &brains, &espec).unwrap();
            let g = entropy_term_grad(&raw, &brains, &espec).unwrap();
            (v, g)
        })
    });
    c.bench_function("pixel_softmax 32x32", |b| {
        b.iter(|| pixel_softmax(black_box(&raw[0]), &brain).unwrap())
    });
}

fn bench_maskops(c: &mut Criterion) {
    let img = random_image(3, 64, 64);
    c.bench_function("otsu_threshold 64x64", |b| {
        b.iter(|| maskops::otsu_threshold(black_box(&img)).unwrap())
    });
    c.bench_function("brain_mask 64x64", |b| {
        b.iter(|| maskops::brain_mask(black_box(&img)).unwrap())
    });
}

fn bench_metrics(c: &mut Criterion) {
    let (scores, labels) = random_scores(11, 100_000);
    c.bench_function("pr_curve 100k pixels", |b| {
        b.iter(|| pr_curve(black_box(&scores), &labels).unwrap())
    });
    c.bench_function("auroc 100k pixels", |b| {
        b.iter(|| auroc(black_box(&scores), &labels).unwrap())
    });
}

fn bench_network(c: &mut Criterion) {
    let conv = Conv2d {
        ci: 8,
        co: 8,
        k: 3,
        stride: 1,
        pad: 1,
        w: 0..8 * 8 * 9,
        b: 8 * 8 * 9..8 * 8 * 9 + 8,
    };
    let params: Vec<f32> = (0..conv.b.end).map(|i| (i as f32 * 0.01).sin()).collect();
    let x: Feat<f32> = Feat::from_vec(
        8,
        32,
        32,
        (0..8 * 1024).map(|i| (i as f32 * 0.1).cos()).collect(),
    );
    c.bench_function("conv2d 8->8 32x32 forward", |b| {
        b.iter(|| conv.forward(black_box(&params), &x))
    });
    let gout = conv.forward(&params, &x);
    c.bench_function("conv2d 8->8 32x32 backward", |b| {
        let mut gp = vec![0.0f32; params.len()];
        b.iter(|| conv.backward(black_box(&params), &x, &gout, &mut gp))
    });

    let model: VaeModel<f32> = VaeModel::new(ModelConfig::desk(), 0).unwrap();
    let img = random_image(5, 64, 64);
    let feat = model.image_to_feat(&img).unwrap();
    c.bench_function("encoder_forward desk 64x64", |b| {
        b.iter(|| model.encoder_forward(black_box(feat.clone())))
    });
    let cache = model.encoder_forward(feat);
    c.bench_function("decoder_forward desk 64x64", |b| {
        b.iter(|| model.decoder_forward(black_box(&cache.mu)).unwrap())
    });
    c.bench_function("gradcam saliency pass desk", |b| {
        b.iter(|| model.grad_mu_sum_at_block(black_box(&cache), 1).unwrap())
    });
}

criterion_group!(
    benches,
    bench_log_barrier,
    bench_constraints,
    bench_maskops,
    bench_metrics,
    bench_network
);
criterion_main!(benches);
