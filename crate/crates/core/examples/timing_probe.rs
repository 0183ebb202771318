use std::time::Instant;

use anocon::nn::layers::Conv2d;
use anocon::nn::Feat;
use anocon::synthdata::{self, SynthConfig};
use anocon::trainer::{desk_config, train, Method, TrainSet};
use anocon::vae::{ModelConfig, VaeModel};

fn time<F: FnMut()>(label: &str, iters: usize, flops_per_iter: f64, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..iters {
        f();
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{label}: {:.3} ms/iter, {:.2} GFLOP/s",
        dt * 1e3 / iters as f64,
        flops_per_iter * iters as f64 / dt / 1e9
    );
}

fn main() {
    // Raw conv microbenchmarks.
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
    let x: Feat<f32> = Feat::from_vec(8, 32, 32, (0..8 * 1024).map(|i| (i as f32 * 0.1).cos()).collect());
    let flops = 2.0 * 9.0 * 8.0 * 8.0 * 1024.0;
    time("conv 8->8 @32x32 s1 fwd", 2000, flops, || {
        std::hint::black_box(conv.forward(&params, &x));
    });
    let gout = conv.forward(&params, &x);
    let mut gp = vec![0.0f32; params.len()];
    time("conv 8->8 @32x32 s1 bwd", 1000, 2.0 * flops, || {
        std::hint::black_box(conv.backward(&params, &x, &gout, &mut gp));
    });

    let conv2 = Conv2d {
        ci: 64,
        co: 64,
        k: 3,
        stride: 1,
        pad: 1,
        w: 0..64 * 64 * 9,
        b: 64 * 64 * 9..64 * 64 * 9 + 64,
    };
    let params2: Vec<f32> = (0..conv2.b.end).map(|i| (i as f32 * 0.01).sin()).collect();
    let x2: Feat<f32> = Feat::from_vec(64, 4, 4, (0..64 * 16).map(|i| (i as f32 * 0.1).cos()).collect());
    let flops2 = 2.0 * 9.0 * 64.0 * 64.0 * 16.0;
    time("conv 64->64 @4x4 s1 fwd", 5000, flops2, || {
        std::hint::black_box(conv2.forward(&params2, &x2));
    });

    // Model-level timings.
    let model: VaeModel<f32> = VaeModel::new(ModelConfig::desk(), 0).unwrap();
    let volumes = synthdata::generate(&SynthConfig::normal(0, 1, 1, 64));
    let img = &volumes[0].slices[0];
    let feat = model.image_to_feat(img).unwrap();
    time("encoder_forward", 200, 7e6, || {
        std::hint::black_box(model.encoder_forward(feat.clone()));
    });
    let cache = model.encoder_forward(feat.clone());
    let z: Vec<f32> = cache.mu.clone();
    time("decoder_forward", 200, 12.2e6, || {
        std::hint::black_box(model.decoder_forward(&z).unwrap());
    });
    let dec = model.decoder_forward(&z).unwrap();
    let mut gparams = vec![0.0f32; model.n_params()];
    let gx = dec.reconstruction().clone();
    time("decoder_backward", 200, 24e6, || {
        std::hint::black_box(model.decoder_backward(&dec, &gx, &mut gparams));
    });
    let gmu = vec![1.0f32; 32];
    time("encoder_backward", 200, 14e6, || {
        std::hint::black_box(model.encoder_backward(&cache, &gmu, &gmu, None, &mut gparams));
    });
    time("grad_mu_sum_at_block(1)", 200, 14e6, || {
        std::hint::black_box(model.grad_mu_sum_at_block(&cache, 1).unwrap());
    });

    // Full epoch timing.
    let volumes = synthdata::generate(&SynthConfig::normal(0, 40, 10, 64));
    let data = TrainSet::from_volumes(&volumes).unwrap();
    for method in [Method::Vae, Method::AmCons] {
        let mut cfg = desk_config(method, 0);
        cfg.epochs = 2;
        let t0 = Instant::now();
        let out = train(&cfg, &data).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "{}: {:.2} s/epoch (last total {:.4})",
            method.name(),
            dt / cfg.epochs as f64,
            out.history.rows.last().unwrap().total
        );
    }
}
