use std::time::Instant;

use anocon::constraints::ConstraintKind;
use anocon::inference::{self, ThresholdRule};
use anocon::metrics;
use anocon::synthdata::{self, SynthConfig};
use anocon::trainer::{desk_config, train, Method, TrainConfig, TrainSet};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train_patients: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let block: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);

    let train_volumes = synthdata::generate(&SynthConfig::normal(0, train_patients, 10, 64));
    let data = TrainSet::from_volumes(&train_volumes).unwrap();
    let test_volumes = synthdata::generate(&SynthConfig::anomalous(1000, 10, 10, 64));
    println!("train {} slices, lr {lr}, block {block}", data.images.len());

    let mut configs: Vec<(&str, TrainConfig)> = Vec::new();
    configs.push(("vae", desk_config(Method::Vae, 0)));
    let mut am1 = desk_config(Method::AmCons, 0);
    am1.block_s = 1;
    configs.push(("amcons-b1", am1));
    let mut am2 = am1;
    am2.block_s = 2;
    configs.push(("amcons-b2", am2));
    let mut am0 = am1;
    am0.constraint.lambda_h = 0.0;
    configs.push(("amcons-lam0-b1", am0));
    let mut am02 = am0;
    am02.block_s = 2;
    configs.push(("amcons-lam0-b2", am02));
    configs.push(("gradcamcons-logbarrier", desk_config(Method::GradCamCons, 0)));
    let mut gc_l2 = desk_config(Method::GradCamCons, 0);
    gc_l2.constraint.kind = ConstraintKind::L2Image;
    configs.push(("gradcamcons-l2image", gc_l2));

    for (name, mut cfg) in configs {
        cfg.epochs = epochs;
        cfg.lr = lr;
        if block > 0 && cfg.method == Method::GradCamCons {
            cfg.block_s = block;
        }
        let t0 = Instant::now();
        let out = train(&cfg, &data).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        let slices =
            inference::eval_slices(&test_volumes, &out.model, cfg.method, cfg.block_s).unwrap();
        let report = metrics::evaluate(&slices, &ThresholdRule::Op, None).unwrap();
        let first = out.history.rows.first().unwrap();
        let last = out.history.rows.last().unwrap();
        println!(
            "{name:22} auprc {:.3} auroc {:.3} dice {:.3} overlap {:5.1}% | recon {:.4}->{:.4} kl {:.3} cons {:.4} H {:.5}->{:.5} | {:.0}s",
            report.auprc,
            report.auroc,
            report.best_dice,
            report.overlap_pct,
            first.recon,
            last.recon,
            last.kl,
            last.constraint,
            first.entropy,
            last.entropy,
            train_secs
        );
    }
}
