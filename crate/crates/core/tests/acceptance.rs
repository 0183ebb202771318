//! Acceptance suite: one test per criterion, each asserting the documented
//! tolerance and printing a summary line (visible with `--nocapture`).
//!
//! Criteria 6 and 7 share one desk-scale training benchmark (seed 0, 30
//! epochs, 3 repetitions per configuration) built lazily behind a lock so
//! the expensive part runs exactly once per process.

use std::sync::OnceLock;
use std::time::Instant;

use anocon::attention;
use anocon::constraints::{
    entropy_term, entropy_term_grad, entropy_term_sum, entropy_term_sum_grad, log_barrier_ext,
    log_barrier_ext_deriv, pixel_softmax, shannon_entropy, size_term, size_term_grad,
    ConstraintKind, ConstraintSpec, TSchedule,
};
use anocon::grid::Grid;
use anocon::inference::{self, fit_threshold, ThresholdContext, ThresholdRule};
use anocon::maskops;
use anocon::metrics::{self, EvalReport, EvalSlice};
use anocon::synthdata::{self, SynthConfig};
use anocon::tensorio::{BinaryMask, Image2D};
use anocon::trainer::{self, desk_config, Method, TrainSet};
use anocon::vae::{
    kl_divergence, kl_divergence_grad, recon_loss, recon_loss_grad, ModelConfig, ReconKind,
    VaeModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

// ---------------------------------------------------------------------
// Criterion 1: extended log-barrier continuity and positive gradient.
// ---------------------------------------------------------------------

#[test]
fn criterion_1_log_barrier_extension() {
    let start = Instant::now();
    for &t in &[1.0f64, 5.0, 10.0, 25.0, 50.0] {
        let z = -1.0 / (t * t);
        let lower = -(1.0 / t) * (-z).ln();
        let upper = t * z - (1.0 / t) * (1.0 / (t * t)).ln() + 1.0 / t;
        assert!(
            (lower - upper).abs() < 1e-9,
            "value discontinuity at t={t}: {lower} vs {upper}"
        );
        let lower_d = -1.0 / (t * z);
        assert!(
            (lower_d - t).abs() < 1e-9,
            "derivative discontinuity at t={t}"
        );
        assert!((log_barrier_ext(z, t).unwrap() - lower).abs() < 1e-12);
        assert!((log_barrier_ext_deriv(z, t).unwrap() - t).abs() < 1e-12);
    }
    // Strictly positive derivative across the satisfied and violated range.
    for i in 0..100 {
        let z = -3.0 + i as f64 * 0.05;
        for &t in &[1.0, 10.0, 50.0] {
            assert!(
                log_barrier_ext_deriv(z, t).unwrap() > 0.0,
                "non-positive gradient at z={z}, t={t}"
            );
        }
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 1.0, "took {dt:?}, budget 1 s");
    println!("criterion 1: PASS (log-barrier continuity <1e-9, gradient >0; {dt:?})");
}

// ---------------------------------------------------------------------
// Criterion 2: analytic gradients match central finite differences.
// ---------------------------------------------------------------------

#[test]
fn criterion_2_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    // Constraint terms at rel err < 1e-4.
    let attn: Vec<Grid> = (0..3)
        .map(|_| Grid::from_vec(4, 4, (0..16).map(|_| rng.random_range(0.05..0.95)).collect()))
        .collect();
    for kind in [
        ConstraintKind::L2Pixel,
        ConstraintKind::L2Image,
        ConstraintKind::LogBarrier,
    ] {
        let spec = ConstraintSpec {
            kind,
            lambda_s: 500.0,
            lambda_h: 0.0,
            t: 10.0,
            t_schedule: TSchedule::Fixed,
        };
        let grads = size_term_grad(&attn, &spec, 7).unwrap();
        let h = 1e-6;
        for img in 0..attn.len() {
            for i in 0..16 {
                let mut plus = attn.clone();
                plus[img].values_mut()[i] += h;
                let mut minus = attn.clone();
                minus[img].values_mut()[i] -= h;
                let fd = (size_term(&plus, &spec, 7).unwrap()
                    - size_term(&minus, &spec, 7).unwrap())
                    / (2.0 * h);
                assert!(
                    rel_err(fd, grads[img].values()[i]) < 1e-4,
                    "{kind:?} image {img} pixel {i}"
                );
            }
        }
    }

    let brain = BinaryMask::from_vec(4, 4, (0..16).map(|i| i % 5 != 0).collect());
    let raw: Vec<Grid> = (0..3)
        .map(|_| Grid::from_vec(4, 4, (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()))
        .collect();
    let brains: Vec<&BinaryMask> = raw.iter().map(|_| &brain).collect();
    let espec = ConstraintSpec {
        kind: ConstraintKind::Entropy,
        lambda_s: 0.0,
        lambda_h: 0.1,
        t: 1.0,
        t_schedule: TSchedule::Fixed,
    };
    for form in 0..2 {
        let value = |batch: &[Grid]| {
            let b: Vec<&BinaryMask> = batch.iter().map(|_| &brain).collect();
            if form == 0 {
                entropy_term(batch, &b, &espec).unwrap()
            } else {
                entropy_term_sum(batch, &b, &espec).unwrap()
            }
        };
        let grads = if form == 0 {
            entropy_term_grad(&raw, &brains, &espec).unwrap()
        } else {
            entropy_term_sum_grad(&raw, &brains, &espec).unwrap()
        };
        let h = 1e-6;
        for img in 0..raw.len() {
            for i in 0..16 {
                let mut plus = raw.clone();
                plus[img].values_mut()[i] += h;
                let mut minus = raw.clone();
                minus[img].values_mut()[i] -= h;
                let fd = (value(&plus) - value(&minus)) / (2.0 * h);
                let g = grads[img].values()[i];
                if fd.abs().max(g.abs()) < 1e-12 {
                    continue;
                }
                assert!(rel_err(fd, g) < 1e-4, "entropy form {form} px {i}");
            }
        }
    }

    // End-to-end VAE loss with frozen noise, f64 model, rel err < 1e-3.
    let config = ModelConfig {
        latent_dim: 4,
        input_h: 16,
        input_w: 16,
        n_blocks: 2,
        width_scale: 0.125,
    };
    let model: VaeModel<f64> = VaeModel::new(config, 11).unwrap();
    let image = Image2D::from_vec(
        16,
        16,
        (0..256)
            .map(|i| 0.5 + 0.4 * ((i as f32) * 0.13).sin())
            .collect(),
    );
    let eps: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let beta = 0.5;

    let loss_of = |m: &VaeModel<f64>| -> f64 {
        let cache = m.encoder_forward(m.image_to_feat(&image).unwrap());
        let z: Vec<f64> = cache
            .mu
            .iter()
            .zip(&cache.logvar)
            .zip(&eps)
            .map(|((&mu, &lv), &e)| mu + (lv / 2.0).exp() * e)
            .collect();
        let dec = m.decoder_forward(&z).unwrap();
        let recon = recon_loss(
            ReconKind::Bce,
            &m.image_to_feat(&image).unwrap(),
            dec.reconstruction(),
        );
        recon + beta * kl_divergence(&[cache.code()])
    };

    // Analytic gradient through the same path.
    let cache = model.encoder_forward(model.image_to_feat(&image).unwrap());
    let z: Vec<f64> = cache
        .mu
        .iter()
        .zip(&cache.logvar)
        .zip(&eps)
        .map(|((&mu, &lv), &e)| mu + (lv / 2.0).exp() * e)
        .collect();
    let dec = model.decoder_forward(&z).unwrap();
    let mut gparams = vec![0.0f64; model.n_params()];
    let gxhat = recon_loss_grad(
        ReconKind::Bce,
        &model.image_to_feat(&image).unwrap(),
        dec.reconstruction(),
    );
    let gz = model.decoder_backward(&dec, &gxhat, &mut gparams);
    let (kmu, klv) = kl_divergence_grad(&[cache.code()])[0].clone();
    let gmu: Vec<f64> = gz.iter().zip(&kmu).map(|(&g, &k)| g + beta * k).collect();
    let glv: Vec<f64> = gz
        .iter()
        .zip(&cache.logvar)
        .zip(&eps)
        .zip(&klv)
        .map(|(((&g, &lv), &e), &k)| g * 0.5 * (lv / 2.0).exp() * e + beta * k)
        .collect();
    model.encoder_backward(&cache, &gmu, &glv, None, &mut gparams);

    let n = model.n_params();
    let h = 1e-5;
    let mut checked = 0usize;
    for i in (0..n).step_by(n / 60) {
        let mut plus = model.clone();
        plus.params[i] += h;
        let mut minus = model.clone();
        minus.params[i] -= h;
        let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let g = gparams[i];
        if fd.abs().max(g.abs()) < 1e-10 {
            continue;
        }
        assert!(
            rel_err(fd, g) < 1e-3,
            "end-to-end param {i}: fd={fd} analytic={g}"
        );
        checked += 1;
    }
    assert!(checked >= 30, "only {checked} parameters checked");

    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 60.0, "took {dt:?}, budget 60 s");
    println!(
        "criterion 2: PASS (constraint grads <1e-4, end-to-end <1e-3 over {checked} params; {dt:?})"
    );
}

// ---------------------------------------------------------------------
// Criterion 3: entropy algebra.
// ---------------------------------------------------------------------

#[test]
fn criterion_3_entropy_algebra() {
    let start = Instant::now();
    for &i in &[2usize, 4, 16, 256] {
        let brain = BinaryMask::filled(1, i, true);
        let uniform = Grid::filled(1, i, 1.0 / i as f64);
        let h = shannon_entropy(&uniform, &brain).unwrap();
        let expected = (i as f64).ln() / i as f64;
        assert!(
            (h - expected).abs() < 1e-12,
            "uniform entropy at I={i}: {h} vs {expected}"
        );
    }
    let brain = BinaryMask::filled(2, 2, true);
    let mut one_hot = Grid::zeros(2, 2);
    one_hot.set(1, 0, 1.0);
    assert_eq!(shannon_entropy(&one_hot, &brain).unwrap(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let brain = BinaryMask::from_vec(4, 4, (0..16).map(|i| i % 3 != 0).collect());
    for _ in 0..1000 {
        let raw = Grid::from_vec(4, 4, (0..16).map(|_| rng.random_range(-50.0..50.0)).collect());
        let p = pixel_softmax(&raw, &brain).unwrap();
        let sum: f64 = p
            .values()
            .iter()
            .zip(brain.values())
            .filter(|(_, &b)| b)
            .map(|(&v, _)| v)
            .sum();
        assert!((sum - 1.0).abs() < 1e-6, "softmax sum {sum}");
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "took {dt:?}, budget 10 s");
    println!("criterion 3: PASS (ln(I)/I exact, one-hot zero, softmax normalized; {dt:?})");
}

// ---------------------------------------------------------------------
// Criterion 4: metric oracles.
// ---------------------------------------------------------------------

fn auroc_pair_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        for (&sj, &lj) in scores[i + 1..].iter().zip(&labels[i + 1..]) {
            let (pos, neg) = match (li, lj) {
                (true, false) => (si, sj),
                (false, true) => (sj, si),
                _ => continue,
            };
            pairs += 1.0;
            if pos > neg {
                num += 1.0;
            } else if pos == neg {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Exhaustive sweep over every distinct score, recomputing the confusion
/// matrix from scratch: returns (auprc, best dice, best iou).
fn sweep_oracle(scores: &[f64], labels: &[bool]) -> (f64, f64, f64) {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
    distinct.dedup();
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut auprc = 0.0;
    let mut prev_recall = 0.0;
    let mut best_dice = 0.0f64;
    let mut best_iou = 0.0f64;
    for &tau in &distinct {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= tau {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / p;
        let precision = tp / (tp + fp);
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
        let fn_ = p - tp;
        best_dice = best_dice.max(2.0 * tp / (2.0 * tp + fp + fn_));
        best_iou = best_iou.max(tp / (tp + fp + fn_));
    }
    (auprc, best_dice, best_iou)
}

#[test]
fn criterion_4_metric_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tested = 0;
    while tested < 200 {
        let n = rng.random_range(4..=100usize);
        // Mix continuous and quantized scores so ties are exercised.
        let quantize = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.0..1.0);
                if quantize {
                    (v * 6.0).round() / 6.0
                } else {
                    v
                }
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.35)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        tested += 1;

        let fast_auroc = metrics::auroc(&scores, &labels).unwrap();
        assert!(
            (fast_auroc - auroc_pair_oracle(&scores, &labels)).abs() < 1e-12,
            "auroc mismatch"
        );

        let curve = metrics::pr_curve(&scores, &labels).unwrap();
        let fast_auprc = metrics::auprc(&curve);
        let (oracle_auprc, oracle_dice, oracle_iou) = sweep_oracle(&scores, &labels);
        assert!((fast_auprc - oracle_auprc).abs() < 1e-12, "auprc mismatch");

        // Best dice/iou through the operative-point threshold.
        let tau = fit_threshold(
            &ThresholdRule::Op,
            &ThresholdContext {
                scores: Some((&scores, &labels)),
                train_normal_brain_saliencies: None,
            },
        )
        .unwrap();
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (&s, &l) in scores.iter().zip(&labels) {
            let pred = s > tau;
            if pred && l {
                tp += 1.0;
            } else if pred {
                fp += 1.0;
            } else if l {
                fn_ += 1.0;
            }
        }
        let dice = 2.0 * tp / (2.0 * tp + fp + fn_);
        let iou = tp / (tp + fp + fn_);
        assert!((dice - oracle_dice).abs() < 1e-12, "best dice mismatch");
        assert!((iou - oracle_iou).abs() < 1e-12, "best iou mismatch");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let a = BinaryMask::from_vec(4, 4, (0..16).map(|_| rng.random_bool(0.5)).collect());
        let b = BinaryMask::from_vec(4, 4, (0..16).map(|_| rng.random_bool(0.5)).collect());
        let d = metrics::dice(&a, &b).unwrap();
        let j = metrics::iou(&a, &b).unwrap();
        assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 60.0, "took {dt:?}, budget 60 s");
    println!("criterion 4: PASS (200 metric instances + 500 mask pairs exact; {dt:?})");
}

// ---------------------------------------------------------------------
// Criterion 5: morphology and Otsu against brute force.
// ---------------------------------------------------------------------

fn otsu_brute_force(x: &Image2D) -> f64 {
    let bins = maskops::OTSU_BINS;
    let bin_of = |v: f32| ((v as f64 * bins as f64) as usize).min(bins - 1);
    let mut best = -1.0f64;
    let mut ties = Vec::new();
    for k in 0..bins - 1 {
        let (mut n0, mut n1, mut s0, mut s1) = (0f64, 0f64, 0f64, 0f64);
        for &v in x.values() {
            if bin_of(v) <= k {
                n0 += 1.0;
                s0 += bin_of(v) as f64;
            } else {
                n1 += 1.0;
                s1 += bin_of(v) as f64;
            }
        }
        if n0 == 0.0 || n1 == 0.0 {
            continue;
        }
        let d = s0 / n0 - s1 / n1;
        let var = n0 * n1 * d * d;
        if var > best + 1e-12 * best.abs().max(1.0) {
            best = var;
            ties = vec![k];
        } else if (var - best).abs() <= 1e-12 * best.abs().max(1.0) {
            ties.push(k);
        }
    }
    let mean_k = ties.iter().sum::<usize>() as f64 / ties.len() as f64;
    (mean_k + 1.0) / bins as f64
}

/// Definitional morphology: dilation is "any structuring-element translate
/// of a foreground pixel", erosion is "every translate stays foreground",
/// both evaluated on a padded canvas so border behaviour matches an
/// infinite background plane.
fn closing_naive(mask: &BinaryMask, offsets: &[(isize, isize)], radius: usize) -> BinaryMask {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let r = radius as isize;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let get = |buf: &Vec<bool>, y: isize, x: isize| -> bool {
        if y < 0 || x < 0 || y >= ph || x >= pw {
            false
        } else {
            buf[(y * pw + x) as usize]
        }
    };
    let mut padded = vec![false; (ph * pw) as usize];
    for y in 0..h {
        for x in 0..w {
            padded[((y + r) * pw + (x + r)) as usize] = mask.get(y as usize, x as usize);
        }
    }
    let mut dilated = vec![false; (ph * pw) as usize];
    for y in 0..ph {
        for x in 0..pw {
            let mut on = false;
            for &(dy, dx) in offsets {
                if get(&padded, y - dy, x - dx) {
                    on = true;
                    break;
                }
            }
            dilated[(y * pw + x) as usize] = on;
        }
    }
    let mut out = BinaryMask::filled(mask.height(), mask.width(), false);
    for y in 0..h {
        for x in 0..w {
            let all = offsets
                .iter()
                .all(|&(dy, dx)| get(&dilated, y + r + dy, x + r + dx));
            out.set(y as usize, x as usize, all);
        }
    }
    out
}

#[test]
fn criterion_5_morphology_and_otsu_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..25 {
        let values: Vec<f32> = (0..256)
            .map(|_| {
                if rng.random_bool(0.6) {
                    rng.random_range(0.0..0.35)
                } else {
                    rng.random_range(0.4..1.0)
                }
            })
            .collect();
        let img = Image2D::from_vec(16, 16, values);
        let fast = maskops::otsu_threshold(&img).unwrap();
        let slow = otsu_brute_force(&img);
        assert_eq!(fast, slow, "otsu mismatch");
    }

    let se = maskops::StructuringElement::disk(2);
    for _ in 0..30 {
        let mask = BinaryMask::from_vec(16, 16, (0..256).map(|_| rng.random_bool(0.5)).collect());
        let fast = maskops::close(&mask, &se);
        let slow = closing_naive(&mask, se.offsets(), se.radius());
        assert_eq!(fast, slow, "closing mismatch");
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "took {dt:?}, budget 30 s");
    println!("criterion 5: PASS (Otsu + closing match brute force; {dt:?})");
}

// ---------------------------------------------------------------------
// Criteria 6 & 7: the shared desk-scale training benchmark.
// ---------------------------------------------------------------------

const BENCH_TRAIN_PATIENTS: usize = 20;
const BENCH_TEST_PATIENTS: usize = 10;

struct BenchRun {
    reports: Vec<EvalReport>,
}

struct Benchmark {
    amcons: BenchRun,
    vae: BenchRun,
    gc_logbarrier: BenchRun,
    gc_l2image: BenchRun,
    amcons_entropy_first: f64,
    amcons_entropy_final: f64,
    lam0_entropy_final: f64,
    amcons_overlap: f64,
    lam0_overlap: f64,
    gradcam_am_corr: f64,
}

static BENCHMARK: OnceLock<Benchmark> = OnceLock::new();

fn run_config(
    cfg: &trainer::TrainConfig,
    data: &TrainSet,
    test: &[anocon::tensorio::PseudoVolume],
) -> (Vec<trainer::TrainedModel>, BenchRun) {
    let models = trainer::run_repetitions(cfg, data).expect("training");
    let reports = models
        .iter()
        .map(|m| {
            let slices = inference::eval_slices(test, &m.model, cfg.method, cfg.block_s)
                .expect("saliency");
            metrics::evaluate(&slices, &ThresholdRule::Op, None).expect("evaluate")
        })
        .collect();
    (models, BenchRun { reports })
}

fn benchmark() -> &'static Benchmark {
    BENCHMARK.get_or_init(|| {
        let start = Instant::now();
        let train_volumes =
            synthdata::generate(&SynthConfig::normal(0, BENCH_TRAIN_PATIENTS, 10, 64));
        let data = TrainSet::from_volumes(&train_volumes).expect("train set");
        let test_volumes =
            synthdata::generate(&SynthConfig::anomalous(1000, BENCH_TEST_PATIENTS, 10, 64));

        let amcons_cfg = desk_config(Method::AmCons, 0);
        let (amcons_models, amcons) = run_config(&amcons_cfg, &data, &test_volumes);

        let vae_cfg = desk_config(Method::Vae, 0);
        let (_, vae) = run_config(&vae_cfg, &data, &test_volumes);

        let gc_lb_cfg = desk_config(Method::GradCamCons, 0);
        let (_, gc_logbarrier) = run_config(&gc_lb_cfg, &data, &test_volumes);

        let mut gc_l2_cfg = desk_config(Method::GradCamCons, 0);
        gc_l2_cfg.constraint.kind = ConstraintKind::L2Image;
        let (_, gc_l2image) = run_config(&gc_l2_cfg, &data, &test_volumes);

        // Unconstrained twin of the entropy method: lambda_H = 0, same seed.
        let mut lam0_cfg = amcons_cfg;
        lam0_cfg.constraint.lambda_h = 0.0;
        lam0_cfg.repetitions = 1;
        let lam0 = trainer::train(&lam0_cfg, &data).expect("lambda_h=0 run");
        let lam0_slices =
            inference::eval_slices(&test_volumes, &lam0.model, Method::AmCons, lam0_cfg.block_s)
                .expect("lambda0 saliency");
        let lam0_report =
            metrics::evaluate(&lam0_slices, &ThresholdRule::Op, None).expect("lambda0 eval");

        let amcons_hist = &amcons_models[0].history.rows;
        let corr_images: Vec<Image2D> = test_volumes
            .iter()
            .take(2)
            .flat_map(|v| v.slices.iter().cloned())
            .collect();
        let gradcam_am_corr =
            attention::gradcam_am_correlation(&corr_images, &lam0.model, amcons_cfg.block_s)
                .expect("correlation");

        let bench = Benchmark {
            amcons_entropy_first: amcons_hist.first().unwrap().entropy,
            amcons_entropy_final: amcons_hist.last().unwrap().entropy,
            lam0_entropy_final: lam0.history.rows.last().unwrap().entropy,
            amcons_overlap: amcons.reports[0].overlap_pct,
            lam0_overlap: lam0_report.overlap_pct,
            amcons,
            vae,
            gc_logbarrier,
            gc_l2image,
            gradcam_am_corr,
        };
        println!(
            "benchmark trained 13 desk-scale runs in {:?} (gradcam/AM correlation {:.3})",
            start.elapsed(),
            bench.gradcam_am_corr
        );
        bench
    })
}

fn mean_auprc(run: &BenchRun) -> f64 {
    run.reports.iter().map(|r| r.auprc).sum::<f64>() / run.reports.len() as f64
}

#[test]
fn criterion_6_ordering_reproduction() {
    let b = benchmark();
    let amcons = mean_auprc(&b.amcons);
    let vae = mean_auprc(&b.vae);
    let logbarrier = mean_auprc(&b.gc_logbarrier);
    let l2image = mean_auprc(&b.gc_l2image);
    println!(
        "criterion 6: mean AUPRC over 3 reps: amcons {amcons:.3}, vae residual {vae:.3}, \
         gradcamcons logbarrier {logbarrier:.3}, gradcamcons l2-image {l2image:.3}"
    );
    assert!(
        amcons > vae,
        "entropy method ({amcons:.3}) must beat the residual baseline ({vae:.3})"
    );
    assert!(
        amcons >= logbarrier - 0.05,
        "entropy method ({amcons:.3}) must be within 0.05 of the barrier method ({logbarrier:.3})"
    );
    assert!(
        logbarrier > l2image,
        "log-barrier ({logbarrier:.3}) must beat the L2 penalty ({l2image:.3})"
    );
    println!("criterion 6: PASS");
}

#[test]
fn criterion_7_entropy_mechanism() {
    let b = benchmark();
    println!(
        "criterion 7: brain-pixel entropy first {:.5} -> final {:.5} (lambda_h=0.1) vs {:.5} \
         (lambda_h=0); overlap {:.2}% vs {:.2}%",
        b.amcons_entropy_first,
        b.amcons_entropy_final,
        b.lam0_entropy_final,
        b.amcons_overlap,
        b.lam0_overlap
    );
    assert!(
        b.amcons_entropy_final > b.amcons_entropy_first,
        "entropy must rise over training"
    );
    assert!(
        b.amcons_entropy_final >= 1.2 * b.lam0_entropy_final,
        "entropy with lambda_h=0.1 ({:.5}) must exceed the lambda_h=0 run ({:.5}) by >= 20%",
        b.amcons_entropy_final,
        b.lam0_entropy_final
    );
    assert!(
        b.amcons_overlap < b.lam0_overlap,
        "constrained overlap ({:.2}%) must be below the unconstrained one ({:.2}%)",
        b.amcons_overlap,
        b.lam0_overlap
    );
    println!("criterion 7: PASS");
}

// ---------------------------------------------------------------------
// Criterion 8: determinism and repetition bookkeeping.
// ---------------------------------------------------------------------

#[test]
fn criterion_8_determinism_and_repetitions() {
    let volumes = synthdata::generate(&SynthConfig::normal(5, 2, 4, 32));
    let data = TrainSet::from_volumes(&volumes).unwrap();
    let mut cfg = desk_config(Method::AmCons, 123);
    cfg.model = ModelConfig {
        latent_dim: 8,
        input_h: 32,
        input_w: 32,
        n_blocks: 2,
        width_scale: 0.125,
    };
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.repetitions = 3;

    let a = trainer::train(&cfg, &data).unwrap();
    let b = trainer::train(&cfg, &data).unwrap();
    assert_eq!(
        a.history.to_csv().into_bytes(),
        b.history.to_csv().into_bytes(),
        "identical config+seed must give bitwise-identical history CSVs"
    );

    let models = trainer::run_repetitions(&cfg, &data).unwrap();
    assert_eq!(models.len(), 3);
    let test_volumes = synthdata::generate(&SynthConfig {
        size: 32,
        ..SynthConfig::anomalous(77, 2, 3, 32)
    });
    let reports: Vec<EvalReport> = models
        .iter()
        .map(|m| {
            let slices =
                inference::eval_slices(&test_volumes, &m.model, cfg.method, cfg.block_s).unwrap();
            metrics::evaluate(&slices, &ThresholdRule::Fixed { value: 0.5 }, None).unwrap()
        })
        .collect();
    let agg = metrics::aggregate(&reports);
    assert_eq!(agg.n_repetitions, 3);
    assert!(agg.auprc.mean.is_finite() && agg.auprc.std.is_finite());
    assert!(agg.best_dice.std >= 0.0);
    println!(
        "criterion 8: PASS (bitwise-identical reruns; 3-rep report auprc {:.3}({:.3}))",
        agg.auprc.mean, agg.auprc.std
    );
}

// ---------------------------------------------------------------------
// Criterion 9: threshold strategies on perfectly separated saliencies.
// ---------------------------------------------------------------------

#[test]
fn criterion_9_threshold_strategies() {
    // Synthetic saliency maps: anomalous pixels at 0.9, normal brain pixels
    // at 0.1, perfectly separated.
    let brain = BinaryMask::filled(8, 8, true);
    let mut slices = Vec::new();
    for k in 0..3 {
        let mut gt = BinaryMask::filled(8, 8, false);
        for y in 2..4 {
            for x in (2 + k)..(5 + k) {
                gt.set(y, x, true);
            }
        }
        let saliency = Grid::from_vec(
            8,
            8,
            gt.values().iter().map(|&g| if g { 0.9 } else { 0.1 }).collect(),
        );
        slices.push(EvalSlice {
            patient_id: format!("scan{k}"),
            saliency,
            gt,
            brain: brain.clone(),
        });
    }
    // Normal training saliencies: brain pixels at 0.1.
    let train_normals: Vec<Vec<f64>> = (0..4).map(|_| vec![0.1; 64]).collect();

    for rule in [
        ThresholdRule::Op,
        ThresholdRule::Percentile { p: 98.0 },
        ThresholdRule::Fixed { value: 0.5 },
    ] {
        let report = metrics::evaluate(&slices, &rule, Some(&train_normals)).unwrap();
        assert_eq!(
            report.best_dice, 1.0,
            "{rule:?} must reach DICE 1.0 on separated saliencies, got {}",
            report.best_dice
        );
        assert_eq!(report.scan_dice_mean, 1.0);
    }

    // The percentile threshold is a function of normal training images
    // only: anomalous evaluation scores cannot influence it.
    let anomalous_scores = vec![0.9; 100];
    let labels = vec![true; 50]
        .into_iter()
        .chain(vec![false; 50])
        .collect::<Vec<_>>();
    let with_scores = fit_threshold(
        &ThresholdRule::Percentile { p: 98.0 },
        &ThresholdContext {
            scores: Some((&anomalous_scores, &labels)),
            train_normal_brain_saliencies: Some(&train_normals),
        },
    )
    .unwrap();
    let without_scores = fit_threshold(
        &ThresholdRule::Percentile { p: 98.0 },
        &ThresholdContext {
            scores: None,
            train_normal_brain_saliencies: Some(&train_normals),
        },
    )
    .unwrap();
    assert_eq!(with_scores, without_scores);
    assert_eq!(with_scores, 0.1);
    println!("criterion 9: PASS (OP/p98/fixed all reach DICE 1.0; percentile ignores anomalies)");
}
