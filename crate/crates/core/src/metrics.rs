//! Pixel-level evaluation protocol.
//!
//! Dataset-level metrics pool brain pixels across the whole split (not
//! per-image averages): AUROC by trapezoidal integration of the ROC, AUPRC
//! by step-wise precision-at-recall summation, and best DICE/IoU at the
//! chosen threshold. Per-scan DICE applies the single dataset-level
//! threshold to each scan's pooled slices. Scans whose positive fraction is
//! below 0.01% are discarded before any metric is computed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::inference::{fit_threshold, ThresholdContext, ThresholdRule};
use crate::tensorio::BinaryMask;

/// Scans with a smaller fraction of positive pixels are excluded.
pub const MIN_SCAN_POSITIVE_FRACTION: f64 = 1e-4;

pub const OVERLAP_BINS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric undefined: labels contain a single class")]
    SingleClass,
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("evaluation set empty after the {MIN_SCAN_POSITIVE_FRACTION} positive-fraction filter")]
    EmptyEvaluation,
    #[error("threshold rule error: {0}")]
    Threshold(String),
}

/// One PR point per distinct score, descending; predictions at a point are
/// `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

fn sorted_desc_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    idx
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>, MetricError> {
    assert_eq!(scores.len(), labels.len());
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    let idx = sorted_desc_indices(scores);
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        // Consume the tie group.
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / p as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: s,
        });
    }
    Ok(points)
}

/// Step-wise summation: `sum_i (R_i - R_{i-1}) * P_i` with `R_0 = 0`.
/// Trapezoidal PR interpolation is known-optimistic and deliberately not
/// used.
pub fn auprc(curve: &[PrPoint]) -> f64 {
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for pt in curve {
        area += (pt.recall - prev_recall) * pt.precision;
        prev_recall = pt.recall;
    }
    area
}

/// Trapezoidal area under the ROC curve; with tie groups collapsed this
/// equals the Mann-Whitney statistic `(concordant + ties/2) / (P*N)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    assert_eq!(scores.len(), labels.len());
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    let idx = sorted_desc_indices(scores);
    let mut area = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / p as f64;
        let fpr = fp as f64 / n as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

fn check_shapes(a: &BinaryMask, b: &BinaryMask) -> Result<(), MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::ShapeMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    Ok(())
}

/// Sorensen-Dice overlap; empty vs empty is defined as 1.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricError> {
    check_shapes(pred, gt)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&a, &b) in pred.values().iter().zip(gt.values()) {
        inter += (a && b) as usize;
        total += a as usize + b as usize;
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Intersection over union; empty vs empty is defined as 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64, MetricError> {
    check_shapes(pred, gt)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&a, &b) in pred.values().iter().zip(gt.values()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

fn dice_iou_from_counts(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let denom_dice = 2 * tp + fp + fn_;
    let denom_iou = tp + fp + fn_;
    if denom_iou == 0 {
        (1.0, 1.0)
    } else {
        (
            2.0 * tp as f64 / denom_dice as f64,
            tp as f64 / denom_iou as f64,
        )
    }
}

/// Shared-bin histogram overlap between two score populations, in percent:
/// `100 * sum_b min(count_a_b, count_b_b) / (N_a + N_b)`.
pub fn overlap(normal: &[f64], anomalous: &[f64], bins: usize) -> f64 {
    assert!(!normal.is_empty() && !anomalous.is_empty(), "both populations must be non-empty");
    assert!(bins >= 1);
    let lo = normal
        .iter()
        .chain(anomalous)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = normal
        .iter()
        .chain(anomalous)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let bin_of = |v: f64| -> usize {
        if range <= 0.0 {
            0
        } else {
            (((v - lo) / range * bins as f64) as usize).min(bins - 1)
        }
    };
    let mut hist_n = vec![0u64; bins];
    let mut hist_a = vec![0u64; bins];
    for &v in normal {
        hist_n[bin_of(v)] += 1;
    }
    for &v in anomalous {
        hist_a[bin_of(v)] += 1;
    }
    let shared: u64 = hist_n.iter().zip(&hist_a).map(|(&a, &b)| a.min(b)).sum();
    100.0 * shared as f64 / (normal.len() + anomalous.len()) as f64
}

/// One evaluated slice: the saliency map with its ground truth and the
/// brain-tissue mask metrics are restricted to.
#[derive(Debug, Clone)]
pub struct EvalSlice {
    pub patient_id: String,
    pub saliency: Grid,
    pub gt: BinaryMask,
    pub brain: BinaryMask,
}

/// Evaluation summary for a single trained model (or, aggregated, for a set
/// of repetitions).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub auprc: f64,
    pub best_dice: f64,
    pub best_iou: f64,
    pub scan_dice_mean: f64,
    pub scan_dice_std: f64,
    pub overlap_pct: f64,
    pub threshold: f64,
    pub n_repetitions: usize,
}

/// Full evaluation under a threshold rule.
///
/// Percentile rules need per-image brain saliencies from normal training
/// images; pass them through `train_normals`.
pub fn evaluate(
    slices: &[EvalSlice],
    rule: &ThresholdRule,
    train_normals: Option<&[Vec<f64>]>,
) -> Result<EvalReport, MetricError> {
    // Group slices into scans and apply the positive-fraction filter.
    let mut scans: Vec<(String, Vec<&EvalSlice>)> = Vec::new();
    for slice in slices {
        match scans.iter_mut().find(|(id, _)| *id == slice.patient_id) {
            Some((_, list)) => list.push(slice),
            None => scans.push((slice.patient_id.clone(), vec![slice])),
        }
    }
    scans.retain(|(_, list)| {
        let positives: usize = list.iter().map(|s| s.gt.count_true()).sum();
        let total: usize = list.iter().map(|s| s.gt.values().len()).sum();
        positives as f64 / total as f64 >= MIN_SCAN_POSITIVE_FRACTION
    });
    if scans.is_empty() {
        return Err(MetricError::EmptyEvaluation);
    }

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (_, list) in &scans {
        for s in list {
            for ((&v, &gt), &brain) in s
                .saliency
                .values()
                .iter()
                .zip(s.gt.values())
                .zip(s.brain.values())
            {
                if brain {
                    scores.push(v);
                    labels.push(gt);
                }
            }
        }
    }

    let roc_auc = auroc(&scores, &labels)?;
    let curve = pr_curve(&scores, &labels)?;
    let pr_auc = auprc(&curve);

    let threshold = fit_threshold(
        rule,
        &ThresholdContext {
            scores: Some((&scores, &labels)),
            train_normal_brain_saliencies: train_normals,
        },
    )
    .map_err(|e| MetricError::Threshold(e.to_string()))?;

    // Pooled confusion at the threshold (strict >).
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(&labels) {
        let pred = s > threshold;
        tp += (pred && l) as usize;
        fp += (pred && !l) as usize;
        fn_ += (!pred && l) as usize;
    }
    let (best_dice, best_iou) = dice_iou_from_counts(tp, fp, fn_);

    // Per-scan DICE at the same dataset-level threshold.
    let scan_dice: Vec<f64> = scans
        .iter()
        .map(|(_, list)| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for s in list {
                for ((&v, &gt), &brain) in s
                    .saliency
                    .values()
                    .iter()
                    .zip(s.gt.values())
                    .zip(s.brain.values())
                {
                    if brain {
                        let pred = v > threshold;
                        tp += (pred && gt) as usize;
                        fp += (pred && !gt) as usize;
                        fn_ += (!pred && gt) as usize;
                    }
                }
            }
            dice_iou_from_counts(tp, fp, fn_).0
        })
        .collect();
    let (scan_mean, scan_std) = mean_std(&scan_dice);

    let normal_scores: Vec<f64> = scores
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    let anomalous_scores: Vec<f64> = scores
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let overlap_pct = overlap(&normal_scores, &anomalous_scores, OVERLAP_BINS);

    Ok(EvalReport {
        auroc: roc_auc,
        auprc: pr_auc,
        best_dice,
        best_iou,
        scan_dice_mean: scan_mean,
        scan_dice_std: scan_std,
        overlap_pct,
        threshold,
        n_repetitions: 1,
    })
}

/// Population mean and standard deviation; a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-metric mean and spread over training repetitions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: Vec<f64>) -> MetricStat {
    let (mean, std) = mean_std(&values);
    MetricStat { mean, std }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub auroc: MetricStat,
    pub auprc: MetricStat,
    pub best_dice: MetricStat,
    pub best_iou: MetricStat,
    pub scan_dice_mean: MetricStat,
    pub scan_dice_std: MetricStat,
    pub overlap_pct: MetricStat,
    pub threshold: MetricStat,
    pub n_repetitions: usize,
}

pub fn aggregate(reports: &[EvalReport]) -> AggregateReport {
    assert!(!reports.is_empty());
    let pick = |f: fn(&EvalReport) -> f64| stat(reports.iter().map(f).collect());
    AggregateReport {
        auroc: pick(|r| r.auroc),
        auprc: pick(|r| r.auprc),
        best_dice: pick(|r| r.best_dice),
        best_iou: pick(|r| r.best_iou),
        scan_dice_mean: pick(|r| r.scan_dice_mean),
        scan_dice_std: pick(|r| r.scan_dice_std),
        overlap_pct: pick(|r| r.overlap_pct),
        threshold: pick(|r| r.threshold),
        n_repetitions: reports.len(),
    }
}

fn fmt_stat(s: &MetricStat) -> String {
    format!("{:.3}({:.3})", s.mean, s.std)
}

/// Markdown comparison table with the five headline metric columns.
pub fn markdown_table(rows: &[(String, AggregateReport)]) -> String {
    let mut out = String::from(
        "| Method | AUROC | AUPRC | bestDICE | bestIoU | DICE (mean+-std) |\n|---|---|---|---|---|---|\n",
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {}+-{} |\n",
            name,
            fmt_stat(&r.auroc),
            fmt_stat(&r.auprc),
            fmt_stat(&r.best_dice),
            fmt_stat(&r.best_iou),
            fmt_stat(&r.scan_dice_mean),
            fmt_stat(&r.scan_dice_std),
        ));
    }
    out
}

/// CSV flavour of [`markdown_table`].
pub fn csv_table(rows: &[(String, AggregateReport)]) -> String {
    let mut out = String::from(
        "method,auroc_mean,auroc_std,auprc_mean,auprc_std,best_dice_mean,best_dice_std,best_iou_mean,best_iou_std,scan_dice_mean,scan_dice_mean_std,scan_dice_std,scan_dice_std_std,overlap_pct_mean,threshold_mean,n_repetitions\n",
    );
    for (name, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            name,
            r.auroc.mean,
            r.auroc.std,
            r.auprc.mean,
            r.auprc.std,
            r.best_dice.mean,
            r.best_dice.std,
            r.best_iou.mean,
            r.best_iou.std,
            r.scan_dice_mean.mean,
            r.scan_dice_mean.std,
            r.scan_dice_std.mean,
            r.scan_dice_std.std,
            r.overlap_pct.mean,
            r.threshold.mean,
            r.n_repetitions,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pr_curve_matches_hand_enumeration() {
        let scores = [0.9, 0.8, 0.7, 0.3, 0.2, 0.1];
        let labels = [true, true, false, true, false, false];
        let curve = pr_curve(&scores, &labels).unwrap();
        let expected = [
            (1.0 / 3.0, 1.0),
            (2.0 / 3.0, 1.0),
            (2.0 / 3.0, 2.0 / 3.0),
            (1.0, 3.0 / 4.0),
            (1.0, 3.0 / 5.0),
            (1.0, 0.5),
        ];
        assert_eq!(curve.len(), expected.len());
        for (pt, (r, p)) in curve.iter().zip(expected) {
            assert_abs_diff_eq!(pt.recall, r, epsilon = 1e-15);
            assert_abs_diff_eq!(pt.precision, p, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(auprc(&curve), 2.0 / 3.0 + 0.25, epsilon = 1e-15);
    }

    #[test]
    fn perfect_scores_hit_the_corner() {
        let scores = [1.0, 1.0, 0.0, 0.0];
        let labels = [true, true, false, false];
        let curve = pr_curve(&scores, &labels).unwrap();
        assert!(curve
            .iter()
            .any(|p| p.recall == 1.0 && p.precision == 1.0));
        assert_eq!(auroc(&scores, &labels).unwrap(), 1.0);
        assert_eq!(auprc(&curve), 1.0);
    }

    #[test]
    fn constant_scores_give_prevalence_and_chance() {
        let scores = [0.5; 5];
        let labels = [true, false, false, true, false];
        let curve = pr_curve(&scores, &labels).unwrap();
        assert_eq!(curve.len(), 1);
        assert_abs_diff_eq!(curve[0].precision, 0.4, epsilon = 1e-15);
        assert_eq!(curve[0].recall, 1.0);
        assert_abs_diff_eq!(auroc(&scores, &labels).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_class_labels_are_rejected() {
        assert!(matches!(
            pr_curve(&[0.1, 0.2], &[true, true]),
            Err(MetricError::SingleClass)
        ));
        assert!(matches!(
            auroc(&[0.1, 0.2], &[false, false]),
            Err(MetricError::SingleClass)
        ));
    }

    /// O(P*N) pair counting: (concordant + ties/2) / (P*N).
    fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(&s, _)| s)
            .collect();
        let mut num = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    num += 1.0;
                } else if p == n {
                    num += 0.5;
                }
            }
        }
        num / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn auroc_equals_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.random_range(5..50);
            // Quantized scores force plenty of ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8) as f64) / 8.0)
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairs(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    fn mask_of(bits: &[u8], h: usize, w: usize) -> BinaryMask {
        BinaryMask::from_vec(h, w, bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn dice_iou_examples() {
        let a = mask_of(&[1, 1, 1, 1, 0, 0, 0, 0], 2, 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);

        let b = mask_of(&[0, 0, 0, 0, 1, 1, 1, 1], 2, 4);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);

        // |A| = |B| = 4, |A ^ B| = 2.
        let c = mask_of(&[0, 0, 1, 1, 1, 1, 0, 0], 2, 4);
        assert_abs_diff_eq!(dice(&a, &c).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(iou(&a, &c).unwrap(), 1.0 / 3.0, epsilon = 1e-15);

        let empty = mask_of(&[0; 8], 2, 4);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn dice_shape_mismatch_errors() {
        let a = BinaryMask::filled(2, 2, true);
        let b = BinaryMask::filled(2, 3, true);
        assert!(matches!(dice(&a, &b), Err(MetricError::ShapeMismatch(..))));
    }

    #[test]
    fn dice_is_determined_by_iou() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let a = BinaryMask::from_vec(3, 3, (0..9).map(|_| rng.random_bool(0.5)).collect());
            let b = BinaryMask::from_vec(3, 3, (0..9).map(|_| rng.random_bool(0.5)).collect());
            let d = dice(&a, &b).unwrap();
            let j = iou(&a, &b).unwrap();
            assert_abs_diff_eq!(d, 2.0 * j / (1.0 + j), epsilon = 1e-12);
        }
    }

    #[test]
    fn overlap_examples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        assert_abs_diff_eq!(overlap(&a, &a, 100), 50.0, epsilon = 1e-12);

        let low = vec![0.1; 50];
        let high = vec![0.9; 50];
        assert_eq!(overlap(&low, &high, 100), 0.0);
    }

    #[test]
    fn metrics_are_invariant_under_monotone_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..60).map(|_| rng.random_bool(0.3)).collect();
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp()).collect();
        assert_abs_diff_eq!(
            auroc(&scores, &labels).unwrap(),
            auroc(&transformed, &labels).unwrap(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            auprc(&pr_curve(&scores, &labels).unwrap()),
            auprc(&pr_curve(&transformed, &labels).unwrap()),
            epsilon = 1e-12
        );
    }

    fn toy_slice(id: &str, saliency: Vec<f64>, gt: Vec<u8>) -> EvalSlice {
        EvalSlice {
            patient_id: id.to_string(),
            saliency: Grid::from_vec(2, 2, saliency),
            gt: mask_of(&gt, 2, 2),
            brain: BinaryMask::filled(2, 2, true),
        }
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let slices = vec![
            toy_slice("a", vec![1.0, 0.0, 0.0, 1.0], vec![1, 0, 0, 1]),
            toy_slice("b", vec![0.0, 1.0, 0.0, 0.0], vec![0, 1, 0, 0]),
        ];
        let report = evaluate(&slices, &ThresholdRule::Op, None).unwrap();
        assert_eq!(report.auroc, 1.0);
        assert_eq!(report.auprc, 1.0);
        assert_eq!(report.best_dice, 1.0);
        assert_eq!(report.best_iou, 1.0);
        assert_eq!(report.scan_dice_mean, 1.0);
        assert_eq!(report.scan_dice_std, 0.0);
        // Dice/IoU identity holds in the report.
        let d = report.best_dice;
        let j = report.best_iou;
        assert_abs_diff_eq!(d, 2.0 * j / (1.0 + j), epsilon = 1e-9);
    }

    #[test]
    fn two_scan_toy_set_matches_hand_computation() {
        // Scan a: saliency (.9,.8,.1,.1), gt (1,0,0,0); scan b: (.7,.2,.2,.6),
        // gt (1,0,0,1). Fixed threshold 0.5.
        let slices = vec![
            toy_slice("a", vec![0.9, 0.8, 0.1, 0.1], vec![1, 0, 0, 0]),
            toy_slice("b", vec![0.7, 0.2, 0.2, 0.6], vec![1, 0, 0, 1]),
        ];
        let report =
            evaluate(&slices, &ThresholdRule::Fixed { value: 0.5 }, None).unwrap();
        // Pooled at 0.5: preds a=(1,1,0,0), b=(1,0,0,1): TP=3, FP=1, FN=0.
        assert_abs_diff_eq!(report.best_dice, 6.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.best_iou, 3.0 / 4.0, epsilon = 1e-12);
        // Scan a: TP=1, FP=1, FN=0 -> 2/3. Scan b: TP=2, FP=0 -> 1.
        assert_abs_diff_eq!(
            report.scan_dice_mean,
            (2.0 / 3.0 + 1.0) / 2.0,
            epsilon = 1e-12
        );
        assert_eq!(report.threshold, 0.5);
    }

    #[test]
    fn low_positive_scans_are_filtered() {
        // 2x2 slices: a scan with a single positive pixel out of 4 passes
        // (fraction 0.25); a scan with none is dropped.
        let slices = vec![
            toy_slice("a", vec![0.9, 0.1, 0.1, 0.1], vec![1, 0, 0, 0]),
            toy_slice("clean", vec![0.2, 0.1, 0.3, 0.2], vec![0, 0, 0, 0]),
        ];
        let report = evaluate(&slices, &ThresholdRule::Op, None).unwrap();
        // Only scan "a" contributes: 4 pooled pixels.
        assert_eq!(report.scan_dice_std, 0.0);
        assert_eq!(report.auroc, 1.0);

        let only_clean = vec![toy_slice("clean", vec![0.1; 4], vec![0, 0, 0, 0])];
        assert!(matches!(
            evaluate(&only_clean, &ThresholdRule::Op, None),
            Err(MetricError::EmptyEvaluation)
        ));
    }

    #[test]
    fn aggregation_reports_mean_and_std() {
        let base = EvalReport {
            auroc: 0.9,
            auprc: 0.5,
            best_dice: 0.6,
            best_iou: 0.4,
            scan_dice_mean: 0.55,
            scan_dice_std: 0.1,
            overlap_pct: 20.0,
            threshold: 0.5,
            n_repetitions: 1,
        };
        let mut second = base.clone();
        second.auprc = 0.7;
        let agg = aggregate(&[base, second]);
        assert_eq!(agg.n_repetitions, 2);
        assert_abs_diff_eq!(agg.auprc.mean, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.auprc.std, 0.1, epsilon = 1e-12);
        assert_eq!(agg.auroc.std, 0.0);
        let table = markdown_table(&[("vae".into(), agg)]);
        assert!(table.contains("| vae |"));
        assert!(table.contains("0.600(0.100)"));
    }
}
