use std::path::{Path, PathBuf};

use anocon::grid::Grid;
use anocon::inference::ThresholdRule;
use anocon::metrics::{self, AggregateReport, EvalReport, EvalSlice};
use anocon::tensorio;
use clap::Args;
use serde::{Deserialize, Serialize};

use super::predict::{self, PredictIndex};
use crate::CliError;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Prediction directory (repeat for multiple training repetitions; the
    /// report then carries mean and standard deviation over them).
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Dataset directory with ground-truth masks.
    #[arg(long)]
    data: PathBuf,
    /// op | pNN | fixed:<v>.
    #[arg(long, default_value = "op")]
    threshold: String,
    #[arg(long)]
    out: PathBuf,
    /// Prediction directory for the normal training split; required by
    /// percentile rules.
    #[arg(long = "train-pred")]
    train_pred: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub method: String,
    pub threshold_rule: String,
    pub reports: Vec<EvalReport>,
    pub aggregate: AggregateReport,
}

fn load_slices(
    pred_dir: &Path,
    index: &PredictIndex,
    manifest: &tensorio::DatasetManifest,
) -> Result<Vec<EvalSlice>, CliError> {
    let mut slices = Vec::new();
    for entry in &index.entries {
        let gt_path = predict::gt_path(manifest, entry).ok_or_else(|| {
            CliError::usage(format!(
                "no ground-truth mask for {} slice {} (threshold op needs annotated data)",
                entry.patient_id, entry.slice
            ))
        })?;
        let gt = tensorio::read_mask(&gt_path).map_err(|e| CliError::runtime(e.to_string()))?;
        let sal = tensorio::read_image(&pred_dir.join(&entry.saliency))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let brain = tensorio::read_mask(&pred_dir.join(&entry.brain))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        slices.push(EvalSlice {
            patient_id: entry.patient_id.clone(),
            saliency: Grid::from_image(&sal),
            gt,
            brain,
        });
    }
    Ok(slices)
}

fn load_train_normals(dir: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let index = predict::load_index(dir)?;
    let mut out = Vec::new();
    for entry in &index.entries {
        let sal = tensorio::read_image(&dir.join(&entry.saliency))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let brain = tensorio::read_mask(&dir.join(&entry.brain))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        out.push(
            sal.values()
                .iter()
                .zip(brain.values())
                .filter(|(_, &b)| b)
                .map(|(&v, _)| v as f64)
                .collect(),
        );
    }
    Ok(out)
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let rule = ThresholdRule::parse(&args.threshold).map_err(CliError::Usage)?;
    if matches!(rule, ThresholdRule::Percentile { .. }) && args.train_pred.is_none() {
        return Err(CliError::usage(
            "percentile thresholds need --train-pred (predictions on the normal training split)",
        ));
    }
    let manifest = tensorio::load_manifest(&args.data.join("manifest.json"))
        .map_err(|e| CliError::usage(e.to_string()))?;
    let train_normals = args
        .train_pred
        .as_deref()
        .map(load_train_normals)
        .transpose()?;

    let mut reports = Vec::new();
    let mut method = String::new();
    let mut pooled: Option<(Vec<EvalSlice>, PathBuf)> = None;
    for pred_dir in &args.pred {
        let index = predict::load_index(pred_dir)?;
        if method.is_empty() {
            method = index.method.clone();
        } else if method != index.method {
            return Err(CliError::usage(format!(
                "prediction directories mix methods {method:?} and {:?}",
                index.method
            )));
        }
        let slices = load_slices(pred_dir, &index, &manifest)?;
        let report = metrics::evaluate(&slices, &rule, train_normals.as_deref())
            .map_err(|e| CliError::usage(e.to_string()))?;
        if pooled.is_none() {
            pooled = Some((slices, pred_dir.clone()));
        }
        reports.push(report);
    }

    let aggregate = metrics::aggregate(&reports);
    super::create_dir(&args.out)?;
    let output = EvalOutput {
        method: method.clone(),
        threshold_rule: args.threshold.clone(),
        reports,
        aggregate: aggregate.clone(),
    };
    let json = serde_json::to_string_pretty(&output).expect("report serialization");
    super::write_file(&args.out.join("report.json"), &json)?;
    super::write_file(
        &args.out.join("table.md"),
        &metrics::markdown_table(&[(method.clone(), aggregate.clone())]),
    )?;

    // PR curve, histogram data and plots from the first repetition.
    let (slices, _) = pooled.expect("at least one prediction directory");
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for s in &slices {
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
    let curve = metrics::pr_curve(&scores, &labels)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let mut pr_csv = String::from("recall,precision,threshold\n");
    for p in &curve {
        pr_csv.push_str(&format!("{},{},{}\n", p.recall, p.precision, p.threshold));
    }
    super::write_file(&args.out.join("pr_curve.csv"), &pr_csv)?;
    let pr_points: Vec<(f64, f64)> = curve.iter().map(|p| (p.recall, p.precision)).collect();
    crate::plot::line_chart(&args.out.join("pr_curve.png"), &[pr_points])
        .map_err(CliError::Runtime)?;

    // Normal/anomalous saliency histograms over shared bins.
    let normal: Vec<f64> = scores
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    let anomalous: Vec<f64> = scores
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let bins = metrics::OVERLAP_BINS;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut centers = Vec::with_capacity(bins);
    let mut count_n = vec![0.0f64; bins];
    let mut count_a = vec![0.0f64; bins];
    for b in 0..bins {
        centers.push(lo + (b as f64 + 0.5) * width);
    }
    let bin_of = |v: f64| (((v - lo) / width) as usize).min(bins - 1);
    for &v in &normal {
        count_n[bin_of(v)] += 1.0;
    }
    for &v in &anomalous {
        count_a[bin_of(v)] += 1.0;
    }
    let mut hist_csv = String::from("bin_center,normal_count,anomalous_count\n");
    for b in 0..bins {
        hist_csv.push_str(&format!("{},{},{}\n", centers[b], count_n[b], count_a[b]));
    }
    super::write_file(&args.out.join("overlap_hist.csv"), &hist_csv)?;
    crate::plot::histogram_chart(
        &args.out.join("overlap_hist.png"),
        &centers,
        &count_n,
        &count_a,
    )
    .map_err(CliError::Runtime)?;

    println!(
        "{}: auprc {:.3}({:.3}) dice {:.3}({:.3}) over {} repetition(s) -> {}",
        method,
        aggregate.auprc.mean,
        aggregate.auprc.std,
        aggregate.best_dice.mean,
        aggregate.best_dice.std,
        aggregate.n_repetitions,
        args.out.display()
    );
    Ok(())
}
