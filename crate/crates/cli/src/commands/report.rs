use std::path::PathBuf;

use anocon::metrics;
use clap::Args;

use super::evaluate::EvalOutput;
use crate::CliError;

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    /// Evaluation directories produced by `evaluate`.
    #[arg(required = true)]
    eval_dirs: Vec<PathBuf>,
}

/// Regenerates the comparison table across evaluation directories, sorted
/// by mean AUPRC.
pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for dir in &args.eval_dirs {
        let text = std::fs::read_to_string(dir.join("report.json")).map_err(|e| {
            CliError::usage(format!("no report.json in {}: {e}", dir.display()))
        })?;
        let output: EvalOutput = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad report.json in {}: {e}", dir.display())))?;
        rows.push((output.method.clone(), output.aggregate));
    }
    rows.sort_by(|a, b| {
        a.1.auprc
            .mean
            .partial_cmp(&b.1.auprc.mean)
            .expect("finite auprc")
    });
    super::create_dir(&args.out)?;
    super::write_file(&args.out.join("table.md"), &metrics::markdown_table(&rows))?;
    super::write_file(&args.out.join("table.csv"), &metrics::csv_table(&rows))?;
    println!("compared {} methods -> {}", rows.len(), args.out.display());
    Ok(())
}
