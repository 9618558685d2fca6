//! `report`: aggregate metric CSVs from several runs into one summary.

use std::path::Path;

use crate::commands::{ensure_out_dir, out_path};
use crate::{io, CliError};

pub fn run(inputs: &[&Path], out: &Path) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::usage("report needs at least one metrics CSV"));
    }
    ensure_out_dir(out)?;
    let mut rows = String::from("source,matched_mus,mean_mr,mean_fdr,mean_fnr\n");
    let mut mrs = Vec::new();
    println!(
        "{:<40} {:>8} {:>8} {:>8} {:>8}",
        "source", "matched", "MR", "FDR", "FNR"
    );
    for path in inputs {
        let (mr, fdr, fnr, matched) = io::read_metrics_summary(path)?;
        mrs.push(mr);
        rows.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            path.display(),
            matched,
            mr,
            fdr,
            fnr
        ));
        println!(
            "{:<40} {:>8} {:>8.4} {:>8.4} {:>8.4}",
            path.display(),
            matched,
            mr,
            fdr,
            fnr
        );
    }
    let mean = mrs.iter().sum::<f64>() / mrs.len() as f64;
    let min = mrs.iter().cloned().fold(f64::MAX, f64::min);
    let max = mrs.iter().cloned().fold(f64::MIN, f64::max);
    rows.push_str(&format!("overall,,{mean:.6},,\n"));
    println!(
        "overall mean MR {mean:.4} (min {min:.4}, max {max:.4}) over {} file(s)",
        mrs.len()
    );
    io::write_text(&out_path(out, "report.csv"), &rows)?;
    Ok(())
}
