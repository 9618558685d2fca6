//! `evaluate`: score online trains against a reference, emit CSV and plots.

use std::path::Path;

use semg_core::eval::{compute_metrics, decomposability, match_pairs};
use semg_core::signal::SpikeTrain;

use crate::commands::{ensure_out_dir, out_path};
use crate::config::PipelineConfig;
use crate::{io, svgplot, CliError};

pub struct EvaluateArgs<'a> {
    pub online: &'a Path,
    pub reference: &'a Path,
    pub recording: Option<&'a Path>,
    pub templates: Option<&'a Path>,
    pub emit_svg: bool,
}

pub fn run(args: &EvaluateArgs, cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let (online, online_rate) = io::read_trains(args.online)?;
    let (reference, reference_rate) = io::read_trains(args.reference)?;
    if (online_rate - reference_rate).abs() > 1e-9 {
        return Err(CliError::data(format!(
            "sample rate mismatch: online {online_rate} Hz vs reference {reference_rate} Hz"
        )));
    }
    let result = match_pairs(&online, &reference, &cfg.eval);
    let metrics = compute_metrics(&result, &online, &reference, online_rate);

    // Optional decomposability from a recording + template set.
    let mut cdi_per_pair: Option<Vec<f64>> = None;
    let mut di_context = None;
    if let (Some(rec_path), Some(tpl_path)) = (args.recording, args.templates) {
        let rec = io::read_recording(rec_path)?;
        let (templates, _) = io::read_templates(tpl_path)?;
        let report = decomposability(&templates, &rec);
        let lookup = |id: u32| -> Option<f64> {
            templates
                .mu_ids()
                .iter()
                .position(|&m| m == id)
                .map(|idx| report.cdi[idx])
        };
        cdi_per_pair = Some(
            metrics
                .per_mu
                .iter()
                .map(|m| {
                    lookup(m.reference_id)
                        .or_else(|| lookup(m.online_id))
                        .unwrap_or(f64::NAN)
                })
                .collect(),
        );
        di_context = Some((rec, templates));
    }

    io::write_metrics_csv(
        &out_path(out, "metrics.csv"),
        &metrics,
        cdi_per_pair.as_deref(),
    )?;

    if args.emit_svg {
        let find = |trains: &[SpikeTrain], id: u32| trains.iter().find(|t| t.mu_id == id).cloned();
        let pairs: Vec<(SpikeTrain, SpikeTrain)> = metrics
            .per_mu
            .iter()
            .filter_map(|m| {
                Some((
                    find(&reference, m.reference_id)?,
                    find(&online, m.online_id)?,
                ))
            })
            .collect();
        let total = pairs
            .iter()
            .flat_map(|(a, b)| {
                a.firing_samples()
                    .last()
                    .copied()
                    .into_iter()
                    .chain(b.firing_samples().last().copied())
            })
            .max()
            .unwrap_or(1)
            + 1;
        io::write_text(
            &out_path(out, "raster.svg"),
            &svgplot::raster(&pairs, total, online_rate),
        )?;
        io::write_text(
            &out_path(out, "metric_bars.svg"),
            &svgplot::metric_bars(&[("evaluation".to_string(), metrics.clone())]),
        )?;
        if let Some(cdi) = &cdi_per_pair {
            let points: Vec<(f64, f64)> = metrics
                .per_mu
                .iter()
                .zip(cdi)
                .filter(|(_, c)| c.is_finite())
                .map(|(m, &c)| (c, m.mr))
                .collect();
            io::write_text(
                &out_path(out, "mr_vs_cdi.svg"),
                &svgplot::mr_vs_cdi(&points),
            )?;
        }
        let _ = di_context;
    }

    println!(
        "matched {} MU pair(s): mean MR {:.4}, FDR {:.4}, FNR {:.4} ({} online / {} reference unmatched)",
        metrics.n_matched,
        metrics.mean_mr,
        metrics.mean_fdr,
        metrics.mean_fnr,
        metrics.n_unmatched_online,
        metrics.n_unmatched_reference
    );
    Ok(())
}
