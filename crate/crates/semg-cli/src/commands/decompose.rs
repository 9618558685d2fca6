//! `decompose-offline`: progressive FastICA peel-off on one recording.

use std::path::Path;

use semg_core::apfp;
use semg_core::preprocess::suggest_bad_channels;

use crate::commands::{ensure_out_dir, out_path, preprocess_recording, result_vectors};
use crate::config::PipelineConfig;
use crate::{io, CliError};

pub fn run(recording_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let raw = io::read_recording(recording_path)?;
    let suspicious = suggest_bad_channels(&raw, 5.0);
    if !suspicious.is_empty() {
        eprintln!(
            "note: channels {suspicious:?} have RMS above 5x the median; consider masking them"
        );
    }
    let (prepared, repaired) = preprocess_recording(&raw, cfg)?;
    let result = apfp::run_apfp(&prepared, &cfg.apfp)
        .map_err(|e| CliError::data(format!("decomposition: {e}")))?;

    let trains: Vec<_> = result.mus.iter().map(|m| m.train.clone()).collect();
    io::write_trains(&out_path(out, "trains.txt"), &trains, result.sample_rate)?;
    io::write_templates(
        &out_path(out, "templates.semt"),
        &result.templates,
        result.sample_rate,
    )?;
    io::write_bank(&out_path(out, "vectors.mubk"), &result_vectors(&result))?;

    let mut log = String::new();
    log.push_str(&format!(
        "recording: {}\naccepted motor units: {}\nrepaired channels: {:?}\n",
        recording_path.display(),
        result.mus.len(),
        repaired
    ));
    for mu in &result.mus {
        log.push_str(&format!(
            "MU {}: {} spikes, xi {:.3}, rate {:?}, cov_amp {:?}, cov_isi {:?}\n",
            mu.mu_id,
            mu.train.len(),
            mu.xi,
            mu.stats.firing_rate,
            mu.stats.cov_amp,
            mu.stats.cov_isi
        ));
    }
    for round in &result.rounds {
        log.push_str(&format!(
            "round {}: {} sources, {} candidates, accepted {:?}, residual energy {:.6e}\n",
            round.round,
            round.sources_extracted,
            round.candidates,
            round.accepted_mu_ids,
            round.residual_energy
        ));
        for rej in &round.rejections {
            log.push_str(&format!("  rejected: {rej}\n"));
        }
    }
    io::write_text(&out_path(out, "log.txt"), &log)?;
    println!(
        "decomposed {} -> {} motor units ({} rounds)",
        recording_path.display(),
        result.mus.len(),
        result.rounds.len()
    );
    Ok(())
}
