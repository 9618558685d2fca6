//! Subcommand implementations.

pub mod bank;
pub mod decompose;
pub mod evaluate;
pub mod report;
pub mod simulate;
pub mod stream;

use std::path::{Path, PathBuf};

use semg_core::online::{BankVector, VectorBank};
use semg_core::preprocess;
use semg_core::signal::Recording;

use crate::config::PipelineConfig;
use crate::CliError;

pub fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))
}

/// Channel repair (when masked channels exist) followed by zero-phase
/// filtering: the conditioning every decomposition stage expects.
pub fn preprocess_recording(
    rec: &Recording,
    cfg: &PipelineConfig,
) -> Result<(Recording, Vec<usize>), CliError> {
    let filtered = preprocess::apply_filters(rec, &cfg.filter)
        .map_err(|e| CliError::data(format!("filtering: {e}")))?;
    let (repaired, which) = preprocess::repair_channels(&filtered)
        .map_err(|e| CliError::data(format!("channel repair: {e}")))?;
    Ok((repaired, which))
}

/// Bank-format view of one decomposition result (uncurated vectors).
pub fn result_vectors(result: &semg_core::apfp::DecompositionResult) -> VectorBank {
    VectorBank {
        vectors: result
            .mus
            .iter()
            .map(|mu| BankVector {
                mu_id: mu.mu_id,
                composite: mu.composite.clone(),
                cov_amp: mu.stats.cov_amp.unwrap_or(f64::NAN),
                cov_isi: mu.stats.cov_isi.unwrap_or(f64::NAN),
            })
            .collect(),
        extension: result.extension,
        template_len: result.template_len,
        sample_rate: result.sample_rate,
    }
}

/// Derived per-cell seed for the simulation grid: depends on the master
/// seed and repetition for firings, plus the noise level index for noise.
pub fn cell_seed(master: u64, repetition: usize, noise_index: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((repetition as u64) << 8)
        .wrapping_add(noise_index as u64)
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
