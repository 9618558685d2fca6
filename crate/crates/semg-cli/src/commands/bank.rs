//! `bank build`: curate prework vectors from one or more decomposition
//! output directories into a single bank file.

use std::path::Path;

use semg_core::online::{curate_segments, PreworkSegment, PreworkVector};

use crate::config::PipelineConfig;
use crate::{io, CliError};

/// Load a prework segment from a `decompose-offline` output directory
/// (expects `vectors.mubk` and `trains.txt`).
fn load_segment(dir: &Path) -> Result<PreworkSegment, CliError> {
    let bank = io::read_bank(&dir.join("vectors.mubk"))?;
    let (trains, _rate) = io::read_trains(&dir.join("trains.txt"))?;
    let mut vectors = Vec::with_capacity(bank.vectors.len());
    let mut last_sample = 0usize;
    for v in bank.vectors {
        let train = trains
            .iter()
            .find(|t| t.mu_id == v.mu_id)
            .cloned()
            .ok_or_else(|| {
                CliError::data(format!(
                    "{}: vectors.mubk lists MU {} but trains.txt has no such train",
                    dir.display(),
                    v.mu_id
                ))
            })?;
        if let Some(&t) = train.firing_samples().last() {
            last_sample = last_sample.max(t);
        }
        vectors.push(PreworkVector {
            mu_id: v.mu_id,
            composite: v.composite,
            cov_amp: if v.cov_amp.is_finite() {
                Some(v.cov_amp)
            } else {
                None
            },
            cov_isi: if v.cov_isi.is_finite() {
                Some(v.cov_isi)
            } else {
                None
            },
            train,
        });
    }
    Ok(PreworkSegment {
        vectors,
        extension: bank.extension,
        template_len: bank.template_len,
        sample_rate: bank.sample_rate,
        // Offset base for the concatenated dedup timeline; anything past
        // the last firing plus the alignment bound keeps segments disjoint.
        segment_samples: last_sample + bank.template_len + bank.extension + 1,
    })
}

pub fn run(inputs: &[&Path], cfg: &PipelineConfig, out_file: &Path) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::usage(
            "bank build needs at least one decompose-offline output directory",
        ));
    }
    let mut segments = Vec::with_capacity(inputs.len());
    for dir in inputs {
        segments.push(load_segment(dir)?);
    }
    let bank = curate_segments(&segments, &cfg.curate)
        .map_err(|e| CliError::data(format!("curation: {e}")))?;
    io::write_bank(out_file, &bank)?;
    println!(
        "curated {} segment(s) -> {} bank vector(s) at {}",
        segments.len(),
        bank.len(),
        out_file.display()
    );
    Ok(())
}
