//! `simulate`: render the (noise level × repetition) grid with ground truth.

use std::path::Path;

use semg_core::sim;

use crate::commands::{cell_seed, ensure_out_dir, out_path};
use crate::config::PipelineConfig;
use crate::{io, CliError};

fn noise_label(level: Option<f64>) -> String {
    match level {
        None => "none".to_string(),
        Some(db) => format!("{}db", db as i64),
    }
}

pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let pool =
        sim::build_pool(&cfg.sim).map_err(|e| CliError::usage(format!("simulation: {e}")))?;
    let templates = sim::synth_templates(&pool, &cfg.sim);
    let excitation = cfg.excitation()?;

    let template_path = out_path(out, "templates.semt");
    io::write_templates(&template_path, &templates, cfg.sim.sample_rate_hz)?;

    let mut manifest = String::from("kind,path,noise,repetition,seed\n");
    manifest.push_str(&format!(
        "templates,{},,,{}\n",
        template_path.display(),
        cfg.seed
    ));

    for rep in 0..cfg.repetitions {
        // Firing times depend on the repetition only, so noise levels are
        // compared on identical spike trains.
        let firing_seed = cell_seed(cfg.seed, rep, 0);
        let trains = sim::sample_firings(&pool, &excitation, &cfg.sim, firing_seed);
        let active: Vec<_> = trains.into_iter().filter(|t| !t.is_empty()).collect();
        let truth_path = out_path(out, &format!("truth_rep{rep}.txt"));
        io::write_trains(&truth_path, &active, cfg.sim.sample_rate_hz)?;
        manifest.push_str(&format!(
            "truth,{},,{rep},{firing_seed}\n",
            truth_path.display()
        ));
        for (ni, &noise) in cfg.noise_levels.iter().enumerate() {
            let noise_seed = cell_seed(cfg.seed, rep, ni + 1);
            let rec = sim::render(
                &templates,
                &active,
                excitation.len(),
                cfg.sim.sample_rate_hz,
                cfg.sim.grid,
                noise,
                noise_seed,
            )
            .map_err(|e| CliError::data(format!("render: {e}")))?;
            let label = noise_label(noise);
            let rec_path = out_path(out, &format!("recording_{label}_rep{rep}.semg"));
            io::write_recording(&rec_path, &rec)?;
            manifest.push_str(&format!(
                "recording,{},{label},{rep},{noise_seed}\n",
                rec_path.display()
            ));
        }
    }
    io::write_text(&out_path(out, "manifest.csv"), &manifest)?;
    println!(
        "simulated {} noise level(s) x {} repetition(s) into {}",
        cfg.noise_levels.len(),
        cfg.repetitions,
        out.display()
    );
    Ok(())
}
