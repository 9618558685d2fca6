//! `stream`: apply a bank to a recording replayed as a data stream.

use std::path::Path;
use std::time::{Duration, Instant};

use semg_core::online::{run_stream_with, OnlineError};

use crate::clock::SystemClock;
use crate::commands::{ensure_out_dir, out_path, preprocess_recording};
use crate::config::PipelineConfig;
use crate::{io, CliError};

pub struct StreamArgs {
    pub realtime: bool,
    pub enforce_realtime: bool,
}

pub fn run(
    recording_path: &Path,
    bank_path: &Path,
    cfg: &PipelineConfig,
    args: &StreamArgs,
    out: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out)?;
    let raw = io::read_recording(recording_path)?;
    let bank = io::read_bank(bank_path)?;
    if (raw.sample_rate - bank.sample_rate).abs() > 1e-9 {
        return Err(CliError::data(format!(
            "sample rate mismatch: bank {} Hz vs recording {} Hz",
            bank.sample_rate, raw.sample_rate
        )));
    }
    let used = raw.used_channels().len();
    if used * bank.extension != bank.dim() {
        return Err(CliError::data(format!(
            "extension mismatch: bank dimension {} vs {} usable channels x K={} = {}",
            bank.dim(),
            used,
            bank.extension,
            used * bank.extension
        )));
    }
    let (prepared, _) = preprocess_recording(&raw, cfg)?;

    let inc = Duration::from_secs_f64(cfg.online.increment_s);
    let start = Instant::now();
    let realtime = args.realtime;
    let pace = move |window_index: usize| {
        if realtime {
            // Window w needs samples up to (w·increment + window) of stream
            // time; replaying at native rate means waiting until then.
            let due = inc * (window_index as u32) + Duration::from_secs_f64(1.0);
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
    };
    let mut clock = SystemClock::new();
    let outcome =
        run_stream_with(&prepared, &bank, &cfg.online, &mut clock, pace).map_err(|e| match e {
            OnlineError::Incompatible { .. } => CliError::data(format!("stream: {e}")),
            other => CliError::usage(format!("stream: {other}")),
        })?;

    io::write_trains(
        &out_path(out, "trains.txt"),
        &outcome.trains,
        bank.sample_rate,
    )?;
    io::write_latency_csv(&out_path(out, "latency.csv"), &outcome.latency)?;
    let summary = format!(
        "windows: {}\nmean latency: {:.3} ms\nsd latency: {:.3} ms\nmax latency: {:.3} ms\nincrement budget: {:.1} ms\nrealtime: {}\n",
        outcome.windows,
        outcome.latency.mean_s * 1000.0,
        outcome.latency.sd_s * 1000.0,
        outcome.latency.max_s * 1000.0,
        cfg.online.increment_s * 1000.0,
        if outcome.latency.realtime { "PASS" } else { "FAIL" }
    );
    io::write_text(&out_path(out, "summary.txt"), &summary)?;
    print!("{summary}");

    if args.enforce_realtime && !outcome.latency.realtime {
        return Err(CliError::RealtimeBudget {
            max_s: outcome.latency.max_s,
            budget_s: cfg.online.increment_s,
        });
    }
    Ok(())
}
