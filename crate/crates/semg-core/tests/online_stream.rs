//! Streaming behavior against batch application and simulated ground truth.

use semg_core::apfp::{run_apfp, ApfpConfig, FastIcaConfig, ReliabilityThresholds};
use semg_core::eval::{compute_metrics, match_pairs, MatchConfig};
use semg_core::online::*;
use semg_core::preprocess;
use semg_core::signal::{GridShape, Recording, SpikeTrain};
use semg_core::sim::*;

struct FakeClock(u64);
impl Clock for FakeClock {
    fn now_micros(&mut self) -> u64 {
        self.0 += 500;
        self.0
    }
}

fn mini_sim_config(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        n_mus: 12,
        recruited_at_max: 6,
        mean_total_fibers: 6000.0,
        grid: GridShape { rows: 5, cols: 5 },
        ..SimConfig::default()
    }
}

fn mini_apfp_config(seed: u64) -> ApfpConfig {
    ApfpConfig {
        extension: 8,
        max_rounds: 3,
        reliability: ReliabilityThresholds {
            xi_min: 0.35,
            ..ReliabilityThresholds::default()
        },
        fastica: FastIcaConfig {
            max_sources_per_round: 16,
            restarts_per_source: 2,
            ..FastIcaConfig::default()
        },
        seed,
        ..ApfpConfig::default()
    }
}

/// Prework on segment 0, returning the curated bank plus a second segment
/// with its ground truth for streaming.
fn bank_and_stream_segment(seed: u64) -> (VectorBank, Recording, GroundTruth) {
    let cfg = mini_sim_config(seed);
    let pool = build_pool(&cfg).unwrap();
    let templates = synth_templates(&pool, &cfg);
    let profile = trapezoid_excitation(0.03, 2.0, 3.0, 2000.0).unwrap();
    let (prework_rec, _) =
        segment_from_pool(&pool, &templates, &cfg, &profile, None, seed ^ 0x11).unwrap();
    let (stream_rec, stream_truth) =
        segment_from_pool(&pool, &templates, &cfg, &profile, None, seed ^ 0x22).unwrap();
    let filtered = preprocess::apply_filters(&prework_rec, &Default::default()).unwrap();
    let result = run_apfp(&filtered, &mini_apfp_config(seed)).unwrap();
    assert!(!result.mus.is_empty(), "prework found nothing");
    let bank = curate_bank(std::slice::from_ref(&result), &CurateConfig::default()).unwrap();
    (bank, stream_rec, stream_truth)
}

/// Independent batch application of a bank: extend the whole recording,
/// project every vector, window the source exactly like the stream does, and
/// apply the same emission rule: without any incremental buffering.
fn batch_apply(rec: &Recording, bank: &VectorBank, cfg: &OnlineConfig) -> Vec<SpikeTrain> {
    let ext = preprocess::extend(rec, bank.extension).unwrap();
    let w_len = (cfg.window_s * rec.sample_rate) as usize;
    let inc = (cfg.increment_s * rec.sample_rate) as usize;
    let t_total = rec.num_samples();
    let tol = (cfg.match_tolerance_ms * rec.sample_rate / 1000.0) as usize;

    let mut out = Vec::new();
    for v in &bank.vectors {
        let full_source = ext.frames.project(&v.composite);
        let mut emitted: Vec<usize> = Vec::new();
        let mut emitted_until = 0usize;
        let mut start = 0usize;
        while start + w_len <= t_total {
            let window_source = &full_source[start..start + w_len];
            let train = match cfg.selector {
                ThresholdSelector::MultiOtsu => {
                    let raw = successive_multithreshold_otsu(
                        window_source,
                        bank.template_len,
                        bank.sample_rate,
                        cfg,
                        v.mu_id,
                    );
                    window_quality_gate(
                        raw,
                        window_source,
                        bank.sample_rate,
                        v.cov_amp + v.cov_isi,
                        cfg,
                    )
                }
                ThresholdSelector::KMeans => {
                    kmeans_threshold(window_source, bank.template_len, v.mu_id)
                }
            };
            let region_start = emitted_until.max(start);
            for &local in train.firing_samples() {
                let t = start + local;
                if t < region_start || t >= start + w_len {
                    continue;
                }
                if let Some(&last) = emitted.last() {
                    if t <= last + tol.max(bank.template_len) {
                        continue;
                    }
                }
                emitted.push(t);
            }
            if !train.is_empty() {
                emitted_until = start + w_len;
            }
            start += inc;
        }
        out.push(SpikeTrain::new(v.mu_id, emitted).unwrap());
    }
    out
}

#[test]
fn stream_equals_batch_application() {
    let (bank, stream_rec, _) = bank_and_stream_segment(101);
    let prepared = preprocess::apply_filters(&stream_rec, &Default::default()).unwrap();
    let cfg = OnlineConfig::default();
    let mut clock = FakeClock(0);
    let streamed = run_stream(&prepared, &bank, &cfg, &mut clock).unwrap();
    let batch = batch_apply(&prepared, &bank, &cfg);
    assert_eq!(streamed.trains.len(), batch.len());
    let skip = bank.extension; // first K samples may differ by zero-padding
    for (s, b) in streamed.trains.iter().zip(&batch) {
        let s_times: Vec<usize> = s
            .firing_samples()
            .iter()
            .copied()
            .filter(|&t| t >= skip)
            .collect();
        let b_times: Vec<usize> = b
            .firing_samples()
            .iter()
            .copied()
            .filter(|&t| t >= skip)
            .collect();
        assert_eq!(
            s_times.len(),
            b_times.len(),
            "MU {}: stream {} vs batch {} spikes",
            s.mu_id,
            s_times.len(),
            b_times.len()
        );
        for (a, b) in s_times.iter().zip(&b_times) {
            assert!(
                a.abs_diff(*b) <= 1,
                "MU {}: stream spike {a} vs batch {b}",
                s.mu_id
            );
        }
    }
}

#[test]
fn stream_matches_ground_truth_on_clean_segment() {
    let (bank, stream_rec, truth) = bank_and_stream_segment(103);
    let prepared = preprocess::apply_filters(&stream_rec, &Default::default()).unwrap();
    let cfg = OnlineConfig::default();
    let mut clock = FakeClock(0);
    let streamed = run_stream(&prepared, &bank, &cfg, &mut clock).unwrap();
    // 5 s at 2 kHz, 1 s window, 0.2 s increment -> 21 windows.
    assert_eq!(streamed.windows, 21);
    let mcfg = MatchConfig {
        max_lag: (bank.extension + bank.template_len) as i64,
        ..MatchConfig::default()
    };
    let metrics = compute_metrics(
        &match_pairs(&streamed.trains, &truth.trains, &mcfg),
        &streamed.trains,
        &truth.trains,
        2000.0,
    );
    assert!(metrics.n_matched >= 3, "matched {}", metrics.n_matched);
    assert!(metrics.mean_mr >= 0.9, "mean MR {}", metrics.mean_mr);
}

#[test]
fn stream_trains_respect_refractory_and_order() {
    let (bank, stream_rec, _) = bank_and_stream_segment(105);
    let prepared = preprocess::apply_filters(&stream_rec, &Default::default()).unwrap();
    let cfg = OnlineConfig::default();
    let mut clock = FakeClock(0);
    let streamed = run_stream(&prepared, &bank, &cfg, &mut clock).unwrap();
    for t in &streamed.trains {
        assert!(t.respects_refractory(bank.template_len));
    }
    assert_eq!(streamed.latency.per_window_s.len(), streamed.windows);
}

#[test]
fn curation_is_idempotent_and_never_grows() {
    let cfg = mini_sim_config(107);
    let pool = build_pool(&cfg).unwrap();
    let templates = synth_templates(&pool, &cfg);
    let profile = trapezoid_excitation(0.03, 2.0, 3.0, 2000.0).unwrap();
    let (rec, _) = segment_from_pool(&pool, &templates, &cfg, &profile, None, 9).unwrap();
    let filtered = preprocess::apply_filters(&rec, &Default::default()).unwrap();
    let result = run_apfp(&filtered, &mini_apfp_config(107)).unwrap();
    let n_raw = result.mus.len();
    assert!(n_raw > 0);
    let bank = curate_bank(std::slice::from_ref(&result), &CurateConfig::default()).unwrap();
    assert!(bank.len() <= n_raw);

    // Re-curating the curated bank (as segments) changes nothing.
    let as_segment = PreworkSegment {
        vectors: bank
            .vectors
            .iter()
            .zip(result.mus.iter())
            .map(|(v, mu)| PreworkVector {
                mu_id: v.mu_id,
                composite: v.composite.clone(),
                cov_amp: Some(v.cov_amp),
                cov_isi: Some(v.cov_isi),
                train: mu.train.clone(),
            })
            .collect(),
        extension: bank.extension,
        template_len: bank.template_len,
        sample_rate: bank.sample_rate,
        segment_samples: 10_000,
    };
    let again = curate_segments(&[as_segment], &CurateConfig::default()).unwrap();
    assert_eq!(again.len(), bank.len());
}

#[test]
fn duplicate_prework_segments_collapse_to_one_bank_vector_each() {
    // The same seeded segment decomposed twice must not double the bank.
    let cfg = mini_sim_config(109);
    let pool = build_pool(&cfg).unwrap();
    let templates = synth_templates(&pool, &cfg);
    let profile = trapezoid_excitation(0.03, 2.0, 3.0, 2000.0).unwrap();
    let (rec, _) = segment_from_pool(&pool, &templates, &cfg, &profile, None, 9).unwrap();
    let filtered = preprocess::apply_filters(&rec, &Default::default()).unwrap();
    let result = run_apfp(&filtered, &mini_apfp_config(109)).unwrap();
    assert!(!result.mus.is_empty());
    let single = curate_bank(std::slice::from_ref(&result), &CurateConfig::default()).unwrap();

    // Identical segments on a shared timeline: mark both segments as being
    // the same recording (segment_samples = 0 keeps the timelines aligned).
    let mut seg_a = PreworkSegment::from(&result);
    seg_a.segment_samples = 0;
    let seg_b = seg_a.clone();
    let pooled = curate_segments(&[seg_a, seg_b], &CurateConfig::default()).unwrap();
    assert_eq!(pooled.len(), single.len());
}

#[test]
fn curation_rejects_empty_bank_with_counts() {
    let cfg = mini_sim_config(111);
    let pool = build_pool(&cfg).unwrap();
    let templates = synth_templates(&pool, &cfg);
    let profile = trapezoid_excitation(0.03, 2.0, 3.0, 2000.0).unwrap();
    let (rec, _) = segment_from_pool(&pool, &templates, &cfg, &profile, None, 9).unwrap();
    let filtered = preprocess::apply_filters(&rec, &Default::default()).unwrap();
    let result = run_apfp(&filtered, &mini_apfp_config(111)).unwrap();
    assert!(!result.mus.is_empty());
    // Impossible quality gates drop every vector.
    let strict = CurateConfig {
        cov_amp_max: 0.0,
        cov_isi_max: 0.0,
        conjunctive: true,
        duplicate_tol_ms: 1.0,
    };
    match curate_bank(std::slice::from_ref(&result), &strict) {
        Err(OnlineError::EmptyBank {
            low_quality,
            duplicates,
        }) => {
            assert_eq!(low_quality, result.mus.len());
            assert_eq!(duplicates, 0);
        }
        other => panic!("expected EmptyBank, got {other:?}"),
    }
}

#[test]
fn stream_rejects_bad_increment() {
    let (bank, stream_rec, _) = bank_and_stream_segment(101);
    let cfg = OnlineConfig {
        increment_s: 2.0, // longer than the window
        ..OnlineConfig::default()
    };
    let mut clock = FakeClock(0);
    assert!(matches!(
        run_stream(&stream_rec, &bank, &cfg, &mut clock),
        Err(OnlineError::BadConfig(_))
    ));
}
