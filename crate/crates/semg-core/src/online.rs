//! Two-stage online decomposition: a curated bank of separation vectors from
//! offline prework, applied per sliding window to streamed samples.
//!
//! Windows overlap: each increment of new samples is processed together with
//! the most recent history to form a fixed-length window. Every bank vector
//! maps the extended window to a source signal, spikes are extracted with the
//! successive multi-threshold Otsu selector (or a k-means baseline), and the
//! per-window trains are stitched into continuous streams.

use alloc::vec;
use alloc::vec::Vec;

use crate::apfp::{self, DecompositionResult};
use crate::signal::{spike_stats, Recording, SpikeTrain};

#[derive(Debug, Clone, PartialEq)]
pub enum OnlineError {
    /// Curation emptied the bank; counts per drop reason attached.
    EmptyBank {
        low_quality: usize,
        duplicates: usize,
    },
    /// Prework results disagree on extension/template/rate provenance.
    MixedProvenance(&'static str),
    /// Stream and bank disagree.
    Incompatible {
        what: &'static str,
        bank: f64,
        stream: f64,
    },
    /// Windows must arrive in order.
    OutOfOrderWindow {
        expected: usize,
        got: usize,
    },
    BadConfig(&'static str),
}

impl core::fmt::Display for OnlineError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            OnlineError::EmptyBank {
                low_quality,
                duplicates,
            } => write!(
                f,
                "no vectors left after curation ({low_quality} low quality, {duplicates} duplicates)"
            ),
            OnlineError::MixedProvenance(what) => {
                write!(f, "prework results disagree on {what}")
            }
            OnlineError::Incompatible { what, bank, stream } => {
                write!(f, "bank/stream mismatch on {what}: {bank} vs {stream}")
            }
            OnlineError::OutOfOrderWindow { expected, got } => {
                write!(f, "window {got} arrived, expected {expected}")
            }
            OnlineError::BadConfig(msg) => write!(f, "bad online config: {msg}"),
        }
    }
}

impl core::error::Error for OnlineError {}

/// One separation vector of the bank, in extended-raw space.
#[derive(Debug, Clone, PartialEq)]
pub struct BankVector {
    pub mu_id: u32,
    pub composite: Vec<f64>,
    /// Prework quality statistics carried for provenance.
    pub cov_amp: f64,
    pub cov_isi: f64,
}

/// Frozen set of separation vectors for online application.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorBank {
    pub vectors: Vec<BankVector>,
    /// Extension factor the vectors were learned under.
    pub extension: usize,
    /// Template length (refractory spacing) in samples.
    pub template_len: usize,
    pub sample_rate: f64,
}

impl VectorBank {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.composite.len())
    }
}

/// Spike extraction strategy for the online stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSelector {
    /// Successive multi-threshold Otsu (the default).
    MultiOtsu,
    /// Two-class k-means over peak amplitudes (comparison baseline).
    KMeans,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub window_s: f64,
    pub increment_s: f64,
    pub max_candidate_thresholds: usize,
    /// Minimum spikes required before threshold candidates are evaluated.
    pub min_spikes_per_window: usize,
    /// Candidate thresholds stop once the train would retain fewer than
    /// this fraction of the initial train's spikes. Guards the CoV sum
    /// against collapsing onto small, accidentally regular subsets, which
    /// otherwise wins the argmin whenever the true amplitudes are tightly
    /// clustered. At 1.0 the sweep keeps the initial train unless the
    /// quality ceiling rejects the window outright; lower it when spurious
    /// peaks are expected to sit below the true amplitudes.
    pub min_keep_fraction: f64,
    /// Emit nothing when even the best candidate's CoV_amp + CoV_isi
    /// exceeds `cov_ceiling_factor ×` the unit's prework CoV sum (with
    /// `cov_ceiling_floor` as a lower bound): the window holds no plausible
    /// discharge for the unit (quiet or cross-talk only). The reference
    /// score comes from the bank metadata, so the gate adapts to the noise
    /// level the vectors were learned at.
    pub cov_ceiling_factor: f64,
    pub cov_ceiling_floor: f64,
    /// Cross-window spike dedup tolerance.
    pub match_tolerance_ms: f64,
    pub selector: ThresholdSelector,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            window_s: 1.0,
            increment_s: 0.2,
            max_candidate_thresholds: 64,
            min_spikes_per_window: 2,
            min_keep_fraction: 1.0,
            cov_ceiling_factor: 2.0,
            cov_ceiling_floor: 0.4,
            match_tolerance_ms: 1.0,
            selector: ThresholdSelector::MultiOtsu,
        }
    }
}

/// Quality gate for curation.
#[derive(Debug, Clone, PartialEq)]
pub struct CurateConfig {
    pub cov_amp_max: f64,
    pub cov_isi_max: f64,
    /// Drop when both CoV gates fail (as stated) or when either does.
    pub conjunctive: bool,
    pub duplicate_tol_ms: f64,
}

impl Default for CurateConfig {
    fn default() -> Self {
        CurateConfig {
            cov_amp_max: 0.3,
            cov_isi_max: 0.4,
            conjunctive: true,
            duplicate_tol_ms: 1.0,
        }
    }
}

/// One prework unit as needed for curation: vector, quality, train.
#[derive(Debug, Clone, PartialEq)]
pub struct PreworkVector {
    pub mu_id: u32,
    pub composite: Vec<f64>,
    pub cov_amp: Option<f64>,
    pub cov_isi: Option<f64>,
    pub train: SpikeTrain,
}

/// One prework segment's vectors plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PreworkSegment {
    pub vectors: Vec<PreworkVector>,
    pub extension: usize,
    pub template_len: usize,
    pub sample_rate: f64,
    /// Segment length in samples; offsets the concatenated dedup timeline.
    pub segment_samples: usize,
}

impl From<&DecompositionResult> for PreworkSegment {
    fn from(r: &DecompositionResult) -> Self {
        PreworkSegment {
            vectors: r
                .mus
                .iter()
                .map(|mu| PreworkVector {
                    mu_id: mu.mu_id,
                    composite: mu.composite.clone(),
                    cov_amp: mu.stats.cov_amp,
                    cov_isi: mu.stats.cov_isi,
                    train: mu.train.clone(),
                })
                .collect(),
            extension: r.extension,
            template_len: r.template_len,
            sample_rate: r.sample_rate,
            segment_samples: r.residual.num_samples(),
        }
    }
}

/// Pool prework decompositions into a curated vector bank.
///
/// Low-quality vectors (CoV gates, conjunctive by default) are dropped, then
/// duplicates are removed across all pooled results by the coincidence rule
/// on the prework trains laid out on a concatenated timeline. Remaining
/// vectors are renumbered densely.
pub fn curate_bank(
    results: &[DecompositionResult],
    cfg: &CurateConfig,
) -> Result<VectorBank, OnlineError> {
    let segments: Vec<PreworkSegment> = results.iter().map(PreworkSegment::from).collect();
    curate_segments(&segments, cfg)
}

/// [`curate_bank`] over pre-extracted segments (the file-based path).
pub fn curate_segments(
    segments: &[PreworkSegment],
    cfg: &CurateConfig,
) -> Result<VectorBank, OnlineError> {
    let first = segments
        .first()
        .ok_or(OnlineError::BadConfig("need at least one prework result"))?;
    for r in segments {
        if r.extension != first.extension {
            return Err(OnlineError::MixedProvenance("extension factor"));
        }
        if r.template_len != first.template_len {
            return Err(OnlineError::MixedProvenance("template length"));
        }
        if r.sample_rate != first.sample_rate {
            return Err(OnlineError::MixedProvenance("sample rate"));
        }
        if r.vectors.first().map(|v| v.composite.len())
            != first.vectors.first().map(|v| v.composite.len())
        {
            return Err(OnlineError::MixedProvenance("vector dimension"));
        }
    }

    let mut low_quality = 0usize;
    let mut duplicates = 0usize;
    let tol = (cfg.duplicate_tol_ms * first.sample_rate / 1000.0) as usize;
    let max_lag = (first.extension + first.template_len) as i64;

    struct Pooled {
        composite: Vec<f64>,
        cov_amp: f64,
        cov_isi: f64,
        train: SpikeTrain,
    }
    let mut pooled: Vec<Pooled> = Vec::new();
    let mut offset = 0usize;
    for r in segments {
        for mu in &r.vectors {
            let (cov_amp, cov_isi) = match (mu.cov_amp, mu.cov_isi) {
                (Some(a), Some(i)) => (a, i),
                _ => {
                    low_quality += 1;
                    continue;
                }
            };
            let amp_bad = cov_amp > cfg.cov_amp_max;
            let isi_bad = cov_isi > cfg.cov_isi_max;
            let drop = if cfg.conjunctive {
                amp_bad && isi_bad
            } else {
                amp_bad || isi_bad
            };
            if drop {
                low_quality += 1;
                continue;
            }
            let shifted: Vec<usize> = mu
                .train
                .firing_samples()
                .iter()
                .map(|&t| t + offset)
                .collect();
            let train = SpikeTrain::new(mu.mu_id, shifted).expect("monotone shift");
            let candidate = Pooled {
                composite: mu.composite.clone(),
                cov_amp,
                cov_isi,
                train,
            };
            let dup = pooled.iter_mut().find(|p| {
                apfp::trains_are_duplicates(&p.train, &candidate.train, tol, max_lag, 0.5)
            });
            match dup {
                Some(existing) => {
                    duplicates += 1;
                    // Keep the better quality score.
                    if candidate.cov_amp + candidate.cov_isi < existing.cov_amp + existing.cov_isi {
                        *existing = candidate;
                    }
                }
                None => pooled.push(candidate),
            }
        }
        offset += r.segment_samples;
    }

    if pooled.is_empty() {
        return Err(OnlineError::EmptyBank {
            low_quality,
            duplicates,
        });
    }
    let vectors = pooled
        .into_iter()
        .enumerate()
        .map(|(i, p)| BankVector {
            mu_id: i as u32,
            composite: p.composite,
            cov_amp: p.cov_amp,
            cov_isi: p.cov_isi,
        })
        .collect();
    Ok(VectorBank {
        vectors,
        extension: first.extension,
        template_len: first.template_len,
        sample_rate: first.sample_rate,
    })
}

/// Successive multi-threshold Otsu spike extraction for one window source.
///
/// Starting from the Otsu threshold on the squared source, candidate
/// thresholds at the midpoints of consecutive ranked peak amplitudes are
/// swept (capped with uniform subsampling), and the train minimizing
/// `CoV_amp + CoV_isi` wins. Candidates with fewer than 3 spikes cannot be
/// scored and are skipped; if none can be scored the initial train stands.
pub fn successive_multithreshold_otsu(
    source: &[f64],
    min_separation: usize,
    sample_rate: f64,
    cfg: &OnlineConfig,
    mu_id: u32,
) -> SpikeTrain {
    let sq: Vec<f64> = source.iter().map(|&v| v * v).collect();
    let Ok(initial) = apfp::otsu_threshold(&sq) else {
        return SpikeTrain::empty(mu_id);
    };
    let (train0, amps0) = apfp::detect_spikes(source, initial, min_separation, mu_id);
    // A window this sparse carries no validatable activity for the unit -
    // it is either quiet or pure cross-talk leakage. Emitting its initial
    // train would spray the stream with junk firings around recruitment.
    if train0.len() < cfg.min_spikes_per_window {
        return SpikeTrain::empty(mu_id);
    }
    if train0.len() < 3 {
        return train0;
    }
    let mut ranked = amps0.clone();
    ranked.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let mut candidates: Vec<f64> = Vec::with_capacity(ranked.len());
    candidates.push(initial);
    for pair in ranked.windows(2) {
        candidates.push(0.5 * (pair[0] + pair[1]));
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    if candidates.len() > cfg.max_candidate_thresholds {
        let n = candidates.len();
        let keep = cfg.max_candidate_thresholds;
        let sub: Vec<f64> = (0..keep)
            .map(|i| candidates[i * (n - 1) / (keep - 1)])
            .collect();
        candidates = sub;
    }

    let min_keep = ((train0.len() as f64) * cfg.min_keep_fraction) as usize;
    let mut best: Option<(f64, SpikeTrain)> = None;
    for &thr in &candidates {
        let (train, amps) = apfp::detect_spikes(source, thr, min_separation, mu_id);
        if train.len() < 3 || train.len() < min_keep {
            continue;
        }
        let stats = spike_stats(&train, &amps, sample_rate);
        let (Some(ca), Some(ci)) = (stats.cov_amp, stats.cov_isi) else {
            continue;
        };
        let score = ca + ci;
        if best.as_ref().map_or(true, |(bs, _)| score < *bs) {
            best = Some((score, train));
        }
    }
    match best {
        Some((_, train)) => train,
        None => train0,
    }
}

/// Pipeline-level quality gate for one window's train, applied after either
/// threshold selector: the train must look like a plausible discharge for
/// the unit, judged against its prework CoV sum (bank metadata). Trains
/// whose CoV_amp + CoV_isi exceed the adaptive ceiling are suppressed
/// wholesale. Unscorable trains (< 3 spikes) pass through.
pub fn window_quality_gate(
    train: SpikeTrain,
    source: &[f64],
    sample_rate: f64,
    prework_cov_sum: f64,
    cfg: &OnlineConfig,
) -> SpikeTrain {
    if train.len() < 3 || !prework_cov_sum.is_finite() {
        return train;
    }
    let ceiling = (cfg.cov_ceiling_factor * prework_cov_sum).max(cfg.cov_ceiling_floor);
    let amps: Vec<f64> = train
        .firing_samples()
        .iter()
        .map(|&t| source[t] * source[t])
        .collect();
    let stats = spike_stats(&train, &amps, sample_rate);
    match (stats.cov_amp, stats.cov_isi) {
        (Some(a), Some(i)) if a + i > ceiling => SpikeTrain::empty(train.mu_id),
        _ => train,
    }
}

/// Two-class k-means spike extraction (baseline selector).
///
/// All squared sample amplitudes of the source are clustered with Lloyd
/// iterations seeded at the min/max; the class boundary becomes the spike
/// threshold and peaks above it form the train, subject to the refractory
/// rule. Clustering samples (not peaks) pulls the boundary toward the
/// largest amplitudes, which is the baseline's documented weakness.
pub fn kmeans_threshold(source: &[f64], min_separation: usize, mu_id: u32) -> SpikeTrain {
    let sq: Vec<f64> = source.iter().map(|&v| v * v).collect();
    let lo = sq.iter().cloned().fold(f64::MAX, f64::min);
    let hi = sq.iter().cloned().fold(f64::MIN, f64::max);
    if sq.len() < 2 || !(hi > lo) {
        return SpikeTrain::empty(mu_id);
    }
    let (c0, c1) = kmeans_two_centers(&sq);
    let boundary = 0.5 * (c0 + c1);
    let (train, _) = apfp::detect_spikes(source, boundary, min_separation, mu_id);
    train
}

/// 1-D two-class Lloyd k-means (exposed for the baseline's unit tests).
pub fn kmeans_two_centers(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::MAX, f64::min);
    let hi = values.iter().cloned().fold(f64::MIN, f64::max);
    let (mut c0, mut c1) = (lo, hi);
    for _ in 0..100 {
        let (mut s0, mut n0, mut s1, mut n1) = (0.0f64, 0usize, 0.0f64, 0usize);
        for &v in values {
            if (v - c0).abs() <= (v - c1).abs() {
                s0 += v;
                n0 += 1;
            } else {
                s1 += v;
                n1 += 1;
            }
        }
        let new0 = if n0 > 0 { s0 / n0 as f64 } else { c0 };
        let new1 = if n1 > 0 { s1 / n1 as f64 } else { c1 };
        let movement = (new0 - c0).abs().max((new1 - c1).abs());
        c0 = new0;
        c1 = new1;
        if movement < 1e-9 {
            break;
        }
    }
    (c0, c1)
}

/// Apply every bank vector to one extended window.
///
/// `frames` must hold the window samples channel-major with `history` extra
/// leading samples per channel (zero-filled at stream start), so the delay
/// lines see true past samples across window boundaries.
struct WindowFrames<'a> {
    /// Channel-major data: `channels × (history + window)` samples.
    data: &'a [f64],
    samples_per_channel: usize,
    history: usize,
    channels: usize,
}

impl WindowFrames<'_> {
    /// Extended sample at window-local time `t` for (channel block, delay).
    #[inline]
    fn value(&self, ch: usize, t_local: usize, delay: usize) -> f64 {
        let t = self.history + t_local;
        if delay > t {
            return 0.0;
        }
        self.data[ch * self.samples_per_channel + (t - delay)]
    }
}

/// Per-MU spike trains extracted from one window.
///
/// `window` holds the usable channels of the current window, channel-major,
/// preceded by `history` samples of context per channel (zeros before the
/// stream starts). Times in the returned trains are window-local.
pub fn process_window(
    window: &[f64],
    channels: usize,
    history: usize,
    bank: &VectorBank,
    cfg: &OnlineConfig,
) -> Result<Vec<SpikeTrain>, OnlineError> {
    if channels == 0 || window.len() % channels != 0 {
        return Err(OnlineError::BadConfig("window buffer shape"));
    }
    let samples_per_channel = window.len() / channels;
    if samples_per_channel < history {
        return Err(OnlineError::BadConfig("window shorter than history"));
    }
    let k = bank.extension;
    if channels * k != bank.dim() {
        return Err(OnlineError::Incompatible {
            what: "extended dimension",
            bank: bank.dim() as f64,
            stream: (channels * k) as f64,
        });
    }
    let frames = WindowFrames {
        data: window,
        samples_per_channel,
        history,
        channels,
    };
    let w_len = samples_per_channel - history;
    let mut out = Vec::with_capacity(bank.len());
    let mut source = vec![0.0f64; w_len];
    for v in &bank.vectors {
        for (t, s) in source.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ch in 0..frames.channels {
                let wslice = &v.composite[ch * k..(ch + 1) * k];
                for (d, &wv) in wslice.iter().enumerate() {
                    acc += wv * frames.value(ch, t, d);
                }
            }
            *s = acc;
        }
        let prework_sum = if v.cov_amp.is_finite() && v.cov_isi.is_finite() {
            v.cov_amp + v.cov_isi
        } else {
            f64::INFINITY
        };
        // The CoV-based window gate belongs to the multi-threshold arm: it
        // is the interval/waveform reliability logic that the amplitude-only
        // k-means baseline lacks.
        let train = match cfg.selector {
            ThresholdSelector::MultiOtsu => {
                let raw = successive_multithreshold_otsu(
                    &source,
                    bank.template_len,
                    bank.sample_rate,
                    cfg,
                    v.mu_id,
                );
                window_quality_gate(raw, &source, bank.sample_rate, prework_sum, cfg)
            }
            ThresholdSelector::KMeans => kmeans_threshold(&source, bank.template_len, v.mu_id),
        };
        out.push(train);
    }
    Ok(out)
}

/// Stitching state: tracks per-MU last emitted spikes across windows.
#[derive(Debug, Clone)]
pub struct StitchState {
    last_emitted: Vec<Option<usize>>,
    next_window: usize,
    emitted_until: Vec<usize>,
}

impl StitchState {
    pub fn new(n_mus: usize) -> Self {
        StitchState {
            last_emitted: vec![None; n_mus],
            next_window: 0,
            emitted_until: vec![0; n_mus],
        }
    }
}

/// Merge one window's trains into the stream, emitting only new spikes.
///
/// Spikes inside the newest increment region are emitted unless they fall
/// within the match tolerance of an already-emitted boundary spike or inside
/// the refractory span of the previous emission. A unit's region only
/// advances when its window produced a train, so a window suppressed by the
/// quality gate leaves its increment for the next passing window to decide.
/// Returns `(mu index, stream sample)` pairs in deterministic order.
pub fn stitch(
    state: &mut StitchState,
    window_trains: &[SpikeTrain],
    window_index: usize,
    window_start: usize,
    window_len: usize,
    bank: &VectorBank,
    cfg: &OnlineConfig,
) -> Result<Vec<(usize, usize)>, OnlineError> {
    if window_index != state.next_window {
        return Err(OnlineError::OutOfOrderWindow {
            expected: state.next_window,
            got: window_index,
        });
    }
    state.next_window += 1;
    let window_end = window_start + window_len;
    let tol = (cfg.match_tolerance_ms * bank.sample_rate / 1000.0) as usize;
    let refractory = bank.template_len;
    let mut emitted = Vec::new();
    for (mu_idx, train) in window_trains.iter().enumerate() {
        let region_start = state.emitted_until[mu_idx].max(window_start);
        for &local in train.firing_samples() {
            let stream_t = window_start + local;
            if stream_t < region_start || stream_t >= window_end {
                continue;
            }
            if let Some(last) = state.last_emitted[mu_idx] {
                // Dedup against the boundary spike and enforce refractory
                // spacing across windows.
                if stream_t <= last + tol.max(refractory) {
                    continue;
                }
            }
            state.last_emitted[mu_idx] = Some(stream_t);
            emitted.push((mu_idx, stream_t));
        }
        if !train.is_empty() {
            state.emitted_until[mu_idx] = window_end;
        }
    }
    Ok(emitted)
}

/// Wall-clock source for latency measurement; the std companion implements
/// this over a monotonic clock, tests can fake it.
pub trait Clock {
    fn now_micros(&mut self) -> u64;
}

/// Latency statistics over processed windows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub per_window_s: Vec<f64>,
    pub mean_s: f64,
    pub sd_s: f64,
    pub max_s: f64,
    /// Whether every window beat the increment budget.
    pub realtime: bool,
}

/// Streamed decomposition outcome.
#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub trains: Vec<SpikeTrain>,
    pub latency: LatencyReport,
    pub windows: usize,
}

/// Drive the window pipeline over a whole recording as if streamed.
///
/// Increments arrive in order; each full window is processed and stitched.
/// A truncated final window is dropped. Per-window latency is measured
/// around the processing call and never influences the outputs.
pub fn run_stream(
    rec: &Recording,
    bank: &VectorBank,
    cfg: &OnlineConfig,
    clock: &mut dyn Clock,
) -> Result<StreamOutcome, OnlineError> {
    run_stream_with(rec, bank, cfg, clock, |_| {})
}

/// [`run_stream`] with a hook invoked before each window is processed; the
/// driver uses it to pace replay at the native rate.
pub fn run_stream_with(
    rec: &Recording,
    bank: &VectorBank,
    cfg: &OnlineConfig,
    clock: &mut dyn Clock,
    mut before_window: impl FnMut(usize),
) -> Result<StreamOutcome, OnlineError> {
    if !(cfg.increment_s > 0.0 && cfg.increment_s <= cfg.window_s) {
        return Err(OnlineError::BadConfig(
            "increment must be positive and no longer than the window",
        ));
    }
    if rec.sample_rate != bank.sample_rate {
        return Err(OnlineError::Incompatible {
            what: "sample rate",
            bank: bank.sample_rate,
            stream: rec.sample_rate,
        });
    }
    let used = rec.used_channels();
    if used.len() * bank.extension != bank.dim() {
        return Err(OnlineError::Incompatible {
            what: "channels x extension",
            bank: bank.dim() as f64,
            stream: (used.len() * bank.extension) as f64,
        });
    }
    let w_len = (cfg.window_s * rec.sample_rate) as usize;
    let inc = (cfg.increment_s * rec.sample_rate) as usize;
    if w_len == 0 || inc == 0 {
        return Err(OnlineError::BadConfig("window too short for sample rate"));
    }
    let history = bank.extension - 1;
    let t_total = rec.num_samples();

    let mut state = StitchState::new(bank.len());
    let mut spikes_per_mu: Vec<Vec<usize>> = vec![Vec::new(); bank.len()];
    let mut latencies = Vec::new();
    let mut buf = vec![0.0f64; used.len() * (history + w_len)];
    let mut window_index = 0usize;
    let mut start = 0usize;
    while start + w_len <= t_total {
        // Assemble channel-major window plus history (zeros before t=0).
        let per_ch = history + w_len;
        for (ui, &ch) in used.iter().enumerate() {
            let src = rec.channel(ch);
            for i in 0..per_ch {
                let t = start as i64 - history as i64 + i as i64;
                buf[ui * per_ch + i] = if t >= 0 { src[t as usize] as f64 } else { 0.0 };
            }
        }
        before_window(window_index);
        let t0 = clock.now_micros();
        let trains = process_window(&buf, used.len(), history, bank, cfg)?;
        let emitted = stitch(&mut state, &trains, window_index, start, w_len, bank, cfg)?;
        let t1 = clock.now_micros();
        latencies.push((t1.saturating_sub(t0)) as f64 / 1e6);
        for (mu_idx, t) in emitted {
            spikes_per_mu[mu_idx].push(t);
        }
        window_index += 1;
        start += inc;
    }

    let n = latencies.len().max(1) as f64;
    let mean = latencies.iter().sum::<f64>() / n;
    let var = latencies
        .iter()
        .map(|l| (l - mean) * (l - mean))
        .sum::<f64>()
        / n;
    let max = latencies.iter().cloned().fold(0.0f64, f64::max);
    let trains = spikes_per_mu
        .into_iter()
        .enumerate()
        .map(|(i, times)| {
            SpikeTrain::new(bank.vectors[i].mu_id, times).expect("stitch emits monotone")
        })
        .collect();
    Ok(StreamOutcome {
        trains,
        latency: LatencyReport {
            mean_s: mean,
            sd_s: crate::flt::sqrt(var),
            max_s: max,
            realtime: max < cfg.increment_s,
            per_window_s: latencies,
        },
        windows: window_index,
    })
}
