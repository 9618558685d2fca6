//! Offline progressive FastICA peel-off decomposition.
//!
//! Each round extends and whitens the current residual, extracts candidate
//! sources by deflationary FastICA, thresholds them (Otsu on the squared
//! source), splits multi-unit spike sets by valley-seeking clustering, and
//! re-derives each candidate on the original signal with a constrained
//! FastICA solve. Candidates passing the reliability gate are added to the
//! accepted set; their waveforms are re-estimated jointly by least squares
//! and peeled off the original signal before the next round.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::flt;
use crate::linalg::{self, Mat};
use crate::preprocess::{self, ExtendedSignal, FrameSeries, PreprocessError, WhiteningTransform};
use crate::rng::Rng;
use crate::signal::{spike_stats, MuapTemplateSet, Recording, SpikeStats, SpikeTrain};

#[derive(Debug, Clone, PartialEq)]
pub enum ApfpError {
    /// Otsu thresholding needs at least two distinct values.
    ConstantInput,
    /// No FastICA restart converged.
    NoConvergence,
    /// Constrained solve lost the reference (zero correlation direction).
    DegenerateReference,
    /// Waveform estimation got an empty train.
    EmptyTrain {
        mu_id: u32,
    },
    BadConfig(&'static str),
    Preprocess(PreprocessError),
}

impl From<PreprocessError> for ApfpError {
    fn from(e: PreprocessError) -> Self {
        ApfpError::Preprocess(e)
    }
}

impl core::fmt::Display for ApfpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ApfpError::ConstantInput => write!(f, "need at least two distinct values"),
            ApfpError::NoConvergence => write!(f, "no FastICA restart converged"),
            ApfpError::DegenerateReference => write!(f, "reference train carries no signal"),
            ApfpError::EmptyTrain { mu_id } => write!(f, "MU {mu_id} has an empty spike train"),
            ApfpError::BadConfig(msg) => write!(f, "bad config: {msg}"),
            ApfpError::Preprocess(e) => write!(f, "preprocessing: {e}"),
        }
    }
}

impl core::error::Error for ApfpError {}

/// Non-polynomial contrast for the negentropy objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contrast {
    LogCosh,
    Cube,
}

impl Contrast {
    #[inline]
    fn g(self, y: f64) -> f64 {
        match self {
            Contrast::LogCosh => flt::tanh(y),
            Contrast::Cube => y * y * y,
        }
    }

    #[inline]
    fn g_prime(self, y: f64) -> f64 {
        match self {
            Contrast::LogCosh => {
                let t = flt::tanh(y);
                1.0 - t * t
            }
            Contrast::Cube => 3.0 * y * y,
        }
    }

    #[inline]
    fn big_g(self, y: f64) -> f64 {
        match self {
            Contrast::LogCosh => flt::ln(flt::cosh(y)),
            Contrast::Cube => 0.25 * y * y * y * y,
        }
    }

    /// `E{G(v)}` for standard-normal `v` (quadrature-derived constants).
    pub fn gaussian_baseline(self) -> f64 {
        match self {
            Contrast::LogCosh => 0.374_567_207_491_092,
            Contrast::Cube => 0.75,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastIcaConfig {
    pub contrast: Contrast,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub max_sources_per_round: usize,
    pub restarts_per_source: usize,
}

impl Default for FastIcaConfig {
    fn default() -> Self {
        FastIcaConfig {
            contrast: Contrast::LogCosh,
            max_iterations: 100,
            // The fixed point wanders at the finite-sample noise floor
            // (~1e-5 for 10k-sample windows), so demanding much less than
            // 1e-4 rejects every restart on real data.
            convergence_tol: 1e-4,
            max_sources_per_round: 30,
            restarts_per_source: 3,
        }
    }
}

/// Acceptance gates for a candidate motor unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityThresholds {
    pub xi_min: f64,
    pub cov_amp_max: f64,
    pub cov_isi_max: f64,
    pub rate_min_hz: f64,
    pub rate_max_hz: f64,
    /// Retry a failed candidate once with every bound relaxed by 10%.
    pub relaxed_second_pass: bool,
}

impl Default for ReliabilityThresholds {
    fn default() -> Self {
        ReliabilityThresholds {
            // A source's correlation with a 1-sample binary train is capped
            // well below 1 by the peak support (measured ceiling ~0.7 at 64
            // channels, K=10); random references land near 0.12. The gate
            // sits between those populations.
            xi_min: 0.40,
            cov_amp_max: 0.3,
            cov_isi_max: 0.4,
            rate_min_hz: 4.0,
            rate_max_hz: 35.0,
            relaxed_second_pass: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    LowXi(f64),
    HighCovAmp(f64),
    HighCovIsi(f64),
    RateOutOfRange(f64),
    UndefinedStats,
    Duplicate { kept_mu: u32 },
}

impl core::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RejectReason::LowXi(v) => write!(f, "xi {v:.3} below gate"),
            RejectReason::HighCovAmp(v) => write!(f, "cov_amp {v:.3} above gate"),
            RejectReason::HighCovIsi(v) => write!(f, "cov_isi {v:.3} above gate"),
            RejectReason::RateOutOfRange(v) => write!(f, "rate {v:.2} Hz outside gate"),
            RejectReason::UndefinedStats => write!(f, "too few spikes for statistics"),
            RejectReason::Duplicate { kept_mu } => write!(f, "duplicate of MU {kept_mu}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityVerdict {
    pub accepted: bool,
    pub reasons: Vec<RejectReason>,
}

fn gate(xi: f64, stats: &SpikeStats, th: &ReliabilityThresholds, relax: f64) -> Vec<RejectReason> {
    let mut reasons = Vec::new();
    if xi < th.xi_min / relax {
        reasons.push(RejectReason::LowXi(xi));
    }
    match (stats.cov_amp, stats.cov_isi, stats.firing_rate) {
        (Some(ca), Some(ci), Some(fr)) => {
            if ca > th.cov_amp_max * relax {
                reasons.push(RejectReason::HighCovAmp(ca));
            }
            if ci > th.cov_isi_max * relax {
                reasons.push(RejectReason::HighCovIsi(ci));
            }
            if fr < th.rate_min_hz / relax || fr > th.rate_max_hz * relax {
                reasons.push(RejectReason::RateOutOfRange(fr));
            }
        }
        _ => reasons.push(RejectReason::UndefinedStats),
    }
    reasons
}

/// Two-step reliability check: every metric must sit in its gate; optionally
/// a second pass retries with all bounds relaxed by 10%.
pub fn assess_reliability(
    xi: f64,
    stats: &SpikeStats,
    th: &ReliabilityThresholds,
) -> ReliabilityVerdict {
    let reasons = gate(xi, stats, th, 1.0);
    if reasons.is_empty() {
        return ReliabilityVerdict {
            accepted: true,
            reasons,
        };
    }
    if th.relaxed_second_pass {
        let relaxed = gate(xi, stats, th, 1.1);
        if relaxed.is_empty() {
            return ReliabilityVerdict {
                accepted: true,
                reasons: Vec::new(),
            };
        }
    }
    ReliabilityVerdict {
        accepted: false,
        reasons,
    }
}

pub const OTSU_BINS: usize = 256;

/// Otsu threshold over a 256-bin histogram of the values.
///
/// Returns the bin edge maximizing the between-class variance, ties broken
/// toward the lower edge. Class means use the exact value sums per bin, so
/// the result equals a brute-force scan over the same edges.
pub fn otsu_threshold(values: &[f64]) -> Result<f64, ApfpError> {
    let mut min = f64::MAX;
    let mut max = f64::MIN;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if values.len() < 2 || !(max > min) {
        return Err(ApfpError::ConstantInput);
    }
    let width = (max - min) / OTSU_BINS as f64;
    let mut counts = [0usize; OTSU_BINS];
    let mut sums = [0.0f64; OTSU_BINS];
    for &v in values {
        let b = (((v - min) / width) as usize).min(OTSU_BINS - 1);
        counts[b] += 1;
        sums[b] += v;
    }
    let total_n = values.len() as f64;
    let total_sum: f64 = sums.iter().sum();
    let mut n0 = 0usize;
    let mut sum0 = 0.0f64;
    let mut best_edge = 1usize;
    let mut best_var = f64::MIN;
    for edge in 1..OTSU_BINS {
        n0 += counts[edge - 1];
        sum0 += sums[edge - 1];
        let n1 = values.len() - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let w0 = n0 as f64 / total_n;
        let w1 = n1 as f64 / total_n;
        let mu0 = sum0 / n0 as f64;
        let mu1 = (total_sum - sum0) / n1 as f64;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_edge = edge;
        }
    }
    Ok(min + best_edge as f64 * width)
}

/// Detect spikes as local maxima of the squared source above a threshold,
/// kept greedily in descending amplitude with a refractory spacing.
///
/// Returns the train plus the squared peak amplitude of each kept spike (in
/// firing order).
pub fn detect_spikes(
    source: &[f64],
    threshold: f64,
    min_separation: usize,
    mu_id: u32,
) -> (SpikeTrain, Vec<f64>) {
    let n = source.len();
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for t in 0..n {
        let sq = source[t] * source[t];
        if sq <= threshold {
            continue;
        }
        let left = if t > 0 {
            source[t - 1] * source[t - 1]
        } else {
            f64::MIN
        };
        let right = if t + 1 < n {
            source[t + 1] * source[t + 1]
        } else {
            f64::MIN
        };
        if sq > left && sq >= right {
            peaks.push((t, sq));
        }
    }
    // Largest first; ties resolved by earlier sample for determinism.
    peaks.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut kept: Vec<usize> = Vec::new();
    for (t, _) in &peaks {
        if kept.iter().all(|&s| t.abs_diff(s) > min_separation) {
            kept.push(*t);
        }
    }
    kept.sort_unstable();
    let amps: Vec<f64> = kept.iter().map(|&t| source[t] * source[t]).collect();
    let train = SpikeTrain::new(mu_id, kept).expect("sorted unique");
    (train, amps)
}

/// Valley-seeking clustering of spike feature vectors.
///
/// Density is estimated from the k nearest neighbors (k = min(5, n-1));
/// every point links to its densest strictly-denser neighbor, chains resolve
/// to local modes, and clusters smaller than 3 are merged into the nearest
/// cluster by centroid distance.
pub fn valley_cluster(features: &[Vec<f64>]) -> Vec<usize> {
    let n = features.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![0];
    }
    let k = 5.min(n - 1);
    // Pairwise squared distances.
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut density = vec![0.0f64; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dist[i * n + a]
                .partial_cmp(&dist[i * n + b])
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(k);
        let sum: f64 = order.iter().map(|&j| flt::sqrt(dist[i * n + j])).sum();
        density[i] = k as f64 / (sum + 1e-12);
        neighbors.push(order);
    }
    // Link each point to its densest strictly-denser neighbor.
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        let mut best = i;
        let mut best_density = density[i];
        for &j in &neighbors[i] {
            if density[j] > best_density {
                best_density = density[j];
                best = j;
            }
        }
        parent[i] = best;
    }
    let mut root = vec![0usize; n];
    for i in 0..n {
        let mut p = i;
        let mut hops = 0;
        while parent[p] != p && hops <= n {
            p = parent[p];
            hops += 1;
        }
        root[i] = p;
    }
    // Compact labels.
    let mut label_of_root: Vec<(usize, usize)> = Vec::new();
    let mut labels = vec![0usize; n];
    for i in 0..n {
        let r = root[i];
        let lbl = match label_of_root.iter().find(|&&(rr, _)| rr == r) {
            Some(&(_, l)) => l,
            None => {
                let l = label_of_root.len();
                label_of_root.push((r, l));
                l
            }
        };
        labels[i] = lbl;
    }
    merge_small_clusters(features, &mut labels, 3);
    labels
}

fn merge_small_clusters(features: &[Vec<f64>], labels: &mut [usize], min_size: usize) {
    let n = labels.len();
    loop {
        let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
        if n_clusters <= 1 {
            return;
        }
        let mut sizes = vec![0usize; n_clusters];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let smallest = (0..n_clusters)
            .filter(|&c| sizes[c] > 0 && sizes[c] < min_size)
            .min_by_key(|&c| sizes[c]);
        let Some(small) = smallest else { return };
        if sizes.iter().filter(|&&s| s > 0).count() <= 1 {
            return;
        }
        let dim = features[0].len();
        let centroid = |c: usize| -> Vec<f64> {
            let mut acc = vec![0.0; dim];
            let mut cnt = 0.0;
            for i in 0..n {
                if labels[i] == c {
                    for (a, v) in acc.iter_mut().zip(&features[i]) {
                        *a += v;
                    }
                    cnt += 1.0;
                }
            }
            acc.into_iter().map(|a| a / cnt).collect()
        };
        let small_c = centroid(small);
        let mut best: Option<(usize, f64)> = None;
        for c in 0..n_clusters {
            if c == small || sizes[c] == 0 {
                continue;
            }
            let cc = centroid(c);
            let d: f64 = small_c
                .iter()
                .zip(&cc)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((c, d));
            }
        }
        let Some((target, _)) = best else { return };
        for l in labels.iter_mut() {
            if *l == small {
                *l = target;
            }
        }
        // Re-compact labels.
        let mut seen: Vec<usize> = Vec::new();
        for l in labels.iter_mut() {
            let pos = match seen.iter().position(|&s| s == *l) {
                Some(p) => p,
                None => {
                    seen.push(*l);
                    seen.len() - 1
                }
            };
            *l = pos;
        }
    }
}

fn gram_schmidt(w: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let proj = linalg::dot(w, b);
        for (wi, bi) in w.iter_mut().zip(b) {
            *wi -= proj * bi;
        }
    }
}

/// One pass over the whitened data: `E{x g(w·x)}` and `E{g'(w·x)}`.
fn fastica_pass(data: &FrameSeries, w: &[f64], contrast: Contrast) -> (Vec<f64>, f64) {
    let dim = data.dim();
    let t_len = data.len();
    let mut acc = vec![0.0f64; dim];
    let mut gp_sum = 0.0f64;
    for t in 0..t_len {
        let x = data.sample(t);
        let y = linalg::dot(x, w);
        let gy = contrast.g(y);
        gp_sum += contrast.g_prime(y);
        linalg::axpy(&mut acc, gy, x);
    }
    let inv = 1.0 / t_len as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    (acc, gp_sum * inv)
}

fn negentropy(data: &FrameSeries, w: &[f64], contrast: Contrast) -> f64 {
    let t_len = data.len();
    let mut e_g = 0.0;
    for t in 0..t_len {
        e_g += contrast.big_g(linalg::dot(data.sample(t), w));
    }
    e_g /= t_len as f64;
    let d = e_g - contrast.gaussian_baseline();
    d * d
}

/// Extract one separation vector by fixed-point iteration with deflation.
///
/// Runs `restarts_per_source` random initializations and keeps the converged
/// vector with the largest negentropy. Fails if no restart converges.
pub fn fastica_one_source(
    data: &FrameSeries,
    cfg: &FastIcaConfig,
    basis: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<Vec<f64>, ApfpError> {
    let dim = data.dim();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _restart in 0..cfg.restarts_per_source.max(1) {
        let mut w = rng.unit_vector(dim);
        gram_schmidt(&mut w, basis);
        if linalg::normalize(&mut w) < 1e-9 {
            continue;
        }
        let mut converged = false;
        for _iter in 0..cfg.max_iterations {
            let (mut w_new, gp) = fastica_pass(data, &w, cfg.contrast);
            for (wn, &wi) in w_new.iter_mut().zip(&w) {
                *wn -= gp * wi;
            }
            gram_schmidt(&mut w_new, basis);
            if linalg::normalize(&mut w_new) < 1e-12 {
                break;
            }
            let delta = (1.0 - linalg::dot(&w_new, &w).abs()).abs();
            w = w_new;
            if delta < cfg.convergence_tol {
                converged = true;
                break;
            }
        }
        if !converged || w.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let j = negentropy(data, &w, cfg.contrast);
        if best.as_ref().map_or(true, |(bj, _)| j > *bj) {
            best = Some((j, w));
        }
    }
    best.map(|(_, w)| w).ok_or(ApfpError::NoConvergence)
}

/// Outcome of a constrained solve for one reference train.
#[derive(Debug, Clone)]
pub struct ConstrainedOutcome {
    /// Unit vector in whitened space.
    pub w: Vec<f64>,
    pub source: Vec<f64>,
    pub train: SpikeTrain,
    /// Pearson correlation between the output source and the binary reference.
    pub xi: f64,
    /// Squared peak amplitudes of the corrected train.
    pub amps: Vec<f64>,
}

fn normalized_reference(reference: &SpikeTrain, len: usize) -> Result<Vec<f64>, ApfpError> {
    if reference.is_empty() {
        return Err(ApfpError::DegenerateReference);
    }
    let n_spikes = reference.len() as f64;
    let mean = n_spikes / len as f64;
    let var = mean * (1.0 - mean);
    if var <= 0.0 {
        return Err(ApfpError::DegenerateReference);
    }
    let sd = flt::sqrt(var);
    let mut r = vec![-mean / sd; len];
    for &t in reference.firing_samples() {
        if t >= len {
            return Err(ApfpError::DegenerateReference);
        }
        r[t] = (1.0 - mean) / sd;
    }
    Ok(r)
}

fn skewness_sign(y: &[f64]) -> f64 {
    let m = crate::signal::mean(y);
    let s: f64 = y.iter().map(|&v| (v - m) * (v - m) * (v - m)).sum();
    if s < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Fixed-point iteration steered toward a reference spike train.
///
/// The update adds a Lagrangian closeness term pulling the source's
/// correlation with the binary reference toward a target; the multiplier
/// adapts each step. The output source is re-thresholded to produce the
/// corrected train.
pub fn constrained_fastica(
    white: &FrameSeries,
    reference: &SpikeTrain,
    cfg: &FastIcaConfig,
    min_separation: usize,
) -> Result<ConstrainedOutcome, ApfpError> {
    let dim = white.dim();
    let t_len = white.len();
    let r_hat = normalized_reference(reference, t_len)?;

    // Correlation direction: E{x r̂}. For unit w, corr(w·x, r̂) = w·c_ref.
    let mut c_ref = vec![0.0f64; dim];
    for t in 0..t_len {
        linalg::axpy(&mut c_ref, r_hat[t], white.sample(t));
    }
    for c in c_ref.iter_mut() {
        *c /= t_len as f64;
    }
    let c_norm = linalg::norm(&c_ref);
    if c_norm < 1e-9 {
        return Err(ApfpError::DegenerateReference);
    }

    let mut w: Vec<f64> = c_ref.iter().map(|&c| c / c_norm).collect();
    let rho = 0.85 * c_norm;
    let mut multiplier = 1.0f64;
    for _iter in 0..cfg.max_iterations {
        let (mut w_new, gp) = fastica_pass(white, &w, cfg.contrast);
        for ((wn, &wi), &ci) in w_new.iter_mut().zip(&w).zip(&c_ref) {
            *wn = *wn - gp * wi + multiplier * ci;
        }
        if linalg::normalize(&mut w_new) < 1e-12 || w_new.iter().any(|v| !v.is_finite()) {
            return Err(ApfpError::DegenerateReference);
        }
        let delta = (1.0 - linalg::dot(&w_new, &w).abs()).abs();
        let corr = linalg::dot(&w_new, &c_ref);
        multiplier = (multiplier + (rho - corr)).max(0.0);
        w = w_new;
        if delta < cfg.convergence_tol {
            break;
        }
    }

    let mut source = white.project(&w);
    if skewness_sign(&source) < 0.0 {
        for (s, wi) in source.iter_mut().zip(w.iter_mut()) {
            *s = -*s;
            *wi = -*wi;
        }
    }
    let sq: Vec<f64> = source.iter().map(|&v| v * v).collect();
    let threshold = otsu_threshold(&sq)?;
    let (train, amps) = detect_spikes(&source, threshold, min_separation, reference.mu_id);

    // Pearson correlation against the (already zero-mean, unit-sd) reference.
    let sm = crate::signal::mean(&source);
    let ssd = crate::signal::population_std(&source);
    let xi = if ssd > 0.0 {
        source
            .iter()
            .zip(&r_hat)
            .map(|(&s, &r)| (s - sm) * r)
            .sum::<f64>()
            / (t_len as f64 * ssd)
    } else {
        0.0
    };
    Ok(ConstrainedOutcome {
        w,
        source,
        train,
        xi,
        amps,
    })
}

/// Joint least-squares waveform estimate.
#[derive(Debug, Clone)]
pub struct MuapEstimate {
    pub templates: MuapTemplateSet,
    /// Set when the normal equations needed a ridge to factor.
    pub ridge_applied: bool,
}

/// Estimate all MUAP templates jointly per channel by least squares.
///
/// Solves `min Σ_i ‖x_i - Σ_j a_ij * s_j‖²` through the normal equations
/// over every (unit, lag) pair simultaneously, so overlapping waveforms are
/// attributed exactly. Falls back to a small ridge when two trains are
/// linearly dependent.
pub fn estimate_muaps(
    rec: &Recording,
    trains: &[SpikeTrain],
    len: usize,
) -> Result<MuapEstimate, ApfpError> {
    if len == 0 {
        return Err(ApfpError::BadConfig("template length must be >= 1"));
    }
    for tr in trains {
        if tr.is_empty() {
            return Err(ApfpError::EmptyTrain { mu_id: tr.mu_id });
        }
    }
    let n_units = trains.len();
    let t_len = rec.num_samples();
    let nl = n_units * len;
    let mut gram = Mat::zeros(nl, nl);

    // Gram entries count coincidences of shifted impulses:
    // G[(j,tau),(k,sigma)] = #{t: s_j(t-tau) = s_k(t-sigma) = 1, t < T}.
    for j in 0..n_units {
        for k in j..n_units {
            let tj = trains[j].firing_samples();
            let tk = trains[k].firing_samples();
            let mut start = 0usize;
            for &p in tj {
                // Keep q with q + len > p, i.e. overlap |q - p| < len.
                while start < tk.len() && tk[start] + len <= p {
                    start += 1;
                }
                for &q in &tk[start..] {
                    if q >= p + len {
                        break;
                    }
                    let delta = q as i64 - p as i64; // |delta| < len
                    let tau_lo = 0.max(delta) as usize;
                    let tau_hi_excl = (len as i64)
                        .min(len as i64 + delta)
                        .min(t_len as i64 - p as i64);
                    if tau_hi_excl <= tau_lo as i64 {
                        continue;
                    }
                    for tau in tau_lo..tau_hi_excl as usize {
                        let sigma = (tau as i64 - delta) as usize;
                        let a = j * len + tau;
                        let b = k * len + sigma;
                        *gram.at_mut(a, b) += 1.0;
                        // Same-train enumeration already visits both ordered
                        // pairs; only cross-train entries need mirroring.
                        if k > j {
                            *gram.at_mut(b, a) += 1.0;
                        }
                    }
                }
            }
        }
    }

    let (factor, ridge_applied) = match linalg::cholesky(&gram) {
        Ok(l) => (l, false),
        Err(_) => {
            let trace: f64 = (0..nl).map(|i| gram.at(i, i)).sum();
            let lambda = 1e-8 * trace.max(1.0);
            let mut ridged = gram.clone();
            for i in 0..nl {
                *ridged.at_mut(i, i) += lambda;
            }
            let l = linalg::cholesky(&ridged)
                .map_err(|_| ApfpError::BadConfig("normal equations not factorizable"))?;
            (l, true)
        }
    };

    let mu_ids: Vec<u32> = trains.iter().map(|t| t.mu_id).collect();
    let mut templates = MuapTemplateSet::zeros(mu_ids, rec.num_channels(), len);
    let mut rhs = vec![0.0f64; nl];
    for ch in 0..rec.num_channels() {
        let x = rec.channel(ch);
        for v in rhs.iter_mut() {
            *v = 0.0;
        }
        for (j, tr) in trains.iter().enumerate() {
            for &p in tr.firing_samples() {
                let span = len.min(t_len - p);
                for tau in 0..span {
                    rhs[j * len + tau] += x[p + tau] as f64;
                }
            }
        }
        let solution = linalg::cholesky_solve(&factor, &rhs);
        for (j, chunk) in solution.chunks_exact(len).enumerate() {
            templates.template_mut(j, ch).copy_from_slice(chunk);
        }
    }
    Ok(MuapEstimate {
        templates,
        ridge_applied,
    })
}

/// Subtract the reconstruction of the given units from a recording.
pub fn peel_off(rec: &Recording, templates: &MuapTemplateSet, trains: &[SpikeTrain]) -> Recording {
    let mut out = rec.clone();
    let t_len = rec.num_samples();
    let l = templates.template_len();
    let mut recon = vec![0.0f64; t_len];
    for ch in 0..rec.num_channels() {
        for v in recon.iter_mut() {
            *v = 0.0;
        }
        for tr in trains {
            let Some(mu_idx) = templates.mu_ids().iter().position(|&id| id == tr.mu_id) else {
                continue;
            };
            let tpl = templates.template(mu_idx, ch);
            for &p in tr.firing_samples() {
                let span = l.min(t_len - p);
                for tau in 0..span {
                    recon[p + tau] += tpl[tau];
                }
            }
        }
        let dst = out.channel_mut(ch);
        for (d, (&orig, &r)) in dst.iter_mut().zip(rec.channel(ch).iter().zip(&recon)) {
            *d = (orig as f64 - r) as f32;
        }
    }
    out
}

/// One accepted motor unit.
#[derive(Debug, Clone)]
pub struct AcceptedMu {
    pub mu_id: u32,
    /// Separation vector in extended-raw space (whitening folded in).
    pub composite: Vec<f64>,
    pub train: SpikeTrain,
    pub stats: SpikeStats,
    pub xi: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RoundLog {
    pub round: usize,
    pub sources_extracted: usize,
    pub candidates: usize,
    pub accepted_mu_ids: Vec<u32>,
    pub rejections: Vec<String>,
    pub residual_energy: f64,
}

/// Full decomposition output.
#[derive(Debug, Clone)]
pub struct DecompositionResult {
    pub mus: Vec<AcceptedMu>,
    pub templates: MuapTemplateSet,
    pub residual: Recording,
    /// Whitening fitted on the original extended recording; bank provenance.
    pub whitening: WhiteningTransform,
    pub extension: usize,
    pub template_len: usize,
    pub sample_rate: f64,
    pub rounds: Vec<RoundLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApfpConfig {
    pub fastica: FastIcaConfig,
    pub reliability: ReliabilityThresholds,
    /// Extension factor K.
    pub extension: usize,
    /// Template length L in samples.
    pub template_len: usize,
    pub max_rounds: usize,
    /// Minimum spikes for a cluster to become a candidate.
    pub min_candidate_spikes: usize,
    /// Two trains sharing over half their spikes within this tolerance are
    /// the same unit.
    pub duplicate_tol_ms: f64,
    pub seed: u64,
}

impl Default for ApfpConfig {
    fn default() -> Self {
        ApfpConfig {
            fastica: FastIcaConfig::default(),
            reliability: ReliabilityThresholds::default(),
            extension: 10,
            template_len: 48,
            max_rounds: 10,
            min_candidate_spikes: 3,
            duplicate_tol_ms: 1.0,
            seed: 0,
        }
    }
}

/// Whether two trains are duplicates: more than `overlap` of the smaller
/// train's spikes coincide within ±tol samples at the best alignment lag.
///
/// The lag scan (bounded by `max_lag`) matters because the delay-line
/// extension can recover the same unit at several delays, producing
/// time-shifted replicas of one spike train.
pub fn trains_are_duplicates(
    a: &SpikeTrain,
    b: &SpikeTrain,
    tol_samples: usize,
    max_lag: i64,
    overlap: f64,
) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let (_, hits) = crate::eval::align_lag(small, large, max_lag, tol_samples);
    hits as f64 > overlap * small.len() as f64
}

fn quality_score(stats: &SpikeStats) -> f64 {
    match (stats.cov_amp, stats.cov_isi) {
        (Some(a), Some(i)) => a + i,
        _ => f64::MAX,
    }
}

/// Feature snippets for clustering: the usable channels of the extended
/// signal over a window of `len` samples centered on each spike, flattened.
fn spike_snippets(ext: &ExtendedSignal, train: &SpikeTrain, len: usize) -> Vec<Vec<f64>> {
    let k = ext.extension;
    let n_blocks = ext.source_channels.len();
    let t_len = ext.frames.len();
    let half = len / 2;
    train
        .firing_samples()
        .iter()
        .map(|&spike| {
            let mut feat = Vec::with_capacity(n_blocks * len);
            for block in 0..n_blocks {
                let row = block * k; // delay-0 row of this channel
                for off in 0..len {
                    let t = spike as i64 - half as i64 + off as i64;
                    let v = if t >= 0 && (t as usize) < t_len {
                        ext.frames.sample(t as usize)[row]
                    } else {
                        0.0
                    };
                    feat.push(v);
                }
            }
            feat
        })
        .collect()
}

fn stream_tag(round: usize, source: usize) -> u64 {
    0xfa57_0000_0000_0000 ^ ((round as u64) << 24) ^ source as u64
}

/// Run the progressive FastICA peel-off loop on a preprocessed recording.
pub fn run_apfp(rec: &Recording, cfg: &ApfpConfig) -> Result<DecompositionResult, ApfpError> {
    if cfg.extension < 1 {
        return Err(ApfpError::BadConfig("extension factor must be >= 1"));
    }
    let l = cfg.template_len;
    if l < 1 {
        return Err(ApfpError::BadConfig("template length must be >= 1"));
    }
    let tol_samples = (cfg.duplicate_tol_ms * rec.sample_rate / 1000.0) as usize;
    let dup_lag = (cfg.extension + cfg.template_len) as i64;

    let ext0 = preprocess::extend(rec, cfg.extension)?;
    let white0 = preprocess::fit_whitening(&ext0)?;
    let wdata0 = white0.apply(&ext0);

    let mut residual = rec.clone();
    let mut mus: Vec<AcceptedMu> = Vec::new();
    let mut templates = MuapTemplateSet::zeros(Vec::new(), rec.num_channels(), l);
    let mut rounds: Vec<RoundLog> = Vec::new();
    let mut next_id: u32 = 0;

    for round in 0..cfg.max_rounds {
        let mut log = RoundLog {
            round,
            ..RoundLog::default()
        };

        // Round 0 runs on the original signal; later rounds refit the
        // whitening on the residual.
        let (ext_r, wdata_r);
        if round == 0 {
            ext_r = ext0.clone();
            wdata_r = wdata0.clone();
        } else {
            ext_r = preprocess::extend(&residual, cfg.extension)?;
            let white_r = match preprocess::fit_whitening(&ext_r) {
                Ok(w) => w,
                Err(PreprocessError::ZeroVariance) => break,
                Err(e) => return Err(e.into()),
            };
            wdata_r = white_r.apply(&ext_r);
        }

        // Deflationary source extraction on the residual.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut candidates: Vec<SpikeTrain> = Vec::new();
        for source_idx in 0..cfg.fastica.max_sources_per_round {
            let mut rng = Rng::derive(cfg.seed, stream_tag(round, source_idx));
            let Ok(w) = fastica_one_source(&wdata_r, &cfg.fastica, &basis, &mut rng) else {
                break;
            };
            log.sources_extracted += 1;
            basis.push(w.clone());
            let mut y = wdata_r.project(&w);
            if skewness_sign(&y) < 0.0 {
                for v in y.iter_mut() {
                    *v = -*v;
                }
            }
            let sq: Vec<f64> = y.iter().map(|&v| v * v).collect();
            let Ok(thr) = otsu_threshold(&sq) else {
                continue;
            };
            let (train, _) = detect_spikes(&y, thr, l, 0);
            if train.len() < 2 {
                continue;
            }
            let feats = spike_snippets(&ext_r, &train, l);
            let labels = valley_cluster(&feats);
            let n_clusters = labels.iter().max().map_or(0, |&m| m + 1);
            for c in 0..n_clusters {
                let times: Vec<usize> = train
                    .firing_samples()
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &lbl)| lbl == c)
                    .map(|(&t, _)| t)
                    .collect();
                if times.len() >= cfg.min_candidate_spikes {
                    candidates.push(SpikeTrain::new(0, times).expect("sorted subset"));
                }
            }
        }

        // Same unit can surface from several sources; keep the larger train.
        let mut unique: Vec<SpikeTrain> = Vec::new();
        for cand in candidates {
            match unique
                .iter_mut()
                .find(|u| trains_are_duplicates(u, &cand, tol_samples, dup_lag, 0.5))
            {
                Some(existing) => {
                    if cand.len() > existing.len() {
                        *existing = cand;
                    }
                }
                None => unique.push(cand),
            }
        }
        log.candidates = unique.len();

        // Constrained re-derivation on the original signal + reliability gate.
        let mut added = 0usize;
        for cand in &unique {
            let outcome = match constrained_fastica(&wdata0, cand, &cfg.fastica, l) {
                Ok(o) => o,
                Err(e) => {
                    log.rejections.push(alloc::format!("candidate: {e}"));
                    continue;
                }
            };
            // Fold into extended-raw space and re-derive the train from the
            // composite source so stored results match online application.
            let composite = white0.fold(&outcome.w);
            let mut source = ext0.frames.project(&composite);
            let mut composite = composite;
            if skewness_sign(&source) < 0.0 {
                for (s, c) in source.iter_mut().zip(composite.iter_mut()) {
                    *s = -*s;
                    *c = -*c;
                }
            }
            let sq: Vec<f64> = source.iter().map(|&v| v * v).collect();
            let Ok(thr) = otsu_threshold(&sq) else {
                log.rejections.push(String::from("candidate: flat source"));
                continue;
            };
            let (train, amps) = detect_spikes(&source, thr, l, next_id);
            let stats = spike_stats(&train, &amps, rec.sample_rate);
            let verdict = assess_reliability(outcome.xi, &stats, &cfg.reliability);
            if !verdict.accepted {
                for r in &verdict.reasons {
                    log.rejections
                        .push(alloc::format!("xi={:.2}: {r}", outcome.xi));
                }
                continue;
            }
            // Duplicate handling against the accepted set: keep the better
            // quality score (cov_amp + cov_isi).
            let new_score = quality_score(&stats);
            let mut replaced = false;
            let mut is_duplicate = false;
            for existing in mus.iter_mut() {
                if trains_are_duplicates(&existing.train, &train, tol_samples, dup_lag, 0.5) {
                    is_duplicate = true;
                    if new_score < quality_score(&existing.stats) {
                        log.rejections.push(alloc::format!(
                            "MU {} replaced by better duplicate",
                            existing.mu_id
                        ));
                        *existing = AcceptedMu {
                            mu_id: existing.mu_id,
                            composite: composite.clone(),
                            train: SpikeTrain::new(existing.mu_id, train.firing_samples().to_vec())
                                .expect("valid train"),
                            stats,
                            xi: outcome.xi,
                        };
                        replaced = true;
                    } else {
                        log.rejections.push(alloc::format!(
                            "{}",
                            RejectReason::Duplicate {
                                kept_mu: existing.mu_id
                            }
                        ));
                    }
                    break;
                }
            }
            if is_duplicate {
                let _ = replaced;
                continue;
            }
            log.accepted_mu_ids.push(next_id);
            mus.push(AcceptedMu {
                mu_id: next_id,
                composite,
                train,
                stats,
                xi: outcome.xi,
            });
            next_id += 1;
            added += 1;
        }

        let stop = added == 0;
        if !mus.is_empty() {
            let trains: Vec<SpikeTrain> = mus.iter().map(|m| m.train.clone()).collect();
            let est = estimate_muaps(rec, &trains, l)?;
            templates = est.templates;
            residual = peel_off(rec, &templates, &trains);
        }
        log.residual_energy = residual.energy();
        rounds.push(log);
        if stop {
            break;
        }
    }

    Ok(DecompositionResult {
        mus,
        templates,
        residual,
        whitening: white0,
        extension: cfg.extension,
        template_len: l,
        sample_rate: rec.sample_rate,
        rounds,
    })
}
