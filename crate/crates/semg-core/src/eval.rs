//! Accuracy metrics for comparing a decomposition against a reference.
//!
//! Spike trains are matched pairwise at their best alignment lag, paired
//! one-to-one greedily by matching rate, and scored with the standard
//! matching-rate / false-discovery / false-negative trio plus discharge
//! statistics and a per-channel decomposability index.

use alloc::vec;
use alloc::vec::Vec;

use crate::flt;
use crate::signal::{isi_stats, MuapTemplateSet, Recording, SpikeTrain};

/// Matching parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Coincidence tolerance in samples (±).
    pub tol_samples: usize,
    /// Alignment search bound in samples (±).
    pub max_lag: i64,
    /// Minimum matching rate for a pair to count as matched.
    pub mr_floor: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            tol_samples: 2,
            max_lag: 58, // extension + template length at the default sizes
            mr_floor: 0.3,
        }
    }
}

/// Count one-to-one coincidences between `a` and `b + lag` within `tol`.
fn coincidences_at(a: &[usize], b: &[usize], lag: i64, tol: i64) -> usize {
    let mut count = 0usize;
    let mut i = 0usize;
    let mut j = 0usize;
    while i < a.len() && j < b.len() {
        let ta = a[i] as i64;
        let tb = b[j] as i64 + lag;
        if (ta - tb).abs() <= tol {
            count += 1;
            i += 1;
            j += 1;
        } else if tb < ta {
            j += 1;
        } else {
            i += 1;
        }
    }
    count
}

/// Find the integer lag in `[-max_lag, max_lag]` maximizing coincidences
/// under the model `b ≈ a + lag` (positive lag = `b` fires late); ties
/// resolve to the smallest `|lag|` (positive first).
///
/// Returns `(lag, coincidence count)`; empty trains give `(0, 0)`.
pub fn align_lag(a: &SpikeTrain, b: &SpikeTrain, max_lag: i64, tol_samples: usize) -> (i64, usize) {
    if a.is_empty() || b.is_empty() {
        return (0, 0);
    }
    let ta = a.firing_samples();
    let tb = b.firing_samples();
    let tol = tol_samples as i64;
    let mut best_lag = 0i64;
    let mut best = coincidences_at(tb, ta, 0, tol);
    for mag in 1..=max_lag {
        for lag in [mag, -mag] {
            let c = coincidences_at(tb, ta, lag, tol);
            if c > best {
                best = c;
                best_lag = lag;
            }
        }
    }
    (best_lag, best)
}

/// One matched MU pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatch {
    pub online_id: u32,
    pub reference_id: u32,
    pub n_common: usize,
    pub n_online: usize,
    pub n_reference: usize,
    /// Lag applied to the online train, samples.
    pub lag: i64,
}

impl PairMatch {
    pub fn matching_rate(&self) -> f64 {
        if self.n_online + self.n_reference == 0 {
            return 0.0;
        }
        2.0 * self.n_common as f64 / (self.n_online + self.n_reference) as f64
    }
}

/// Pairing of two decompositions.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<PairMatch>,
    pub unmatched_online: Vec<u32>,
    pub unmatched_reference: Vec<u32>,
}

/// Pair online and reference MUs one-to-one, greedily by descending
/// matching rate, keeping only pairs at or above the MR floor.
pub fn match_pairs(
    online: &[SpikeTrain],
    reference: &[SpikeTrain],
    cfg: &MatchConfig,
) -> MatchResult {
    struct Scored {
        o: usize,
        r: usize,
        mr: f64,
        common: usize,
        lag: i64,
    }
    let mut scored: Vec<Scored> = Vec::new();
    for (oi, o) in online.iter().enumerate() {
        for (ri, r) in reference.iter().enumerate() {
            // Lag convention: positive lag means the online train fires late
            // relative to the reference.
            let (lag, common) = align_lag(r, o, cfg.max_lag, cfg.tol_samples);
            let total = o.len() + r.len();
            if total == 0 || common == 0 {
                continue;
            }
            let mr = 2.0 * common as f64 / total as f64;
            if mr >= cfg.mr_floor {
                scored.push(Scored {
                    o: oi,
                    r: ri,
                    mr,
                    common,
                    lag,
                });
            }
        }
    }
    scored.sort_by(|a, b| {
        b.mr.partial_cmp(&a.mr)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.o.cmp(&b.o))
            .then(a.r.cmp(&b.r))
    });
    let mut used_o = vec![false; online.len()];
    let mut used_r = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for s in scored {
        if used_o[s.o] || used_r[s.r] {
            continue;
        }
        used_o[s.o] = true;
        used_r[s.r] = true;
        pairs.push(PairMatch {
            online_id: online[s.o].mu_id,
            reference_id: reference[s.r].mu_id,
            n_common: s.common,
            n_online: online[s.o].len(),
            n_reference: reference[s.r].len(),
            lag: s.lag,
        });
    }
    MatchResult {
        pairs,
        unmatched_online: online
            .iter()
            .enumerate()
            .filter(|(i, _)| !used_o[*i])
            .map(|(_, t)| t.mu_id)
            .collect(),
        unmatched_reference: reference
            .iter()
            .enumerate()
            .filter(|(i, _)| !used_r[*i])
            .map(|(_, t)| t.mu_id)
            .collect(),
    }
}

/// Per-pair accuracy metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MuMetrics {
    pub online_id: u32,
    pub reference_id: u32,
    pub lag: i64,
    pub n_common: usize,
    pub n_online: usize,
    pub n_reference: usize,
    pub mr: f64,
    pub fdr: f64,
    pub fnr: f64,
    pub mdr_online_hz: Option<f64>,
    pub mdr_reference_hz: Option<f64>,
    pub cov_isi_online: Option<f64>,
    pub cov_isi_reference: Option<f64>,
}

/// Metrics bundle over all matched pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchMetrics {
    pub per_mu: Vec<MuMetrics>,
    pub mean_mr: f64,
    pub mean_fdr: f64,
    pub mean_fnr: f64,
    pub n_matched: usize,
    pub n_unmatched_online: usize,
    pub n_unmatched_reference: usize,
}

/// Evaluate matching rate, FDR and FNR per pair plus discharge statistics.
///
/// `FDR` is defined as 0 for an empty online train (flagged division rule).
pub fn compute_metrics(
    result: &MatchResult,
    online: &[SpikeTrain],
    reference: &[SpikeTrain],
    sample_rate: f64,
) -> MatchMetrics {
    let find = |trains: &[SpikeTrain], id: u32| -> Option<SpikeTrain> {
        trains.iter().find(|t| t.mu_id == id).cloned()
    };
    let mut per_mu = Vec::with_capacity(result.pairs.len());
    for p in &result.pairs {
        let mr = p.matching_rate();
        let fdr = if p.n_online == 0 {
            0.0
        } else {
            (p.n_online - p.n_common) as f64 / p.n_online as f64
        };
        let fnr = if p.n_reference == 0 {
            0.0
        } else {
            (p.n_reference - p.n_common) as f64 / p.n_reference as f64
        };
        let (mut mdr_o, mut cov_o) = (None, None);
        if let Some(t) = find(online, p.online_id) {
            let s = isi_stats(&t, sample_rate);
            mdr_o = s.firing_rate;
            cov_o = s.cov_isi;
        }
        let (mut mdr_r, mut cov_r) = (None, None);
        if let Some(t) = find(reference, p.reference_id) {
            let s = isi_stats(&t, sample_rate);
            mdr_r = s.firing_rate;
            cov_r = s.cov_isi;
        }
        per_mu.push(MuMetrics {
            online_id: p.online_id,
            reference_id: p.reference_id,
            lag: p.lag,
            n_common: p.n_common,
            n_online: p.n_online,
            n_reference: p.n_reference,
            mr,
            fdr,
            fnr,
            mdr_online_hz: mdr_o,
            mdr_reference_hz: mdr_r,
            cov_isi_online: cov_o,
            cov_isi_reference: cov_r,
        });
    }
    let n = per_mu.len().max(1) as f64;
    MatchMetrics {
        mean_mr: per_mu.iter().map(|m| m.mr).sum::<f64>() / n,
        mean_fdr: per_mu.iter().map(|m| m.fdr).sum::<f64>() / n,
        mean_fnr: per_mu.iter().map(|m| m.fnr).sum::<f64>() / n,
        n_matched: per_mu.len(),
        n_unmatched_online: result.unmatched_online.len(),
        n_unmatched_reference: result.unmatched_reference.len(),
        per_mu,
    }
}

/// Decomposability report: per-MU, per-channel index plus the composite.
#[derive(Debug, Clone, PartialEq)]
pub struct DiReport {
    /// `per_channel[mu][channel]`; skipped channels hold `None`.
    pub per_channel: Vec<Vec<Option<f64>>>,
    /// Euclidean norm of the defined per-channel indices.
    pub cdi: Vec<f64>,
    pub skipped_channels: Vec<usize>,
}

fn norm_of(t: &[f64]) -> f64 {
    flt::sqrt(t.iter().map(|v| v * v).sum::<f64>())
}

fn distance_of(a: &[f64], b: &[f64]) -> f64 {
    flt::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

/// Per-channel decomposability: distance of a MU's waveform to the nearest
/// other waveform (or to the baseline when it is alone), normalized by the
/// channel RMS. Channels with zero RMS are skipped and flagged.
pub fn decomposability(templates: &MuapTemplateSet, rec: &Recording) -> DiReport {
    let n_mus = templates.num_mus();
    let n_ch = templates.num_channels().min(rec.num_channels());
    let mut skipped = Vec::new();
    let mut per_channel = vec![vec![None; n_ch]; n_mus];
    let mut rms = vec![0.0f64; n_ch];
    for (ch, r) in rms.iter_mut().enumerate() {
        let x = rec.channel(ch);
        *r = flt::sqrt(x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64);
        if *r <= 0.0 {
            skipped.push(ch);
        }
    }
    for mu in 0..n_mus {
        for ch in 0..n_ch {
            if rms[ch] <= 0.0 {
                continue;
            }
            let m = templates.template(mu, ch);
            let own = norm_of(m);
            let nearest = (0..n_mus)
                .filter(|&other| other != mu)
                .map(|other| distance_of(m, templates.template(other, ch)))
                .fold(f64::MAX, f64::min);
            let di = if n_mus == 1 {
                own / rms[ch]
            } else {
                own.min(nearest) / rms[ch]
            };
            per_channel[mu][ch] = Some(di);
        }
    }
    let cdi = per_channel
        .iter()
        .map(|row| flt::sqrt(row.iter().flatten().map(|&d| d * d).sum::<f64>()))
        .collect();
    DiReport {
        per_channel,
        cdi,
        skipped_channels: skipped,
    }
}
