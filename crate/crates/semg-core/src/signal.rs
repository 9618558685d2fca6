//! Shared domain types: recordings, spike trains and their statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::flt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SignalError {
    /// Grid geometry and channel count disagree, or every channel is masked.
    BadGeometry {
        channels: usize,
        rows: usize,
        cols: usize,
    },
    BadSampleRate,
    EmptyRecording,
    /// Sample buffer length is not `channels × samples`.
    BadBufferLength {
        expected: usize,
        got: usize,
    },
    MaskLengthMismatch {
        expected: usize,
        got: usize,
    },
    /// Firing samples must be strictly increasing.
    NotStrictlyIncreasing {
        index: usize,
    },
    /// A firing sample lies at or past the sequence length.
    SpikeOutOfRange {
        index: usize,
        length: usize,
    },
}

impl core::fmt::Display for SignalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SignalError::BadGeometry {
                channels,
                rows,
                cols,
            } => write!(
                f,
                "channel count {channels} incompatible with {rows}x{cols} grid"
            ),
            SignalError::BadSampleRate => write!(f, "sample rate must be positive"),
            SignalError::EmptyRecording => write!(f, "recording must hold at least one sample"),
            SignalError::BadBufferLength { expected, got } => {
                write!(f, "sample buffer holds {got} values, expected {expected}")
            }
            SignalError::MaskLengthMismatch { expected, got } => {
                write!(f, "channel mask holds {got} entries, expected {expected}")
            }
            SignalError::NotStrictlyIncreasing { index } => {
                write!(
                    f,
                    "firing samples not strictly increasing at position {index}"
                )
            }
            SignalError::SpikeOutOfRange { index, length } => {
                write!(
                    f,
                    "firing sample {index} outside sequence of length {length}"
                )
            }
        }
    }
}

impl core::error::Error for SignalError {}

/// Electrode grid layout, rows × cols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

/// Multi-channel sampled EMG, stored channel-major as 32-bit floats.
///
/// All intermediate math runs in `f64`; the 32-bit storage keeps recordings
/// compact on disk and in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: Vec<f32>,
    channels: usize,
    samples_per_channel: usize,
    pub sample_rate: f64,
    /// `true` = channel participates in decomposition.
    pub channel_mask: Vec<bool>,
    pub grid: GridShape,
}

impl Recording {
    pub fn new(
        samples: Vec<f32>,
        channels: usize,
        sample_rate: f64,
        grid: GridShape,
        channel_mask: Vec<bool>,
    ) -> Result<Self, SignalError> {
        if grid.rows * grid.cols != channels || channels == 0 {
            return Err(SignalError::BadGeometry {
                channels,
                rows: grid.rows,
                cols: grid.cols,
            });
        }
        if !(sample_rate > 0.0) {
            return Err(SignalError::BadSampleRate);
        }
        if channel_mask.len() != channels {
            return Err(SignalError::MaskLengthMismatch {
                expected: channels,
                got: channel_mask.len(),
            });
        }
        if channel_mask.iter().filter(|&&m| !m).count() >= channels {
            return Err(SignalError::BadGeometry {
                channels,
                rows: grid.rows,
                cols: grid.cols,
            });
        }
        if samples.is_empty() || samples.len() % channels != 0 {
            return Err(SignalError::BadBufferLength {
                expected: channels,
                got: samples.len(),
            });
        }
        let samples_per_channel = samples.len() / channels;
        Ok(Recording {
            samples,
            channels,
            samples_per_channel,
            sample_rate,
            channel_mask,
            grid,
        })
    }

    /// All-channels-usable recording on the given grid.
    pub fn from_channels(
        channels: Vec<Vec<f32>>,
        sample_rate: f64,
        grid: GridShape,
    ) -> Result<Self, SignalError> {
        let m = channels.len();
        let mut samples = Vec::new();
        for ch in &channels {
            samples.extend_from_slice(ch);
        }
        Recording::new(samples, m, sample_rate, grid, vec![true; m])
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn num_samples(&self) -> usize {
        self.samples_per_channel
    }

    pub fn duration_s(&self) -> f64 {
        self.samples_per_channel as f64 / self.sample_rate
    }

    #[inline]
    pub fn channel(&self, i: usize) -> &[f32] {
        &self.samples[i * self.samples_per_channel..(i + 1) * self.samples_per_channel]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.samples[i * self.samples_per_channel..(i + 1) * self.samples_per_channel]
    }

    pub fn raw_samples(&self) -> &[f32] {
        &self.samples
    }

    /// Indices of channels that participate in decomposition.
    pub fn used_channels(&self) -> Vec<usize> {
        (0..self.channels)
            .filter(|&i| self.channel_mask[i])
            .collect()
    }

    /// Total energy (sum of squares, in f64) across all channels.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }
}

/// One motor unit's firing times as sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    pub mu_id: u32,
    firing_samples: Vec<usize>,
}

impl SpikeTrain {
    pub fn new(mu_id: u32, firing_samples: Vec<usize>) -> Result<Self, SignalError> {
        for i in 1..firing_samples.len() {
            if firing_samples[i] <= firing_samples[i - 1] {
                return Err(SignalError::NotStrictlyIncreasing { index: i });
            }
        }
        Ok(SpikeTrain {
            mu_id,
            firing_samples,
        })
    }

    pub fn empty(mu_id: u32) -> Self {
        SpikeTrain {
            mu_id,
            firing_samples: Vec::new(),
        }
    }

    pub fn firing_samples(&self) -> &[usize] {
        &self.firing_samples
    }

    pub fn len(&self) -> usize {
        self.firing_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firing_samples.is_empty()
    }

    /// Whether consecutive firings are separated by more than `min_gap`
    /// samples (the refractory assumption used throughout).
    pub fn respects_refractory(&self, min_gap: usize) -> bool {
        self.firing_samples
            .windows(2)
            .all(|w| w[1] - w[0] > min_gap)
    }
}

/// Spike-train statistics. Fields are `None` when too few spikes exist to
/// define them, never a sentinel number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeStats {
    pub n_spikes: usize,
    pub firing_rate: Option<f64>,
    pub cov_isi: Option<f64>,
    pub cov_amp: Option<f64>,
}

impl SpikeStats {
    pub fn undefined(n_spikes: usize) -> Self {
        SpikeStats {
            n_spikes,
            firing_rate: None,
            cov_isi: None,
            cov_amp: None,
        }
    }
}

/// Expand firing times into a 0/1 impulse sequence of the given length.
pub fn spikes_to_binary(train: &SpikeTrain, length: usize) -> Result<Vec<u8>, SignalError> {
    let mut seq = vec![0u8; length];
    for &t in train.firing_samples() {
        if t >= length {
            return Err(SignalError::SpikeOutOfRange { index: t, length });
        }
        seq[t] = 1;
    }
    Ok(seq)
}

/// Inverse of [`spikes_to_binary`]: nonzero positions become firing times.
pub fn binary_to_spikes(seq: &[u8], mu_id: u32) -> SpikeTrain {
    let firings = seq
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, _)| i)
        .collect();
    SpikeTrain {
        mu_id,
        firing_samples: firings,
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (biased) standard deviation; deterministic and stable for the
/// small windows the online stage works with.
pub(crate) fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    flt::sqrt(var)
}

/// Firing rate and ISI variability of a spike train.
///
/// The rate needs at least 2 spikes, the ISI coefficient of variation at
/// least 3; anything below that is flagged undefined.
pub fn isi_stats(train: &SpikeTrain, sample_rate: f64) -> SpikeStats {
    let n = train.len();
    let times = train.firing_samples();
    let mut stats = SpikeStats::undefined(n);
    if n >= 2 {
        let span_s = (times[n - 1] - times[0]) as f64 / sample_rate;
        if span_s > 0.0 {
            stats.firing_rate = Some((n - 1) as f64 / span_s);
        }
    }
    if n >= 3 {
        let isis: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
        let m = mean(&isis);
        if m > 0.0 {
            stats.cov_isi = Some(population_std(&isis) / m);
        }
    }
    stats
}

/// Amplitude consistency of a set of spike peak values.
pub fn amp_stats(amplitudes: &[f64]) -> SpikeStats {
    let n = amplitudes.len();
    let mut stats = SpikeStats::undefined(n);
    if n >= 3 {
        let m = mean(amplitudes);
        if m > 0.0 {
            stats.cov_amp = Some(population_std(amplitudes) / m);
        }
    }
    stats
}

/// Combined amplitude + interval statistics for a detected train.
pub fn spike_stats(train: &SpikeTrain, amplitudes: &[f64], sample_rate: f64) -> SpikeStats {
    let mut stats = isi_stats(train, sample_rate);
    stats.cov_amp = amp_stats(amplitudes).cov_amp;
    stats
}

/// Per-MU, per-channel action-potential waveforms of a fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct MuapTemplateSet {
    mu_ids: Vec<u32>,
    channels: usize,
    len: usize,
    /// Indexed `[mu][channel][tau]`.
    data: Vec<f64>,
}

impl MuapTemplateSet {
    pub fn zeros(mu_ids: Vec<u32>, channels: usize, len: usize) -> Self {
        let n = mu_ids.len();
        MuapTemplateSet {
            mu_ids,
            channels,
            len,
            data: vec![0.0; n * channels * len],
        }
    }

    pub fn num_mus(&self) -> usize {
        self.mu_ids.len()
    }

    pub fn mu_ids(&self) -> &[u32] {
        &self.mu_ids
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn template_len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn template(&self, mu_index: usize, channel: usize) -> &[f64] {
        let base = (mu_index * self.channels + channel) * self.len;
        &self.data[base..base + self.len]
    }

    #[inline]
    pub fn template_mut(&mut self, mu_index: usize, channel: usize) -> &mut [f64] {
        let base = (mu_index * self.channels + channel) * self.len;
        &mut self.data[base..base + self.len]
    }

    /// Peak-to-peak amplitude of one MU's waveform in one channel.
    pub fn peak_to_peak(&self, mu_index: usize, channel: usize) -> f64 {
        let t = self.template(mu_index, channel);
        let max = t.iter().fold(f64::MIN, |a, &b| a.max(b));
        let min = t.iter().fold(f64::MAX, |a, &b| a.min(b));
        max - min
    }

    /// Restrict the set to the given MU indices (in the given order).
    pub fn select(&self, indices: &[usize]) -> MuapTemplateSet {
        let mut out = MuapTemplateSet::zeros(
            indices.iter().map(|&i| self.mu_ids[i]).collect(),
            self.channels,
            self.len,
        );
        for (new_idx, &old_idx) in indices.iter().enumerate() {
            for ch in 0..self.channels {
                out.template_mut(new_idx, ch)
                    .copy_from_slice(self.template(old_idx, ch));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn binary_expansion_matches_definition() {
        let train = SpikeTrain::new(0, vec![2, 5]).unwrap();
        assert_eq!(
            spikes_to_binary(&train, 8).unwrap(),
            vec![0, 0, 1, 0, 0, 1, 0, 0]
        );
    }

    #[test]
    fn binary_expansion_empty_train() {
        let train = SpikeTrain::empty(3);
        assert_eq!(spikes_to_binary(&train, 4).unwrap(), vec![0, 0, 0, 0]);
    }

    #[test]
    fn binary_expansion_rejects_out_of_range() {
        let train = SpikeTrain::new(0, vec![2, 9]).unwrap();
        assert_eq!(
            spikes_to_binary(&train, 8),
            Err(SignalError::SpikeOutOfRange {
                index: 9,
                length: 8
            })
        );
    }

    #[test]
    fn binary_round_trip_on_random_train() {
        let mut rng = Rng::new(17);
        let mut times = Vec::new();
        let mut t = 0usize;
        for _ in 0..50 {
            t += 1 + rng.uniform_usize(40);
            times.push(t);
        }
        let train = SpikeTrain::new(7, times.clone()).unwrap();
        let seq = spikes_to_binary(&train, t + 1).unwrap();
        assert_eq!(seq.iter().map(|&v| v as usize).sum::<usize>(), 50);
        let back = binary_to_spikes(&seq, 7);
        assert_eq!(back.firing_samples(), &times[..]);
    }

    #[test]
    fn spike_train_rejects_non_increasing() {
        assert!(SpikeTrain::new(0, vec![5, 5]).is_err());
        assert!(SpikeTrain::new(0, vec![5, 4]).is_err());
    }

    #[test]
    fn periodic_train_has_exact_rate_and_zero_cov() {
        // 8 Hz for 5 s at 2 kHz: spikes every 250 samples.
        let times: Vec<usize> = (0..=40).map(|k| k * 250).collect();
        let train = SpikeTrain::new(0, times).unwrap();
        let stats = isi_stats(&train, 2000.0);
        assert!((stats.firing_rate.unwrap() - 8.0).abs() < 1e-12);
        assert!(stats.cov_isi.unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_spikes_have_rate_but_no_cov() {
        let train = SpikeTrain::new(0, vec![0, 1000]).unwrap();
        let stats = isi_stats(&train, 2000.0);
        assert!((stats.firing_rate.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(stats.cov_isi, None);
    }

    #[test]
    fn jittered_train_cov_matches_draw_sd() {
        // ISI = mean * (1 + 0.2 z), z clipped at ±2: CoV_isi should land near
        // 0.2 (slightly below, from clipping) for a long train.
        let mut rng = Rng::new(23);
        let mean_isi = 250.0;
        let mut t = 0.0f64;
        let mut times = Vec::new();
        for _ in 0..400 {
            t += mean_isi * (1.0 + 0.2 * rng.normal().clamp(-2.0, 2.0));
            times.push(t as usize);
        }
        let train = SpikeTrain::new(0, times).unwrap();
        let cov = isi_stats(&train, 2000.0).cov_isi.unwrap();
        assert!((cov - 0.2).abs() < 0.05, "cov_isi={cov}");
    }

    #[test]
    fn amp_stats_constant_and_boundary() {
        assert!(amp_stats(&[1.0, 1.0, 1.0, 1.0]).cov_amp.unwrap().abs() < 1e-12);
        assert_eq!(amp_stats(&[1.0, 3.0]).cov_amp, None);
    }

    #[test]
    fn amp_stats_monte_carlo() {
        let mut rng = Rng::new(31);
        let amps: Vec<f64> = (0..1000).map(|_| rng.normal_scaled(10.0, 2.0)).collect();
        let cov = amp_stats(&amps).cov_amp.unwrap();
        assert!((cov - 0.2).abs() < 0.02, "cov_amp={cov}");
    }

    #[test]
    fn amp_stats_nonpositive_mean_is_undefined() {
        assert_eq!(amp_stats(&[-1.0, 0.0, 1.0]).cov_amp, None);
    }

    proptest! {
        #[test]
        fn isi_stats_offset_invariant(
            offset in 0usize..10_000,
            gaps in proptest::collection::vec(1usize..500, 3..40)
        ) {
            let mut t = 0usize;
            let times: Vec<usize> = gaps.iter().map(|&g| { t += g; t }).collect();
            let shifted: Vec<usize> = times.iter().map(|&x| x + offset).collect();
            let a = isi_stats(&SpikeTrain::new(0, times).unwrap(), 2000.0);
            let b = isi_stats(&SpikeTrain::new(0, shifted).unwrap(), 2000.0);
            prop_assert!((a.firing_rate.unwrap() - b.firing_rate.unwrap()).abs() < 1e-12);
            prop_assert!((a.cov_isi.unwrap() - b.cov_isi.unwrap()).abs() < 1e-12);
        }

        #[test]
        fn amp_stats_scale_invariant(
            scale in 0.001f64..1000.0,
            amps in proptest::collection::vec(0.1f64..100.0, 3..50)
        ) {
            let scaled: Vec<f64> = amps.iter().map(|&a| a * scale).collect();
            let a = amp_stats(&amps).cov_amp.unwrap();
            let b = amp_stats(&scaled).cov_amp.unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn binary_round_trip_identity(
            gaps in proptest::collection::vec(1usize..100, 0..60)
        ) {
            let mut t = 0usize;
            let times: Vec<usize> = gaps.iter().map(|&g| { t += g; t }).collect();
            let train = SpikeTrain::new(1, times.clone()).unwrap();
            let seq = spikes_to_binary(&train, t + 1).unwrap();
            let back = binary_to_spikes(&seq, 1);
            prop_assert_eq!(back.firing_samples(), &times[..]);
        }
    }
}
