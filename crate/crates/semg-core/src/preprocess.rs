//! Conditioning of raw recordings and construction of the extended, whitened
//! observations that the decomposition works on.
//!
//! The chain is: zero-phase band-pass + notch filtering of every usable
//! channel, interpolation of masked channels from grid neighbors, delay-line
//! extension of the usable channels, and eigenvalue whitening of the extended
//! signal.

use alloc::vec;
use alloc::vec::Vec;

use crate::flt;
use crate::linalg::{self, Mat};
use crate::signal::Recording;

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessError {
    /// Band edges must satisfy 0 < low < high < sample_rate/2.
    BadBand {
        low: f64,
        high: f64,
        nyquist: f64,
    },
    BadOrder {
        order: usize,
    },
    /// Designed filter has a pole on or outside the unit circle.
    UnstableDesign {
        pole_magnitude: f64,
    },
    /// A masked channel has no usable grid neighbor to interpolate from.
    IsolatedChannel {
        channel: usize,
    },
    BadExtensionFactor,
    /// Whitening needs at least two samples.
    TooFewSamples {
        got: usize,
    },
    /// Input carries no variance at all.
    ZeroVariance,
    Eigensolver,
}

impl core::fmt::Display for PreprocessError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            PreprocessError::BadBand { low, high, nyquist } => {
                write!(f, "band {low}-{high} Hz invalid for Nyquist {nyquist} Hz")
            }
            PreprocessError::BadOrder { order } => {
                write!(f, "band-pass order {order} must be even and >= 2")
            }
            PreprocessError::UnstableDesign { pole_magnitude } => {
                write!(
                    f,
                    "filter design unstable (pole magnitude {pole_magnitude})"
                )
            }
            PreprocessError::IsolatedChannel { channel } => {
                write!(f, "masked channel {channel} has no usable neighbor")
            }
            PreprocessError::BadExtensionFactor => write!(f, "extension factor must be >= 1"),
            PreprocessError::TooFewSamples { got } => {
                write!(f, "whitening needs at least 2 samples, got {got}")
            }
            PreprocessError::ZeroVariance => write!(f, "input signal has zero variance"),
            PreprocessError::Eigensolver => write!(f, "eigendecomposition failed"),
        }
    }
}

impl core::error::Error for PreprocessError {}

/// Band-pass + notch configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub bp_low_hz: f64,
    pub bp_high_hz: f64,
    pub bp_order: usize,
    pub bp_enabled: bool,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub notch_enabled: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            bp_low_hz: 20.0,
            bp_high_hz: 500.0,
            bp_order: 10,
            bp_enabled: true,
            notch_hz: 50.0,
            notch_q: 35.0,
            notch_enabled: true,
        }
    }
}

// ---------------------------------------------------------------------------
// IIR design
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn scale(self, s: f64) -> Complex {
        Complex::new(self.re * s, self.im * s)
    }

    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    fn sqrt(self) -> Complex {
        let r = flt::hypot(self.re, self.im);
        let theta = flt::atan2(self.im, self.re);
        let rt = flt::sqrt(r);
        Complex::new(rt * flt::cos(theta / 2.0), rt * flt::sin(theta / 2.0))
    }

    fn abs(self) -> f64 {
        flt::hypot(self.re, self.im)
    }
}

/// One second-order section, normalized so a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Run the section over `x` (direct form II transposed), zero initial state.
    fn run(&self, x: &mut [f64]) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * out + s2;
            s2 = self.b2 * input - self.a2 * out;
            *v = out;
        }
    }

    fn magnitude_at(&self, omega: f64) -> f64 {
        let e1 = Complex::new(flt::cos(omega), -flt::sin(omega));
        let e2 = Complex::new(flt::cos(2.0 * omega), -flt::sin(2.0 * omega));
        let num = Complex::new(self.b0, 0.0)
            .add(e1.scale(self.b1))
            .add(e2.scale(self.b2));
        let den = Complex::new(1.0, 0.0)
            .add(e1.scale(self.a1))
            .add(e2.scale(self.a2));
        num.div(den).abs()
    }
}

/// Section from a pole pair that is either complex-conjugate or both real.
fn biquad_from_pole_pair(p: Complex, q: Complex) -> Biquad {
    Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: -1.0,
        a1: -(p.re + q.re),
        a2: p.re * q.re - p.im * q.im,
    }
}

/// Butterworth band-pass as cascaded biquads.
///
/// `order` is the final band-pass order (twice the low-pass prototype order),
/// so the default 10 uses a 5-pole prototype. Zeros sit at z = ±1, one pair
/// per section, and the cascade is normalized to unit gain at the geometric
/// center of the band.
pub fn design_butterworth_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    sample_rate: f64,
) -> Result<Vec<Biquad>, PreprocessError> {
    let nyquist = sample_rate / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(PreprocessError::BadBand {
            low: low_hz,
            high: high_hz,
            nyquist,
        });
    }
    if order < 2 || order % 2 != 0 {
        return Err(PreprocessError::BadOrder { order });
    }
    let n_proto = order / 2;

    // Prewarped analog edges and band geometry.
    let fs2 = 2.0 * sample_rate;
    let wl = fs2 * flt::tan(core::f64::consts::PI * low_hz / sample_rate);
    let wh = fs2 * flt::tan(core::f64::consts::PI * high_hz / sample_rate);
    let w0sq = wl * wh;
    let bw = wh - wl;

    let bilinear = |s: Complex| -> Complex {
        Complex::new(fs2, 0.0)
            .add(s)
            .div(Complex::new(fs2, 0.0).sub(s))
    };

    let mut sections = Vec::with_capacity(n_proto);
    for k in 0..n_proto {
        let theta = core::f64::consts::PI * (2.0 * k as f64 + n_proto as f64 + 1.0)
            / (2.0 * n_proto as f64);
        let proto = Complex::new(flt::cos(theta), flt::sin(theta));
        if proto.im < -1e-12 {
            continue; // conjugate of an already-handled pole
        }
        // Low-pass -> band-pass: s^2 - (bw p) s + w0^2 = 0.
        let half = proto.scale(bw / 2.0);
        let disc = half.mul(half).sub(Complex::new(w0sq, 0.0));
        let root = disc.sqrt();
        let s_poles = [half.add(root), half.sub(root)];
        if proto.im.abs() <= 1e-12 {
            // Real prototype pole: its two band-pass poles form one section
            // (either a conjugate pair or two reals).
            let z0 = bilinear(s_poles[0]);
            let z1 = bilinear(s_poles[1]);
            sections.push(biquad_from_pole_pair(z0, z1));
        } else {
            // Complex prototype pole: each band-pass pole pairs with the
            // conjugate generated by the mirrored prototype pole.
            for s in s_poles {
                let z = bilinear(s);
                let zc = Complex::new(z.re, -z.im);
                sections.push(biquad_from_pole_pair(z, zc));
            }
        }
    }

    // Stability check on every pole.
    for s in &sections {
        let disc = s.a1 * s.a1 - 4.0 * s.a2;
        let max_mag = if disc >= 0.0 {
            let r = flt::sqrt(disc);
            (((-s.a1 + r) / 2.0).abs()).max(((-s.a1 - r) / 2.0).abs())
        } else {
            flt::sqrt(s.a2)
        };
        if !(max_mag < 1.0) {
            return Err(PreprocessError::UnstableDesign {
                pole_magnitude: max_mag,
            });
        }
    }

    // Normalize to unit gain at the geometric band center.
    let fc = flt::sqrt(low_hz * high_hz);
    let omega = 2.0 * core::f64::consts::PI * fc / sample_rate;
    let gain: f64 = sections.iter().map(|s| s.magnitude_at(omega)).product();
    if gain <= 0.0 || !gain.is_finite() {
        return Err(PreprocessError::UnstableDesign {
            pole_magnitude: f64::INFINITY,
        });
    }
    let per_section = flt::powf(1.0 / gain, 1.0 / sections.len() as f64);
    for s in &mut sections {
        s.b0 *= per_section;
        s.b2 *= per_section;
    }
    Ok(sections)
}

/// Second-order notch at `f0` with quality factor `q`.
pub fn design_notch(f0_hz: f64, q: f64, sample_rate: f64) -> Result<Biquad, PreprocessError> {
    let nyquist = sample_rate / 2.0;
    if !(f0_hz > 0.0 && f0_hz < nyquist && q > 0.0) {
        return Err(PreprocessError::BadBand {
            low: f0_hz,
            high: f0_hz,
            nyquist,
        });
    }
    let omega = 2.0 * core::f64::consts::PI * f0_hz / sample_rate;
    let alpha = flt::sin(omega) / (2.0 * q);
    let a0 = 1.0 + alpha;
    Ok(Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * flt::cos(omega) / a0,
        b2: 1.0 / a0,
        a1: -2.0 * flt::cos(omega) / a0,
        a2: (1.0 - alpha) / a0,
    })
}

/// Largest time constant (in samples) across the cascade, from pole radii.
fn settle_samples(sections: &[Biquad]) -> usize {
    let mut tau: f64 = 8.0;
    for s in sections {
        let disc = s.a1 * s.a1 - 4.0 * s.a2;
        let radius = if disc >= 0.0 {
            let r = flt::sqrt(disc);
            (((-s.a1 + r) / 2.0).abs()).max(((-s.a1 - r) / 2.0).abs())
        } else {
            flt::sqrt(s.a2.max(0.0))
        };
        if radius > 0.0 && radius < 1.0 {
            tau = tau.max(-1.0 / flt::ln(radius));
        }
    }
    tau as usize + 1
}

/// Zero-phase (forward-backward) application of a biquad cascade.
///
/// The signal is padded with odd reflections sized to the slowest pole so
/// filter transients settle outside the region of interest, then filtered
/// forward and backward.
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    if x.is_empty() || sections.is_empty() {
        return x.to_vec();
    }
    let pad = (x.len() - 1).min(3 * settle_samples(sections));
    let n = x.len();
    let mut buf = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        buf.push(2.0 * x[0] - x[i]);
    }
    buf.extend_from_slice(x);
    for i in 1..=pad {
        buf.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    for s in sections {
        s.run(&mut buf);
    }
    buf.reverse();
    buf[pad..pad + n].to_vec()
}

/// Squared magnitude response of the zero-phase cascade at `f_hz`.
pub fn zero_phase_magnitude(sections: &[Biquad], f_hz: f64, sample_rate: f64) -> f64 {
    let omega = 2.0 * core::f64::consts::PI * f_hz / sample_rate;
    let one_pass: f64 = sections.iter().map(|s| s.magnitude_at(omega)).product();
    one_pass * one_pass
}

/// Zero-phase band-pass + notch over every usable channel.
///
/// Masked channels pass through untouched.
pub fn apply_filters(rec: &Recording, spec: &FilterSpec) -> Result<Recording, PreprocessError> {
    let mut sections: Vec<Biquad> = Vec::new();
    if spec.bp_enabled {
        sections.extend(design_butterworth_bandpass(
            spec.bp_order,
            spec.bp_low_hz,
            spec.bp_high_hz,
            rec.sample_rate,
        )?);
    }
    if spec.notch_enabled {
        sections.push(design_notch(spec.notch_hz, spec.notch_q, rec.sample_rate)?);
    }
    let mut out = rec.clone();
    if sections.is_empty() {
        return Ok(out);
    }
    for ch in 0..rec.num_channels() {
        if !rec.channel_mask[ch] {
            continue;
        }
        let x: Vec<f64> = rec.channel(ch).iter().map(|&v| v as f64).collect();
        let y = filtfilt(&sections, &x);
        for (dst, &v) in out.channel_mut(ch).iter_mut().zip(&y) {
            *dst = v as f32;
        }
    }
    Ok(out)
}

/// Fill masked channels with the mean of their usable 4-neighbors on the grid.
///
/// The channel mask is left unchanged: repaired channels stay excluded from
/// decomposition: and the returned list records which channels were filled
/// (they do participate in waveform estimation).
pub fn repair_channels(rec: &Recording) -> Result<(Recording, Vec<usize>), PreprocessError> {
    let mut out = rec.clone();
    let mut repaired = Vec::new();
    let (rows, cols) = (rec.grid.rows, rec.grid.cols);
    for ch in 0..rec.num_channels() {
        if rec.channel_mask[ch] {
            continue;
        }
        let (r, c) = (ch / cols, ch % cols);
        let mut neighbors = Vec::new();
        if r > 0 {
            neighbors.push((r - 1) * cols + c);
        }
        if r + 1 < rows {
            neighbors.push((r + 1) * cols + c);
        }
        if c > 0 {
            neighbors.push(r * cols + (c - 1));
        }
        if c + 1 < cols {
            neighbors.push(r * cols + (c + 1));
        }
        neighbors.retain(|&n| rec.channel_mask[n]);
        if neighbors.is_empty() {
            return Err(PreprocessError::IsolatedChannel { channel: ch });
        }
        let t = rec.num_samples();
        let mut filled = vec![0.0f64; t];
        for &n in &neighbors {
            for (acc, &v) in filled.iter_mut().zip(rec.channel(n)) {
                *acc += v as f64;
            }
        }
        let scale = 1.0 / neighbors.len() as f64;
        for (dst, acc) in out.channel_mut(ch).iter_mut().zip(&filled) {
            *dst = (acc * scale) as f32;
        }
        repaired.push(ch);
    }
    Ok((out, repaired))
}

/// Flag channels whose RMS exceeds `factor ×` the median channel RMS.
///
/// Advisory only: callers may suggest masking these, nothing is changed.
pub fn suggest_bad_channels(rec: &Recording, factor: f64) -> Vec<usize> {
    let mut rms: Vec<f64> = (0..rec.num_channels())
        .map(|ch| {
            let x = rec.channel(ch);
            flt::sqrt(x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64)
        })
        .collect();
    let per_channel = rms.clone();
    rms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let median = rms[rms.len() / 2];
    if median <= 0.0 {
        return Vec::new();
    }
    per_channel
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > factor * median)
        .map(|(ch, _)| ch)
        .collect()
}

// ---------------------------------------------------------------------------
// Extension and whitening
// ---------------------------------------------------------------------------

/// Time-major frame matrix: `len` samples of dimension `dim`, each sample
/// contiguous in memory so per-sample dot products vectorize.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    dim: usize,
    len: usize,
    data: Vec<f64>,
}

impl FrameSeries {
    pub fn zeros(dim: usize, len: usize) -> Self {
        FrameSeries {
            dim,
            len,
            data: vec![0.0; dim * len],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn sample(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    #[inline]
    pub fn sample_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// `y[t] = w · sample(t)`.
    pub fn project(&self, w: &[f64]) -> Vec<f64> {
        (0..self.len)
            .map(|t| linalg::dot(self.sample(t), w))
            .collect()
    }

    /// Sample mean vector and (population) covariance matrix.
    pub fn mean_covariance(&self) -> (Vec<f64>, Mat) {
        let d = self.dim;
        let t_len = self.len;
        let mut mean = vec![0.0; d];
        for t in 0..t_len {
            for (m, &x) in mean.iter_mut().zip(self.sample(t)) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= t_len as f64;
        }
        let mut cov = Mat::zeros(d, d);
        let mut centered = vec![0.0; d];
        for t in 0..t_len {
            for (c, (&x, &m)) in centered.iter_mut().zip(self.sample(t).iter().zip(&mean)) {
                *c = x - m;
            }
            for i in 0..d {
                let xi = centered[i];
                let row = cov.row_mut(i);
                for (j, &xj) in centered.iter().enumerate().take(i + 1) {
                    row[j] += xi * xj;
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov.at(i, j) / t_len as f64;
                *cov.at_mut(i, j) = v;
                *cov.at_mut(j, i) = v;
            }
        }
        (mean, cov)
    }
}

/// Delay-line extension of the usable channels of a recording.
///
/// Row `(i, k)` holds usable channel `i` delayed by `k` samples, rows ordered
/// as all delays of the first usable channel, then the next, and so on.
/// Leading samples are zero-padded.
#[derive(Debug, Clone)]
pub struct ExtendedSignal {
    pub frames: FrameSeries,
    pub extension: usize,
    /// Source recording channel for each block of `extension` rows.
    pub source_channels: Vec<usize>,
}

impl ExtendedSignal {
    pub fn dim(&self) -> usize {
        self.frames.dim()
    }

    /// Gathers row `(channel_block, delay)` as a time series.
    pub fn row(&self, block: usize, delay: usize) -> Vec<f64> {
        let r = block * self.extension + delay;
        (0..self.frames.len())
            .map(|t| self.frames.sample(t)[r])
            .collect()
    }
}

pub fn extend(rec: &Recording, k: usize) -> Result<ExtendedSignal, PreprocessError> {
    if k < 1 {
        return Err(PreprocessError::BadExtensionFactor);
    }
    let used = rec.used_channels();
    let dim = used.len() * k;
    let t_len = rec.num_samples();
    let mut frames = FrameSeries::zeros(dim, t_len);
    for (ui, &ch) in used.iter().enumerate() {
        let src = rec.channel(ch);
        for t in 0..t_len {
            let dst = frames.sample_mut(t);
            for d in 0..k {
                dst[ui * k + d] = if t >= d { src[t - d] as f64 } else { 0.0 };
            }
        }
    }
    Ok(ExtendedSignal {
        frames,
        extension: k,
        source_channels: used,
    })
}

pub const EIGENVALUE_CUTOFF_REL: f64 = 1e-6;

/// Whitening transform fitted by eigendecomposition of the sample covariance.
///
/// Components with eigenvalue below `1e-6 ×` the largest are discarded, so the
/// retained dimension can be smaller than the input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    /// `retained × input_dim`, rows are `λ^{-1/2} e^T`.
    q: Mat,
    mean: Vec<f64>,
    pub input_dim: usize,
    pub retained: usize,
}

impl WhiteningTransform {
    pub fn q(&self) -> &Mat {
        &self.q
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Whiten a full frame series: `y_t = Q (x_t - mean)`.
    pub fn apply(&self, ext: &ExtendedSignal) -> FrameSeries {
        assert_eq!(ext.dim(), self.input_dim);
        let mut out = FrameSeries::zeros(self.retained, ext.frames.len());
        let mut centered = vec![0.0; self.input_dim];
        for t in 0..ext.frames.len() {
            for (c, (&x, &m)) in centered
                .iter_mut()
                .zip(ext.frames.sample(t).iter().zip(&self.mean))
            {
                *c = x - m;
            }
            let y = out.sample_mut(t);
            for r in 0..self.retained {
                y[r] = linalg::dot(self.q.row(r), &centered);
            }
        }
        out
    }

    /// Fold a whitened-space vector into extended-raw space: `Q^T w`.
    ///
    /// Applying the result directly to extended raw samples reproduces the
    /// whitened-space source up to the constant `w·Q·mean`; callers re-derive
    /// thresholds on the folded source so both paths stay consistent.
    pub fn fold(&self, w_white: &[f64]) -> Vec<f64> {
        assert_eq!(w_white.len(), self.retained);
        self.q.transpose_vec(w_white)
    }
}

pub fn fit_whitening(ext: &ExtendedSignal) -> Result<WhiteningTransform, PreprocessError> {
    let t_len = ext.frames.len();
    if t_len < 2 {
        return Err(PreprocessError::TooFewSamples { got: t_len });
    }
    let (mean, cov) = ext.frames.mean_covariance();
    let (values, vectors) = linalg::sym_eigen(&cov).map_err(|_| PreprocessError::Eigensolver)?;
    let max_ev = values.first().copied().unwrap_or(0.0);
    if max_ev <= 0.0 {
        return Err(PreprocessError::ZeroVariance);
    }
    let cutoff = max_ev * EIGENVALUE_CUTOFF_REL;
    let retained = values.iter().take_while(|&&v| v > cutoff).count();
    let d = ext.dim();
    let mut q = Mat::zeros(retained, d);
    for r in 0..retained {
        let scale = 1.0 / flt::sqrt(values[r]);
        for c in 0..d {
            *q.at_mut(r, c) = scale * vectors.at(c, r);
        }
    }
    Ok(WhiteningTransform {
        q,
        mean,
        input_dim: d,
        retained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::signal::GridShape;
    use alloc::vec::Vec;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| flt::sin(2.0 * core::f64::consts::PI * f * t as f64 / fs))
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        flt::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
    }

    fn single_channel_recording(x: Vec<f64>, fs: f64) -> Recording {
        Recording::from_channels(
            alloc::vec![x.into_iter().map(|v| v as f32).collect()],
            fs,
            GridShape { rows: 1, cols: 1 },
        )
        .unwrap()
    }

    #[test]
    fn notch_removes_mains_tone() {
        let fs = 2000.0;
        let x = sine(50.0, fs, 8000);
        let rec = single_channel_recording(x.clone(), fs);
        let out = apply_filters(&rec, &FilterSpec::default()).unwrap();
        let y: Vec<f64> = out.channel(0).iter().map(|&v| v as f64).collect();
        assert!(rms(&y) < 0.05 * rms(&x), "residual rms {}", rms(&y));
    }

    #[test]
    fn low_frequency_attenuated_beyond_20_db() {
        let fs = 2000.0;
        let spec = FilterSpec::default();
        let sections =
            design_butterworth_bandpass(spec.bp_order, spec.bp_low_hz, spec.bp_high_hz, fs)
                .unwrap();
        // Oracle: the designed cascade's zero-phase magnitude at 5 Hz.
        let mag = zero_phase_magnitude(&sections, 5.0, fs);
        assert!(mag < 0.01, "predicted zero-phase gain at 5 Hz: {mag}");

        let x = sine(5.0, fs, 8000);
        let rec = single_channel_recording(x.clone(), fs);
        let out = apply_filters(&rec, &spec).unwrap();
        let y: Vec<f64> = out.channel(0).iter().map(|&v| v as f64).collect();
        // Compare away from the edges where reflections dominate.
        let att_db = 20.0 * flt::log10(rms(&x[2000..6000]) / rms(&y[2000..6000]).max(1e-30));
        assert!(att_db > 20.0, "attenuation {att_db} dB");
    }

    #[test]
    fn passband_tone_survives() {
        let fs = 2000.0;
        let x = sine(120.0, fs, 8000);
        let rec = single_channel_recording(x.clone(), fs);
        let out = apply_filters(&rec, &FilterSpec::default()).unwrap();
        let y: Vec<f64> = out.channel(0).iter().map(|&v| v as f64).collect();
        let ratio = rms(&y[2000..6000]) / rms(&x[2000..6000]);
        assert!((ratio - 1.0).abs() < 0.05, "passband gain {ratio}");
    }

    #[test]
    fn white_noise_band_limited_after_filtering() {
        let fs = 2000.0;
        let mut rng = Rng::new(77);
        let n = 4096;
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let rec = single_channel_recording(x, fs);
        let out = apply_filters(&rec, &FilterSpec::default()).unwrap();
        let y: Vec<f64> = out.channel(0).iter().map(|&v| v as f64).collect();

        // Periodogram oracle via direct DFT bins.
        let mut total = 0.0;
        let mut above_600 = 0.0;
        for bin in 1..n / 2 {
            let f = bin as f64 * fs / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            let w = 2.0 * core::f64::consts::PI * bin as f64 / n as f64;
            for (t, &v) in y.iter().enumerate() {
                re += v * flt::cos(w * t as f64);
                im -= v * flt::sin(w * t as f64);
            }
            let p = re * re + im * im;
            total += p;
            if f > 600.0 {
                above_600 += p;
            }
        }
        assert!(
            above_600 < 0.01 * total,
            "high band fraction {}",
            above_600 / total
        );
    }

    #[test]
    fn filtering_is_idempotent_in_band() {
        let fs = 2000.0;
        let mut rng = Rng::new(5);
        let x: Vec<f64> = (0..6000).map(|_| rng.normal()).collect();
        let rec = single_channel_recording(x, fs);
        let spec = FilterSpec::default();
        let once = apply_filters(&rec, &spec).unwrap();
        let twice = apply_filters(&once, &spec).unwrap();
        let y1: Vec<f64> = once.channel(0).iter().map(|&v| v as f64).collect();
        let y2: Vec<f64> = twice.channel(0).iter().map(|&v| v as f64).collect();
        // Compare strictly in-band spectral content (the transition edges are
        // where a second pass legitimately keeps biting): DFT bins well inside
        // the 20-500 Hz band over an interior window.
        // Hann window keeps leakage from the band edges out of the measured bins.
        let window = |seg: &[f64]| -> Vec<f64> {
            let n = seg.len();
            seg.iter()
                .enumerate()
                .map(|(t, &v)| {
                    let w = 0.5
                        - 0.5 * flt::cos(2.0 * core::f64::consts::PI * t as f64 / (n - 1) as f64);
                    v * w
                })
                .collect()
        };
        let seg1 = window(&y1[1000..5000]);
        let seg2 = window(&y2[1000..5000]);
        let n = seg1.len();
        let fs_bin = fs / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut bin = (40.0 / fs_bin) as usize;
        while (bin as f64) * fs_bin < 400.0 {
            let w = 2.0 * core::f64::consts::PI * bin as f64 / n as f64;
            let (mut re1, mut im1, mut re2, mut im2) = (0.0, 0.0, 0.0, 0.0);
            for t in 0..n {
                let (c, s) = (flt::cos(w * t as f64), flt::sin(w * t as f64));
                re1 += seg1[t] * c;
                im1 -= seg1[t] * s;
                re2 += seg2[t] * c;
                im2 -= seg2[t] * s;
            }
            num += (re1 - re2) * (re1 - re2) + (im1 - im2) * (im1 - im2);
            den += re1 * re1 + im1 * im1;
            bin += 7;
        }
        let rel = flt::sqrt(num / den);
        assert!(rel < 0.01, "in-band change {rel}");
    }

    #[test]
    fn bad_designs_rejected() {
        assert!(matches!(
            design_butterworth_bandpass(10, 20.0, 1100.0, 2000.0),
            Err(PreprocessError::BadBand { .. })
        ));
        assert!(matches!(
            design_butterworth_bandpass(7, 20.0, 500.0, 2000.0),
            Err(PreprocessError::BadOrder { .. })
        ));
    }

    fn grid_recording(rows: usize, cols: usize, t: usize, fill: f32) -> Recording {
        let channels = rows * cols;
        Recording::new(
            alloc::vec![fill; channels * t],
            channels,
            2000.0,
            GridShape { rows, cols },
            alloc::vec![true; channels],
        )
        .unwrap()
    }

    #[test]
    fn repair_interior_channel_from_neighbors() {
        let mut rec = grid_recording(3, 3, 10, 3.0);
        rec.channel_mask[4] = false; // center of 3x3
        for v in rec.channel_mut(4) {
            *v = -99.0;
        }
        let (fixed, repaired) = repair_channels(&rec).unwrap();
        assert_eq!(repaired, alloc::vec![4]);
        assert!(fixed.channel(4).iter().all(|&v| (v - 3.0).abs() < 1e-6));
        // Mask still excludes the repaired channel from decomposition.
        assert!(!fixed.channel_mask[4]);
    }

    #[test]
    fn repair_corner_uses_available_neighbors() {
        let mut rec = grid_recording(3, 3, 4, 0.0);
        // Corner channel 0 has neighbors 1 (right) and 3 (below).
        for v in rec.channel_mut(1) {
            *v = 2.0;
        }
        for v in rec.channel_mut(3) {
            *v = 4.0;
        }
        rec.channel_mask[0] = false;
        let (fixed, _) = repair_channels(&rec).unwrap();
        assert!(fixed.channel(0).iter().all(|&v| (v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn repair_without_masked_channels_is_identity() {
        let rec = grid_recording(2, 2, 8, 1.5);
        let (fixed, repaired) = repair_channels(&rec).unwrap();
        assert!(repaired.is_empty());
        assert_eq!(fixed, rec);
    }

    #[test]
    fn repair_rejects_isolated_channel() {
        let mut rec = grid_recording(1, 3, 4, 1.0);
        rec.channel_mask[0] = false;
        rec.channel_mask[1] = false;
        // Channel 0's only neighbor (1) is masked too.
        assert!(matches!(
            repair_channels(&rec),
            Err(PreprocessError::IsolatedChannel { channel: 0 })
        ));
    }

    #[test]
    fn rms_outlier_suggestion_flags_loud_channel() {
        let mut rng = Rng::new(14);
        let mut chans: Vec<Vec<f32>> = (0..6)
            .map(|_| (0..500).map(|_| rng.normal() as f32).collect())
            .collect();
        for v in chans[2].iter_mut() {
            *v *= 20.0;
        }
        let rec = Recording::from_channels(chans, 2000.0, GridShape { rows: 2, cols: 3 }).unwrap();
        assert_eq!(suggest_bad_channels(&rec, 5.0), alloc::vec![2]);
        // Quiet recordings flag nothing.
        let quiet = grid_recording(2, 2, 16, 1.0);
        assert!(suggest_bad_channels(&quiet, 5.0).is_empty());
    }

    #[test]
    fn extend_k1_is_identity() {
        let rec = Recording::from_channels(
            alloc::vec![alloc::vec![1.0, 2.0, 3.0], alloc::vec![4.0, 5.0, 6.0]],
            2000.0,
            GridShape { rows: 1, cols: 2 },
        )
        .unwrap();
        let ext = extend(&rec, 1).unwrap();
        assert_eq!(ext.dim(), 2);
        assert_eq!(ext.row(0, 0), alloc::vec![1.0, 2.0, 3.0]);
        assert_eq!(ext.row(1, 0), alloc::vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn extend_delays_with_zero_padding() {
        let rec = Recording::from_channels(
            alloc::vec![alloc::vec![1.0, 2.0, 3.0]],
            2000.0,
            GridShape { rows: 1, cols: 1 },
        )
        .unwrap();
        let ext = extend(&rec, 2).unwrap();
        assert_eq!(ext.row(0, 0), alloc::vec![1.0, 2.0, 3.0]);
        assert_eq!(ext.row(0, 1), alloc::vec![0.0, 1.0, 2.0]);
        assert!(extend(&rec, 0).is_err());
    }

    #[test]
    fn extend_skips_masked_channels() {
        let mut rec = grid_recording(1, 3, 5, 1.0);
        rec.channel_mask[1] = false;
        let ext = extend(&rec, 2).unwrap();
        assert_eq!(ext.dim(), 4);
        assert_eq!(ext.source_channels, alloc::vec![0, 2]);
    }

    #[test]
    fn extend_shift_property_random_input() {
        let mut rng = Rng::new(3);
        let chans: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..40).map(|_| rng.normal() as f32).collect())
            .collect();
        let rec = Recording::from_channels(chans.clone(), 2000.0, GridShape { rows: 1, cols: 3 })
            .unwrap();
        let k = 10;
        let ext = extend(&rec, k).unwrap();
        for (ui, ch) in chans.iter().enumerate() {
            for d in 0..k {
                let row = ext.row(ui, d);
                for t in 0..ch.len() {
                    let expected = if t >= d { ch[t - d] as f64 } else { 0.0 };
                    assert_eq!(row[t], expected, "block {ui} delay {d} t {t}");
                }
            }
        }
    }

    fn whiteness_frobenius(w: &WhiteningTransform, ext: &ExtendedSignal) -> f64 {
        let white = w.apply(ext);
        let (_, cov) = white.mean_covariance();
        let mut fro = 0.0;
        for i in 0..cov.rows() {
            for j in 0..cov.cols() {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = cov.at(i, j) - target;
                fro += d * d;
            }
        }
        flt::sqrt(fro)
    }

    #[test]
    fn whitening_contract_on_random_data() {
        let mut rng = Rng::new(8);
        let chans: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..2000).map(|_| rng.normal() as f32).collect())
            .collect();
        let rec = Recording::from_channels(chans, 2000.0, GridShape { rows: 2, cols: 2 }).unwrap();
        let ext = extend(&rec, 5).unwrap();
        let w = fit_whitening(&ext).unwrap();
        assert!(whiteness_frobenius(&w, &ext) < 1e-6);
    }

    #[test]
    fn whitening_handles_rank_deficiency() {
        let mut rng = Rng::new(9);
        let base: Vec<f32> = (0..1500).map(|_| rng.normal() as f32).collect();
        // Duplicated channel makes the extended covariance rank deficient.
        let rec = Recording::from_channels(
            alloc::vec![base.clone(), base],
            2000.0,
            GridShape { rows: 1, cols: 2 },
        )
        .unwrap();
        let ext = extend(&rec, 3).unwrap();
        let w = fit_whitening(&ext).unwrap();
        assert!(w.retained < ext.dim());
        assert!(whiteness_frobenius(&w, &ext) < 1e-6);
    }

    #[test]
    fn whitening_rejects_zero_variance() {
        let rec = single_channel_recording(alloc::vec![0.0; 100], 2000.0);
        let ext = extend(&rec, 2).unwrap();
        assert!(matches!(
            fit_whitening(&ext),
            Err(PreprocessError::ZeroVariance)
        ));
    }

    #[test]
    fn fold_reproduces_whitened_projection_up_to_constant() {
        let mut rng = Rng::new(12);
        let chans: Vec<Vec<f32>> = (0..3)
            .map(|_| (0..1000).map(|_| rng.normal() as f32).collect())
            .collect();
        let rec = Recording::from_channels(chans, 2000.0, GridShape { rows: 1, cols: 3 }).unwrap();
        let ext = extend(&rec, 4).unwrap();
        let wt = fit_whitening(&ext).unwrap();
        let white = wt.apply(&ext);
        let w = rng.unit_vector(wt.retained);
        let composite = wt.fold(&w);
        let offset = linalg::dot(&composite, wt.mean());
        for t in (0..1000).step_by(97) {
            let y_white = linalg::dot(white.sample(t), &w);
            let y_raw = linalg::dot(ext.frames.sample(t), &composite);
            assert!((y_raw - offset - y_white).abs() < 1e-9);
        }
    }
}
