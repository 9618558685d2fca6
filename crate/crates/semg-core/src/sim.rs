//! High-density surface EMG simulation with known motor-unit activity.
//!
//! A cylindrical muscle is populated with motor units whose recruitment
//! thresholds follow an exponential ladder (many low-threshold units, few
//! high). Each unit owns a disc-shaped territory of muscle fibers; each fiber
//! contributes a propagating tripole source with generation at the endplate
//! and extinction at the fiber ends. Firing times follow a base rate plus a
//! linear rate-coding gain above recruitment, with Gaussian inter-spike
//! jitter. Rendering evaluates the convolutional mixing model exactly and
//! optionally adds Gaussian noise at a prescribed SNR, so decompositions can
//! be scored against exact ground truth.

use alloc::vec;
use alloc::vec::Vec;

use crate::flt;
use crate::rng::Rng;
use crate::signal::{GridShape, MuapTemplateSet, Recording, SpikeTrain};

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    BadConfig(&'static str),
    /// Territory placement failed (degenerate geometry).
    InfeasibleTerritory {
        mu: usize,
    },
    /// Trains reference MU ids missing from the template set.
    UnknownMuId {
        mu_id: u32,
    },
    SpikePastEnd {
        mu_id: u32,
        sample: usize,
    },
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::BadConfig(msg) => write!(f, "bad simulation config: {msg}"),
            SimError::InfeasibleTerritory { mu } => {
                write!(f, "could not place territory for MU {mu}")
            }
            SimError::UnknownMuId { mu_id } => write!(f, "no template for MU {mu_id}"),
            SimError::SpikePastEnd { mu_id, sample } => {
                write!(f, "MU {mu_id} fires at {sample}, past the rendered length")
            }
        }
    }
}

impl core::error::Error for SimError {}

/// Simulation parameters.
///
/// Distribution means/ranges follow the usual motoneuron-pool setup: fiber
/// totals uniform around the mean, fiber geometry Gaussian clipped at ±2 SD,
/// and ISI jitter proportional to the instantaneous mean interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_mus: usize,
    pub muscle_radius_mm: f64,
    pub fat_skin_mm: f64,
    /// Total fiber count is drawn uniform in `mean ± 0.5·mean`.
    pub mean_total_fibers: f64,
    pub half_fiber_length_mean_mm: f64,
    pub half_fiber_length_sd_mm: f64,
    pub fiber_diameter_mean_um: f64,
    pub fiber_diameter_sd_um: f64,
    pub intra_mu_diameter_sd_um: f64,
    /// Per-MU endplate center drawn uniform in ±spread.
    pub endplate_center_spread_mm: f64,
    /// Per-fiber endplate jitter drawn uniform in ±jitter.
    pub endplate_jitter_mm: f64,
    pub grid: GridShape,
    pub electrode_pitch_mm: f64,
    pub base_rate_hz: f64,
    /// Firing rate cap.
    pub peak_rate_hz: f64,
    /// Linear rate-coding gain in Hz per unit excitation above threshold,
    /// calibrated so plateau discharge statistics land near observed values.
    pub rate_gain_hz: f64,
    pub max_excitation: f64,
    /// Number of MUs whose thresholds must sit at or below `max_excitation`.
    pub recruited_at_max: usize,
    /// Ratio of the largest to the smallest recruitment threshold.
    pub threshold_range_ratio: f64,
    /// Ratio of the largest to the smallest MU fiber count.
    pub fiber_count_range_ratio: f64,
    /// ISI jitter: SD = `isi_cov ×` instantaneous mean ISI, clipped ±2 SD.
    pub isi_cov: f64,
    pub sample_rate_hz: f64,
    /// MUAP template length in samples.
    pub template_len: usize,
    /// Conduction velocity at the mean fiber diameter, m/s.
    pub conduction_velocity_m_s: f64,
    /// Velocity change per µm of fiber diameter away from the mean.
    pub velocity_per_um: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_mus: 120,
            muscle_radius_mm: 8.0,
            fat_skin_mm: 2.5,
            mean_total_fibers: 70_000.0,
            half_fiber_length_mean_mm: 40.0,
            half_fiber_length_sd_mm: 4.0,
            fiber_diameter_mean_um: 55.0,
            fiber_diameter_sd_um: 10.0,
            intra_mu_diameter_sd_um: 1.0,
            endplate_center_spread_mm: 8.0,
            endplate_jitter_mm: 2.0,
            grid: GridShape { rows: 8, cols: 8 },
            electrode_pitch_mm: 4.0,
            base_rate_hz: 8.0,
            peak_rate_hz: 35.0,
            rate_gain_hz: 70.0,
            max_excitation: 0.03,
            recruited_at_max: 33,
            threshold_range_ratio: 50.0,
            fiber_count_range_ratio: 20.0,
            isi_cov: 0.2,
            sample_rate_hz: 2000.0,
            template_len: 48,
            conduction_velocity_m_s: 4.0,
            velocity_per_um: 0.05,
            seed: 0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n_mus == 0 {
            return Err(SimError::BadConfig("n_mus must be >= 1"));
        }
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(SimError::BadConfig("grid dimensions must be >= 1"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(SimError::BadConfig("sample rate must be positive"));
        }
        if !(self.max_excitation > 0.0 && self.max_excitation <= 1.0) {
            return Err(SimError::BadConfig("max_excitation must be in (0, 1]"));
        }
        if self.template_len == 0 {
            return Err(SimError::BadConfig("template_len must be >= 1"));
        }
        if !(self.muscle_radius_mm > 0.0 && self.fat_skin_mm > 0.0) {
            return Err(SimError::BadConfig("geometry must be positive"));
        }
        Ok(())
    }
}

/// Excitation drive as a fraction of maximum, one value per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationProfile {
    values: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl ExcitationProfile {
    pub fn from_values(values: Vec<f64>, sample_rate_hz: f64) -> Result<Self, SimError> {
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(SimError::BadConfig("excitation values must be in [0, 1]"));
        }
        Ok(ExcitationProfile {
            values,
            sample_rate_hz,
        })
    }

    pub fn constant(level: f64, len: usize, sample_rate_hz: f64) -> Result<Self, SimError> {
        ExcitationProfile::from_values(vec![level; len], sample_rate_hz)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Linear ramp from zero to `plateau` over `ramp_s`, held for `hold_s`.
pub fn trapezoid_excitation(
    plateau: f64,
    ramp_s: f64,
    hold_s: f64,
    sample_rate_hz: f64,
) -> Result<ExcitationProfile, SimError> {
    if !(plateau > 0.0 && plateau <= 1.0) {
        return Err(SimError::BadConfig("plateau must be in (0, 1]"));
    }
    if !(ramp_s > 0.0 && hold_s > 0.0 && sample_rate_hz > 0.0) {
        return Err(SimError::BadConfig("durations must be positive"));
    }
    let n_ramp = flt::round(ramp_s * sample_rate_hz) as usize;
    let n_hold = flt::round(hold_s * sample_rate_hz) as usize;
    let mut values = Vec::with_capacity(n_ramp + n_hold);
    for k in 0..n_ramp {
        values.push(plateau * k as f64 / n_ramp as f64);
    }
    values.extend(core::iter::repeat(plateau).take(n_hold));
    Ok(ExcitationProfile {
        values,
        sample_rate_hz,
    })
}

/// One simulated muscle fiber.
#[derive(Debug, Clone, PartialEq)]
pub struct Fiber {
    /// Cross-section position, mm. `y` is depth below the skin (negative).
    pub x_mm: f64,
    pub y_mm: f64,
    pub diameter_um: f64,
    /// Endplate position along the fiber axis, mm.
    pub endplate_z_mm: f64,
}

/// One motor unit of the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct MotorUnit {
    pub recruitment_threshold: f64,
    pub territory_center_mm: (f64, f64),
    pub territory_radius_mm: f64,
    pub half_fiber_length_mm: f64,
    pub endplate_center_mm: f64,
    pub fibers: Vec<Fiber>,
}

impl MotorUnit {
    pub fn fiber_count(&self) -> usize {
        self.fibers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotorUnitPool {
    pub units: Vec<MotorUnit>,
    pub total_fibers: usize,
}

/// Exponential recruitment-threshold ladder calibrated so that exactly
/// `recruited_at_max` thresholds sit at or below `max_excitation`.
fn threshold_ladder(cfg: &SimConfig) -> Vec<f64> {
    let n = cfg.n_mus;
    let m = cfg.recruited_at_max.clamp(1, n);
    if n == 1 {
        return vec![cfg.max_excitation * 0.5];
    }
    let ratio = cfg.threshold_range_ratio.max(1.0 + 1e-9);
    let step = flt::ln(ratio) / (n - 1) as f64;
    // Anchor the ladder so the geometric midpoint between thresholds m and
    // m+1 lands on max_excitation (or the last threshold when m == n).
    let anchor = if m == n {
        (n - 1) as f64
    } else {
        (m as f64 - 1.0) + 0.5
    };
    let scale = cfg.max_excitation / flt::exp(step * anchor);
    (0..n).map(|i| scale * flt::exp(step * i as f64)).collect()
}

/// Largest-remainder apportionment of `total` fibers over exponential weights.
fn apportion_fibers(cfg: &SimConfig, total: usize) -> Vec<usize> {
    let n = cfg.n_mus;
    if n == 1 {
        return vec![total];
    }
    let ratio = cfg.fiber_count_range_ratio.max(1.0);
    let step = flt::ln(ratio) / (n - 1) as f64;
    let weights: Vec<f64> = (0..n).map(|i| flt::exp(step * i as f64)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut assigned = 0usize;
    for (i, w) in weights.iter().enumerate() {
        let exact = total as f64 * w / wsum;
        let floor = flt::floor(exact) as usize;
        counts.push(floor.max(1));
        assigned += counts[i];
        remainders.push((i, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(core::cmp::Ordering::Equal));
    let mut idx = 0;
    while assigned < total {
        counts[remainders[idx % n].0] += 1;
        assigned += 1;
        idx += 1;
    }
    while assigned > total {
        let i = remainders[idx % n].0;
        if counts[i] > 1 {
            counts[i] -= 1;
            assigned -= 1;
        }
        idx += 1;
    }
    counts
}

/// Build the motoneuron pool: thresholds, territories and fibers.
///
/// Deterministic given `cfg.seed`; the threshold ladder itself is seed-free
/// so different seeds share the recruitment profile.
pub fn build_pool(cfg: &SimConfig) -> Result<MotorUnitPool, SimError> {
    cfg.validate()?;
    let thresholds = threshold_ladder(cfg);

    let mut pool_rng = Rng::derive(cfg.seed, 0x706f_6f6c);
    let total_fibers = flt::round(
        pool_rng.uniform_range(0.5 * cfg.mean_total_fibers, 1.5 * cfg.mean_total_fibers),
    ) as usize;
    let counts = apportion_fibers(cfg, total_fibers.max(cfg.n_mus));

    let muscle_r = cfg.muscle_radius_mm;
    let axis_depth = -(cfg.fat_skin_mm + muscle_r);
    let area_total = core::f64::consts::PI * muscle_r * muscle_r;
    let fiber_total: usize = counts.iter().sum();

    let mut units = Vec::with_capacity(cfg.n_mus);
    for (i, (&threshold, &count)) in thresholds.iter().zip(&counts).enumerate() {
        let mut rng = Rng::derive(cfg.seed, 0x6d75_0000 ^ i as u64);
        let territory_area = area_total * count as f64 / fiber_total as f64;
        let territory_r = flt::sqrt(territory_area / core::f64::consts::PI).min(muscle_r);
        let free = muscle_r - territory_r;
        if free < 0.0 {
            return Err(SimError::InfeasibleTerritory { mu: i });
        }
        let ang = rng.uniform_range(0.0, 2.0 * core::f64::consts::PI);
        let rad = free * flt::sqrt(rng.uniform());
        let center = (rad * flt::cos(ang), axis_depth + rad * flt::sin(ang));

        let half_len = rng.normal_clipped(
            cfg.half_fiber_length_mean_mm,
            cfg.half_fiber_length_sd_mm,
            2.0,
        );
        let endplate_center = rng.uniform_range(
            -cfg.endplate_center_spread_mm,
            cfg.endplate_center_spread_mm,
        );
        let mu_diameter =
            rng.normal_clipped(cfg.fiber_diameter_mean_um, cfg.fiber_diameter_sd_um, 2.0);

        let mut fibers = Vec::with_capacity(count);
        for _ in 0..count {
            let fa = rng.uniform_range(0.0, 2.0 * core::f64::consts::PI);
            let fr = territory_r * flt::sqrt(rng.uniform());
            let diameter = rng
                .normal_clipped(mu_diameter, cfg.intra_mu_diameter_sd_um, 2.0)
                .max(1.0);
            let endplate = endplate_center
                + rng.uniform_range(-cfg.endplate_jitter_mm, cfg.endplate_jitter_mm);
            fibers.push(Fiber {
                x_mm: center.0 + fr * flt::cos(fa),
                y_mm: center.1 + fr * flt::sin(fa),
                diameter_um: diameter,
                endplate_z_mm: endplate,
            });
        }
        units.push(MotorUnit {
            recruitment_threshold: threshold,
            territory_center_mm: center,
            territory_radius_mm: territory_r,
            half_fiber_length_mm: half_len,
            endplate_center_mm: endplate_center,
            fibers,
        });
    }
    Ok(MotorUnitPool {
        units,
        total_fibers: fiber_total,
    })
}

fn instantaneous_rate(cfg: &SimConfig, excitation: f64, threshold: f64) -> f64 {
    (cfg.base_rate_hz + cfg.rate_gain_hz * (excitation - threshold).max(0.0)).min(cfg.peak_rate_hz)
}

/// Draw firing times for every motor unit under the excitation profile.
///
/// A unit fires only while the excitation is at or above its threshold. The
/// instantaneous rate rises linearly above recruitment, and each interval is
/// jittered by a clipped Gaussian with SD proportional to the mean interval.
pub fn sample_firings(
    pool: &MotorUnitPool,
    excitation: &ExcitationProfile,
    cfg: &SimConfig,
    seed: u64,
) -> Vec<SpikeTrain> {
    let fs = cfg.sample_rate_hz;
    let e = excitation.values();
    let len = e.len();
    let refractory_s = (cfg.template_len + 1) as f64 / fs;
    let mut trains = Vec::with_capacity(pool.units.len());
    for (j, unit) in pool.units.iter().enumerate() {
        let mut rng = Rng::derive(seed, 0x6669_7265 ^ ((j as u64) << 8));
        let th = unit.recruitment_threshold;
        let mut times = Vec::new();
        let mut t = match e.iter().position(|&v| v >= th) {
            Some(first) => first as f64 / fs,
            None => {
                trains.push(SpikeTrain::empty(j as u32));
                continue;
            }
        };
        // Random initial phase inside the first mean interval.
        let idx0 = ((t * fs) as usize).min(len - 1);
        t += rng.uniform() / instantaneous_rate(cfg, e[idx0], th);
        let mut last_sample: Option<usize> = None;
        loop {
            let idx = flt::round(t * fs) as usize;
            if idx >= len {
                break;
            }
            if e[idx] < th {
                // De-recruited: jump to the next active sample, fresh phase.
                match e[idx..].iter().position(|&v| v >= th) {
                    Some(off) => {
                        t = (idx + off) as f64 / fs
                            + rng.uniform() / instantaneous_rate(cfg, e[idx + off], th);
                        continue;
                    }
                    None => break,
                }
            }
            if last_sample != Some(idx) {
                times.push(idx);
                last_sample = Some(idx);
            }
            let rate = instantaneous_rate(cfg, e[idx], th);
            let mean_isi = 1.0 / rate;
            let isi = mean_isi * (1.0 + cfg.isi_cov * rng.normal().clamp(-2.0, 2.0));
            t += isi.max(refractory_s);
        }
        trains.push(SpikeTrain::new(j as u32, times).expect("monotone by construction"));
    }
    trains
}

// Tripole source: charges sum to zero, trailing offsets in mm.
const POLE_CHARGE: [f64; 3] = [0.6, -1.0, 0.4];
const POLE_OFFSET_MM: [f64; 3] = [0.0, -2.0, -5.0];

/// `1/sqrt(x)` via bit-trick seed plus Newton refinement.
///
/// The template loop evaluates this over a billion times per pool; a software
/// sqrt would dominate the whole simulation. Four refinement steps converge
/// to f64 rounding for the distance ranges involved (millimeters).
#[inline]
fn inv_sqrt(x: f64) -> f64 {
    let seed = f64::from_bits(0x5FE6_EB50_C7B5_37A9u64.wrapping_sub(x.to_bits() >> 1));
    let mut y = seed;
    y *= 1.5 - 0.5 * x * y * y;
    y *= 1.5 - 0.5 * x * y * y;
    y *= 1.5 - 0.5 * x * y * y;
    y *= 1.5 - 0.5 * x * y * y;
    y
}

/// Synthesize per-MU, per-channel action potential templates.
///
/// Every fiber contributes two tripole wavefronts that start at its endplate,
/// travel to both fiber ends and extinguish there (the poles collapse onto
/// the fiber end, cancelling). Point-source potentials fall off as `1/r`
/// through the homogeneous tissue, with the fat/skin layer acting as a fixed
/// standoff.
pub fn synth_templates(pool: &MotorUnitPool, cfg: &SimConfig) -> MuapTemplateSet {
    let rows = cfg.grid.rows;
    let cols = cfg.grid.cols;
    let n_ch = rows * cols;
    let l = cfg.template_len;
    let dt_ms = 1000.0 / cfg.sample_rate_hz;

    // Electrode coordinates: x across fibers (rows), z along fibers (cols).
    let mut ex = Vec::with_capacity(n_ch);
    let mut ez = Vec::with_capacity(n_ch);
    for r in 0..rows {
        for c in 0..cols {
            ex.push((r as f64 - (rows as f64 - 1.0) / 2.0) * cfg.electrode_pitch_mm);
            ez.push((c as f64 - (cols as f64 - 1.0) / 2.0) * cfg.electrode_pitch_mm);
        }
    }

    let mu_ids: Vec<u32> = (0..pool.units.len() as u32).collect();
    let mut set = MuapTemplateSet::zeros(mu_ids, n_ch, l);
    let mut rho_sq = vec![0.0f64; n_ch];
    for (mu_idx, unit) in pool.units.iter().enumerate() {
        let mut acc = vec![0.0f64; n_ch * l];
        for fiber in &unit.fibers {
            for ch in 0..n_ch {
                let dx = ex[ch] - fiber.x_mm;
                rho_sq[ch] = dx * dx + fiber.y_mm * fiber.y_mm;
            }
            let v_mm_ms = (cfg.conduction_velocity_m_s
                + cfg.velocity_per_um * (fiber.diameter_um - cfg.fiber_diameter_mean_um))
                .max(0.5);
            let rel = fiber.diameter_um / cfg.fiber_diameter_mean_um;
            let strength = rel * rel;
            let half = unit.half_fiber_length_mm;
            for tau in 0..l {
                let travelled = v_mm_ms * tau as f64 * dt_ms;
                if travelled + POLE_OFFSET_MM[2] > half {
                    break; // both wavefronts fully extinguished
                }
                // Pole positions for the +z and -z wavefronts; clamping onto
                // [0, half] produces generation and extinction.
                let mut pos = [0.0f64; 6];
                for (k, &off) in POLE_OFFSET_MM.iter().enumerate() {
                    let d = (travelled + off).clamp(0.0, half);
                    pos[k] = fiber.endplate_z_mm + d;
                    pos[k + 3] = fiber.endplate_z_mm - d;
                }
                for ch in 0..n_ch {
                    let mut phi = 0.0;
                    for k in 0..6 {
                        let dz = ez[ch] - pos[k];
                        phi += POLE_CHARGE[k % 3] * inv_sqrt(rho_sq[ch] + dz * dz);
                    }
                    acc[ch * l + tau] += strength * phi;
                }
            }
        }
        for ch in 0..n_ch {
            set.template_mut(mu_idx, ch)
                .copy_from_slice(&acc[ch * l..(ch + 1) * l]);
        }
    }
    set
}

/// Evaluate the convolutional mixing model and optionally add noise.
///
/// Each channel is the sum over MUs of that MU's template convolved with its
/// binary spike train. With `snr_db` set, zero-mean Gaussian noise is scaled
/// so that `10·log10(signal power / noise power)` matches the request.
pub fn render(
    templates: &MuapTemplateSet,
    trains: &[SpikeTrain],
    len: usize,
    sample_rate_hz: f64,
    grid: GridShape,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<Recording, SimError> {
    let n_ch = templates.num_channels();
    if grid.rows * grid.cols != n_ch {
        return Err(SimError::BadConfig("grid does not match template channels"));
    }
    let l = templates.template_len();
    let mut clean = vec![0.0f64; n_ch * len];
    for train in trains {
        let mu_idx = templates
            .mu_ids()
            .iter()
            .position(|&id| id == train.mu_id)
            .ok_or(SimError::UnknownMuId { mu_id: train.mu_id })?;
        if let Some(&last) = train.firing_samples().last() {
            if last >= len {
                return Err(SimError::SpikePastEnd {
                    mu_id: train.mu_id,
                    sample: last,
                });
            }
        }
        for ch in 0..n_ch {
            let tpl = templates.template(mu_idx, ch);
            let base = ch * len;
            for &t0 in train.firing_samples() {
                let span = l.min(len - t0);
                for tau in 0..span {
                    clean[base + t0 + tau] += tpl[tau];
                }
            }
        }
    }

    let mut samples: Vec<f32> = clean.iter().map(|&v| v as f32).collect();
    if let Some(snr) = snr_db {
        let p_signal = clean.iter().map(|&v| v * v).sum::<f64>() / clean.len() as f64;
        let sigma = flt::sqrt(p_signal / flt::powf(10.0, snr / 10.0));
        let mut rng = Rng::derive(seed, 0x6e6f_6973);
        for s in samples.iter_mut() {
            *s += (sigma * rng.normal()) as f32;
        }
    }
    Recording::new(samples, n_ch, sample_rate_hz, grid, vec![true; n_ch])
        .map_err(|_| SimError::BadConfig("render geometry"))
}

/// Ground truth bundle for one rendered segment.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Spike trains of active MUs (at least one firing each).
    pub trains: Vec<SpikeTrain>,
    pub templates: MuapTemplateSet,
    pub active_mu_ids: Vec<u32>,
}

/// Simulate one segment end to end from a pool built with `cfg.seed`.
///
/// `segment_seed` drives firing times and noise so repeated segments of one
/// scenario share the pool and templates. Prefer the granular calls when
/// rendering many segments from one pool.
pub fn simulate_segment(
    cfg: &SimConfig,
    excitation: &ExcitationProfile,
    snr_db: Option<f64>,
    segment_seed: u64,
) -> Result<(Recording, GroundTruth), SimError> {
    let pool = build_pool(cfg)?;
    let templates = synth_templates(&pool, cfg);
    segment_from_pool(&pool, &templates, cfg, excitation, snr_db, segment_seed)
}

/// Render one segment from an existing pool + template set.
pub fn segment_from_pool(
    pool: &MotorUnitPool,
    templates: &MuapTemplateSet,
    cfg: &SimConfig,
    excitation: &ExcitationProfile,
    snr_db: Option<f64>,
    segment_seed: u64,
) -> Result<(Recording, GroundTruth), SimError> {
    let all_trains = sample_firings(pool, excitation, cfg, segment_seed);
    let active: Vec<SpikeTrain> = all_trains.into_iter().filter(|t| !t.is_empty()).collect();
    let active_ids: Vec<u32> = active.iter().map(|t| t.mu_id).collect();
    let recording = render(
        templates,
        &active,
        excitation.len(),
        cfg.sample_rate_hz,
        cfg.grid,
        snr_db,
        segment_seed,
    )?;
    Ok((
        recording,
        GroundTruth {
            trains: active,
            templates: templates.clone(),
            active_mu_ids: active_ids,
        },
    ))
}
