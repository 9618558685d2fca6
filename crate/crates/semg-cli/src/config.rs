//! Flat, namespaced pipeline configuration.
//!
//! One key-value file covers every stage (`sim.*`, `filter.*`, `extend.*`,
//! `apfp.*`, `online.*`, `eval.*` plus the top-level `seed`). Command-line
//! flags override file values, unknown keys are rejected, and
//! `--dump-config` echoes the effective configuration in a form that
//! reproduces the run.

use std::collections::BTreeMap;
use std::path::Path;

use semg_core::apfp::{ApfpConfig, Contrast, FastIcaConfig, ReliabilityThresholds};
use semg_core::eval::MatchConfig;
use semg_core::online::{CurateConfig, OnlineConfig, ThresholdSelector};
use semg_core::preprocess::FilterSpec;
use semg_core::sim::SimConfig;

use crate::CliError;

/// Effective configuration of a pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub ramp_s: f64,
    pub hold_s: f64,
    /// Noise levels for the simulation grid: `None` = no added noise.
    pub noise_levels: Vec<Option<f64>>,
    pub repetitions: usize,
    pub filter: FilterSpec,
    pub extension: usize,
    pub apfp: ApfpConfig,
    pub online: OnlineConfig,
    pub curate: CurateConfig,
    pub eval: MatchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            sim: SimConfig::default(),
            ramp_s: 2.0,
            hold_s: 3.0,
            noise_levels: vec![None, Some(30.0), Some(20.0), Some(10.0)],
            repetitions: 1,
            filter: FilterSpec::default(),
            extension: 10,
            apfp: ApfpConfig::default(),
            online: OnlineConfig::default(),
            curate: CurateConfig::default(),
            eval: MatchConfig::default(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::usage(format!(
            "{key}: expected true/false, got `{v}`"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::usage(format!("{key}: cannot parse `{v}`")))
}

fn parse_noise_levels(key: &str, v: &str) -> Result<Vec<Option<f64>>, CliError> {
    v.split(',')
        .map(|s| {
            let s = s.trim();
            if s.eq_ignore_ascii_case("none") {
                Ok(None)
            } else {
                parse_num::<f64>(key, s).map(Some)
            }
        })
        .collect()
}

impl PipelineConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.sim.seed = self.seed;
                self.apfp.seed = self.seed;
            }
            "sim.n_mus" => self.sim.n_mus = parse_num(key, v)?,
            "sim.muscle_radius_mm" => self.sim.muscle_radius_mm = parse_num(key, v)?,
            "sim.fat_skin_mm" => self.sim.fat_skin_mm = parse_num(key, v)?,
            "sim.mean_total_fibers" => self.sim.mean_total_fibers = parse_num(key, v)?,
            "sim.half_fiber_len_mm" => self.sim.half_fiber_length_mean_mm = parse_num(key, v)?,
            "sim.half_fiber_len_sd_mm" => self.sim.half_fiber_length_sd_mm = parse_num(key, v)?,
            "sim.fiber_diameter_um" => self.sim.fiber_diameter_mean_um = parse_num(key, v)?,
            "sim.fiber_diameter_sd_um" => self.sim.fiber_diameter_sd_um = parse_num(key, v)?,
            "sim.intra_mu_diameter_sd_um" => self.sim.intra_mu_diameter_sd_um = parse_num(key, v)?,
            "sim.endplate_spread_mm" => self.sim.endplate_center_spread_mm = parse_num(key, v)?,
            "sim.endplate_jitter_mm" => self.sim.endplate_jitter_mm = parse_num(key, v)?,
            "sim.grid_rows" => self.sim.grid.rows = parse_num(key, v)?,
            "sim.grid_cols" => self.sim.grid.cols = parse_num(key, v)?,
            "sim.pitch_mm" => self.sim.electrode_pitch_mm = parse_num(key, v)?,
            "sim.base_rate_hz" => self.sim.base_rate_hz = parse_num(key, v)?,
            "sim.peak_rate_hz" => self.sim.peak_rate_hz = parse_num(key, v)?,
            "sim.rate_gain_hz" => self.sim.rate_gain_hz = parse_num(key, v)?,
            "sim.max_excitation" => self.sim.max_excitation = parse_num(key, v)?,
            "sim.recruited_at_max" => self.sim.recruited_at_max = parse_num(key, v)?,
            "sim.threshold_ratio" => self.sim.threshold_range_ratio = parse_num(key, v)?,
            "sim.fiber_ratio" => self.sim.fiber_count_range_ratio = parse_num(key, v)?,
            "sim.isi_cov" => self.sim.isi_cov = parse_num(key, v)?,
            "sim.sample_rate_hz" => self.sim.sample_rate_hz = parse_num(key, v)?,
            "sim.template_len" => self.sim.template_len = parse_num(key, v)?,
            "sim.conduction_velocity" => self.sim.conduction_velocity_m_s = parse_num(key, v)?,
            "sim.velocity_per_um" => self.sim.velocity_per_um = parse_num(key, v)?,
            "sim.ramp_s" => self.ramp_s = parse_num(key, v)?,
            "sim.hold_s" => self.hold_s = parse_num(key, v)?,
            "sim.noise_levels" => self.noise_levels = parse_noise_levels(key, v)?,
            "sim.repetitions" => self.repetitions = parse_num(key, v)?,
            "filter.bp_low" => self.filter.bp_low_hz = parse_num(key, v)?,
            "filter.bp_high" => self.filter.bp_high_hz = parse_num(key, v)?,
            "filter.bp_order" => self.filter.bp_order = parse_num(key, v)?,
            "filter.bp_enabled" => self.filter.bp_enabled = parse_bool(key, v)?,
            "filter.notch_hz" => self.filter.notch_hz = parse_num(key, v)?,
            "filter.notch_q" => self.filter.notch_q = parse_num(key, v)?,
            "filter.notch_enabled" => self.filter.notch_enabled = parse_bool(key, v)?,
            "extend.k" => {
                self.extension = parse_num(key, v)?;
                self.apfp.extension = self.extension;
            }
            "apfp.contrast" => {
                self.apfp.fastica.contrast = match v {
                    "logcosh" => Contrast::LogCosh,
                    "cube" => Contrast::Cube,
                    _ => {
                        return Err(CliError::usage(format!(
                            "apfp.contrast: expected logcosh|cube, got `{v}`"
                        )))
                    }
                }
            }
            "apfp.max_iter" => self.apfp.fastica.max_iterations = parse_num(key, v)?,
            "apfp.tol" => self.apfp.fastica.convergence_tol = parse_num(key, v)?,
            "apfp.max_sources" => self.apfp.fastica.max_sources_per_round = parse_num(key, v)?,
            "apfp.restarts" => self.apfp.fastica.restarts_per_source = parse_num(key, v)?,
            "apfp.max_rounds" => self.apfp.max_rounds = parse_num(key, v)?,
            "apfp.template_len" => self.apfp.template_len = parse_num(key, v)?,
            "apfp.xi_min" => self.apfp.reliability.xi_min = parse_num(key, v)?,
            "apfp.cov_amp_max" => {
                self.apfp.reliability.cov_amp_max = parse_num(key, v)?;
                self.curate.cov_amp_max = self.apfp.reliability.cov_amp_max;
            }
            "apfp.cov_isi_max" => {
                self.apfp.reliability.cov_isi_max = parse_num(key, v)?;
                self.curate.cov_isi_max = self.apfp.reliability.cov_isi_max;
            }
            "apfp.rate_min" => self.apfp.reliability.rate_min_hz = parse_num(key, v)?,
            "apfp.rate_max" => self.apfp.reliability.rate_max_hz = parse_num(key, v)?,
            "apfp.second_pass" => self.apfp.reliability.relaxed_second_pass = parse_bool(key, v)?,
            "apfp.duplicate_tol_ms" => {
                self.apfp.duplicate_tol_ms = parse_num(key, v)?;
                self.curate.duplicate_tol_ms = self.apfp.duplicate_tol_ms;
            }
            "apfp.min_candidate_spikes" => self.apfp.min_candidate_spikes = parse_num(key, v)?,
            "online.window_s" => self.online.window_s = parse_num(key, v)?,
            "online.increment_s" => self.online.increment_s = parse_num(key, v)?,
            "online.max_thresholds" => self.online.max_candidate_thresholds = parse_num(key, v)?,
            "online.min_spikes" => self.online.min_spikes_per_window = parse_num(key, v)?,
            "online.min_keep_fraction" => self.online.min_keep_fraction = parse_num(key, v)?,
            "online.cov_ceiling_factor" => self.online.cov_ceiling_factor = parse_num(key, v)?,
            "online.cov_ceiling_floor" => self.online.cov_ceiling_floor = parse_num(key, v)?,
            "online.match_tol_ms" => self.online.match_tolerance_ms = parse_num(key, v)?,
            "online.selector" => {
                self.online.selector = match v {
                    "otsu" | "multi-otsu" => ThresholdSelector::MultiOtsu,
                    "kmeans" | "k-means" => ThresholdSelector::KMeans,
                    _ => {
                        return Err(CliError::usage(format!(
                            "online.selector: expected otsu|kmeans, got `{v}`"
                        )))
                    }
                }
            }
            "online.curate_conjunctive" => self.curate.conjunctive = parse_bool(key, v)?,
            "eval.tol_ms" => {
                let ms: f64 = parse_num(key, v)?;
                self.eval.tol_samples = (ms * self.sim.sample_rate_hz / 1000.0).round() as usize;
            }
            "eval.max_lag" => self.eval.max_lag = parse_num(key, v)?,
            "eval.mr_floor" => self.eval.mr_floor = parse_num(key, v)?,
            _ => return Err(CliError::usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a config file of `key = value` lines (`#` comments).
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::usage(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    /// Serialize every effective key; reloading the dump reproduces the run.
    pub fn dump(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("seed", self.seed.to_string());
        map.insert("sim.n_mus", self.sim.n_mus.to_string());
        map.insert(
            "sim.muscle_radius_mm",
            self.sim.muscle_radius_mm.to_string(),
        );
        map.insert("sim.fat_skin_mm", self.sim.fat_skin_mm.to_string());
        map.insert(
            "sim.mean_total_fibers",
            self.sim.mean_total_fibers.to_string(),
        );
        map.insert(
            "sim.half_fiber_len_mm",
            self.sim.half_fiber_length_mean_mm.to_string(),
        );
        map.insert(
            "sim.half_fiber_len_sd_mm",
            self.sim.half_fiber_length_sd_mm.to_string(),
        );
        map.insert(
            "sim.fiber_diameter_um",
            self.sim.fiber_diameter_mean_um.to_string(),
        );
        map.insert(
            "sim.fiber_diameter_sd_um",
            self.sim.fiber_diameter_sd_um.to_string(),
        );
        map.insert(
            "sim.intra_mu_diameter_sd_um",
            self.sim.intra_mu_diameter_sd_um.to_string(),
        );
        map.insert(
            "sim.endplate_spread_mm",
            self.sim.endplate_center_spread_mm.to_string(),
        );
        map.insert(
            "sim.endplate_jitter_mm",
            self.sim.endplate_jitter_mm.to_string(),
        );
        map.insert("sim.grid_rows", self.sim.grid.rows.to_string());
        map.insert("sim.grid_cols", self.sim.grid.cols.to_string());
        map.insert("sim.pitch_mm", self.sim.electrode_pitch_mm.to_string());
        map.insert("sim.base_rate_hz", self.sim.base_rate_hz.to_string());
        map.insert("sim.peak_rate_hz", self.sim.peak_rate_hz.to_string());
        map.insert("sim.rate_gain_hz", self.sim.rate_gain_hz.to_string());
        map.insert("sim.max_excitation", self.sim.max_excitation.to_string());
        map.insert(
            "sim.recruited_at_max",
            self.sim.recruited_at_max.to_string(),
        );
        map.insert(
            "sim.threshold_ratio",
            self.sim.threshold_range_ratio.to_string(),
        );
        map.insert(
            "sim.fiber_ratio",
            self.sim.fiber_count_range_ratio.to_string(),
        );
        map.insert("sim.isi_cov", self.sim.isi_cov.to_string());
        map.insert("sim.sample_rate_hz", self.sim.sample_rate_hz.to_string());
        map.insert("sim.template_len", self.sim.template_len.to_string());
        map.insert(
            "sim.conduction_velocity",
            self.sim.conduction_velocity_m_s.to_string(),
        );
        map.insert("sim.velocity_per_um", self.sim.velocity_per_um.to_string());
        map.insert("sim.ramp_s", self.ramp_s.to_string());
        map.insert("sim.hold_s", self.hold_s.to_string());
        map.insert(
            "sim.noise_levels",
            self.noise_levels
                .iter()
                .map(|l| l.map_or("none".to_string(), |v| v.to_string()))
                .collect::<Vec<_>>()
                .join(","),
        );
        map.insert("sim.repetitions", self.repetitions.to_string());
        map.insert("filter.bp_low", self.filter.bp_low_hz.to_string());
        map.insert("filter.bp_high", self.filter.bp_high_hz.to_string());
        map.insert("filter.bp_order", self.filter.bp_order.to_string());
        map.insert("filter.bp_enabled", self.filter.bp_enabled.to_string());
        map.insert("filter.notch_hz", self.filter.notch_hz.to_string());
        map.insert("filter.notch_q", self.filter.notch_q.to_string());
        map.insert(
            "filter.notch_enabled",
            self.filter.notch_enabled.to_string(),
        );
        map.insert("extend.k", self.extension.to_string());
        map.insert(
            "apfp.contrast",
            match self.apfp.fastica.contrast {
                Contrast::LogCosh => "logcosh".to_string(),
                Contrast::Cube => "cube".to_string(),
            },
        );
        map.insert(
            "apfp.max_iter",
            self.apfp.fastica.max_iterations.to_string(),
        );
        map.insert("apfp.tol", self.apfp.fastica.convergence_tol.to_string());
        map.insert(
            "apfp.max_sources",
            self.apfp.fastica.max_sources_per_round.to_string(),
        );
        map.insert(
            "apfp.restarts",
            self.apfp.fastica.restarts_per_source.to_string(),
        );
        map.insert("apfp.max_rounds", self.apfp.max_rounds.to_string());
        map.insert("apfp.template_len", self.apfp.template_len.to_string());
        map.insert("apfp.xi_min", self.apfp.reliability.xi_min.to_string());
        map.insert(
            "apfp.cov_amp_max",
            self.apfp.reliability.cov_amp_max.to_string(),
        );
        map.insert(
            "apfp.cov_isi_max",
            self.apfp.reliability.cov_isi_max.to_string(),
        );
        map.insert(
            "apfp.rate_min",
            self.apfp.reliability.rate_min_hz.to_string(),
        );
        map.insert(
            "apfp.rate_max",
            self.apfp.reliability.rate_max_hz.to_string(),
        );
        map.insert(
            "apfp.second_pass",
            self.apfp.reliability.relaxed_second_pass.to_string(),
        );
        map.insert(
            "apfp.duplicate_tol_ms",
            self.apfp.duplicate_tol_ms.to_string(),
        );
        map.insert(
            "apfp.min_candidate_spikes",
            self.apfp.min_candidate_spikes.to_string(),
        );
        map.insert("online.window_s", self.online.window_s.to_string());
        map.insert("online.increment_s", self.online.increment_s.to_string());
        map.insert(
            "online.max_thresholds",
            self.online.max_candidate_thresholds.to_string(),
        );
        map.insert(
            "online.min_spikes",
            self.online.min_spikes_per_window.to_string(),
        );
        map.insert(
            "online.min_keep_fraction",
            self.online.min_keep_fraction.to_string(),
        );
        map.insert(
            "online.cov_ceiling_factor",
            self.online.cov_ceiling_factor.to_string(),
        );
        map.insert(
            "online.cov_ceiling_floor",
            self.online.cov_ceiling_floor.to_string(),
        );
        map.insert(
            "online.match_tol_ms",
            self.online.match_tolerance_ms.to_string(),
        );
        map.insert(
            "online.selector",
            match self.online.selector {
                ThresholdSelector::MultiOtsu => "otsu".to_string(),
                ThresholdSelector::KMeans => "kmeans".to_string(),
            },
        );
        map.insert(
            "online.curate_conjunctive",
            self.curate.conjunctive.to_string(),
        );
        map.insert(
            "eval.tol_ms",
            (self.eval.tol_samples as f64 * 1000.0 / self.sim.sample_rate_hz).to_string(),
        );
        map.insert("eval.max_lag", self.eval.max_lag.to_string());
        map.insert("eval.mr_floor", self.eval.mr_floor.to_string());

        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Simulated excitation profile for one segment under this config.
    pub fn excitation(&self) -> Result<semg_core::sim::ExcitationProfile, CliError> {
        semg_core::sim::trapezoid_excitation(
            self.sim.max_excitation,
            self.ramp_s,
            self.hold_s,
            self.sim.sample_rate_hz,
        )
        .map_err(|e| CliError::usage(format!("excitation profile: {e}")))
    }

    /// Reliability thresholds wired into the apfp config (already shared).
    pub fn reliability(&self) -> &ReliabilityThresholds {
        &self.apfp.reliability
    }

    /// FastICA knobs (already shared with apfp).
    pub fn fastica(&self) -> &FastIcaConfig {
        &self.apfp.fastica
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_dump() {
        let cfg = PipelineConfig::default();
        let dump = cfg.dump();
        let mut reparsed = PipelineConfig::default();
        for line in dump.lines() {
            let (k, v) = line.split_once('=').unwrap();
            reparsed.set(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.set("sim.bogus", "1").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn seed_propagates_to_stages() {
        let mut cfg = PipelineConfig::default();
        cfg.set("seed", "99").unwrap();
        assert_eq!(cfg.sim.seed, 99);
        assert_eq!(cfg.apfp.seed, 99);
    }

    #[test]
    fn noise_levels_parse_none_and_numbers() {
        let mut cfg = PipelineConfig::default();
        cfg.set("sim.noise_levels", "none, 30, 10").unwrap();
        assert_eq!(cfg.noise_levels, vec![None, Some(30.0), Some(10.0)]);
    }

    #[test]
    fn extension_key_reaches_apfp() {
        let mut cfg = PipelineConfig::default();
        cfg.set("extend.k", "14").unwrap();
        assert_eq!(cfg.apfp.extension, 14);
    }
}
