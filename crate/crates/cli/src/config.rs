//! Run configuration: a TOML document with units spelled out in the keys.
//!
//! Every field has a default, so an empty file (or no file) is a valid
//! configuration. Frequencies are given in MHz/GHz and converted to angular
//! rates when the rate model is built.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use readout_core::estimation::Weighting;
use readout_core::photon_stream::SamplerOptions;
use readout_core::rate_model::{angular_from_ghz, angular_from_mhz};
use readout_core::{
    DetectionMode, ExperimentSettings, FitOptions, ProtocolParams, RateModel, ScatteringRates,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed of every randomized command.
    pub seed: u64,
    /// Detection-beam intensities, mW/cm².
    pub operating_points: Vec<f64>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub protocol: ProtocolConfig,
    pub simulation: SimulationConfig,
    pub sweep: SweepConfig,
    pub optimize: OptimizeConfig,
    pub curve: CurveConfig,
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            operating_points: readout_core::rate_model::REFERENCE_INTENSITIES.to_vec(),
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            protocol: ProtocolConfig::default(),
            simulation: SimulationConfig::default(),
            sweep: SweepConfig::default(),
            optimize: OptimizeConfig::default(),
            curve: CurveConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gamma_mhz: f64,
    pub delta_hfp_ghz: f64,
    pub delta_hfs_ghz: f64,
    pub zeeman_mhz: f64,
    pub detuning_mhz: f64,
    pub epsilon: f64,
    pub i_sat_mw_cm2: f64,
    pub beam_waist_um: f64,
    pub dark_count_hz: f64,
    pub background_hz_per_uw: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let m = RateModel::default();
        Self {
            gamma_mhz: 19.6,
            delta_hfp_ghz: 2.1,
            delta_hfs_ghz: 12.6,
            zeeman_mhz: 4.8,
            detuning_mhz: 0.0,
            epsilon: m.epsilon,
            i_sat_mw_cm2: m.i_sat,
            beam_waist_um: m.beam_waist,
            dark_count_hz: m.dark_count,
            background_hz_per_uw: m.background_per_uw,
        }
    }
}

impl ModelConfig {
    pub fn rate_model(&self) -> RateModel {
        RateModel {
            gamma: angular_from_mhz(self.gamma_mhz),
            delta_hfp: angular_from_ghz(self.delta_hfp_ghz),
            delta_hfs: angular_from_ghz(self.delta_hfs_ghz),
            zeeman: angular_from_mhz(self.zeeman_mhz),
            detuning: angular_from_mhz(self.detuning_mhz),
            epsilon: self.epsilon,
            i_sat: self.i_sat_mw_cm2,
            beam_waist: self.beam_waist_um,
            dark_count: self.dark_count_hz,
            background_per_uw: self.background_hz_per_uw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: DetectionMode,
    pub tau_max_s: f64,
    /// Two-photon cutoff. Computed per operating point from the rates when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_c_s: Option<f64>,
    pub threshold: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: DetectionMode::FirstTwoPhoton,
            tau_max_s: 51.4e-6,
            tau_c_s: None,
            threshold: 2,
        }
    }
}

impl ProtocolConfig {
    pub fn tau_c_for(&self, rates: &ScatteringRates) -> Result<f64> {
        match self.tau_c_s {
            Some(t) => Ok(t),
            None => Ok(rates.optimal_cutoff()?),
        }
    }

    /// Protocol at `tau_max` for the given rates.
    pub fn params(&self, rates: &ScatteringRates, tau_max: f64) -> Result<ProtocolParams> {
        Ok(match self.mode {
            DetectionMode::Threshold => ProtocolParams::threshold(tau_max, self.threshold)?,
            DetectionMode::FirstPhoton => ProtocolParams::first_photon(tau_max)?,
            DetectionMode::FirstTwoPhoton => {
                ProtocolParams::first_two_photon(self.tau_c_for(rates)?.min(tau_max), tau_max)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_per_state: usize,
    pub horizon_s: f64,
    pub dead_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_resolution_s: Option<f64>,
    pub preparation_error: f64,
    pub ci_level: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_per_state: 50_000,
            horizon_s: 200e-6,
            dead_time_s: 0.0,
            time_resolution_s: None,
            preparation_error: 0.0,
            ci_level: readout_core::experiment::DEFAULT_CI_LEVEL,
        }
    }
}

impl SimulationConfig {
    pub fn sampler(&self) -> SamplerOptions {
        SamplerOptions {
            dead_time: self.dead_time_s,
            time_resolution: self.time_resolution_s,
            preparation_error: self.preparation_error,
            max_events: None,
        }
    }

    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            sampler: self.sampler(),
            ci_level: self.ci_level,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub start_s: f64,
    pub stop_s: f64,
    pub step_s: f64,
    /// Adds the cutoff to the grid so the bend at `τ_c` is resolved.
    pub include_tau_c: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            start_s: 1e-6,
            stop_s: 300e-6,
            step_s: 1e-6,
            include_tau_c: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub lo_s: f64,
    pub hi_s: f64,
    pub step_s: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            lo_s: 1e-6,
            hi_s: 300e-6,
            step_s: 1e-6,
        }
    }
}

/// Bright-prepared count curve written by `simulate`: `points` windows
/// evenly spaced up to `span_over_rd / R_d`, each from its own ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub points: usize,
    pub span_over_rd: f64,
    pub n_per_point: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            points: 20,
            span_over_rd: 5.0,
            n_per_point: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Background included in the curve, Hz.
    pub background_hz: f64,
    pub weighting: Weighting,
    pub p1_initial: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            input: None,
            background_hz: o.background_rate,
            weighting: o.weighting,
            p1_initial: o.p1_initial,
            max_iterations: o.max_iterations,
            tolerance: o.tolerance,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            weighting: self.weighting,
            p1_initial: self.p1_initial,
            background_rate: self.background_hz,
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if !ok {
        bail!("invalid config: {what}");
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical serialization, hex encoded. The output
    /// directory does not take part, so the same run written to two places
    /// carries the same hash.
    pub fn hash(&self) -> Result<String> {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        Ok(hex::encode(Sha256::digest(canonical.to_toml()?.as_bytes())))
    }

    pub fn rate_model(&self) -> RateModel {
        self.model.rate_model()
    }

    pub fn validate(&self) -> Result<()> {
        self.rate_model().validate()?;
        check(
            !self.operating_points.is_empty(),
            "operating_points must not be empty",
        )?;
        for &i in &self.operating_points {
            check(
                i.is_finite() && i >= 0.0,
                "operating points must be finite and nonnegative",
            )?;
        }
        let p = &self.protocol;
        check(
            p.tau_max_s.is_finite() && p.tau_max_s > 0.0,
            "protocol.tau_max_s must be positive",
        )?;
        if let Some(t) = p.tau_c_s {
            check(
                t.is_finite() && (0.0..=p.tau_max_s).contains(&t),
                "protocol.tau_c_s must lie in [0, tau_max_s]",
            )?;
        }
        check(p.threshold >= 1, "protocol.threshold must be at least 1")?;
        let s = &self.simulation;
        check(
            s.n_per_state >= 1,
            "simulation.n_per_state must be at least 1",
        )?;
        check(
            s.horizon_s.is_finite() && s.horizon_s > 0.0,
            "simulation.horizon_s must be positive",
        )?;
        check(
            p.tau_max_s <= s.horizon_s,
            "protocol.tau_max_s must not exceed simulation.horizon_s",
        )?;
        check(
            s.ci_level > 0.0 && s.ci_level < 1.0,
            "simulation.ci_level must lie in (0, 1)",
        )?;
        s.sampler().validate()?;
        let w = &self.sweep;
        check(
            w.start_s > 0.0 && w.step_s > 0.0 && w.stop_s >= w.start_s && w.stop_s.is_finite(),
            "sweep needs 0 < start_s <= stop_s and step_s > 0",
        )?;
        let o = &self.optimize;
        check(
            o.lo_s > 0.0 && o.step_s > 0.0 && o.hi_s >= o.lo_s && o.hi_s.is_finite(),
            "optimize needs 0 < lo_s <= hi_s and step_s > 0",
        )?;
        let c = &self.curve;
        check(c.points >= 4, "curve.points must be at least 4")?;
        check(
            c.span_over_rd > 0.0 && c.span_over_rd.is_finite(),
            "curve.span_over_rd must be positive",
        )?;
        check(c.n_per_point >= 1, "curve.n_per_point must be at least 1")?;
        let f = &self.fit;
        check(
            f.background_hz >= 0.0 && f.background_hz.is_finite(),
            "fit.background_hz must be nonnegative",
        )?;
        check(
            (0.0..=1.0).contains(&f.p1_initial),
            "fit.p1_initial must lie in [0, 1]",
        )?;
        check(
            f.max_iterations >= 1,
            "fit.max_iterations must be at least 1",
        )?;
        check(f.tolerance > 0.0, "fit.tolerance must be positive")?;
        Ok(())
    }
}

/// Intensity as used in file names: `29` or `8p5`.
pub fn intensity_label(intensity: f64) -> String {
    if intensity.fract() == 0.0 {
        format!("{}", intensity as u64)
    } else {
        format!("{intensity}").replace('.', "p")
    }
}
