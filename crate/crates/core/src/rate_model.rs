//! Operational rates of the detection cycle.
//!
//! Converts detection-beam settings into the bright-state scattering rate, the
//! two off-resonant pumping rates between the qubit manifolds and the
//! background event rate seen by the photon counter.
//!
//! Angular frequencies are stored in rad/s. Every rate returned here is in
//! events per second.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, ReadoutError, Result};

const PLANCK: f64 = 6.626_070_15e-34;
const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wavelength of the S1/2 - P1/2 detection transition in Yb+.
pub const DETECTION_WAVELENGTH_M: f64 = 369.5e-9;

/// Intensities used for the reference fidelity curves, mW/cm².
pub const REFERENCE_INTENSITIES: [f64; 3] = [8.0, 29.0, 36.0];

/// Converts a frequency in MHz to an angular frequency in rad/s.
pub fn angular_from_mhz(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Converts a frequency in GHz to an angular frequency in rad/s.
pub fn angular_from_ghz(ghz: f64) -> f64 {
    2.0 * PI * ghz * 1e9
}

/// Two-level saturation intensity `π h c Γ / (3 λ³)`, in mW/cm².
pub fn two_level_saturation_intensity(gamma: f64, wavelength_m: f64) -> f64 {
    let w_per_m2 = PI * PLANCK * SPEED_OF_LIGHT * gamma / (3.0 * wavelength_m.powi(3));
    // 1 W/m² = 0.1 mW/cm²
    w_per_m2 * 0.1
}

/// Physical constants and beam settings for one ion/detector setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    /// P1/2 natural linewidth Γ, rad/s.
    pub gamma: f64,
    /// P1/2 hyperfine splitting, rad/s.
    pub delta_hfp: f64,
    /// S1/2 hyperfine splitting, rad/s.
    pub delta_hfs: f64,
    /// Zeeman splitting, rad/s. Carried for bookkeeping only: the scattering
    /// rate below already assumes optimal dark-state destabilization.
    pub zeeman: f64,
    /// Detection-beam detuning from the cycling transition, rad/s.
    pub detuning: f64,
    /// Overall photon detection efficiency, in (0, 1].
    pub epsilon: f64,
    /// Saturation intensity, mW/cm².
    pub i_sat: f64,
    /// Detection-beam waist, µm.
    pub beam_waist: f64,
    /// Detector dark-count floor, Hz.
    pub dark_count: f64,
    /// Beam-power-proportional background, Hz per µW.
    pub background_per_uw: f64,
}

impl Default for RateModel {
    fn default() -> Self {
        let gamma = angular_from_mhz(19.6);
        Self {
            gamma,
            delta_hfp: angular_from_ghz(2.1),
            delta_hfs: angular_from_ghz(12.6),
            zeeman: angular_from_mhz(4.8),
            detuning: 0.0,
            epsilon: 0.022,
            i_sat: two_level_saturation_intensity(gamma, DETECTION_WAVELENGTH_M),
            beam_waist: 41.0,
            dark_count: 6.5,
            background_per_uw: 35.0,
        }
    }
}

impl RateModel {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("gamma", self.gamma)?;
        ensure_positive("delta_hfp", self.delta_hfp)?;
        ensure_positive("delta_hfs", self.delta_hfs)?;
        ensure_positive("i_sat", self.i_sat)?;
        ensure_positive("beam_waist", self.beam_waist)?;
        ensure_non_negative("dark_count", self.dark_count)?;
        ensure_non_negative("background_per_uw", self.background_per_uw)?;
        if !self.detuning.is_finite() {
            return Err(ReadoutError::invalid("detuning", "must be finite"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(ReadoutError::invalid(
                "epsilon",
                format!("must lie in (0, 1], got {}", self.epsilon),
            ));
        }
        Ok(())
    }

    /// Rates at the given beam intensity (mW/cm²).
    pub fn rates_at(&self, intensity: f64) -> Result<ScatteringRates> {
        rates_for_operating_point(self, intensity)
    }

    /// Beam intensity (mW/cm²) at which the detected signal rate `ε R₀`
    /// equals `detected_signal`. Inverts the scattering-rate saturation curve.
    pub fn intensity_for_detected_signal(&self, detected_signal: f64) -> Result<f64> {
        self.validate()?;
        ensure_non_negative("detected_signal", detected_signal)?;
        let r0 = detected_signal / self.epsilon;
        let ceiling = self.gamma / 4.0;
        if r0 >= ceiling {
            return Err(ReadoutError::invalid(
                "detected_signal",
                format!(
                    "{detected_signal:e} /s is above the saturated limit {:e} /s",
                    self.epsilon * ceiling
                ),
            ));
        }
        let detuning_term = (2.0 * self.detuning / self.gamma).powi(2);
        let s0 = r0 * (1.0 + detuning_term) / (self.gamma / 6.0 - 2.0 / 3.0 * r0);
        Ok(s0 * self.i_sat)
    }
}

/// Derived rates at one operating point, all in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringRates {
    /// On-resonance saturation parameter s₀.
    pub s0: f64,
    /// Bright-state scattering rate R₀.
    pub r0: f64,
    /// Detected signal rate ε R₀.
    pub detected_signal: f64,
    /// Bright → dark pumping rate R_d.
    pub rd: f64,
    /// Dark → bright pumping rate R_b.
    pub rb: f64,
    /// Background plus dark-count rate R_dc.
    pub rdc: f64,
}

impl ScatteringRates {
    /// Rates specified directly at the detector, without an underlying drive.
    ///
    /// `s0` is reported as 0 and `r0` equals `detected_signal` (unit efficiency).
    pub fn from_detection_rates(detected_signal: f64, rd: f64, rb: f64, rdc: f64) -> Result<Self> {
        let rates = Self {
            s0: 0.0,
            r0: detected_signal,
            detected_signal,
            rd,
            rb,
            rdc,
        };
        rates.validate()?;
        Ok(rates)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("s0", self.s0)?;
        ensure_non_negative("r0", self.r0)?;
        ensure_non_negative("detected_signal", self.detected_signal)?;
        ensure_non_negative("rd", self.rd)?;
        ensure_non_negative("rb", self.rb)?;
        ensure_non_negative("rdc", self.rdc)?;
        if !(self.detected_signal.is_finite()
            && self.rd.is_finite()
            && self.rb.is_finite()
            && self.rdc.is_finite())
        {
            return Err(ReadoutError::invalid("rates", "must be finite"));
        }
        Ok(())
    }

    /// Cutoff time before which a lone first photon points to the bright state.
    pub fn optimal_cutoff(&self) -> Result<f64> {
        crate::qubit_dynamics::optimal_cutoff(self.rd, self.rdc, self.detected_signal)
    }
}

/// `s₀ = I / I_sat`.
pub fn saturation_from_intensity(intensity: f64, i_sat: f64) -> Result<f64> {
    ensure_positive("i_sat", i_sat)?;
    ensure_non_negative("intensity", intensity)?;
    Ok(intensity / i_sat)
}

/// Bright-state scattering rate with optimally destabilized coherent dark
/// states: `(Γ/6) s₀ / (1 + 2s₀/3 + (2Δ/Γ)²)`.
pub fn bright_scattering_rate(s0: f64, detuning: f64, gamma: f64) -> Result<f64> {
    ensure_non_negative("s0", s0)?;
    let d = 2.0 * detuning / gamma;
    Ok((gamma / 6.0) * s0 / (1.0 + 2.0 / 3.0 * s0 + d * d))
}

/// Off-resonant pumping out of the bright manifold into the dark state.
///
/// 2/3 accounts for the one coherent dark state among the three F=1 levels,
/// 1/3 is the branching ratio of P1/2 F=1 into the dark state.
pub fn dark_pumping_rate(s0: f64, gamma: f64, delta_hfp: f64) -> Result<f64> {
    ensure_non_negative("s0", s0)?;
    let detuning_factor = (gamma / (2.0 * delta_hfp)).powi(2);
    Ok((2.0 / 3.0) * (1.0 / 3.0) * (gamma / 2.0) * s0 * detuning_factor)
}

/// Off-resonant pumping out of the dark state into the bright manifold.
pub fn bright_pumping_rate(s0: f64, gamma: f64, delta_hfp: f64, delta_hfs: f64) -> Result<f64> {
    ensure_non_negative("s0", s0)?;
    let detuning_factor = (gamma / (2.0 * (delta_hfp + delta_hfs))).powi(2);
    Ok((2.0 / 3.0) * (gamma / 2.0) * s0 * detuning_factor)
}

/// Power (µW) carried by a Gaussian beam of the given peak intensity
/// (mW/cm²) and waist (µm): `P = I π w² / 2`.
pub fn power_from_intensity(intensity: f64, waist_um: f64) -> Result<f64> {
    ensure_non_negative("intensity", intensity)?;
    ensure_positive("waist", waist_um)?;
    let waist_cm = waist_um * 1e-4;
    let milliwatts = intensity * PI * waist_cm * waist_cm / 2.0;
    Ok(milliwatts * 1e3)
}

/// Detector background `dark_count + background_per_uw × power`.
pub fn background_rate(power_uw: f64, dark_count: f64, background_per_uw: f64) -> Result<f64> {
    ensure_non_negative("power", power_uw)?;
    Ok(dark_count + background_per_uw * power_uw)
}

pub fn rates_for_operating_point(model: &RateModel, intensity: f64) -> Result<ScatteringRates> {
    model.validate()?;
    let s0 = saturation_from_intensity(intensity, model.i_sat)?;
    let r0 = bright_scattering_rate(s0, model.detuning, model.gamma)?;
    let rd = dark_pumping_rate(s0, model.gamma, model.delta_hfp)?;
    let rb = bright_pumping_rate(s0, model.gamma, model.delta_hfp, model.delta_hfs)?;
    let power = power_from_intensity(intensity, model.beam_waist)?;
    let rdc = background_rate(power, model.dark_count, model.background_per_uw)?;
    Ok(ScatteringRates {
        s0,
        r0,
        detected_signal: model.epsilon * r0,
        rd,
        rb,
        rdc,
    })
}
