//! Semi-analytic two-state population dynamics during detection.
//!
//! The bright manifold leaks into the dark state at `rd` and the dark state
//! leaks back at `rb`, so `ṗ₁ = rb·p₀ − rd·p₁` with `p₀ + p₁ = 1`. Everything
//! here is closed form; the Monte Carlo layer in [`crate::photon_stream`]
//! supplies exact statistics.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ReadoutError, Result};
use crate::rate_model::ScatteringRates;

/// Populations of the bright manifold and the dark state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub p1: f64,
    pub p0: f64,
}

impl PopulationState {
    pub fn from_bright(p1: f64) -> Result<Self> {
        check_probability("p1", p1)?;
        Ok(Self { p1, p0: 1.0 - p1 })
    }

    /// Population after `t` seconds of detection light.
    pub fn evolve(&self, t: f64, rd: f64, rb: f64) -> Result<Self> {
        Self::from_bright(bright_population(t, self.p1, rd, rb)?)
    }
}

fn check_probability(name: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ReadoutError::invalid(
            name,
            format!("must lie in [0, 1], got {p}"),
        ));
    }
    Ok(())
}

/// `p₁(t) = p∞ + (p₁(0) − p∞)·e^{−(rb+rd)t}` with `p∞ = rb/(rb+rd)`.
pub fn bright_population(t: f64, p1_initial: f64, rd: f64, rb: f64) -> Result<f64> {
    ensure_non_negative("t", t)?;
    check_probability("p1_initial", p1_initial)?;
    ensure_non_negative("rd", rd)?;
    ensure_non_negative("rb", rb)?;
    let k = rb + rd;
    if k == 0.0 {
        return Ok(p1_initial);
    }
    let p_inf = rb / k;
    Ok(p_inf + (p1_initial - p_inf) * (-k * t).exp())
}

/// Expected number of detected signal photons in `[0, tau]`,
/// `∫₀^τ εR₀ p₁(t) dt`.
///
/// Evaluated as `εR₀·[p₁(0)·τ·φ(kτ) + rb·τ²·ψ(kτ)]` with `k = rb + rd`,
/// `φ(x) = (1 − e^{−x})/x` and `ψ(x) = (x − 1 + e^{−x})/x²`, which is the
/// usual `p∞τ + (p₁(0) − p∞)(1 − e^{−kτ})/k` rearranged to stay finite and
/// accurate as `k → 0`.
pub fn expected_counts(
    tau: f64,
    p1_initial: f64,
    detected_signal: f64,
    rd: f64,
    rb: f64,
) -> Result<f64> {
    ensure_non_negative("tau", tau)?;
    check_probability("p1_initial", p1_initial)?;
    ensure_non_negative("detected_signal", detected_signal)?;
    ensure_non_negative("rd", rd)?;
    ensure_non_negative("rb", rb)?;
    Ok(detected_signal * count_shape(tau, p1_initial, rd, rb).value)
}

/// `n̄(τ)/εR₀` and its partial derivatives with respect to `rd` and `rb`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CountShape {
    pub value: f64,
    pub d_rd: f64,
    pub d_rb: f64,
}

pub(crate) fn count_shape(tau: f64, p1_initial: f64, rd: f64, rb: f64) -> CountShape {
    let x = (rd + rb) * tau;
    let (phi, dphi) = phi(x);
    let (psi, dpsi) = psi(x);
    let tau2 = tau * tau;
    let common = p1_initial * tau2 * dphi + rb * tau2 * tau * dpsi;
    CountShape {
        value: p1_initial * tau * phi + rb * tau2 * psi,
        d_rd: common,
        d_rb: common + tau2 * psi,
    }
}

// Below x = 1 the closed forms lose digits to cancellation; the alternating
// Taylor series converge quickly there.
const SERIES_BELOW: f64 = 1.0;

/// `φ(x) = (1 − e^{−x})/x = Σ (−x)ⁿ/(n+1)!` and `φ'(x)`.
fn phi(x: f64) -> (f64, f64) {
    if x < SERIES_BELOW {
        series(x, 1)
    } else {
        let e = (-x).exp();
        let v = -(-x).exp_m1() / x;
        (v, (e - v) / x)
    }
}

/// `ψ(x) = (x − 1 + e^{−x})/x² = Σ (−x)ⁿ/(n+2)!` and `ψ'(x)`.
fn psi(x: f64) -> (f64, f64) {
    if x < SERIES_BELOW {
        series(x, 2)
    } else {
        let (phi_v, phi_d) = phi(x);
        let v = (1.0 - phi_v) / x;
        (v, (-phi_d - v) / x)
    }
}

/// `Σₙ (−x)ⁿ/(n+shift)!` and its derivative.
fn series(x: f64, shift: u32) -> (f64, f64) {
    let mut coeff = 1.0;
    for k in 2..=shift {
        coeff /= k as f64;
    }
    let mut value = 0.0;
    let mut deriv = 0.0;
    let mut power = 1.0; // (−x)ⁿ
    let mut prev_power = 0.0; // (−x)ⁿ⁻¹
    for n in 0..64u32 {
        value += coeff * power;
        // d/dx (−x)ⁿ = −n·(−x)ⁿ⁻¹
        deriv -= coeff * n as f64 * prev_power;
        prev_power = power;
        power *= -x;
        coeff /= (n + 1 + shift) as f64;
        // |x| < 1, so the remaining terms are bounded by the coefficient
        if n > 3 && coeff * ((n + 2) as f64) < 1e-19 {
            break;
        }
    }
    (value, deriv)
}

/// First-photon likelihoods `(P₀(t), P₁(t))` under the one-photon ambiguity
/// model: a dark ion produces a first count only from background,
/// `P₀ = R_dc·t`, while a bright ion produces a lone photon and then pumps
/// dark, `P₁ = (R_d/εR₀)·(1 − e^{−εR₀t})`. Both are the leading-order forms
/// valid for `εR₀t ≫ 1`; they are only used to place the cutoff.
pub fn one_photon_likelihoods(t: f64, rates: &ScatteringRates) -> Result<(f64, f64)> {
    ensure_non_negative("t", t)?;
    let p_dark_first = rates.rdc * t;
    let p_bright_single = if rates.detected_signal > 0.0 {
        let s = rates.detected_signal;
        rates.rd / s * -(-s * t).exp_m1()
    } else {
        // limit εR₀ → 0
        rates.rd * t
    };
    Ok((p_dark_first, p_bright_single))
}

/// Time maximizing `P₁(t) − P₀(t)`: `ln(R_d/R_dc)/εR₀`, or 0 when `R_d ≤ R_dc`.
pub fn optimal_cutoff(rd: f64, rdc: f64, detected_signal: f64) -> Result<f64> {
    ensure_non_negative("detected_signal", detected_signal)?;
    ensure_non_negative("rd", rd)?;
    ensure_non_negative("rdc", rdc)?;
    if rd <= rdc {
        return Ok(0.0);
    }
    if detected_signal == 0.0 {
        return Err(ReadoutError::invalid(
            "detected_signal",
            "cutoff is unbounded without signal photons",
        ));
    }
    if rdc == 0.0 {
        return Err(ReadoutError::invalid(
            "rdc",
            "cutoff is unbounded without background counts",
        ));
    }
    Ok((rd / rdc).ln() / detected_signal)
}
