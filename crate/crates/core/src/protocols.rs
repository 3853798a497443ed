//! Decision rules mapping a recorded event stream to a verdict.
//!
//! All three rules only look at events with `t ≤ τ_max`, and a dark verdict
//! is always issued at `τ_max`. The rules are written as offline functions
//! over a finished record, but every decision time is a stopping time, so a
//! streaming evaluation would reach identical outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ReadoutError, Result};
use crate::photon_stream::{QubitState, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectionMode {
    /// Count events in `[0, τ_max]` and compare with a threshold.
    Threshold,
    /// Bright on the first event.
    FirstPhoton,
    /// Bright on a first event before `τ_c`, otherwise on a second event.
    FirstTwoPhoton,
}

impl DetectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Threshold => "threshold",
            Self::FirstPhoton => "first-photon",
            Self::FirstTwoPhoton => "first-two-photon",
        }
    }
}

impl fmt::Display for DetectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectionMode {
    type Err = ReadoutError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(Self::Threshold),
            "first-photon" => Ok(Self::FirstPhoton),
            "first-two-photon" => Ok(Self::FirstTwoPhoton),
            other => Err(ReadoutError::invalid(
                "mode",
                format!("unknown detection mode `{other}` (threshold | first-photon | first-two-photon)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub mode: DetectionMode,
    /// Maximum detection window, s.
    pub tau_max: f64,
    /// Cutoff for a lone first photon, s. Used by `FirstTwoPhoton` only.
    pub tau_c: f64,
    /// Bright iff at least this many events fall in the window. Used by
    /// `Threshold` only.
    pub threshold: u32,
}

impl ProtocolParams {
    pub fn threshold(tau_max: f64, threshold: u32) -> Result<Self> {
        Self {
            mode: DetectionMode::Threshold,
            tau_max,
            tau_c: 0.0,
            threshold,
        }
        .validated()
    }

    pub fn first_photon(tau_max: f64) -> Result<Self> {
        Self {
            mode: DetectionMode::FirstPhoton,
            tau_max,
            tau_c: tau_max,
            threshold: 1,
        }
        .validated()
    }

    pub fn first_two_photon(tau_c: f64, tau_max: f64) -> Result<Self> {
        Self {
            mode: DetectionMode::FirstTwoPhoton,
            tau_max,
            tau_c,
            threshold: 2,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            return Err(ReadoutError::invalid(
                "tau_max",
                format!("must be positive, got {}", self.tau_max),
            ));
        }
        if self.mode == DetectionMode::FirstTwoPhoton && !(0.0..=self.tau_max).contains(&self.tau_c)
        {
            return Err(ReadoutError::invalid(
                "tau_c",
                format!(
                    "must lie in [0, tau_max = {}], got {}",
                    self.tau_max, self.tau_c
                ),
            ));
        }
        if self.mode == DetectionMode::Threshold && self.threshold < 1 {
            return Err(ReadoutError::invalid("threshold", "must be at least 1"));
        }
        Ok(())
    }

    /// The same rule with a different window. `τ_c` is clamped to the new
    /// window, which is how the sweep evaluates windows shorter than `τ_c`.
    pub fn with_tau_max(&self, tau_max: f64) -> Self {
        let tau_c = match self.mode {
            DetectionMode::FirstPhoton => tau_max,
            DetectionMode::FirstTwoPhoton => self.tau_c.min(tau_max),
            DetectionMode::Threshold => self.tau_c,
        };
        Self {
            tau_max,
            tau_c,
            ..*self
        }
    }

    /// Number of leading events any decision of this rule can depend on.
    pub fn events_needed(&self) -> usize {
        match self.mode {
            DetectionMode::FirstPhoton => 1,
            DetectionMode::FirstTwoPhoton => 2,
            DetectionMode::Threshold => self.threshold as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub verdict: QubitState,
    /// Time at which the verdict became available, s.
    pub decision_time: f64,
    /// Events examined to reach the verdict.
    pub photons_used: usize,
}

impl DetectionOutcome {
    fn bright(at: f64, photons_used: usize) -> Self {
        Self {
            verdict: QubitState::Bright,
            decision_time: at,
            photons_used,
        }
    }

    fn dark(tau_max: f64, photons_used: usize) -> Self {
        Self {
            verdict: QubitState::Dark,
            decision_time: tau_max,
            photons_used,
        }
    }
}

fn check(record: &TrialRecord, params: &ProtocolParams, expected: DetectionMode) -> Result<()> {
    if params.mode != expected {
        return Err(ReadoutError::invalid(
            "mode",
            format!("expected {expected} parameters, got {}", params.mode),
        ));
    }
    params.validate()?;
    if record.horizon < params.tau_max {
        return Err(ReadoutError::InsufficientData {
            horizon: record.horizon,
            tau_max: params.tau_max,
        });
    }
    Ok(())
}

fn in_window(record: &TrialRecord, tau_max: f64) -> impl Iterator<Item = f64> + '_ {
    record.times().take_while(move |&t| t <= tau_max)
}

pub fn decide_threshold(record: &TrialRecord, params: &ProtocolParams) -> Result<DetectionOutcome> {
    check(record, params, DetectionMode::Threshold)?;
    let count = record.count_until(params.tau_max);
    Ok(if count >= params.threshold as usize {
        DetectionOutcome::bright(params.tau_max, count)
    } else {
        DetectionOutcome::dark(params.tau_max, count)
    })
}

pub fn decide_first_photon(
    record: &TrialRecord,
    params: &ProtocolParams,
) -> Result<DetectionOutcome> {
    check(record, params, DetectionMode::FirstPhoton)?;
    Ok(match in_window(record, params.tau_max).next() {
        Some(t1) => DetectionOutcome::bright(t1, 1),
        None => DetectionOutcome::dark(params.tau_max, 0),
    })
}

/// A first event strictly before `τ_c` decides bright at once; a later first
/// event needs a second one inside the window.
pub fn decide_first_two_photon(
    record: &TrialRecord,
    params: &ProtocolParams,
) -> Result<DetectionOutcome> {
    check(record, params, DetectionMode::FirstTwoPhoton)?;
    let mut window = in_window(record, params.tau_max);
    Ok(match (window.next(), window.next()) {
        (Some(t1), _) if t1 < params.tau_c => DetectionOutcome::bright(t1, 1),
        (Some(_), Some(t2)) => DetectionOutcome::bright(t2, 2),
        (Some(_), None) => DetectionOutcome::dark(params.tau_max, 1),
        (None, _) => DetectionOutcome::dark(params.tau_max, 0),
    })
}

/// Dispatches on `params.mode`.
pub fn decide(record: &TrialRecord, params: &ProtocolParams) -> Result<DetectionOutcome> {
    match params.mode {
        DetectionMode::Threshold => decide_threshold(record, params),
        DetectionMode::FirstPhoton => decide_first_photon(record, params),
        DetectionMode::FirstTwoPhoton => decide_first_two_photon(record, params),
    }
}
