//! Balanced detection experiments and detection-window sweeps.
//!
//! An experiment simulates the same number of dark- and bright-prepared
//! trials, applies a decision rule and reports the mean of the two
//! conditional error rates together with the detection latency.
//!
//! Sweeps over `τ_max` reuse one ensemble simulated out to the longest
//! window: each grid point re-applies the rule to the same streams, so a
//! point at `τ` is bit-identical to a stand-alone experiment at `τ` with the
//! same seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ReadoutError, Result};
use crate::photon_stream::{map_ensemble, trial_seed, QubitState, SamplerOptions, TrialRecord};
use crate::protocols::{decide, DetectionMode, ProtocolParams};
use crate::rate_model::ScatteringRates;

/// Two-sided 1σ coverage.
pub const DEFAULT_CI_LEVEL: f64 = 0.6827;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub sampler: SamplerOptions,
    /// Coverage of the Wilson interval on `error_mean`.
    pub ci_level: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            sampler: SamplerOptions::default(),
            ci_level: DEFAULT_CI_LEVEL,
        }
    }
}

/// Aggregate over a balanced ensemble at one detection window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub tau_max: f64,
    /// Cutoff in effect at this window.
    pub tau_c: f64,
    /// `(P(bright | dark) + P(dark | bright)) / 2`.
    pub error_mean: f64,
    pub error_ci: (f64, f64),
    /// Mean decision time over all trials of both preparations, s.
    pub avg_time: f64,
    /// Worst-case decision time; always `τ_max`.
    pub worst_time: f64,
    /// Total trials, both preparations.
    pub n_trials: u64,
    pub error_dark: f64,
    pub error_bright: f64,
    pub avg_time_dark: f64,
    pub avg_time_bright: f64,
}

impl FidelityPoint {
    pub fn fidelity(&self) -> f64 {
        1.0 - self.error_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Beam intensity, mW/cm², when the rates came from a rate model.
    pub operating_point: Option<f64>,
    pub mode: DetectionMode,
    /// Cutoff requested for the sweep (each point clamps it to its window).
    pub tau_c: f64,
    /// Ordered by `tau_max`.
    pub points: Vec<FidelityPoint>,
    pub seed: u64,
    pub rates: ScatteringRates,
}

impl SweepResult {
    /// Point with the smallest mean error; the earliest one on ties.
    pub fn best_point(&self) -> Option<&FidelityPoint> {
        self.points
            .iter()
            .fold(None, |best: Option<&FidelityPoint>, p| match best {
                Some(b) if b.error_mean <= p.error_mean => Some(b),
                _ => Some(p),
            })
    }

    /// Fastest point (by mean decision time) whose error does not exceed `max_error`.
    pub fn fastest_within(&self, max_error: f64) -> Option<&FidelityPoint> {
        self.points
            .iter()
            .filter(|p| p.error_mean <= max_error)
            .min_by(|a, b| a.avg_time.total_cmp(&b.avg_time))
    }
}

/// Two-sided Wilson score interval for `errors` failures out of `trials`.
pub fn confidence_interval(errors: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(ReadoutError::invalid("trials", "must be at least 1"));
    }
    if errors > trials {
        return Err(ReadoutError::invalid(
            "errors",
            format!("{errors} exceeds {trials} trials"),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(ReadoutError::invalid(
            "level",
            format!("must lie in (0, 1), got {level}"),
        ));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if errors == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let high = if errors == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    Ok((low, high))
}

/// Uniform grid `start, start + step, …` up to and including `stop`, with
/// any `extra` points inside `(0, stop]` merged in.
pub fn window_grid(start: f64, stop: f64, step: f64, extra: &[f64]) -> Result<Vec<f64>> {
    if !(start > 0.0 && step > 0.0 && stop >= start) {
        return Err(ReadoutError::invalid(
            "grid",
            format!(
                "need 0 < start <= stop and step > 0 (start {start}, stop {stop}, step {step})"
            ),
        ));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| start + i as f64 * step).collect();
    let last = grid.last_mut().expect("n >= 0");
    if (stop - *last).abs() <= 1e-6 * step {
        *last = stop;
    } else {
        grid.push(stop);
    }
    grid.extend(extra.iter().copied().filter(|&t| t > 0.0 && t <= stop));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

struct Ensembles {
    dark: Vec<TrialRecord>,
    bright: Vec<TrialRecord>,
}

fn simulate_pair(
    rates: &ScatteringRates,
    protocol: &ProtocolParams,
    horizon: f64,
    n_per_state: usize,
    seed: u64,
    settings: &ExperimentSettings,
) -> Result<Ensembles> {
    // Decisions depend only on the leading events, so the rest is not sampled.
    let options = SamplerOptions {
        max_events: Some(protocol.events_needed()),
        ..settings.sampler
    };
    let run = |state: QubitState, tag: u64| {
        map_ensemble(
            state,
            rates,
            horizon,
            n_per_state,
            trial_seed(seed, tag),
            &options,
            |r| r,
        )
    };
    Ok(Ensembles {
        dark: run(QubitState::Dark, 0)?,
        bright: run(QubitState::Bright, 1)?,
    })
}

fn evaluate(
    ensembles: &Ensembles,
    params: &ProtocolParams,
    ci_level: f64,
) -> Result<FidelityPoint> {
    // Latency is accumulated as time saved relative to τ_max, so trials that
    // run the full window contribute exactly nothing.
    let tally = |records: &[TrialRecord], wrong: QubitState| -> Result<(u64, f64)> {
        let mut errors = 0;
        let mut saved = 0.0;
        for r in records {
            let out = decide(r, params)?;
            if out.verdict == wrong {
                errors += 1;
            }
            saved += params.tau_max - out.decision_time;
        }
        Ok((errors, saved))
    };
    let (dark_errors, dark_saved) = tally(&ensembles.dark, QubitState::Bright)?;
    let (bright_errors, bright_saved) = tally(&ensembles.bright, QubitState::Dark)?;
    let n_dark = ensembles.dark.len() as f64;
    let n_bright = ensembles.bright.len() as f64;
    let error_dark = dark_errors as f64 / n_dark;
    let error_bright = bright_errors as f64 / n_bright;
    let total = (ensembles.dark.len() + ensembles.bright.len()) as u64;
    Ok(FidelityPoint {
        tau_max: params.tau_max,
        tau_c: params.tau_c,
        error_mean: 0.5 * (error_dark + error_bright),
        error_ci: confidence_interval(dark_errors + bright_errors, total, ci_level)?,
        avg_time: params.tau_max - (dark_saved + bright_saved) / total as f64,
        worst_time: params.tau_max,
        n_trials: total,
        error_dark,
        error_bright,
        avg_time_dark: params.tau_max - dark_saved / n_dark,
        avg_time_bright: params.tau_max - bright_saved / n_bright,
    })
}

/// Balanced experiment with `n_per_state` trials per preparation, simulated
/// out to `params.tau_max`.
pub fn run_detection_experiment(
    rates: &ScatteringRates,
    params: &ProtocolParams,
    n_per_state: usize,
    seed: u64,
    settings: &ExperimentSettings,
) -> Result<FidelityPoint> {
    params.validate()?;
    let ensembles = simulate_pair(rates, params, params.tau_max, n_per_state, seed, settings)?;
    evaluate(&ensembles, params, settings.ci_level)
}

/// Error and latency versus detection window on one shared ensemble.
///
/// `protocol` supplies the mode, cutoff and threshold; its `tau_max` is
/// replaced by each grid value (and the cutoff clamped to it).
pub fn error_vs_time_curve(
    rates: &ScatteringRates,
    protocol: &ProtocolParams,
    tau_grid: &[f64],
    n_per_state: usize,
    seed: u64,
    settings: &ExperimentSettings,
) -> Result<SweepResult> {
    let Some(&horizon) = tau_grid.last() else {
        return Err(ReadoutError::invalid("tau_grid", "must not be empty"));
    };
    if tau_grid.windows(2).any(|w| !(w[0] < w[1])) || tau_grid[0] <= 0.0 {
        return Err(ReadoutError::invalid(
            "tau_grid",
            "must be positive and strictly increasing",
        ));
    }
    let template = protocol.with_tau_max(horizon);
    template.validate()?;
    let ensembles = simulate_pair(rates, &template, horizon, n_per_state, seed, settings)?;
    let points = tau_grid
        .par_iter()
        .map(|&tau| evaluate(&ensembles, &protocol.with_tau_max(tau), settings.ci_level))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        operating_point: None,
        mode: protocol.mode,
        tau_c: protocol.tau_c,
        points,
        seed,
        rates: *rates,
    })
}

/// Grid search for the window with the smallest mean error over
/// `[range.0, range.1]`; ties go to the shorter window.
pub fn optimize_tau_max(
    rates: &ScatteringRates,
    protocol: &ProtocolParams,
    range: (f64, f64),
    step: f64,
    n_per_state: usize,
    seed: u64,
    settings: &ExperimentSettings,
) -> Result<(f64, FidelityPoint)> {
    let grid = window_grid(range.0, range.1, step, &[])?;
    let sweep = error_vs_time_curve(rates, protocol, &grid, n_per_state, seed, settings)?;
    let best = *sweep.best_point().expect("grid is non-empty");
    Ok((best.tau_max, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate_model::RateModel;

    const US: f64 = 1e-6;

    fn rates29() -> ScatteringRates {
        RateModel::default().rates_at(29.0).unwrap()
    }

    #[test]
    fn wilson_boundaries_and_scale() {
        let (lo, hi) = confidence_interval(0, 1000, 0.9).unwrap();
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
        let (lo, hi) = confidence_interval(1000, 1000, 0.5).unwrap();
        assert_eq!(hi, 1.0);
        assert!(lo < 1.0);
        // independent evaluation of the Wilson formula (z = Φ⁻¹(0.84135))
        let (lo, hi) = confidence_interval(75, 50_000, DEFAULT_CI_LEVEL).unwrap();
        assert!((lo - 1.336_606_1e-3).abs() < 1e-9, "{lo}");
        assert!((hi - 1.683_334_3e-3).abs() < 1e-9, "{hi}");
        let half = (hi - lo) / 2.0;
        assert!((1e-4..=2e-4).contains(&half));
        assert!(confidence_interval(1, 0, 0.5).is_err());
        assert!(confidence_interval(3, 2, 0.5).is_err());
        assert!(confidence_interval(1, 2, 1.0).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = window_grid(1.0, 5.0, 1.0, &[2.5, 9.0, 3.0]).unwrap();
        assert_eq!(g, vec![1.0, 2.0, 2.5, 3.0, 4.0, 5.0]);
        let g = window_grid(1.0, 4.5, 1.0, &[]).unwrap();
        assert_eq!(g, vec![1.0, 2.0, 3.0, 4.0, 4.5]);
        assert!(window_grid(0.0, 1.0, 0.1, &[]).is_err());
        assert!(window_grid(2.0, 1.0, 0.1, &[]).is_err());
    }

    #[test]
    fn no_signal_means_coin_flip() {
        let silent = ScatteringRates::from_detection_rates(0.0, 0.0, 0.0, 0.0).unwrap();
        let p = ProtocolParams::first_two_photon(5.0 * US, 50.0 * US).unwrap();
        let point =
            run_detection_experiment(&silent, &p, 200, 1, &ExperimentSettings::default()).unwrap();
        assert_eq!(point.error_dark, 0.0);
        assert_eq!(point.error_bright, 1.0);
        assert_eq!(point.error_mean, 0.5);
        assert_eq!(point.avg_time, 50.0 * US);
    }

    #[test]
    fn determinism_and_dark_latency() {
        let r = rates29();
        let p = ProtocolParams::first_two_photon(r.optimal_cutoff().unwrap(), 60.0 * US).unwrap();
        let s = ExperimentSettings::default();
        let a = run_detection_experiment(&r, &p, 5000, 9, &s).unwrap();
        let b = run_detection_experiment(&r, &p, 5000, 9, &s).unwrap();
        assert_eq!(a, b);
        // dark-prepared trials only stop early when misread as bright
        assert!(a.avg_time_dark < 60.0 * US && a.error_dark > 0.0);
        let quiet = ScatteringRates {
            rdc: 0.0,
            rb: 0.0,
            ..r
        };
        let c = run_detection_experiment(&quiet, &p, 5000, 9, &s).unwrap();
        assert_eq!(c.error_dark, 0.0);
        assert_eq!(c.avg_time_dark, 60.0 * US);
        assert_eq!(a.worst_time, a.tau_max);
        assert!(a.avg_time <= a.worst_time);
        assert!(a.error_ci.0 <= a.error_mean && a.error_mean <= a.error_ci.1);
    }

    #[test]
    fn tiny_window_carries_no_information() {
        let r = rates29();
        let p = ProtocolParams::first_two_photon(0.0, 1e-9).unwrap();
        let point =
            run_detection_experiment(&r, &p, 20_000, 3, &ExperimentSettings::default()).unwrap();
        assert!((point.error_mean - 0.5).abs() < 0.01, "{point:?}");
    }

    #[test]
    fn sweep_points_equal_standalone_runs() {
        let r = rates29();
        let tc = r.optimal_cutoff().unwrap();
        let p = ProtocolParams::first_two_photon(tc, 40.0 * US).unwrap();
        let s = ExperimentSettings::default();
        let grid = window_grid(5.0 * US, 40.0 * US, 5.0 * US, &[tc]).unwrap();
        let sweep = error_vs_time_curve(&r, &p, &grid, 3000, 17, &s).unwrap();
        assert!(sweep.points.windows(2).all(|w| w[0].tau_max < w[1].tau_max));
        for point in &sweep.points {
            let alone =
                run_detection_experiment(&r, &p.with_tau_max(point.tau_max), 3000, 17, &s).unwrap();
            assert_eq!(&alone, point);
        }
        let single = error_vs_time_curve(&r, &p, &[tc], 3000, 17, &s).unwrap();
        let alone = run_detection_experiment(&r, &p.with_tau_max(tc), 3000, 17, &s).unwrap();
        assert_eq!(single.points, vec![alone]);
        assert!(error_vs_time_curve(&r, &p, &[], 10, 1, &s).is_err());
        assert!(error_vs_time_curve(&r, &p, &[2e-6, 1e-6], 10, 1, &s).is_err());
    }

    #[test]
    fn label_swap_symmetry() {
        // Swapping which preparation is "bright" swaps the conditional errors
        // but leaves their mean unchanged.
        let r = rates29();
        let p = ProtocolParams::first_photon(20.0 * US).unwrap();
        let point =
            run_detection_experiment(&r, &p, 4000, 5, &ExperimentSettings::default()).unwrap();
        let swapped = 0.5 * (point.error_bright + point.error_dark);
        assert_eq!(swapped, point.error_mean);
    }

    #[test]
    fn no_background_means_longer_is_better() {
        let r = ScatteringRates {
            rdc: 0.0,
            rb: 0.0,
            ..rates29()
        };
        let p = ProtocolParams::first_photon(10.0 * US).unwrap();
        let (best, point) = optimize_tau_max(
            &r,
            &p,
            (1.0 * US, 10.0 * US),
            1.0 * US,
            20_000,
            2,
            &ExperimentSettings::default(),
        )
        .unwrap();
        assert_eq!(best, 10.0 * US);
        assert_eq!(point.error_dark, 0.0);
    }
}
