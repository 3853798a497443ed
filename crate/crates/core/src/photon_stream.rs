//! Exact sampling of detector event streams.
//!
//! The ion is a two-state Markov jump process. While bright it produces
//! detected signal photons at `εR₀` and pumps dark at `R_d`; while dark it
//! pumps bright at `R_b`. Background counts arrive at `R_dc` regardless of
//! the latent state. Trials are sampled with competing exponentials (the
//! Gillespie direct method), so there is no time discretization.
//!
//! Each trial owns a ChaCha8 stream seeded from a 64-bit trial seed. Ensemble
//! trial seeds are the successive outputs of SplitMix64 started at the
//! ensemble's base seed, which makes ensembles reproducible on every platform
//! and independent of how trials are scheduled across threads.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ensure_positive, ReadoutError, Result};
use crate::rate_model::ScatteringRates;

/// Qubit state: prepared state, latent state or protocol verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QubitState {
    /// |0⟩, does not scatter detection light.
    Dark,
    /// |1⟩, cycles on the detection transition.
    Bright,
}

impl QubitState {
    pub fn flipped(self) -> Self {
        match self {
            Self::Dark => Self::Bright,
            Self::Bright => Self::Dark,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dark => "dark",
            Self::Bright => "bright",
        }
    }
}

impl fmt::Display for QubitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What produced a detector event. Only known in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventOrigin {
    Signal,
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonEvent {
    /// Seconds since the detection light was switched on.
    pub time: f64,
    pub origin: EventOrigin,
}

/// A latent-state change at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub state: QubitState,
}

/// One detection attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub prepared: QubitState,
    /// Latent state at t = 0. Differs from `prepared` only after a
    /// preparation error.
    pub initial: QubitState,
    /// Detected events, strictly increasing in time, all within `[0, horizon]`.
    pub events: Vec<PhotonEvent>,
    pub horizon: f64,
    /// Latent trajectory, strictly increasing in time and alternating in state.
    pub transitions: Vec<Transition>,
    pub seed: u64,
}

impl TrialRecord {
    /// A record built from externally measured timestamps (origin unknown,
    /// reported as background). Timestamps are sorted; duplicates and
    /// out-of-window values are rejected.
    pub fn from_timestamps(
        prepared: QubitState,
        mut times: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        ensure_positive("horizon", horizon)?;
        times.sort_by(f64::total_cmp);
        if times.iter().any(|t| !(0.0..=horizon).contains(t)) {
            return Err(ReadoutError::invalid(
                "events",
                "timestamps must lie within [0, horizon]",
            ));
        }
        if times.windows(2).any(|w| w[0] == w[1]) {
            return Err(ReadoutError::invalid(
                "events",
                "timestamps must be distinct",
            ));
        }
        Ok(Self {
            prepared,
            initial: prepared,
            events: times
                .into_iter()
                .map(|time| PhotonEvent {
                    time,
                    origin: EventOrigin::Background,
                })
                .collect(),
            horizon,
            transitions: Vec::new(),
            seed: 0,
        })
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    /// Number of events at or before `t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// Latent state at time `t`.
    pub fn latent_state_at(&self, t: f64) -> QubitState {
        let flips = self.transitions.partition_point(|tr| tr.time <= t);
        match flips {
            0 => self.initial,
            n => self.transitions[n - 1].state,
        }
    }
}

/// Detector and preparation knobs. The defaults give the ideal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerOptions {
    /// Non-paralyzable dead time, s. Events closer than this to the previous
    /// recorded event are lost.
    pub dead_time: f64,
    /// Time-tagger bin width, s. Timestamps are floored to the bin and at
    /// most one event is kept per bin.
    pub time_resolution: Option<f64>,
    /// Probability that the prepared state is flipped before detection.
    pub preparation_error: f64,
    /// Stop sampling once this many events have been recorded. The events
    /// kept are identical to the leading events of the untruncated stream.
    pub max_events: Option<usize>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            dead_time: 0.0,
            time_resolution: None,
            preparation_error: 0.0,
            max_events: None,
        }
    }
}

impl SamplerOptions {
    pub fn validate(&self) -> Result<()> {
        ensure_non_negative("dead_time", self.dead_time)?;
        if let Some(res) = self.time_resolution {
            ensure_positive("time_resolution", res)?;
        }
        if !(0.0..=1.0).contains(&self.preparation_error) {
            return Err(ReadoutError::invalid(
                "preparation_error",
                format!("must lie in [0, 1], got {}", self.preparation_error),
            ));
        }
        Ok(())
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index`: output number `index + 1` of SplitMix64 started at
/// `base_seed`.
pub fn trial_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64_mix(base_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Simulates one trial with the ideal detector.
pub fn simulate_trial(
    prepared: QubitState,
    rates: &ScatteringRates,
    horizon: f64,
    seed: u64,
) -> Result<TrialRecord> {
    simulate_trial_with(prepared, rates, horizon, seed, &SamplerOptions::default())
}

pub fn simulate_trial_with(
    prepared: QubitState,
    rates: &ScatteringRates,
    horizon: f64,
    seed: u64,
    options: &SamplerOptions,
) -> Result<TrialRecord> {
    check_inputs(rates, horizon, options)?;
    Ok(sample(prepared, rates, horizon, seed, options))
}

fn check_inputs(rates: &ScatteringRates, horizon: f64, options: &SamplerOptions) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ReadoutError::invalid(
            "horizon",
            format!("must be positive and finite, got {horizon}"),
        ));
    }
    rates.validate()?;
    options.validate()
}

fn sample(
    prepared: QubitState,
    rates: &ScatteringRates,
    horizon: f64,
    seed: u64,
    options: &SamplerOptions,
) -> TrialRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Only consume randomness for preparation when the knob is active, so the
    // ideal streams do not depend on it.
    let initial =
        if options.preparation_error > 0.0 && rng.random::<f64>() < options.preparation_error {
            prepared.flipped()
        } else {
            prepared
        };

    let mut recorder = Recorder::new(options);
    let mut transitions = Vec::new();
    let mut state = initial;
    let mut t = 0.0;
    loop {
        if recorder.full() {
            break;
        }
        let (signal, leave) = match state {
            QubitState::Bright => (rates.detected_signal, rates.rd),
            QubitState::Dark => (0.0, rates.rb),
        };
        let total = signal + leave + rates.rdc;
        if total <= 0.0 {
            break;
        }
        let wait: f64 = rng.sample(Exp1);
        t += wait / total;
        if t > horizon {
            break;
        }
        let pick = rng.random::<f64>() * total;
        if pick < signal {
            recorder.push(t, EventOrigin::Signal);
        } else if pick < signal + leave {
            state = state.flipped();
            transitions.push(Transition { time: t, state });
        } else {
            recorder.push(t, EventOrigin::Background);
        }
    }

    TrialRecord {
        prepared,
        initial,
        events: recorder.events,
        horizon,
        transitions,
        seed,
    }
}

struct Recorder<'a> {
    options: &'a SamplerOptions,
    events: Vec<PhotonEvent>,
    last_raw: f64,
}

impl<'a> Recorder<'a> {
    fn new(options: &'a SamplerOptions) -> Self {
        Self {
            options,
            events: Vec::new(),
            last_raw: f64::NEG_INFINITY,
        }
    }

    fn full(&self) -> bool {
        self.options
            .max_events
            .is_some_and(|m| self.events.len() >= m)
    }

    fn push(&mut self, t: f64, origin: EventOrigin) {
        if t - self.last_raw < self.options.dead_time {
            return;
        }
        let stamp = match self.options.time_resolution {
            Some(res) => (t / res).floor() * res,
            None => t,
        };
        if self.events.last().is_some_and(|e| stamp <= e.time) {
            return;
        }
        self.last_raw = t;
        self.events.push(PhotonEvent {
            time: stamp,
            origin,
        });
    }
}

/// `n_trials` independent ideal-detector trials.
pub fn simulate_ensemble(
    prepared: QubitState,
    rates: &ScatteringRates,
    horizon: f64,
    n_trials: usize,
    base_seed: u64,
) -> Result<Vec<TrialRecord>> {
    simulate_ensemble_with(
        prepared,
        rates,
        horizon,
        n_trials,
        base_seed,
        &SamplerOptions::default(),
    )
}

/// Trials are produced in index order whatever the size of the rayon pool.
pub fn simulate_ensemble_with(
    prepared: QubitState,
    rates: &ScatteringRates,
    horizon: f64,
    n_trials: usize,
    base_seed: u64,
    options: &SamplerOptions,
) -> Result<Vec<TrialRecord>> {
    map_ensemble(
        prepared,
        rates,
        horizon,
        n_trials,
        base_seed,
        options,
        |r| r,
    )
}

/// Simulates an ensemble and reduces each trial with `f` without keeping the
/// full records alive. Results are in trial-index order.
pub fn map_ensemble<T, F>(
    prepared: QubitState,
    rates: &ScatteringRates,
    horizon: f64,
    n_trials: usize,
    base_seed: u64,
    options: &SamplerOptions,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(TrialRecord) -> T + Sync + Send,
{
    if n_trials == 0 {
        return Err(ReadoutError::invalid("n_trials", "must be at least 1"));
    }
    check_inputs(rates, horizon, options)?;
    Ok((0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            f(sample(
                prepared,
                rates,
                horizon,
                trial_seed(base_seed, i),
                options,
            ))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit_dynamics::bright_population;
    use crate::rate_model::RateModel;

    fn rates(signal: f64, rd: f64, rb: f64, rdc: f64) -> ScatteringRates {
        ScatteringRates::from_detection_rates(signal, rd, rb, rdc).unwrap()
    }

    #[test]
    fn silent_model_gives_no_events() {
        let quiet = rates(0.0, 0.0, 0.0, 0.0);
        for state in [QubitState::Dark, QubitState::Bright] {
            let rec = simulate_trial(state, &quiet, 1.0, 7).unwrap();
            assert!(rec.events.is_empty());
            assert!(rec.transitions.is_empty());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let r = rates(1e5, 100.0, 10.0, 30.0);
        assert!(simulate_trial(QubitState::Bright, &r, 0.0, 1).is_err());
        assert!(simulate_trial(QubitState::Bright, &r, -1.0, 1).is_err());
        assert!(simulate_ensemble(QubitState::Bright, &r, 1e-4, 0, 1).is_err());
        let bad = ScatteringRates { rd: -1.0, ..r };
        assert!(simulate_trial(QubitState::Bright, &bad, 1e-4, 1).is_err());
        let opts = SamplerOptions {
            preparation_error: 2.0,
            ..Default::default()
        };
        assert!(simulate_trial_with(QubitState::Bright, &r, 1e-4, 1, &opts).is_err());
    }

    #[test]
    fn records_satisfy_invariants() {
        let r = rates(2e5, 3e3, 1e3, 5e3);
        for seed in 0..200 {
            for state in [QubitState::Dark, QubitState::Bright] {
                let rec = simulate_trial(state, &r, 5e-3, seed).unwrap();
                assert!(rec.events.windows(2).all(|w| w[0].time < w[1].time));
                assert!(rec
                    .events
                    .iter()
                    .all(|e| (0.0..=rec.horizon).contains(&e.time)));
                assert!(rec
                    .transitions
                    .windows(2)
                    .all(|w| w[0].time < w[1].time && w[0].state != w[1].state));
                if let Some(first) = rec.transitions.first() {
                    assert_ne!(first.state, rec.initial);
                }
                for e in &rec.events {
                    if e.origin == EventOrigin::Signal {
                        assert_eq!(rec.latent_state_at(e.time), QubitState::Bright);
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_same_trial() {
        let r = RateModel::default().rates_at(29.0).unwrap();
        let a = simulate_trial(QubitState::Bright, &r, 2e-4, 99).unwrap();
        let b = simulate_trial(QubitState::Bright, &r, 2e-4, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_trial(QubitState::Bright, &r, 2e-4, 100).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn singleton_ensemble_uses_derived_seed() {
        let r = RateModel::default().rates_at(29.0).unwrap();
        let ens = simulate_ensemble(QubitState::Bright, &r, 1e-4, 1, 5).unwrap();
        let single = simulate_trial(QubitState::Bright, &r, 1e-4, trial_seed(5, 0)).unwrap();
        assert_eq!(ens, vec![single]);
    }

    #[test]
    fn ensembles_are_reproducible_across_pools() {
        let r = RateModel::default().rates_at(36.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(QubitState::Bright, &r, 1e-4, 500, 11).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(1));
    }

    #[test]
    fn shorter_horizon_is_a_prefix() {
        let r = RateModel::default().rates_at(29.0).unwrap();
        for seed in 0..50 {
            let long = simulate_trial(QubitState::Bright, &r, 3e-4, seed).unwrap();
            let short = simulate_trial(QubitState::Bright, &r, 1e-4, seed).unwrap();
            let n = long.count_until(1e-4);
            assert_eq!(&long.events[..n], &short.events[..]);
        }
    }

    #[test]
    fn max_events_keeps_leading_events() {
        let r = RateModel::default().rates_at(29.0).unwrap();
        let opts = SamplerOptions {
            max_events: Some(2),
            ..Default::default()
        };
        for seed in 0..50 {
            let full = simulate_trial(QubitState::Bright, &r, 3e-4, seed).unwrap();
            let cut = simulate_trial_with(QubitState::Bright, &r, 3e-4, seed, &opts).unwrap();
            let n = full.events.len().min(2);
            assert_eq!(&full.events[..n], &cut.events[..]);
        }
    }

    #[test]
    fn dead_time_and_quantization() {
        let r = rates(1e6, 0.0, 0.0, 0.0);
        let opts = SamplerOptions {
            dead_time: 2e-6,
            ..Default::default()
        };
        let rec = simulate_trial_with(QubitState::Bright, &r, 1e-3, 3, &opts).unwrap();
        assert!(rec.events.windows(2).all(|w| w[1].time - w[0].time >= 2e-6));
        let ideal = simulate_trial(QubitState::Bright, &r, 1e-3, 3).unwrap();
        assert!(rec.events.len() < ideal.events.len());

        let res = 1e-8;
        let opts = SamplerOptions {
            time_resolution: Some(res),
            ..Default::default()
        };
        let rec = simulate_trial_with(QubitState::Bright, &r, 1e-3, 3, &opts).unwrap();
        assert!(rec.events.windows(2).all(|w| w[0].time < w[1].time));
        for e in &rec.events {
            let bins = e.time / res;
            assert!((bins - bins.round()).abs() < 1e-6);
        }
    }

    #[test]
    fn preparation_error_flips_initial_state() {
        let r = rates(1e5, 0.0, 0.0, 0.0);
        let always = SamplerOptions {
            preparation_error: 1.0,
            ..Default::default()
        };
        let rec = simulate_trial_with(QubitState::Dark, &r, 1e-4, 1, &always).unwrap();
        assert_eq!(rec.prepared, QubitState::Dark);
        assert_eq!(rec.initial, QubitState::Bright);
        assert!(!rec.events.is_empty());

        let some = SamplerOptions {
            preparation_error: 0.1,
            ..Default::default()
        };
        let flipped = map_ensemble(QubitState::Dark, &r, 1e-6, 20_000, 4, &some, |t| {
            t.initial == QubitState::Bright
        })
        .unwrap()
        .into_iter()
        .filter(|&f| f)
        .count() as f64;
        let sd = (20_000.0 * 0.1 * 0.9f64).sqrt();
        assert!((flipped - 2000.0).abs() < 4.0 * sd);
    }

    #[test]
    fn latent_fraction_tracks_population() {
        let r = rates(0.0, 400.0, 100.0, 0.0);
        let n = 20_000;
        let horizon = 10e-3;
        let grid: Vec<f64> = (1..=5).map(|i| i as f64 * 2e-3).collect();
        let states = map_ensemble(
            QubitState::Bright,
            &r,
            horizon,
            n,
            8,
            &SamplerOptions::default(),
            |rec| {
                grid.iter()
                    .map(|&t| rec.latent_state_at(t) == QubitState::Bright)
                    .collect::<Vec<_>>()
            },
        )
        .unwrap();
        for (j, &t) in grid.iter().enumerate() {
            let frac = states.iter().filter(|s| s[j]).count() as f64 / n as f64;
            let p = bright_population(t, 1.0, r.rd, r.rb).unwrap();
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((frac - p).abs() < 4.0 * sd, "t={t} frac={frac} p={p}");
        }
    }

    #[test]
    fn from_timestamps_sorts_and_validates() {
        let rec = TrialRecord::from_timestamps(QubitState::Bright, vec![3e-6, 1e-6], 1e-5).unwrap();
        assert_eq!(rec.times().collect::<Vec<_>>(), vec![1e-6, 3e-6]);
        assert!(TrialRecord::from_timestamps(QubitState::Bright, vec![2e-5], 1e-5).is_err());
        assert!(TrialRecord::from_timestamps(QubitState::Bright, vec![1e-6, 1e-6], 1e-5).is_err());
    }
}
