//! Simulation and analysis of fluorescence state detection for hyperfine
//! trapped-ion qubits.
//!
//! The crate is layered bottom-up:
//!
//! - [`rate_model`] turns beam settings into scattering, pumping and
//!   background rates.
//! - [`qubit_dynamics`] holds the closed-form population and count curves and
//!   the first-photon cutoff time.
//! - [`photon_stream`] samples exact detector event streams for a prepared
//!   qubit state.
//! - [`protocols`] maps a recorded stream to a bright/dark verdict and a
//!   decision time.
//! - [`estimation`] recovers rates from averaged count curves.
//! - [`experiment`] runs balanced ensembles, aggregates error rates and
//!   latencies, and sweeps or optimizes the detection window.

pub mod error;
pub mod estimation;
pub mod experiment;
pub mod photon_stream;
pub mod protocols;
pub mod qubit_dynamics;
pub mod rate_model;

pub use error::{ReadoutError, Result};
pub use estimation::{
    fit_decay_curve, fit_rate_vs_power, DecayCurve, FitOptions, RateFit, RateGuess,
};
pub use experiment::{
    confidence_interval, error_vs_time_curve, optimize_tau_max, run_detection_experiment,
    ExperimentSettings, FidelityPoint, SweepResult,
};
pub use photon_stream::{
    simulate_ensemble, simulate_trial, QubitState, SamplerOptions, TrialRecord,
};
pub use protocols::{decide, DetectionMode, DetectionOutcome, ProtocolParams};
pub use qubit_dynamics::{
    bright_population, expected_counts, one_photon_likelihoods, optimal_cutoff,
};
pub use rate_model::{RateModel, ScatteringRates};
