//! Command-line front end: configuration, subcommands and file output.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime and data errors.

mod commands;
pub mod config;
pub mod input;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use readout_core::estimation::Weighting;
use readout_core::DetectionMode;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "readout",
    version,
    about = "Fluorescence state-detection simulator"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace the configured operating points (mW/cm², repeatable).
    #[arg(long, global = true)]
    intensity: Vec<f64>,
    /// Saturation intensity, mW/cm².
    #[arg(long, global = true)]
    i_sat: Option<f64>,
    #[arg(long, global = true)]
    mode: Option<DetectionMode>,
    /// Detection window, s. Also the upper end of the sweep grid.
    #[arg(long, global = true)]
    tau_max: Option<f64>,
    /// Two-photon cutoff, s.
    #[arg(long, global = true)]
    tau_c: Option<f64>,
    #[arg(long, global = true)]
    n_per_state: Option<usize>,
    #[arg(long, global = true)]
    threshold: Option<u32>,
    /// Count curve to fit (tau_s, mean_counts, n_trials).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Background rate included in the fitted curve, Hz.
    #[arg(long, global = true)]
    background: Option<f64>,
    #[arg(long, global = true, value_parser = parse_weighting)]
    weighting: Option<Weighting>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Tabulate scattering, pumping and background rates.
    Rates,
    /// Simulate photon streams for both prepared states.
    Simulate,
    /// Error versus detection window, one table per operating point.
    Sweep,
    /// Fit a count curve for the detected signal and pumping rates.
    Fit,
    /// Search the detection window with the smallest error.
    Optimize,
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    match s {
        "trials" => Ok(Weighting::Trials),
        "poisson" => Ok(Weighting::Poisson),
        "uniform" => Ok(Weighting::Uniform),
        _ => Err(format!(
            "unknown weighting '{s}' (trials, poisson, uniform)"
        )),
    }
}

impl Cli {
    /// Configuration after applying command-line overrides, validated.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if !self.intensity.is_empty() {
            c.operating_points = self.intensity.clone();
        }
        if let Some(v) = self.i_sat {
            c.model.i_sat_mw_cm2 = v;
        }
        if let Some(m) = self.mode {
            c.protocol.mode = m;
        }
        if let Some(t) = self.tau_max {
            c.protocol.tau_max_s = t;
            c.sweep.stop_s = t;
        }
        if let Some(t) = self.tau_c {
            c.protocol.tau_c_s = Some(t);
        }
        if let Some(n) = self.n_per_state {
            c.simulation.n_per_state = n;
        }
        if let Some(n) = self.threshold {
            c.protocol.threshold = n;
        }
        if let Some(p) = &self.input {
            c.fit.input = Some(p.clone());
        }
        if let Some(b) = self.background {
            c.fit.background_hz = b;
        }
        if let Some(w) = self.weighting {
            c.fit.weighting = w;
        }
        if self.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        if matches!(self.command, Command::Fit) && c.fit.input.is_none() {
            bail!("fit needs an input curve (--input or fit.input)");
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let config = match cli.resolve_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 1;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return 2;
        }
    }
    let result = commands::RunContext::new(config).and_then(|ctx| match cli.command {
        Command::Rates => commands::rates(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Optimize => commands::optimize(&ctx),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
