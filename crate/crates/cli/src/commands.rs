use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use readout_core::experiment::window_grid;
use readout_core::photon_stream::{map_ensemble, simulate_ensemble_with, trial_seed};
use readout_core::rate_model::power_from_intensity;
use readout_core::{
    decide, error_vs_time_curve, fit_decay_curve, optimize_tau_max, DetectionMode, FidelityPoint,
    QubitState, RateGuess, ScatteringRates, SweepResult,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{intensity_label, RunConfig};
use crate::input::read_curve;
use crate::output::{num, write_json, Stamp, Table};

pub struct RunContext {
    pub config: RunConfig,
    pub stamp: Stamp,
}

impl RunContext {
    pub fn new(config: RunConfig) -> Result<Self> {
        let stamp = Stamp {
            config_hash: config.hash()?,
            seed: config.seed,
        };
        Ok(Self { config, stamp })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn rates(&self, intensity: f64) -> Result<ScatteringRates> {
        Ok(self.config.rate_model().rates_at(intensity)?)
    }

    fn write_meta(&self, command: &str, files: &[PathBuf], extra: Value) -> Result<()> {
        let generated_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let files: Vec<String> = files
            .iter()
            .map(|p| {
                p.file_name()
                    .map_or_else(String::new, |f| f.to_string_lossy().into_owned())
            })
            .collect();
        let meta = json!({
            "command": command,
            "config_hash": self.stamp.config_hash,
            "seed": self.stamp.seed,
            "generated_at_unix_s": generated_at,
            "files": files,
            "config": self.config,
            "details": extra,
        });
        write_json(&self.out(&format!("{command}_meta.json")), &meta)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

#[derive(Serialize)]
struct RatesRow {
    intensity_mw_cm2: f64,
    power_uw: f64,
    tau_c_s: f64,
    #[serde(flatten)]
    rates: ScatteringRates,
}

pub fn rates(ctx: &RunContext) -> Result<()> {
    let cfg = &ctx.config;
    ensure_dir(&cfg.output_dir)?;
    let model = cfg.rate_model();
    let path = ctx.out("rates.csv");
    let mut table = Table::create(
        &path,
        &ctx.stamp,
        &[
            "intensity_mw_cm2",
            "s0",
            "power_uw",
            "r0_per_s",
            "detected_signal_per_s",
            "rd_per_s",
            "rb_per_s",
            "rdc_per_s",
            "tau_c_s",
        ],
    )?;
    println!(
        "{:>10} {:>10} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10} {:>10}",
        "I[mW/cm2]",
        "s0",
        "P[uW]",
        "R0[1/s]",
        "eR0[1/s]",
        "Rd[1/s]",
        "Rb[1/s]",
        "Rdc[1/s]",
        "tau_c[us]"
    );
    let mut rows = Vec::new();
    for &i in &cfg.operating_points {
        let r = model.rates_at(i)?;
        let power = power_from_intensity(i, model.beam_waist)?;
        let tau_c = r.optimal_cutoff()?;
        println!(
            "{:>10.3} {:>10.5} {:>10.5} {:>12.5e} {:>12.5e} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            i,
            r.s0,
            power,
            r.r0,
            r.detected_signal,
            r.rd,
            r.rb,
            r.rdc,
            tau_c * 1e6
        );
        table.row(
            [
                i,
                r.s0,
                power,
                r.r0,
                r.detected_signal,
                r.rd,
                r.rb,
                r.rdc,
                tau_c,
            ]
            .map(num),
        )?;
        rows.push(RatesRow {
            intensity_mw_cm2: i,
            power_uw: power,
            tau_c_s: tau_c,
            rates: r,
        });
    }
    let path = table.finish()?;
    ctx.write_meta("rates", &[path], json!({ "operating_points": rows }))
}

pub fn simulate(ctx: &RunContext) -> Result<()> {
    let cfg = &ctx.config;
    ensure_dir(&cfg.output_dir)?;
    let sim = &cfg.simulation;
    let sampler = sim.sampler();
    let mut files = Vec::new();
    let mut details = Vec::new();
    for &intensity in &cfg.operating_points {
        let rates = ctx.rates(intensity)?;
        let params = cfg.protocol.params(&rates, cfg.protocol.tau_max_s)?;
        let label = intensity_label(intensity);
        let n = sim.n_per_state;
        // Same per-state seeds as the detection experiment, so the verdicts
        // below match `run_detection_experiment` on this seed.
        let dark = simulate_ensemble_with(
            QubitState::Dark,
            &rates,
            sim.horizon_s,
            n,
            trial_seed(cfg.seed, 0),
            &sampler,
        )?;
        let bright = simulate_ensemble_with(
            QubitState::Bright,
            &rates,
            sim.horizon_s,
            n,
            trial_seed(cfg.seed, 1),
            &sampler,
        )?;

        let mut events = Table::create(
            &ctx.out(&format!("events_I{label}.csv")),
            &ctx.stamp,
            &["trial_id", "prepared", "timestamp_s"],
        )?;
        let mut trials = Table::create(
            &ctx.out(&format!("trials_I{label}.csv")),
            &ctx.stamp,
            &[
                "trial_id",
                "prepared",
                "initial",
                "n_events",
                "verdict",
                "decision_time_s",
                "photons_used",
            ],
        )?;
        let mut errors = [0u64; 2];
        for (id, record) in dark.iter().chain(&bright).enumerate() {
            let id = id.to_string();
            for t in record.times() {
                events.row([id.as_str(), record.prepared.as_str(), &num(t)])?;
            }
            let outcome = decide(record, &params)?;
            if outcome.verdict != record.prepared {
                errors[(record.prepared == QubitState::Bright) as usize] += 1;
            }
            trials.row([
                id,
                record.prepared.as_str().to_string(),
                record.initial.as_str().to_string(),
                record.events.len().to_string(),
                outcome.verdict.as_str().to_string(),
                num(outcome.decision_time),
                outcome.photons_used.to_string(),
            ])?;
        }
        files.push(events.finish()?);
        files.push(trials.finish()?);
        let error_mean = 0.5 * (errors[0] + errors[1]) as f64 / n as f64;
        println!(
            "I = {intensity} mW/cm2: {} trials, {} at tau_max = {:.2} us: error {:.3e}",
            2 * n,
            params.mode,
            params.tau_max * 1e6,
            error_mean
        );

        let curve = if rates.rd > 0.0 {
            files.push(write_curve(ctx, &rates, &label)?);
            true
        } else {
            println!("I = {intensity} mW/cm2: no bright-to-dark pumping, count curve skipped");
            false
        };
        details.push(json!({
            "intensity_mw_cm2": intensity,
            "rates": rates,
            "protocol": params,
            "dark_errors": errors[0],
            "bright_errors": errors[1],
            "curve_written": curve,
        }));
    }
    ctx.write_meta("simulate", &files, json!({ "operating_points": details }))
}

/// Bright-prepared mean counts versus window, each window from its own ensemble.
fn write_curve(ctx: &RunContext, rates: &ScatteringRates, label: &str) -> Result<PathBuf> {
    let cfg = &ctx.config;
    let c = &cfg.curve;
    let sampler = cfg.simulation.sampler();
    let base = trial_seed(cfg.seed, 2);
    let mut table = Table::create(
        &ctx.out(&format!("curve_I{label}.csv")),
        &ctx.stamp,
        &["tau_s", "mean_counts", "n_trials"],
    )?;
    for i in 1..=c.points {
        let tau = i as f64 * c.span_over_rd / (c.points as f64 * rates.rd);
        let counts = map_ensemble(
            QubitState::Bright,
            rates,
            tau,
            c.n_per_point,
            trial_seed(base, i as u64),
            &sampler,
            |r| r.events.len() as u64,
        )?;
        let mean = counts.iter().sum::<u64>() as f64 / c.n_per_point as f64;
        table.row([num(tau), num(mean), c.n_per_point.to_string()])?;
    }
    table.finish()
}

fn point_fields(p: &FidelityPoint) -> [String; 8] {
    [
        num(p.tau_max),
        num(p.tau_c),
        num(p.error_mean),
        num(p.error_ci.0),
        num(p.error_ci.1),
        num(p.avg_time),
        num(p.worst_time),
        p.n_trials.to_string(),
    ]
}

const POINT_HEADER: [&str; 8] = [
    "tau_max_s",
    "tau_c_s",
    "error_mean",
    "ci_low",
    "ci_high",
    "avg_time_s",
    "worst_time_s",
    "n_trials",
];

fn describe(p: &FidelityPoint) -> String {
    format!(
        "tau_max {:.2} us, fidelity {:.4}% (CI {:.4}-{:.4}%), avg time {:.2} us",
        p.tau_max * 1e6,
        100.0 * p.fidelity(),
        100.0 * (1.0 - p.error_ci.1),
        100.0 * (1.0 - p.error_ci.0),
        p.avg_time * 1e6
    )
}

pub fn sweep(ctx: &RunContext) -> Result<()> {
    let cfg = &ctx.config;
    ensure_dir(&cfg.output_dir)?;
    let w = &cfg.sweep;
    let mut files = Vec::new();
    let mut details = Vec::new();
    for &intensity in &cfg.operating_points {
        let rates = ctx.rates(intensity)?;
        let mode = cfg.protocol.mode;
        let tau_c = match mode {
            DetectionMode::FirstTwoPhoton => Some(cfg.protocol.tau_c_for(&rates)?),
            _ => None,
        };
        let extra: Vec<f64> = tau_c.filter(|_| w.include_tau_c).into_iter().collect();
        let grid = window_grid(w.start_s, w.stop_s, w.step_s, &extra)?;
        let template = cfg
            .protocol
            .params(&rates, *grid.last().expect("grid is non-empty"))?;
        let mut result: SweepResult = error_vs_time_curve(
            &rates,
            &template,
            &grid,
            cfg.simulation.n_per_state,
            cfg.seed,
            &cfg.simulation.settings(),
        )?;
        result.operating_point = Some(intensity);
        let label = format!("I{}_{}", intensity_label(intensity), mode);

        let mut table = Table::create(
            &ctx.out(&format!("sweep_{label}.csv")),
            &ctx.stamp,
            &POINT_HEADER,
        )?;
        let mut by_state = Table::create(
            &ctx.out(&format!("sweep_{label}_by_state.csv")),
            &ctx.stamp,
            &[
                "tau_max_s",
                "error_dark",
                "error_bright",
                "avg_time_dark_s",
                "avg_time_bright_s",
            ],
        )?;
        for p in &result.points {
            table.row(point_fields(p))?;
            by_state.row(
                [
                    p.tau_max,
                    p.error_dark,
                    p.error_bright,
                    p.avg_time_dark,
                    p.avg_time_bright,
                ]
                .map(num),
            )?;
        }
        files.push(table.finish()?);
        files.push(by_state.finish()?);

        let best = result.best_point().expect("grid is non-empty");
        let last = result.points.last().expect("grid is non-empty");
        println!("I = {intensity} mW/cm2, {mode}:");
        if let Some(t) = tau_c {
            println!("  tau_c {:.3} us", t * 1e6);
        }
        println!("  best  {}", describe(best));
        println!("  last  {}", describe(last));
        details.push(json!({
            "intensity_mw_cm2": intensity,
            "mode": mode,
            "tau_c_s": tau_c,
            "rates": rates,
            "grid_points": grid.len(),
            "best": best,
        }));
    }
    ctx.write_meta("sweep", &files, json!({ "tables": details }))
}

pub fn optimize(ctx: &RunContext) -> Result<()> {
    let cfg = &ctx.config;
    ensure_dir(&cfg.output_dir)?;
    let o = &cfg.optimize;
    let mut header = vec!["intensity_mw_cm2", "mode"];
    header.extend(POINT_HEADER);
    let mut table = Table::create(&ctx.out("optimize.csv"), &ctx.stamp, &header)?;
    let mut details = Vec::new();
    for &intensity in &cfg.operating_points {
        let rates = ctx.rates(intensity)?;
        let template = cfg.protocol.params(&rates, o.hi_s)?;
        let (tau, point) = optimize_tau_max(
            &rates,
            &template,
            (o.lo_s, o.hi_s),
            o.step_s,
            cfg.simulation.n_per_state,
            cfg.seed,
            &cfg.simulation.settings(),
        )?;
        println!(
            "I = {intensity} mW/cm2, {}: {}",
            template.mode,
            describe(&point)
        );
        let mut row = vec![num(intensity), template.mode.to_string()];
        row.extend(point_fields(&point));
        table.row(row)?;
        details.push(json!({
            "intensity_mw_cm2": intensity,
            "tau_max_opt_s": tau,
            "point": point,
            "by_state": {
                "error_dark": point.error_dark,
                "error_bright": point.error_bright,
                "avg_time_dark_s": point.avg_time_dark,
                "avg_time_bright_s": point.avg_time_bright,
            },
        }));
    }
    let path = table.finish()?;
    ctx.write_meta("optimize", &[path], json!({ "optima": details }))
}

pub fn fit(ctx: &RunContext) -> Result<()> {
    let cfg = &ctx.config;
    let input = cfg.fit.input.as_ref().context("fit needs an input curve")?;
    let curve = read_curve(input)?;
    ensure_dir(&cfg.output_dir)?;
    let options = cfg.fit.options();
    let guess = RateGuess::from_curve(&curve)?;
    let fit = fit_decay_curve(&curve, &guess, &options)?;
    let se = fit.standard_errors();
    println!(
        "eR0 = {:.6e} +/- {:.2e} 1/s, Rd = {:.6e} +/- {:.2e} 1/s, Rb = {:.6e} +/- {:.2e} 1/s ({} iterations)",
        fit.detected_signal, se[0], fit.rd, se[1], fit.rb, se[2], fit.iterations
    );
    let report = json!({
        "config_hash": ctx.stamp.config_hash,
        "seed": ctx.stamp.seed,
        "input": input,
        "points": curve.len(),
        "weighting": options.weighting,
        "background_hz": options.background_rate,
        "p1_initial": options.p1_initial,
        "detected_signal_per_s": fit.detected_signal,
        "rd_per_s": fit.rd,
        "rb_per_s": fit.rb,
        "standard_errors": {
            "detected_signal_per_s": se[0],
            "rd_per_s": se[1],
            "rb_per_s": se[2],
        },
        "covariance": fit.covariance,
        "residual_norm": fit.residual_norm,
        "iterations": fit.iterations,
    });
    let path = ctx.out("fit_report.json");
    write_json(&path, &report)?;
    ctx.write_meta("fit", &[path], json!({ "initial_guess": guess }))
}
