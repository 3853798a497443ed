use readout_core::experiment::window_grid;
use readout_core::{
    error_vs_time_curve, optimize_tau_max, run_detection_experiment, ExperimentSettings,
    ProtocolParams, RateModel, ScatteringRates,
};

const US: f64 = 1e-6;

#[test]
fn two_photon_rule_at_29_is_below_the_semi_analytic_bound() {
    let rates = RateModel::default().rates_at(29.0).unwrap();
    let tau_c = rates.optimal_cutoff().unwrap();
    let p = ProtocolParams::first_two_photon(tau_c, 100.0 * US).unwrap();
    let point =
        run_detection_experiment(&rates, &p, 50_000, 21, &ExperimentSettings::default()).unwrap();
    assert!(point.error_mean < 3e-3, "{point:?}");
    assert!(point.error_ci.0 <= point.error_mean && point.error_mean <= point.error_ci.1);
    assert!(point.avg_time <= point.worst_time && point.worst_time == point.tau_max);
}

#[test]
fn one_nanosecond_window_carries_no_information() {
    let rates = RateModel::default().rates_at(36.0).unwrap();
    let p = ProtocolParams::first_photon(1e-9).unwrap();
    let point =
        run_detection_experiment(&rates, &p, 20_000, 22, &ExperimentSettings::default()).unwrap();
    assert!(
        (point.error_mean - 0.5).abs() < 2e-3,
        "{}",
        point.error_mean
    );
}

#[test]
fn error_curve_has_interior_minimum_at_29() {
    let rates = RateModel::default().rates_at(29.0).unwrap();
    let tau_c = rates.optimal_cutoff().unwrap();
    let grid = window_grid(2.0 * US, 300.0 * US, 2.0 * US, &[tau_c]).unwrap();
    let p = ProtocolParams::first_two_photon(tau_c, grid[grid.len() - 1]).unwrap();
    let sweep = error_vs_time_curve(
        &rates,
        &p,
        &grid,
        30_000,
        23,
        &ExperimentSettings::default(),
    )
    .unwrap();
    let best = sweep.best_point().unwrap();
    let last = sweep.points.last().unwrap();
    assert!(best.tau_max > grid[0] && best.tau_max < last.tau_max);
    assert!(last.error_mean > best.error_mean + 3.0 * (best.error_ci.1 - best.error_ci.0));
    assert!(sweep.points.windows(2).all(|w| w[0].tau_max < w[1].tau_max));
}

#[test]
fn no_background_and_no_return_pumping_favours_the_longest_window() {
    let rates = ScatteringRates::from_detection_rates(2.0e4, 150.0, 0.0, 0.0).unwrap();
    let p = ProtocolParams::first_photon(10.0 * US).unwrap();
    let (tau, point) = optimize_tau_max(
        &rates,
        &p,
        (2.0 * US, 60.0 * US),
        2.0 * US,
        5_000,
        24,
        &ExperimentSettings::default(),
    )
    .unwrap();
    assert_eq!(tau, 60.0 * US);
    assert_eq!(point.error_dark, 0.0);
}

#[test]
fn optimum_at_36_is_in_bracket_and_stable_under_more_trials() {
    let rates = RateModel::default().rates_at(36.0).unwrap();
    let tau_c = rates.optimal_cutoff().unwrap();
    let p = ProtocolParams::first_two_photon(tau_c, 150.0 * US).unwrap();
    let s = ExperimentSettings::default();
    let (tau_a, _) =
        optimize_tau_max(&rates, &p, (1.0 * US, 150.0 * US), US, 25_000, 25, &s).unwrap();
    assert!((30.0 * US..=80.0 * US).contains(&tau_a), "{tau_a}");

    // On the doubled ensemble the first optimum must be statistically
    // indistinguishable from the new one.
    let (tau_b, best_b) =
        optimize_tau_max(&rates, &p, (1.0 * US, 150.0 * US), US, 50_000, 25, &s).unwrap();
    let at_a = run_detection_experiment(&rates, &p.with_tau_max(tau_a), 50_000, 25, &s).unwrap();
    let resolution = 2.0 * (best_b.error_ci.1 - best_b.error_ci.0);
    assert!(
        at_a.error_mean - best_b.error_mean <= resolution,
        "τ {tau_a} → {tau_b}: {} vs {}",
        at_a.error_mean,
        best_b.error_mean
    );
}
