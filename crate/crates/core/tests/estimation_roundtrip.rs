use readout_core::estimation::CurvePoint;
use readout_core::photon_stream::{map_ensemble, trial_seed, SamplerOptions};
use readout_core::{fit_decay_curve, DecayCurve, FitOptions, QubitState, RateGuess, RateModel};

/// Mean counts at 20 windows up to 5/R_d, each from its own 10⁴-trial ensemble.
fn monte_carlo_curve(seed: u64) -> (readout_core::ScatteringRates, DecayCurve) {
    let rates = RateModel::default().rates_at(29.0).unwrap();
    let n = 10_000;
    let points = (1..=20)
        .map(|i| {
            let tau = i as f64 * 0.25 / rates.rd;
            let counts = map_ensemble(
                QubitState::Bright,
                &rates,
                tau,
                n,
                trial_seed(seed, i),
                &SamplerOptions::default(),
                |r| r.events.len() as f64,
            )
            .unwrap();
            CurvePoint {
                tau,
                mean_counts: counts.iter().sum::<f64>() / n as f64,
                n_trials: n as u64,
            }
        })
        .collect();
    (rates, DecayCurve::new(points).unwrap())
}

#[test]
fn monte_carlo_curve_recovers_rates_within_three_standard_errors() {
    for seed in [3, 4] {
        let (truth, curve) = monte_carlo_curve(seed);
        let options = FitOptions {
            background_rate: truth.rdc,
            ..FitOptions::default()
        };
        let fit =
            fit_decay_curve(&curve, &RateGuess::from_curve(&curve).unwrap(), &options).unwrap();
        let se = fit.standard_errors();
        for (name, got, want, s) in [
            ("εR₀", fit.detected_signal, truth.detected_signal, se[0]),
            ("R_d", fit.rd, truth.rd, se[1]),
            ("R_b", fit.rb, truth.rb, se[2]),
        ] {
            assert!(
                s > 0.0 && s < 0.5 * want,
                "{name}: implausible standard error {s}"
            );
            assert!(
                (got - want).abs() < 3.0 * s,
                "seed {seed} {name}: {got} vs {want} ± {s}"
            );
        }
    }
}

#[test]
fn guess_from_monte_carlo_curve_is_in_the_right_decade() {
    let (truth, curve) = monte_carlo_curve(9);
    let g = RateGuess::from_curve(&curve).unwrap();
    for (got, want) in [
        (g.detected_signal, truth.detected_signal),
        (g.rd, truth.rd),
        (g.rb, truth.rb),
    ] {
        assert!(got > want / 10.0 && got < want * 10.0, "{got} vs {want}");
    }
}
