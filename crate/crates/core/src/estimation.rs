//! Rate recovery from averaged count data.
//!
//! [`fit_decay_curve`] fits `n̄(τ) = ∫₀^τ εR₀ p₁(t) dt` to the mean number of
//! counts seen by a bright-prepared ion in windows of increasing length, which
//! pins down `εR₀` (initial slope), `R_d + R_b` (bend) and `R_b` (late slope).
//! [`fit_rate_vs_power`] then relates fitted pumping rates to the beam drive.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_non_negative, ReadoutError, Result};
use crate::qubit_dynamics::count_shape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Window length, s.
    pub tau: f64,
    /// Mean detected counts in the window.
    pub mean_counts: f64,
    /// Number of trials averaged.
    pub n_trials: u64,
}

/// Mean counts versus window length for a bright-prepared ion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    points: Vec<CurvePoint>,
}

impl DecayCurve {
    pub fn new(points: Vec<CurvePoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[0].tau < w[1].tau)) {
            return Err(ReadoutError::invalid(
                "tau",
                "window lengths must be strictly increasing",
            ));
        }
        for p in &points {
            ensure_non_negative("tau", p.tau)?;
            ensure_non_negative("mean_counts", p.mean_counts)?;
            if p.n_trials == 0 {
                return Err(ReadoutError::invalid(
                    "n_trials",
                    "every point needs at least one trial",
                ));
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Starting point for the curve fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateGuess {
    pub detected_signal: f64,
    pub rd: f64,
    pub rb: f64,
}

impl RateGuess {
    /// Heuristic guess read off the curve: initial slope for `εR₀`, final
    /// slope for the steady-state bright fraction, and the offset of the
    /// asymptote for the relaxation rate.
    pub fn from_curve(curve: &DecayCurve) -> Result<Self> {
        let pts = curve.points();
        let first = pts
            .iter()
            .find(|p| p.tau > 0.0 && p.mean_counts > 0.0)
            .ok_or_else(|| ReadoutError::DegenerateData("curve has no positive counts".into()))?;
        let signal = first.mean_counts / first.tau;
        let n = pts.len();
        let (a, b) = (pts[n.saturating_sub(2)], pts[n - 1]);
        let late_slope = if b.tau > a.tau {
            ((b.mean_counts - a.mean_counts) / (b.tau - a.tau)).max(0.0)
        } else {
            0.0
        };
        let p_inf = (late_slope / signal).clamp(0.0, 0.95);
        let offset = b.mean_counts - signal * p_inf * b.tau;
        let k = if offset > 0.0 {
            (signal * (1.0 - p_inf) / offset).max(1.0 / b.tau.max(f64::MIN_POSITIVE) * 0.1)
        } else {
            10.0 / b.tau.max(f64::MIN_POSITIVE)
        };
        Ok(Self {
            detected_signal: signal,
            rd: k * (1.0 - p_inf),
            rb: k * p_inf,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Weight each point by its trial count.
    Trials,
    /// Inverse Poisson variance of the mean, `n / max(ȳ, 1)`.
    Poisson,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Converged when the relative cost decrease or every relative parameter
    /// step falls below this.
    pub tolerance: f64,
    pub weighting: Weighting,
    /// Bright population at τ = 0.
    pub p1_initial: f64,
    /// Known background rate included in the data, 1/s. Subtracted as
    /// `rdc·τ` before fitting.
    pub background_rate: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-12,
            weighting: Weighting::Trials,
            p1_initial: 1.0,
            background_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub detected_signal: f64,
    pub rd: f64,
    pub rb: f64,
    /// Root of the weighted sum of squared residuals, relative to the root of
    /// the weighted sum of squared data.
    pub residual_norm: f64,
    /// Linearized covariance of `(εR₀, R_d, R_b)`, scaled by the residual
    /// variance per degree of freedom.
    pub covariance: [[f64; 3]; 3],
    pub iterations: usize,
}

impl RateFit {
    /// Standard errors of `(εR₀, R_d, R_b)`.
    pub fn standard_errors(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.covariance[i][i].max(0.0).sqrt())
    }
}

struct Problem<'a> {
    taus: Vec<f64>,
    targets: Vec<f64>,
    sqrt_w: Vec<f64>,
    options: &'a FitOptions,
}

impl Problem<'_> {
    fn residuals_and_jacobian(&self, p: &Vector3<f64>) -> (Vec<f64>, Vec<[f64; 3]>) {
        let mut r = Vec::with_capacity(self.taus.len());
        let mut j = Vec::with_capacity(self.taus.len());
        for ((&tau, &y), &w) in self.taus.iter().zip(&self.targets).zip(&self.sqrt_w) {
            let shape = count_shape(tau, self.options.p1_initial, p[1], p[2]);
            r.push(w * (p[0] * shape.value - y));
            j.push([
                w * shape.value,
                w * p[0] * shape.d_rd,
                w * p[0] * shape.d_rb,
            ]);
        }
        (r, j)
    }

    fn cost(&self, p: &Vector3<f64>) -> f64 {
        self.taus
            .iter()
            .zip(&self.targets)
            .zip(&self.sqrt_w)
            .map(|((&tau, &y), &w)| {
                let r =
                    w * (p[0] * count_shape(tau, self.options.p1_initial, p[1], p[2]).value - y);
                r * r
            })
            .sum()
    }
}

/// Nonnegative least-squares fit of the expected-count curve.
///
/// Levenberg-Marquardt with Marquardt's diagonal scaling. Parameters sitting
/// on the zero bound whose gradient points outward are frozen for the step,
/// and trial points are projected back onto the nonnegative orthant.
pub fn fit_decay_curve(
    curve: &DecayCurve,
    guess: &RateGuess,
    options: &FitOptions,
) -> Result<RateFit> {
    let pts = curve.points();
    if pts.len() < 4 {
        return Err(ReadoutError::invalid(
            "curve",
            format!("need at least 4 points, got {}", pts.len()),
        ));
    }
    if pts.iter().all(|p| p.mean_counts == 0.0) {
        return Err(ReadoutError::DegenerateData(
            "all mean counts are zero".into(),
        ));
    }
    if !(0.0..=1.0).contains(&options.p1_initial) {
        return Err(ReadoutError::invalid("p1_initial", "must lie in [0, 1]"));
    }
    ensure_non_negative("background_rate", options.background_rate)?;

    let targets: Vec<f64> = pts
        .iter()
        .map(|p| p.mean_counts - options.background_rate * p.tau)
        .collect();
    let sqrt_w: Vec<f64> = pts
        .iter()
        .map(|p| match options.weighting {
            Weighting::Trials => (p.n_trials as f64).sqrt(),
            Weighting::Poisson => (p.n_trials as f64 / p.mean_counts.max(1.0)).sqrt(),
            Weighting::Uniform => 1.0,
        })
        .collect();
    let data_norm: f64 = targets
        .iter()
        .zip(&sqrt_w)
        .map(|(y, w)| (w * y).powi(2))
        .sum::<f64>()
        .sqrt();
    let problem = Problem {
        taus: pts.iter().map(|p| p.tau).collect(),
        targets,
        sqrt_w,
        options,
    };

    let mut p = Vector3::new(guess.detected_signal, guess.rd, guess.rb).map(|v| v.max(0.0));
    let mut cost = problem.cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let (r, jac) = problem.residuals_and_jacobian(&p);
        let (a, g) = normal_equations(&r, &jac);

        let free: [bool; 3] = [0, 1, 2].map(|i| !(p[i] <= 0.0 && g[i] > 0.0));
        let mut accepted = None;
        while lambda < 1e20 {
            let mut m = a;
            for i in 0..3 {
                let d = a[(i, i)].max(1e-300);
                m[(i, i)] += lambda * d;
                if !free[i] {
                    for k in 0..3 {
                        m[(i, k)] = 0.0;
                        m[(k, i)] = 0.0;
                    }
                    m[(i, i)] = 1.0;
                }
            }
            let rhs = Vector3::from_fn(|i, _| if free[i] { -g[i] } else { 0.0 });
            let Some(step) = m.lu().solve(&rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial = (p + step).map(|v| v.max(0.0));
            let trial_cost = problem.cost(&trial);
            if trial_cost.is_finite() && trial_cost <= cost {
                accepted = Some((trial, trial_cost));
                lambda = (lambda * 0.3).max(1e-15);
                break;
            }
            lambda *= 4.0;
        }

        let Some((next, next_cost)) = accepted else {
            // no descent direction left at machine precision
            converged = true;
            break;
        };
        let small_step = (0..3).all(|i| {
            (next[i] - p[i]).abs() <= options.tolerance * (p[i].abs() + options.tolerance)
        });
        let small_gain = cost - next_cost <= options.tolerance * cost;
        p = next;
        cost = next_cost;
        if small_step || small_gain || cost == 0.0 {
            converged = true;
            break;
        }
    }

    let (_, jac) = problem.residuals_and_jacobian(&p);
    let dof = pts.len().saturating_sub(3).max(1) as f64;
    let (a, _) = normal_equations(&vec![0.0; jac.len()], &jac);
    let cov = a
        .pseudo_inverse(1e-300)
        .unwrap_or_else(|_| Matrix3::from_element(f64::NAN))
        * (cost / dof);
    let fit = RateFit {
        detected_signal: p[0],
        rd: p[1],
        rb: p[2],
        residual_norm: if data_norm > 0.0 {
            cost.sqrt() / data_norm
        } else {
            0.0
        },
        covariance: [0, 1, 2].map(|i| [0, 1, 2].map(|k| cov[(i, k)])),
        iterations,
    };
    if !converged {
        return Err(ReadoutError::FitFailure {
            iterations,
            cost,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

fn normal_equations(r: &[f64], jac: &[[f64; 3]]) -> (Matrix3<f64>, Vector3<f64>) {
    let mut a = Matrix3::zeros();
    let mut g = Vector3::zeros();
    for (row, &ri) in jac.iter().zip(r) {
        for i in 0..3 {
            g[i] += row[i] * ri;
            for k in 0..3 {
                a[(i, k)] += row[i] * row[k];
            }
        }
    }
    (a, g)
}

/// Least-squares slope of a line through the origin, `Σxy / Σx²`.
pub fn fit_rate_vs_power(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(ReadoutError::invalid(
            "points",
            format!("need at least 2 points, got {}", points.len()),
        ));
    }
    for &(x, y) in points {
        ensure_non_negative("drive", x)?;
        ensure_non_negative("rate", y)?;
    }
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    if sxx == 0.0 {
        return Err(ReadoutError::DegenerateData(
            "all drive values are zero".into(),
        ));
    }
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit_dynamics::expected_counts;
    use crate::rate_model::RateModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use testkit::rel_diff;

    /// Geometric grid from 10⁻³/rd to 5/rd.
    fn synthetic(signal: f64, rd: f64, rb: f64, n: usize) -> DecayCurve {
        let (lo, hi) = (1e-3 / rd, 5.0 / rd);
        let pts = (0..n)
            .map(|i| {
                let tau = lo * (hi / lo).powf(i as f64 / (n - 1) as f64);
                CurvePoint {
                    tau,
                    mean_counts: expected_counts(tau, 1.0, signal, rd, rb).unwrap(),
                    n_trials: 1000,
                }
            })
            .collect();
        DecayCurve::new(pts).unwrap()
    }

    #[test]
    fn recovers_canonical_point() {
        let curve = synthetic(1.87e5, 170.0, 10.0, 24);
        let guess = RateGuess::from_curve(&curve).unwrap();
        let fit = fit_decay_curve(&curve, &guess, &FitOptions::default()).unwrap();
        assert!(rel_diff(fit.detected_signal, 1.87e5) < 1e-3);
        assert!(rel_diff(fit.rd, 170.0) < 1e-3);
        assert!(rel_diff(fit.rb, 10.0) < 1e-3);
        assert!(fit.residual_norm < 1e-8);
    }

    #[test]
    fn recovers_from_a_poor_guess() {
        let curve = synthetic(1.87e5, 170.0, 10.0, 24);
        let guess = RateGuess {
            detected_signal: 5e4,
            rd: 1000.0,
            rb: 0.0,
        };
        let fit = fit_decay_curve(&curve, &guess, &FitOptions::default()).unwrap();
        assert!(rel_diff(fit.rd, 170.0) < 1e-3, "{fit:?}");
        assert!(rel_diff(fit.rb, 10.0) < 1e-3, "{fit:?}");
    }

    #[test]
    fn pure_line_sits_on_the_boundary() {
        let pts = (1..=10)
            .map(|i| CurvePoint {
                tau: i as f64 * 1e-4,
                mean_counts: 2e5 * i as f64 * 1e-4,
                n_trials: 100,
            })
            .collect();
        let curve = DecayCurve::new(pts).unwrap();
        let guess = RateGuess {
            detected_signal: 1e5,
            rd: 50.0,
            rb: 5.0,
        };
        let fit = fit_decay_curve(&curve, &guess, &FitOptions::default()).unwrap();
        assert!(rel_diff(fit.detected_signal, 2e5) < 1e-6, "{fit:?}");
        assert!(fit.rd < 1e-6 * 2e5 && fit.rb < 1e-6 * 2e5, "{fit:?}");
    }

    #[test]
    fn background_is_subtracted() {
        let clean = synthetic(1.87e5, 170.0, 10.0, 20);
        let rdc = 33.0;
        let noisy = DecayCurve::new(
            clean
                .points()
                .iter()
                .map(|p| CurvePoint {
                    mean_counts: p.mean_counts + rdc * p.tau,
                    ..*p
                })
                .collect(),
        )
        .unwrap();
        let options = FitOptions {
            background_rate: rdc,
            ..Default::default()
        };
        let fit =
            fit_decay_curve(&noisy, &RateGuess::from_curve(&noisy).unwrap(), &options).unwrap();
        assert!(rel_diff(fit.rb, 10.0) < 1e-3);
    }

    #[test]
    fn curve_validation_and_degenerate_data() {
        assert!(DecayCurve::new(vec![
            CurvePoint {
                tau: 2e-3,
                mean_counts: 1.0,
                n_trials: 1
            },
            CurvePoint {
                tau: 1e-3,
                mean_counts: 1.0,
                n_trials: 1
            },
        ])
        .is_err());
        assert!(DecayCurve::new(vec![CurvePoint {
            tau: 1e-3,
            mean_counts: -1.0,
            n_trials: 1
        }])
        .is_err());
        assert!(DecayCurve::new(vec![CurvePoint {
            tau: 1e-3,
            mean_counts: 1.0,
            n_trials: 0
        }])
        .is_err());

        let zeros = DecayCurve::new(
            (1..=5)
                .map(|i| CurvePoint {
                    tau: i as f64 * 1e-3,
                    mean_counts: 0.0,
                    n_trials: 10,
                })
                .collect(),
        )
        .unwrap();
        let guess = RateGuess {
            detected_signal: 1.0,
            rd: 1.0,
            rb: 1.0,
        };
        assert!(matches!(
            fit_decay_curve(&zeros, &guess, &FitOptions::default()),
            Err(ReadoutError::DegenerateData(_))
        ));
        let short = DecayCurve::new(synthetic(1e5, 100.0, 5.0, 24).points()[..3].to_vec()).unwrap();
        assert!(fit_decay_curve(&short, &guess, &FitOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let curve = synthetic(1.87e5, 170.0, 10.0, 24);
        let guess = RateGuess {
            detected_signal: 1e4,
            rd: 5000.0,
            rb: 1000.0,
        };
        let options = FitOptions {
            max_iterations: 1,
            ..Default::default()
        };
        match fit_decay_curve(&curve, &guess, &options) {
            Err(ReadoutError::FitFailure {
                iterations, best, ..
            }) => {
                assert_eq!(iterations, 1);
                assert!(best.detected_signal >= 0.0);
            }
            other => panic!("expected a fit failure, got {other:?}"),
        }
    }

    #[test]
    fn identifiability_grid() {
        for signal in [5e4, 1.87e5, 5e5] {
            for ratio in [1e2, 1e3, 1e4] {
                for rb_frac in [0.02, 0.06, 0.2] {
                    let rd = signal / ratio;
                    let rb = rd * rb_frac;
                    let curve = synthetic(signal, rd, rb, 24);
                    let guess = RateGuess::from_curve(&curve).unwrap();
                    let fit = fit_decay_curve(&curve, &guess, &FitOptions::default()).unwrap();
                    assert!(
                        rel_diff(fit.detected_signal, signal) < 1e-2,
                        "{signal} {rd} {rb}: {fit:?}"
                    );
                    assert!(rel_diff(fit.rd, rd) < 1e-2, "{signal} {rd} {rb}: {fit:?}");
                    assert!(rel_diff(fit.rb, rb) < 1e-2, "{signal} {rd} {rb}: {fit:?}");
                    assert!(fit.residual_norm < 1e-8);
                }
            }
        }
    }

    #[test]
    fn line_fit() {
        let pts: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, 3.25 * i as f64)).collect();
        assert_eq!(fit_rate_vs_power(&pts).unwrap(), 3.25);
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, 7.0 * y)).collect();
        assert!(rel_diff(fit_rate_vs_power(&scaled).unwrap(), 7.0 * 3.25) < 1e-15);
        assert!(fit_rate_vs_power(&[(1.0, 1.0)]).is_err());
        assert!(fit_rate_vs_power(&[(1.0, -1.0), (2.0, 1.0)]).is_err());
        assert!(matches!(
            fit_rate_vs_power(&[(0.0, 1.0), (0.0, 2.0)]),
            Err(ReadoutError::DegenerateData(_))
        ));
    }

    #[test]
    fn line_fit_of_model_pumping_rates() {
        let m = RateModel::default();
        let pts: Vec<(f64, f64)> = [8.0, 29.0, 36.0]
            .iter()
            .map(|&i| (i, m.rates_at(i).unwrap().rd))
            .collect();
        let slope = fit_rate_vs_power(&pts).unwrap();
        let per_unit = m.rates_at(1.0).unwrap().rd;
        assert!(rel_diff(slope, per_unit) < 1e-9);
    }

    #[test]
    fn line_fit_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let truth = 5.9;
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let x = 4.0 * i as f64;
                (
                    x,
                    truth * x * (1.0 + 0.05 * (2.0 * rng.random::<f64>() - 1.0)),
                )
            })
            .collect();
        assert!(rel_diff(fit_rate_vs_power(&pts).unwrap(), truth) < 0.05);
    }
}
