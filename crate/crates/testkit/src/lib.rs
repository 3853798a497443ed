//! Reference numerics for the test suites.
//!
//! Everything here is deliberately naive and independent of the code under
//! test: classical RK4, recursive adaptive Simpson quadrature, brute-force
//! grid scans and textbook goodness-of-fit statistics.

use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

/// Classical fourth-order Runge-Kutta for a scalar ODE `y' = f(t, y)`.
///
/// Returns the solution sampled at every step, including the initial point.
pub fn rk4<F: Fn(f64, f64) -> f64>(
    f: F,
    y0: f64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Vec<(f64, f64)> {
    let h = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0;
    out.push((t0, y));
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, y);
        let k2 = f(t + h / 2.0, y + h * k1 / 2.0);
        let k3 = f(t + h / 2.0, y + h * k2 / 2.0);
        let k4 = f(t + h, y + h * k3);
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        out.push((t0 + (i + 1) as f64 * h, y));
    }
    out
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 50)
}

/// Location of the maximum of `f` on a uniform grid `start, start + step, …, stop`.
pub fn grid_argmax<F: Fn(f64) -> f64>(f: F, start: f64, stop: f64, step: f64) -> f64 {
    let n = ((stop - start) / step).round() as usize;
    let mut best_t = start;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=n {
        let t = start + i as f64 * step;
        let v = f(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    best_t
}

/// Asymptotic Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test. Returns `(D, p_value)`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// Pearson chi-square goodness of fit of integer counts against Poisson(mean).
///
/// Bins with expected occupancy below 5 are merged into their neighbours
/// (both tails). Returns `(statistic, degrees_of_freedom, p_value)`.
pub fn chi_square_poisson(counts: &[u64], mean: f64) -> (f64, usize, f64) {
    let n = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    let mut observed = vec![0.0; max + 1];
    for &c in counts {
        observed[c as usize] += 1.0;
    }
    let dist = Poisson::new(mean).expect("positive mean");
    let mut expected: Vec<f64> = (0..=max).map(|k| n * dist.pmf(k as u64)).collect();
    // fold the upper tail beyond the observed max into the last bin
    let covered: f64 = expected.iter().sum();
    *expected.last_mut().unwrap() += n - covered;

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            bins.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += o_acc;
            last.1 += e_acc;
        } else {
            bins.push((o_acc, e_acc));
        }
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    (stat, dof, p)
}

/// Sample mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Relative difference `|a - b| / |b|`, or the absolute difference when `b == 0`.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        (a - b).abs()
    } else {
        ((a - b) / b).abs()
    }
}
