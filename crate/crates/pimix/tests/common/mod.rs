//! Independent reference computations for the acceptance suite: log-time
//! densities written directly from the residual laws, pdf-only adaptive
//! quadrature, a visit-scan likelihood oracle and Kolmogorov-Smirnov
//! machinery. Nothing here calls the library's own CDF or band code.

use pimix::dist::AftFamily;
use pimix::model::ScreeningRecord;
use statrs::distribution::ContinuousCDF;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    statrs::distribution::Normal::standard().cdf(z)
}

/// Event time density at `t` for log time mu + sigma * eps, written from
/// the residual density of each family.
pub fn log_time_pdf(family: AftFamily, mu: f64, sigma: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let s = if family == AftFamily::Exponential { 1.0 } else { sigma };
    let e = (t.ln() - mu) / s;
    let fe = match family {
        // Gumbel minimum residual.
        AftFamily::Weibull | AftFamily::Exponential => (e - e.exp()).exp(),
        // Standard logistic residual.
        AftFamily::LogLogistic => {
            let w = e.exp();
            if w.is_infinite() {
                0.0
            } else {
                w / ((1.0 + w) * (1.0 + w))
            }
        }
        // Standard normal residual.
        AftFamily::LogNormal => (-0.5 * e * e).exp() / (2.0 * std::f64::consts::PI).sqrt(),
    };
    fe / (s * t)
}

fn adaptive_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integral of `f` over `[a, b]` to a relative tolerance,
/// using nothing but point evaluations.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Composite coarse pass to estimate the scale for the tolerance.
    let panels = 64;
    let h = (b - a) / panels as f64;
    let mut coarse = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * h;
        coarse += h / 6.0 * (f(lo) + 4.0 * f(lo + 0.5 * h) + f(lo + h));
    }
    let tol = (rel_tol * coarse.abs()).max(1e-300);
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Observed-data likelihood of one record evaluated by quadrature: the
/// prevalent branch from a direct scan of the tested visits, the incident
/// branch by integrating the event time density against the probability of
/// the recorded outcome pattern, piecewise between visit times.
pub fn quadrature_unit_lik(
    record: &ScreeningRecord,
    family: AftFamily,
    mu: f64,
    sigma: f64,
    lin_w: f64,
    kappa: f64,
) -> f64 {
    let phi = std_normal_cdf(lin_w);
    if record.known_prevalent() {
        return phi * kappa;
    }
    let finite: Vec<f64> =
        record.visits().iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    let event = record.delta();
    let tested = |j: usize| j > 0 || record.baseline_tested();

    // Prevalent branch: every tested visit before the end is a miss.
    let mut misses = 0;
    for j in 0..n {
        let positive = event && j == n - 1;
        if tested(j) && !positive {
            misses += 1;
        }
    }
    let prevalent = if event { kappa } else { 1.0 } * (1.0 - kappa).powi(misses);

    // Incident branch: between consecutive visits the pattern probability
    // is constant, so integrate the density segment by segment.
    let pdf = |t: f64| log_time_pdf(family, mu, sigma, t);
    let mut incident = 0.0;
    let mut covered = 0.0;
    for m in 0..n - 1 {
        let passed = integrate(&pdf, finite[m], finite[m + 1], 1e-11);
        covered += passed;
        let factor = if event {
            kappa * (1.0 - kappa).powi((n - m - 2) as i32)
        } else {
            (1.0 - kappa).powi((n - m - 1) as i32)
        };
        incident += factor * passed;
    }
    if !event {
        // Onset after the last finite visit leaves every test a true
        // negative.
        incident += (1.0 - covered).max(0.0);
    }
    phi * prevalent + (1.0 - phi) * incident
}

/// Upper tail of the Kolmogorov distribution by its alternating series.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-9 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += if k % 2 == 1 { term } else { -term };
    }
    p.clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let root = effective_n.sqrt();
    kolmogorov_tail((root + 0.12 + 0.11 / root) * d)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value. Both
/// pointers advance past each distinct value before the gap is measured, so
/// ties never split a jump.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let value = a[i].min(b[j]);
        while i < a.len() && a[i] <= value {
            i += 1;
        }
        while j < b.len() && b[j] <= value {
            j += 1;
        }
        let gap = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
        d = d.max(gap);
    }
    let n_eff = a.len() as f64 * b.len() as f64 / (a.len() + b.len()) as f64;
    (d, ks_p_value(d, n_eff))
}

/// One-sample Kolmogorov-Smirnov statistic of a sample against a reference
/// CDF, with the asymptotic p-value.
pub fn one_sample_ks(sample: &[f64], cdf: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n);
        d = d.max((i + 1) as f64 / n - f);
    }
    (d, ks_p_value(d, n))
}

/// Empirical quantile of a sample (type 7, linear interpolation).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    pimix::posterior::quantile_sorted(&v, p)
}
