//! Convergence and model comparison diagnostics.
//!
//! R-hat follows the split-chain recipe: every chain is halved, so a chain
//! that drifts between its halves inflates the statistic even when the
//! chains agree with each other. Effective sample size uses FFT
//! autocovariances with Geyer's initial monotone truncation, computed per
//! chain and summed.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Split R-hat for one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rhat {
    pub value: f64,
    /// True when every half-chain had zero variance; the statistic is
    /// meaningless then and the parameter should be treated as constant.
    pub degenerate: bool,
}

/// Split R-hat over parallel chains; each slice is one chain's draws for a
/// single scalar, all the same length.
pub fn split_rhat(chains: &[&[f64]]) -> Rhat {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let mid = c.len() / 2;
            [&c[..mid], &c[mid..mid * 2]]
        })
        .collect();
    let m = halves.len();
    let n = halves.first().map_or(0, |h| h.len());
    if m < 2 || n < 2 {
        return Rhat { value: f64::NAN, degenerate: true };
    }
    // Rounding in the mean keeps the variance of a constant series a hair
    // above zero, so constancy is detected by comparison, not variance.
    if halves.iter().all(|h| h.iter().all(|&v| v == h[0])) {
        return Rhat { value: f64::NAN, degenerate: true };
    }
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let vars: Vec<f64> = halves.iter().zip(&means).map(|(h, &mu)| sample_var(h, mu)).collect();
    let w = mean(&vars);
    let grand = mean(&means);
    let b_over_n = sample_var(&means, grand);
    if w == 0.0 {
        return Rhat { value: f64::NAN, degenerate: true };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    Rhat { value: (var_plus / w).sqrt(), degenerate: false }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64], mu: f64) -> f64 {
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Biased autocovariances gamma_0..gamma_{n-1} via FFT in O(n log n).
pub fn autocovariance(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mu = mean(series);
    let padded = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(padded);
    buf.extend(series.iter().map(|x| Complex::new(x - mu, 0.0)));
    buf.resize(padded, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(padded).process(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(padded).process(&mut buf);
    // The inverse is unnormalized, so divide by the FFT length as well as
    // the series length for the biased estimator.
    let scale = 1.0 / (padded as f64 * n as f64);
    buf[..n].iter().map(|v| v.re * scale).collect()
}

/// Effective sample size of one chain; Geyer initial monotone sequence on
/// autocorrelation pairs.
pub fn ess(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let gamma = autocovariance(series);
    if gamma[0] <= 0.0 {
        // Constant series carries no information.
        return 0.0;
    }
    let rho: Vec<f64> = gamma.iter().map(|g| g / gamma[0]).collect();
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < rho.len() {
        let pair = rho[2 * k] + rho[2 * k + 1];
        if pair <= 0.0 {
            break;
        }
        // Enforce monotone non-increasing pair sums.
        let pair = pair.min(prev);
        sum_pairs += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum_pairs - 1.0).max(1e-3);
    n as f64 / tau
}

/// Summed effective sample size across chains.
pub fn ess_total(chains: &[&[f64]]) -> f64 {
    chains.iter().map(|c| ess(c)).sum()
}

/// Streaming accumulator for the per-draw mean and log-mean-exp of a log
/// quantity. Accumulators over disjoint draw blocks merge exactly, which
/// lets a moving burn-in boundary discard whole blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMeanAcc {
    count: u64,
    sum: f64,
    max: f64,
    sumexp: f64,
}

impl Default for LogMeanAcc {
    fn default() -> Self {
        LogMeanAcc { count: 0, sum: 0.0, max: f64::NEG_INFINITY, sumexp: 0.0 }
    }
}

impl LogMeanAcc {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        if v == f64::NEG_INFINITY {
            // exp(v) contributes nothing; the mean becomes -inf through sum.
            return;
        }
        if v > self.max {
            self.sumexp = self.sumexp * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sumexp += (v - self.max).exp();
        }
    }

    pub fn merge(&self, other: &LogMeanAcc) -> LogMeanAcc {
        let max = self.max.max(other.max);
        let scale = |acc: &LogMeanAcc| {
            if acc.sumexp == 0.0 { 0.0 } else { acc.sumexp * (acc.max - max).exp() }
        };
        LogMeanAcc {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            max,
            sumexp: scale(self) + scale(other),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Arithmetic mean of the pushed values.
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// log of the mean of exp(values).
    pub fn log_mean_exp(&self) -> f64 {
        if self.sumexp == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.max + (self.sumexp / self.count as f64).ln()
    }
}

/// Model comparison summary on the deviance scale; smaller is better.
#[derive(Debug, Clone, PartialEq)]
pub struct Waic {
    /// Penalized deviance computed from the per-draw total log likelihood.
    pub total_form: f64,
    /// The same construction applied per record and summed.
    pub pointwise_form: f64,
    /// Per-record contributions to the pointwise form.
    pub per_unit: Vec<f64>,
    /// Draws discarded because some record's log likelihood was not finite.
    pub dropped_draws: usize,
}

/// WAIC from a draws-by-records log likelihood matrix.
///
/// Each retained draw must be finite in every column; draws that are not
/// are dropped and counted, because a single -inf entry would poison the
/// per-draw mean.
pub fn waic_from_matrix(loglik: &[Vec<f64>]) -> Waic {
    let units = loglik.first().map_or(0, |row| row.len());
    let mut unit_accs = vec![LogMeanAcc::default(); units];
    let mut total_acc = LogMeanAcc::default();
    let mut dropped = 0usize;
    for row in loglik {
        if row.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        total_acc.push(row.iter().sum());
        for (acc, &v) in unit_accs.iter_mut().zip(row) {
            acc.push(v);
        }
    }
    waic_from_accs(&total_acc, &unit_accs, dropped)
}

/// WAIC from pre-reduced accumulators; the streaming storage path.
pub fn waic_from_accs(total: &LogMeanAcc, units: &[LogMeanAcc], dropped_draws: usize) -> Waic {
    let total_form = -2.0 * (2.0 * total.mean() - total.log_mean_exp());
    let per_unit: Vec<f64> =
        units.iter().map(|acc| -2.0 * (2.0 * acc.mean() - acc.log_mean_exp())).collect();
    Waic { total_form, pointwise_form: per_unit.iter().sum(), per_unit, dropped_draws }
}
