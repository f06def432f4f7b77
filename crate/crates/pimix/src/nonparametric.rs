//! Model-free estimators of the cumulative incidence function.
//!
//! [`turnbull_npmle`] computes the nonparametric maximum likelihood CDF for
//! interval-censored observations. [`recode_baseline`] moves the baseline
//! screening time off zero so that prevalent cases become ordinary events in
//! a near-zero interval, and [`em_misclassified`] extends the NPMLE to an
//! imperfect test by weighting each candidate event interval with the
//! geometric false-negative coefficients of the screening process. The
//! misclassification EM is reconstructed from the stopping-rule structure and
//! is validated by its properties: with a perfect test it reproduces the
//! plain NPMLE, and with baseline testing it recovers the mixture CDF
//! including the prevalence mass near zero. Without baseline testing the
//! near-zero mass is not identified and the estimate of it is biased.

use thiserror::Error;

use crate::model::Dataset;

#[derive(Debug, Error)]
pub enum NonparametricError {
    #[error("baseline recoding needs at least one subject with a finite second visit")]
    NoSecondVisit,
    #[error("no intervals to estimate from")]
    Empty,
    #[error("log-likelihood fell by {drop:.3e} at EM iteration {iteration}")]
    LikelihoodDropped { iteration: usize, drop: f64 },
}

/// One subject after baseline recoding: finite test times in ascending
/// order, and whether the last test was positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RecodedSubject {
    pub test_times: Vec<f64>,
    pub event: bool,
}

/// A dataset with the baseline screening time moved off zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RecodedData {
    /// The recoded baseline time: one percent of the smallest second visit.
    pub t0: f64,
    pub subjects: Vec<RecodedSubject>,
}

impl RecodedData {
    /// Per-subject censoring intervals under a perfect test: an event at the
    /// last test time is bracketed by the preceding test, and a fully
    /// negative history is right censored at the last test.
    ///
    /// Subjects with no tests carry no information and are skipped.
    pub fn turnbull_intervals(&self) -> Vec<(f64, f64)> {
        self.subjects
            .iter()
            .filter(|s| !s.test_times.is_empty())
            .map(|s| {
                let m = s.test_times.len();
                if s.event {
                    let lo = if m >= 2 { s.test_times[m - 2] } else { 0.0 };
                    (lo, s.test_times[m - 1])
                } else {
                    (s.test_times[m - 1], f64::INFINITY)
                }
            })
            .collect()
    }
}

/// Moves the baseline time of every baseline-tested subject from zero to
/// `min(second visits) / 100` and drops the untested baseline entry of the
/// remaining subjects, so every recorded time is a real test occasion.
pub fn recode_baseline(dataset: &Dataset) -> Result<RecodedData, NonparametricError> {
    let t0 = dataset
        .records()
        .iter()
        .filter_map(|r| r.visits().get(1))
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
        * 0.01;
    if !t0.is_finite() {
        return Err(NonparametricError::NoSecondVisit);
    }
    let subjects = dataset
        .records()
        .iter()
        .map(|r| {
            let finite: Vec<f64> = r.visits().iter().copied().filter(|v| v.is_finite()).collect();
            let test_times = if r.baseline_tested() {
                let mut t = finite;
                t[0] = t0;
                t
            } else {
                finite[1..].to_vec()
            };
            RecodedSubject {
                test_times,
                event: !r.is_right_censored(),
            }
        })
        .collect();
    Ok(RecodedData { t0, subjects })
}

/// Nonparametric maximum likelihood estimate of a CDF from censoring
/// intervals, supported on a fixed set of disjoint intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct NpmleEstimate {
    /// Disjoint `(left, right]` support intervals in ascending order; the
    /// last right endpoint may be infinite.
    pub support: Vec<(f64, f64)>,
    /// Probability masses per support interval, summing to one.
    pub masses: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl NpmleEstimate {
    /// CDF value at `t`, rendered as a right-continuous step at each support
    /// interval's right endpoint. Mass placement inside a support interval
    /// is not identified by the likelihood; the step convention is declared
    /// for reproducibility.
    pub fn cdf(&self, t: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.masses)
            .take_while(|((_, hi), _)| *hi <= t)
            .map(|(_, m)| m)
            .sum()
    }

    /// CDF value at `t` with mass spread linearly inside each finite support
    /// interval. Intervals with an infinite right endpoint keep the step
    /// convention.
    pub fn cdf_interpolated(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (&(lo, hi), &m) in self.support.iter().zip(&self.masses) {
            if t >= hi {
                acc += m;
            } else {
                if t > lo && hi.is_finite() {
                    acc += m * (t - lo) / (hi - lo);
                }
                break;
            }
        }
        acc
    }

    /// Inverts [`cdf_interpolated`] at probability `p`. Mass on an interval
    /// with an infinite right endpoint maps to its left endpoint, and a `p`
    /// beyond the accumulated total maps to the largest finite right
    /// endpoint.
    pub fn quantile_interpolated(&self, p: f64) -> f64 {
        assert!((0.0..=1.0).contains(&p), "probability outside [0, 1]");
        let mut cum = 0.0;
        let mut last_finite = 0.0;
        for (&(lo, hi), &m) in self.support.iter().zip(&self.masses) {
            if m > 0.0 && cum + m >= p {
                if hi.is_finite() {
                    return lo + (hi - lo) * ((p - cum) / m).clamp(0.0, 1.0);
                }
                return lo;
            }
            cum += m;
            if hi.is_finite() {
                last_finite = hi;
            }
        }
        last_finite
    }
}

/// Candidate event intervals for one subject, as contiguous index ranges
/// into a shared list of disjoint cells, each weighted by the probability of
/// the subject's observed test history given the event lies in that range.
struct BandedSubject {
    bands: Vec<(usize, usize, f64)>,
}

/// Runs the self-consistency EM for masses over `cells` given per-subject
/// weighted bands. Shared by the plain NPMLE and the misclassification EM.
fn banded_em(
    cells: Vec<(f64, f64)>,
    subjects: &[BandedSubject],
    tol: f64,
    max_iter: usize,
) -> Result<NpmleEstimate, NonparametricError> {
    let n_cells = cells.len();
    let active: Vec<&BandedSubject> = subjects.iter().filter(|s| !s.bands.is_empty()).collect();
    if active.is_empty() || n_cells == 0 {
        return Err(NonparametricError::Empty);
    }
    let n = active.len() as f64;
    let mut masses = vec![1.0 / n_cells as f64; n_cells];
    let mut prefix = vec![0.0; n_cells + 1];
    let mut diff = vec![0.0; n_cells + 1];
    let mut likelihoods = vec![0.0; active.len()];
    let mut previous_ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut log_likelihood = 0.0;
    while iterations < max_iter {
        iterations += 1;
        for (k, &m) in masses.iter().enumerate() {
            prefix[k + 1] = prefix[k] + m;
        }
        for (slot, s) in likelihoods.iter_mut().zip(&active) {
            *slot = s
                .bands
                .iter()
                .map(|&(lo, hi, c)| c * (prefix[hi] - prefix[lo]))
                .sum::<f64>();
        }
        log_likelihood = likelihoods.iter().map(|&l| l.ln()).sum();
        if log_likelihood < previous_ll - 1e-10 {
            return Err(NonparametricError::LikelihoodDropped {
                iteration: iterations,
                drop: previous_ll - log_likelihood,
            });
        }
        previous_ll = log_likelihood;
        diff.fill(0.0);
        for (s, &l) in active.iter().zip(&likelihoods) {
            for &(lo, hi, c) in &s.bands {
                let v = c / l;
                diff[lo] += v;
                diff[hi] -= v;
            }
        }
        let mut weight = 0.0;
        let mut delta: f64 = 0.0;
        for (k, mass) in masses.iter_mut().enumerate() {
            weight += diff[k];
            let updated = *mass * weight / n;
            delta = delta.max((updated - *mass).abs());
            *mass = updated;
        }
        if delta < tol {
            converged = true;
            break;
        }
    }
    debug_assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    Ok(NpmleEstimate {
        support: cells,
        masses,
        converged,
        iterations,
        log_likelihood,
    })
}

/// Turnbull NPMLE for interval-censored observations `(left, right]` with
/// possibly infinite right endpoints: innermost-interval construction, then
/// self-consistency EM until the largest mass change falls below `tol`.
pub fn turnbull_npmle(
    intervals: &[(f64, f64)],
    tol: f64,
    max_iter: usize,
) -> Result<NpmleEstimate, NonparametricError> {
    if intervals.is_empty() {
        return Err(NonparametricError::Empty);
    }
    for &(lo, hi) in intervals {
        assert!(lo >= 0.0 && lo < hi, "invalid interval ({lo}, {hi}]");
    }
    let mut lefts: Vec<f64> = intervals.iter().map(|i| i.0).collect();
    let mut rights: Vec<f64> = intervals.iter().map(|i| i.1).collect();
    lefts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lefts.dedup();
    rights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rights.dedup();
    let mut endpoints: Vec<f64> = lefts.iter().chain(rights.iter()).copied().collect();
    endpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    endpoints.dedup();
    // An innermost interval joins a left endpoint to the next endpoint when
    // that neighbor is a right endpoint; no observation boundary can then
    // fall strictly inside it.
    let mut cliques = Vec::new();
    for pair in endpoints.windows(2) {
        if lefts.binary_search_by(|v| v.partial_cmp(&pair[0]).unwrap()).is_ok()
            && rights.binary_search_by(|v| v.partial_cmp(&pair[1]).unwrap()).is_ok()
        {
            cliques.push((pair[0], pair[1]));
        }
    }
    let subjects: Vec<BandedSubject> = intervals
        .iter()
        .map(|&(lo, hi)| {
            let start = cliques.partition_point(|c| c.0 < lo);
            let stop = cliques.partition_point(|c| c.1 <= hi);
            assert!(start < stop, "observation ({lo}, {hi}] covers no support interval");
            BandedSubject {
                bands: vec![(start, stop, 1.0)],
            }
        })
        .collect();
    banded_em(cliques, &subjects, tol, max_iter)
}

/// NPMLE of the mixture CDF of the time to disease under an imperfect test
/// with sensitivity `kappa`, on baseline-recoded data.
///
/// Each subject's candidate event cells are weighted by the probability of
/// the observed test history given the event lies there: with `m` tests and
/// a final positive, the cell block ending at test `b` carries
/// `kappa * (1 - kappa)^(m - b)`; with all tests negative it carries
/// `(1 - kappa)^(m - b + 1)`, and the block beyond the last test carries
/// one. The prevalence mass surfaces in the cell `(0, t0]` below the
/// recoded baseline.
pub fn em_misclassified(
    dataset: &Dataset,
    kappa: f64,
    tol: f64,
    max_iter: usize,
) -> Result<NpmleEstimate, NonparametricError> {
    assert!(kappa > 0.0 && kappa <= 1.0, "sensitivity outside (0, 1]");
    let recoded = recode_baseline(dataset)?;
    let mut endpoints = vec![0.0, recoded.t0];
    for s in &recoded.subjects {
        endpoints.extend_from_slice(&s.test_times);
    }
    endpoints.push(f64::INFINITY);
    endpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    endpoints.dedup();
    let cells: Vec<(f64, f64)> = endpoints.windows(2).map(|w| (w[0], w[1])).collect();
    let position = |t: f64| -> usize {
        endpoints
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
            .expect("band endpoint missing from the pooled grid")
    };
    let subjects: Vec<BandedSubject> = recoded
        .subjects
        .iter()
        .map(|s| {
            let m = s.test_times.len();
            let mut bands = Vec::with_capacity(m + 1);
            let mut lo = 0;
            for (b, &t) in s.test_times.iter().enumerate() {
                let hi = position(t);
                let misses = (m - b - 1) as i32;
                let c = if s.event {
                    kappa * (1.0 - kappa).powi(misses)
                } else {
                    (1.0 - kappa).powi(misses + 1)
                };
                if c > 0.0 {
                    bands.push((lo, hi, c));
                }
                lo = hi;
            }
            if !s.event && m > 0 {
                bands.push((lo, cells.len(), 1.0));
            }
            BandedSubject { bands }
        })
        .collect();
    banded_em(cells, &subjects, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{AftDist, AftFamily};
    use crate::model::ScreeningRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(visits: &[f64], outcomes: &[bool], tested: bool) -> ScreeningRecord {
        ScreeningRecord::new(visits.to_vec(), outcomes.to_vec(), tested, vec![1.0], vec![1.0])
            .unwrap()
    }

    #[test]
    fn recoding_moves_the_baseline_and_drops_untested_entries() {
        let inf = f64::INFINITY;
        let dataset = Dataset::new(vec![
            rec(&[0.0, 3.0, 6.0], &[false, false, true], true),
            rec(&[0.0, 5.9, inf], &[false; 3], false),
            rec(&[0.0], &[true], true),
            rec(&[0.0, inf], &[false, false], true),
        ])
        .unwrap();
        let recoded = recode_baseline(&dataset).unwrap();
        assert!((recoded.t0 - 0.03).abs() < 1e-12);
        assert_eq!(recoded.subjects[0].test_times, vec![0.03, 3.0, 6.0]);
        assert!(recoded.subjects[0].event);
        assert_eq!(recoded.subjects[1].test_times, vec![5.9]);
        assert!(!recoded.subjects[1].event);
        assert_eq!(recoded.subjects[2].test_times, vec![0.03]);
        assert!(recoded.subjects[2].event);
        assert_eq!(recoded.subjects[3].test_times, vec![0.03]);
        assert!(!recoded.subjects[3].event);

        let intervals = recoded.turnbull_intervals();
        assert_eq!(intervals[0], (3.0, 6.0));
        assert_eq!(intervals[1], (5.9, f64::INFINITY));
        assert_eq!(intervals[2], (0.0, 0.03));
        assert_eq!(intervals[3], (0.03, f64::INFINITY));
    }

    #[test]
    fn recoding_requires_a_finite_second_visit() {
        let dataset = Dataset::new(vec![rec(&[0.0], &[true], true)]).unwrap();
        assert!(matches!(
            recode_baseline(&dataset),
            Err(NonparametricError::NoSecondVisit)
        ));
        let dataset = Dataset::new(vec![rec(&[0.0, f64::INFINITY], &[false, false], true)]).unwrap();
        assert!(matches!(
            recode_baseline(&dataset),
            Err(NonparametricError::NoSecondVisit)
        ));
    }

    #[test]
    fn interpolated_quantiles_invert_the_interpolated_cdf() {
        let est = NpmleEstimate {
            support: vec![(0.0, 1.0), (2.0, 4.0), (5.0, f64::INFINITY)],
            masses: vec![0.25, 0.5, 0.25],
            converged: true,
            iterations: 1,
            log_likelihood: 0.0,
        };
        assert!((est.quantile_interpolated(0.125) - 0.5).abs() < 1e-12);
        assert!((est.quantile_interpolated(0.25) - 1.0).abs() < 1e-12);
        assert!((est.quantile_interpolated(0.5) - 3.0).abs() < 1e-12);
        assert_eq!(est.quantile_interpolated(0.8), 5.0);
        for p in [0.05, 0.2, 0.3, 0.6, 0.74] {
            let t = est.quantile_interpolated(p);
            assert!((est.cdf_interpolated(t) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_intervals_collapse_to_one_atom() {
        let intervals = vec![(2.0, 5.0); 7];
        let est = turnbull_npmle(&intervals, 1e-8, 1000).unwrap();
        assert!(est.converged);
        assert_eq!(est.support, vec![(2.0, 5.0)]);
        assert!((est.masses[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_exact_observations_recover_the_empirical_cdf() {
        let eps = 1e-6;
        let mut intervals = Vec::new();
        for &(t, count) in &[(1.0, 1), (2.0, 2), (3.0, 1)] {
            for _ in 0..count {
                intervals.push((t - eps, t));
            }
        }
        let est = turnbull_npmle(&intervals, 1e-10, 1000).unwrap();
        assert!((est.cdf(1.5) - 0.25).abs() < 1e-8);
        assert!((est.cdf(2.5) - 0.75).abs() < 1e-8);
        assert!((est.cdf(3.5) - 1.0).abs() < 1e-8);
        assert_eq!(est.cdf(0.5), 0.0);
    }

    /// Interval-censors draws from a known distribution with a perfect test
    /// on a per-subject uniform visit grid.
    fn censor_perfect(dist: &AftDist, n: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| {
                let x = dist.sample_truncated(0.0, f64::INFINITY, rng).unwrap();
                let horizon = 60.0 + 60.0 * rng.random::<f64>();
                let mut prev = 0.0;
                loop {
                    let next = prev + 1.0 + 2.0 * rng.random::<f64>();
                    if next > horizon {
                        break (prev, f64::INFINITY);
                    }
                    if x <= next {
                        break (prev, next);
                    }
                    prev = next;
                }
            })
            .collect()
    }

    #[test]
    fn npmle_tracks_the_generating_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dist = AftDist::from_parts(AftFamily::Weibull, 3.0, 0.5).unwrap();
        let intervals = censor_perfect(&dist, 2000, &mut rng);
        let est = turnbull_npmle(&intervals, 1e-8, 200_000).unwrap();
        assert!(est.converged);
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let t = dist.quantile(q).unwrap();
            assert!(
                (est.cdf_interpolated(t) - q).abs() < 0.02,
                "cdf at quantile {q} was {}",
                est.cdf_interpolated(t)
            );
        }
    }

    #[test]
    fn npmle_masses_are_self_consistent_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let dist = AftDist::from_parts(AftFamily::LogLogistic, 2.5, 0.4).unwrap();
        let intervals = censor_perfect(&dist, 300, &mut rng);
        let est = turnbull_npmle(&intervals, 1e-9, 500_000).unwrap();
        assert!(est.converged);
        assert!((est.masses.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        // One more assignment step must reproduce the converged masses.
        let mut reassigned = vec![0.0; est.masses.len()];
        for &(lo, hi) in &intervals {
            let member: Vec<usize> = (0..est.support.len())
                .filter(|&k| lo <= est.support[k].0 && est.support[k].1 <= hi)
                .collect();
            let total: f64 = member.iter().map(|&k| est.masses[k]).sum();
            for &k in &member {
                reassigned[k] += est.masses[k] / total;
            }
        }
        for (m, r) in est.masses.iter().zip(&reassigned) {
            assert!((m - r / intervals.len() as f64).abs() < 1e-6);
        }
    }

    fn mixed_dataset(n: usize, kappa: f64, p_baseline: f64, rng: &mut ChaCha8Rng) -> Dataset {
        let dist = AftDist::from_parts(AftFamily::Weibull, 2.8, 0.6).unwrap();
        let records = (0..n)
            .map(|_| {
                let prevalent = rng.random::<f64>() < 0.25;
                let x = if prevalent {
                    0.0
                } else {
                    dist.sample_truncated(0.0, f64::INFINITY, rng).unwrap()
                };
                let tested = rng.random::<f64>() < p_baseline;
                let horizon = 25.0 + 20.0 * rng.random::<f64>();
                let mut visits = vec![0.0];
                let mut outcomes = vec![false];
                if tested && prevalent && rng.random::<f64>() < kappa {
                    return rec(&[0.0], &[true], true);
                }
                loop {
                    let next = visits.last().unwrap() + 2.0 + 3.0 * rng.random::<f64>();
                    if next > horizon {
                        visits.push(f64::INFINITY);
                        outcomes.push(false);
                        break;
                    }
                    visits.push(next);
                    if (prevalent || x <= next) && rng.random::<f64>() < kappa {
                        outcomes.push(true);
                        break;
                    }
                    outcomes.push(false);
                }
                rec(&visits, &outcomes, tested)
            })
            .collect();
        Dataset::new(records).unwrap()
    }

    #[test]
    fn perfect_test_reduces_to_the_turnbull_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dataset = mixed_dataset(400, 1.0, 0.8, &mut rng);
        // The mass-change stopping rule leaves both estimates roughly two
        // orders of magnitude from the shared optimum, so the agreement
        // check runs at a tight tolerance and asserts a looser bound.
        let em = em_misclassified(&dataset, 1.0, 1e-10, 500_000).unwrap();
        assert!(em.converged);
        let recoded = recode_baseline(&dataset).unwrap();
        let tb = turnbull_npmle(&recoded.turnbull_intervals(), 1e-10, 500_000).unwrap();
        assert!(tb.converged);
        let mut points: Vec<f64> = tb
            .support
            .iter()
            .flat_map(|&(lo, hi)| [lo, hi])
            .filter(|v| v.is_finite())
            .collect();
        points.push(0.0);
        let mut sup: f64 = 0.0;
        for &t in &points {
            sup = sup.max((em.cdf(t) - tb.cdf(t)).abs());
        }
        assert!(sup < 1e-6, "sup distance to the plain NPMLE was {sup}");
    }

    #[test]
    fn em_recovers_the_mixture_cdf_when_baselines_are_tested() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let dist = AftDist::from_parts(AftFamily::Weibull, 2.8, 0.6).unwrap();
        let dataset = mixed_dataset(800, 0.8, 1.0, &mut rng);
        let em = em_misclassified(&dataset, 0.8, 1e-7, 500_000).unwrap();
        assert!(em.converged);
        let truth = |t: f64| 0.25 + 0.75 * dist.cdf(t);
        let recoded = recode_baseline(&dataset).unwrap();
        assert!(
            (em.cdf(recoded.t0) - 0.25).abs() < 0.05,
            "prevalence mass estimate was {}",
            em.cdf(recoded.t0)
        );
        for t in [8.0, 14.0, 20.0] {
            assert!(
                (em.cdf(t) - truth(t)).abs() < 0.05,
                "cdf at {t} was {} against {}",
                em.cdf(t),
                truth(t)
            );
        }
    }

    #[test]
    fn em_runs_to_completion_without_baseline_tests() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let dataset = mixed_dataset(500, 0.8, 0.0, &mut rng);
        let em = em_misclassified(&dataset, 0.8, 1e-7, 100_000).unwrap();
        assert!((em.masses.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn em_likelihood_never_falls() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
            let dataset = mixed_dataset(120, 0.7, 0.6, &mut rng);
            let em = em_misclassified(&dataset, 0.7, 1e-9, 50_000).unwrap();
            assert!(em.log_likelihood.is_finite());
        }
    }
}
