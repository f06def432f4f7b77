//! Observed-data likelihood of a screening record.
//!
//! A record's likelihood mixes two explanations: the subject was disease
//! free at baseline and the onset time fell somewhere consistent with the
//! test sequence, or the subject was already prevalent and every negative
//! test was a false negative. All assembly happens in log space; negative
//! infinity is a legal value that the sampler treats as rejection, not an
//! error.

use crate::dist::{linear_predictor, log_norm_cdf, AftDist, AftFamily, DistError};
use crate::model::{Dataset, IncidenceParams, PrevalenceParams, ScreeningRecord};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LikelihoodError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("augmented vectors have {got} entries for a dataset of {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("incident onset time {x} lies after the final visit of record {index}")]
    OnsetPastLastVisit { index: usize, x: f64 },
    #[error("record has zero probability under both mixture branches")]
    ZeroMassRecord,
}

/// log(exp(a) + exp(b)) tolerant of infinite inputs.
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    logsumexp(&[a, b])
}

/// log sum of exponentials; negative infinity for an empty or all
/// negative-infinite input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Number of false negatives an incident subject with onset time `x`
/// accumulates: every test at or after onset except the final positive.
///
/// Requires `x <= record.last_visit()`; the censoring sentinel keeps the
/// count well defined for onset after the last actual test.
pub fn incident_miss_count(record: &ScreeningRecord, x: f64) -> usize {
    debug_assert!(x > 0.0 && x <= record.last_visit());
    record.visits_at_or_after(x) - 1
}

/// Probability of the observed test sequence for an incident subject with
/// onset time `x`; zero when onset after the final visit contradicts an
/// observed positive.
pub fn incident_outcome_prob(record: &ScreeningRecord, x: f64, kappa: f64) -> f64 {
    if x > record.last_visit() {
        return 0.0;
    }
    let misses = incident_miss_count(record, x) as i32;
    let detect = if record.delta() { kappa } else { 1.0 };
    detect * (1.0 - kappa).powi(misses)
}

/// Log of [`incident_outcome_prob`], with the zero-exponent case skipping
/// the log so that a perfect test never produces 0 * -inf.
pub fn incident_log_prob(record: &ScreeningRecord, x: f64, kappa: f64) -> f64 {
    if x > record.last_visit() {
        return f64::NEG_INFINITY;
    }
    let misses = incident_miss_count(record, x);
    let mut lp = if record.delta() { kappa.ln() } else { 0.0 };
    if misses > 0 {
        lp += misses as f64 * (1.0 - kappa).ln();
    }
    lp
}

/// Probability of the observed test sequence for a prevalent subject:
/// every test before the final visit missed, the final one detected if it
/// was positive.
pub fn prevalent_outcome_prob(record: &ScreeningRecord, kappa: f64) -> f64 {
    let detect = if record.delta() { kappa } else { 1.0 };
    detect * (1.0 - kappa).powi(record.prevalent_miss_count() as i32)
}

/// Log of [`prevalent_outcome_prob`].
pub fn prevalent_log_prob(record: &ScreeningRecord, kappa: f64) -> f64 {
    let misses = record.prevalent_miss_count();
    let mut lp = if record.delta() { kappa.ln() } else { 0.0 };
    if misses > 0 {
        lp += misses as f64 * (1.0 - kappa).ln();
    }
    lp
}

/// Per-interval contributions of the incident branch.
///
/// Interval `j` (zero-based index `j - 1` here) is the span between two
/// consecutive visits counted backwards from the end, so index 0 is the
/// most recent. Its contribution is the probability that onset fell in the
/// interval times the outcome probability shared by every onset time in
/// it: the final detection if positive, and one false negative per test
/// between onset and the end of follow-up.
#[derive(Debug, Clone)]
pub struct IntervalWeights {
    intervals: Vec<(f64, f64)>,
    log_terms: Vec<f64>,
    log_total: f64,
}

impl IntervalWeights {
    /// An empty value for buffer reuse; fill it with [`Self::recompute`].
    pub fn empty() -> IntervalWeights {
        IntervalWeights {
            intervals: Vec::new(),
            log_terms: Vec::new(),
            log_total: f64::NEG_INFINITY,
        }
    }

    pub fn compute(record: &ScreeningRecord, dist: &AftDist, kappa: f64) -> IntervalWeights {
        let mut w = IntervalWeights::empty();
        w.recompute(record, dist, kappa);
        w
    }

    /// Recomputes in place, keeping the allocated capacity; the sampler
    /// calls this once per subject per sweep.
    pub fn recompute(&mut self, record: &ScreeningRecord, dist: &AftDist, kappa: f64) {
        self.intervals.clear();
        self.log_terms.clear();
        let visits = record.visits();
        let c = visits.len();
        if c < 2 {
            // A baseline-only record has no onset interval.
            self.log_total = f64::NEG_INFINITY;
            return;
        }
        let log_kappa = kappa.ln();
        let log_miss = (1.0 - kappa).ln();
        let delta = record.delta();
        for j in 1..c {
            let lo = visits[c - j - 1];
            let hi = visits[c - j];
            let mut lt = dist.interval_prob(lo, hi).ln();
            if delta {
                lt += log_kappa;
            }
            // The exponent guard keeps kappa = 1 finite for the most
            // recent interval, where no test is missed.
            if j > 1 {
                lt += (j - 1) as f64 * log_miss;
            }
            self.intervals.push((lo, hi));
            self.log_terms.push(lt);
        }
        self.log_total = logsumexp(&self.log_terms);
    }

    /// Onset intervals `(lo, hi]`, most recent first.
    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Unnormalized log contributions, aligned with [`Self::intervals`].
    pub fn log_terms(&self) -> &[f64] {
        &self.log_terms
    }

    /// Log of the summed contributions; the incident branch of the record
    /// likelihood up to the prevalence factor.
    pub fn log_total(&self) -> f64 {
        self.log_total
    }

    /// Normalized interval probabilities, or None when no interval carries
    /// mass and a categorical draw is impossible.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        if self.log_total == f64::NEG_INFINITY {
            return None;
        }
        Some(self.log_terms.iter().map(|lt| (lt - self.log_total).exp()).collect())
    }

    /// One categorical draw over the intervals without allocating; None
    /// when no interval carries mass. Rounding in the cumulative sum falls
    /// back to the last interval with positive weight.
    pub fn sample_index<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        if self.log_total == f64::NEG_INFINITY {
            return None;
        }
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut last_positive = None;
        for (j, &lt) in self.log_terms.iter().enumerate() {
            let p = (lt - self.log_total).exp();
            if p > 0.0 {
                last_positive = Some(j);
            }
            cum += p;
            if u < cum {
                return Some(j);
            }
        }
        last_positive
    }
}

/// The subject-level event time distribution implied by the incidence
/// parameters and the record's covariates.
pub fn subject_dist(
    family: AftFamily,
    incidence: &IncidenceParams,
    record: &ScreeningRecord,
) -> Result<AftDist, DistError> {
    AftDist::new(family, &incidence.beta_x, incidence.sigma, record.covariates_x())
}

/// Observed-data log likelihood of one record with the latent class and
/// onset time integrated out. Negative infinity is legal.
pub fn unit_loglik(
    record: &ScreeningRecord,
    dist: &AftDist,
    prevalence: &PrevalenceParams,
    kappa: f64,
) -> Result<f64, DistError> {
    let lin = linear_predictor(&prevalence.beta_w, record.covariates_w())?;
    let log_phi = log_norm_cdf(lin);
    if record.known_prevalent() {
        // A baseline positive identifies a prevalent subject directly.
        return Ok(log_phi + kappa.ln());
    }
    let weights = IntervalWeights::compute(record, dist, kappa);
    let incident = log_norm_cdf(-lin) + weights.log_total();
    let prevalent = log_phi + prevalent_log_prob(record, kappa);
    Ok(logsumexp2(incident, prevalent))
}

/// Posterior probability that a subject is prevalent given parameters and
/// the record, with the latent onset time and probit score integrated out.
///
/// `lin_w` is the prevalence linear predictor for this subject. Errors
/// when both mixture branches carry zero mass, which indicates an invalid
/// state rather than an unlucky draw.
pub fn collapsed_prevalence_prob(
    record: &ScreeningRecord,
    weights: &IntervalWeights,
    lin_w: f64,
    kappa: f64,
) -> Result<f64, LikelihoodError> {
    if record.known_prevalent() {
        return Ok(1.0);
    }
    let log_prev = log_norm_cdf(lin_w) + prevalent_log_prob(record, kappa);
    let log_inc = log_norm_cdf(-lin_w) + weights.log_total();
    match (log_prev == f64::NEG_INFINITY, log_inc == f64::NEG_INFINITY) {
        (true, true) => Err(LikelihoodError::ZeroMassRecord),
        (true, false) => Ok(0.0),
        (false, true) => Ok(1.0),
        (false, false) => Ok(1.0 / (1.0 + (log_inc - log_prev).exp())),
    }
}

/// Total and per-record observed-data log likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLoglik {
    pub total: f64,
    pub per_unit: Vec<f64>,
}

/// Observed-data log likelihood of a dataset; zero for an empty one.
pub fn dataset_loglik(
    dataset: &Dataset,
    family: AftFamily,
    incidence: &IncidenceParams,
    prevalence: &PrevalenceParams,
    kappa: f64,
) -> Result<DatasetLoglik, DistError> {
    let mut per_unit = Vec::with_capacity(dataset.len());
    let mut total = 0.0;
    for record in dataset.records() {
        let dist = subject_dist(family, incidence, record)?;
        let ll = unit_loglik(record, &dist, prevalence, kappa)?;
        total += ll;
        per_unit.push(ll);
    }
    Ok(DatasetLoglik { total, per_unit })
}

/// Sufficient statistics of the sensitivity posterior.
///
/// Positives count every observed positive test; misses count false
/// negatives, which for incident subjects depend on the onset time and for
/// prevalent subjects on the number of tests taken before the final visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KappaStats {
    pub positives: usize,
    pub incident_misses: usize,
    pub prevalent_misses: usize,
}

impl KappaStats {
    /// Accumulates the statistics from one augmented state. The class
    /// indicators must already be consistent with the onset times: an
    /// incident onset after the final visit is an error here, because the
    /// miss count would be meaningless.
    pub fn accumulate(dataset: &Dataset, g: &[u8], x: &[f64]) -> Result<KappaStats, LikelihoodError> {
        if g.len() != dataset.len() {
            return Err(LikelihoodError::LengthMismatch { got: g.len(), want: dataset.len() });
        }
        if x.len() != dataset.len() {
            return Err(LikelihoodError::LengthMismatch { got: x.len(), want: dataset.len() });
        }
        let mut stats =
            KappaStats { positives: 0, incident_misses: 0, prevalent_misses: 0 };
        for (i, record) in dataset.records().iter().enumerate() {
            stats.positives += usize::from(record.delta());
            if g[i] == 1 {
                stats.prevalent_misses += record.prevalent_miss_count();
            } else {
                if x[i] > record.last_visit() {
                    return Err(LikelihoodError::OnsetPastLastVisit { index: i, x: x[i] });
                }
                stats.incident_misses += incident_miss_count(record, x[i]);
            }
        }
        Ok(stats)
    }

    /// Beta posterior shapes given Beta prior pseudo-counts.
    pub fn posterior_shapes(&self, prior: (f64, f64)) -> (f64, f64) {
        (
            prior.0 + self.positives as f64,
            prior.1 + (self.incident_misses + self.prevalent_misses) as f64,
        )
    }
}
