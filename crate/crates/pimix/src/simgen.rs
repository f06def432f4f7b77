//! Ground-truth cohort generators for the screening process.
//!
//! [`gen_sim1`] draws subjects from a fully parametric design: AFT event
//! times, probit prevalence, uniform screening gaps and an exponential
//! right-censoring offset beyond the second visit. [`gen_sim2`] instead
//! resamples visit schedules from a reference cohort: each new subject walks
//! a donor's observed visits through the stopping rule, extends the schedule
//! with resampled gap differences once the donor's visits run out, and
//! right-censors at a time drawn from a bootstrapped censoring-time
//! distribution. Both return the generated records together with the latent
//! truth per subject, index aligned.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{linear_predictor, AftDist, AftFamily};
use crate::model::{Dataset, IncidenceParams, PrevalenceParams, ScreeningRecord};
use crate::nonparametric::{turnbull_npmle, NpmleEstimate};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(&'static str),
    #[error("donor pool needs at least one {0} subject with consecutive finite visits")]
    EmptyGroup(&'static str),
}

/// Latent ground truth for one generated subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectTruth {
    /// Event time of the incidence process.
    pub x: f64,
    /// Latent probit score of the prevalence model.
    pub w: f64,
    /// Prevalence indicator; one exactly when `w > 0`.
    pub g: u8,
    /// Baseline-test indicator.
    pub r: u8,
}

/// A generated dataset paired with its latent truth, index aligned.
#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    pub dataset: Dataset,
    pub truth: Vec<SubjectTruth>,
}

/// Marginal law of one covariate column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateDist {
    StdNormal,
    Bernoulli(f64),
    Uniform(f64, f64),
}

impl CovariateDist {
    fn validate(&self) -> Result<(), SimError> {
        match *self {
            CovariateDist::StdNormal => Ok(()),
            CovariateDist::Bernoulli(p) => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(SimError::Config("bernoulli probability outside [0, 1]"))
                }
            }
            CovariateDist::Uniform(lo, hi) => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Ok(())
                } else {
                    Err(SimError::Config("uniform covariate bounds must be finite with lower < upper"))
                }
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateDist::StdNormal => rng.sample(StandardNormal),
            CovariateDist::Bernoulli(p) => f64::from(rng.random::<f64>() < p),
            CovariateDist::Uniform(lo, hi) => rng.random_range(lo..hi),
        }
    }

    /// Short description for run metadata.
    pub fn describe(&self) -> String {
        match *self {
            CovariateDist::StdNormal => "normal(0,1)".to_string(),
            CovariateDist::Bernoulli(p) => format!("bernoulli({p})"),
            CovariateDist::Uniform(lo, hi) => format!("uniform({lo},{hi})"),
        }
    }
}

/// Fully parametric cohort design. Both model parts share the covariate
/// vector `[1, z_1, ..., z_p]` with the z columns drawn from
/// `covariate_law`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sim1Config {
    pub n: usize,
    pub family: AftFamily,
    /// Incidence coefficients over the intercept and the z columns.
    pub beta_x: Vec<f64>,
    pub sigma: f64,
    /// Prevalence intercept; together with the covariate law it determines
    /// the marginal prevalence.
    pub theta: f64,
    /// Prevalence slopes for the z columns.
    pub beta_w_slopes: Vec<f64>,
    pub kappa: f64,
    /// Probability that a subject is tested at baseline.
    pub p_baseline_test: f64,
    pub covariate_law: Vec<CovariateDist>,
    /// Uniform screening-gap bounds (lower, upper).
    pub gap: (f64, f64),
    /// Mean of the exponential censoring offset beyond the second visit.
    /// The second visit itself is never censored.
    pub censor_mean: f64,
}

impl Sim1Config {
    /// The benchmark design: Weibull incidence with log-scale intercept 5,
    /// slopes 0.2 and sigma 0.2, probit slopes 0.2 over two standard normal
    /// covariates, screening gaps uniform on (20, 30) and a censoring
    /// offset with mean 80.
    pub fn benchmark(n: usize, theta: f64, kappa: f64, p_baseline_test: f64) -> Self {
        Sim1Config {
            n,
            family: AftFamily::Weibull,
            beta_x: vec![5.0, 0.2, 0.2],
            sigma: 0.2,
            theta,
            beta_w_slopes: vec![0.2, 0.2],
            kappa,
            p_baseline_test,
            covariate_law: vec![CovariateDist::StdNormal; 2],
            gap: (20.0, 30.0),
            censor_mean: 80.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Config("n must be positive"));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(SimError::Config("kappa outside (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_baseline_test) {
            return Err(SimError::Config("p_baseline_test outside [0, 1]"));
        }
        if self.beta_x.len() != self.covariate_law.len() + 1 {
            return Err(SimError::Config("beta_x must cover the intercept and every covariate"));
        }
        if self.beta_w_slopes.len() != self.covariate_law.len() {
            return Err(SimError::Config("beta_w_slopes must cover every covariate"));
        }
        if self
            .beta_x
            .iter()
            .chain(&self.beta_w_slopes)
            .chain([&self.theta])
            .any(|b| !b.is_finite())
        {
            return Err(SimError::Config("coefficients must be finite"));
        }
        if !self.sigma.is_finite() || !(self.sigma > 0.0) {
            return Err(SimError::Config("sigma must be positive"));
        }
        if !(self.gap.0 > 0.0 && self.gap.0 < self.gap.1 && self.gap.1.is_finite()) {
            return Err(SimError::Config("screening gap bounds must satisfy 0 < lower < upper"));
        }
        if !self.censor_mean.is_finite() || !(self.censor_mean > 0.0) {
            return Err(SimError::Config("censor_mean must be positive"));
        }
        for law in &self.covariate_law {
            law.validate()?;
        }
        Ok(())
    }

    /// Per-column descriptions of the covariate law, for run metadata.
    pub fn covariate_descriptions(&self) -> Vec<String> {
        self.covariate_law.iter().map(|law| law.describe()).collect()
    }

    fn beta_w(&self) -> Vec<f64> {
        let mut beta = Vec::with_capacity(self.beta_w_slopes.len() + 1);
        beta.push(self.theta);
        beta.extend_from_slice(&self.beta_w_slopes);
        beta
    }
}

/// One stopping draw: whether the test at visit time `t` comes back
/// positive. The baseline visit is only tested when `r` is set, a subject
/// free of disease at the visit never tests positive, and a test with
/// disease present detects with probability `kappa`.
fn test_positive<R: Rng + ?Sized>(
    g: u8,
    x: f64,
    r: bool,
    is_baseline: bool,
    t: f64,
    kappa: f64,
    rng: &mut R,
) -> bool {
    if is_baseline && !r {
        return false;
    }
    let present = g == 1 || x <= t;
    present && rng.random::<f64>() < kappa
}

/// Generates a parametric cohort: per subject covariates, an AFT event
/// time, a probit prevalence score and a Bernoulli baseline-test indicator,
/// then visits at uniform gaps until the first positive test or right
/// censoring at the second visit plus an exponential offset.
///
/// Subjects use independent per-index RNG streams derived from `seed`, so
/// the output is identical for any thread count.
pub fn gen_sim1(config: &Sim1Config, seed: u64) -> Result<SimulatedCohort, SimError> {
    config.validate()?;
    let beta_w = config.beta_w();
    let pairs: Vec<(ScreeningRecord, SubjectTruth)> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            gen_sim1_subject(config, &beta_w, &mut rng)
        })
        .collect();
    Ok(assemble(pairs))
}

fn gen_sim1_subject<R: Rng + ?Sized>(
    config: &Sim1Config,
    beta_w: &[f64],
    rng: &mut R,
) -> (ScreeningRecord, SubjectTruth) {
    let mut z = Vec::with_capacity(config.covariate_law.len() + 1);
    z.push(1.0);
    for law in &config.covariate_law {
        z.push(law.sample(rng));
    }
    let dist = AftDist::new(config.family, &config.beta_x, config.sigma, &z)
        .expect("validated coefficients and finite covariates");
    let x = dist.sample_truncated(0.0, f64::INFINITY, rng).expect("full support");
    let psi: f64 = rng.sample(StandardNormal);
    let w = linear_predictor(beta_w, &z).expect("validated coefficients") + psi;
    let g = u8::from(w > 0.0);
    let r = rng.random::<f64>() < config.p_baseline_test;
    let truth = SubjectTruth { x, w, g, r: u8::from(r) };

    if test_positive(g, x, r, true, 0.0, config.kappa, rng) {
        assert!(g == 1, "positive baseline test without prevalence");
        let record = ScreeningRecord::new(vec![0.0], vec![true], true, z.clone(), z).unwrap();
        return (record, truth);
    }
    let mut visits = vec![0.0];
    let mut outcomes = vec![false];
    let offset = Exp::new(1.0 / config.censor_mean).expect("validated positive mean");
    let mut t = rng.random_range(config.gap.0..config.gap.1);
    let censor = t + offset.sample(rng);
    loop {
        visits.push(t);
        if test_positive(g, x, r, false, t, config.kappa, rng) {
            assert!(g == 1 || x <= t, "positive test before the event time");
            outcomes.push(true);
            break;
        }
        outcomes.push(false);
        let next = t + rng.random_range(config.gap.0..config.gap.1);
        if next > censor {
            visits.push(f64::INFINITY);
            outcomes.push(false);
            break;
        }
        t = next;
    }
    let record = ScreeningRecord::new(visits, outcomes, r, z.clone(), z).unwrap();
    (record, truth)
}

fn assemble(pairs: Vec<(ScreeningRecord, SubjectTruth)>) -> SimulatedCohort {
    let mut records = Vec::with_capacity(pairs.len());
    let mut truth = Vec::with_capacity(pairs.len());
    for (record, t) in pairs {
        records.push(record);
        truth.push(t);
    }
    let dataset = Dataset::new(records).expect("generated records share covariate dimensions");
    SimulatedCohort { dataset, truth }
}

/// Visit-schedule donors from a reference cohort plus the resampling pools
/// needed to extend a schedule beyond what its donor observed.
///
/// Fields are public so that tests and callers can assemble pools by hand;
/// donors must share covariate dimensions, difference pools must hold
/// positive gaps, and each censoring CDF must be a valid estimate.
#[derive(Debug, Clone)]
pub struct DonorPool {
    /// Reference records whose visit vectors are walked.
    pub donors: Vec<ScreeningRecord>,
    /// Gaps between consecutive finite visits of event subjects.
    pub event_diffs: Vec<f64>,
    /// Gaps between consecutive finite visits of right-censored subjects.
    pub censored_diffs: Vec<f64>,
    /// Bootstrapped estimates of the right-censoring time distribution.
    pub censor_cdfs: Vec<NpmleEstimate>,
}

/// Builds a donor pool from a reference cohort: splits consecutive-visit
/// gaps by event status and estimates the censoring-time distribution on
/// `bootstraps` resamples.
///
/// A censored subject's censoring time is only known to lie between its
/// last visit and the next visit that never happened, so each bootstrap
/// resamples the censored subjects, imputes the missing next gap from the
/// censored-group pool and fits the interval-censored NPMLE.
pub fn build_donor_pool(
    reference: &Dataset,
    bootstraps: usize,
    seed: u64,
) -> Result<DonorPool, SimError> {
    if bootstraps == 0 {
        return Err(SimError::Config("bootstraps must be positive"));
    }
    let mut event_diffs = Vec::new();
    let mut censored_diffs = Vec::new();
    let mut censored_last = Vec::new();
    for record in reference.records() {
        let finite: Vec<f64> =
            record.visits().iter().copied().filter(|v| v.is_finite()).collect();
        let diffs = finite.windows(2).map(|w| w[1] - w[0]);
        if record.is_right_censored() {
            censored_diffs.extend(diffs);
            censored_last.push(*finite.last().expect("records have a baseline visit"));
        } else {
            event_diffs.extend(diffs);
        }
    }
    if event_diffs.is_empty() {
        return Err(SimError::EmptyGroup("event"));
    }
    if censored_diffs.is_empty() {
        return Err(SimError::EmptyGroup("censored"));
    }
    let censor_cdfs: Vec<NpmleEstimate> = (0..bootstraps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let intervals: Vec<(f64, f64)> = (0..censored_last.len())
                .map(|_| {
                    let last = censored_last[rng.random_range(0..censored_last.len())];
                    let gap = censored_diffs[rng.random_range(0..censored_diffs.len())];
                    (last, last + gap)
                })
                .collect();
            turnbull_npmle(&intervals, 1e-7, 100_000)
                .expect("bootstrap intervals are nonempty with positive length")
        })
        .collect();
    Ok(DonorPool {
        donors: reference.records().to_vec(),
        event_diffs,
        censored_diffs,
        censor_cdfs,
    })
}

/// Right-censoring scheme for resampled cohorts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensoringScheme {
    /// Censor where the donor pool's schedules end.
    Observed,
    /// Push every drawn censoring time out by `omega` and keep screening,
    /// extending censored donors' schedules with censored-group gaps.
    Extended { omega: f64 },
}

/// True model parameters and censoring scheme for a resampled cohort.
#[derive(Debug, Clone)]
pub struct Sim2Settings {
    pub family: AftFamily,
    pub incidence: IncidenceParams,
    pub prevalence: PrevalenceParams,
    pub kappa: f64,
    pub censoring: CensoringScheme,
}

/// One right-censoring time from a randomly chosen bootstrap CDF,
/// constrained above `bound` by inverse sampling the conditional tail.
/// A CDF with no mass above the bound collapses the draw to the bound.
pub fn draw_censor<R: Rng + ?Sized>(pool: &DonorPool, bound: f64, rng: &mut R) -> f64 {
    let cdf = &pool.censor_cdfs[rng.random_range(0..pool.censor_cdfs.len())];
    let p0 = cdf.cdf_interpolated(bound);
    if p0 >= 1.0 - 1e-12 {
        return bound;
    }
    let u = p0 + (1.0 - p0) * rng.random::<f64>();
    cdf.quantile_interpolated(u).max(bound)
}

fn draw_gap<R: Rng + ?Sized>(diffs: &[f64], rng: &mut R) -> f64 {
    assert!(!diffs.is_empty(), "difference pool for schedule extension is empty");
    diffs[rng.random_range(0..diffs.len())]
}

/// Generates a resampled cohort of `n_sim` subjects. Each subject copies a
/// random donor's covariates and baseline-test indicator, draws fresh
/// latent truth from `settings`, walks the donor's visits through the
/// stopping rule and continues past the donor's schedule with resampled
/// gaps until the drawn censoring time.
///
/// Subjects use independent per-index RNG streams derived from `seed`, so
/// the output is identical for any thread count.
pub fn gen_sim2(
    pool: &DonorPool,
    settings: &Sim2Settings,
    n_sim: usize,
    seed: u64,
) -> Result<SimulatedCohort, SimError> {
    if n_sim == 0 {
        return Err(SimError::Config("n must be positive"));
    }
    if pool.donors.is_empty() {
        return Err(SimError::Config("donor pool has no donors"));
    }
    if pool.censor_cdfs.is_empty() {
        return Err(SimError::Config("donor pool has no censoring distributions"));
    }
    if !(settings.kappa > 0.0 && settings.kappa <= 1.0) {
        return Err(SimError::Config("kappa outside (0, 1]"));
    }
    if !settings.incidence.sigma.is_finite() || !(settings.incidence.sigma > 0.0) {
        return Err(SimError::Config("sigma must be positive"));
    }
    if let CensoringScheme::Extended { omega } = settings.censoring {
        if !omega.is_finite() || omega < 0.0 {
            return Err(SimError::Config("omega must be finite and nonnegative"));
        }
    }
    if settings.incidence.beta_x.len() != pool.donors[0].covariates_x().len() {
        return Err(SimError::Config("incidence coefficients do not match donor covariates"));
    }
    if settings.prevalence.beta_w.len() != pool.donors[0].covariates_w().len() {
        return Err(SimError::Config("prevalence coefficients do not match donor covariates"));
    }
    let pairs: Vec<(ScreeningRecord, SubjectTruth)> = (0..n_sim)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            gen_sim2_subject(pool, settings, &mut rng)
        })
        .collect();
    Ok(assemble(pairs))
}

fn gen_sim2_subject<R: Rng + ?Sized>(
    pool: &DonorPool,
    settings: &Sim2Settings,
    rng: &mut R,
) -> (ScreeningRecord, SubjectTruth) {
    let donor = &pool.donors[rng.random_range(0..pool.donors.len())];
    let z_x = donor.covariates_x().to_vec();
    let z_w = donor.covariates_w().to_vec();
    let r = donor.baseline_tested();
    let dist = AftDist::new(
        settings.family,
        &settings.incidence.beta_x,
        settings.incidence.sigma,
        &z_x,
    )
    .expect("validated coefficients and finite donor covariates");
    let x = dist.sample_truncated(0.0, f64::INFINITY, rng).expect("full support");
    let psi: f64 = rng.sample(StandardNormal);
    let w = linear_predictor(&settings.prevalence.beta_w, &z_w)
        .expect("validated coefficients") + psi;
    let g = u8::from(w > 0.0);
    let truth = SubjectTruth { x, w, g, r: u8::from(r) };

    let finite: Vec<f64> = donor.visits().iter().copied().filter(|v| v.is_finite()).collect();
    let mut visits = Vec::new();
    let mut outcomes = Vec::new();
    let mut stopped = false;
    for (j, &t) in finite.iter().enumerate() {
        visits.push(t);
        if test_positive(g, x, r, j == 0, t, settings.kappa, rng) {
            assert!(g == 1 || x <= t, "positive test before the event time");
            outcomes.push(true);
            stopped = true;
            break;
        }
        outcomes.push(false);
    }
    if !stopped {
        let donor_event = !donor.is_right_censored();
        let last = *finite.last().expect("records have a baseline visit");
        // An event donor's schedule ends because screening stopped, not
        // because follow-up did, so the schedule is extended. A censored
        // donor's schedule already ends at follow-up, except under extended
        // censoring where follow-up itself is pushed out.
        let extend = match settings.censoring {
            CensoringScheme::Observed => donor_event,
            CensoringScheme::Extended { .. } => true,
        };
        if extend {
            let mut censor = draw_censor(pool, last, rng);
            if let CensoringScheme::Extended { omega } = settings.censoring {
                censor += omega;
            }
            let diffs = if donor_event { &pool.event_diffs } else { &pool.censored_diffs };
            let mut t = last;
            loop {
                let next = t + draw_gap(diffs, rng);
                if next > censor {
                    visits.push(f64::INFINITY);
                    outcomes.push(false);
                    break;
                }
                visits.push(next);
                if test_positive(g, x, r, false, next, settings.kappa, rng) {
                    assert!(g == 1 || x <= next, "positive test before the event time");
                    outcomes.push(true);
                    break;
                }
                outcomes.push(false);
                t = next;
            }
        } else {
            visits.push(f64::INFINITY);
            outcomes.push(false);
        }
    }
    let record = ScreeningRecord::new(visits, outcomes, r, z_x, z_w).unwrap();
    (record, truth)
}

/// Benchmark statistics for comparing generated cohorts to a reference:
/// mean and standard deviation of the follow-up end (last finite visit),
/// mean number of finite visits, and the event fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortStats {
    pub mean_end: f64,
    pub sd_end: f64,
    pub mean_visits: f64,
    pub event_fraction: f64,
}

pub fn cohort_stats(dataset: &Dataset) -> CohortStats {
    assert!(!dataset.is_empty(), "statistics need at least one record");
    let n = dataset.len() as f64;
    let mut sum_end = 0.0;
    let mut sum_visits = 0.0;
    let mut events = 0usize;
    for record in dataset.records() {
        sum_end += record.last_finite_visit();
        sum_visits += record.visits().iter().filter(|v| v.is_finite()).count() as f64;
        events += usize::from(!record.is_right_censored());
    }
    let mean_end = sum_end / n;
    let ss: f64 = dataset
        .records()
        .iter()
        .map(|r| (r.last_finite_visit() - mean_end).powi(2))
        .sum();
    let sd_end = if dataset.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    CohortStats {
        mean_end,
        sd_end,
        mean_visits: sum_visits / n,
        event_fraction: events as f64 / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::norm_cdf;
    use crate::model::RecordKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(visits: &[f64], outcomes: &[bool], tested: bool) -> ScreeningRecord {
        ScreeningRecord::new(visits.to_vec(), outcomes.to_vec(), tested, vec![1.0], vec![1.0])
            .unwrap()
    }

    fn flat_cdf(support: Vec<(f64, f64)>, masses: Vec<f64>) -> NpmleEstimate {
        NpmleEstimate { support, masses, converged: true, iterations: 0, log_likelihood: 0.0 }
    }

    #[test]
    fn detection_rate_matches_sensitivity() {
        let config = Sim1Config::benchmark(100_000, 0.22, 0.8, 0.5);
        let cohort = gen_sim1(&config, 51).unwrap();
        let mut trials = 0u64;
        let mut hits = 0u64;
        for (record, truth) in cohort.dataset.records().iter().zip(&cohort.truth) {
            // The first visit with a test administered while disease is
            // present is a fresh Bernoulli(kappa) draw regardless of the
            // history before it.
            for (j, (&t, &pos)) in record.visits().iter().zip(record.outcomes()).enumerate() {
                if !t.is_finite() {
                    break;
                }
                let tested = j > 0 || record.baseline_tested();
                if tested && (truth.g == 1 || truth.x <= t) {
                    trials += 1;
                    hits += u64::from(pos);
                    break;
                }
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!(trials > 50_000, "only {trials} first-exposure tests");
        assert!((rate - 0.8).abs() < 0.004, "detection rate {rate} over {trials} trials");
    }

    #[test]
    fn perfect_test_brackets_the_event_time() {
        let config = Sim1Config::benchmark(2000, -50.0, 1.0, 1.0);
        let cohort = gen_sim1(&config, 52).unwrap();
        for (record, truth) in cohort.dataset.records().iter().zip(&cohort.truth) {
            assert_eq!(truth.g, 0);
            let m = record.visits().len();
            if record.is_right_censored() {
                assert!(truth.x > record.last_finite_visit());
            } else {
                assert!(m >= 2, "a non-prevalent event needs a follow-up visit");
                assert!(record.visits()[m - 2] < truth.x && truth.x <= record.visits()[m - 1]);
            }
        }
    }

    #[test]
    fn prevalent_tested_subjects_are_caught_at_baseline_under_a_perfect_test() {
        let config = Sim1Config::benchmark(2000, 50.0, 1.0, 1.0);
        let cohort = gen_sim1(&config, 53).unwrap();
        for (record, truth) in cohort.dataset.records().iter().zip(&cohort.truth) {
            assert_eq!(truth.g, 1);
            assert_eq!(record.kind(), RecordKind::PrevalentAtBaseline);
        }
    }

    #[test]
    fn empirical_prevalence_follows_the_probit_intercept() {
        let config = Sim1Config::benchmark(20_000, 0.22, 0.8, 1.0);
        let cohort = gen_sim1(&config, 54).unwrap();
        let prevalent =
            cohort.truth.iter().filter(|t| t.g == 1).count() as f64 / config.n as f64;
        // w = theta + 0.2 z_1 + 0.2 z_2 + psi is normal with variance 1.08.
        let expected = norm_cdf(0.22 / 1.08f64.sqrt());
        assert!((prevalent - expected).abs() < 0.012, "prevalence {prevalent} vs {expected}");
    }

    #[test]
    fn generated_records_always_validate() {
        let mut meta = ChaCha8Rng::seed_from_u64(55);
        let families = [
            AftFamily::Weibull,
            AftFamily::LogLogistic,
            AftFamily::LogNormal,
            AftFamily::Exponential,
        ];
        let laws = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
            0 => CovariateDist::StdNormal,
            1 => CovariateDist::Bernoulli(rng.random_range(0.1..0.9)),
            _ => CovariateDist::Uniform(-2.0, 3.0),
        };
        for trial in 0..20 {
            let gap_lo = meta.random_range(1.0..15.0);
            let config = Sim1Config {
                n: 5000,
                family: families[trial % families.len()],
                beta_x: vec![
                    meta.random_range(0.5..5.0),
                    meta.random_range(-0.5..0.5),
                    meta.random_range(-0.5..0.5),
                ],
                sigma: meta.random_range(0.2..1.2),
                theta: meta.random_range(-1.5..1.5),
                beta_w_slopes: vec![meta.random_range(-0.5..0.5), meta.random_range(-0.5..0.5)],
                kappa: meta.random_range(0.05..1.0),
                p_baseline_test: meta.random::<f64>(),
                covariate_law: vec![laws(&mut meta), laws(&mut meta)],
                gap: (gap_lo, gap_lo + meta.random_range(0.5..10.0)),
                censor_mean: meta.random_range(5.0..100.0),
            };
            // Record construction re-checks every invariant, so success of
            // generation is the assertion.
            let cohort = gen_sim1(&config, 1000 + trial as u64).unwrap();
            assert_eq!(cohort.truth.len(), config.n);
            for (record, truth) in cohort.dataset.records().iter().zip(&cohort.truth) {
                assert_eq!(truth.g == 1, truth.w > 0.0);
                assert_eq!(record.baseline_tested(), truth.r == 1);
                if record.known_prevalent() {
                    assert_eq!(truth.g, 1);
                }
            }
        }
    }

    #[test]
    fn output_is_identical_across_thread_counts() {
        let config = Sim1Config::benchmark(400, 0.11, 0.8, 1.0);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| gen_sim1(&config, 77).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.dataset, four.dataset);
        assert_eq!(one.truth, four.truth);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = Sim1Config::benchmark(10, 0.0, 0.8, 1.0);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.n = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.kappa = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.beta_x = vec![5.0, 0.2];
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.gap = (3.0, 2.0);
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.covariate_law = vec![CovariateDist::Bernoulli(1.5), CovariateDist::StdNormal];
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.censor_mean = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn donor_pool_matches_hand_enumeration() {
        let inf = f64::INFINITY;
        let reference = Dataset::new(vec![
            rec(&[0.0, 3.0, 6.0], &[false, false, true], true),
            rec(&[0.0, 2.0, 7.0, inf], &[false; 4], true),
            rec(&[0.0, 4.0], &[false, true], false),
        ])
        .unwrap();
        let pool = build_donor_pool(&reference, 10, 61).unwrap();
        assert_eq!(pool.event_diffs, vec![3.0, 3.0, 4.0]);
        assert_eq!(pool.censored_diffs, vec![2.0, 5.0]);
        assert_eq!(pool.donors.len(), 3);
        assert_eq!(pool.censor_cdfs.len(), 10);
        for cdf in &pool.censor_cdfs {
            assert!(cdf.converged);
            assert!((cdf.masses.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            // The single censored subject ends at 7 and its imputed next
            // gap is 2 or 5, so all censoring mass lies in (7, 12].
            for &(lo, hi) in &cdf.support {
                assert!(lo >= 7.0 && hi <= 12.0);
            }
        }

        let all_censored =
            Dataset::new(vec![rec(&[0.0, 2.0, inf], &[false; 3], true)]).unwrap();
        assert!(matches!(
            build_donor_pool(&all_censored, 5, 1),
            Err(SimError::EmptyGroup("event"))
        ));
        let all_events =
            Dataset::new(vec![rec(&[0.0, 3.0], &[false, true], true)]).unwrap();
        assert!(matches!(
            build_donor_pool(&all_events, 5, 1),
            Err(SimError::EmptyGroup("censored"))
        ));
    }

    #[test]
    fn censor_draws_respect_the_lower_bound() {
        let pool = DonorPool {
            donors: vec![rec(&[0.0, 3.0], &[false, true], true)],
            event_diffs: vec![3.0],
            censored_diffs: vec![3.0],
            censor_cdfs: vec![flat_cdf(vec![(7.0, 9.0), (9.0, 12.0)], vec![0.5, 0.5])],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        for bound in [0.0, 8.0, 11.9] {
            for _ in 0..300 {
                let v = draw_censor(&pool, bound, &mut rng);
                assert!(v > bound && v <= 12.0, "draw {v} against bound {bound}");
            }
        }
        // No mass above the bound collapses the draw onto the bound.
        for _ in 0..10 {
            assert_eq!(draw_censor(&pool, 20.0, &mut rng), 20.0);
        }
    }

    #[test]
    fn single_donor_schedule_is_replayed_exactly() {
        let inf = f64::INFINITY;
        let pool = DonorPool {
            donors: vec![rec(&[0.0, 3.0, 6.0, inf], &[false; 4], true)],
            event_diffs: Vec::new(),
            censored_diffs: vec![3.0, 3.0],
            censor_cdfs: vec![flat_cdf(vec![(6.0, 9.0)], vec![1.0])],
        };
        let settings = Sim2Settings {
            family: AftFamily::Weibull,
            incidence: IncidenceParams { beta_x: vec![1.5], sigma: 0.5 },
            prevalence: PrevalenceParams { beta_w: vec![0.0] },
            kappa: 1.0,
            censoring: CensoringScheme::Observed,
        };
        let cohort = gen_sim2(&pool, &settings, 500, 63).unwrap();
        let mut prevalent = 0usize;
        let mut events = 0usize;
        for (record, truth) in cohort.dataset.records().iter().zip(&cohort.truth) {
            for &v in record.visits() {
                assert!(
                    v == 0.0 || v == 3.0 || v == 6.0 || v == inf,
                    "visit {v} outside the donor schedule"
                );
            }
            // A perfect baseline test catches every prevalent subject.
            assert_eq!(truth.g == 1, record.known_prevalent());
            prevalent += usize::from(truth.g == 1);
            if record.is_right_censored() {
                assert!(truth.g == 0 && truth.x > 6.0);
            } else if !record.known_prevalent() {
                events += 1;
                let m = record.visits().len();
                assert!(record.visits()[m - 2] < truth.x && truth.x <= record.visits()[m - 1]);
            }
        }
        assert!(prevalent > 150 && events > 30, "{prevalent} prevalent, {events} events");
    }

    #[test]
    fn extension_lengthens_follow_up_by_omega() {
        // One event donor and latent truth that never triggers a positive
        // test, so every subject runs the schedule extension to censoring.
        let pool = DonorPool {
            donors: vec![rec(&[0.0, 3.0, 6.0], &[false, false, true], true)],
            event_diffs: vec![2.0, 3.0],
            censored_diffs: Vec::new(),
            censor_cdfs: vec![flat_cdf(vec![(10.0, 30.0)], vec![1.0])],
        };
        let settings = |censoring| Sim2Settings {
            family: AftFamily::Weibull,
            incidence: IncidenceParams { beta_x: vec![20.0], sigma: 0.5 },
            prevalence: PrevalenceParams { beta_w: vec![-60.0] },
            kappa: 0.9,
            censoring,
        };
        let observed =
            gen_sim2(&pool, &settings(CensoringScheme::Observed), 4000, 64).unwrap();
        let extended =
            gen_sim2(&pool, &settings(CensoringScheme::Extended { omega: 10.0 }), 4000, 64)
                .unwrap();
        for cohort in [&observed, &extended] {
            assert!(cohort.dataset.records().iter().all(|r| r.is_right_censored()));
        }
        let mean_end = |cohort: &SimulatedCohort| {
            cohort.dataset.records().iter().map(|r| r.last_finite_visit()).sum::<f64>()
                / cohort.dataset.len() as f64
        };
        let delta = mean_end(&extended) - mean_end(&observed);
        assert!((delta - 10.0).abs() < 0.5, "follow-up gain {delta}");
    }

    #[test]
    fn zero_offset_extension_matches_observed_censoring() {
        // Censored donors all end at 9 and the censoring CDF concentrates
        // below the next plausible visit, so a zero-offset extension must
        // add no visits and reproduce observed-mode cohorts exactly.
        let inf = f64::INFINITY;
        let donor = rec(&[0.0, 3.0, 6.0, 9.0, inf], &[false; 5], true);
        let reference = Dataset::new(vec![donor.clone(); 30]).unwrap();
        let mut censored_diffs = Vec::new();
        for record in reference.records() {
            let finite: Vec<f64> =
                record.visits().iter().copied().filter(|v| v.is_finite()).collect();
            censored_diffs.extend(finite.windows(2).map(|w| w[1] - w[0]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let intervals: Vec<(f64, f64)> = (0..30)
            .map(|_| (9.0, 9.0 + censored_diffs[rng.random_range(0..censored_diffs.len())]))
            .collect();
        let pool = DonorPool {
            donors: reference.records().to_vec(),
            event_diffs: Vec::new(),
            censored_diffs,
            censor_cdfs: vec![turnbull_npmle(&intervals, 1e-9, 10_000).unwrap()],
        };
        let settings = |censoring| Sim2Settings {
            family: AftFamily::Weibull,
            incidence: IncidenceParams { beta_x: vec![2.0], sigma: 0.4 },
            prevalence: PrevalenceParams { beta_w: vec![-0.8] },
            kappa: 0.7,
            censoring,
        };
        let observed =
            gen_sim2(&pool, &settings(CensoringScheme::Observed), 10_000, 66).unwrap();
        let extended =
            gen_sim2(&pool, &settings(CensoringScheme::Extended { omega: 0.0 }), 10_000, 66)
                .unwrap();
        let ends = |cohort: &SimulatedCohort| -> Vec<f64> {
            cohort
                .dataset
                .records()
                .iter()
                .filter(|r| r.is_right_censored())
                .map(|r| r.last_finite_visit())
                .collect()
        };
        let p = ks_p_value(ends(&observed), ends(&extended));
        assert!(p > 0.01, "censoring-time distributions diverge, p = {p}");
        assert_eq!(observed.dataset, extended.dataset);
    }

    fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        // Both empirical CDFs are compared after each distinct value so
        // that ties move the two pointers together.
        while i < a.len() || j < b.len() {
            let v = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => unreachable!(),
            };
            while i < a.len() && a[i] <= v {
                i += 1;
            }
            while j < b.len() && b[j] <= v {
                j += 1;
            }
            d = d.max((i as f64 / na - j as f64 / nb).abs());
        }
        let ne = (na * nb / (na + nb)).sqrt();
        let lambda = (ne + 0.12 + 0.11 / ne) * d;
        if lambda < 1e-3 {
            return 1.0;
        }
        let mut p = 0.0;
        for k in 1..=100u32 {
            let term = 2.0 * (-2.0 * (k as f64 * lambda).powi(2)).exp();
            p += if k % 2 == 1 { term } else { -term };
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn resampled_cohorts_resemble_their_reference() {
        let reference_config = Sim1Config {
            n: 300,
            family: AftFamily::Weibull,
            beta_x: vec![2.8, -0.1, -0.2],
            sigma: 0.75,
            theta: -0.65,
            beta_w_slopes: vec![0.1, 0.1],
            kappa: 0.8,
            p_baseline_test: 0.93,
            covariate_law: vec![CovariateDist::StdNormal; 2],
            gap: (1.5, 6.5),
            censor_mean: 6.0,
        };
        let reference = gen_sim1(&reference_config, 71).unwrap();
        let pool = build_donor_pool(&reference.dataset, 25, 72).unwrap();
        let settings = Sim2Settings {
            family: AftFamily::Weibull,
            incidence: IncidenceParams { beta_x: vec![2.8, -0.1, -0.2], sigma: 0.75 },
            prevalence: PrevalenceParams { beta_w: vec![-0.65, 0.1, 0.1] },
            kappa: 0.8,
            censoring: CensoringScheme::Observed,
        };
        let cohort = gen_sim2(&pool, &settings, 2000, 73).unwrap();
        assert_eq!(cohort.truth.len(), 2000);
        let tested = cohort
            .dataset
            .records()
            .iter()
            .filter(|r| r.baseline_tested())
            .count() as f64 / 2000.0;
        let tested_ref = reference
            .dataset
            .records()
            .iter()
            .filter(|r| r.baseline_tested())
            .count() as f64 / 300.0;
        assert!((tested - tested_ref).abs() < 0.05, "tested fraction {tested} vs {tested_ref}");
        let stats = cohort_stats(&cohort.dataset);
        let ref_stats = cohort_stats(&reference.dataset);
        assert!(stats.event_fraction > 0.05 && stats.event_fraction < 0.95);
        assert!((stats.mean_end - ref_stats.mean_end).abs() < 0.25 * ref_stats.mean_end + 1.0);

        let extended = gen_sim2(
            &pool,
            &Sim2Settings { censoring: CensoringScheme::Extended { omega: 10.0 }, ..settings },
            2000,
            73,
        )
        .unwrap();
        let ext_stats = cohort_stats(&extended.dataset);
        assert!(
            ext_stats.mean_end > stats.mean_end + 2.0,
            "extension did not lengthen follow-up: {} vs {}",
            ext_stats.mean_end,
            stats.mean_end
        );
        for (record, truth) in extended.dataset.records().iter().zip(&extended.truth) {
            assert_eq!(truth.g == 1, truth.w > 0.0);
            if record.known_prevalent() {
                assert_eq!(truth.g, 1);
            }
        }
    }

    #[test]
    fn cohort_statistics_match_hand_computation() {
        let inf = f64::INFINITY;
        let dataset = Dataset::new(vec![
            rec(&[0.0, 3.0, 6.0], &[false, false, true], true),
            rec(&[0.0, 2.0, 7.0, inf], &[false; 4], true),
            rec(&[0.0], &[true], true),
        ])
        .unwrap();
        let stats = cohort_stats(&dataset);
        assert!((stats.mean_end - 13.0 / 3.0).abs() < 1e-12);
        let mean = 13.0 / 3.0;
        let ss: f64 = [6.0, 7.0, 0.0].iter().map(|e| (e - mean) * (e - mean)).sum();
        assert!((stats.sd_end - (ss / 2.0).sqrt()).abs() < 1e-12);
        assert!((stats.mean_visits - 7.0 / 3.0).abs() < 1e-12);
        assert!((stats.event_fraction - 2.0 / 3.0).abs() < 1e-12);
    }
}
