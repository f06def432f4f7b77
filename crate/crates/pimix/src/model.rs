//! Screening records, parameter blocks, priors and sampler state.
//!
//! A record holds the ordered test times of one subject. The first visit is
//! always time zero (baseline); a final infinite visit marks right censoring.
//! At most one outcome is positive and only at the last finite visit, because
//! screening stops at the first positive test.

use crate::dist::AftFamily;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("record must contain at least one visit")]
    Empty,
    #[error("first visit must be time 0, got {0}")]
    BaselineNotZero(f64),
    #[error("visit times must be finite, strictly increasing and non-negative")]
    NotIncreasing,
    #[error("only the final visit may be infinite")]
    InteriorInfinity,
    #[error("outcome count {outcomes} does not match visit count {visits}")]
    OutcomeLength { visits: usize, outcomes: usize },
    #[error("a positive outcome is only allowed at the final finite visit")]
    MisplacedPositive,
    #[error("a right-censored record cannot end in a positive outcome")]
    PositiveAtCensoring,
    #[error("a baseline-only record requires a tested, positive baseline")]
    InvalidBaselineOnly,
    #[error("covariates must be finite")]
    NonFiniteCovariate,
    #[error("covariate dimensions are inconsistent across records")]
    InconsistentDimensions,
}

/// Shape of a record after classification; the six observable data patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    /// Tested at baseline, positive at a later visit.
    EventWithBaseline,
    /// Tested at baseline, at least one negative follow-up, then censored.
    CensoredWithBaseline,
    /// Positive at the baseline test itself; prevalence observed directly.
    PrevalentAtBaseline,
    /// Tested negative at baseline and censored before any follow-up.
    BaselineOnlyCensored,
    /// No baseline test, positive at some follow-up visit.
    EventNoBaseline,
    /// No baseline test, censored after negative follow-ups.
    CensoredNoBaseline,
}

impl RecordKind {
    pub const ALL: [RecordKind; 6] = [
        RecordKind::EventWithBaseline,
        RecordKind::CensoredWithBaseline,
        RecordKind::PrevalentAtBaseline,
        RecordKind::BaselineOnlyCensored,
        RecordKind::EventNoBaseline,
        RecordKind::CensoredNoBaseline,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RecordKind::EventWithBaseline => "event, baseline tested",
            RecordKind::CensoredWithBaseline => "censored, baseline tested",
            RecordKind::PrevalentAtBaseline => "prevalent at baseline",
            RecordKind::BaselineOnlyCensored => "baseline only, censored",
            RecordKind::EventNoBaseline => "event, no baseline test",
            RecordKind::CensoredNoBaseline => "censored, no baseline test",
        }
    }
}

/// One subject's screening history plus covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningRecord {
    visits: Vec<f64>,
    outcomes: Vec<bool>,
    baseline_tested: bool,
    covariates_x: Vec<f64>,
    covariates_w: Vec<f64>,
}

impl ScreeningRecord {
    pub fn new(
        visits: Vec<f64>,
        outcomes: Vec<bool>,
        baseline_tested: bool,
        covariates_x: Vec<f64>,
        covariates_w: Vec<f64>,
    ) -> Result<Self, RecordError> {
        if visits.is_empty() {
            return Err(RecordError::Empty);
        }
        if visits[0] != 0.0 {
            return Err(RecordError::BaselineNotZero(visits[0]));
        }
        for (j, w) in visits.windows(2).enumerate() {
            if w[0].is_nan() || w[1].is_nan() || !(w[0] < w[1]) {
                return Err(RecordError::NotIncreasing);
            }
            // Only the final entry may be the censoring sentinel.
            if w[0].is_infinite() || (w[1].is_infinite() && j + 2 != visits.len()) {
                return Err(RecordError::InteriorInfinity);
            }
        }
        if outcomes.len() != visits.len() {
            return Err(RecordError::OutcomeLength {
                visits: visits.len(),
                outcomes: outcomes.len(),
            });
        }
        let c = visits.len();
        for (j, &pos) in outcomes.iter().enumerate() {
            if pos && j + 1 != c {
                return Err(RecordError::MisplacedPositive);
            }
        }
        if visits[c - 1].is_infinite() && outcomes[c - 1] {
            return Err(RecordError::PositiveAtCensoring);
        }
        if c == 1 && !(baseline_tested && outcomes[0]) {
            return Err(RecordError::InvalidBaselineOnly);
        }
        if c > 1 && outcomes[0] {
            return Err(RecordError::MisplacedPositive);
        }
        if covariates_x.iter().chain(&covariates_w).any(|v| !v.is_finite()) {
            return Err(RecordError::NonFiniteCovariate);
        }
        Ok(ScreeningRecord { visits, outcomes, baseline_tested, covariates_x, covariates_w })
    }

    /// Visit times including the trailing censoring sentinel, if any.
    pub fn visits(&self) -> &[f64] {
        &self.visits
    }

    pub fn outcomes(&self) -> &[bool] {
        &self.outcomes
    }

    /// Number of visits, censoring sentinel included.
    pub fn n_visits(&self) -> usize {
        self.visits.len()
    }

    /// Whether the subject was tested at baseline.
    pub fn baseline_tested(&self) -> bool {
        self.baseline_tested
    }

    /// Outcome of the final visit: true when screening ended in a positive.
    pub fn delta(&self) -> bool {
        *self.outcomes.last().unwrap()
    }

    /// True when follow-up ended without a positive test.
    pub fn is_right_censored(&self) -> bool {
        self.visits.last().unwrap().is_infinite()
    }

    /// Last visit time; infinite for right-censored records.
    pub fn last_visit(&self) -> f64 {
        *self.visits.last().unwrap()
    }

    /// Largest finite visit time.
    pub fn last_finite_visit(&self) -> f64 {
        if self.is_right_censored() {
            self.visits[self.visits.len() - 2]
        } else {
            *self.visits.last().unwrap()
        }
    }

    /// True for records that observe prevalence directly at baseline.
    pub fn known_prevalent(&self) -> bool {
        self.visits.len() == 1
    }

    /// Number of visits at or after time `x`; the censoring sentinel counts.
    pub fn visits_at_or_after(&self, x: f64) -> usize {
        self.visits.iter().filter(|v| **v >= x).count()
    }

    /// False negatives accumulated by a prevalent subject: every test before
    /// the final one missed, plus the baseline test when it was taken.
    pub fn prevalent_miss_count(&self) -> usize {
        self.visits.len() + usize::from(self.baseline_tested) - 2
    }

    pub fn covariates_x(&self) -> &[f64] {
        &self.covariates_x
    }

    pub fn covariates_w(&self) -> &[f64] {
        &self.covariates_w
    }

    pub fn kind(&self) -> RecordKind {
        let censored = self.is_right_censored();
        match (self.baseline_tested, self.visits.len(), censored) {
            (true, 1, _) => RecordKind::PrevalentAtBaseline,
            (true, 2, true) => RecordKind::BaselineOnlyCensored,
            (true, _, true) => RecordKind::CensoredWithBaseline,
            (true, _, false) => RecordKind::EventWithBaseline,
            (false, _, true) => RecordKind::CensoredNoBaseline,
            (false, _, false) => RecordKind::EventNoBaseline,
        }
    }
}

/// A validated collection of records with consistent covariate dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ScreeningRecord>,
}

impl Dataset {
    /// Builds a dataset; empty collections are allowed (and carry zero
    /// likelihood information) but the sampler itself requires records.
    pub fn new(records: Vec<ScreeningRecord>) -> Result<Self, RecordError> {
        if let Some(first) = records.first() {
            let p_x = first.covariates_x.len();
            let p_w = first.covariates_w.len();
            if records
                .iter()
                .any(|r| r.covariates_x.len() != p_x || r.covariates_w.len() != p_w)
            {
                return Err(RecordError::InconsistentDimensions);
            }
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[ScreeningRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Covariate dimension of the incidence model, intercept included.
    pub fn p_x(&self) -> usize {
        self.records.first().map_or(0, |r| r.covariates_x.len())
    }

    /// Covariate dimension of the prevalence model, intercept included.
    pub fn p_w(&self) -> usize {
        self.records.first().map_or(0, |r| r.covariates_w.len())
    }

    /// Record counts per observable pattern.
    pub fn kind_counts(&self) -> Vec<(RecordKind, usize)> {
        RecordKind::ALL
            .iter()
            .map(|&k| (k, self.records.iter().filter(|r| r.kind() == k).count()))
            .collect()
    }
}

/// Test sensitivity; the probability that a test administered while disease
/// is present comes back positive. Specificity is taken as perfect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity(f64);

impl Sensitivity {
    pub fn new(value: f64) -> Result<Self, InvalidSensitivity> {
        if value > 0.0 && value <= 1.0 {
            Ok(Sensitivity(value))
        } else {
            Err(InvalidSensitivity(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("sensitivity must lie in (0, 1], got {0}")]
pub struct InvalidSensitivity(pub f64);

/// Incidence model coefficients and log-time scale.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceParams {
    pub beta_x: Vec<f64>,
    pub sigma: f64,
}

/// Prevalence model (probit) coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceParams {
    pub beta_w: Vec<f64>,
}

/// Prior on the test sensitivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaPrior {
    /// Beta(1, 1).
    Uniform,
    Beta { alpha1: f64, alpha2: f64 },
    /// Sensitivity held fixed; excluded from sampling.
    Point { value: f64 },
}

impl KappaPrior {
    pub fn validate(&self) -> Result<(), PriorError> {
        match *self {
            KappaPrior::Uniform => Ok(()),
            KappaPrior::Beta { alpha1, alpha2 } => {
                if alpha1 > 0.0 && alpha2 > 0.0 && alpha1.is_finite() && alpha2.is_finite() {
                    Ok(())
                } else {
                    Err(PriorError::BetaShape { alpha1, alpha2 })
                }
            }
            KappaPrior::Point { value } => {
                Sensitivity::new(value).map(|_| ()).map_err(|_| PriorError::PointValue(value))
            }
        }
    }

    /// Beta pseudo-counts; the uniform prior is Beta(1, 1).
    pub fn beta_shapes(&self) -> Option<(f64, f64)> {
        match *self {
            KappaPrior::Uniform => Some((1.0, 1.0)),
            KappaPrior::Beta { alpha1, alpha2 } => Some((alpha1, alpha2)),
            KappaPrior::Point { .. } => None,
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self, KappaPrior::Point { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PriorError {
    #[error("beta prior shapes must be positive and finite, got ({alpha1}, {alpha2})")]
    BetaShape { alpha1: f64, alpha2: f64 },
    #[error("point prior sensitivity must lie in (0, 1], got {0}")]
    PointValue(f64),
    #[error("prior variance must be positive and finite, got {0}")]
    Variance(f64),
}

/// Prior hyperparameters shared by every fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Prior variance of each incidence coefficient.
    pub tau_x: f64,
    /// Prior variance of each prevalence coefficient.
    pub tau_w: f64,
    /// Variance of the half-normal prior on sigma.
    pub lambda: f64,
    pub kappa: KappaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { tau_x: 1.0, tau_w: 1.0, lambda: 1.0, kappa: KappaPrior::Uniform }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), PriorError> {
        for v in [self.tau_x, self.tau_w, self.lambda] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PriorError::Variance(v));
            }
        }
        self.kappa.validate()
    }
}

/// Everything that defines the model for a fit: family plus priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: AftFamily,
    pub prior: PriorConfig,
}

impl ModelSpec {
    pub fn new(family: AftFamily, prior: PriorConfig) -> Result<Self, PriorError> {
        prior.validate()?;
        Ok(ModelSpec { family, prior })
    }
}

/// Full state of one chain: parameters, latent augmentation and its RNG.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub incidence: IncidenceParams,
    pub prevalence: PrevalenceParams,
    pub kappa: f64,
    /// Latent event times, one per subject.
    pub x_aug: Vec<f64>,
    /// Latent probit scores, one per subject.
    pub w_aug: Vec<f64>,
    /// Latent prevalence indicators; 1 exactly when the score is positive.
    pub g_aug: Vec<u8>,
    pub rng: ChaCha8Rng,
}

impl ChainState {
    /// Checks the augmentation invariants; used after each sweep in debug
    /// builds and by tests.
    pub fn check_consistency(&self, dataset: &Dataset) -> bool {
        if self.x_aug.len() != dataset.len()
            || self.w_aug.len() != dataset.len()
            || self.g_aug.len() != dataset.len()
        {
            return false;
        }
        for (i, rec) in dataset.records().iter().enumerate() {
            let g = self.g_aug[i];
            if (self.w_aug[i] > 0.0) != (g == 1) {
                return false;
            }
            if rec.known_prevalent() && g != 1 {
                return false;
            }
            if !(self.x_aug[i] > 0.0) {
                return false;
            }
            // Incident subjects carry an event time inside the observed span.
            if g == 0 && self.x_aug[i] > rec.last_visit() {
                return false;
            }
        }
        true
    }
}
