//! Metropolis-within-Gibbs sampler with data augmentation.
//!
//! Each sweep updates, in order: the latent class of every subject with
//! the onset time and probit score integrated out, the probit score, the
//! onset time, the incidence block (coefficients and log scale) by a joint
//! random walk, the prevalence coefficients from their conjugate normal
//! conditional, and the sensitivity from its conjugate beta conditional.
//!
//! The class update integrates the within-class latent variables out, so
//! a subject can switch class even when its current onset time would make
//! the other class impossible; updating the score and onset time right
//! after restores a consistent augmented state.

use crate::diagnostics::{ess_total, split_rhat, waic_from_accs, LogMeanAcc, Waic};
use crate::dist::{sample_truncated_normal, AftDist, DistError};
use crate::likelihood::{
    collapsed_prevalence_prob, dataset_loglik, IntervalWeights, KappaStats, LikelihoodError,
};
use crate::model::{
    ChainState, Dataset, IncidenceParams, ModelSpec, PrevalenceParams, PriorError,
    ScreeningRecord,
};
use crate::rng::{derive_seed, pack_stream, stream_rng};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("cannot fit an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("record {subject}: {source}")]
    Subject { subject: usize, source: LikelihoodError },
    #[error("invalid sampler configuration: {0}")]
    Config(&'static str),
    #[error("proposal covariance must be a symmetric positive semidefinite matrix of dimension {expected}")]
    BadProposal { expected: usize },
    #[error("prevalence conditional solve failed; covariates may be collinear beyond repair")]
    PrevalenceSolve,
}

/// What the sampler retains for model comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoglikStorage {
    /// Full draws-by-records matrix; memory grows as draws times records.
    Matrix,
    /// Mergeable per-block accumulators; constant memory in the number of
    /// draws, enough for WAIC but not for draw-level inspection.
    Streaming,
    /// Nothing; WAIC unavailable.
    Off,
}

/// Sampler settings. Burn-in is always the first half of the stored
/// draws at the moment the run stops.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Hard cap on Gibbs sweeps per chain.
    pub max_iters: usize,
    /// Convergence is tested every this many sweeps.
    pub check_every: usize,
    /// Keep one draw per this many sweeps.
    pub thin: usize,
    pub seed: u64,
    pub rhat_threshold: f64,
    /// Minimum effective sample size summed over chains, per parameter.
    pub min_ess: f64,
    /// Covariance of the joint proposal on (beta_x, log sigma), row-major;
    /// None means 0.01 times the identity.
    pub proposal_covariance: Option<Vec<Vec<f64>>>,
    /// Scale the proposal towards 23.4% acceptance during the first
    /// check_every / 2 sweeps, then freeze. The frozen portion never
    /// overlaps the retained draws.
    pub adapt_proposal: bool,
    /// Draw each subject's latent block from a counter-derived stream so
    /// subjects can be updated in parallel with reproducible results.
    pub parallel_units: bool,
    pub loglik: LoglikStorage,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            max_iters: 500_000,
            check_every: 20_000,
            thin: 1,
            seed: 0,
            rhat_threshold: 1.1,
            min_ess: 40.0,
            proposal_covariance: None,
            adapt_proposal: true,
            parallel_units: false,
            loglik: LoglikStorage::Streaming,
        }
    }
}

/// Robbins-Monro target acceptance rate for the incidence random walk.
const TARGET_ACCEPT: f64 = 0.234;

/// Stored draws of one chain, row-major with the listed strides.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub p_x: usize,
    pub p_w: usize,
    /// Flattened beta_x draws, stride `p_x`.
    pub beta_x: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Flattened beta_w draws, stride `p_w`.
    pub beta_w: Vec<f64>,
    pub kappa: Vec<f64>,
    /// Number of subjects assigned to the prevalent class at each draw.
    pub latent_g_ones: Vec<u32>,
    pub accepted: u64,
    pub proposed: u64,
    /// Onset draws that fell back to a uniform on an interval because the
    /// categorical weights carried no representable mass.
    pub fallback_draws: u64,
    /// Final log proposal scale after adaptation.
    pub log_scale: f64,
}

impl ChainDraws {
    fn new(p_x: usize, p_w: usize) -> ChainDraws {
        ChainDraws {
            p_x,
            p_w,
            beta_x: Vec::new(),
            sigma: Vec::new(),
            beta_w: Vec::new(),
            kappa: Vec::new(),
            latent_g_ones: Vec::new(),
            accepted: 0,
            proposed: 0,
            fallback_draws: 0,
            log_scale: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// One stored draw as parameter blocks.
    pub fn draw(&self, t: usize) -> (IncidenceParams, PrevalenceParams, f64) {
        (
            IncidenceParams {
                beta_x: self.beta_x[t * self.p_x..(t + 1) * self.p_x].to_vec(),
                sigma: self.sigma[t],
            },
            PrevalenceParams { beta_w: self.beta_w[t * self.p_w..(t + 1) * self.p_w].to_vec() },
            self.kappa[t],
        )
    }

    fn push(&mut self, state: &ChainState) {
        self.beta_x.extend_from_slice(&state.incidence.beta_x);
        self.sigma.push(state.incidence.sigma);
        self.beta_w.extend_from_slice(&state.prevalence.beta_w);
        self.kappa.push(state.kappa);
        self.latent_g_ones.push(state.g_aug.iter().map(|&g| u32::from(g)).sum());
    }

    /// Series of one scalar column over the stored window `[from, to)`.
    fn column(&self, col: &ParamColumn, from: usize, to: usize) -> Vec<f64> {
        match *col {
            ParamColumn::BetaX(j) => {
                (from..to).map(|t| self.beta_x[t * self.p_x + j]).collect()
            }
            ParamColumn::Sigma => self.sigma[from..to].to_vec(),
            ParamColumn::BetaW(j) => {
                (from..to).map(|t| self.beta_w[t * self.p_w + j]).collect()
            }
            ParamColumn::Kappa => self.kappa[from..to].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamColumn {
    BetaX(usize),
    Sigma,
    BetaW(usize),
    Kappa,
}

impl ParamColumn {
    fn name(&self) -> String {
        match *self {
            ParamColumn::BetaX(j) => format!("beta_x[{j}]"),
            ParamColumn::Sigma => "sigma".to_string(),
            ParamColumn::BetaW(j) => format!("beta_w[{j}]"),
            ParamColumn::Kappa => "kappa".to_string(),
        }
    }
}

/// Convergence summary of one monitored parameter at the last check.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
    /// True when every chain held the parameter constant over the window,
    /// which makes the statistics meaningless; such parameters do not
    /// block convergence.
    pub constant: bool,
}

impl ParamDiagnostic {
    pub fn passes(&self, rhat_threshold: f64, min_ess: f64) -> bool {
        self.constant || (self.rhat <= rhat_threshold && self.ess >= min_ess)
    }
}

/// One posterior parameter draw, pooled across chains.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub incidence: IncidenceParams,
    pub prevalence: PrevalenceParams,
    pub kappa: f64,
}

/// Everything a finished run returns.
#[derive(Debug)]
pub struct FitResult {
    pub chains: Vec<ChainDraws>,
    pub converged: bool,
    /// Sweeps actually run per chain.
    pub iterations: usize,
    /// Stored-draw index where retention starts; the first half is burn-in.
    pub burn_in: usize,
    pub diagnostics: Vec<ParamDiagnostic>,
    pub waic: Option<Waic>,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Retained draws of one chain as column access into `[burn_in, len)`.
    pub fn retained_len(&self) -> usize {
        self.chains.first().map_or(0, |c| c.len() - self.burn_in)
    }

    /// Pooled post-burn-in parameter draws, chain by chain.
    pub fn posterior_draws(&self) -> impl Iterator<Item = PosteriorDraw> + '_ {
        self.chains.iter().flat_map(move |c| {
            (self.burn_in..c.len()).map(move |t| {
                let (incidence, prevalence, kappa) = c.draw(t);
                PosteriorDraw { incidence, prevalence, kappa }
            })
        })
    }
}

/// Lower-triangular factor of a symmetric positive semidefinite matrix.
///
/// Zero pivots are tolerated: a coordinate with zero variance simply
/// never moves, which is occasionally useful for holding a parameter
/// fixed through the proposal.
fn psd_cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if a[i].len() != n {
            return None;
        }
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s < -1e-10 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.max(0.0).sqrt();
            } else {
                l[i][j] = if l[j][j] > 0.0 { s / l[j][j] } else { 0.0 };
            }
        }
    }
    Some(l)
}

/// Per-chain scratch buffers reused across sweeps. Opaque; obtain one
/// from [`GibbsKernel::make_scratch`] and hand it back to every sweep.
#[derive(Debug)]
pub struct Scratch {
    weights: Vec<IntervalWeights>,
    /// Incidence linear predictor per subject under the current beta_x.
    mu_x: Vec<f64>,
    /// Prevalence linear predictor per subject under the current beta_w.
    lin_w: Vec<f64>,
    /// Log incidence density at the current onset times, by subject.
    logf: Vec<f64>,
    fallback: Vec<u8>,
    theta_prop: Vec<f64>,
    eps: Vec<f64>,
}

impl Scratch {
    fn new(n: usize, dim_theta: usize) -> Scratch {
        Scratch {
            weights: (0..n).map(|_| IntervalWeights::empty()).collect(),
            mu_x: vec![0.0; n],
            lin_w: vec![0.0; n],
            logf: vec![0.0; n],
            fallback: vec![0; n],
            theta_prop: vec![0.0; dim_theta],
            eps: vec![0.0; dim_theta],
        }
    }
}

/// Outcome of one sweep that the runner needs.
#[derive(Debug, Clone, Copy)]
pub struct SweepStats {
    /// Metropolis acceptance probability of this sweep's proposal.
    pub accept_prob: f64,
    pub accepted: bool,
    /// Subjects whose onset draw used the uniform fallback.
    pub fallbacks: u64,
}

/// The transition kernel: dataset, model and precomputed constants.
///
/// Exposed so that exactness checks can drive single sweeps directly.
pub struct GibbsKernel<'a> {
    dataset: &'a Dataset,
    spec: &'a ModelSpec,
    /// Prevalence design matrix and its Gram matrix.
    z_w: DMatrix<f64>,
    ztz: DMatrix<f64>,
    /// Unscaled lower factor of the incidence proposal covariance.
    prop_chol: Vec<Vec<f64>>,
    /// Dimension of the incidence proposal: p_x plus the log scale unless
    /// the family fixes sigma.
    dim_theta: usize,
    kappa_shapes: Option<(f64, f64)>,
    known_prevalent_fraction: f64,
    parallel_units: bool,
}

impl<'a> GibbsKernel<'a> {
    pub fn new(
        dataset: &'a Dataset,
        spec: &'a ModelSpec,
        config: &SamplerConfig,
    ) -> Result<GibbsKernel<'a>, FitError> {
        if dataset.is_empty() {
            return Err(FitError::EmptyDataset);
        }
        spec.prior.validate()?;
        let n = dataset.len();
        let p_x = dataset.p_x();
        let p_w = dataset.p_w();
        let dim_theta = if spec.family.fixes_sigma() { p_x } else { p_x + 1 };
        let z_w = DMatrix::from_row_iterator(
            n,
            p_w,
            dataset.records().iter().flat_map(|r| r.covariates_w().iter().copied()),
        );
        let ztz = z_w.transpose() * &z_w;
        let prop_chol = match &config.proposal_covariance {
            None => {
                let mut l = vec![vec![0.0; dim_theta]; dim_theta];
                for (i, row) in l.iter_mut().enumerate() {
                    row[i] = 0.1;
                }
                l
            }
            Some(cov) => {
                if cov.len() != dim_theta {
                    return Err(FitError::BadProposal { expected: dim_theta });
                }
                psd_cholesky(cov).ok_or(FitError::BadProposal { expected: dim_theta })?
            }
        };
        let known = dataset.records().iter().filter(|r| r.known_prevalent()).count();
        Ok(GibbsKernel {
            dataset,
            spec,
            z_w,
            ztz,
            prop_chol,
            dim_theta,
            kappa_shapes: spec.prior.kappa.beta_shapes(),
            known_prevalent_fraction: known as f64 / n as f64,
            parallel_units: config.parallel_units,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    /// Fresh scratch buffers sized for this kernel's dataset.
    pub fn make_scratch(&self) -> Scratch {
        Scratch::new(self.dataset.len(), self.dim_theta)
    }

    /// Draws an initial state: incidence parameters jittered around the
    /// observed visit horizon, the rest from their priors, classes from
    /// the observed fraction of baseline positives, then one onset and one
    /// score pass to make the augmentation consistent.
    pub fn init_state(&self, mut rng: ChaCha8Rng) -> Result<ChainState, FitError> {
        let n = self.dataset.len();
        let prior = &self.spec.prior;
        let normal = |rng: &mut ChaCha8Rng| -> f64 {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        };
        // The incidence location must start on the data's time scale: a
        // cold prior draw can put the whole onset distribution so far
        // below the visit times that perfect-test event records are left
        // with no admissible onset bracket. The jitter keeps the chain
        // starts overdispersed.
        let log_horizon: Vec<f64> = self
            .dataset
            .records()
            .iter()
            .map(ScreeningRecord::last_finite_visit)
            .filter(|v| *v > 0.0)
            .map(f64::ln)
            .collect();
        let anchor = if log_horizon.is_empty() {
            0.0
        } else {
            log_horizon.iter().sum::<f64>() / log_horizon.len() as f64
        };
        let mut beta_x: Vec<f64> =
            (0..self.dataset.p_x()).map(|_| 0.25 * normal(&mut rng)).collect();
        if let Some(intercept) = beta_x.first_mut() {
            *intercept += anchor;
        }
        let sigma = if self.spec.family.fixes_sigma() {
            1.0
        } else {
            (0.5 * normal(&mut rng)).exp().clamp(0.1, 10.0)
        };
        let beta_w: Vec<f64> =
            (0..self.dataset.p_w()).map(|_| prior.tau_w.sqrt() * normal(&mut rng)).collect();
        let kappa = match prior.kappa.beta_shapes() {
            None => match prior.kappa {
                crate::model::KappaPrior::Point { value } => value,
                _ => unreachable!(),
            },
            Some((a, b)) => Beta::new(a, b).expect("validated shapes").sample(&mut rng),
        };
        let g_aug: Vec<u8> = self
            .dataset
            .records()
            .iter()
            .map(|r| {
                if r.known_prevalent() {
                    1
                } else {
                    u8::from(rng.random::<f64>() < self.known_prevalent_fraction)
                }
            })
            .collect();
        let mut state = ChainState {
            incidence: IncidenceParams { beta_x, sigma },
            prevalence: PrevalenceParams { beta_w },
            kappa,
            x_aug: vec![1.0; n],
            w_aug: vec![0.0; n],
            g_aug,
            rng,
        };
        // One latent pass under the initial parameters.
        let mut scratch = Scratch::new(n, self.dim_theta);
        self.refresh_mu(&state.incidence, &mut scratch.mu_x);
        self.refresh_lin(&state.prevalence, &mut scratch.lin_w);
        for i in 0..n {
            let record = &self.dataset.records()[i];
            let dist =
                AftDist::from_parts(self.spec.family, scratch.mu_x[i], state.incidence.sigma)?;
            scratch.weights[i].recompute(record, &dist, state.kappa);
            state.x_aug[i] = draw_onset(
                record,
                &dist,
                &scratch.weights[i],
                state.g_aug[i],
                &mut state.rng,
                &mut scratch.fallback[i],
            )?;
            state.w_aug[i] = draw_score(scratch.lin_w[i], state.g_aug[i], &mut state.rng)?;
        }
        Ok(state)
    }

    fn refresh_mu(&self, incidence: &IncidenceParams, mu: &mut [f64]) {
        for (m, r) in mu.iter_mut().zip(self.dataset.records()) {
            *m = dot(&incidence.beta_x, r.covariates_x());
        }
    }

    fn refresh_lin(&self, prevalence: &PrevalenceParams, lin: &mut [f64]) {
        for (l, r) in lin.iter_mut().zip(self.dataset.records()) {
            *l = dot(&prevalence.beta_w, r.covariates_w());
        }
    }

    /// One full sweep. `sweep_index` feeds the per-subject streams in
    /// parallel mode, `chain_seed` identifies the chain for those streams
    /// and `scale` multiplies the proposal factor.
    pub fn sweep(
        &self,
        state: &mut ChainState,
        scratch: &mut Scratch,
        sweep_index: u64,
        chain_seed: u64,
        scale: f64,
    ) -> Result<SweepStats, FitError> {
        // The linear predictors are derived from the state, so recompute
        // them up front rather than trusting the scratch to be warm.
        self.refresh_mu(&state.incidence, &mut scratch.mu_x);
        self.refresh_lin(&state.prevalence, &mut scratch.lin_w);
        let fallbacks = self.update_latents(state, scratch, sweep_index, chain_seed)?;
        let (accept_prob, accepted) = self.update_incidence(state, scratch, scale)?;
        self.update_prevalence(state)?;
        self.update_kappa(state)?;
        debug_assert!(state.check_consistency(self.dataset));
        Ok(SweepStats { accept_prob, accepted, fallbacks })
    }

    /// Class, score and onset updates for every subject.
    fn update_latents(
        &self,
        state: &mut ChainState,
        scratch: &mut Scratch,
        sweep_index: u64,
        chain_seed: u64,
    ) -> Result<u64, FitError> {
        let family = self.spec.family;
        let sigma = state.incidence.sigma;
        let kappa = state.kappa;
        let records = self.dataset.records();
        let ChainState { x_aug, w_aug, g_aug, rng, .. } = state;
        scratch.fallback.iter_mut().for_each(|f| *f = 0);

        if self.parallel_units {
            records
                .par_iter()
                .zip(scratch.weights.par_iter_mut())
                .zip(scratch.mu_x.par_iter())
                .zip(scratch.lin_w.par_iter())
                .zip(scratch.logf.par_iter_mut())
                .zip(scratch.fallback.par_iter_mut())
                .zip(g_aug.par_iter_mut())
                .zip(w_aug.par_iter_mut())
                .zip(x_aug.par_iter_mut())
                .enumerate()
                .try_for_each(
                    |(i, ((((((((record, weights), &mu), &lin), logf), fb), g), w), x))| {
                        let mut unit_rng =
                            stream_rng(chain_seed, pack_stream(sweep_index + 1, i as u64));
                        update_subject(
                            i, record, family, mu, sigma, lin, kappa, weights, g, w, x, logf,
                            fb, &mut unit_rng,
                        )
                    },
                )?;
        } else {
            for (i, record) in records.iter().enumerate() {
                update_subject(
                    i,
                    record,
                    family,
                    scratch.mu_x[i],
                    sigma,
                    scratch.lin_w[i],
                    kappa,
                    &mut scratch.weights[i],
                    &mut g_aug[i],
                    &mut w_aug[i],
                    &mut x_aug[i],
                    &mut scratch.logf[i],
                    &mut scratch.fallback[i],
                    rng,
                )?;
            }
        }
        Ok(scratch.fallback.iter().map(|&f| u64::from(f)).sum())
    }

    /// Joint random walk on (beta_x, log sigma) against the augmented
    /// conditional: every subject's onset density plus the normal prior on
    /// the coefficients, the half-normal prior on sigma and the log-scale
    /// Jacobian.
    fn update_incidence(
        &self,
        state: &mut ChainState,
        scratch: &mut Scratch,
        scale: f64,
    ) -> Result<(f64, bool), FitError> {
        let prior = &self.spec.prior;
        let fixes_sigma = self.spec.family.fixes_sigma();
        let p_x = self.dataset.p_x();

        // Current target; the onset log densities are already fresh from
        // the latent pass.
        let cur_sum: f64 = scratch.logf.iter().sum();
        let cur_target = cur_sum
            + log_prior_incidence(&state.incidence, prior, fixes_sigma);

        for e in scratch.eps.iter_mut() {
            *e = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut state.rng);
        }
        // theta_prop holds steps, not positions. Sigma moves
        // multiplicatively so a zero step reproduces it exactly.
        for i in 0..self.dim_theta {
            scratch.theta_prop[i] =
                (0..=i).map(|j| self.prop_chol[i][j] * scratch.eps[j]).sum::<f64>() * scale;
        }
        let prop = IncidenceParams {
            beta_x: state
                .incidence
                .beta_x
                .iter()
                .zip(&scratch.theta_prop[..p_x])
                .map(|(b, s)| b + s)
                .collect(),
            sigma: if fixes_sigma {
                1.0
            } else {
                state.incidence.sigma * scratch.theta_prop[p_x].exp()
            },
        };
        let mut prop_sum = 0.0;
        for (record, &x) in self.dataset.records().iter().zip(state.x_aug.iter()) {
            let mu = dot(&prop.beta_x, record.covariates_x());
            let dist = AftDist::from_parts(self.spec.family, mu, prop.sigma)?;
            prop_sum += dist.log_density(x);
            if prop_sum == f64::NEG_INFINITY {
                break;
            }
        }
        let prop_target = prop_sum + log_prior_incidence(&prop, prior, fixes_sigma);

        let log_alpha = (prop_target - cur_target).min(0.0);
        // A proposal that cannot host the current onsets is rejected
        // rather than allowed to poison the acceptance ratio with NaN.
        let accept_prob = if log_alpha.is_nan() { 0.0 } else { log_alpha.exp() };
        let accepted = state.rng.random::<f64>() < accept_prob;
        if accepted {
            state.incidence = prop;
        }
        Ok((accept_prob, accepted))
    }

    /// Conjugate normal draw of the prevalence coefficients given scores.
    fn update_prevalence(&self, state: &mut ChainState) -> Result<(), FitError> {
        let p = self.dataset.p_w();
        let mut a = self.ztz.clone();
        for i in 0..p {
            a[(i, i)] += 1.0 / self.spec.prior.tau_w;
        }
        let chol = Cholesky::new(a).ok_or(FitError::PrevalenceSolve)?;
        let w_vec = DVector::from_column_slice(&state.w_aug);
        let ztw = self.z_w.tr_mul(&w_vec);
        let mean = chol.solve(&ztw);
        let eps = DVector::from_iterator(
            p,
            (0..p).map(|_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut state.rng)
            }),
        );
        // L^{-T} eps has covariance (L L^T)^{-1}.
        let l = chol.l();
        let u = l
            .transpose()
            .solve_upper_triangular(&eps)
            .ok_or(FitError::PrevalenceSolve)?;
        for j in 0..p {
            state.prevalence.beta_w[j] = mean[j] + u[j];
        }
        Ok(())
    }

    /// Conjugate beta draw of the sensitivity; point priors skip it.
    pub fn update_kappa(&self, state: &mut ChainState) -> Result<(), FitError> {
        let Some(prior_shapes) = self.kappa_shapes else {
            return Ok(());
        };
        let stats = KappaStats::accumulate(self.dataset, &state.g_aug, &state.x_aug)?;
        let (a, b) = stats.posterior_shapes(prior_shapes);
        let beta = Beta::new(a, b).map_err(|_| FitError::Config("beta shapes"))?;
        state.kappa = beta.sample(&mut state.rng);
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_prior_incidence(params: &IncidenceParams, prior: &crate::model::PriorConfig, fixes_sigma: bool) -> f64 {
    let mut lp = -params.beta_x.iter().map(|b| b * b).sum::<f64>() / (2.0 * prior.tau_x);
    if !fixes_sigma {
        // Half-normal on sigma plus the Jacobian of the log transform.
        lp += -params.sigma * params.sigma / (2.0 * prior.lambda) + params.sigma.ln();
    }
    lp
}

/// Class, score and onset update of one subject.
#[allow(clippy::too_many_arguments)]
fn update_subject<R: Rng + ?Sized>(
    index: usize,
    record: &ScreeningRecord,
    family: crate::dist::AftFamily,
    mu: f64,
    sigma: f64,
    lin: f64,
    kappa: f64,
    weights: &mut IntervalWeights,
    g: &mut u8,
    w: &mut f64,
    x: &mut f64,
    logf: &mut f64,
    fallback: &mut u8,
    rng: &mut R,
) -> Result<(), FitError> {
    let subject = |source: LikelihoodError| FitError::Subject { subject: index, source };
    let dist = AftDist::from_parts(family, mu, sigma).map_err(|e| subject(e.into()))?;
    weights.recompute(record, &dist, kappa);
    let p_prev = collapsed_prevalence_prob(record, weights, lin, kappa).map_err(subject)?;
    *g = u8::from(rng.random::<f64>() < p_prev);
    *w = draw_score(lin, *g, rng).map_err(|e| subject(e.into()))?;
    *x = draw_onset(record, &dist, weights, *g, rng, fallback).map_err(|e| subject(e.into()))?;
    *logf = dist.log_density(*x);
    Ok(())
}

/// Probit score draw: positive half for prevalent, nonpositive otherwise.
fn draw_score<R: Rng + ?Sized>(lin: f64, g: u8, rng: &mut R) -> Result<f64, DistError> {
    if g == 1 {
        let w = sample_truncated_normal(lin, 0.0, f64::INFINITY, rng)?;
        Ok(w.max(f64::MIN_POSITIVE))
    } else {
        let w = sample_truncated_normal(lin, f64::NEG_INFINITY, 0.0, rng)?;
        Ok(w.min(0.0))
    }
}

/// Onset time draw. Prevalent subjects draw unconditionally; incident
/// subjects pick an inter-visit interval by its posterior weight, then
/// draw inside it. When no interval carries representable mass, or the
/// chosen interval degenerates in CDF space, the draw falls back to a
/// uniform on the most recent interval (capped one time unit past the
/// last finite visit) and reports it through `fallback`.
fn draw_onset<R: Rng + ?Sized>(
    record: &ScreeningRecord,
    dist: &AftDist,
    weights: &IntervalWeights,
    g: u8,
    rng: &mut R,
    fallback: &mut u8,
) -> Result<f64, DistError> {
    if g == 1 {
        return dist.sample_truncated(0.0, f64::INFINITY, rng);
    }
    let (lo, hi) = match weights.sample_index(rng) {
        Some(j) => weights.intervals()[j],
        None => {
            *fallback = 1;
            let v = record.visits();
            (v[v.len() - 2], v[v.len() - 1])
        }
    };
    if *fallback == 0 {
        if let Ok(x) = dist.sample_truncated(lo, hi, rng) {
            return Ok(x);
        }
        *fallback = 1;
    }
    let hi = if hi.is_finite() { hi } else { lo + 1.0 };
    let u: f64 = rng.random();
    Ok(hi - u * (hi - lo))
}

/// Streaming WAIC blocks of one chain.
struct StreamBlocks {
    block_len: usize,
    total: Vec<LogMeanAcc>,
    units: Vec<Vec<LogMeanAcc>>,
    dropped: Vec<usize>,
}

impl StreamBlocks {
    fn new(block_len: usize) -> StreamBlocks {
        StreamBlocks { block_len, total: Vec::new(), units: Vec::new(), dropped: Vec::new() }
    }

    fn push(&mut self, stored_index: usize, per_unit: &[f64], total: f64) {
        let block = stored_index / self.block_len;
        while self.total.len() <= block {
            self.total.push(LogMeanAcc::default());
            self.units.push(vec![LogMeanAcc::default(); per_unit.len()]);
            self.dropped.push(0);
        }
        if per_unit.iter().any(|v| !v.is_finite()) {
            self.dropped[block] += 1;
            return;
        }
        self.total[block].push(total);
        for (acc, &v) in self.units[block].iter_mut().zip(per_unit) {
            acc.push(v);
        }
    }
}

/// Loglik retention for one chain.
enum LoglikStore {
    Matrix(Vec<Vec<f64>>),
    Streaming(StreamBlocks),
    Off,
}

struct ChainWork {
    state: ChainState,
    draws: ChainDraws,
    scratch: Scratch,
    log_scale: f64,
    chain_seed: u64,
    loglik: LoglikStore,
}

/// Runs the sampler to convergence or the iteration cap.
pub fn fit(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &SamplerConfig,
) -> Result<FitResult, FitError> {
    validate_config(config)?;
    let kernel = GibbsKernel::new(dataset, spec, config)?;
    let p_x = dataset.p_x();
    let p_w = dataset.p_w();
    let block_len = config.check_every / (2 * config.thin);
    let freeze_after = config.check_every / 2;

    let mut chains: Vec<ChainWork> = (0..config.n_chains)
        .map(|c| {
            let chain_seed = derive_seed(config.seed, c as u64);
            let state = kernel.init_state(stream_rng(chain_seed, 0))?;
            Ok(ChainWork {
                state,
                draws: ChainDraws::new(p_x, p_w),
                scratch: Scratch::new(dataset.len(), kernel.dim_theta),
                log_scale: 0.0,
                chain_seed,
                loglik: match config.loglik {
                    LoglikStorage::Matrix => LoglikStore::Matrix(Vec::new()),
                    LoglikStorage::Streaming => LoglikStore::Streaming(StreamBlocks::new(block_len)),
                    LoglikStorage::Off => LoglikStore::Off,
                },
            })
        })
        .collect::<Result<_, FitError>>()?;

    let columns = monitored_columns(spec, p_x, p_w);
    let mut iterations = 0usize;
    let mut converged = false;
    let mut diagnostics = Vec::new();

    while iterations < config.max_iters {
        // Chains share nothing but the kernel, so a block of sweeps per
        // chain can run in parallel without affecting the draws.
        chains.par_iter_mut().try_for_each(|cw| -> Result<(), FitError> {
            for s in 0..config.check_every {
                let t = iterations + s + 1;
                let stats = kernel.sweep(
                    &mut cw.state,
                    &mut cw.scratch,
                    (t - 1) as u64,
                    cw.chain_seed,
                    cw.log_scale.exp(),
                )?;
                cw.draws.proposed += 1;
                cw.draws.accepted += u64::from(stats.accepted);
                cw.draws.fallback_draws += stats.fallbacks;
                if config.adapt_proposal && t <= freeze_after {
                    cw.log_scale +=
                        (t as f64).powf(-0.6) * (stats.accept_prob - TARGET_ACCEPT);
                }
                if t % config.thin == 0 {
                    let stored_index = cw.draws.len();
                    cw.draws.push(&cw.state);
                    match &mut cw.loglik {
                        LoglikStore::Off => {}
                        store => {
                            let ll = dataset_loglik(
                                dataset,
                                spec.family,
                                &cw.state.incidence,
                                &cw.state.prevalence,
                                cw.state.kappa,
                            )?;
                            match store {
                                LoglikStore::Matrix(rows) => rows.push(ll.per_unit),
                                LoglikStore::Streaming(blocks) => {
                                    blocks.push(stored_index, &ll.per_unit, ll.total)
                                }
                                LoglikStore::Off => unreachable!(),
                            }
                        }
                    }
                }
            }
            cw.draws.log_scale = cw.log_scale;
            Ok(())
        })?;
        iterations += config.check_every;
        let stored = chains[0].draws.len();
        diagnostics = compute_diagnostics(&chains, &columns, stored / 2, stored);
        if diagnostics.iter().all(|d| d.passes(config.rhat_threshold, config.min_ess)) {
            converged = true;
            break;
        }
    }

    let stored = chains[0].draws.len();
    let burn_in = stored / 2;
    let waic = finalize_waic(&chains, burn_in, stored, dataset.len());
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "run stopped at the iteration cap ({}) without meeting the convergence criteria",
            config.max_iters
        ));
    }
    for (c, cw) in chains.iter().enumerate() {
        if cw.draws.fallback_draws > 0 {
            warnings.push(format!(
                "chain {c}: {} onset draws used the uniform fallback",
                cw.draws.fallback_draws
            ));
        }
    }
    Ok(FitResult {
        chains: chains.into_iter().map(|cw| cw.draws).collect(),
        converged,
        iterations,
        burn_in,
        diagnostics,
        waic,
        warnings,
    })
}

fn validate_config(config: &SamplerConfig) -> Result<(), FitError> {
    if config.n_chains == 0 {
        return Err(FitError::Config("n_chains must be positive"));
    }
    if config.thin == 0 {
        return Err(FitError::Config("thin must be positive"));
    }
    if config.check_every == 0 || config.check_every % (2 * config.thin) != 0 {
        return Err(FitError::Config("check_every must be a positive multiple of 2 * thin"));
    }
    if config.max_iters == 0 || config.max_iters % config.check_every != 0 {
        return Err(FitError::Config("max_iters must be a positive multiple of check_every"));
    }
    if !(config.rhat_threshold > 1.0) {
        return Err(FitError::Config("rhat_threshold must exceed 1"));
    }
    if !(config.min_ess >= 0.0) {
        return Err(FitError::Config("min_ess must be nonnegative"));
    }
    Ok(())
}

fn monitored_columns(spec: &ModelSpec, p_x: usize, p_w: usize) -> Vec<ParamColumn> {
    let mut cols: Vec<ParamColumn> = (0..p_x).map(ParamColumn::BetaX).collect();
    if !spec.family.fixes_sigma() {
        cols.push(ParamColumn::Sigma);
    }
    cols.extend((0..p_w).map(ParamColumn::BetaW));
    if !spec.prior.kappa.is_point() {
        cols.push(ParamColumn::Kappa);
    }
    cols
}

fn compute_diagnostics(
    chains: &[ChainWork],
    columns: &[ParamColumn],
    from: usize,
    to: usize,
) -> Vec<ParamDiagnostic> {
    columns
        .iter()
        .map(|col| {
            let series: Vec<Vec<f64>> =
                chains.iter().map(|cw| cw.draws.column(col, from, to)).collect();
            let views: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
            let r = split_rhat(&views);
            let e = if r.degenerate { 0.0 } else { ess_total(&views) };
            ParamDiagnostic {
                name: col.name(),
                rhat: r.value,
                ess: e,
                constant: r.degenerate,
            }
        })
        .collect()
}

fn finalize_waic(
    chains: &[ChainWork],
    burn_in: usize,
    stored: usize,
    n_units: usize,
) -> Option<Waic> {
    let mut total = LogMeanAcc::default();
    let mut units = vec![LogMeanAcc::default(); n_units];
    let mut dropped = 0usize;
    let mut any = false;
    for cw in chains {
        match &cw.loglik {
            LoglikStore::Off => return None,
            LoglikStore::Matrix(rows) => {
                any = true;
                for row in &rows[burn_in..stored] {
                    if row.iter().any(|v| !v.is_finite()) {
                        dropped += 1;
                        continue;
                    }
                    total.push(row.iter().sum());
                    for (acc, &v) in units.iter_mut().zip(row) {
                        acc.push(v);
                    }
                }
            }
            LoglikStore::Streaming(blocks) => {
                any = true;
                // Burn-in always lands on a block boundary because stops
                // happen at whole check intervals.
                let first_block = burn_in / blocks.block_len;
                for b in first_block..blocks.total.len() {
                    total = total.merge(&blocks.total[b]);
                    for (acc, other) in units.iter_mut().zip(&blocks.units[b]) {
                        *acc = acc.merge(other);
                    }
                    dropped += blocks.dropped[b];
                }
            }
        }
    }
    if !any || total.count() == 0 {
        return None;
    }
    Some(waic_from_accs(&total, &units, dropped))
}
