//! Bayesian prevalence-incidence mixture modelling for interval-censored
//! screening data observed with an imperfect test.
//!
//! The model splits a screened population into a prevalent fraction (disease
//! present before baseline, probit regression on covariates) and an incident
//! fraction (disease onset follows an accelerated failure time model). Tests
//! have sensitivity `kappa` in (0, 1] and perfect specificity, so a negative
//! test may be a false negative while a positive test always ends screening.
//!
//! The crate provides:
//!
//! * [`model`]: data records, parameter blocks, priors and validation;
//! * [`dist`]: accelerated failure time families and normal primitives;
//! * [`likelihood`]: observed-data likelihood and interval weights;
//! * [`gibbs`]: the Metropolis-within-Gibbs sampler with data augmentation;
//! * [`diagnostics`]: split R-hat, effective sample size, WAIC;
//! * [`posterior`]: posterior predictive cumulative incidence curves;
//! * [`nonparametric`]: Turnbull estimation and a sensitivity-adjusted EM;
//! * [`simgen`]: synthetic cohort generators (parametric and donor-resampled);
//! * [`io`]: the on-disk CSV schemas shared with the command line tool.

pub mod diagnostics;
pub mod dist;
pub mod gibbs;
pub mod io;
pub mod nonparametric;
pub mod posterior;
pub mod likelihood;
pub mod model;
pub mod rng;
pub mod simgen;
