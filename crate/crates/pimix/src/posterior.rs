//! Posterior predictive cumulative incidence curves.
//!
//! Each estimator evaluates the closed-form AFT CDF under every retained
//! posterior draw (the push-forward transform), then reduces the per-draw
//! curves to a pointwise median with an equal-tailed credible band. The
//! marginal variants average each draw's curve over an empirical covariate
//! sample; the mixture variants add the prevalent mass at the origin.

use rayon::prelude::*;

use crate::dist::{probit_prob, AftDist, AftFamily, DistError};
use crate::gibbs::PosteriorDraw;
use crate::model::Dataset;

/// Which posterior predictive curve a [`CifCurve`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// Non-prevalent CIF at fixed covariates.
    Conditional,
    /// Non-prevalent CIF averaged over a covariate sample.
    Marginal,
    /// Mixture CIF (prevalent mass plus incident CIF) at fixed covariates.
    MixtureConditional,
    /// Mixture CIF averaged over a covariate sample.
    MixtureMarginal,
}

impl CurveKind {
    /// Stable lowercase label used in exported files.
    pub fn label(self) -> &'static str {
        match self {
            CurveKind::Conditional => "conditional",
            CurveKind::Marginal => "marginal",
            CurveKind::MixtureConditional => "mixture_conditional",
            CurveKind::MixtureMarginal => "mixture_marginal",
        }
    }

    /// Inverse of [`CurveKind::label`].
    pub fn parse(label: &str) -> Option<CurveKind> {
        match label {
            "conditional" => Some(CurveKind::Conditional),
            "marginal" => Some(CurveKind::Marginal),
            "mixture_conditional" => Some(CurveKind::MixtureConditional),
            "mixture_marginal" => Some(CurveKind::MixtureMarginal),
            _ => None,
        }
    }
}

/// A pointwise posterior summary of a cumulative incidence curve.
///
/// All four vectors share one length. At every grid point
/// `0 <= lower <= median <= upper <= 1`, and each summary row is
/// non-decreasing in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CifCurve {
    pub grid: Vec<f64>,
    pub median: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub kind: CurveKind,
}

/// Posterior summary of the covariate-averaged prevalence probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrevalenceSummary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Linear-interpolation quantile (type 7) of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level outside [0, 1]");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Evenly spaced grid of `points` values from zero to the 99th percentile of
/// the finite visit times in `dataset`.
pub fn default_grid(dataset: &Dataset, points: usize) -> Vec<f64> {
    assert!(points >= 2, "a grid needs at least two points");
    let mut times: Vec<f64> = dataset
        .records()
        .iter()
        .flat_map(|r| r.visits().iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    assert!(!times.is_empty(), "dataset has no finite visit times");
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let top = quantile_sorted(&times, 0.99);
    (0..points)
        .map(|k| top * k as f64 / (points - 1) as f64)
        .collect()
}

/// Per-subject covariate rows of `dataset` as `(incidence, prevalence)`
/// matrices, in record order.
pub fn covariate_rows(dataset: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows_x = dataset
        .records()
        .iter()
        .map(|r| r.covariates_x().to_vec())
        .collect();
    let rows_w = dataset
        .records()
        .iter()
        .map(|r| r.covariates_w().to_vec())
        .collect();
    (rows_x, rows_w)
}

/// Mixture CDF value with the prevalent mass folded in. The clamp keeps the
/// value at or above the incident CDF even when rounding near one would
/// otherwise push it a unit in the last place below.
fn mixture_term(phi: f64, f: f64) -> f64 {
    (phi + (1.0 - phi) * f).max(f)
}

fn apply_fixed(row: &[f64], fixed: Option<(&[usize], &[f64])>) -> Vec<f64> {
    let mut out = row.to_vec();
    if let Some((indices, values)) = fixed {
        assert_eq!(
            indices.len(),
            values.len(),
            "fixed covariate indices and values must pair up"
        );
        for (&i, &v) in indices.iter().zip(values) {
            assert!(i < out.len(), "fixed covariate index {i} out of range");
            out[i] = v;
        }
    }
    out
}

/// One non-prevalent CIF curve per posterior draw at fixed covariates.
pub fn draw_curves_conditional(
    draws: &[PosteriorDraw],
    family: AftFamily,
    z_new: &[f64],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, DistError> {
    assert!(!draws.is_empty(), "no posterior draws");
    draws
        .par_iter()
        .map(|d| {
            let dist = AftDist::new(family, &d.incidence.beta_x, d.incidence.sigma, z_new)?;
            Ok(grid.iter().map(|&t| dist.cdf(t)).collect())
        })
        .collect()
}

/// One covariate-averaged non-prevalent CIF curve per posterior draw.
///
/// `fixed` pins a subset of covariate positions to given values while the
/// remaining positions keep their empirical joint distribution.
pub fn draw_curves_marginal(
    draws: &[PosteriorDraw],
    family: AftFamily,
    rows_x: &[Vec<f64>],
    grid: &[f64],
    fixed: Option<(&[usize], &[f64])>,
) -> Result<Vec<Vec<f64>>, DistError> {
    assert!(!draws.is_empty(), "no posterior draws");
    assert!(!rows_x.is_empty(), "no covariate rows");
    let effective: Vec<Vec<f64>> = rows_x.iter().map(|r| apply_fixed(r, fixed)).collect();
    draws
        .par_iter()
        .map(|d| {
            let mut acc = vec![0.0; grid.len()];
            for row in &effective {
                let dist = AftDist::new(family, &d.incidence.beta_x, d.incidence.sigma, row)?;
                for (a, &t) in acc.iter_mut().zip(grid) {
                    *a += dist.cdf(t);
                }
            }
            let n = effective.len() as f64;
            for a in &mut acc {
                *a /= n;
            }
            Ok(acc)
        })
        .collect()
}

/// One mixture CIF curve per posterior draw at fixed covariates.
pub fn draw_curves_mixture_conditional(
    draws: &[PosteriorDraw],
    family: AftFamily,
    z_x_new: &[f64],
    z_w_new: &[f64],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, DistError> {
    assert!(!draws.is_empty(), "no posterior draws");
    draws
        .par_iter()
        .map(|d| {
            let phi = probit_prob(&d.prevalence.beta_w, z_w_new)?;
            let dist = AftDist::new(family, &d.incidence.beta_x, d.incidence.sigma, z_x_new)?;
            Ok(grid
                .iter()
                .map(|&t| mixture_term(phi, dist.cdf(t)))
                .collect())
        })
        .collect()
}

/// One covariate-averaged mixture CIF curve per posterior draw.
///
/// `rows_x` and `rows_w` pair up by subject, so the prevalent mass and the
/// incident CIF are averaged jointly rather than independently.
pub fn draw_curves_mixture_marginal(
    draws: &[PosteriorDraw],
    family: AftFamily,
    rows_x: &[Vec<f64>],
    rows_w: &[Vec<f64>],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>, DistError> {
    assert!(!draws.is_empty(), "no posterior draws");
    assert!(!rows_x.is_empty(), "no covariate rows");
    assert_eq!(
        rows_x.len(),
        rows_w.len(),
        "incidence and prevalence covariate rows must pair up"
    );
    draws
        .par_iter()
        .map(|d| {
            let mut acc = vec![0.0; grid.len()];
            for (row_x, row_w) in rows_x.iter().zip(rows_w) {
                let phi = probit_prob(&d.prevalence.beta_w, row_w)?;
                let dist = AftDist::new(family, &d.incidence.beta_x, d.incidence.sigma, row_x)?;
                for (a, &t) in acc.iter_mut().zip(grid) {
                    *a += mixture_term(phi, dist.cdf(t));
                }
            }
            let n = rows_x.len() as f64;
            for a in &mut acc {
                *a /= n;
            }
            Ok(acc)
        })
        .collect()
}

/// Covariate-averaged prevalence probability under each posterior draw.
///
/// The accumulation order matches [`draw_curves_mixture_marginal`], so the
/// mixture curve at `t = 0` reproduces these values bit for bit.
pub fn marginal_prevalence_draws(
    draws: &[PosteriorDraw],
    rows_w: &[Vec<f64>],
) -> Result<Vec<f64>, DistError> {
    assert!(!draws.is_empty(), "no posterior draws");
    assert!(!rows_w.is_empty(), "no covariate rows");
    draws
        .par_iter()
        .map(|d| {
            // Adding exactly phi per row mirrors mixture_term(phi, 0.0), so
            // the t = 0 identity with the mixture curve is bitwise.
            let mut acc = 0.0;
            for row_w in rows_w {
                acc += probit_prob(&d.prevalence.beta_w, row_w)?;
            }
            Ok(acc / rows_w.len() as f64)
        })
        .collect()
}

/// Reduces per-draw curves to a median curve with an equal-tailed 95% band.
///
/// Every draw's curve must be non-decreasing up to rounding; a drop beyond
/// `1e-12` is a logic error and panics.
pub fn summarize_draw_curves(
    mut curves: Vec<Vec<f64>>,
    grid: &[f64],
    kind: CurveKind,
) -> CifCurve {
    assert!(!curves.is_empty(), "no curves to summarize");
    for curve in &mut curves {
        assert_eq!(curve.len(), grid.len(), "curve and grid lengths differ");
        for k in 1..curve.len() {
            assert!(
                curve[k] >= curve[k - 1] - 1e-12,
                "per-draw curve decreases at grid index {k}"
            );
            curve[k] = curve[k].max(curve[k - 1]);
        }
        for v in curve.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    let mut median = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; curves.len()];
    for k in 0..grid.len() {
        for (slot, curve) in column.iter_mut().zip(&curves) {
            *slot = curve[k];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(quantile_sorted(&column, 0.025));
        median.push(quantile_sorted(&column, 0.5));
        upper.push(quantile_sorted(&column, 0.975));
    }
    CifCurve {
        grid: grid.to_vec(),
        median,
        lower,
        upper,
        kind,
    }
}

/// Posterior predictive non-prevalent CIF at new covariates `z_new`.
pub fn cif_conditional(
    draws: &[PosteriorDraw],
    family: AftFamily,
    z_new: &[f64],
    grid: &[f64],
) -> Result<CifCurve, DistError> {
    let curves = draw_curves_conditional(draws, family, z_new, grid)?;
    Ok(summarize_draw_curves(curves, grid, CurveKind::Conditional))
}

/// Posterior predictive non-prevalent CIF averaged over `rows_x`, with
/// optional partial conditioning on a fixed covariate subset.
pub fn cif_marginal(
    draws: &[PosteriorDraw],
    family: AftFamily,
    rows_x: &[Vec<f64>],
    grid: &[f64],
    fixed: Option<(&[usize], &[f64])>,
) -> Result<CifCurve, DistError> {
    let curves = draw_curves_marginal(draws, family, rows_x, grid, fixed)?;
    Ok(summarize_draw_curves(curves, grid, CurveKind::Marginal))
}

/// Posterior predictive mixture CIF at new covariates.
pub fn cif_mixture_conditional(
    draws: &[PosteriorDraw],
    family: AftFamily,
    z_x_new: &[f64],
    z_w_new: &[f64],
    grid: &[f64],
) -> Result<CifCurve, DistError> {
    let curves = draw_curves_mixture_conditional(draws, family, z_x_new, z_w_new, grid)?;
    Ok(summarize_draw_curves(
        curves,
        grid,
        CurveKind::MixtureConditional,
    ))
}

/// Posterior predictive mixture CIF averaged over paired covariate rows.
pub fn cif_mixture_marginal(
    draws: &[PosteriorDraw],
    family: AftFamily,
    rows_x: &[Vec<f64>],
    rows_w: &[Vec<f64>],
    grid: &[f64],
) -> Result<CifCurve, DistError> {
    let curves = draw_curves_mixture_marginal(draws, family, rows_x, rows_w, grid)?;
    Ok(summarize_draw_curves(
        curves,
        grid,
        CurveKind::MixtureMarginal,
    ))
}

/// Posterior summary of the covariate-averaged prevalence probability.
pub fn marginal_prevalence(
    draws: &[PosteriorDraw],
    rows_w: &[Vec<f64>],
) -> Result<PrevalenceSummary, DistError> {
    let mut values = marginal_prevalence_draws(draws, rows_w)?;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(PrevalenceSummary {
        median: quantile_sorted(&values, 0.5),
        lower: quantile_sorted(&values, 0.025),
        upper: quantile_sorted(&values, 0.975),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::sample_truncated_aft;
    use crate::model::{IncidenceParams, PrevalenceParams, ScreeningRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn draw(beta_x: &[f64], sigma: f64, beta_w: &[f64], kappa: f64) -> PosteriorDraw {
        PosteriorDraw {
            incidence: IncidenceParams {
                beta_x: beta_x.to_vec(),
                sigma,
            },
            prevalence: PrevalenceParams {
                beta_w: beta_w.to_vec(),
            },
            kappa,
        }
    }

    fn jittered_draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<PosteriorDraw> {
        (0..n)
            .map(|_| {
                let b0 = 2.8 + 0.05 * rng.random::<f64>();
                let b1 = -0.1 + 0.02 * rng.random::<f64>();
                let s = 0.75 + 0.05 * rng.random::<f64>();
                let w0 = -0.6 + 0.1 * rng.random::<f64>();
                let w1 = 0.2 + 0.1 * rng.random::<f64>();
                draw(&[b0, b1], s, &[w0, w1], 0.8)
            })
            .collect()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect()
    }

    fn grid() -> Vec<f64> {
        (0..25).map(|k| k as f64 * 2.0).collect()
    }

    #[test]
    fn degenerate_posterior_collapses_band_to_plug_in_curve() {
        let d = draw(&[2.5, 0.3], 0.6, &[0.0, 0.0], 1.0);
        let draws = vec![d.clone(), d.clone(), d];
        let z = [1.0, -0.4];
        let grid = grid();
        let curve = cif_conditional(&draws, AftFamily::Weibull, &z, &grid).unwrap();
        let dist = AftDist::new(AftFamily::Weibull, &[2.5, 0.3], 0.6, &z).unwrap();
        for k in 0..grid.len() {
            assert_eq!(curve.lower[k], curve.upper[k]);
            assert!((curve.median[k] - dist.cdf(grid[k])).abs() < 1e-15);
        }
    }

    #[test]
    fn curves_start_at_zero_for_every_family() {
        let draws = vec![draw(&[1.0], 0.5, &[0.3], 1.0)];
        for family in [
            AftFamily::Weibull,
            AftFamily::Exponential,
            AftFamily::LogLogistic,
            AftFamily::LogNormal,
        ] {
            let sigma = if family.fixes_sigma() { 1.0 } else { 0.5 };
            let draws: Vec<PosteriorDraw> = draws
                .iter()
                .map(|d| {
                    let mut d = d.clone();
                    d.incidence.sigma = sigma;
                    d
                })
                .collect();
            let curve = cif_conditional(&draws, family, &[0.7], &[0.0, 1.0, 5.0]).unwrap();
            assert_eq!(curve.median[0], 0.0);
            assert_eq!(curve.lower[0], 0.0);
            assert_eq!(curve.upper[0], 0.0);
        }
    }

    #[test]
    fn single_row_marginal_matches_conditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = jittered_draws(&mut rng, 40);
        let z = vec![0.4, -0.2];
        let grid = grid();
        let marginal =
            cif_marginal(&draws, AftFamily::Weibull, &[z.clone()], &grid, None).unwrap();
        let conditional = cif_conditional(&draws, AftFamily::Weibull, &z, &grid).unwrap();
        assert_eq!(marginal.median, conditional.median);
        assert_eq!(marginal.lower, conditional.lower);
        assert_eq!(marginal.upper, conditional.upper);

        let doubled = cif_marginal(
            &draws,
            AftFamily::Weibull,
            &[z.clone(), z.clone()],
            &grid,
            None,
        )
        .unwrap();
        for k in 0..grid.len() {
            assert!((doubled.median[k] - conditional.median[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_curve_is_the_mean_of_conditional_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = jittered_draws(&mut rng, 25);
        let rows = random_rows(&mut rng, 200, 2);
        let grid = grid();
        let marginal =
            draw_curves_marginal(&draws, AftFamily::Weibull, &rows, &grid, None).unwrap();
        for (t, curve) in marginal.iter().enumerate() {
            let mut mean = vec![0.0; grid.len()];
            for row in &rows {
                let per_row =
                    draw_curves_conditional(&draws[t..t + 1], AftFamily::Weibull, row, &grid)
                        .unwrap();
                for (m, v) in mean.iter_mut().zip(&per_row[0]) {
                    *m += v;
                }
            }
            for (m, v) in mean.iter().zip(curve) {
                assert!((m / rows.len() as f64 - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_reduces_to_conditional_when_prevalence_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut draws = jittered_draws(&mut rng, 20);
        for d in &mut draws {
            d.prevalence.beta_w = vec![-60.0, 0.0];
        }
        let grid = grid();
        let z = [0.4, -0.2];
        let mixture =
            cif_mixture_conditional(&draws, AftFamily::Weibull, &z, &[1.0, 0.5], &grid).unwrap();
        let plain = cif_conditional(&draws, AftFamily::Weibull, &z, &grid).unwrap();
        assert_eq!(mixture.median, plain.median);
        assert_eq!(mixture.lower, plain.lower);
        assert_eq!(mixture.upper, plain.upper);
    }

    #[test]
    fn mixture_is_one_when_everyone_is_prevalent() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut draws = jittered_draws(&mut rng, 20);
        for d in &mut draws {
            d.prevalence.beta_w = vec![60.0, 0.0];
        }
        let grid = grid();
        let curve =
            cif_mixture_conditional(&draws, AftFamily::Weibull, &[0.4, -0.2], &[1.0, 0.5], &grid)
                .unwrap();
        for k in 0..grid.len() {
            assert_eq!(curve.median[k], 1.0);
            assert_eq!(curve.lower[k], 1.0);
            assert_eq!(curve.upper[k], 1.0);
        }
    }

    #[test]
    fn mixture_marginal_at_zero_reproduces_marginal_prevalence_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let draws = jittered_draws(&mut rng, 30);
        let rows_x = random_rows(&mut rng, 50, 2);
        let rows_w = random_rows(&mut rng, 50, 2);
        let grid = [0.0, 3.0, 9.0];
        let curves =
            draw_curves_mixture_marginal(&draws, AftFamily::Weibull, &rows_x, &rows_w, &grid)
                .unwrap();
        let prevalence = marginal_prevalence_draws(&draws, &rows_w).unwrap();
        for (curve, phi) in curves.iter().zip(&prevalence) {
            assert_eq!(curve[0], *phi);
        }
    }

    #[test]
    fn centered_prevalence_coefficients_give_one_half() {
        let draws = vec![
            draw(&[2.0], 0.5, &[0.0, 0.0], 1.0),
            draw(&[2.1], 0.5, &[0.0, 0.0], 1.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let rows = random_rows(&mut rng, 10, 2);
        let summary = marginal_prevalence(&draws, &rows).unwrap();
        assert_eq!(summary.median, 0.5);
        assert_eq!(summary.lower, 0.5);
        assert_eq!(summary.upper, 0.5);
    }

    #[test]
    fn single_draw_single_row_prevalence_is_the_probit_probability() {
        let draws = vec![draw(&[2.0], 0.5, &[0.3, -0.4], 1.0)];
        let row = vec![1.0, 0.5];
        let summary = marginal_prevalence(&draws, &[row.clone()]).unwrap();
        let expected = probit_prob(&[0.3, -0.4], &row).unwrap();
        assert_eq!(summary.median, expected);
        assert_eq!(summary.lower, expected);
        assert_eq!(summary.upper, expected);
    }

    #[test]
    fn fixing_every_covariate_reproduces_the_conditional_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = jittered_draws(&mut rng, 15);
        let rows = random_rows(&mut rng, 30, 2);
        let z = [0.9, -0.3];
        let grid = grid();
        let pinned = cif_marginal(
            &draws,
            AftFamily::Weibull,
            &rows,
            &grid,
            Some((&[0, 1], &z)),
        )
        .unwrap();
        let conditional = cif_conditional(&draws, AftFamily::Weibull, &z, &grid).unwrap();
        for k in 0..grid.len() {
            assert!((pinned.median[k] - conditional.median[k]).abs() < 1e-15);
            assert!((pinned.lower[k] - conditional.lower[k]).abs() < 1e-15);
            assert!((pinned.upper[k] - conditional.upper[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn partial_conditioning_pins_only_the_named_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let draws = jittered_draws(&mut rng, 10);
        let rows = random_rows(&mut rng, 40, 2);
        let grid = grid();
        let pinned = draw_curves_marginal(
            &draws,
            AftFamily::Weibull,
            &rows,
            &grid,
            Some((&[1], &[0.25])),
        )
        .unwrap();
        let edited: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r[0], 0.25])
            .collect();
        let expected =
            draw_curves_marginal(&draws, AftFamily::Weibull, &edited, &grid, None).unwrap();
        assert_eq!(pinned, expected);
    }

    #[test]
    fn mixture_dominates_the_incident_curve_draw_by_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let draws = jittered_draws(&mut rng, 8);
            let z_x = [rng.random::<f64>(), rng.random::<f64>() - 0.5];
            let z_w = [rng.random::<f64>(), rng.random::<f64>() - 0.5];
            let grid = grid();
            let mix =
                draw_curves_mixture_conditional(&draws, AftFamily::Weibull, &z_x, &z_w, &grid)
                    .unwrap();
            let plain = draw_curves_conditional(&draws, AftFamily::Weibull, &z_x, &grid).unwrap();
            for (m, p) in mix.iter().zip(&plain) {
                for (a, b) in m.iter().zip(p) {
                    assert!(a >= b);
                }
            }
        }
    }

    #[test]
    fn plug_in_curve_at_the_center_lies_inside_the_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let draws = jittered_draws(&mut rng, 400);
        let z = [1.0, 0.5];
        let grid = grid();
        let curve = cif_conditional(&draws, AftFamily::Weibull, &z, &grid).unwrap();
        let center = AftDist::new(AftFamily::Weibull, &[2.825, -0.09], 0.775, &z).unwrap();
        for k in 0..grid.len() {
            let f = center.cdf(grid[k]);
            assert!(curve.lower[k] <= f && f <= curve.upper[k]);
        }
        for k in 1..grid.len() {
            assert!(curve.median[k] >= curve.median[k - 1]);
        }
        let f20 = curve.median[10];
        assert!(f20 > 0.3 && f20 < 0.95, "curve at t=20 was {f20}");
    }

    #[test]
    fn default_grid_spans_the_finite_visit_quantile() {
        let inf = f64::INFINITY;
        let records = vec![
            ScreeningRecord::new(
                vec![0.0, 2.0, 4.0, inf],
                vec![false; 4],
                true,
                vec![1.0],
                vec![1.0],
            )
            .unwrap(),
            ScreeningRecord::new(
                vec![0.0, 3.0, 6.0],
                vec![false, false, true],
                true,
                vec![1.0],
                vec![1.0],
            )
            .unwrap(),
            ScreeningRecord::new(
                vec![0.0, 5.0, 10.0, inf],
                vec![false; 4],
                false,
                vec![1.0],
                vec![1.0],
            )
            .unwrap(),
        ];
        let dataset = Dataset::new(records).unwrap();
        let grid = default_grid(&dataset, 200);
        assert_eq!(grid.len(), 200);
        assert_eq!(grid[0], 0.0);
        let mut times = vec![0.0, 2.0, 4.0, 0.0, 3.0, 6.0, 0.0, 5.0, 10.0];
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((grid[199] - quantile_sorted(&times, 0.99)).abs() < 1e-12);
        for k in 1..grid.len() {
            assert!(grid[k] > grid[k - 1]);
        }
    }

    #[test]
    fn quantile_interpolates_between_order_statistics() {
        let sorted = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 8.0);
        assert_eq!(quantile_sorted(&sorted, 0.5), 3.0);
        assert!((quantile_sorted(&sorted, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn resampling_matches_the_closed_form_push_forward() {
        let z = [0.8, -0.3];
        let grid: Vec<f64> = (1..40).map(|k| k as f64).collect();
        for (family, sigma) in [
            (AftFamily::Weibull, 0.6),
            (AftFamily::Exponential, 1.0),
            (AftFamily::LogLogistic, 0.5),
            (AftFamily::LogNormal, 0.7),
        ] {
            let d = draw(&[2.5, 0.2], sigma, &[0.0, 0.0], 1.0);
            let closed =
                draw_curves_conditional(&[d.clone()], family, &z, &grid).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let k = 100_000;
            let mut samples: Vec<f64> = (0..k)
                .map(|_| {
                    sample_truncated_aft(
                        family,
                        &d.incidence.beta_x,
                        d.incidence.sigma,
                        &z,
                        0.0,
                        f64::INFINITY,
                        &mut rng,
                    )
                    .unwrap()
                })
                .collect();
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let dist = AftDist::new(family, &d.incidence.beta_x, d.incidence.sigma, &z).unwrap();
            let mut ks: f64 = 0.0;
            for (i, &x) in samples.iter().enumerate() {
                let f = dist.cdf(x);
                ks = ks.max((f - i as f64 / k as f64).abs());
                ks = ks.max(((i + 1) as f64 / k as f64 - f).abs());
            }
            assert!(ks < 0.01, "KS distance {ks} for {}", family.name());
            let empirical: Vec<f64> = grid
                .iter()
                .map(|&t| samples.partition_point(|&x| x <= t) as f64 / k as f64)
                .collect();
            for (e, c) in empirical.iter().zip(&closed[0]) {
                assert!((e - c).abs() < 0.01);
            }
        }
    }
}
