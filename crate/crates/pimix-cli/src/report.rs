//! Plain-text reports: dataset typology, fit summaries, diagnostics.

use std::fmt::Write as _;

use pimix::diagnostics::{ess_total, split_rhat};
use pimix::gibbs::{FitResult, ParamDiagnostic, PosteriorDraw};
use pimix::io::DrawsFile;
use pimix::model::Dataset;
use pimix::posterior::quantile_sorted;

/// Counts of the six screening-record patterns, one line per pattern.
pub fn kind_table(dataset: &Dataset) -> String {
    let counts = dataset.kind_counts();
    let width = counts.iter().map(|(k, _)| k.label().len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    for (kind, count) in &counts {
        writeln!(out, "  {:<width$}  {count:>6}", kind.label()).unwrap();
    }
    writeln!(out, "  {:<width$}  {:>6}", "total", dataset.len()).unwrap();
    out
}

/// Report order of the scalar parameters for given block sizes.
pub fn param_names(p_x: usize, p_w: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..p_x).map(|j| format!("beta_x[{j}]")).collect();
    names.push("sigma".into());
    names.extend((0..p_w).map(|j| format!("beta_w[{j}]")));
    names.push("kappa".into());
    names
}

fn param_value(draw: &PosteriorDraw, p_x: usize, p_w: usize, idx: usize) -> f64 {
    if idx < p_x {
        draw.incidence.beta_x[idx]
    } else if idx == p_x {
        draw.incidence.sigma
    } else if idx < p_x + 1 + p_w {
        draw.prevalence.beta_w[idx - p_x - 1]
    } else {
        draw.kappa
    }
}

/// Posterior median and central 95% interval of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Summaries over the pooled post-burn-in draws, in report order.
pub fn parameter_summaries(result: &FitResult) -> Vec<ParamSummary> {
    let (p_x, p_w) = result.chains.first().map_or((0, 0), |c| (c.p_x, c.p_w));
    let names = param_names(p_x, p_w);
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for draw in result.posterior_draws() {
        for (idx, column) in series.iter_mut().enumerate() {
            column.push(param_value(&draw, p_x, p_w, idx));
        }
    }
    names
        .into_iter()
        .zip(series)
        .map(|(name, mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ParamSummary {
                name,
                median: quantile_sorted(&values, 0.5),
                lower: quantile_sorted(&values, 0.025),
                upper: quantile_sorted(&values, 0.975),
            }
        })
        .collect()
}

/// Median and 95% interval table in the two-decimal house style.
pub fn summary_table(summaries: &[ParamSummary]) -> String {
    let mut out = String::new();
    writeln!(out, "  {:<12} {:>8}  95% interval", "parameter", "median").unwrap();
    for s in summaries {
        writeln!(
            out,
            "  {:<12} {:>8.2}  [{:.2}, {:.2}]",
            s.name, s.median, s.lower, s.upper
        )
        .unwrap();
    }
    out
}

fn diagnostic_table(diags: &[ParamDiagnostic]) -> String {
    let mut out = String::new();
    writeln!(out, "  {:<12} {:>8} {:>9}", "parameter", "rhat", "ess").unwrap();
    for d in diags {
        let note = if d.constant { "  constant" } else { "" };
        writeln!(out, "  {:<12} {:>8.3} {:>9.1}{note}", d.name, d.rhat, d.ess).unwrap();
    }
    out
}

/// The full fit report: model, data typology, convergence, WAIC, summary.
pub fn fit_report(
    dataset: &Dataset,
    family_name: &str,
    kappa_prior: &str,
    result: &FitResult,
) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "model: {family_name} incidence, probit prevalence, kappa prior {kappa_prior}"
    )
    .unwrap();
    writeln!(out, "records:").unwrap();
    out.push_str(&kind_table(dataset));
    let status = if result.converged {
        format!("converged after {} sweeps per chain", result.iterations)
    } else {
        format!("NOT converged at the {}-sweep cap", result.iterations)
    };
    writeln!(
        out,
        "status: {status} ({} chains, {} retained draws per chain)",
        result.chains.len(),
        result.retained_len()
    )
    .unwrap();
    out.push_str(&diagnostic_table(&result.diagnostics));
    for warning in &result.warnings {
        writeln!(out, "warning: {warning}").unwrap();
    }
    match &result.waic {
        Some(waic) => writeln!(
            out,
            "WAIC: {:.2} (pointwise form; total form {:.2}, {} dropped draws)",
            waic.pointwise_form, waic.total_form, waic.dropped_draws
        )
        .unwrap(),
        None => writeln!(out, "WAIC: not stored").unwrap(),
    }
    writeln!(out, "posterior summary:").unwrap();
    out.push_str(&summary_table(&parameter_summaries(result)));
    out
}

/// Recomputed split R-hat and effective sample size per parameter from a
/// saved draws file. The flag is true when every parameter passes.
pub fn diagnose_report(file: &DrawsFile, rhat_threshold: f64, min_ess: f64) -> (String, bool) {
    let mut out = String::new();
    writeln!(
        out,
        "chains: {}  draws per chain: {}",
        file.chains.len(),
        file.chains.first().map_or(0, Vec::len)
    )
    .unwrap();
    writeln!(out, "  {:<12} {:>8} {:>9}  status", "parameter", "rhat", "ess").unwrap();
    let names = param_names(file.p_x, file.p_w);
    let mut all_pass = true;
    for (idx, name) in names.iter().enumerate() {
        let series: Vec<Vec<f64>> = file
            .chains
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .map(|d| param_value(d, file.p_x, file.p_w, idx))
                    .collect()
            })
            .collect();
        let views: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        let rhat = split_rhat(&views);
        let ess = if rhat.degenerate { 0.0 } else { ess_total(&views) };
        let pass = rhat.degenerate || (rhat.value <= rhat_threshold && ess >= min_ess);
        all_pass &= pass;
        let status = if rhat.degenerate {
            "constant"
        } else if pass {
            "ok"
        } else {
            "FAIL"
        };
        writeln!(out, "  {name:<12} {:>8.3} {ess:>9.1}  {status}", rhat.value).unwrap();
    }
    (out, all_pass)
}
