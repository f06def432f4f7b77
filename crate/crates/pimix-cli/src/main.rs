//! Command-line surface for the prevalence-incidence mixture model:
//! dataset validation, fitting, prediction, simulation, nonparametric
//! estimation and convergence diagnostics.
//!
//! Exit codes: 0 on success, 2 when a fit or diagnosis finds the chains
//! unconverged (artifacts are still written), 1 for usage and data
//! errors.

mod config;
mod report;
mod svg;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use pimix::dist::AftFamily;
use pimix::io::{self as pio, ReadDataset};
use pimix::model::Dataset;
use pimix::nonparametric::em_misclassified;
use pimix::posterior::{
    cif_conditional, cif_marginal, cif_mixture_conditional, cif_mixture_marginal, covariate_rows,
    default_grid, marginal_prevalence, CifCurve, CurveKind,
};
use pimix::simgen::{gen_sim1, Sim1Config};

use config::{kappa_prior_label, RunConfig, RunMeta};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] pio::IoError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Fit(#[from] pimix::gibbs::FitError),
    #[error(transparent)]
    Sim(#[from] pimix::simgen::SimError),
    #[error(transparent)]
    Nonparametric(#[from] pimix::nonparametric::NonparametricError),
    #[error(transparent)]
    Dist(#[from] pimix::dist::DistError),
}

fn usage<S: Into<String>>(message: S) -> CliError {
    CliError::Usage(message.into())
}

#[derive(Parser)]
#[command(
    name = "pimix",
    version,
    about = "Prevalence-incidence mixture modeling for interval-censored screening data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset file and report its screening-case typology.
    Ingest(IngestArgs),
    /// Fit the model; writes draws, metadata and a report.
    Fit(FitArgs),
    /// Posterior predictive incidence curves from saved draws.
    Predict(PredictArgs),
    /// Generate a synthetic screening cohort with known ground truth.
    Simulate(SimulateArgs),
    /// Misclassification-adjusted nonparametric CDF estimate.
    Npfit(NpfitArgs),
    /// Convergence diagnostics for a saved draws file.
    Diagnose(DiagnoseArgs),
}

#[derive(clap::Args)]
struct IngestArgs {
    /// Dataset CSV path.
    data: PathBuf,
    /// Incidence covariate columns (comma separated); inferred when absent.
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
    /// Prevalence covariate columns (comma separated); inferred when absent.
    #[arg(long, value_delimiter = ',')]
    w_cols: Option<Vec<String>>,
    /// Drop invalid rows with a warning instead of failing.
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(clap::Args)]
struct FitArgs {
    /// Dataset CSV path.
    data: PathBuf,
    /// Run configuration TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config, then $PIMIX_OUT_DIR, then
    /// the working directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// File stem of the artifacts.
    #[arg(long)]
    prefix: Option<String>,
    /// Override the sampler seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop invalid rows with a warning instead of failing.
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(clap::Args)]
struct PredictArgs {
    /// Draws CSV as written by fit.
    #[arg(long)]
    draws: PathBuf,
    /// Metadata TOML as written by fit; supplies the family.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Family name; overrides the metadata.
    #[arg(long)]
    family: Option<String>,
    /// Curve kind: conditional, marginal, mixture_conditional or
    /// mixture_marginal.
    #[arg(long)]
    kind: String,
    /// Dataset whose covariate rows are averaged over (marginal kinds) or
    /// used for the default grid.
    #[arg(long)]
    data: Option<PathBuf>,
    /// One covariate profile (semicolon-separated values, no intercept);
    /// repeatable. Required for the conditional kinds.
    #[arg(long, allow_hyphen_values = true)]
    profile: Vec<String>,
    /// Prevalence-part profiles aligned with --profile; defaults to the
    /// same values.
    #[arg(long, allow_hyphen_values = true)]
    profile_w: Vec<String>,
    /// Evaluation grid, either start:stop:count or a semicolon list.
    #[arg(long)]
    grid: Option<String>,
    /// Curve CSV path; profile curves beyond the first get _2, _3 suffixes.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render all curves into one static SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    w_cols: Option<Vec<String>>,
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Cohort design; sim1 is the built-in screening design.
    #[arg(long, default_value = "sim1")]
    design: String,
    /// Number of subjects.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "weibull")]
    family: String,
    /// Prevalence probit intercept.
    #[arg(long, default_value_t = 0.22)]
    theta: f64,
    /// Test sensitivity in (0, 1].
    #[arg(long, default_value_t = 0.8)]
    kappa: f64,
    /// Probability a subject is tested at baseline.
    #[arg(long, default_value_t = 1.0)]
    p_baseline: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset output path; defaults to sim1.csv in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth sidecar path; defaults to the dataset stem plus
    /// _truth.csv.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct NpfitArgs {
    /// Dataset CSV path.
    data: PathBuf,
    /// Assumed test sensitivity in (0, 1].
    #[arg(long)]
    kappa: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
    /// Curve CSV path; defaults to npfit.csv in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(clap::Args)]
struct DiagnoseArgs {
    /// Draws CSV as written by fit.
    #[arg(long)]
    draws: PathBuf,
    #[arg(long, default_value_t = 1.1)]
    rhat_threshold: f64,
    #[arg(long, default_value_t = 40.0)]
    min_ess: f64,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Npfit(args) => cmd_npfit(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| CliError::File { path: path.display().to_string(), source })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|source| CliError::File { path: path.display().to_string(), source })
}

/// Output directory precedence: flag, config, environment, working
/// directory.
fn resolve_out_dir(flag: Option<&Path>, configured: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| configured.map(PathBuf::from))
        .or_else(|| std::env::var_os("PIMIX_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|source| CliError::File { path: dir.display().to_string(), source })
}

/// Reads a dataset, printing every rejected row. Rejected rows abort the
/// command unless `skip_invalid` is set.
fn load_dataset(
    path: &Path,
    x_cols: Option<&[String]>,
    w_cols: Option<&[String]>,
    skip_invalid: bool,
) -> Result<ReadDataset, CliError> {
    let reader = open_reader(path)?;
    let read = match (x_cols, w_cols) {
        (None, None) => pio::read_dataset(reader)?,
        (x, w) => pio::read_dataset_with(reader, x.unwrap_or(&[]), w.unwrap_or(&[]))?,
    };
    for issue in &read.issues {
        eprintln!("{}:{}: id {}: {}", path.display(), issue.line, issue.id, issue.message);
    }
    if !read.issues.is_empty() && !skip_invalid {
        return Err(usage(format!(
            "{} invalid rows in {}; rerun with --skip-invalid to drop them",
            read.issues.len(),
            path.display()
        )));
    }
    if read.dataset.is_empty() {
        return Err(usage(format!("{} has no valid records", path.display())));
    }
    Ok(read)
}

fn cmd_ingest(args: IngestArgs) -> Result<i32, CliError> {
    let read = load_dataset(
        &args.data,
        args.x_cols.as_deref(),
        args.w_cols.as_deref(),
        args.skip_invalid,
    )?;
    println!(
        "dataset: {} valid records, {} invalid rows",
        read.dataset.len(),
        read.issues.len()
    );
    println!(
        "covariates: x = [{}], w = [{}]",
        read.x_cols.join(", "),
        read.w_cols.join(", ")
    );
    print!("{}", report::kind_table(&read.dataset));
    Ok(0)
}

fn cmd_fit(args: FitArgs) -> Result<i32, CliError> {
    let run_config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut resolved = run_config.resolve()?;
    if let Some(seed) = args.seed {
        resolved.sampler.seed = seed;
    }
    let read = load_dataset(
        &args.data,
        resolved.x_cols.as_deref(),
        resolved.w_cols.as_deref(),
        args.skip_invalid,
    )?;
    let result = pimix::gibbs::fit(&read.dataset, &resolved.spec, &resolved.sampler)?;

    let out_dir = resolve_out_dir(args.out_dir.as_deref(), resolved.out_dir.as_deref());
    ensure_dir(&out_dir)?;
    let prefix = args.prefix.as_deref().unwrap_or(&resolved.prefix);
    let draws_path = out_dir.join(format!("{prefix}_draws.csv"));
    let meta_path = out_dir.join(format!("{prefix}_meta.toml"));
    let report_path = out_dir.join(format!("{prefix}_report.txt"));

    let mut draws_bytes = Vec::new();
    pio::write_draws(&mut draws_bytes, &result)?;
    write_file(&draws_path, &draws_bytes)?;

    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").into(),
        family: resolved.spec.family.name().into(),
        x_cols: read.x_cols.clone(),
        w_cols: read.w_cols.clone(),
        seed: resolved.sampler.seed,
        chains: resolved.sampler.n_chains,
        thin: resolved.sampler.thin,
        iterations: result.iterations,
        burn_in: result.burn_in,
        retained_per_chain: result.retained_len(),
        kappa_prior: kappa_prior_label(&resolved.spec.prior.kappa),
        converged: result.converged,
    };
    write_file(&meta_path, meta.to_toml().as_bytes())?;

    let report_text = report::fit_report(
        &read.dataset,
        resolved.spec.family.name(),
        &meta.kappa_prior,
        &result,
    );
    write_file(&report_path, report_text.as_bytes())?;

    print!("{report_text}");
    println!("draws: {}", draws_path.display());
    println!("meta: {}", meta_path.display());
    println!("report: {}", report_path.display());
    if result.converged {
        Ok(0)
    } else {
        eprintln!("convergence was not reached; artifacts contain the partial run");
        Ok(2)
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(usage("grid must be start:stop:count or a semicolon list"));
        }
        let start: f64 =
            parts[0].parse().map_err(|_| usage("grid start is not a number"))?;
        let stop: f64 = parts[1].parse().map_err(|_| usage("grid stop is not a number"))?;
        let count: usize =
            parts[2].parse().map_err(|_| usage("grid count is not an integer"))?;
        if !(start.is_finite() && stop.is_finite() && start >= 0.0 && stop > start) {
            return Err(usage("grid needs 0 <= start < stop"));
        }
        if count < 2 {
            return Err(usage("grid count must be at least 2"));
        }
        (0..count)
            .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
            .collect()
    } else {
        spec.split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| usage(format!("grid value {t:?} is not a number")))
            })
            .collect::<Result<_, _>>()?
    };
    if grid.is_empty() {
        return Err(usage("the evaluation grid is empty"));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(usage("grid values must be finite and non-negative"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage("grid values must be strictly increasing"));
    }
    Ok(grid)
}

fn parse_profile(text: &str, expected: usize, part: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = text
        .split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| usage(format!("profile value {t:?} is not a number")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != expected {
        let found = values.len();
        return Err(usage(format!(
            "profile {text:?} has {found} values but the {part} part was fitted with {expected} covariates"
        )));
    }
    let mut z = Vec::with_capacity(expected + 1);
    z.push(1.0);
    z.extend(values);
    Ok(z)
}

/// Suffixes `_k` before the extension for every curve after the first.
fn numbered_path(base: &Path, index: usize, total: usize) -> PathBuf {
    if total == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let ext = base.extension().map_or_else(String::new, |e| format!(".{}", e.to_string_lossy()));
    base.with_file_name(format!("{stem}_{}{ext}", index + 1))
}

fn cmd_predict(args: PredictArgs) -> Result<i32, CliError> {
    let file = pio::read_draws(open_reader(&args.draws)?)?;
    let draws = file.pooled();
    if draws.is_empty() {
        return Err(usage("the draws file contains no draws"));
    }
    let family = match (&args.family, &args.meta) {
        (Some(name), _) => AftFamily::parse(name)
            .ok_or_else(|| usage(format!("unknown family {name:?}")))?,
        (None, Some(meta_path)) => {
            let meta = RunMeta::load(meta_path)?;
            AftFamily::parse(&meta.family).ok_or_else(|| {
                usage(format!("metadata names unknown family {:?}", meta.family))
            })?
        }
        (None, None) => return Err(usage("give --family or --meta")),
    };
    let kind = CurveKind::parse(&args.kind).ok_or_else(|| {
        usage(format!(
            "unknown curve kind {:?}; use conditional, marginal, mixture_conditional or mixture_marginal",
            args.kind
        ))
    })?;

    let data = match &args.data {
        Some(path) => Some(load_dataset(
            path,
            args.x_cols.as_deref(),
            args.w_cols.as_deref(),
            args.skip_invalid,
        )?),
        None => None,
    };
    let grid = match &args.grid {
        Some(spec) => parse_grid(spec)?,
        None => match &data {
            Some(read) => default_grid(&read.dataset, 101),
            None => return Err(usage("give --grid, or --data to derive a grid")),
        },
    };

    fn marginal_data<'a>(
        read: Option<&'a ReadDataset>,
        kind: CurveKind,
        p_x: usize,
        p_w: usize,
    ) -> Result<&'a Dataset, CliError> {
        let read = read.ok_or_else(|| {
            usage(format!("kind {} averages over a dataset; give --data", kind.label()))
        })?;
        if read.dataset.p_x() != p_x || read.dataset.p_w() != p_w {
            return Err(usage(format!(
                "dataset covariates ({}, {}) do not match the draws file ({}, {})",
                read.dataset.p_x(),
                read.dataset.p_w(),
                p_x,
                p_w
            )));
        }
        Ok(&read.dataset)
    }

    let mut curves: Vec<(String, CifCurve)> = Vec::new();
    match kind {
        CurveKind::Conditional | CurveKind::MixtureConditional => {
            if args.profile.is_empty() {
                return Err(usage(format!(
                    "kind {} evaluates fixed profiles; give --profile",
                    kind.label()
                )));
            }
            if !args.profile_w.is_empty() && args.profile_w.len() != args.profile.len() {
                return Err(usage("--profile-w must pair up with --profile"));
            }
            for (i, text) in args.profile.iter().enumerate() {
                let z_x = parse_profile(text, file.p_x.saturating_sub(1), "incidence")?;
                let curve = match kind {
                    CurveKind::Conditional => cif_conditional(&draws, family, &z_x, &grid)?,
                    _ => {
                        let w_text = args.profile_w.get(i).unwrap_or(text);
                        let z_w =
                            parse_profile(w_text, file.p_w.saturating_sub(1), "prevalence")?;
                        cif_mixture_conditional(&draws, family, &z_x, &z_w, &grid)?
                    }
                };
                curves.push((format!("z = {text}"), curve));
            }
        }
        CurveKind::Marginal => {
            let dataset = marginal_data(data.as_ref(), kind, file.p_x, file.p_w)?;
            let (rows_x, _) = covariate_rows(dataset);
            curves.push((
                "marginal".into(),
                cif_marginal(&draws, family, &rows_x, &grid, None)?,
            ));
        }
        CurveKind::MixtureMarginal => {
            let dataset = marginal_data(data.as_ref(), kind, file.p_x, file.p_w)?;
            let (rows_x, rows_w) = covariate_rows(dataset);
            let prevalence = marginal_prevalence(&draws, &rows_w)?;
            println!(
                "marginal prevalence: {:.3} [{:.3}, {:.3}]",
                prevalence.median, prevalence.lower, prevalence.upper
            );
            curves.push((
                "mixture marginal".into(),
                cif_mixture_marginal(&draws, family, &rows_x, &rows_w, &grid)?,
            ));
        }
    }

    let out_dir = resolve_out_dir(args.out_dir.as_deref(), None);
    ensure_dir(&out_dir)?;
    let base = args.out.clone().unwrap_or_else(|| out_dir.join("predict.csv"));
    for (i, (_, curve)) in curves.iter().enumerate() {
        let path = numbered_path(&base, i, curves.len());
        let mut bytes = Vec::new();
        pio::write_curve(&mut bytes, curve)?;
        write_file(&path, &bytes)?;
        println!("curve: {}", path.display());
    }
    if let Some(svg_path) = &args.svg {
        write_file(svg_path, svg::curve_svg(&curves).as_bytes())?;
        println!("svg: {}", svg_path.display());
    }
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, CliError> {
    if args.design != "sim1" {
        return Err(usage(format!(
            "unknown design {:?}; sim1 is the built-in screening design \
             (donor-resampled cohorts are available through the library)",
            args.design
        )));
    }
    let family = AftFamily::parse(&args.family)
        .ok_or_else(|| usage(format!("unknown family {:?}", args.family)))?;
    let mut sim = Sim1Config::benchmark(args.n, args.theta, args.kappa, args.p_baseline);
    sim.family = family;
    let cohort = gen_sim1(&sim, args.seed)?;

    let out_dir = resolve_out_dir(args.out_dir.as_deref(), None);
    ensure_dir(&out_dir)?;
    let out_path = args.out.clone().unwrap_or_else(|| out_dir.join("sim1.csv"));
    let truth_path = args.truth.clone().unwrap_or_else(|| {
        let stem = out_path
            .file_stem()
            .map_or_else(|| "sim1".into(), |s| s.to_string_lossy().into_owned());
        out_path.with_file_name(format!("{stem}_truth.csv"))
    });

    let mut bytes = Vec::new();
    pio::write_dataset(&mut bytes, &cohort.dataset, None)?;
    write_file(&out_path, &bytes)?;
    let mut truth_bytes = Vec::new();
    pio::write_truth(&mut truth_bytes, &cohort.truth)?;
    write_file(&truth_path, &truth_bytes)?;

    let prevalent = cohort.truth.iter().filter(|t| t.g == 1).count();
    println!(
        "simulated {} subjects ({} prevalent in truth), seed {}",
        cohort.dataset.len(),
        prevalent,
        args.seed
    );
    print!("{}", report::kind_table(&cohort.dataset));
    println!("dataset: {}", out_path.display());
    println!("truth: {}", truth_path.display());
    Ok(0)
}

fn cmd_npfit(args: NpfitArgs) -> Result<i32, CliError> {
    if !(args.kappa > 0.0 && args.kappa <= 1.0) {
        return Err(usage("kappa must lie in (0, 1]"));
    }
    let read = load_dataset(&args.data, None, None, args.skip_invalid)?;
    let estimate = em_misclassified(&read.dataset, args.kappa, args.tol, args.max_iters)?;
    let out_dir = resolve_out_dir(args.out_dir.as_deref(), None);
    ensure_dir(&out_dir)?;
    let out_path = args.out.clone().unwrap_or_else(|| out_dir.join("npfit.csv"));
    let mut bytes = Vec::new();
    pio::write_npmle_curve(&mut bytes, &estimate)?;
    write_file(&out_path, &bytes)?;

    let finite_mass: f64 = estimate
        .support
        .iter()
        .zip(&estimate.masses)
        .filter(|((_, hi), _)| hi.is_finite())
        .map(|(_, m)| m)
        .sum();
    let status = if estimate.converged { "converged" } else { "stopped at the iteration cap" };
    println!(
        "{status} after {} iterations; {} support intervals, mass {:.4} beyond the last finite endpoint",
        estimate.iterations,
        estimate.support.len(),
        (1.0 - finite_mass).max(0.0)
    );
    println!("curve: {}", out_path.display());
    Ok(0)
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<i32, CliError> {
    let file = pio::read_draws(open_reader(&args.draws)?)?;
    if file.chains.is_empty() || file.chains.iter().any(Vec::is_empty) {
        return Err(usage("the draws file has no draws for some chain"));
    }
    let len = file.chains[0].len();
    if file.chains.iter().any(|c| c.len() != len) {
        return Err(usage("chains in the draws file have unequal lengths"));
    }
    let (text, all_pass) = report::diagnose_report(&file, args.rhat_threshold, args.min_ess);
    print!("{text}");
    if all_pass {
        Ok(0)
    } else {
        eprintln!("some parameters fail the mixing thresholds");
        Ok(2)
    }
}
