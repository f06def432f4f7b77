//! CSV persistence for screening datasets, simulation ground truth,
//! posterior draws, and exported curves.
//!
//! A dataset file holds one subject per row: an identifier, the visit
//! times as a semicolon-separated ascending list whose final entry may be
//! `inf` for right censoring, the last test outcome as 0/1, the
//! baseline-tested flag as 0/1, and one column per covariate. Covariates
//! shared by both model parts are named `z1..`, otherwise incidence
//! covariates are `x1..` and prevalence covariates `w1..`. Numbers are
//! written with the shortest representation that parses back to the same
//! value, so a write followed by a read reproduces every field exactly.

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::gibbs::{FitResult, PosteriorDraw};
use crate::model::{Dataset, IncidenceParams, PrevalenceParams, ScreeningRecord};
use crate::nonparametric::NpmleEstimate;
use crate::posterior::{CifCurve, CurveKind};
use crate::simgen::SubjectTruth;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// A structural defect in a machine-written file, with its one-based
    /// line number.
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    /// A file-level defect: missing columns, bad header, or invalid
    /// arguments.
    #[error("{0}")]
    Schema(String),
}

/// A rejected dataset row with its one-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: usize,
    pub id: String,
    pub message: String,
}

/// The valid rows of a dataset file plus the rejected remainder.
#[derive(Debug)]
pub struct ReadDataset {
    pub dataset: Dataset,
    /// Row identifiers aligned with the dataset records.
    pub ids: Vec<String>,
    pub issues: Vec<RowIssue>,
    /// Covariate columns actually used for the incidence part.
    pub x_cols: Vec<String>,
    /// Covariate columns actually used for the prevalence part.
    pub w_cols: Vec<String>,
}

const RESERVED: [&str; 4] = ["id", "visits", "outcome", "r"];

/// Writes a dataset file. Every record must carry a leading intercept of
/// one in both covariate vectors; the intercept itself is not written.
/// `ids` defaults to one-based row numbers and may not contain commas.
pub fn write_dataset<W: Write>(
    mut out: W,
    dataset: &Dataset,
    ids: Option<&[String]>,
) -> Result<(), IoError> {
    if let Some(ids) = ids {
        if ids.len() != dataset.len() {
            return Err(IoError::Schema("id count does not match record count".into()));
        }
        if let Some(bad) = ids.iter().find(|id| id.is_empty() || id.contains(',')) {
            return Err(IoError::Schema(format!("id {bad:?} is empty or contains a comma")));
        }
    }
    for r in dataset.records() {
        if r.covariates_x().first() != Some(&1.0) || r.covariates_w().first() != Some(&1.0) {
            return Err(IoError::Schema(
                "records must carry a leading intercept of one in both covariate vectors".into(),
            ));
        }
    }
    let shared = dataset.records().iter().all(|r| r.covariates_x() == r.covariates_w());
    let n_x = dataset.p_x().saturating_sub(1);
    let n_w = dataset.p_w().saturating_sub(1);
    let mut header: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    if shared {
        header.extend((1..=n_x).map(|j| format!("z{j}")));
    } else {
        header.extend((1..=n_x).map(|j| format!("x{j}")));
        header.extend((1..=n_w).map(|j| format!("w{j}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, r) in dataset.records().iter().enumerate() {
        let id = ids.map_or_else(|| (i + 1).to_string(), |ids| ids[i].clone());
        let visits: Vec<String> = r.visits().iter().map(|v| format!("{v}")).collect();
        let mut row = vec![
            id,
            visits.join(";"),
            u8::from(r.delta()).to_string(),
            u8::from(r.baseline_tested()).to_string(),
        ];
        row.extend(r.covariates_x()[1..].iter().map(|v| format!("{v}")));
        if !shared {
            row.extend(r.covariates_w()[1..].iter().map(|v| format!("{v}")));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Splits a header into incidence and prevalence covariate columns. Extra
/// columns that divide cleanly into an `x`-prefixed and a `w`-prefixed
/// group are assigned to the respective parts; any other layout is shared
/// by both parts.
pub fn infer_covariate_columns(header: &[String]) -> (Vec<String>, Vec<String>) {
    let extra: Vec<String> = header
        .iter()
        .filter(|h| !RESERVED.contains(&h.as_str()))
        .cloned()
        .collect();
    let xs: Vec<String> = extra.iter().filter(|c| c.starts_with('x')).cloned().collect();
    let ws: Vec<String> = extra.iter().filter(|c| c.starts_with('w')).cloned().collect();
    if !xs.is_empty() && !ws.is_empty() && xs.len() + ws.len() == extra.len() {
        (xs, ws)
    } else {
        (extra.clone(), extra)
    }
}

/// Reads a dataset file, choosing covariate columns with
/// [`infer_covariate_columns`].
pub fn read_dataset<R: BufRead>(input: R) -> Result<ReadDataset, IoError> {
    read_dataset_impl(input, None)
}

/// Reads a dataset file using the named covariate columns for each model
/// part. Both lists may overlap and either may be empty.
pub fn read_dataset_with<R: BufRead>(
    input: R,
    x_cols: &[String],
    w_cols: &[String],
) -> Result<ReadDataset, IoError> {
    read_dataset_impl(input, Some((x_cols.to_vec(), w_cols.to_vec())))
}

fn read_dataset_impl<R: BufRead>(
    input: R,
    cols: Option<(Vec<String>, Vec<String>)>,
) -> Result<ReadDataset, IoError> {
    let mut lines = input.lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => return Err(IoError::Schema("empty file".into())),
    };
    let header: Vec<String> = header_line.trim_end().split(',').map(str::to_string).collect();
    let position = |name: &str| -> Result<usize, IoError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::Schema(format!("missing column {name}")))
    };
    let idx_id = position("id")?;
    let idx_visits = position("visits")?;
    let idx_outcome = position("outcome")?;
    let idx_r = position("r")?;
    let (x_cols, w_cols) = match cols {
        Some(pair) => pair,
        None => infer_covariate_columns(&header),
    };
    let x_idx: Vec<usize> =
        x_cols.iter().map(|c| position(c)).collect::<Result<_, _>>()?;
    let w_idx: Vec<usize> =
        w_cols.iter().map(|c| position(c)).collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut ids = Vec::new();
    let mut issues = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line = line?;
        let lineno = offset + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != header.len() {
            issues.push(RowIssue {
                line: lineno,
                id: fields.get(idx_id).unwrap_or(&"").to_string(),
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
            continue;
        }
        let id = fields[idx_id].to_string();
        match parse_record(&fields, idx_visits, idx_outcome, idx_r, &x_idx, &w_idx) {
            Ok(record) => {
                records.push(record);
                ids.push(id);
            }
            Err(message) => issues.push(RowIssue { line: lineno, id, message }),
        }
    }
    let dataset = Dataset::new(records).map_err(|e| IoError::Schema(e.to_string()))?;
    Ok(ReadDataset { dataset, ids, issues, x_cols, w_cols })
}

fn parse_flag(text: &str, name: &str) -> Result<bool, String> {
    match text.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("{name} {other:?} must be 0 or 1")),
    }
}

fn parse_record(
    fields: &[&str],
    idx_visits: usize,
    idx_outcome: usize,
    idx_r: usize,
    x_idx: &[usize],
    w_idx: &[usize],
) -> Result<ScreeningRecord, String> {
    let visits: Vec<f64> = fields[idx_visits]
        .split(';')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| format!("visit {:?} is not a number", t.trim()))
        })
        .collect::<Result<_, _>>()?;
    let outcome = parse_flag(fields[idx_outcome], "outcome")?;
    let tested = parse_flag(fields[idx_r], "r")?;
    let covariate = |idx: &[usize]| -> Result<Vec<f64>, String> {
        let mut z = Vec::with_capacity(idx.len() + 1);
        z.push(1.0);
        for &j in idx {
            let t = fields[j].trim();
            z.push(t.parse::<f64>().map_err(|_| format!("covariate {t:?} is not a number"))?);
        }
        Ok(z)
    };
    let covariates_x = covariate(x_idx)?;
    let covariates_w = covariate(w_idx)?;
    let mut outcomes = vec![false; visits.len()];
    *outcomes.last_mut().expect("split always yields a field") = outcome;
    ScreeningRecord::new(visits, outcomes, tested, covariates_x, covariates_w)
        .map_err(|e| e.to_string())
}

/// Writes simulation ground truth, one row per subject in dataset order.
pub fn write_truth<W: Write>(mut out: W, truth: &[SubjectTruth]) -> Result<(), IoError> {
    writeln!(out, "id,x,w,g,r")?;
    for (i, t) in truth.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", i + 1, t.x, t.w, t.g, t.r)?;
    }
    Ok(())
}

/// Reads a ground-truth file written by [`write_truth`].
pub fn read_truth<R: BufRead>(input: R) -> Result<Vec<SubjectTruth>, IoError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(IoError::Schema("empty file".into())),
    };
    if header.trim_end() != "id,x,w,g,r" {
        return Err(IoError::Schema(format!("unexpected truth header {header:?}")));
    }
    let mut truth = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line = line?;
        let lineno = offset + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(IoError::Format {
                line: lineno,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let number = |text: &str, name: &str| -> Result<f64, IoError> {
            text.trim().parse::<f64>().map_err(|_| IoError::Format {
                line: lineno,
                message: format!("{name} {text:?} is not a number"),
            })
        };
        let flag = |text: &str, name: &str| -> Result<u8, IoError> {
            match text.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(IoError::Format {
                    line: lineno,
                    message: format!("{name} {other:?} must be 0 or 1"),
                }),
            }
        };
        truth.push(SubjectTruth {
            x: number(fields[1], "x")?,
            w: number(fields[2], "w")?,
            g: flag(fields[3], "g")?,
            r: flag(fields[4], "r")?,
        });
    }
    Ok(truth)
}

/// Retained posterior draws read back from a draws file.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawsFile {
    pub p_x: usize,
    pub p_w: usize,
    /// Post-burn-in draws per chain, in stored order.
    pub chains: Vec<Vec<PosteriorDraw>>,
}

impl DrawsFile {
    /// All draws pooled chain by chain.
    pub fn pooled(&self) -> Vec<PosteriorDraw> {
        self.chains.iter().flatten().cloned().collect()
    }
}

/// Writes the post-burn-in draws of every chain, one row per draw with
/// its zero-based chain index.
pub fn write_draws<W: Write>(mut out: W, result: &FitResult) -> Result<(), IoError> {
    let (p_x, p_w) = result.chains.first().map_or((0, 0), |c| (c.p_x, c.p_w));
    let mut header = vec!["chain".to_string()];
    header.extend((0..p_x).map(|j| format!("beta_x_{j}")));
    header.push("sigma".into());
    header.extend((0..p_w).map(|j| format!("beta_w_{j}")));
    header.push("kappa".into());
    writeln!(out, "{}", header.join(","))?;
    for (c, chain) in result.chains.iter().enumerate() {
        for t in result.burn_in..chain.len() {
            let (incidence, prevalence, kappa) = chain.draw(t);
            let mut row = vec![c.to_string()];
            row.extend(incidence.beta_x.iter().map(|v| format!("{v}")));
            row.push(format!("{}", incidence.sigma));
            row.extend(prevalence.beta_w.iter().map(|v| format!("{v}")));
            row.push(format!("{kappa}"));
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Reads a draws file written by [`write_draws`].
pub fn read_draws<R: BufRead>(input: R) -> Result<DrawsFile, IoError> {
    let mut lines = input.lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => return Err(IoError::Schema("empty file".into())),
    };
    let header: Vec<&str> = header_line.trim_end().split(',').collect();
    let p_x = header.iter().filter(|h| h.starts_with("beta_x_")).count();
    let p_w = header.iter().filter(|h| h.starts_with("beta_w_")).count();
    let mut expected = vec!["chain".to_string()];
    expected.extend((0..p_x).map(|j| format!("beta_x_{j}")));
    expected.push("sigma".into());
    expected.extend((0..p_w).map(|j| format!("beta_w_{j}")));
    expected.push("kappa".into());
    if header != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(IoError::Schema(format!("unexpected draws header {header_line:?}")));
    }
    let mut chains: Vec<Vec<PosteriorDraw>> = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line = line?;
        let lineno = offset + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != expected.len() {
            return Err(IoError::Format {
                line: lineno,
                message: format!("expected {} fields, found {}", expected.len(), fields.len()),
            });
        }
        let chain: usize = fields[0].parse().map_err(|_| IoError::Format {
            line: lineno,
            message: format!("chain index {:?} is not an integer", fields[0]),
        })?;
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|t| {
                let v: f64 = t.parse().map_err(|_| IoError::Format {
                    line: lineno,
                    message: format!("value {t:?} is not a number"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(IoError::Format {
                        line: lineno,
                        message: format!("value {t:?} is not finite"),
                    })
                }
            })
            .collect::<Result<_, _>>()?;
        if chain >= chains.len() {
            chains.resize_with(chain + 1, Vec::new);
        }
        chains[chain].push(PosteriorDraw {
            incidence: IncidenceParams {
                beta_x: values[..p_x].to_vec(),
                sigma: values[p_x],
            },
            prevalence: PrevalenceParams {
                beta_w: values[p_x + 1..p_x + 1 + p_w].to_vec(),
            },
            kappa: values[p_x + 1 + p_w],
        });
    }
    Ok(DrawsFile { p_x, p_w, chains })
}

/// Writes a posterior curve summary, one row per grid point.
pub fn write_curve<W: Write>(mut out: W, curve: &CifCurve) -> Result<(), IoError> {
    writeln!(out, "t,median,lower,upper,kind")?;
    let label = curve.kind.label();
    for k in 0..curve.grid.len() {
        writeln!(
            out,
            "{},{},{},{},{label}",
            curve.grid[k], curve.median[k], curve.lower[k], curve.upper[k]
        )?;
    }
    Ok(())
}

/// Reads a curve file written by [`write_curve`]. The file must contain
/// at least one row and a single curve kind.
pub fn read_curve<R: BufRead>(input: R) -> Result<CifCurve, IoError> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(IoError::Schema("empty file".into())),
    };
    if header.trim_end() != "t,median,lower,upper,kind" {
        return Err(IoError::Schema(format!("unexpected curve header {header:?}")));
    }
    let mut grid = Vec::new();
    let mut median = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut kind: Option<CurveKind> = None;
    for (offset, line) in lines.enumerate() {
        let line = line?;
        let lineno = offset + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 5 {
            return Err(IoError::Format {
                line: lineno,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let number = |text: &str| -> Result<f64, IoError> {
            text.trim().parse::<f64>().map_err(|_| IoError::Format {
                line: lineno,
                message: format!("value {text:?} is not a number"),
            })
        };
        let row_kind = CurveKind::parse(fields[4].trim()).ok_or_else(|| IoError::Format {
            line: lineno,
            message: format!("unknown curve kind {:?}", fields[4]),
        })?;
        match kind {
            None => kind = Some(row_kind),
            Some(k) if k == row_kind => {}
            Some(_) => {
                return Err(IoError::Format {
                    line: lineno,
                    message: "curve kind changes mid-file".into(),
                })
            }
        }
        grid.push(number(fields[0])?);
        median.push(number(fields[1])?);
        lower.push(number(fields[2])?);
        upper.push(number(fields[3])?);
    }
    let kind = kind.ok_or_else(|| IoError::Schema("curve file has no rows".into()))?;
    Ok(CifCurve { grid, median, lower, upper, kind })
}

/// Writes a nonparametric CDF estimate as its value at each finite
/// support right endpoint, starting from zero at time zero. Mass on an
/// interval with an infinite right endpoint never enters the curve.
pub fn write_npmle_curve<W: Write>(mut out: W, estimate: &NpmleEstimate) -> Result<(), IoError> {
    writeln!(out, "t,cdf")?;
    writeln!(out, "0,0")?;
    let mut acc = 0.0;
    for (&(_, hi), &mass) in estimate.support.iter().zip(&estimate.masses) {
        if hi.is_finite() {
            acc += mass;
            writeln!(out, "{hi},{acc}")?;
        }
    }
    Ok(())
}
