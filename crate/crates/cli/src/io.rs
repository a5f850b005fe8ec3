//! CSV and key=value readers and writers.
//!
//! Floats are written with 17 significant digits so that a read followed by
//! a write reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sace_core::estimands::{FieldSummary, SaceSummary};
use sace_core::model::{DrawRecord, Individual, PosteriorDraws, TrialData, VarianceComponents};
use sace_core::simulate::{ModelMetrics, ReplicateRow, TruthValues};

use crate::error::{CliError, Result};

const TRIAL_COLUMNS: [&str; 5] = ["cluster_id", "period", "treatment", "survived", "outcome"];

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path, comment: Option<&str>) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| CliError::io(path, e))?;
    }
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    let message = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        _ => CliError::Parse {
            path: path.into(),
            line,
            message,
        },
    }
}

fn finish_csv(path: &Path, w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w
        .into_inner()
        .map_err(|e| CliError::io(path, e.into_error()))?;
    inner.flush().map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| CliError::io(path, e))?;
    Ok(s)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_error(path: &Path, line: u64, message: String) -> CliError {
    CliError::Parse {
        path: path.into(),
        line,
        message,
    }
}

/// Reads a trial CSV. Every schema problem is reported with its line number.
pub fn read_trial_csv(path: &Path) -> Result<TrialData> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let header_line = header.position().map_or(1, |p| p.line());
    for (k, want) in TRIAL_COLUMNS.iter().enumerate() {
        if header.get(k) != Some(want) {
            return Err(parse_error(
                path,
                header_line,
                format!(
                    "column {} must be '{want}', found '{}'",
                    k + 1,
                    header.get(k).unwrap_or("")
                ),
            ));
        }
    }
    let covariate_names: Vec<String> = header
        .iter()
        .skip(TRIAL_COLUMNS.len())
        .map(String::from)
        .collect();
    let mut individuals = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |m: String| parse_error(path, line, m);
        let field = |k: usize| rec.get(k).unwrap_or("");
        let index = |k: usize| -> Result<usize> {
            field(k)
                .parse::<usize>()
                .ok()
                .filter(|v| *v >= 1)
                .ok_or_else(|| {
                    err(format!(
                        "{}: expected a positive integer, got '{}'",
                        TRIAL_COLUMNS[k],
                        field(k)
                    ))
                })
        };
        let flag = |k: usize| -> Result<bool> {
            match field(k) {
                "1" => Ok(true),
                "0" => Ok(false),
                v => Err(err(format!(
                    "{}: expected 0 or 1, got '{v}'",
                    TRIAL_COLUMNS[k]
                ))),
            }
        };
        let cluster_id = index(0)?;
        let period = index(1)?;
        let treatment = flag(2)?;
        let survived = flag(3)?;
        let outcome = match (survived, field(4)) {
            (false, "") => None,
            (false, v) => {
                return Err(err(format!(
                    "outcome must be blank when survived = 0, got '{v}'"
                )))
            }
            (true, "") => return Err(err("outcome is required when survived = 1".into())),
            (true, v) => match v.parse::<f64>() {
                Ok(y) if y.is_finite() && y > 0.0 => Some(y),
                _ => return Err(err(format!("outcome must be a positive number, got '{v}'"))),
            },
        };
        let covariates = (TRIAL_COLUMNS.len()..header.len())
            .map(|k| match field(k).parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(err(format!(
                    "{}: expected a finite number, got '{}'",
                    &header[k],
                    field(k)
                ))),
            })
            .collect::<Result<Vec<f64>>>()?;
        individuals.push(Individual {
            cluster_id,
            period,
            treatment,
            survived,
            outcome,
            covariates,
        });
        lines.push(line);
    }
    if individuals.is_empty() {
        return Err(parse_error(path, header_line, "no data rows".into()));
    }
    let n_clusters = individuals.iter().map(|i| i.cluster_id).max().unwrap_or(0);
    let n_periods = individuals.iter().map(|i| i.period).max().unwrap_or(0);
    let data = TrialData {
        individuals,
        n_clusters,
        n_periods,
        covariate_names,
    };
    if let Some(v) = data.validate().first() {
        let line = v.record.map_or(header_line, |r| lines[r]);
        return Err(parse_error(path, line, v.rule.to_string()));
    }
    Ok(data)
}

pub fn write_trial_csv(path: &Path, data: &TrialData, comment: Option<&str>) -> Result<()> {
    let mut w = csv_writer(path, comment)?;
    let mut header: Vec<&str> = TRIAL_COLUMNS.to_vec();
    header.extend(data.covariate_names.iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for ind in &data.individuals {
        let mut row = vec![
            ind.cluster_id.to_string(),
            ind.period.to_string(),
            fmt_bool(ind.treatment).to_string(),
            fmt_bool(ind.survived).to_string(),
            fmt_opt(ind.outcome),
        ];
        row.extend(ind.covariates.iter().map(|x| fmt_f64(*x)));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish_csv(path, w)
}

fn draws_header() -> Vec<&'static str> {
    let mut h = vec![
        "chain",
        "iteration",
        "mu_ldiff",
        "mu_rom",
        "pi_00",
        "pi_10",
        "pi_11",
    ];
    h.extend(VarianceComponents::NAMES);
    h
}

fn draw_row(r: &DrawRecord) -> Vec<String> {
    let mut row = vec![
        r.chain_id.to_string(),
        r.iteration.to_string(),
        fmt_opt(r.mu_ldiff),
        fmt_opt(r.mu_rom),
    ];
    row.extend(r.strata_proportions.iter().map(|p| fmt_f64(*p)));
    row.extend(r.variances.iter().map(|v| fmt_opt(*v)));
    row
}

/// Writes pooled draws; switched-off variance components are left blank.
pub fn write_draws_csv<'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a DrawRecord>,
    comment: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(path, comment)?;
    w.write_record(draws_header())
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record(draw_row(r))
            .map_err(|e| csv_error(path, e))?;
    }
    finish_csv(path, w)
}

pub fn read_draws_csv(path: &Path) -> Result<PosteriorDraws> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let want = draws_header();
    if header.iter().collect::<Vec<_>>() != want {
        let line = header.position().map_or(1, |p| p.line());
        return Err(parse_error(
            path,
            line,
            format!("expected header {}", want.join(",")),
        ));
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let opt = |k: usize| -> Result<Option<f64>> {
            match &rec[k] {
                "" => Ok(None),
                v => v.parse::<f64>().map(Some).map_err(|_| {
                    parse_error(path, line, format!("{}: cannot parse '{v}'", want[k]))
                }),
            }
        };
        let req = |k: usize| -> Result<f64> {
            opt(k)?.ok_or_else(|| parse_error(path, line, format!("{} is required", want[k])))
        };
        let int = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| {
                parse_error(
                    path,
                    line,
                    format!("{}: cannot parse '{}'", want[k], &rec[k]),
                )
            })
        };
        let mut variances = [None; 10];
        for (j, v) in variances.iter_mut().enumerate() {
            *v = opt(7 + j)?;
        }
        records.push(DrawRecord {
            chain_id: int(0)?,
            iteration: int(1)?,
            mu_ldiff: opt(2)?,
            mu_rom: opt(3)?,
            strata_proportions: [req(4)?, req(5)?, req(6)?],
            variances,
            theta_always: None,
            theta_protected: None,
        });
    }
    Ok(PosteriorDraws { records })
}

/// Writes `key = value` lines.
pub fn write_key_values(path: &Path, lines: &[(String, String)]) -> Result<()> {
    let mut out = create(path)?;
    for (k, v) in lines {
        writeln!(out, "{k} = {v}").map_err(|e| CliError::io(path, e))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

const NA: &str = "NA";

fn field_lines(name: &str, f: Option<FieldSummary>, out: &mut Vec<(String, String)>) {
    let (mean, sd, lo, hi, n) = match f {
        Some(f) => (
            fmt_f64(f.mean),
            fmt_f64(f.sd),
            f.hpd.map_or(NA.into(), |h| fmt_f64(h.0)),
            f.hpd.map_or(NA.into(), |h| fmt_f64(h.1)),
            f.n.to_string(),
        ),
        None => (NA.into(), NA.into(), NA.into(), NA.into(), "0".into()),
    };
    out.push((format!("{name}.mean"), mean));
    out.push((format!("{name}.sd"), sd));
    out.push((format!("{name}.hpd_lower"), lo));
    out.push((format!("{name}.hpd_upper"), hi));
    out.push((format!("{name}.n"), n));
}

/// Every summary field, with `NA` for quantities that were not sampled.
pub fn summary_lines(s: &SaceSummary) -> Vec<(String, String)> {
    let mut out = vec![
        ("mass".to_string(), fmt_f64(s.mass)),
        ("n_draws".into(), s.n_draws.to_string()),
        ("n_chains".into(), s.n_chains.to_string()),
        (
            "missing_contrast_fraction".into(),
            fmt_f64(s.missing_contrast_fraction),
        ),
        ("rhat_ldiff".into(), s.rhat_ldiff.map_or(NA.into(), fmt_f64)),
    ];
    for (name, f) in s.fields() {
        field_lines(name, f, &mut out);
    }
    out
}

pub fn truth_lines(
    scenario_key_hash: u64,
    t: &TruthValues,
    n_clusters: usize,
) -> Vec<(String, String)> {
    vec![
        ("scenario_hash".into(), format!("{scenario_key_hash:016x}")),
        ("truth_clusters".into(), n_clusters.to_string()),
        ("n_individuals".into(), t.n_individuals.to_string()),
        ("mu_ldiff".into(), fmt_f64(t.mu_ldiff)),
        ("mu_rom".into(), fmt_f64(t.mu_rom)),
        ("pi_00".into(), fmt_f64(t.strata_proportions[0])),
        ("pi_10".into(), fmt_f64(t.strata_proportions[1])),
        ("pi_11".into(), fmt_f64(t.strata_proportions[2])),
    ]
}

/// Reads a truth file written by [`truth_lines`].
pub fn read_truth(path: &Path) -> Result<(u64, TruthValues)> {
    let text = read_text(path)?;
    let kv: std::collections::BTreeMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect();
    let bad = |k: &str| parse_error(path, 0, format!("missing or malformed '{k}'"));
    let num = |k: &str| {
        kv.get(k)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| bad(k))
    };
    let hash = kv
        .get("scenario_hash")
        .and_then(|v| u64::from_str_radix(v, 16).ok())
        .ok_or_else(|| bad("scenario_hash"))?;
    let n_individuals = kv
        .get("n_individuals")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("n_individuals"))?;
    Ok((
        hash,
        TruthValues {
            mu_ldiff: num("mu_ldiff")?,
            mu_rom: num("mu_rom")?,
            strata_proportions: [num("pi_00")?, num("pi_10")?, num("pi_11")?],
            n_individuals,
        },
    ))
}

pub fn write_replicates_csv(
    path: &Path,
    rows: &[ReplicateRow],
    comment: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(path, comment)?;
    w.write_record([
        "replicate",
        "model",
        "n_chains_failed",
        "failure",
        "ldiff_mean",
        "ldiff_hpd_lower",
        "ldiff_hpd_upper",
        "rom_mean",
        "rom_hpd_lower",
        "rom_hpd_upper",
        "pi_00_mean",
        "pi_10_mean",
        "pi_11_mean",
        "missing_contrast_fraction",
    ])
    .map_err(|e| csv_error(path, e))?;
    for r in rows {
        let mut row = vec![
            r.replicate.to_string(),
            r.model.label().to_string(),
            r.n_chains_failed.to_string(),
            r.failure.clone().unwrap_or_default(),
            fmt_f64(r.ldiff_mean),
            fmt_f64(r.ldiff_hpd.0),
            fmt_f64(r.ldiff_hpd.1),
            fmt_f64(r.rom_mean),
            fmt_f64(r.rom_hpd.0),
            fmt_f64(r.rom_hpd.1),
        ];
        row.extend(r.strata_mean.iter().map(|p| fmt_f64(*p)));
        row.push(fmt_f64(r.missing_contrast_fraction));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish_csv(path, w)
}

/// One row per model: truth, bias, RMSE and coverage of both contrasts,
/// the strata proportions, and the share of failed replicates.
pub fn write_aggregate_csv(
    path: &Path,
    metrics: &[ModelMetrics],
    comment: Option<&str>,
) -> Result<()> {
    let mut w = csv_writer(path, comment)?;
    let mut header = vec![
        "model".to_string(),
        "n_replicates".into(),
        "n_failed".into(),
        "failure_rate".into(),
    ];
    for c in ["ldiff", "rom"] {
        for m in ["truth", "bias", "rmse", "coverage"] {
            header.push(format!("{c}_{m}"));
        }
    }
    for p in ["pi_00", "pi_10", "pi_11"] {
        for m in ["truth", "bias", "rmse"] {
            header.push(format!("{p}_{m}"));
        }
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for m in metrics {
        let mut row = vec![
            m.model.label().to_string(),
            m.n_replicates.to_string(),
            m.n_failed.to_string(),
            fmt_f64(m.failure_rate),
        ];
        for c in [&m.ldiff, &m.rom] {
            row.extend([c.truth, c.bias, c.rmse, c.coverage].map(fmt_f64));
        }
        for (t, b, r) in m.strata {
            row.extend([t, b, r].map(fmt_f64));
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    finish_csv(path, w)
}
