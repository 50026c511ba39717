//! One-axis parameter sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{load_str, ConfigError};
use super::{execute, io_err, RunReport, RunnerError};
use crate::diagnostics::{MetricsRecord, TRACE_COLUMNS};

/// One value of the swept axis and what it produced.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: String,
    pub output_dir: PathBuf,
    pub report: RunReport,
}

fn dir_label(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs the config once per value of `axis` (a dotted path). Each point
/// writes its own run tree under `<output_dir>/<axis>=<value>`, and the
/// combined long-format table goes to `<output_dir>/sweep.csv`.
pub fn sweep(config_text: &str, overrides: &[String], axis: &str, values: &[String]) -> Result<Vec<SweepPoint>, RunnerError> {
    if values.is_empty() {
        return Err(ConfigError {
            message: "sweep needs at least one value".into(),
            line: None,
        }
        .into());
    }
    let base = load_str(config_text, overrides)?;
    let root = base.output_dir.clone();
    let mut points = Vec::new();
    for v in values {
        let mut ovs = overrides.to_vec();
        ovs.push(format!("{axis}={v}"));
        let out = root.join(format!("{axis}={}", dir_label(v)));
        ovs.push(format!("output_dir={}", serde_json::Value::String(out.display().to_string())));
        let cfg = load_str(config_text, &ovs)?;
        // the axis must name an existing numeric field
        let doc = serde_json::to_value(&cfg).map_err(crate::Error::from)?;
        let field = axis.split('.').try_fold(&doc, |cur, k| cur.get(k));
        if !field.is_some_and(|f| f.is_number()) {
            return Err(ConfigError {
                message: format!("sweep axis `{axis}` is not a numeric config field"),
                line: None,
            }
            .into());
        }
        let report = execute(&cfg)?;
        points.push(SweepPoint {
            value: v.clone(),
            output_dir: out,
            report,
        });
    }
    write_sweep_csv(&root.join("sweep.csv"), axis, &points)?;
    Ok(points)
}

fn write_sweep_csv(path: &Path, axis: &str, points: &[SweepPoint]) -> Result<(), RunnerError> {
    fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(io_err(path))?;
    let csv_err = |e: csv::Error| RunnerError::Csv(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["axis", "value", "algorithm", "seed", "status", "converged", "t0", "iterations"];
    header.extend(TRACE_COLUMNS.iter().skip(1));
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        for s in &p.report.summaries {
            for run in &s.runs {
                let mut row = vec![
                    axis.to_string(),
                    p.value.clone(),
                    s.algorithm.dir_name().to_string(),
                    run.seed.to_string(),
                    serde_json::to_value(&run.status)
                        .map(|v| match v {
                            serde_json::Value::String(s) => s,
                            other => other.to_string(),
                        })
                        .unwrap_or_default(),
                    run.converged.to_string(),
                    run.t0.map(|t| t.to_string()).unwrap_or_default(),
                    run.iterations.to_string(),
                ];
                match &run.final_record {
                    Some(r) => row.extend(MetricsRecord::to_row(r).into_iter().skip(1)),
                    None => row.extend(std::iter::repeat_n(String::new(), TRACE_COLUMNS.len() - 1)),
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

