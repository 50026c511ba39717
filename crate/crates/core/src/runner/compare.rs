//! Side-by-side reports over finished run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, read_trace, RunSummary, RunnerError};
use crate::diagnostics::MetricsRecord;
use crate::trainer::Algorithm;

/// Mean and sample standard deviation over the seeds that have a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let xs: Vec<f64> = values.into_iter().flatten().filter(|v| v.is_finite()).collect();
        let n = xs.len();
        if n == 0 {
            return Stat {
                mean: None,
                std: None,
                count: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat {
            mean: Some(mean),
            std: Some(std),
            count: n,
        }
    }

    fn delta(&self, base: &Stat) -> Option<f64> {
        Some(self.mean? - base.mean?)
    }
}

/// First record time at which `field` drops below `threshold`.
pub fn first_crossing(trace: &[MetricsRecord], threshold: f64, field: impl Fn(&MetricsRecord) -> Option<f64>) -> Option<u64> {
    trace.iter().find(|r| field(r).is_some_and(|v| v < threshold)).map(|r| r.t)
}

/// Per-seed learning-order facts read from a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOrder {
    pub seed: u64,
    pub t0: Option<u64>,
    /// First t with loss on Q-only examples (g part) below the threshold.
    pub q_cross: Option<u64>,
    /// First t with loss on examples lacking Q below the threshold.
    pub p_cross: Option<u64>,
    /// Q crossed strictly before P (P never crossing counts as after).
    pub inverted: bool,
    /// The run annealed and Q did not cross before `t0`.
    pub q_after_t0: bool,
}

impl SeedOrder {
    pub fn from_trace(seed: u64, t0: Option<u64>, trace: &[MetricsRecord], threshold: f64) -> Self {
        let q_cross = first_crossing(trace, threshold, |r| r.loss_m1bar_g);
        let p_cross = first_crossing(trace, threshold, |r| r.loss_m2bar);
        let inverted = match (q_cross, p_cross) {
            (Some(q), Some(p)) => q < p,
            (Some(_), None) => true,
            _ => false,
        };
        let q_after_t0 = match (q_cross, t0) {
            (Some(q), Some(t0)) => q >= t0,
            (None, Some(_)) => true,
            (_, None) => false,
        };
        SeedOrder {
            seed,
            t0,
            q_cross,
            p_cross,
            inverted,
            q_after_t0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    pub test_err: Stat,
    pub test_err_p_only: Stat,
    pub test_err_q_only: Stat,
    pub test_err_both: Stat,
    pub q_cross: Stat,
    pub p_cross: Stat,
    pub t0: Stat,
}

impl EntryStats {
    fn deltas(&self, base: &EntryStats) -> EntryDeltas {
        EntryDeltas {
            test_err: self.test_err.delta(&base.test_err),
            test_err_p_only: self.test_err_p_only.delta(&base.test_err_p_only),
            test_err_q_only: self.test_err_q_only.delta(&base.test_err_q_only),
            test_err_both: self.test_err_both.delta(&base.test_err_both),
            q_cross: self.q_cross.delta(&base.q_cross),
            p_cross: self.p_cross.delta(&base.p_cross),
            t0: self.t0.delta(&base.t0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDeltas {
    pub test_err: Option<f64>,
    pub test_err_p_only: Option<f64>,
    pub test_err_q_only: Option<f64>,
    pub test_err_both: Option<f64>,
    pub q_cross: Option<f64>,
    pub p_cross: Option<f64>,
    pub t0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub dir: PathBuf,
    pub algorithm: Algorithm,
    pub seeds: Vec<SeedOrder>,
    pub stats: EntryStats,
    /// Fraction of seeds where Q was learned before P.
    pub inversion_frac: f64,
    /// Majority of seeds inverted.
    pub inversion: bool,
    /// Fraction of seeds where Q was learned no earlier than `t0`.
    pub q_after_t0_frac: f64,
    /// Mean differences against the first entry.
    pub delta_vs_first: EntryDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub threshold: f64,
    pub entries: Vec<ComparisonEntry>,
}

/// Expands a path to algorithm directories: a directory holding
/// `summary.json` is used as is, an output root yields each child that does.
fn algorithm_dirs(dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    if dir.join("summary.json").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.join("summary.json").is_file() {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(RunnerError::Mismatch(format!("{}: no summary.json found", dir.display())));
    }
    Ok(found)
}

fn load_entry(dir: &Path, threshold: Option<f64>) -> Result<(RunSummary, Vec<SeedOrder>, Vec<MetricsRecord>), RunnerError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let summary = RunSummary::from_json(&text)?;
    let threshold = threshold.unwrap_or(summary.config.learning_order_threshold);
    let mut orders = Vec::new();
    let mut finals = Vec::new();
    for run in &summary.runs {
        let trace = read_trace(&dir.join(run.seed.to_string()).join("trace.csv"))?;
        orders.push(SeedOrder::from_trace(run.seed, run.t0, &trace, threshold));
        if let Some(last) = trace.last() {
            finals.push(last.clone());
        }
    }
    Ok((summary, orders, finals))
}

/// Builds the comparison over `dirs` (at least two paths).
pub fn compare(dirs: &[PathBuf]) -> Result<Comparison, RunnerError> {
    if dirs.len() < 2 {
        return Err(RunnerError::Mismatch("compare needs at least two run directories".into()));
    }
    let mut all = Vec::new();
    for d in dirs {
        all.extend(algorithm_dirs(d)?);
    }
    let mut threshold = None;
    let mut reference = None;
    let mut entries: Vec<ComparisonEntry> = Vec::new();
    for dir in all {
        let (summary, seeds, finals) = load_entry(&dir, threshold)?;
        threshold.get_or_insert(summary.config.learning_order_threshold);
        let dist = &summary.config.distribution;
        match &reference {
            None => reference = Some((dir.clone(), dist.clone())),
            Some((rdir, rdist)) if rdist != dist => {
                return Err(RunnerError::Mismatch(format!(
                    "distribution config of {} differs from {}",
                    dir.display(),
                    rdir.display()
                )))
            }
            _ => {}
        }
        let stats = EntryStats {
            test_err: Stat::of(finals.iter().map(|r| Some(r.test_err))),
            test_err_p_only: Stat::of(finals.iter().map(|r| r.test_err_p_only)),
            test_err_q_only: Stat::of(finals.iter().map(|r| r.test_err_q_only)),
            test_err_both: Stat::of(finals.iter().map(|r| r.test_err_both)),
            q_cross: Stat::of(seeds.iter().map(|s| s.q_cross.map(|t| t as f64))),
            p_cross: Stat::of(seeds.iter().map(|s| s.p_cross.map(|t| t as f64))),
            t0: Stat::of(seeds.iter().map(|s| s.t0.map(|t| t as f64))),
        };
        let n = seeds.len().max(1) as f64;
        let inv = seeds.iter().filter(|s| s.inverted).count() as f64 / n;
        let after = seeds.iter().filter(|s| s.q_after_t0).count() as f64 / n;
        let delta_vs_first = match entries.first() {
            Some(first) => stats.deltas(&first.stats),
            None => stats.deltas(&stats),
        };
        entries.push(ComparisonEntry {
            dir,
            algorithm: summary.algorithm,
            seeds,
            stats,
            inversion_frac: inv,
            inversion: inv > 0.5,
            q_after_t0_frac: after,
            delta_vs_first,
        });
    }
    Ok(Comparison {
        threshold: threshold.unwrap_or(0.3),
        entries,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(crate::diagnostics::fmt_num).unwrap_or_default()
}

/// Writes `comparison.json` and `comparison.csv` into `out`.
pub fn write_comparison(cmp: &Comparison, out: &Path) -> Result<(), RunnerError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let jpath = out.join("comparison.json");
    let mut json = serde_json::to_string_pretty(cmp).map_err(crate::Error::from)?;
    json.push('\n');
    fs::write(&jpath, json).map_err(io_err(&jpath))?;

    let cpath = out.join("comparison.csv");
    let csv_err = |e: csv::Error| RunnerError::Csv(format!("{}: {e}", cpath.display()));
    let mut w = csv::Writer::from_path(&cpath).map_err(csv_err)?;
    let metrics = ["test_err", "test_err_p_only", "test_err_q_only", "test_err_both", "q_cross", "p_cross", "t0"];
    let mut header = vec!["dir".to_string(), "algorithm".to_string()];
    for m in metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
        header.push(format!("{m}_delta"));
    }
    header.extend(["inversion_frac", "inversion", "q_after_t0_frac"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for e in &cmp.entries {
        let s = &e.stats;
        let d = &e.delta_vs_first;
        let cols = [
            (&s.test_err, d.test_err),
            (&s.test_err_p_only, d.test_err_p_only),
            (&s.test_err_q_only, d.test_err_q_only),
            (&s.test_err_both, d.test_err_both),
            (&s.q_cross, d.q_cross),
            (&s.p_cross, d.p_cross),
            (&s.t0, d.t0),
        ];
        let mut row = vec![e.dir.display().to_string(), format!("{:?}", e.algorithm)];
        for (st, delta) in cols {
            row.push(opt(st.mean));
            row.push(opt(st.std));
            row.push(opt(delta));
        }
        row.push(crate::diagnostics::fmt_num(e.inversion_frac));
        row.push(e.inversion.to_string());
        row.push(crate::diagnostics::fmt_num(e.q_after_t0_frac));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&cpath))
}
