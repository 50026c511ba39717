//! Experiment orchestration: seeded jobs, CSV traces, JSON summaries,
//! comparison reports and parameter sweeps.

pub mod compare;
pub mod config;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{MetricsRecord, Monitor, TRACE_COLUMNS};
use crate::distribution::{generate_dataset, Dataset, DistributionParams};
use crate::rng::{stream, Stream};
use crate::trainer::{self, Algorithm, RunOutcome, RunStatus};

pub use config::{load, load_str, ConfigError, ExperimentConfig, Profile};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] crate::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Csv(String),
    #[error("{0}")]
    Mismatch(String),
}

impl RunnerError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::Mismatch(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything a single seed needs besides the trainer settings.
pub struct SeedContext {
    pub params: DistributionParams,
    pub train: Dataset,
    pub monitor: Monitor,
}

/// Draws the constants, train/test sets and probes for `seed`.
pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> crate::Result<SeedContext> {
    let params = cfg.distribution.params(cfg.trainer.model, seed)?;
    let n_train = cfg.distribution.n_train.unwrap_or_else(|| params.implied_n());
    let train = generate_dataset(&params, n_train, &mut stream(seed, Stream::TrainData))?;
    let test = generate_dataset(&params, cfg.distribution.n_test, &mut stream(seed, Stream::TestData))?;
    let monitor = Monitor::new(
        params.clone(),
        test,
        &train,
        cfg.trainer.model.patches(),
        &mut stream(seed, Stream::Probe),
    );
    Ok(SeedContext { params, train, monitor })
}

/// Runs one `(algorithm, seed)` job in memory.
pub fn run_job(cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64) -> crate::Result<RunOutcome> {
    let ctx = prepare_seed(cfg, seed)?;
    trainer::run(&cfg.trainer_for(algorithm, seed), &ctx.train, &ctx.monitor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub status: RunStatus,
    pub converged: bool,
    pub t0: Option<u64>,
    pub iterations: u64,
    pub wall_time_s: f64,
    pub final_record: Option<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn write_trace(path: &Path, trace: &[MetricsRecord]) -> Result<(), RunnerError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunnerError::Csv(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| RunnerError::Csv(format!("{}: {e}", path.display()));
    w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for r in trace {
        w.write_record(r.to_row()).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<MetricsRecord>, RunnerError> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| RunnerError::Csv(format!("{}: {e}", path.display())))?;
    let header = rd
        .headers()
        .map_err(|e| RunnerError::Csv(format!("{}: {e}", path.display())))?
        .clone();
    if header.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(RunnerError::Csv(format!("{}: unexpected header", path.display())));
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(|e| RunnerError::Csv(format!("{}: {e}", path.display())))?;
        let fields: Vec<&str> = row.iter().collect();
        let rec = MetricsRecord::from_row(&fields)
            .map_err(|e| RunnerError::Csv(format!("{} row {}: {e}", path.display(), i + 2)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Worker count: `LOL_THREADS` when set, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("LOL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `f` on every job with at most `workers` threads; results keep job order.
pub fn pool_map<J: Sync, R: Send>(jobs: &[J], workers: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("job ran")).collect()
}

/// Result of [`execute`]: one summary per algorithm.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub summaries: Vec<RunSummary>,
}

impl RunReport {
    pub fn any_non_finite(&self) -> bool {
        self.summaries
            .iter()
            .flat_map(|s| &s.runs)
            .any(|r| matches!(r.status, RunStatus::NonFinite { .. }))
    }

    pub fn exit_code(&self) -> i32 {
        if self.any_non_finite() {
            3
        } else {
            0
        }
    }
}

/// Runs every algorithm × seed of `cfg` and writes the output tree:
/// `config.json`, `<algo>/<seed>/trace.csv` and `<algo>/summary.json`.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunReport, RunnerError> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let cfg_path = out.join("config.json");
    fs::write(&cfg_path, cfg.to_json_pretty() + "\n").map_err(io_err(&cfg_path))?;

    let algorithms = cfg.algorithms();
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();

    let results = pool_map(&jobs, worker_count(), |&(algo, seed)| -> Result<SeedRun, RunnerError> {
        let start = Instant::now();
        let outcome = run_job(cfg, algo, seed)?;
        let wall = start.elapsed().as_secs_f64();
        let dir = out.join(algo.dir_name()).join(seed.to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_trace(&dir.join("trace.csv"), &outcome.trace)?;
        Ok(SeedRun {
            seed,
            converged: outcome.converged(),
            status: outcome.status.clone(),
            t0: outcome.state.t0,
            iterations: outcome.state.t,
            wall_time_s: wall,
            final_record: outcome.trace.last().cloned(),
        })
    });

    let hash = cfg.hash();
    let mut summaries = Vec::new();
    let mut results = results.into_iter();
    for &algo in &algorithms {
        let runs = results.by_ref().take(cfg.seeds.len()).collect::<Result<Vec<_>, _>>()?;
        let summary = RunSummary {
            algorithm: algo,
            config_hash: hash.clone(),
            config: cfg.clone(),
            runs,
        };
        let path = out.join(algo.dir_name()).join("summary.json");
        fs::create_dir_all(path.parent().unwrap()).map_err(io_err(&path))?;
        fs::write(&path, summary.to_json()).map_err(io_err(&path))?;
        summaries.push(summary);
    }
    Ok(RunReport { summaries })
}

/// `lol run`: load, apply overrides, execute.
pub fn cli_run(config_path: &Path, overrides: &[String]) -> Result<RunReport, RunnerError> {
    let cfg = load(config_path, overrides)?;
    execute(&cfg)
}
