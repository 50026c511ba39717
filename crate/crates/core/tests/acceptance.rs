//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Positional arguments filter criteria by
//! substring of their name.

use std::collections::HashMap;
use std::process::{Command, ExitCode};
use std::time::Instant;

use lol_core::diagnostics::{activation_hamming, almost_linearity, rho, MetricsRecord};
use lol_core::distribution::{generate_dataset, make_params, Dataset, ParamOverrides};
use lol_core::network::{batch_loss, gradient, init_network, init_with, Arch, Network};
use lol_core::rng::{stream, Stream};
use lol_core::runner::compare::SeedOrder;
use lol_core::runner::{load_str, pool_map, prepare_seed, run_job, worker_count, ExperimentConfig};
use lol_core::trainer::{step, Algorithm, RunOutcome, TrainerState};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn desk() -> ExperimentConfig {
    load_str("{}", &[]).expect("desk profile loads")
}

// ---------------------------------------------------------------- gradient

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..10u64 {
        let d = 8;
        let ov = ParamOverrides {
            p0: Some(0.25),
            q0: Some(0.25),
            r: Some(0.3),
            ..Default::default()
        };
        let params = make_params(d, 0.5, 0.25, &ov, seed).unwrap();
        let data = generate_dataset(&params, 30, &mut stream(seed, Stream::TrainData)).unwrap();
        let net = init_with(Arch::dense(12, d), 0.5, &mut stream(seed, Stream::Init)).unwrap();
        let grad = gradient(&net, &data, None).unwrap();
        let mut rng = stream(seed, Stream::Probe);
        let mut n = 0;
        while n < 20 {
            let i = rng.random_range(0..net.rows());
            let j = rng.random_range(0..2 * d);
            if !net.in_block(i, j) || near_kink(&net, &data, i) {
                continue;
            }
            let h = 1e-6;
            let loss_at = |delta: f64| {
                let mut m = net.clone();
                m.weights[[i, j]] += delta;
                batch_loss(&m, &data, None).unwrap()
            };
            let fd = (loss_at(h) - loss_at(-h)) / (2.0 * h);
            let an = grad[[i, j]];
            worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8));
            n += 1;
        }
        checked += n;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && secs < 5.0,
        format!("{checked} coordinates, max relative error {worst:.2e}, {secs:.2}s"),
    )
}

fn near_kink(net: &Network, data: &Dataset, row: usize) -> bool {
    let d = net.d;
    let block = usize::from(row >= net.w_rows);
    data.examples.iter().any(|ex| {
        let xb = if block == 0 { &ex.x1 } else { &ex.x2 };
        let a: f64 = (0..d).map(|j| net.weights[[row, block * d + j]] * xb[j]).sum();
        xb.iter().any(|v| *v != 0.0) && a.abs() < 1e-4
    })
}

// ------------------------------------------------------ noise and identity

struct NoiseRun {
    rel_var_err: f64,
    drift: f64,
    entries: usize,
    secs: f64,
}

fn noise_run() -> NoiseRun {
    let start = Instant::now();
    let mut cfg = desk();
    let d = cfg.distribution.d;
    // enough rows for 1e5 in-block entries, split evenly between blocks
    cfg.trainer.m = 2 * 100_000usize.div_ceil(2 * d);
    cfg.trainer.algorithm = Algorithm::LargeThenAnneal;
    cfg.trainer.seed = 11;
    let params = cfg.distribution.params(cfg.trainer.model, 11).unwrap();
    let data = generate_dataset(&params, 16, &mut stream(11, Stream::TrainData)).unwrap();
    let mut state = TrainerState::init(&cfg.trainer, d).unwrap();
    for _ in 0..10_000 {
        step(&mut state, &cfg.trainer, &data, cfg.trainer.eta1).unwrap();
    }
    let net = &state.net;
    let vals: Vec<f64> = state
        .u_tilde
        .indexed_iter()
        .filter(|((i, j), _)| net.in_block(*i, *j))
        .map(|(_, v)| *v)
        .collect();
    let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
    let tau0 = cfg.trainer.tau0;
    NoiseRun {
        rel_var_err: (var / (tau0 * tau0) - 1.0).abs(),
        drift: state.decomposition_drift(),
        entries: vals.len(),
        secs: start.elapsed().as_secs_f64(),
    }
}

// ------------------------------------------------------------ zero anchors

fn anchors() -> Outcome {
    let cfg = desk();
    let ctx = prepare_seed(&cfg, 1).unwrap();
    let mut net = init_network(cfg.trainer.m, cfg.distribution.d, 0.1, &mut stream(1, Stream::Init)).unwrap();
    net.weights.fill(0.0);
    let loss = batch_loss(&net, &ctx.train, None).unwrap();
    let rho0 = rho(&net, &ctx.train);
    let want_rho = ctx.train.m2.len() as f64 / (2.0 * ctx.train.len() as f64);
    let al = almost_linearity(&net, &ctx.params);
    let pass = (loss - std::f64::consts::LN_2).abs() <= 1e-12 && rho0 == want_rho && al == 0.0;
    outcome(
        pass,
        format!("loss - ln2 = {:.1e}, rho = {rho0} (want {want_rho}), almost_lin = {al}", loss - std::f64::consts::LN_2),
    )
}

// ------------------------------------------------------------- desk runs

struct DeskRuns {
    jobs: Vec<(Algorithm, u64)>,
    runs: HashMap<(Algorithm, u64), RunOutcome>,
    seeds: Vec<u64>,
    threshold: f64,
    secs: f64,
}

fn desk_runs(cfg: &ExperimentConfig, algorithms: &[Algorithm]) -> DeskRuns {
    let start = Instant::now();
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results = pool_map(&jobs, worker_count(), |&(a, s)| run_job(cfg, a, s).expect("desk run"));
    DeskRuns {
        runs: jobs.iter().copied().zip(results).collect(),
        jobs,
        seeds: cfg.seeds.clone(),
        threshold: cfg.learning_order_threshold,
        secs: start.elapsed().as_secs_f64(),
    }
}

impl DeskRuns {
    fn get(&self, a: Algorithm, seed: u64) -> &RunOutcome {
        &self.runs[&(a, seed)]
    }

    fn order(&self, a: Algorithm, seed: u64) -> SeedOrder {
        let r = self.get(a, seed);
        SeedOrder::from_trace(seed, r.state.t0, &r.trace, self.threshold)
    }

    fn last(&self, a: Algorithm, seed: u64) -> &MetricsRecord {
        self.get(a, seed).trace.last().expect("non-empty trace")
    }

    fn status_line(&self) -> String {
        let mut parts = Vec::new();
        for &(a, s) in &self.jobs {
            let r = self.get(a, s);
            parts.push(format!("{}/{s}:{:?}@{}", a.dir_name(), r.status, r.state.t));
        }
        parts.join(" ")
    }
}

fn count(xs: impl Iterator<Item = bool>) -> usize {
    xs.filter(|b| *b).count()
}

fn fmt_opt(v: Option<u64>) -> String {
    v.map_or("-".into(), |t| t.to_string())
}

fn learning_order(runs: &DeskRuns, need: usize) -> Outcome {
    let s_ok = count(runs.seeds.iter().map(|&s| runs.order(Algorithm::SmallConstant, s).inverted));
    let ls_ok = count(runs.seeds.iter().map(|&s| runs.order(Algorithm::LargeThenAnneal, s).q_after_t0));
    let per_seed: Vec<String> = runs
        .seeds
        .iter()
        .map(|&s| {
            let o = runs.order(Algorithm::SmallConstant, s);
            let l = runs.order(Algorithm::LargeThenAnneal, s);
            format!(
                "seed {s}: S q/p={}/{} LS q/t0={}/{}",
                fmt_opt(o.q_cross),
                fmt_opt(o.p_cross),
                fmt_opt(l.q_cross),
                fmt_opt(l.t0)
            )
        })
        .collect();
    outcome(
        s_ok >= need && ls_ok >= need,
        format!(
            "S inverted on {s_ok}/{n}, L-S Q only after t0 on {ls_ok}/{n} (need {need}); {}",
            per_seed.join("; "),
            n = runs.seeds.len()
        ),
    )
}

fn generalization(runs: &DeskRuns) -> Outcome {
    let diffs: Vec<f64> = runs
        .seeds
        .iter()
        .map(|&s| {
            let e = |a| runs.last(a, s).test_err_p_only.unwrap_or(f64::NAN);
            e(Algorithm::SmallConstant) - e(Algorithm::LargeThenAnneal)
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let positive = count(diffs.iter().map(|d| *d > 0.0));
    let need = runs.seeds.len() - 1;
    outcome(
        mean > 0.0 && positive >= need,
        format!(
            "P-only test error S - L-S: mean {mean:+.4}, positive on {positive}/{} (need {need}); per seed {:?}",
            diffs.len(),
            diffs.iter().map(|d| format!("{d:+.4}")).collect::<Vec<_>>()
        ),
    )
}

fn almost_linearity_order(runs: &DeskRuns) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    for &s in &runs.seeds {
        let r = runs.get(Algorithm::LargeThenAnneal, s);
        let t0 = r.state.t0;
        let phase1 = r
            .trace
            .iter()
            .filter(|m| t0.is_none_or(|t0| m.t < t0))
            .map(|m| m.almost_lin)
            .fold(f64::NEG_INFINITY, f64::max);
        let fin = r.trace.last().unwrap().almost_lin;
        if t0.is_some() && phase1 < fin {
            ok += 1;
        }
        parts.push(format!("seed {s}: {phase1:.3} vs {fin:.3}"));
    }
    let need = runs.seeds.len() - 1;
    outcome(ok >= need, format!("{ok}/{} seeds (need {need}); {}", runs.seeds.len(), parts.join(", ")))
}

fn mitigation(runs: &DeskRuns) -> Outcome {
    let mean = |a| {
        runs.seeds.iter().map(|&s| runs.last(a, s).test_err).sum::<f64>() / runs.seeds.len() as f64
    };
    let m = mean(Algorithm::MitigationNoise);
    let s = mean(Algorithm::SmallConstant);
    outcome(m < s, format!("mean test error mitigation {m:.4} vs S {s:.4}"))
}

fn span_direction(runs: &DeskRuns) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    for &seed in &runs.seeds {
        let s = runs.last(Algorithm::SmallConstant, seed).span_residual;
        let l = runs.last(Algorithm::LargeThenAnneal, seed).span_residual;
        if let (Some(s), Some(l)) = (s, l) {
            if s < l {
                ok += 1;
            }
            parts.push(format!("{s:.4}<{l:.4}"));
        } else {
            parts.push("missing".into());
        }
    }
    let need = runs.seeds.len() - 1;
    outcome(ok >= need, format!("{ok}/{} seeds (need {need}); S<L-S: {}", runs.seeds.len(), parts.join(", ")))
}

// -------------------------------------------------------------- coupling

fn coupling() -> Outcome {
    let start = Instant::now();
    let base = desk();
    let steps = 50;
    let fro = 4.0;
    let mut medians = Vec::new();
    for m in [256usize, 1024, 4096] {
        let mut cfg = base.clone();
        cfg.trainer.m = m;
        cfg.trainer.max_iters = steps;
        cfg.trainer.eval_every = steps;
        let seeds = cfg.seeds.clone();
        let mut vals: Vec<f64> = pool_map(&seeds, worker_count(), |&seed| {
            let ctx = prepare_seed(&cfg, seed).unwrap();
            let out = lol_core::trainer::run(&cfg.trainer_for(Algorithm::LargeThenAnneal, seed), &ctx.train, &ctx.monitor)
                .unwrap();
            let st = &out.state;
            let norm = st.u_bar.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u = &st.u_bar * (fro / norm) + &st.u_tilde;
            activation_hamming(&st.net, &u, &st.u_tilde, &ctx.monitor.probe).unwrap()
        });
        vals.sort_by(f64::total_cmp);
        medians.push((m, vals[vals.len() / 2]));
    }
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        decreasing && secs < 1200.0,
        format!(
            "median hamming at t={steps}, |U_bar|_F={fro}: {} ({secs:.0}s)",
            medians.iter().map(|(m, h)| format!("m={m}: {h:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ------------------------------------------------------------------ conv

fn conv_parity() -> Outcome {
    let mut dense = desk();
    dense.trainer.max_iters = 300;
    dense.trainer.eval_every = 25;
    let mut conv = dense.clone();
    conv.trainer.model = lol_core::trainer::ModelKind::Conv { k: 1 };
    let mut same = true;
    for a in [Algorithm::LargeThenAnneal, Algorithm::SmallConstant, Algorithm::MitigationNoise] {
        let x = run_job(&dense, a, 1).unwrap();
        let y = run_job(&conv, a, 1).unwrap();
        same &= x.trace.len() == y.trace.len()
            && x.trace.iter().zip(&y.trace).all(|(p, q)| {
                let (rp, rq) = (p.to_row(), q.to_row());
                rp == rq
            });
    }
    outcome(same, "k=1 traces equal the dense traces field by field")
}

// ----------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("desk.json");
    std::fs::write(&cfg, "{\"trainer\": {\"max_iters\": 200}, \"seeds\": [1, 2]}\n").unwrap();
    let mut traces = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let st = Command::new(env!("CARGO_BIN_EXE_lol"))
            .arg("run")
            .arg(&cfg)
            .arg("--set")
            .arg(format!("output_dir={:?}", out.display().to_string()))
            .output()
            .unwrap();
        assert!(st.status.code().is_some_and(|c| c == 0), "{}", String::from_utf8_lossy(&st.stderr));
        let mut files = Vec::new();
        for algo in ["large_then_anneal", "small_constant", "mitigation_noise"] {
            for seed in ["1", "2"] {
                files.push(std::fs::read(out.join(algo).join(seed).join("trace.csv")).unwrap());
            }
        }
        traces.push(files);
    }
    let same = traces[0] == traces[1];
    outcome(same, format!("{} trace files compared byte for byte", traces[0].len()))
}

// ------------------------------------------------------------------ main

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let report = |name: &'static str, o: Outcome, results: &mut Vec<(&str, Outcome)>| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    if wanted("gradient") {
        report("gradient", gradient_check(), &mut results);
    }
    if wanted("noise_stationarity") || wanted("decomposition") {
        let n = noise_run();
        if wanted("noise_stationarity") {
            report(
                "noise_stationarity",
                outcome(
                    n.rel_var_err < 0.02 && n.entries >= 100_000 && n.secs < 120.0,
                    format!(
                        "var(U_tilde)/tau0^2 off by {:.3}% over {} entries after 1e4 steps ({:.1}s)",
                        100.0 * n.rel_var_err,
                        n.entries,
                        n.secs
                    ),
                ),
                &mut results,
            );
        }
        if wanted("decomposition") {
            report(
                "decomposition",
                outcome(n.drift < 1e-9, format!("max |U - (U_bar + U_tilde)| = {:.2e}", n.drift)),
                &mut results,
            );
        }
    }
    if wanted("anchors") {
        report("anchors", anchors(), &mut results);
    }
    let desk_names = ["learning_order", "generalization", "almost_linearity", "mitigation", "span_residual"];
    if desk_names.iter().any(|n| wanted(n)) {
        let cfg = desk();
        let runs = desk_runs(
            &cfg,
            &[Algorithm::LargeThenAnneal, Algorithm::SmallConstant, Algorithm::MitigationNoise],
        );
        println!("desk runs: {:.0}s on {} worker(s); {}", runs.secs, worker_count(), runs.status_line());
        if wanted("learning_order") {
            report("learning_order", learning_order(&runs, runs.seeds.len() - 1), &mut results);
        }
        if wanted("generalization") {
            report("generalization", generalization(&runs), &mut results);
        }
        if wanted("almost_linearity") {
            report("almost_linearity", almost_linearity_order(&runs), &mut results);
        }
        if wanted("mitigation") {
            report("mitigation", mitigation(&runs), &mut results);
        }
        if wanted("span_residual") {
            report("span_residual", span_direction(&runs), &mut results);
        }
    }
    if wanted("coupling") {
        report("coupling", coupling(), &mut results);
    }
    if wanted("conv") {
        let parity = conv_parity();
        let mut cfg = desk();
        cfg.trainer.model = lol_core::trainer::ModelKind::Conv { k: 4 };
        let runs = desk_runs(&cfg, &[Algorithm::LargeThenAnneal, Algorithm::SmallConstant]);
        let order = learning_order(&runs, 3);
        report(
            "conv",
            outcome(
                parity.pass && order.pass,
                format!("{}; k=4 ({:.0}s): {}", parity.detail, runs.secs, order.detail),
            ),
            &mut results,
        );
    }
    if wanted("determinism") {
        report("determinism", determinism(), &mut results);
    }

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} criteria, {} passed, {failed} failed", results.len(), results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
