use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use lol_core::runner::{read_trace, RunSummary};

const CONFIG: &str = r#"{
  "distribution": {"d": 10, "kappa": 0.5, "q0": 0.3, "p0": 0.2, "r": 0.5, "n_test": 100},
  "trainer": {"m": 16, "eta1": 0.5, "eta2": 0.05, "lambda": 0.01, "tau0": 0.2,
              "epsilon1": 1e-6, "max_iters": 45, "eval_every": 10},
  "algorithms": ["LargeThenAnneal", "SmallConstant"],
  "seeds": [1, 2]
}
"#;

fn lol() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lol"));
    c.env("LOL_THREADS", "2");
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    let mut c = lol();
    c.arg("run").arg(cfg).arg("--set").arg(format!("output_dir={:?}", out.display().to_string()));
    for e in extra {
        c.arg("--set").arg(e);
    }
    c.output().unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &[]).status.success());
    for algo in ["large_then_anneal", "small_constant"] {
        for seed in ["1", "2"] {
            let ta = fs::read(a.join(algo).join(seed).join("trace.csv")).unwrap();
            let tb = fs::read(b.join(algo).join(seed).join("trace.csv")).unwrap();
            assert_eq!(ta, tb, "{algo}/{seed}");
        }
    }
}

#[test]
fn trace_has_one_row_per_eval_plus_final() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    let trace = read_trace(&out.join("small_constant/1/trace.csv")).unwrap();
    // max_iters = 45, eval_every = 10: ceil(45 / 10) + 1 rows
    assert_eq!(trace.len(), 6);
    let header = fs::read_to_string(out.join("small_constant/1/trace.csv")).unwrap();
    assert!(header.starts_with("t,lr,train_loss,reg_loss,loss_m1_r,loss_m1bar_g,loss_m2bar,rho,almost_lin,"));
}

#[test]
fn override_changes_only_its_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &["trainer.eta2=0.02"]).status.success());
    let ca: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    let mut cb: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("config.json")).unwrap()).unwrap();
    assert_eq!(cb["trainer"]["eta2"], 0.02);
    cb["trainer"]["eta2"] = ca["trainer"]["eta2"].clone();
    cb["output_dir"] = ca["output_dir"].clone();
    assert_eq!(ca, cb);
}

#[test]
fn summary_roundtrips_bytewise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    let text = fs::read_to_string(out.join("large_then_anneal/summary.json")).unwrap();
    let s = RunSummary::from_json(&text).unwrap();
    assert_eq!(s.to_json(), text);
    assert_eq!(s.runs.len(), 2);
    let last = read_trace(&out.join("large_then_anneal/1/trace.csv")).unwrap().pop().unwrap();
    assert_eq!(s.runs[0].final_record.as_ref(), Some(&last));
}

#[test]
fn comparing_a_run_with_itself_gives_zero_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let out = tmp.path().join("o");
    assert!(run(&cfg, &out, &[]).status.success());
    let report = tmp.path().join("report");
    let dir = out.join("small_constant");
    let st = lol().arg("compare").arg(&dir).arg(&dir).arg("--out").arg(&report).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.join("comparison.json")).unwrap()).unwrap();
    let second = &cmp["entries"][1]["delta_vs_first"];
    for (k, v) in second.as_object().unwrap() {
        assert!(v.is_null() || v.as_f64() == Some(0.0), "{k} = {v}");
    }
    assert_eq!(second["test_err"].as_f64(), Some(0.0));
    assert!(report.join("comparison.csv").exists());
}

#[test]
fn compare_rejects_mismatched_distributions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&cfg, &a, &[]).status.success());
    assert!(run(&cfg, &b, &["distribution.r=0.4"]).status.success());
    let st = lol().arg("compare").arg(&a).arg(&b).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn single_value_sweep_equals_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let run_dir = tmp.path().join("run");
    assert!(run(&cfg, &run_dir, &["trainer.tau0=0.3"]).status.success());
    let sweep_root = tmp.path().join("sweep");
    let st = lol()
        .arg("sweep")
        .arg(&cfg)
        .args(["--axis", "trainer.tau0", "--values", "0.3"])
        .arg("--set")
        .arg(format!("output_dir={:?}", sweep_root.display().to_string()))
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let point = sweep_root.join("trainer.tau0=0.3");
    for algo in ["large_then_anneal", "small_constant"] {
        let a = fs::read(run_dir.join(algo).join("2/trace.csv")).unwrap();
        let b = fs::read(point.join(algo).join("2/trace.csv")).unwrap();
        assert_eq!(a, b);
    }
    let table = fs::read_to_string(sweep_root.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2);
    assert!(table.starts_with("axis,value,algorithm,seed,status,converged,t0,iterations,lr,"));
}

#[test]
fn bad_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "{\n  \"trainer\": {\n    \"eta1\": -1\n  }\n}\n");
    let out = run(&cfg, &tmp.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eta1"), "{err}");
    let out = lol().args(["sweep"]).arg(&cfg).args(["--axis", "algorithms", "--values", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn profile_prints_defaults() {
    let out = lol().args(["profile", "theory"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["profile"], "Theory");
    assert_eq!(v["distribution"]["d"], 400);
}
