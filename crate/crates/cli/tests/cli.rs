use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use exdiff::io::{read_trace_csv, StatusSidecar};
use exdiff_core::engine::Algorithm;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_exdiff"));
    c.env_remove("EXDIFF_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn exec(cmd: &str, config: &Path, out: &Path) -> Output {
    bin().args([cmd, "--config"]).arg(config).arg("--out").arg(out).output().unwrap()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn schema_errors(report: &Value) -> Vec<String> {
    let schema: Value = json(&Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/analysis_report.schema.json"));
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let errs = match compiled.validate(report) {
        Ok(()) => Vec::new(),
        Err(e) => e.map(|e| e.to_string()).collect(),
    };
    errs
}

fn check_trace(dir: &Path, stem: &str, kind: Algorithm) {
    let trace = read_trace_csv(&dir.join(format!("{stem}.csv"))).unwrap();
    let side: StatusSidecar = serde_json::from_value(json(&dir.join(format!("{stem}.status.json")))).unwrap();
    assert_eq!(trace[0].iteration, 0);
    assert_eq!(trace[0].comm_units, 0);
    for (i, r) in trace.iter().enumerate() {
        assert_eq!(r.iteration, i);
        assert_eq!(r.comm_units, i * kind.comm_per_iteration());
        assert!(r.rel_error >= 0.0 || r.rel_error.is_nan());
    }
    let last = trace.last().unwrap();
    assert_eq!(side.iterations, last.iteration);
    assert_eq!(side.final_rel_error.to_bits(), last.rel_error.to_bits());
    assert!(["converged", "exhausted", "diverged"].contains(&side.status.as_str()));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    ok(&exec("run", &configs().join("ls_compare.json"), &a));
    ok(&bin().args(["run", "--jobs", "1", "--config"]).arg(configs().join("ls_compare.json")).arg("--out").arg(&b).output().unwrap());
    let (x, y) = (dir_bytes(&a), dir_bytes(&b));
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn least_squares_comparison_traces() {
    let t = tempfile::tempdir().unwrap();
    ok(&exec("run", &configs().join("ls_compare.json"), t.path()));
    let summary = json(&t.path().join("summary.json"));
    assert_eq!(summary["agents"], 20);
    assert_eq!(summary["variables_per_unit"].as_u64().unwrap(), 2 * 5 * summary["edges"].as_u64().unwrap());
    let mut units = std::collections::HashMap::new();
    for r in summary["runs"].as_array().unwrap() {
        let name = r["name"].as_str().unwrap();
        check_trace(t.path(), r["label"].as_str().unwrap(), Algorithm::from_name(name).unwrap());
        assert_eq!(r["status"], "converged", "{name}");
        assert!(t.path().join(format!("{name}.tuning.csv")).exists());
        units.insert(name.to_string(), r["comm_units"].as_u64().unwrap());
    }
    assert!(units["exact_diffusion"] < units["diging"]);
    assert!(units["extra"] < units["diging"]);
}

#[test]
fn large_step_splits_the_algorithms() {
    let t = tempfile::tempdir().unwrap();
    ok(&exec("run", &configs().join("large_step.json"), t.path()));
    let status = |s: &str| json(&t.path().join(format!("{s}.status.json")))["status"].as_str().unwrap().to_string();
    assert_eq!(status("exact_diffusion"), "converged");
    assert_eq!(status("aug_dgm"), "converged");
    assert_ne!(status("extra"), "converged");
    assert_ne!(status("diging"), "converged");
    for (s, k) in [("exact_diffusion", Algorithm::ExactDiffusion), ("extra", Algorithm::Extra)] {
        check_trace(t.path(), s, k);
    }
}

#[test]
fn logistic_and_adaptive_run() {
    let t = tempfile::tempdir().unwrap();
    ok(&exec("run", &configs().join("logistic_weighted.json"), t.path()));
    check_trace(t.path(), "ed_uniform", Algorithm::ExactDiffusion);
    check_trace(t.path(), "exact_diffusion_adaptive", Algorithm::ExactDiffusionAdaptive);
}

#[test]
fn empty_algorithm_list_is_a_config_error() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &serde_json::json!({
            "model": { "kind": "random_quadratic", "seed": 1, "agents": 4, "dim": 2, "lo": 1.0, "hi": 2.0 },
            "graph": { "kind": "cycle", "n": 4 },
            "algorithms": []
        }),
    );
    let o = exec("run", &cfg, &t.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algorithms"));
}

#[test]
fn invalid_step_reports_field_path() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &serde_json::json!({
            "model": { "kind": "random_quadratic", "seed": 1, "agents": 4, "dim": 2, "lo": 1.0, "hi": 2.0 },
            "graph": { "kind": "cycle", "n": 4 },
            "algorithms": [ { "name": "extra", "step": { "mu": 0.1 } }, { "name": "diging", "step": { "mu": -1.0 } } ]
        }),
    );
    let o = exec("run", &cfg, &t.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algorithms[1].step.mu"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn extra_rejects_averaging_rule() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &serde_json::json!({
            "model": { "kind": "random_quadratic", "seed": 1, "agents": 5, "dim": 2, "lo": 1.0, "hi": 2.0 },
            "graph": { "kind": "star", "n": 5 },
            "matrix": { "rule": "averaging" },
            "algorithms": [ { "name": "extra", "step": { "mu": 0.1 } } ]
        }),
    );
    let o = exec("run", &cfg, &t.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_is_an_io_error() {
    let t = tempfile::tempdir().unwrap();
    let o = exec("run", &t.path().join("absent.json"), &t.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn env_var_sets_output_directory() {
    let t = tempfile::tempdir().unwrap();
    let o = bin()
        .env("EXDIFF_OUT", t.path())
        .args(["two-agent", "--iterations", "100"])
        .output()
        .unwrap();
    ok(&o);
    assert!(t.path().join("two_agent.json").exists());
}

#[test]
fn seed_override_changes_the_problem() {
    let t = tempfile::tempdir().unwrap();
    let cfg = configs().join("large_step.json");
    ok(&exec("run", &cfg, &t.path().join("a")));
    ok(&bin().args(["run", "--seed", "99", "--config"]).arg(&cfg).arg("--out").arg(t.path().join("b")).output().unwrap());
    let a = fs::read(t.path().join("a/exact_diffusion.csv")).unwrap();
    let b = fs::read(t.path().join("b/exact_diffusion.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn analyze_metropolis20_report() {
    let t = tempfile::tempdir().unwrap();
    ok(&exec("analyze", &configs().join("analyze_metropolis20.json"), t.path()));
    let r = json(&t.path().join("analysis.json"));
    assert!(schema_errors(&r).is_empty(), "{:?}", schema_errors(&r));
    assert!(r["alpha_d"].as_f64().unwrap() < r["alpha_e"].as_f64().unwrap());
    assert!(r["mu_bound_diffusion"].as_f64().unwrap() > r["mu_bound_extra"].as_f64().unwrap());
    assert!(r["closed_form_residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(r["eigenstructure"]["passes"], true);
}

#[test]
fn analyze_two_agent_closed_form() {
    let t = tempfile::tempdir().unwrap();
    ok(&exec("analyze", &configs().join("analyze_two_agent.json"), t.path()));
    let r = json(&t.path().join("analysis.json"));
    assert!(schema_errors(&r).is_empty());
    assert!((r["t_e_norm_sq"].as_f64().unwrap() - 1.25).abs() <= 1e-12);
}

#[test]
fn analyze_single_agent_is_degenerate() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), &serde_json::json!({ "graph": { "kind": "complete", "n": 1 } }));
    ok(&exec("analyze", &cfg, &t.path().join("out")));
    let r = json(&t.path().join("out/analysis.json"));
    assert!(schema_errors(&r).is_empty(), "{:?}", schema_errors(&r));
    assert_eq!(r["degenerate"], true);
    assert_eq!(r["v_zero"], true);
    assert!(r["mu_bound_diffusion"].is_null());
}

#[test]
fn analyze_unbalanced_matrix_emits_diagnostic() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &serde_json::json!({
            "graph": { "kind": "complete", "n": 3 },
            "matrix": { "rule": "explicit", "entries": [[0.5, 0.1, 0.4], [0.4, 0.5, 0.1], [0.1, 0.4, 0.5]] }
        }),
    );
    ok(&exec("analyze", &cfg, &t.path().join("out")));
    let r = json(&t.path().join("out/analysis.json"));
    assert!(schema_errors(&r).is_empty());
    assert_eq!(r["balanced"], false);
    assert!(r["mu_bound_diffusion"].is_null());
    assert!(r["diagnostics"][0].as_str().unwrap().contains("not balanced"));
}

#[test]
fn schema_rejects_malformed_report() {
    assert!(!schema_errors(&serde_json::json!({ "n": 0 })).is_empty());
}

#[test]
fn two_agent_split_at_1_9() {
    let t = tempfile::tempdir().unwrap();
    ok(&bin().args(["two-agent", "--mu", "1.9", "--mu-e", "1.9", "--out"]).arg(t.path()).output().unwrap());
    let r = json(&t.path().join("two_agent.json"));
    assert_eq!(r["exact_diffusion"]["observed_status"], "converged");
    assert_eq!(r["extra"]["observed_status"], "diverged");
    assert_eq!(r["exact_diffusion"]["agrees"], true);
    assert_eq!(r["extra"]["agrees"], true);
    check_trace(t.path(), "exact_diffusion", Algorithm::ExactDiffusion);
    check_trace(t.path(), "extra", Algorithm::Extra);
}

#[test]
fn two_agent_small_step_both_converge() {
    let t = tempfile::tempdir().unwrap();
    ok(&bin().args(["two-agent", "--mu", "0.1", "--mu-e", "0.1", "--out"]).arg(t.path()).output().unwrap());
    let r = json(&t.path().join("two_agent.json"));
    assert_eq!(r["exact_diffusion"]["observed_status"], "converged");
    assert_eq!(r["extra"]["observed_status"], "converged");
    assert!(r["exact_diffusion"]["spectral_radius"].as_f64().unwrap() < 1.0);
    assert!(r["extra"]["spectral_radius"].as_f64().unwrap() < 1.0);
}

#[test]
fn two_agent_rejects_out_of_range_a() {
    let t = tempfile::tempdir().unwrap();
    let o = bin().args(["two-agent", "--a", "1.5", "--out"]).arg(t.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn two_agent_onset_is_bracketed() {
    let t = tempfile::tempdir().unwrap();
    ok(&bin().args(["two-agent", "--a", "0.3", "--scan-max", "3", "--out"]).arg(t.path()).output().unwrap());
    let on = &json(&t.path().join("two_agent.json"))["extra_onset"];
    let (lo, hi) = (on["stable_mu"].as_f64().unwrap(), on["unstable_mu"].as_f64().unwrap());
    assert!(hi - lo <= 1e-3 * hi);
    assert!(hi <= 1.3 + 1e-3);
    let exact = on["closed_form"].as_f64().unwrap();
    assert!(lo <= exact + 1e-9 && exact <= hi + 1e-9);
}

#[test]
fn two_agent_scan_orders_the_algorithms() {
    let t = tempfile::tempdir().unwrap();
    ok(&exec("stability-scan", &configs().join("two_agent_scan.json"), t.path()));
    let s = json(&t.path().join("scan_summary.json"));
    let res = s["results"].as_array().unwrap();
    let ed = res[0]["max_stable_mu"].as_f64().unwrap();
    let ex = res[1]["max_stable_mu"].as_f64().unwrap();
    assert!(ed >= ex);
    assert!((ed - 2.0).abs() <= 2e-3);
    assert!(res[1]["first_unstable_mu"].as_f64().unwrap() <= 1.5 + 1e-3);
    let csv = fs::read_to_string(t.path().join("scan.csv")).unwrap();
    assert!(csv.starts_with("algorithm,phase,mu,status,stable,iterations,final_rel_error\n"));
}

#[test]
fn scan_single_point_below_both_bounds_is_stable() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &serde_json::json!({
            "model": { "kind": "isotropic", "agents": 2, "sigma2": 1.0, "w_o": [1.0] },
            "graph": { "kind": "complete", "n": 2 },
            "matrix": { "rule": "explicit", "entries": [[0.5, 0.5], [0.5, 0.5]] },
            "algorithms": [ { "name": "exact_diffusion" }, { "name": "extra" } ],
            "scan": { "grid": [0.5], "init_seed": 4 }
        }),
    );
    ok(&exec("stability-scan", &cfg, &t.path().join("out")));
    let s = json(&t.path().join("out/scan_summary.json"));
    for r in s["results"].as_array().unwrap() {
        assert_eq!(r["max_stable_mu"].as_f64(), Some(0.5));
        assert!(r["first_unstable_mu"].is_null());
    }
}

#[test]
fn scan_rejects_non_quadratic_model() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        &serde_json::json!({
            "model": { "kind": "logistic", "seed": 1, "agents": 4, "dim": 2, "samples": 10, "ridge": 0.1 },
            "graph": { "kind": "cycle", "n": 4 },
            "algorithms": [ { "name": "exact_diffusion" } ],
            "scan": { "grid": [0.1] }
        }),
    );
    let o = exec("stability-scan", &cfg, &t.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}
