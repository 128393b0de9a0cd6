use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use impact_bsde::cli::{BsdeSummary, NormsSummary, PriceSummary};
use impact_bsde::verify::SuiteOutcome;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_impact-bsde")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn config(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_string()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const MARKET: &str = r#""market": {"risk_aversion": 1.0, "num_stocks": 1, "num_steps": 4,
    "demand": {"kind": "constant", "value": [GAMMA]},
    "dividend": {"kind": "sign_of_b_t", "scale": [1.0]}}"#;

#[test]
fn price_one_period() {
    let (code, stdout, _) = run(&["price", "--config", &config("one_period.json")]);
    assert_eq!(code, 0);
    let s: PriceSummary = serde_json::from_str(&stdout).unwrap();
    assert!((s.initial_price[0] + 0.4621171573).abs() < 1e-10);
}

#[test]
fn zero_demand_prices_at_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{{{}}}", MARKET.replace("GAMMA", "0.0")));
    let (code, stdout, _) = run(&["price", "--config", &cfg]);
    assert_eq!(code, 0);
    let s: PriceSummary = serde_json::from_str(&stdout).unwrap();
    assert_eq!(s.initial_price, s.dividend_mean);
    assert_eq!(s.initial_certainty_equivalent, 0.0);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = format!("{{{}}}", MARKET.replace("GAMMA", "0.5").replace("\"risk_aversion\": 1.0", "\"risk_aversion\": -1.0"));
    let (code, _, stderr) = run(&["price", "--config", &write_config(dir.path(), &bad)]);
    assert_eq!(code, 2);
    assert!(stderr.contains("risk_aversion"), "{stderr}");

    let unknown = format!("{{{}, \"extra\": true}}", MARKET.replace("GAMMA", "0.5"));
    let (code, _, stderr) = run(&["price", "--config", &write_config(dir.path(), &unknown)]);
    assert_eq!(code, 2);
    assert!(stderr.contains("extra"), "{stderr}");

    let (code, _, _) = run(&["price", "--config", "/nonexistent/config.json"]);
    assert_eq!(code, 2);
    let (code, _, _) = run(&["bsde", "--config", &config("one_period.json"), "--method", "sideways"]);
    assert_eq!(code, 2);
}

#[test]
fn step_cap_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{{{}}}", MARKET.replace("GAMMA", "0.5").replace("\"num_steps\": 4", "\"num_steps\": 30"));
    let (code, _, stderr) = run(&["price", "--config", &write_config(dir.path(), &body)]);
    assert_eq!(code, 2);
    assert!(stderr.contains("IMPACT_BSDE_MAX_STEPS"), "{stderr}");
}

#[test]
fn bsde_both_with_side_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bsde.json");
    let out_s = out.to_str().unwrap();
    let (code, _, _) = run(&["bsde", "--config", &config("small_data.json"), "--out", out_s, "--dump-nodes"]);
    assert_eq!(code, 0);
    let s: BsdeSummary = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let picard = s.picard.unwrap();
    assert!(picard.converged && picard.small_data);
    assert_eq!(picard.ball_bound_holds, Some(true));
    assert!(s.discrepancy.unwrap() <= 1e-10);
    let iters = fs::read_to_string(format!("{out_s}.iterations.csv")).unwrap();
    assert!(iters.starts_with("iteration,distance,ratio,iterate_bmo"));
    let nodes = fs::read_to_string(format!("{out_s}.nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count(), 1 + (1 << 9) - 1);
}

#[test]
fn bsde_zero_demand_discrepancy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{{{}}}", MARKET.replace("GAMMA", "0.0")));
    let (code, stdout, _) = run(&["bsde", "--config", &cfg, "--method", "both"]);
    assert_eq!(code, 0);
    let s: BsdeSummary = serde_json::from_str(&stdout).unwrap();
    assert!(s.discrepancy.unwrap() <= 1e-12);
}

#[test]
fn counterexample_does_not_converge_but_exits_0() {
    let (code, stdout, _) = run(&["bsde", "--config", &config("counterexample.json"), "--method", "picard"]);
    assert_eq!(code, 0);
    let s: BsdeSummary = serde_json::from_str(&stdout).unwrap();
    let p = s.picard.unwrap();
    assert!(!p.converged);
    assert!(p.ratios.iter().flatten().any(|r| *r >= 1.0));
}

#[test]
fn verify_suites_and_exit_codes() {
    let (code, stdout, _) = run(&["verify", "--config", &config("small_data.json"), "--suite", "homogeneity"]);
    assert_eq!(code, 0);
    let o: SuiteOutcome = serde_json::from_str(&stdout).unwrap();
    assert_eq!(o.checks.len(), 1);
    assert!(o.passed());
    let (code, stdout, _) = run(&["verify", "--config", &config("counterexample.json")]);
    assert_eq!(code, 0);
    let o: SuiteOutcome = serde_json::from_str(&stdout).unwrap();
    assert_eq!(o.counterexample.unwrap().len(), 3);
}

#[test]
fn norms_command() {
    let (code, stdout, _) = run(&["norms", "--config", &config("one_period.json")]);
    assert_eq!(code, 0);
    let s: NormsSummary = serde_json::from_str(&stdout).unwrap();
    assert_eq!(s.dividend.bmo.value, 1.0);
    assert!((s.dividend.h.unwrap().value - 1.0).abs() < 1e-9);
}

#[test]
fn sweep_table() {
    let (code, stdout, _) = run(&[
        "sweep", "--config", &config("small_data.json"), "--param", "demand_scale", "--from", "0", "--to", "2", "--points", "3",
    ]);
    assert_eq!(code, 0);
    let rows: Vec<Vec<&str>> = stdout.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    // Zero demand: trivially converged, no market price of risk.
    assert_eq!(rows[0][2], "true");
    assert_eq!(rows[0][6].parse::<f64>().unwrap(), 0.0);
    let products: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(products.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}.json"));
        let out_s = out.to_str().unwrap();
        let (code, _, _) = run(&["bsde", "--config", &config("small_data.json"), "--out", out_s, "--dump-nodes"]);
        assert_eq!(code, 0);
        texts.push((
            fs::read(&out).unwrap(),
            fs::read(format!("{out_s}.nodes.csv")).unwrap(),
            fs::read(format!("{out_s}.iterations.csv")).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);
    let a = run(&["verify", "--config", &config("small_data.json"), "--suite", "optimality"]).1;
    let b = run(&["verify", "--config", &config("small_data.json"), "--suite", "optimality"]).1;
    assert_eq!(a, b);
}

#[test]
fn summaries_round_trip() {
    let (_, stdout, _) = run(&["price", "--config", &config("small_data.json")]);
    let s: PriceSummary = serde_json::from_str(&stdout).unwrap();
    let again = serde_json::to_string_pretty(&s).unwrap() + "\n";
    assert_eq!(again, stdout);
}
