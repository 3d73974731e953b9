use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gexpect"));
    c.env_remove("GEXPECT_THREADS");
    c
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("error json on stderr");
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

fn result_doc(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("result.json")).unwrap()).unwrap()
}

const SMALL_BSB: &str = r#"{
  "command": "bsb",
  "payoff": "max(x - 100, 0) - max(x - 110, 0)",
  "vol_lo": 0.15,
  "vol_hi": 0.25,
  "spot": 100,
  "maturity": 0.25,
  "nx": 120
}"#;

#[test]
fn bsb_writes_both_sides_and_a_reproducible_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("bsb", &repo_config("call.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = result_doc(&out);
    let offer = doc["scalars"]["offer_price"].as_f64().unwrap();
    let bid = doc["scalars"]["bid_price"].as_f64().unwrap();
    // Black-Scholes at the band endpoints, since the call is convex.
    assert!((offer - 14.231254785985819).abs() < 0.01);
    assert!((bid - 6.804957708822158).abs() < 0.01);
    for f in doc["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).is_file());
    }
    let stored = fs::read(out.join(doc["config_file"].as_str().unwrap())).unwrap();
    assert_eq!(stored, fs::read(repo_config("call.json")).unwrap());
    assert_eq!(doc["config_sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&stored)));
    let csv = fs::read_to_string(out.join("offer_surface.csv")).unwrap();
    assert!(csv.starts_with("t,x,value\n"));
}

#[test]
fn emit_policy_adds_variance_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "b.json", SMALL_BSB);
    let out = tmp.path().join("out");
    let o = run("bsb", &cfg, &out, &["--emit-policy"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("bid_surface.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x,value,vertex_1"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let v: f64 = first[3].parse().unwrap();
    assert!(v == 0.15f64 * 0.15 || v == 0.25f64 * 0.25, "{v}");
    assert!(csv.lines().last().unwrap().ends_with(','));
}

#[test]
fn csv_outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mc = write(
        tmp.path(),
        "mc.json",
        r#"{
  "command": "mc",
  "bsb": { "payoff": "max(x - 100, 0)", "vol_lo": 0.1, "vol_hi": 0.3, "spot": 100, "maturity": 0.5, "side": "offer", "nx": 100 },
  "policy": { "kind": "bang_bang" },
  "paths": 3000, "steps": 32, "seed": 11, "qv_report": true
}"#,
    );
    let cases = [
        ("hjb", repo_config("hjb.json"), vec!["surface.csv"]),
        ("bsde", repo_config("bsde.json"), vec!["surface.csv", "picard.csv"]),
        ("mc", mc, vec!["qv.csv"]),
    ];
    for (command, cfg, files) in cases {
        let one = tmp.path().join(format!("{command}-1"));
        let four = tmp.path().join(format!("{command}-4"));
        let env = tmp.path().join(format!("{command}-env"));
        assert_eq!(run(command, &cfg, &one, &["--threads", "1", "--emit-policy"]).status.code(), Some(0));
        assert_eq!(run(command, &cfg, &four, &["--threads", "4", "--emit-policy"]).status.code(), Some(0));
        let o = bin()
            .env("GEXPECT_THREADS", "3")
            .args([command, "--emit-policy", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&env)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(result_doc(&one)["threads"], 1);
        assert_eq!(result_doc(&four)["threads"], 4);
        assert_eq!(result_doc(&env)["threads"], 3);
        for f in files {
            let a = fs::read(one.join(f)).unwrap();
            assert_eq!(a, fs::read(four.join(f)).unwrap(), "{command}/{f}");
            assert_eq!(a, fs::read(env.join(f)).unwrap(), "{command}/{f}");
        }
        assert_eq!(result_doc(&one)["scalars"], result_doc(&four)["scalars"]);
    }
}

#[test]
fn counterexample_band_one_four_gives_three() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("counterexample", &repo_config("band14.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("counterexample.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("delta,value,limit"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == 3.0 && r[2] == 0.0));
}

#[test]
fn config_errors_exit_two_with_field_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        (SMALL_BSB.replace("0.15", "0.35"), "vol_lo"),
        (SMALL_BSB.replace("\"nx\": 120", "\"nx\": 120, \"colour\": 1"), "."),
        (SMALL_BSB.replace("max(x - 110, 0)", "max(x - 110; 0)"), "payoff"),
        (SMALL_BSB.replace("\"bsb\"", "\"hjb\""), "command"),
    ];
    for (text, field) in cases {
        let cfg = write(tmp.path(), "c.json", &text);
        let o = run("bsb", &cfg, &out, &[]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let e = stderr_error(&o);
        assert_eq!(e["kind"], "config");
        assert_eq!(e["exit_code"], 2);
        if field != "." {
            assert_eq!(e["field"], field, "{e}");
        }
    }
    let o = run("bsb", &tmp.path().join("missing.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn computation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(repo_config("bsde.json"))
        .unwrap()
        .replace("\"tol\": 1e-10", "\"tol\": 1e-10, \"max_iter\": 2");
    let cfg = write(tmp.path(), "bsde.json", &text);
    let o = run("bsde", &cfg, &tmp.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_error(&o);
    assert_eq!(e["kind"], "computation");
    assert!(e["message"].as_str().unwrap().contains("did not converge"));
}

#[test]
fn suite_assertions_decide_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "b.json", SMALL_BSB);
    let suite = |op: &str| {
        format!(
            r#"{{
  "command": "verify",
  "scenarios": [
    {{ "name": "spread", "command": "bsb", "config": "b.json",
       "assertions": [ {{ "key": "offer_price", "op": "{op}", "rhs_key": "bid_price" }} ] }},
    {{ "name": "again", "command": "bsb", "config": "b.json",
       "assertions": [ {{ "key": "bid_price", "op": "close", "rhs_key": "spread.bid_price", "tol": 0 }} ] }}
  ]
}}"#
        )
    };
    let good = write(tmp.path(), "good.json", &suite("ge"));
    let out = tmp.path().join("good");
    let o = run("verify", &good, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("spread/result.json").is_file());
    assert!(out.join("again/bid_surface.csv").is_file());
    assert_eq!(result_doc(&out)["passed"], true);

    let bad = write(tmp.path(), "bad.json", &suite("le"));
    let out = tmp.path().join("bad");
    let o = run("verify", &bad, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_error(&o)["kind"], "verification");
    assert_eq!(result_doc(&out)["passed"], false);

    let broken = write(tmp.path(), "broken.json", &suite("ge").replace("b.json", "nope.json"));
    let o = run("verify", &broken, &tmp.path().join("broken"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["field"], "scenarios[0].config");
}

fn validate(path: &Path) -> (Option<i32>, Value) {
    let o = bin().arg("validate").arg("--config").arg(path).output().unwrap();
    (o.status.code(), serde_json::from_slice(&o.stdout).unwrap())
}

#[test]
fn validate_reports_diagnostics_per_field() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["call.json", "heat.json", "hjb.json", "bsde.json", "scan.json", "mc.json", "band14.json"] {
        let (code, d) = validate(&repo_config(name));
        assert_eq!(code, Some(0), "{name}: {d}");
        assert_eq!(d["diagnostics"].as_array().unwrap().len(), 0);
    }

    let heat = fs::read_to_string(repo_config("heat.json")).unwrap();
    let cfg = write(tmp.path(), "order.json", &heat.replace("[[0.25, 1.0]]", "[[1.0, 0.25]]"));
    let (code, d) = validate(&cfg);
    assert_eq!(code, Some(2));
    assert_eq!(d["diagnostics"][0]["field"], "box[0]");
    assert!(d["diagnostics"][0]["message"].as_str().unwrap().contains("invalid band"));

    // Box [0.25, 1] on spacing 0.1: the admissible step is h²/max variance = 0.01.
    let cfg = write(
        tmp.path(),
        "cfl.json",
        &heat.replace("\"nx\": 161, \"horizon\": 1.0", "\"nx\": 161, \"horizon\": 1.0, \"nt\": 50"),
    );
    let (code, d) = validate(&cfg);
    assert_eq!(code, Some(2));
    assert_eq!(d["diagnostics"][0]["field"], "grid.nt");
    let max_dt = d["diagnostics"][0]["max_admissible_dt"].as_f64().unwrap();
    assert!((max_dt - 0.01).abs() < 1e-12, "{max_dt}");

    let cfg = write(tmp.path(), "nocmd.json", &SMALL_BSB.replace("\"command\": \"bsb\",", ""));
    let (code, d) = validate(&cfg);
    assert_eq!(code, Some(2));
    assert_eq!(d["diagnostics"][0]["field"], "command");
}
