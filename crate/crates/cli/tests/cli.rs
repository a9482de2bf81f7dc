use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = r#"[model]
offspring = { "2" = "1" }
increment = { kind = "plus_minus_one" }

[run]
n = 2
replicates = 10000
seed = 2024

[[diagnostic]]
kind = "cdf_point"
x = "0"

[[diagnostic]]
kind = "dkw"
"#;

fn brw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brw")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn simulate(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    brw(&args)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn minimal_run_matches_exact_probability() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = tmp.path().join("run");
    let o = simulate(&cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let text = String::from_utf8(read(&out.join("records.csv"))).unwrap();
    let lines: Vec<&str> = text.split("\r\n").filter(|l| !l.is_empty()).collect();
    assert!(lines[0].starts_with("replicate,seed,max_final"));
    assert_eq!(lines.len(), 10_001);
    let below = lines[1..].iter().filter(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() <= 0.0).count();
    let p = 25.0 / 64.0;
    let p_hat = below as f64 / 1e4;
    let se = (p * (1.0 - p) / 1e4f64).sqrt();
    assert!((p_hat - p).abs() <= 4.0 * se, "p_hat = {p_hat}");

    for f in ["manifest.json", "verdicts.json", "config.toml", "config.json", "diagnostics/cdf_point_0.csv", "diagnostics/dkw_1.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(!out.join("checkpoint.bin").exists());
    let manifest: serde_json::Value = serde_json::from_slice(&read(&out.join("manifest.json"))).unwrap();
    for key in ["config_hash", "constants", "versions", "audit"] {
        assert!(manifest.get(key).is_some(), "{key}");
    }

    let r = brw(&["report", out.to_str().unwrap()]);
    let summary = String::from_utf8_lossy(&r.stdout);
    assert_eq!(r.status.code(), Some(0), "{summary}");
    assert!(summary.contains("models        1"));
    assert!(summary.contains("constants   unavailable"));
    assert!(summary.contains("cdf_point") && summary.contains("dkw"));
    assert!(out.join("plots/dkw_1.csv").exists());
}

#[test]
fn same_seed_same_bytes_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_eq!(simulate(&cfg, &a, &["--workers", "1"]).status.code(), Some(0));
    assert_eq!(simulate(&cfg, &b, &["--workers", "1"]).status.code(), Some(0));
    assert_eq!(simulate(&cfg, &c, &["--workers", "4"]).status.code(), Some(0));
    let ra = read(&a.join("records.csv"));
    assert_eq!(ra, read(&b.join("records.csv")));
    assert_eq!(ra, read(&c.join("records.csv")));
    assert_eq!(read(&a.join("manifest.json")), read(&c.join("manifest.json")));

    let d = tmp.path().join("d");
    assert_eq!(simulate(&cfg, &d, &["--seed", "5"]).status.code(), Some(0));
    assert_ne!(ra, read(&d.join("records.csv")));
}

#[test]
fn subcritical_offspring_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace(r#"offspring = { "2" = "1" }"#, r#"offspring = { "1" = "1" }"#);
    let cfg = write_config(tmp.path(), "rho1.toml", &text);
    let o = simulate(&cfg, &tmp.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rho") && err.contains("must exceed 1"), "{err}");
}

#[test]
fn schema_violations_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bare_float = MINIMAL.replace(r#"x = "0""#, "x = 0.0");
    let unknown = MINIMAL.replace("seed = 2024", "seed = 2024\ncolour = \"red\"");
    for (i, t) in [bare_float, unknown].iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.toml"), t);
        assert_eq!(simulate(&cfg, &tmp.path().join("x"), &[]).status.code(), Some(2));
    }
}

#[test]
fn oversized_unpruned_run_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("n = 2", "n = 40");
    let cfg = write_config(tmp.path(), "big.toml", &text);
    let o = simulate(&cfg, &tmp.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_verdict_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    // a 1e-6 sigma band cannot hold a Monte Carlo estimate
    let text = MINIMAL.replace(r#"x = "0""#, "x = \"0\"\nsigmas = \"1e-6\"");
    let cfg = write_config(tmp.path(), "fail.toml", &text);
    let out = tmp.path().join("run");
    assert_eq!(simulate(&cfg, &out, &[]).status.code(), Some(1));
    let r = brw(&["report", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let summary = String::from_utf8_lossy(&r.stdout);
    assert!(summary.contains("FAIL"), "{summary}");
}

#[test]
fn tampered_manifest_is_an_integrity_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = tmp.path().join("run");
    assert_eq!(simulate(&cfg, &out, &[]).status.code(), Some(0));
    let path = out.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&read(&path)).unwrap();
    m["config_hash"] = serde_json::Value::from("0".repeat(64));
    std::fs::write(&path, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    let r = brw(&["report", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("integrity"));

    let out2 = tmp.path().join("run2");
    assert_eq!(simulate(&cfg, &out2, &[]).status.code(), Some(0));
    let rec = out2.join("records.csv");
    let mut bytes = read(&rec);
    let last = bytes.len() - 3;
    bytes[last] = if bytes[last] == b'1' { b'2' } else { b'1' };
    std::fs::write(&rec, bytes).unwrap();
    let r = brw(&["report", out2.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));

    let r = brw(&["report", tmp.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing artifact"));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let text = brw_cli::acceptance::DETERMINISM_CONFIG.replace("replicates = 20000", "replicates = 10000")
        + "\n[[diagnostic]]\nkind = \"martingale\"\n\n[[diagnostic]]\nkind = \"moments\"\n";
    let cfg = write_config(tmp.path(), "lazy.toml", &text);
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    let code = |o: Output| o.status.code();
    let full_code = code(simulate(&cfg, &full, &["--workers", "2"]));
    assert!(matches!(full_code, Some(0) | Some(1)));

    let o = simulate(&cfg, &part, &["--stop-after", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("stopped after 4096"));
    assert!(part.join("checkpoint.bin").exists());
    assert!(!part.join("manifest.json").exists());
    // a torn write after the checkpoint is cut off on resume
    let mut f = std::fs::OpenOptions::new().append(true).open(part.join("records.csv")).unwrap();
    std::io::Write::write_all(&mut f, b"99999,13,1.5").unwrap();
    drop(f);
    assert_eq!(code(simulate(&cfg, &part, &["--resume", "--stop-after", "1", "--workers", "3"])), Some(0));
    assert_eq!(code(simulate(&cfg, &part, &["--resume"])), full_code);
    assert!(!part.join("checkpoint.bin").exists());

    for f in ["records.csv", "manifest.json", "verdicts.json", "diagnostics/martingale_0.csv", "diagnostics/moments_1.csv"] {
        assert_eq!(read(&full.join(f)), read(&part.join(f)), "{f}");
    }

    // a checkpoint from another configuration is refused
    let other = write_config(tmp.path(), "other.toml", &text.replace("seed = 13", "seed = 14"));
    assert_eq!(code(simulate(&cfg, &part, &["--stop-after", "1"])), Some(0));
    assert_eq!(code(simulate(&other, &part, &["--resume"])), Some(2));
}

#[test]
fn calibrate_oracle_and_analyze_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    let gauss = MINIMAL.replace(r#"{ kind = "plus_minus_one" }"#, r#"{ kind = "gaussian", mean = "0", sd = "1" }"#);
    let cfg = write_config(tmp.path(), "g.toml", &gauss);
    let o = brw(&["calibrate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let c1 = v["c1"].as_f64().unwrap();
    assert!((c1 - (2.0 * std::f64::consts::LN_2).sqrt()).abs() < 1e-10);

    let min = write_config(tmp.path(), "min.toml", MINIMAL);
    let o = brw(&["calibrate", "--config", &min]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("error"));

    let odir = tmp.path().join("oracle");
    let o = brw(&["oracle", "--config", &min, "--out", odir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8(read(&odir.join("max_cdf.csv"))).unwrap();
    assert!(table.contains("0,0.390625,0.609375"), "{table}");

    let out = tmp.path().join("run");
    assert_eq!(simulate(&min, &out, &[]).status.code(), Some(0));
    let before = read(&out.join("verdicts.json"));
    let a = brw(&["analyze", "--out", out.to_str().unwrap()]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(before, read(&out.join("verdicts.json")));
}

#[test]
fn cache_dir_holds_golden_laws() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let min = write_config(tmp.path(), "min.toml", MINIMAL);
    let out = tmp.path().join("oracle");
    let o = Command::new(env!("CARGO_BIN_EXE_brw"))
        .args(["oracle", "--config", &min, "--out", out.to_str().unwrap()])
        .env("BRW_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let cached: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert_eq!(cached.len(), 1);
}
