use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn levylab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levylab"))
        .args(args)
        .env("LEVYLAB_OUTPUT", out)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn results(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap()
}

#[test]
fn gronwall_constants_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "verify_gronwall",
        "params": {"scenario": "constants", "p": 2.0 / 3.0, "q": 1.0 / 3.0},
        "numerics": {"n_paths": 1},
        "seed": 1,
        "output_dir": "unused"
    });
    let out = dir.path().join("out");
    let o = levylab(&["run", &write_config(dir.path(), "g.json", &cfg)], &out);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = results(&out);
    assert_eq!(r["lhs"].as_f64(), Some(1.0));
    assert_eq!(r["cap"].as_f64(), Some(8.0));
    assert_eq!(r["verdict"], "pass");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["git_describe"].is_string());
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn ou_invariant_variance_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "invariant",
        "problem": {"b": "-x", "sigma": "sqrt(2)"},
        "numerics": {"dt": 0.01, "n_paths": 40000, "burn_in": 10.0},
        "params": {"thinning": 100, "chains": 4},
        "seed": 2,
        "output_dir": "unused"
    });
    let out = dir.path().join("out");
    let o = levylab(&["run", &write_config(dir.path(), "i.json", &cfg)], &out);
    assert_eq!(o.status.code(), Some(0));
    // variance estimate from ~4e4 nearly independent samples: se ~ 0.008
    let v = results(&out)["variance"].as_f64().unwrap();
    assert!((v - 1.0).abs() < 0.04, "{v}");
    assert!(out.join("invariant.csv").exists());
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "invariant",
        "problem": "ou",
        "numerics": {"dt": 0.01, "n_paths": 2000, "burn_in": 5.0},
        "params": {"variance_target": 4.0},
        "seed": 2,
        "output_dir": "unused"
    });
    let out = dir.path().join("out");
    let o = levylab(&["run", &write_config(dir.path(), "f.json", &cfg)], &out);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(results(&out)["verdict"], "fail");
}

#[test]
fn results_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "simulate",
        "problem": "mixing_jump",
        "numerics": {"dt": 0.01, "n_paths": 3000},
        "params": {"x0": [0.5], "horizon": 1.0, "save_paths": 3},
        "seed": 99,
        "output_dir": "unused"
    });
    let path = write_config(dir.path(), "s.json", &cfg);
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "2", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = levylab(&["run", &path, "--threads", threads], &out);
        assert_eq!(o.status.code(), Some(0));
        outputs.push((
            std::fs::read(out.join("results.json")).unwrap(),
            std::fs::read(out.join("paths.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);

    let out = dir.path().join("other_seed");
    levylab(&["run", &path, "--seed-override", "100"], &out);
    assert_ne!(
        std::fs::read(out.join("results.json")).unwrap(),
        outputs[0].0
    );
}

#[test]
fn manifest_config_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "simulate",
        "problem": {"b": "-x", "g": "0.5*abs(x)^0.5*z", "sigma": "1"},
        "levy": {"alpha": 1.5},
        "numerics": {"dt": 0.02, "n_paths": 500},
        "params": {"x0": [0.3]},
        "seed": 4,
        "output_dir": "unused"
    });
    let first = dir.path().join("a");
    assert_eq!(
        levylab(&["run", &write_config(dir.path(), "m.json", &cfg)], &first)
            .status
            .code(),
        Some(0)
    );
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("manifest.json")).unwrap())
            .unwrap();
    let second = dir.path().join("b");
    let echoed = write_config(dir.path(), "echo.json", &manifest["config"]);
    assert_eq!(levylab(&["run", &echoed], &second).status.code(), Some(0));
    assert_eq!(
        std::fs::read(first.join("results.json")).unwrap(),
        std::fs::read(second.join("results.json")).unwrap()
    );
}

#[test]
fn output_format_is_plain_lf_with_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "lyapunov",
        "problem": "ou",
        "seed": 0,
        "output_dir": "unused"
    });
    let out = dir.path().join("out");
    levylab(&["run", &write_config(dir.path(), "l.json", &cfg)], &out);
    for name in ["results.json", "manifest.json", "lyapunov.csv"] {
        let text = String::from_utf8(std::fs::read(out.join(name)).unwrap()).unwrap();
        assert!(!text.contains('\r'), "{name}");
        assert!(text.ends_with('\n'));
    }
    let text = std::fs::read_to_string(out.join("results.json")).unwrap();
    let c1 = text.lines().find(|l| l.contains("\"c1\"")).unwrap();
    let mantissa = c1
        .split(':')
        .nth(1)
        .unwrap()
        .trim()
        .trim_end_matches(',')
        .split('e')
        .next()
        .unwrap();
    assert_eq!(
        mantissa.chars().filter(char::is_ascii_digit).count(),
        17,
        "{c1}"
    );
}

#[test]
fn schema_errors_name_the_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let unknown = json!({"experiment": "simulate", "problem": "ou", "seed": 1, "output_dir": "x", "speed": 3});
    let o = levylab(
        &["run", &write_config(dir.path(), "u.json", &unknown)],
        &out,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("speed"));

    let incomplete =
        json!({"experiment": "simulate", "problem": "ou", "seed": 1, "output_dir": "x"});
    let o = levylab(
        &["run", &write_config(dir.path(), "n.json", &incomplete)],
        &out,
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(
        err.contains("numerics.dt") && err.contains("numerics.n_paths"),
        "{err}"
    );
    assert!(
        !out.exists(),
        "nothing is computed or written on invalid input"
    );

    let preset = json!({"experiment": "simulate", "problem": "ou_stabel", "seed": 1, "output_dir": "x",
        "numerics": {"dt": 0.1, "n_paths": 1}});
    let o = levylab(&["run", &write_config(dir.path(), "p.json", &preset)], &out);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    assert!(
        err.contains("ou_stable") && err.contains("pure_stable"),
        "{err}"
    );

    let expr = json!({"experiment": "simulate", "problem": {"b": "-x + * 2"}, "seed": 1, "output_dir": "x",
        "numerics": {"dt": 0.1, "n_paths": 1}});
    let o = levylab(&["run", &write_config(dir.path(), "e.json", &expr)], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("column 6"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let o = levylab(
        &["run", dir.path().join("missing.json").to_str().unwrap()],
        &out,
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn presets_and_audit_commands() {
    let dir = tempfile::tempdir().unwrap();
    let o = levylab(&["presets"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let listing = String::from_utf8(o.stdout).unwrap();
    for name in ["ou_singular", "mixing_jump", "multiplicative_stable"] {
        assert!(listing.contains(name));
    }
    let cfg = json!({"experiment": "simulate", "problem": "mixing_jump", "seed": 1, "output_dir": "x",
        "numerics": {"dt": 0.1, "n_paths": 1}});
    let o = levylab(
        &["audit", &write_config(dir.path(), "a.json", &cfg)],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["ellipticity"]["pass"], true);
    assert_eq!(report["dissipativity"]["pass"], true);
}
