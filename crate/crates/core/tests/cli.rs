use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ringflow");
const ROOT: &str = env!("CARGO_MANIFEST_DIR");

const FAST: &str = r#"{
  "exponents": {"gamma1": 6.75, "gamma2": 1.0, "gamma3": 3.75, "gamma_a": 2.5, "N": 64},
  "horizon": {"mode": "damping-times", "value": 2},
  "steps": 400,
  "picard": {"steps": 200, "trials": 20},
  "sweep": {"sizes": [32, 64], "subcommand": "equilibrium"},
  "seed": 3
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("RINGFLOW_OUT").output().unwrap()
}

fn run_cmd(cfg: &Path, out: &Path, cmd: &str) -> Output {
    run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), cmd])
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            for (k, v) in files(&p) {
                out.insert(p.file_name().unwrap().into(), Vec::new());
                out.insert(PathBuf::from(p.file_name().unwrap()).join(k), v);
            }
        } else {
            out.insert(p.file_name().unwrap().into(), fs::read(&p).unwrap());
        }
    }
    out
}

fn validate(schema: &str, doc: &Value) {
    let path = Path::new(ROOT).join("schemas").join(format!("{schema}.schema.json"));
    let schema: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema}: {errors:#?}");
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const SUBCOMMANDS: [&str; 6] = ["equilibrium", "simulate", "linear", "picard", "regime", "verify"];

#[test]
fn subcommands_emit_schema_valid_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fast.json", FAST);
    for cmd in SUBCOMMANDS {
        let out = tmp.path().join(cmd);
        let o = run_cmd(&cfg, &out, cmd);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let doc = read_json(&out.join(format!("{cmd}.json")));
        validate(cmd, &doc);
        assert_eq!(doc["command"], cmd);
        assert_eq!(doc["seed"], 3);
        // stdout carries a one-line summary
        let line: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(line.is_object());
    }
    let out = tmp.path().join("sweep");
    let o = run_cmd(&cfg, &out, "sweep");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("sweep.json"));
    validate("sweep", &doc);
    for n in [32, 64] {
        let sub = read_json(&out.join(format!("N{n}")).join("equilibrium.json"));
        validate("equilibrium", &sub);
        assert_eq!(sub["params"]["N"], n);
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(ROOT).join("configs");
    let mut seen = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        validate("config", &read_json(&p));
        seen += 1;
    }
    assert!(seen >= 5);
    validate("config", &serde_json::from_str(FAST).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fast.json", FAST);
    for cmd in ["simulate", "picard", "verify", "sweep"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        assert!(run_cmd(&cfg, &a, cmd).status.success());
        assert!(run(&["--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--jobs", "2", cmd])
            .status
            .success());
        let (fa, fb) = (files(&a), files(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>(), "{cmd}");
        for (k, v) in &fa {
            assert!(v == &fb[k], "{cmd}: {} differs", k.display());
        }
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fast.json", FAST);
    let out = tmp.path().join("p");
    let o = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "11", "picard"]);
    assert!(o.status.success());
    let doc = read_json(&out.join("picard.json"));
    assert_eq!(doc["seed"], 11);
    assert_eq!(doc["probe"]["seed"], 11);
}

#[test]
fn binary_format_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fast.json", FAST);
    let out = tmp.path().join("bin");
    let o = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "binary", "simulate"]);
    assert!(o.status.success());
    assert!(!out.join("trajectory.csv").exists());
    let bytes = fs::read(out.join("trajectory.bin")).unwrap();
    let (t, x, v) = ringflow::trajectory::Trajectory::read_binary(&bytes).unwrap();
    assert_eq!(t.len(), x.len());
    assert_eq!(x[0].len(), 64);
    assert!(v.iter().flatten().all(|vk| (vk - 1.0).abs() < 1e-3));
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fast.json", FAST);
    let root = tmp.path().join("env-root");
    let o = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "equilibrium"])
        .env("RINGFLOW_OUT", &root)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(root.join("equilibrium.json").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = |cfg: &Path| run_cmd(cfg, &out, "equilibrium");

    let bad = write_config(tmp.path(), "bad.json", r#"{"exponents": {"gamma1": 1}, "extra": true}"#);
    let r = o(&bad);
    assert_eq!(r.status.code(), Some(2));
    let diag: Value = serde_json::from_slice(&r.stderr).unwrap();
    validate("error", &diag);

    let both = write_config(
        tmp.path(),
        "both.json",
        r#"{"exponents": {"gamma1": 6.75, "gamma2": 1, "gamma3": 3.75, "gamma_a": 2.5, "N": 64},
            "params": {"N": 8, "L": 1, "M": 1, "alpha": 1, "g": 0, "A0": 0, "A": 1, "V": 1, "rho": 0.01, "beta": 0.01}}"#,
    );
    assert_eq!(o(&both).status.code(), Some(2));
    assert_eq!(o(&tmp.path().join("missing.json")).status.code(), Some(2));
    assert_eq!(run(&["equilibrium", "--bogus"]).status.code(), Some(2));

    // g / alpha far beyond the construction's range: the solver gives up.
    let hard = write_config(
        tmp.path(),
        "hard.json",
        r#"{"params": {"N": 8, "L": 1, "M": 1, "alpha": 1e-3, "g": 10, "A0": 0, "A": 1, "V": 1, "rho": 0.01, "beta": 0.01},
            "regime": {"c_alpha_g_bound": 1e9}}"#,
    );
    let r = o(&hard);
    assert_eq!(r.status.code(), Some(3));
    let diag = read_json(&out.join("error.json"));
    validate("error", &diag);
    assert_eq!(diag["kind"], "numerical");
}

#[test]
fn physical_numbers_are_reported_not_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(ROOT).join("configs").join("physical.json");
    let out = tmp.path().join("phys");
    let o = run_cmd(&cfg, &out, "regime");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("regime.json"));
    validate("regime", &doc);
    assert_eq!(doc["all_satisfied"], false);
    let v: Vec<&str> = doc["violations"].as_array().unwrap().iter().map(|x| x.as_str().unwrap()).collect();
    assert!(v.contains(&"cond_main_1_right_alpha"), "{v:?}");
}

#[test]
fn negative_control_flags_the_regime() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = Path::new(ROOT).join("configs").join("negative-control.json");
    let out = tmp.path().join("neg");
    let o = run_cmd(&cfg, &out, "verify");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out.join("verify.json"));
    validate("verify", &doc);
    assert_eq!(doc["dashboard"]["verdict"], "regime-violation");
}
