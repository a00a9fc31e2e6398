use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sclm::config::validate_ladder;
use sclm::{RunConfig, RunManifest};

const DIFFUSION: &str = r#"
seed = 1

[manifold]
name = "torus1d"
nodes = [64]

[flux]
profile = "zero"

[solver]
epsilon = 0.1
modes = 21
dt = 1e-3
T = 0.2
R = 4.0

[initial]
name = "sine"
wave = 3
"#;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sclm(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sclm"));
    c.args(args)
        .env_remove("SCLM_OUT_DIR")
        .env("RUST_LOG", "error");
    c
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn check_flux_on_burgers_stream_function() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("check_flux.toml");
    let out = tmp.path().join("run");
    let o = sclm(&[
        "check-flux",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!(m.pass);
    let r = m.metrics["max_residual"].as_f64().unwrap();
    assert!(r.is_finite() && r <= m.metrics["tolerance"].as_f64().unwrap());
    assert!(out.join("flux_report.json").exists());
}

#[test]
fn pure_diffusion_decays_monotonically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", DIFFUSION);
    let out = tmp.path().join("run");
    let o = sclm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("monitors/path_0000.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["t", "l2", "grad_energy", "mass"]);
    let l2: Vec<f64> = r
        .records()
        .map(|rec| rec.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(l2.len(), 201);
    assert!(l2.windows(2).all(|w| w[1] < w[0]));
    // a single mode sin 3x decays like exp(−9εt)
    assert!((l2[200] / l2[0] - (-9.0f64 * 0.1 * 0.2).exp()).abs() < 1e-12);
    let fields = std::fs::read_to_string(out.join("fields.csv")).unwrap();
    assert!(fields.starts_with("t,node,u\n"));
    assert_eq!(fields.lines().count(), 1 + 2 * 64);
}

#[test]
fn missing_dt_is_reported_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let body: String = DIFFUSION
        .lines()
        .filter(|l| !l.starts_with("dt"))
        .collect::<Vec<_>>()
        .join("\n");
    let cfg = write(tmp.path(), "c.toml", &body);
    let o = sclm(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`dt`"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_experiment_and_missing_file_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", DIFFUSION);
    let o = sclm(&[
        "explode",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(code(&o), 1);
    let o = sclm(&["simulate", "--config", "/nonexistent.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn single_rung_ladder_is_a_config_error() {
    assert!(validate_ladder(&[0.1]).is_err());
    assert!(validate_ladder(&[0.1, 0.05]).is_err());
    assert!(validate_ladder(&[0.1, 0.1, 0.05]).is_err());
    assert!(validate_ladder(&[0.1, 0.05, 0.025]).is_ok());
    let tmp = tempfile::tempdir().unwrap();
    let body = format!("{DIFFUSION}\n[experiment]\nladder = [0.1]\n");
    let cfg = write(tmp.path(), "c.toml", &body);
    let o = sclm(&[
        "viscosity-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ladder"));
}

#[test]
fn failed_check_exits_two() {
    // a stability constant far below one cannot hold for a perturbed pair
    let tmp = tempfile::tempdir().unwrap();
    let body = DIFFUSION.replace("profile = \"zero\"", "profile = \"burgers\"")
        + "\n[noise]\nkind = \"bump\"\nsigma = 0.3\n\n[experiment]\npaths = 4\nstability_constant = 1e-6\n";
    let cfg = write(tmp.path(), "c.toml", &body);
    let out = tmp.path().join("run");
    let o = sclm(&[
        "contraction",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert!(!m.pass);
    assert!(!m.checks["contraction"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAILED"));
}

#[test]
fn config_round_trips_and_hash_ignores_ordering() {
    let cfg = RunConfig::from_toml_str(DIFFUSION).unwrap();
    let again = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.hash(), again.hash());
    // the same content with sections and keys in another order
    let reordered = r#"
[initial]
wave = 3
name = "sine"

[solver]
R = 4.0
T = 0.2
dt = 1e-3
modes = 21
epsilon = 0.1

[flux]
profile = "zero"

[manifold]
nodes = [64]
name = "torus1d"
"#;
    let r = RunConfig::from_toml_str(&format!("seed = 1\n{reordered}")).unwrap();
    assert_eq!(r.hash(), cfg.hash());
    let mut moved = r.clone();
    moved.output_dir = Some("/elsewhere".into());
    assert_eq!(moved.hash(), cfg.hash());
    let mut other = r;
    other.seed = 2;
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn bundled_configs_parse() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e:#}", p.display()));
        }
    }
}

#[test]
fn single_threaded_reruns_are_bit_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate_burgers.toml");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = sclm(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            "1",
            "--paths",
            "4",
        ])
        .output()
        .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (
            manifest(&out),
            std::fs::read(out.join("coefficients.csv")).unwrap(),
        )
    };
    let (a, ca) = run("a");
    let (b, cb) = run("b");
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.config_hash, b.config_hash);
    assert_eq!(ca, cb);
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", DIFFUSION);
    let out = tmp.path().join("from-env");
    let o = sclm(&["simulate", "--config", cfg.to_str().unwrap()])
        .env("SCLM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("config.json").exists());
}

#[test]
fn seed_override_changes_noise_but_not_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("simulate_burgers.toml");
    let run = |seed: &str| {
        let out = tmp.path().join(seed);
        let o = sclm(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
            "--paths",
            "2",
        ])
        .output()
        .unwrap();
        assert_eq!(code(&o), 0);
        manifest(&out)
    };
    let (a, b) = (run("1"), run("2"));
    assert_eq!((a.seed, b.seed), (1, 2));
    assert_ne!(a.config_hash, b.config_hash);
    assert_ne!(
        a.metrics["terminal_l2_path0"],
        b.metrics["terminal_l2_path0"]
    );
    assert_eq!(a.metrics["steps"], b.metrics["steps"]);
}
