//! End-to-end checks of the command-line tool.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
name = "small"
seed = 7
trials = 4000
sample_mode = "physical"

[network]
samples = 20
memory = 1
sigma_z2 = 10.0
alpha = 0.05
eta = 0.3

[[nodes]]
snr_db = 3.0

[[nodes]]
snr_db = -1.0

[schedule]
kind = "dc-sdp"

[experiment]
kind = "croc"
eta = [0.3, 0.6]
memory = [0, 1]
alphas = [0.05, 0.1]
"#;

fn intercoop(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_intercoop"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("INTERCOOP_THREADS", t),
        None => cmd.env_remove("INTERCOOP_THREADS"),
    };
    cmd.output().unwrap()
}

fn run_into(config: &Path, out: &Path, threads: Option<&str>) -> String {
    let o = intercoop(
        &["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()],
        threads,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("small.partial").exists());
    fs::read_to_string(out.join("small.csv")).unwrap()
}

#[test]
fn runs_are_reproducible_from_config_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, CONFIG).unwrap();

    let first = run_into(&config, &dir.path().join("a"), None);
    assert!(first.starts_with("eta,L,alpha,"));
    assert_eq!(first.lines().count(), 1 + 2 * 2 * 2);

    let again = run_into(&config, &dir.path().join("b"), Some("1"));
    assert_eq!(first, again, "thread count changed the output");

    let manifest = dir.path().join("a").join("small.manifest.json");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(json["seed"], 7);
    assert_eq!(json["files"][0], "small.csv");
    let replay = run_into(&manifest, &dir.path().join("c"), None);
    assert_eq!(first, replay, "manifest replay differs");
}

#[test]
fn empty_node_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    let start = CONFIG.find("[[nodes]]").unwrap();
    let end = CONFIG.find("[schedule]").unwrap();
    fs::write(&config, format!("{}{}", &CONFIG[..start], &CONFIG[end..])).unwrap();
    for cmd in ["validate", "run"] {
        let o = intercoop(&[cmd, config.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("nodes"), "{cmd}");
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = intercoop(&["preset", "fig5", "--print"], Some("zero"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn presets_print_valid_configs() {
    let dir = tempfile::tempdir().unwrap();
    for name in intercoop::cli::PRESET_NAMES {
        let o = intercoop(&["preset", name, "--print"], None);
        assert!(o.status.success(), "{name}");
        let path = dir.path().join(format!("{name}.toml"));
        fs::write(&path, &o.stdout).unwrap();
        let v = intercoop(&["validate", path.to_str().unwrap()], None);
        assert!(v.status.success(), "{name}: {}", String::from_utf8_lossy(&v.stderr));
    }
}

#[test]
fn sdp_dump_is_sdpa() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    fs::write(&config, CONFIG).unwrap();
    let o = intercoop(&["dump-sdp", config.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with(['"', '*'])).collect();
    let m: usize = body[0].trim().parse().unwrap();
    assert!(m > 0);
    assert_eq!(body[1].trim(), "2");
}
