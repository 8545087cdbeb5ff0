//! End-to-end runs of the `graphssl` binary: exit codes and the config echo.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn graphssl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphssl")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const TINY_RATES: &str = r#"
experiment = "rates-krige"
seed = 5

[rates]
sizes = [80, 160]
seeds = 2
grid = 16
modes = 40
epsilon = { min = 0.1, max = 0.4, count = 4 }
"#;

#[test]
fn successful_run_writes_csvs_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rates.toml", TINY_RATES);
    let out = dir.path().join("out");
    let o = graphssl(&["rates-krige", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9", "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let echo = fs::read_to_string(out.join("config.toml")).unwrap();
    let parsed: graphssl::ExperimentConfig = graphssl::ExperimentConfig::from_toml(&echo).unwrap();
    assert_eq!(parsed.seed, 9);
    assert_eq!(parsed.threads, Some(1));
    assert_eq!(parsed.rates.sizes, vec![80, 160]);
    // Defaults are resolved into the echo, not left implicit.
    assert!(echo.contains("[channel]") && echo.contains("[spectra]"));
    let csvs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")).count();
    assert!(csvs > 0);
}

#[test]
fn unknown_experiment_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 1\n");
    assert_eq!(graphssl(&["nonsense", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let unknown = write(dir.path(), "a.toml", "[rates]\nwidgets = 3\n");
    assert_eq!(graphssl(&["rates-krige", "--config", &unknown, "--out", out]).status.code(), Some(2));
    let range = write(dir.path(), "b.toml", "[rates]\nseeds = 0\n");
    assert_eq!(graphssl(&["rates-krige", "--config", &range, "--out", out]).status.code(), Some(2));
    let other = write(dir.path(), "c.toml", "experiment = \"spectra\"\n");
    assert_eq!(graphssl(&["rates-krige", "--config", &other, "--out", out]).status.code(), Some(2));
    let fractional = write(dir.path(), "d.toml", "[channel]\nalphas = [1.5]\n");
    assert_eq!(graphssl(&["channel", "--config", &fractional, "--out", out]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(graphssl(&["spectra", "--config", missing.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    assert_eq!(graphssl(&["spectra"]).status.code(), Some(2));
}

#[test]
fn coincident_label_points_are_a_validation_error() {
    // Both label points coincide, so assigning labels must fail before any numerics.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "r.toml",
        &format!("{TINY_RATES}plus = [0.5, 0.5]\nminus = [0.5, 0.5]\n"),
    );
    let out = dir.path().join("o");
    let o = graphssl(&["rates-krige", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_spell_out_the_defaults() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let defaults = graphssl::ExperimentConfig::default().to_toml().unwrap();
    for id in graphssl::ExperimentId::ALL {
        let cfg = graphssl::ExperimentConfig::load(&dir.join(format!("{}.toml", id.name()))).unwrap();
        assert_eq!(cfg.experiment, Some(id));
        let resolved = graphssl::ExperimentConfig { experiment: None, ..cfg }.to_toml().unwrap();
        assert_eq!(resolved, defaults, "{id}");
    }
}
