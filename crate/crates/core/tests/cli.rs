use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use phaselab::cli::report::sha256_hex;
use phaselab::cli::{RunManifest, Summary};

fn lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(args)
        .current_dir(dir)
        .env("LAB_THREADS", "2")
        .output()
        .expect("lab runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_SELFTEST: &str =
    "[grid]\nhalf_extent = 8.0\npoints = 64\n[selftest]\nrandom = 2\nunitarity_times = [0.5]\n";

#[test]
fn default_selftest_emits_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["selftest", "--out", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    let table = fs::read_to_string(run.join("stft.csv")).unwrap();
    assert!(table.starts_with("member,step,isometry,reconstruction\n"));
    assert!(!table.contains('\r'));
    assert!(fs::read_to_string(run.join("unitarity.csv"))
        .unwrap()
        .starts_with("propagator,t,defect\n"));
    let manifest: RunManifest = toml::from_str(&fs::read_to_string(run.join("manifest.toml")).unwrap()).unwrap();
    for (name, digest) in &manifest.digests {
        assert_eq!(&sha256_hex(&fs::read(run.join(name)).unwrap()), digest, "{name}");
    }
    assert!(manifest.digests.contains_key("summary.toml"));
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[selftest]\nrefined_stepp = 0.1\n");
    let out = lab(&["selftest", "--config", &cfg, "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refined_stepp"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn bad_thread_count_and_kind_mismatch_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lab"))
        .args(["flow", "--out", "run"])
        .current_dir(dir.path())
        .env("LAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let cfg = write(dir.path(), "k.toml", "kind = \"weyl\"\n");
    let out = lab(&["flow", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_1_with_diff() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.toml",
        &format!("{SMALL_SELFTEST}[[assert]]\nmetric = \"stft.isometry_max\"\nmax = 0.02\n"),
    );
    let asserts = write(
        dir.path(),
        "asserts.toml",
        "[[assert]]\nmetric = \"unitarity.max_defect\"\nmin = 1.0\n\n[[assert]]\nmetric = \"no.such.metric\"\nmax = 1.0\n",
    );
    let out = lab(
        &["selftest", "--config", &cfg, "--assert-file", &asserts, "--out", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("unitarity.max_defect") && err.contains("below min"),
        "{err}"
    );
    assert!(err.contains("no.such.metric") && err.contains("not produced"), "{err}");
    assert!(!err.contains("stft.isometry_max"), "{err}");
    let summary: Summary = toml::from_str(&fs::read_to_string(dir.path().join("run/summary.toml")).unwrap()).unwrap();
    assert!(!summary.passed);
    assert_eq!(summary.assertions.len(), 3);
}

#[test]
fn oscillator_blowup_reports_exponent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "ho.toml",
        "p = [1.0]\n[hamiltonian]\nquadratic = \"harmonic_oscillator\"\n[blowup.oscillator]\nbump_widths = [0.3, 0.5]\ntimes = [0.5, 1.0, 1.5]\n",
    );
    let out = lab(
        &["blowup", "--config", &cfg, "--out", "run", "--emit-plot-data"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("run/blowup_custom_p1.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,detB,ratio,bound,"), "{header}");
    assert!(header.ends_with("log_detB,log_ratio,log_bound"));
    assert_eq!(csv.lines().count(), 4);
    let summary: Summary = toml::from_str(&fs::read_to_string(dir.path().join("run/summary.toml")).unwrap()).unwrap();
    assert!(summary.metrics["custom.p1.fitted_exponent"].is_finite());
}

#[test]
fn reruns_are_byte_identical_and_seed_matters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SMALL_SELFTEST);
    for (seed, out) in [("3", "a"), ("3", "b"), ("4", "c")] {
        assert!(lab(
            &["selftest", "--config", &cfg, "--seed", seed, "--out", out],
            dir.path()
        )
        .status
        .success());
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("stft.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let summary = |d: &str| fs::read(dir.path().join(d).join("summary.toml")).unwrap();
    assert_eq!(summary("a"), summary("b"));
}
