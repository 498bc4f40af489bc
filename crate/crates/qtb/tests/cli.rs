//! The `qtb` binary end to end: exit codes, help text, determinism and
//! the shipped fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qtb::fixtures;
use qtb::report::file_digest;
use serde_json::Value;

fn qtb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtb")).args(args).output().expect("binary runs")
}

fn fixture(name: &str) -> String {
    fixtures::shipped_dir().join(name).to_str().unwrap().to_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn result(r: &Value, key: &str) -> f64 {
    r["results"][key]["value"].as_f64().unwrap_or_else(|| panic!("no result {key}: {r}"))
}

fn out(dir: &tempfile::TempDir, sub: &str) -> PathBuf {
    dir.path().join(sub)
}

#[test]
fn help_documents_every_command_and_flag() {
    let top = String::from_utf8(qtb(&["--help"]).stdout).unwrap();
    for cmd in ["simulate", "hist", "coinc", "triple", "fringe", "chsh", "tomo", "fit-resonance", "fit-singles", "brightness", "fixtures"] {
        assert!(top.contains(cmd), "{cmd} missing from --help");
    }
    for flag in ["--config", "--out", "--seed", "--threads", "--svg"] {
        assert!(top.contains(flag), "{flag} missing from --help");
    }
    let per_command = [
        ("simulate", &["--duration", "--kind", "--signal-phase", "--idler-phase", "--format"][..]),
        ("hist", &["--input", "--bin-width", "--range", "--peak-separation", "--prominence", "--fit-tau"]),
        ("coinc", &["--window", "--offset", "--period", "--shift-periods"]),
        ("triple", &["--clock", "--gate-a", "--gate-b"]),
        ("fringe", &["--scan", "--alpha"]),
        ("tomo", &["--counts", "--trials", "--full"]),
        ("fit-singles", &["--sweep", "--partner-sweep", "--pump-mw", "--coincidence-rate", "--bandwidth"]),
        ("brightness", &["--n2", "--a-eff", "--radius", "--linewidth", "--ref-linewidth"]),
    ];
    for (cmd, flags) in per_command {
        let help = String::from_utf8(qtb(&[cmd, "--help"]).stdout).unwrap();
        for flag in flags {
            assert!(help.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
}

#[test]
fn exit_codes_separate_configuration_from_analysis_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(fixture("experiment.json")).unwrap()).unwrap();
    cfg["pump"]["mu"] = (-1.0).into();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let o = qtb(&["simulate", "--config", bad.to_str().unwrap(), "--out", out(&dir, "a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pump.mu"));

    let o = qtb(&["chsh", "--visibility", "0.9", "--sigma", "0", "--out", out(&dir, "b").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("analysis"));

    assert_eq!(qtb(&["hist", "--input", "/nonexistent/stream.ttag"]).status.code(), Some(2));
    assert_eq!(qtb(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_reports_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: &str| {
        let o = out(&dir, sub);
        let st = qtb(&["simulate", "--config", &fixture("experiment.json"), "--duration", "10ms", "--seed", seed, "--out", o.to_str().unwrap()]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        let digest = file_digest(&o.join("stream.ttag")).unwrap();
        assert_eq!(report(&o)["parameters"]["stream_sha256"], digest.as_str());
        digest
    };
    assert_eq!(run("a", "42"), run("b", "42"));
    assert_ne!(run("a", "42"), run("c", "43"));
}

#[test]
fn zero_duration_gives_an_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(&dir, "z");
    let st = qtb(&["simulate", "--config", &fixture("experiment.json"), "--duration", "0s", "--out", o.to_str().unwrap()]);
    assert!(st.status.success());
    let stream = qtb::ttag::read_stream_file(&o.join("stream.ttag")).unwrap();
    assert_eq!(stream.len(), 0);
    assert_eq!(result(&report(&o), "periods"), 0.0);
}

#[test]
fn tag_counts_sit_within_five_sigma_of_the_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let o = out(&dir, "t");
    assert!(qtb(&["simulate", "--config", &fixture("experiment.json"), "--duration", "50ms", "--out", o.to_str().unwrap()]).status.success());
    let r = report(&o);
    for ch in ["A1", "A2", "B1", "B2"] {
        let z = result(&r, &format!("tags_z.{ch}"));
        assert!(z.abs() < 5.0, "{ch}: z = {z}");
    }
}

#[test]
fn shipped_fixtures_regenerate_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let names = fixtures::write_all(dir.path()).unwrap();
    assert!(!names.is_empty());
    for name in names {
        let fresh = std::fs::read(dir.path().join(&name)).unwrap();
        let shipped = std::fs::read(fixtures::shipped_dir().join(&name)).unwrap_or_else(|_| panic!("{name} not shipped"));
        assert!(fresh == shipped, "{name} differs from its generator");
    }
}

#[test]
fn analysis_commands_on_the_fixtures() {
    let dir = tempfile::tempdir().unwrap();

    let o = out(&dir, "fringe");
    assert!(qtb(&["fringe", "--scan", &fixture("fringe_scans.csv"), "--svg", "--out", o.to_str().unwrap()]).status.success());
    let r = report(&o);
    for port in ["A1B1", "A1B2", "A2B1", "A2B2"] {
        assert!(result(&r, &format!("visibility.{port}")) > 0.9);
        assert!(o.join(format!("fringe_{port}.csv")).exists());
    }
    assert!(result(&r, "raw_visibility") > 0.95);
    assert!(result(&r, "chsh_s") > 2.0);
    assert!(o.join("correlation.csv").exists() && o.join("fringe.svg").exists());

    let o = out(&dir, "tomo");
    assert!(qtb(&["tomo", "--counts", &fixture("tomography_counts.json"), "--trials", "20", "--out", o.to_str().unwrap()]).status.success());
    let r = report(&o);
    assert!((result(&r, "fidelity") - 0.94).abs() < 0.01);
    assert_eq!(result(&r, "trials"), 20.0);
    let rho: Value = serde_json::from_str(&std::fs::read_to_string(o.join("rho.json")).unwrap()).unwrap();
    assert_eq!(rho["entries"].as_array().unwrap().len(), 16);
    assert!(r["inputs"].as_object().unwrap().values().all(|d| d.as_str().unwrap().len() == 64));

    let o = out(&dir, "res");
    assert!(qtb(&["fit-resonance", "--trace", &fixture("trace_c27.csv"), "--out", o.to_str().unwrap()]).status.success());
    let r = report(&o);
    assert_eq!(result(&r, "itu_channel"), 27.0);
    assert_eq!(r["results"]["linewidth"]["unit"], "Hz");

    let o = out(&dir, "bright");
    assert!(qtb(&["brightness", "--ref-linewidth", "2GHz", "--out", o.to_str().unwrap()]).status.success());
    let r = report(&o);
    assert!((result(&r, "ratio") - 8.0).abs() < 1e-9);
    assert!(result(&r, "cube_law_deviation") < 1e-12);
}

#[test]
fn stream_commands_agree_across_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("experiment.json");
    for (sub, fmt) in [("bin", "ttag"), ("txt", "tsv")] {
        let o = out(&dir, sub);
        assert!(qtb(&["simulate", "--config", &cfg, "--duration", "5ms", "--format", fmt, "--out", o.to_str().unwrap()]).status.success());
    }
    let triple = |file: &str, sub: &str| {
        let o = out(&dir, sub);
        let input = out(&dir, file);
        let st = qtb(&["triple", "--config", &cfg, "--input", input.to_str().unwrap(), "--out", o.to_str().unwrap()]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        report(&o)["results"].clone()
    };
    assert_eq!(triple("bin/stream.ttag", "t1"), triple("txt/stream.tsv", "t2"));
}

#[test]
fn correlation_run_recovers_coherence_time_and_car() {
    let dir = tempfile::tempdir().unwrap();
    let sim = out(&dir, "sim");
    let cfg = fixture("experiment.json");
    assert!(qtb(&["simulate", "--config", &cfg, "--duration", "20ms", "--kind", "correlation", "--out", sim.to_str().unwrap()]).status.success());
    let stream = sim.join("stream.ttag");

    let o = out(&dir, "hist");
    let st = qtb(&["hist", "--input", stream.to_str().unwrap(), "--a", "SIG", "--b", "IDL", "--bin-width", "20ps", "--range", "5ns", "--fit-tau", "--out", o.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let r = report(&o);
    let tau = result(&r, "tau");
    assert!((tau - 152e-12).abs() < 5.0 * result(&r, "tau_err") + 3e-12, "τ = {tau}");
    assert!(o.join("histogram.csv").exists());

    let o = out(&dir, "coinc");
    assert!(qtb(&["coinc", "--input", stream.to_str().unwrap(), "--out", o.to_str().unwrap()]).status.success());
    let r = report(&o);
    // double-pulse source: CAR is of order 2/µ
    let car = result(&r, "car");
    assert!(car > 5.0 && car < 200.0, "CAR = {car}");
}
