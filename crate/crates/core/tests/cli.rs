use std::path::Path;
use std::process::{Command, Output};

fn qpulse(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpulse"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

const FOCK4: &str = "field.kind = fock\nfield.n = 4\ndt = 0.01\noutput_stride = 50\nmaster_seed = 11\n";

#[test]
fn trajectory_then_replay_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.cfg", FOCK4);
    let out = qpulse(&["trajectory", "--config", "run.cfg", "--seed", "4", "--out", "post.csv"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("post.record").exists());
    let out = qpulse(
        &["replay", "--config", "run.cfg", "--record", "post.record", "--out", "replay.csv"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read(d.join("post.csv")).unwrap();
    let b = std::fs::read(d.join("replay.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("# seed 4 stream 0\n"));
    assert!(text.contains("t,p_0,p_1,Q_e\n0,0.5,0.5,0.5\n"));
}

#[test]
fn homodyne_replay_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.cfg", &format!("{FOCK4}detection.scheme = homodyne\ndetection.phase = 0.4\n"));
    let out = qpulse(
        &["trajectory", "--config", "run.cfg", "--out", "a.csv", "--record", "a.rec"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = qpulse(&["replay", "--config", "run.cfg", "--record", "a.rec"], d);
    assert!(out.status.success());
    assert_eq!(out.stdout, std::fs::read(d.join("a.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "ok.cfg", FOCK4);
    write(d, "typo.cfg", "gama = 1\n");
    write(d, "coarse.cfg", "field.kind = fock\nfield.n = 20\ndt = 0.02\n");
    write(d, "short.rec", "scheme counting\ndt 0.01\nsteps 10\ndata\n");

    assert_eq!(qpulse(&["--help"], d).status.code(), Some(0));
    assert_eq!(qpulse(&["bogus"], d).status.code(), Some(1));
    assert_eq!(qpulse(&["ensemble"], d).status.code(), Some(1));
    assert_eq!(qpulse(&["ensemble", "--config", "missing.cfg"], d).status.code(), Some(1));
    assert_eq!(qpulse(&["validate-config", "--config", "typo.cfg"], d).status.code(), Some(1));
    assert_eq!(
        qpulse(&["replay", "--config", "ok.cfg", "--record", "short.rec"], d).status.code(),
        Some(1)
    );
    assert_eq!(
        qpulse(&["replay", "--config", "ok.cfg", "--record", "none.rec"], d).status.code(),
        Some(1)
    );

    let out = qpulse(&["validate-config", "--config", "coarse.cfg"], d);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("use dt <="), "{err}");

    // the counting guard stops the run itself: exit 2
    write(d, "huge.cfg", "field.kind = fock\nfield.n = 20\ndt = 0.1\ntruth = fixed:1\n");
    let out = qpulse(&["trajectory", "--config", "huge.cfg"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_config_prints_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "ok.cfg", FOCK4);
    let out = qpulse(&["validate-config", "--config", "ok.cfg"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["gamma = 1.0", "pulse.width", "cavity_dim = 5", "hypotheses.1.atom_init = 1", "cutoff_epsilon"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    // the printed form is itself a valid config with the same hash
    write(d, "resolved.cfg", &text);
    let again = qpulse(&["validate-config", "--config", "resolved.cfg"], d);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn ensemble_output_is_reproducible_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.cfg", &format!("{FOCK4}outputs = qe_curve, posterior_samples, records\n"));
    let args = |out: &'static str, threads: &'static str| {
        ["ensemble", "--config", "run.cfg", "--trajectories", "8", "--threads", threads, "--out", out]
    };
    assert!(qpulse(&args("a.csv", "1"), d).status.success());
    assert!(qpulse(&args("b.csv", "3"), d).status.success());
    assert_eq!(std::fs::read(d.join("a.csv")).unwrap(), std::fs::read(d.join("b.csv")).unwrap());
    let samples = std::fs::read_to_string(d.join("a.csv.posteriors.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| !l.starts_with('#')).count(), 9);
    assert!(d.join("a.csv.records/000007.record").exists());
}

#[test]
fn master_equation_counts_the_photons() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "run.cfg", "field.kind = fock\nfield.n = 2\nt_final = 15\noutput_stride = 1000\n");
    let out = qpulse(&["master-equation", "--config", "run.cfg"], d);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    let integrated: f64 = last.split(',').nth(4).unwrap().parse().unwrap();
    assert!((integrated - 2.0).abs() < 1e-3, "{integrated}");
}
