use std::path::Path;
use std::process::{Command, Output};

fn dobs(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dobs"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) {
    let o = dobs(dir, args);
    assert!(o.status.success(), "dobs {args:?} failed: {}", stderr(&o));
}

/// Sphere run through featurize and embed; leaves `f.csv` and `model.dob`.
fn trained(dir: &Path) {
    ok(dir, &["simulate", "--preset", "sphere", "--steps", "6000", "--seed", "7", "-o", "traj.csv", "--observations", "obs.csv"]);
    ok(dir, &["featurize", "-i", "obs.csv", "-o", "f.csv"]);
    ok(dir, &["embed", "--features", "f.csv", "--epsilon-factor", "1.0", "-o", "model.dob"]);
}

#[test]
fn simulate_sphere_header() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--preset", "sphere", "--steps", "6000", "--seed", "7", "-o", "traj.csv"]);
    let text = std::fs::read_to_string(d.path().join("traj.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,theta_1,theta_2,x_1,x_2,x_3"));
    assert_eq!(lines.count(), 6001);
}

#[test]
fn embed_then_observe_round_trip() {
    let d = tempfile::tempdir().unwrap();
    trained(d.path());
    ok(d.path(), &["observe", "--model", "model.dob", "--features", "f.csv", "-o", "psi.csv"]);
    let text = std::fs::read_to_string(d.path().join("psi.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("t,psi_1"));
    // 100 frames plus the initial state
    assert_eq!(text.lines().count(), 102);
    assert!(text.lines().skip(1).all(|l| l.split(',').all(|v| v.parse::<f64>().unwrap().is_finite())));
}

#[test]
fn observer_extension_continues_time() {
    let d = tempfile::tempdir().unwrap();
    trained(d.path());
    ok(d.path(), &["observe", "--model", "model.dob", "--features", "f.csv", "-o", "psi.csv"]);
    ok(d.path(), &["extend", "--model", "model.dob", "--features", "f.csv", "--from", "psi.csv", "-o", "ext.csv"]);
    let text = std::fs::read_to_string(d.path().join("ext.csv")).unwrap();
    let first: f64 = text.lines().nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(first, 606.0);
    let o = dobs(d.path(), &["extend", "--model", "model.dob", "--features", "f.csv", "-o", "x.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--from"));
}

#[test]
fn invalid_gamma_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    trained(d.path());
    let o = dobs(d.path(), &["observe", "--model", "model.dob", "--features", "f.csv", "--gamma", "1.5", "-o", "psi.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("(0,1)"), "{}", stderr(&o));
    assert!(!d.path().join("psi.csv").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("run.toml"), "# short run\nsteps = 10\nseed = 3\n").unwrap();
    ok(d.path(), &["--config", "run.toml", "simulate", "-o", "a.csv"]);
    ok(d.path(), &["--config", "run.toml", "simulate", "--steps", "20", "-o", "b.csv"]);
    let rows = |f: &str| std::fs::read_to_string(d.path().join(f)).unwrap().lines().count();
    assert_eq!(rows("a.csv"), 12);
    assert_eq!(rows("b.csv"), 22);
}

#[test]
fn unknown_config_key_rejected() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "stepz = 10\n").unwrap();
    let o = dobs(d.path(), &["--config", "bad.toml", "simulate", "-o", "a.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stepz"), "{}", stderr(&o));
    assert!(!d.path().join("a.csv").exists());
}

#[test]
fn usage_and_data_errors_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(dobs(d.path(), &["simulate"]).status.code(), Some(2));
    assert_eq!(dobs(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(dobs(d.path(), &["--threads", "0", "simulate", "-o", "a.csv"]).status.code(), Some(2));
    assert_eq!(dobs(d.path(), &["simulate", "--dt", "-1", "-o", "a.csv"]).status.code(), Some(2));
    let o = dobs(d.path(), &["observe", "--model", "missing.dob", "--features", "f.csv", "-o", "p.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.dob"));
    std::fs::write(d.path().join("f.csv"), "t,f_1\n0,1\n1,oops\n").unwrap();
    let o = dobs(d.path(), &["embed", "--features", "f.csv", "-o", "m.dob"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn model_version_checked() {
    let d = tempfile::tempdir().unwrap();
    trained(d.path());
    let path = d.path().join("model.dob");
    let bytes = std::fs::read(&path).unwrap();
    let key = b"\"version\":1";
    let at = bytes.windows(key.len()).position(|w| w == key).expect("version in header");
    let mut patched = bytes.clone();
    patched[at + "\"version\":".len()] = b'9';
    std::fs::write(&path, patched).unwrap();
    let o = dobs(d.path(), &["observe", "--model", "model.dob", "--features", "f.csv", "-o", "psi.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unsupported model version 9"), "{}", stderr(&o));
}

#[test]
fn fit_lift_stores_observer_settings() {
    let d = tempfile::tempdir().unwrap();
    trained(d.path());
    ok(d.path(), &["fit-lift", "--model", "model.dob", "--gamma", "0.5", "--coords", "2", "-o", "m2.dob"]);
    ok(d.path(), &["observe", "--model", "m2.dob", "--features", "f.csv", "--init", "zero", "-o", "psi.csv"]);
    let text = std::fs::read_to_string(d.path().join("psi.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,psi_1,psi_2"));
    assert!(text.lines().nth(1).unwrap().ends_with(",0,0"));
}

#[test]
fn binary_outputs_round_trip() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--preset", "circle", "--steps", "400", "-o", "c.bin", "--observations", "obs.dobs"]);
    assert_eq!(&std::fs::read(d.path().join("c.bin")).unwrap()[..5], b"DOBS1");
    ok(d.path(), &["featurize", "-i", "obs.dobs", "--mode", "raw", "-o", "f.bin"]);
    ok(d.path(), &["embed", "--features", "f.bin", "--dims", "2", "-o", "m.dob", "--coords", "coords.csv"]);
    let coords = std::fs::read_to_string(d.path().join("coords.csv")).unwrap();
    assert_eq!(coords.lines().next(), Some("t,psi_1,psi_2"));
    assert_eq!(coords.lines().count(), 402);
}

#[test]
fn music_synth_to_observer() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["simulate", "--preset", "music-synth", "--steps", "200", "-o", "pitch.csv", "--audio", "tone.wav"]);
    // the binary feature file keeps the STFT settings, CSV does not
    ok(d.path(), &["featurize", "-i", "tone.wav", "-o", "tone.bin"]);
    ok(d.path(), &["embed", "--features", "tone.bin", "--dims", "2", "-o", "m.dob"]);
    ok(d.path(), &["fit-lift", "--model", "m.dob", "--gamma", "0.1"]);
    // WAV input is featurized with the model's STFT settings
    ok(d.path(), &["observe", "--model", "m.dob", "--features", "tone.wav", "-o", "psi.csv"]);
    let o = dobs(d.path(), &["simulate", "--preset", "music-synth", "-o", "p.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn experiment_writes_reports() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("s.toml"),
        "c_values = [0.016, 0.024]\nseeds = [0]\nframes = 80\ncovariance_window = 10\nout_dir = \"out\"\n",
    )
    .unwrap();
    let o = dobs(d.path(), &["--config", "s.toml", "experiment", "sphere"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["sphere.csv", "sphere_summary.csv", "sphere.json", "sphere.svg"] {
        assert!(d.path().join("out").join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.path().join("out/sphere.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("method,coord,c,seed,metric,value"));
    assert_eq!(csv.lines().count(), 1 + 2 * 20);
    assert!(String::from_utf8_lossy(&o.stdout).contains("config sha256"));
    let q = dobs(d.path(), &["--quiet", "--config", "s.toml", "experiment", "sphere"]);
    assert!(q.stdout.is_empty());
}
