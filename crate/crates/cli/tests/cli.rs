use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wdcgan_core::signal::{self, Condition, SignalMeta, Source};

const TINY: &str = r#"
schema_version = 1
seed = 11
seg_len = 64

[surrogate]
noise_std = 0.03
duration_s = 8.0
sample_rate_hz = 1024.0
excitation_rate_hz = 64.0
modes = [
    { frequency_hz = 60.0, damping_ratio = 0.05, amplitude = 0.3 },
    { frequency_hz = 150.0, damping_ratio = 0.05, amplitude = 0.15 },
]
damage_shift = [
    { frequency_factor = 2.0, amplitude_factor = 1.0 },
    { frequency_factor = 1.0, amplitude_factor = 1.0 },
]

[gan]
z_channels = 8
channel_widths = [16, 8, 8, 4, 1]
lr_generator = 1e-4
lr_critic = 1e-4
critic_iters = 2
minibatch = 32
critic_dropout_p = 0.3
eval_interval = 1
eval_samples = 16

[[cases]]
name = "A"
epochs = 2

[classifier]
epochs = 2

[split]
train_per_class = 20
test_per_class = 15

[eval]
n_generate = 40
kde_points = 50
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("wdcgan.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn wdcgan(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdcgan"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("WDCGAN_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(o));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}\nbogus = 1\n"));
    let o = wdcgan(&cfg, &dir.path().join("out"), &["synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn wrong_schema_version_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("schema_version = 1", "schema_version = 9"));
    let o = wdcgan(&cfg, &dir.path().join("out"), &["synth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let missing = dir.path().join("nope.f64");
    let o = wdcgan(&cfg, &dir.path().join("out"), &["ingest", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.f64"));
}

#[test]
fn stage_without_upstream_artifact_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = wdcgan(&cfg, &dir.path().join("out"), &["test-dcnn", "--scenario", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn ingest_cuts_whole_segments_per_condition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let mut files = Vec::new();
    for (name, condition) in [("u.f64", Condition::Undamaged), ("d.f64", Condition::Damaged)] {
        let path = dir.path().join(name);
        let values: Vec<f64> = (0..6400 + 17).map(|i| (i as f64 * 0.37).sin()).collect();
        signal::write_f64le(&path, &values).unwrap();
        let meta = SignalMeta {
            sample_rate_hz: 1024.0,
            condition,
            joint_id: 3,
            source: Source::Real,
        };
        signal::write_meta(&signal::sidecar_path(&path), &meta).unwrap();
        files.push(path.to_str().unwrap().to_string());
    }
    let args: Vec<&str> = std::iter::once("ingest").chain(files.iter().map(String::as_str)).collect();
    assert_ok(&wdcgan(&cfg, &out, &args));
    for pool in ["undamaged", "damaged"] {
        let segs = signal::read_pool(&out.join("pools").join(pool)).unwrap();
        assert_eq!(segs.len(), 100);
        assert!(segs.iter().all(|s| s.len() == 64 && s.joint_id == 3));
        let idx: Vec<usize> = segs.iter().map(|s| s.segment_index).collect();
        assert_eq!(idx, (0..100).collect::<Vec<_>>());
    }
}

#[test]
fn pipeline_resumes_and_stages_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let first = wdcgan(&cfg, &out, &["pipeline"]);
    assert_ok(&first);
    assert_eq!(String::from_utf8_lossy(&first.stdout).lines().count(), 3);

    // deleting an eval output reruns eval only, with the same result
    let report = out.join("cases/A/eval/report.json");
    let before = std::fs::read(&report).unwrap();
    let gan_before = std::fs::read(out.join("cases/A/gan.ckpt")).unwrap();
    std::fs::remove_file(&report).unwrap();
    let second = wdcgan(&cfg, &out, &["pipeline"]);
    assert_ok(&second);
    let err = stderr(&second);
    assert!(err.contains("[train-gan/A] up to date"), "{err}");
    assert!(err.contains("[generate/A] up to date"), "{err}");
    assert!(!err.contains("[eval/A] up to date"), "{err}");
    assert_eq!(std::fs::read(&report).unwrap(), before);
    assert_eq!(std::fs::read(out.join("cases/A/gan.ckpt")).unwrap(), gan_before);

    // a single stage rerun gives identical bytes
    let fid = out.join("cases/A/eval/fid_scores.csv");
    let fid_before = std::fs::read(&fid).unwrap();
    assert_ok(&wdcgan(&cfg, &out, &["eval", "--case", "A"]));
    assert_eq!(std::fs::read(&fid).unwrap(), fid_before);

    // scenario 2 tests on real undamaged against generated damaged segments
    let split = std::fs::read_to_string(out.join("cases/A/scenario2/split.csv")).unwrap();
    let test: Vec<Vec<&str>> = split
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|p| p[0] == "test")
        .collect();
    let und_real = test.iter().filter(|p| p[2] == "0" && p[1].starts_with("undamaged_real")).count();
    let dam_fake = test.iter().filter(|p| p[2] == "1" && p[1].starts_with("damaged_fake")).count();
    assert_eq!((und_real, dam_fake, test.len()), (15, 15, 30), "{split}");

    assert_ok(&wdcgan(&cfg, &out, &["generate", "--case", "A", "--n", "256"]));
    let fakes = signal::read_pool(&out.join("cases/A/fake")).unwrap();
    assert_eq!(fakes.len(), 256);
    assert!(fakes.iter().all(|s| s.source == Source::Fake && s.condition == Condition::Damaged));
}

#[test]
fn out_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let flag = dir.path().join("flag");
    let o = Command::new(env!("CARGO_BIN_EXE_wdcgan"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&flag)
        .arg("synth")
        .env("WDCGAN_OUT_DIR", dir.path().join("env"))
        .output()
        .unwrap();
    assert_ok(&o);
    assert!(flag.join("raw").is_dir());
    assert!(!dir.path().join("env").exists());
}
