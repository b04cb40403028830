use std::path::Path;
use std::process::{Command, Output};

fn staflow(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_staflow"));
    c.args(args).current_dir(dir).env_remove("STAFLOW_THREADS");
    if let Some(t) = threads {
        c.env("STAFLOW_THREADS", t);
    }
    c.output().unwrap()
}

const TRAIN: &[&str] = &[
    "train", "--config", "run.json", "--train_file", "d/train.eegb", "--test_file", "d/test.eegb",
];

fn setup(dir: &Path) {
    let run = r#"{
        "synth": {"trials_per_class": 12, "n_channels": 4, "duration_s": 0.64},
        "seeds": 2,
        "train": {"max_epochs": 3, "patience": 2, "batch_size": 8,
                  "arch": {"state_dim": 16, "spatial_filters": 6, "temporal_kernel": 8,
                           "flow_pool_kernel": 16, "flow_pool_stride": 8, "gru_hidden": 8, "mlp_hidden": [24, 12]}}
    }"#;
    std::fs::write(dir.join("run.json"), run).unwrap();
    let o = staflow(&["synth", "--config", "run.json", "--out_dir", "d"], dir, None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_export_eval_round() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path());
    let mut args = TRAIN.to_vec();
    args.extend(["--out_dir", "r"]);
    let o = staflow(&args, d.path(), Some("1"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Full"));
    let o = staflow(&["export", "--checkpoint", "r/checkpoint.sfnc", "--data_file", "d/test.eegb", "--out_dir", "e"], d.path(), None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("e/stage_z.csv").is_file());
    let o = staflow(&["eval", "--checkpoint", "r/checkpoint.sfnc", "--test_file", "d/test.eegb", "--out_dir", "v"], d.path(), None);
    assert!(o.status.success());
    assert!(d.path().join("v/eval.json").is_file());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path());
    let code = |args: &[&str], threads| staflow(args, d.path(), threads).status.code().unwrap();
    let mut bad = TRAIN.to_vec();
    bad.extend(["--train.patience", "0"]);
    assert_eq!(code(&bad, None), 2);
    assert_eq!(code(TRAIN, Some("zero")), 2);
    assert_eq!(code(&["train", "--no-such-flag", "1"], None), 2);
    std::fs::write(d.path().join("junk.eegb"), b"EEGB\x01\0\0\0junk").unwrap();
    let mut junk = TRAIN.to_vec();
    junk.extend(["--test_file", "junk.eegb"]);
    let o = staflow(&junk, d.path(), None);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.eegb"));
    let mut nan = TRAIN.to_vec();
    nan.extend(["--train.lr", "1e300", "--out_dir", "n"]);
    assert_eq!(code(&nan, None), 4);
}
