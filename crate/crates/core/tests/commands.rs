use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use staflow::commands::{cmd_ablate, cmd_eval, cmd_export, cmd_synth, cmd_train, exit_code, parse_overrides, RunConfig};
use staflow::data::{save_eegb, synth_generate, SynthSpec};
use staflow::model::{read_weights_csv, save_checkpoint};
use staflow::{ArchConfig, Error, StaFlowNet, Variant};

fn cfg(out: &Path, args: &[&str]) -> RunConfig {
    let mut a: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    a.extend(["--out_dir".to_string(), out.display().to_string()]);
    RunConfig::load(None, &parse_overrides(&a).unwrap()).unwrap()
}

const SMALL: &[&str] = &[
    "--synth.trials_per_class", "16", "--synth.n_channels", "4", "--synth.duration_s", "0.64",
    "--train.arch", r#"{"state_dim":16,"spatial_filters":6,"temporal_kernel":8,"flow_pool_kernel":16,"flow_pool_stride":8,"gru_hidden":8,"mlp_hidden":[24,12]}"#,
    "--train.max_epochs", "4", "--train.patience", "2", "--train.batch_size", "8",
];

fn synth_small(dir: &Path) -> (String, String) {
    let p = cmd_synth(&cfg(dir, SMALL)).unwrap();
    (p.train_file.display().to_string(), p.test_file.display().to_string())
}

fn with_files<'a>(train: &'a str, test: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = SMALL.to_vec();
    v.extend(["--train_file", train, "--test_file", test]);
    v.extend_from_slice(extra);
    v
}

#[test]
fn synth_is_reproducible_and_loads() {
    let d = tempfile::tempdir().unwrap();
    let a = cmd_synth(&cfg(&d.path().join("a"), SMALL)).unwrap();
    let b = cmd_synth(&cfg(&d.path().join("b"), SMALL)).unwrap();
    assert_ne!(a.train_seed, a.test_seed);
    for (x, y) in [(&a.train_file, &b.train_file), (&a.test_file, &b.test_file)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        assert_eq!(staflow::data::load_eegb(x).unwrap().n_trials(), 32);
    }
    assert!(d.path().join("a/synth.json").is_file());
    let bad = cfg(d.path(), &["--synth.erd_depth", "2"]);
    assert_eq!(exit_code(&cmd_synth(&bad).unwrap_err()), 2);
}

#[test]
fn train_twice_gives_identical_metrics_json() {
    let d = tempfile::tempdir().unwrap();
    let (tr, te) = synth_small(&d.path().join("data"));
    for run in ["r1", "r2"] {
        cmd_train(&cfg(&d.path().join(run), &with_files(&tr, &te, &["--seeds", "2"]))).unwrap();
    }
    let read = |run: &str, f: &str| std::fs::read(d.path().join(run).join(f)).unwrap();
    assert_eq!(read("r1", "metrics.json"), read("r2", "metrics.json"));
    assert_eq!(read("r1", "checkpoint.sfnc"), read("r2", "checkpoint.sfnc"));
    let hist = staflow::train::read_history_csv(&d.path().join("r1/history_seed1.csv")).unwrap();
    assert!(!hist.is_empty());
}

#[test]
fn single_seed_has_zero_std() {
    let d = tempfile::tempdir().unwrap();
    let (tr, te) = synth_small(&d.path().join("data"));
    let r = cmd_train(&cfg(&d.path().join("r"), &with_files(&tr, &te, &["--seeds", "1"]))).unwrap();
    assert_eq!(r.per_seed.len(), 1);
    assert_eq!((r.aggregate.acc_std, r.aggregate.kappa_std, r.aggregate.f1_std), (0.0, 0.0, 0.0));
}

#[test]
fn mismatched_channels_fail_before_training() {
    let d = tempfile::tempdir().unwrap();
    let (tr, _) = synth_small(&d.path().join("data"));
    let other = d.path().join("other.eegb");
    let set = synth_generate(&SynthSpec { trials_per_class: 4, n_channels: 3, duration_s: 0.64, ..SynthSpec::default() })
        .unwrap();
    save_eegb(&set, &other).unwrap();
    let o = other.display().to_string();
    let e = cmd_train(&cfg(&d.path().join("r"), &with_files(&tr, &o, &[]))).unwrap_err();
    assert!(matches!(&e, Error::Data(m) if m.contains("channel counts")), "{e}");
    assert_eq!(exit_code(&e), 3);
    assert!(!d.path().join("r").exists());
}

#[test]
fn missing_inputs_are_listed_together() {
    let d = tempfile::tempdir().unwrap();
    let e = cmd_train(&cfg(d.path(), &["--train.batch_size", "1", "--train_file", "/nonexistent.eegb"])).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("train_file") && msg.contains("test_file") && msg.contains("batch_size"), "{msg}");
    assert_eq!(exit_code(&e), 2);
}

#[test]
fn ablation_has_five_rows_and_self_comparison() {
    let d = tempfile::tempdir().unwrap();
    let (tr, te) = synth_small(&d.path().join("data"));
    let r = cmd_ablate(&cfg(&d.path().join("a"), &with_files(&tr, &te, &["--seeds", "2", "--train.max_epochs", "2"])))
        .unwrap();
    assert_eq!(r.variants.len(), 5);
    let names: Vec<Variant> = r.variants.iter().map(|v| v.variant).collect();
    assert_eq!(names, Variant::ALL.to_vec());
    let own = &r.variants[0].comparisons[0];
    assert_eq!((own.baseline.as_str(), own.p, own.all_zero), ("Full", 1.0, true));
    for v in &r.variants {
        assert_eq!(v.per_seed.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![0, 1]);
    }
    let table = std::fs::read_to_string(d.path().join("a/ablation.txt")).unwrap();
    assert_eq!(table.lines().count(), 7);
}

#[test]
fn export_default_arch_and_integrity() {
    let d = tempfile::tempdir().unwrap();
    let data = synth_generate(&SynthSpec { trials_per_class: 3, n_channels: 22, n_classes: 4, ..SynthSpec::default() })
        .unwrap();
    let data_path = d.path().join("x.eegb");
    save_eegb(&data, &data_path).unwrap();
    let net = StaFlowNet::<f32>::new(ArchConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ckpt = d.path().join("m.sfnc");
    save_checkpoint(&net, &ckpt).unwrap();
    let (c, p) = (ckpt.display().to_string(), data_path.display().to_string());
    let out = d.path().join("e");
    let s = cmd_export(&cfg(&out, &["--checkpoint", &c, "--data_file", &p])).unwrap();
    for name in ["state", "flow"] {
        let (rows, names) = read_weights_csv::<f32>(&out.join(format!("weights_{name}.csv"))).unwrap();
        assert_eq!((rows.len(), rows[0].len(), names[0].as_str()), (40, 22, "S1"));
    }
    let z = std::fs::read_to_string(out.join("stage_z.csv")).unwrap();
    assert_eq!(z.lines().next().unwrap().split(',').count(), 80 * 21 + 1);
    assert_eq!(z.lines().count(), 1 + 12);
    for stage in ["flow", "mod1", "mod2", "mod3", "z"] {
        assert!(s.fisher.contains_key(stage), "{stage}");
    }
    let ev = cmd_eval(&cfg(&d.path().join("v"), &["--checkpoint", &c, "--test_file", &p])).unwrap();
    assert_eq!(ev.per_seed.len(), 1);

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&ckpt, &bytes).unwrap();
    let e = cmd_export(&cfg(&out, &["--checkpoint", &c, "--data_file", &p])).unwrap_err();
    assert!(matches!(&e, Error::Format { source: staflow::FormatError::Crc { .. }, .. }), "{e}");
}
