//! End-to-end runs of the command-line driver on a tiny configuration.

use std::fs;
use std::path::Path;

use ipgan::cli::run;
use serde_json::Value;

const TINY: &str = r#"
seed = 3
[data]
num_identities = 3
num_cameras = 2
images_per_identity_per_camera = 2
height = 16
width = 8
[generator]
base_width = 4
residual_blocks = 1
edge_kernel = 3
[discriminator]
base_width = 4
layers = 2
[reid]
stem_channels = 4
stage_channels = [4, 8, 8, 8]
blocks_per_stage = [1, 1, 1, 1]
embedding_dim = 16
[gan]
total_epochs = 2
batch_size = 4
checkpoint_every = 1
[dsem]
total_epochs = 2
batch_size = 4
[reid_train]
total_epochs = 2
batch_size = 4
[camera_train]
total_epochs = 2
batch_size = 4
[protocol]
cmc_depth = 5
"#;

fn ipgan(root: &Path, cfg: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["ipgan".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend(["--config".into(), cfg.display().to_string()]);
    if !args.contains(&"--out") {
        argv.extend(["--out".into(), root.join(default_stage(args[0])).display().to_string()]);
    }
    run(argv)
}

fn default_stage(cmd: &str) -> &'static str {
    match cmd {
        "synth-data" => "data",
        "pretrain-dsem" => "dsem",
        "train-ipgan" => "ipgan",
        "translate" => "translated",
        "train-reid" => "reid",
        "evaluate" => "eval",
        "audit-identity" => "audit",
        _ => "report",
    }
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn full_pipeline_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();

    assert_eq!(ipgan(root, &cfg, &["synth-data"]), 0);
    let data = summary(&root.join("data"));
    assert_eq!(data["records"]["source_train"], 12);
    assert!(root.join("data/query/manifest.txt").exists());
    assert!(!root.join("data/.incomplete").exists());
    assert!(!root.join("data/.lock").exists());
    assert!(root.join("data/config.toml").exists());

    assert_eq!(ipgan(root, &cfg, &["pretrain-dsem"]), 0);
    let before = fs::read(root.join("dsem/dsem.safetensors")).unwrap();
    assert_eq!(ipgan(root, &cfg, &["train-ipgan"]), 0);
    assert_eq!(fs::read(root.join("dsem/dsem.safetensors")).unwrap(), before);
    let gan = summary(&root.join("ipgan"));
    assert_eq!(gan["with_semantic"], true);
    assert_eq!(gan["epochs"], 2);
    let log = fs::read_to_string(root.join("ipgan/metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count() as u64, gan["steps"].as_u64().unwrap());

    // resuming a finished run is a no-op that keeps the history
    assert_eq!(ipgan(root, &cfg, &["train-ipgan", "--resume"]), 0);
    assert_eq!(summary(&root.join("ipgan"))["steps"], gan["steps"]);

    assert_eq!(ipgan(root, &cfg, &["translate"]), 0);
    let t = summary(&root.join("translated"));
    assert_eq!(t["records"], 24);
    assert_eq!(t["method"], "ipgan");

    assert_eq!(ipgan(root, &cfg, &["train-reid"]), 0);
    assert_eq!(ipgan(root, &cfg, &["evaluate"]), 0);
    let e = summary(&root.join("eval"));
    assert_eq!(e["method"], "ipgan");
    assert!((0.0..=1.0).contains(&e["mAP"].as_f64().unwrap()));
    assert!(root.join("eval/eval.json").exists());

    let direct_reid = root.join("reid-direct").display().to_string();
    let direct_eval = root.join("eval-direct").display().to_string();
    let source = root.join("data/source_train/manifest.txt").display().to_string();
    assert_eq!(ipgan(root, &cfg, &["train-reid", "--train", &source, "--ibn", "--out", &direct_reid]), 0);
    let model = root.join("reid-direct/reid.safetensors").display().to_string();
    assert_eq!(ipgan(root, &cfg, &["evaluate", "--model", &model, "--out", &direct_eval]), 0);
    assert_eq!(summary(&root.join("eval-direct"))["backbone"], "ibn");
    assert_eq!(summary(&root.join("eval-direct"))["method"], "direct");

    assert_eq!(ipgan(root, &cfg, &["audit-identity", "--camera"]), 0);
    let a = summary(&root.join("audit"));
    assert!(a["identity_accuracy"].as_f64().is_some());
    assert!(a["camera_accuracy"].as_f64().is_some());

    // the report needs only summaries
    fs::remove_file(root.join("reid/reid.safetensors")).unwrap();
    assert_eq!(ipgan(root, &cfg, &["report"]), 0);
    let table = fs::read_to_string(root.join("report/report.md")).unwrap();
    assert!(table.contains("IPGAN"), "{table}");
    assert!(table.contains("Direct Transfer"), "{table}");
}

#[test]
fn reruns_into_fresh_directories_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    for run_dir in ["a", "b"] {
        let root = tmp.path().join(run_dir);
        assert_eq!(ipgan(&root, &cfg, &["synth-data", "--seed", "9"]), 0);
        assert_eq!(ipgan(&root, &cfg, &["pretrain-dsem"]), 0);
    }
    let read = |p: &str| fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(read("a/data/source_train/manifest.txt"), read("b/data/source_train/manifest.txt"));
    assert_eq!(read("a/dsem/dsem.safetensors"), read("b/dsem/dsem.safetensors"));
}

#[test]
fn configuration_errors_exit_two_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(ipgan(tmp.path(), &cfg, &["evaluate", "--override", "protocol.metric=bogus"]), 2);
    assert_eq!(ipgan(tmp.path(), &cfg, &["synth-data", "--override", "gan.no_such_key=1"]), 2);
    assert_eq!(ipgan(tmp.path(), &cfg, &["synth-data", "--override", "gan.total_epochs=3"]), 2);
    assert!(!tmp.path().join("eval").exists());
    // ablation override is accepted
    assert_eq!(ipgan(tmp.path(), &cfg, &["synth-data", "--override", "weights.lambda_sem=0"]), 0);
}

#[test]
fn missing_inputs_exit_one_and_leave_the_sentinel() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    assert_eq!(ipgan(tmp.path(), &cfg, &["pretrain-dsem"]), 1);
    assert!(tmp.path().join("dsem/.incomplete").exists());
    assert!(!tmp.path().join("dsem/.lock").exists());
    assert!(!tmp.path().join("dsem/summary.json").exists());
}
