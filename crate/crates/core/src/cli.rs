//! The `ipgan` command-line driver. Every subcommand owns one output
//! directory, writes `summary.json` and `config.toml` there, and marks
//! unfinished work with an `.incomplete` sentinel.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::datasets::{
    generate_synthetic_dataset, ingest_reid_directory, materialize_images, save_manifest, DatasetManifest, LoadedDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{camera_assignment_accuracy, compute_cmc_map, extract_features, identity_preservation_accuracy};
use crate::nn::ModelParams;
use crate::training::{pretrain_semantic_discriminator, train_camera_classifier, train_ipgan, train_reid, Checkpoint, GanRunOptions};
use crate::translation::{translate_dataset, TranslationJob, MANIFEST_FILE};

pub const OUT_ROOT_ENV: &str = "IPGAN_OUT_ROOT";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INCOMPLETE_FILE: &str = ".incomplete";
const LOCK_FILE: &str = ".lock";
const SETS: [&str; 4] = ["source_train", "target_train", "query", "gallery"];

#[derive(Debug, Parser)]
#[command(name = "ipgan", version, about = "Identity-preserving camera-style translation for person re-ID")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config file, or one of the bundled names `desk.cfg` / `paper.cfg`.
    #[arg(long, global = true)]
    config: Option<String>,
    /// `dotted.key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory. Defaults to `$IPGAN_OUT_ROOT/<stage>` (or `runs/<stage>`);
    /// inputs default to sibling stage directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for tensor kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic corpus, or ingest real re-ID directories.
    SynthData {
        /// Market-style directory used as the labeled source instead of synthetic data.
        #[arg(long, requires = "target_dir")]
        source_dir: Option<PathBuf>,
        /// Market-style directory supplying target train, query and gallery.
        #[arg(long, requires = "source_dir")]
        target_dir: Option<PathBuf>,
    },
    /// Train the identity classifier on the source set.
    PretrainDsem {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train generator and domain discriminator against the frozen classifier.
    TrainIpgan {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        dsem: Option<PathBuf>,
        /// Continue from `checkpoint.safetensors` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Restyle the source set into every target camera.
    Translate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        generator: Option<PathBuf>,
    },
    /// Train a re-ID classifier on a labeled manifest.
    TrainReid {
        /// Training manifest (translated set, or the source set for direct transfer).
        #[arg(long)]
        train: Option<PathBuf>,
        /// Use the instance-normalized backbone.
        #[arg(long)]
        ibn: bool,
    },
    /// Score a re-ID model on the target query/gallery split.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Classify translated images with the source identity classifier.
    AuditIdentity {
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        translated: Option<PathBuf>,
        /// Also train a camera classifier on the target set and report how
        /// often translated images land in their requested camera.
        #[arg(long)]
        camera: bool,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Aggregate every `summary.json` under a directory into one table.
    Report {
        #[arg(long)]
        runs: Option<PathBuf>,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::SynthData { .. } => "data",
            Command::PretrainDsem { .. } => "dsem",
            Command::TrainIpgan { .. } => "ipgan",
            Command::Translate { .. } => "translated",
            Command::TrainReid { .. } => "reid",
            Command::Evaluate { .. } => "eval",
            Command::AuditIdentity { .. } => "audit",
            Command::Report { .. } => "report",
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::SynthData { .. } => "synth-data",
            Command::PretrainDsem { .. } => "pretrain-dsem",
            Command::TrainIpgan { .. } => "train-ipgan",
            Command::Translate { .. } => "translate",
            Command::TrainReid { .. } => "train-reid",
            Command::Evaluate { .. } => "evaluate",
            Command::AuditIdentity { .. } => "audit-identity",
            Command::Report { .. } => "report",
        }
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 on success, 2 for usage or configuration errors, 1 otherwise.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Holds the advisory lock on an output directory for the life of a run.
struct RunDir {
    path: PathBuf,
}

impl RunDir {
    fn open(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK_FILE);
        OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Precondition(format!("{} is locked by another run (remove {} if stale)", path.display(), lock.display()))
            } else {
                Error::io(&lock, e)
            }
        })?;
        let sentinel = path.join(INCOMPLETE_FILE);
        fs::write(&sentinel, b"").map_err(|e| Error::io(&sentinel, e))?;
        Ok(Self { path: path.to_path_buf() })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn finish(&self, summary: Value) -> Result<()> {
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        let p = self.file(SUMMARY_FILE);
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        let s = self.file(INCOMPLETE_FILE);
        fs::remove_file(&s).map_err(|e| Error::io(&s, e))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK_FILE));
    }
}

fn default_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config { key: "--threads".into(), message: "must be at least 1".into() });
        }
        // read by the tensor kernels' thread pool on first use
        std::env::set_var("RAYON_NUM_THREADS", n.to_string());
    }
    let mut config = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| default_root().join(cli.command.stage()));
    let root = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let sibling = |given: &Option<PathBuf>, rel: &str| given.clone().unwrap_or_else(|| root.join(rel));

    let dir = RunDir::open(&out)?;
    let cfg_path = dir.file("config.toml");
    fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut summary = json!({ "subcommand": cli.command.name(), "seed": config.seed });
    let extra = match &cli.command {
        Command::SynthData { source_dir, target_dir } => synth_data(&config, &dir, source_dir.as_deref(), target_dir.as_deref())?,
        Command::PretrainDsem { data } => pretrain(&config, &dir, &sibling(data, "data"))?,
        Command::TrainIpgan { data, dsem, resume } => {
            gan(&config, &dir, &sibling(data, "data"), &sibling(dsem, "dsem/dsem.safetensors"), *resume)?
        }
        Command::Translate { data, generator } => {
            translate(&config, &dir, &sibling(data, "data"), &sibling(generator, "ipgan/generator.safetensors"))?
        }
        Command::TrainReid { train, ibn } => reid(&config, &dir, &sibling(train, "translated/manifest.txt"), *ibn)?,
        Command::Evaluate { model, data } => evaluate(&config, &dir, &sibling(model, "reid/reid.safetensors"), &sibling(data, "data"))?,
        Command::AuditIdentity { classifier, translated, camera, data } => audit(
            &config,
            &sibling(classifier, "dsem/dsem.safetensors"),
            &sibling(translated, "translated/manifest.txt"),
            camera.then(|| sibling(data, "data")),
        )?,
        Command::Report { runs } => report(&dir, &runs.clone().unwrap_or(root.clone()))?,
    };
    if let (Value::Object(s), Value::Object(e)) = (&mut summary, extra) {
        s.extend(e);
    }
    dir.finish(summary)
}

fn load_set(data_dir: &Path, set: &str) -> Result<LoadedDataset> {
    LoadedDataset::load(&data_dir.join(set).join(MANIFEST_FILE))
}

fn write_set(dir: &RunDir, set: &str, manifest: &DatasetManifest) -> Result<()> {
    let set_dir = dir.file(set);
    let m = materialize_images(manifest, &set_dir, "images")?;
    save_manifest(&m, &set_dir.join(MANIFEST_FILE))
}

fn synth_data(cfg: &RunConfig, dir: &RunDir, source: Option<&Path>, target: Option<&Path>) -> Result<Value> {
    let sets: [DatasetManifest; 4] = match (source, target) {
        (Some(s), Some(t)) => {
            let s = ingest_reid_directory(s, "source")?;
            let t = ingest_reid_directory(t, "target")?;
            let (source_train, _) = s.train.remap_identities()?;
            [source_train, t.train, t.query, t.gallery]
        }
        _ => {
            let c = generate_synthetic_dataset(&cfg.synthetic_spec()?, cfg.seed)?;
            [c.source_train, c.target_train, c.query, c.gallery]
        }
    };
    let mut counts = serde_json::Map::new();
    for (name, m) in SETS.iter().zip(&sets) {
        write_set(dir, name, m)?;
        counts.insert(name.to_string(), json!(m.len()));
    }
    Ok(json!({
        "records": counts,
        "num_source_identities": sets[0].num_identities,
        "num_cameras": sets[1].num_cameras,
    }))
}

fn pretrain(cfg: &RunConfig, dir: &RunDir, data: &Path) -> Result<Value> {
    let source = load_set(data, "source_train")?;
    let arch = cfg.reid_arch(source.manifest.image_channels);
    let model = pretrain_semantic_discriminator(&source, &arch, &cfg.dsem_train())?;
    model.save(&dir.file("dsem.safetensors"))?;
    Ok(json!({
        "num_classes": source.manifest.num_identities,
        "train_accuracy": model.metadata["train_accuracy"],
        "train_cross_entropy": model.metadata["train_cross_entropy"],
    }))
}

fn gan(cfg: &RunConfig, dir: &RunDir, data: &Path, dsem: &Path, resume: bool) -> Result<Value> {
    let source = load_set(data, "source_train")?;
    let target = load_set(data, "target_train")?;
    let semantic = ModelParams::load(dsem)?;
    let setup = cfg.gan_setup(target.manifest.num_cameras, source.manifest.image_channels);
    let checkpoint = dir.file("checkpoint.safetensors");
    let metrics = dir.file("metrics.jsonl");
    let resume = if resume {
        let c = Checkpoint::load(&checkpoint)?;
        // rewrite the log so it holds exactly the checkpoint's history
        let lines: String = c.history.iter().map(|m| serde_json::to_string(m).expect("metrics") + "\n").collect();
        fs::write(&metrics, lines).map_err(|e| Error::io(&metrics, e))?;
        Some(c)
    } else {
        let _ = fs::remove_file(&metrics);
        None
    };
    let options = GanRunOptions {
        checkpoint_dir: Some(dir.path.clone()),
        metrics_path: Some(metrics),
        resume,
        stop_after: None,
    };
    let state = train_ipgan(&source, &target, &semantic, &setup, options)?;
    state.generator.save(&dir.file("generator.safetensors"))?;
    Ok(json!({
        "with_semantic": setup.train.semantic_active(),
        "adversarial_form": setup.train.adversarial_form,
        "epochs": state.epoch,
        "steps": state.history.len(),
        "rec_first_tenth": state.mean_metric("g_rec", 0.0, 0.1),
        "rec_last_tenth": state.mean_metric("g_rec", 0.9, 1.0),
        "semantic_unchanged": true,
    }))
}

fn translate(cfg: &RunConfig, dir: &RunDir, data: &Path, generator: &Path) -> Result<Value> {
    let source = load_set(data, "source_train")?;
    let g = ModelParams::load(generator)?;
    let method = match g.metadata.get("with_semantic").and_then(Value::as_bool) {
        Some(false) => "stargan",
        _ => "ipgan",
    };
    let job = TranslationJob {
        target_cameras: cfg.translation.target_cameras.clone(),
        output_dir: dir.path.clone(),
        seed: cfg.seed,
        name: format!("translated-{method}"),
    };
    let m = translate_dataset(&g, &source, &job)?;
    Ok(json!({ "method": method, "records": m.len(), "source_records": source.len() }))
}

fn reid(cfg: &RunConfig, dir: &RunDir, train: &Path, ibn: bool) -> Result<Value> {
    let data = LoadedDataset::load(train)?;
    let method = data.manifest.name.strip_prefix("translated-").unwrap_or("direct").to_string();
    let arch = cfg.reid_arch(data.manifest.image_channels);
    let mut model = train_reid(&data, &arch, &cfg.reid_train_config(), ibn)?;
    let backbone = if ibn { "ibn" } else { "baseline" };
    model.metadata.insert("method".into(), json!(method));
    model.metadata.insert("backbone".into(), json!(backbone));
    model.save(&dir.file("reid.safetensors"))?;
    Ok(json!({
        "method": method,
        "backbone": backbone,
        "num_classes": data.manifest.num_identities,
        "train_cross_entropy": model.metadata["train_cross_entropy"],
        "train_accuracy": model.metadata["train_accuracy"],
    }))
}

fn evaluate(cfg: &RunConfig, dir: &RunDir, model: &Path, data: &Path) -> Result<Value> {
    let m = ModelParams::load(model)?;
    let q = extract_features(&m, &load_set(data, "query")?)?;
    let g = extract_features(&m, &load_set(data, "gallery")?)?;
    let r = compute_cmc_map(&q, &g, cfg.protocol.cmc_depth)?;
    let report = dir.file("eval.json");
    fs::write(&report, r.to_report()).map_err(|e| Error::io(&report, e))?;
    Ok(json!({
        "method": m.metadata.get("method").cloned().unwrap_or(json!("unknown")),
        "backbone": m.metadata.get("backbone").cloned().unwrap_or(json!("unknown")),
        "rank1": r.rank1(),
        "rank5": r.cmc.get(4).copied().unwrap_or(1.0),
        "mAP": r.map,
        "skipped_queries": r.skipped_queries,
    }))
}

fn audit(cfg: &RunConfig, classifier: &Path, translated: &Path, camera_data: Option<PathBuf>) -> Result<Value> {
    let c = ModelParams::load(classifier)?;
    let set = LoadedDataset::load(translated)?;
    let method = set.manifest.name.strip_prefix("translated-").unwrap_or("untranslated").to_string();
    let mut out = json!({
        "method": method,
        "identity_accuracy": identity_preservation_accuracy(&c, &set)?,
        "records": set.len(),
    });
    if let Some(data) = camera_data {
        let target = load_set(&data, "target_train")?;
        let cam = train_camera_classifier(&target, &cfg.reid_arch(target.manifest.image_channels), &cfg.camera_train_config())?;
        out["camera_accuracy"] = json!(camera_assignment_accuracy(&cam, &set)?);
        out["camera_classifier_train_accuracy"] = cam.metadata["train_accuracy"].clone();
    }
    Ok(out)
}

fn collect_summaries(dir: &Path, out: &mut Vec<(PathBuf, Value)>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_summaries(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == SUMMARY_FILE) && !p.with_file_name(INCOMPLETE_FILE).exists() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            if let Ok(v) = serde_json::from_str::<Value>(&text) {
                out.push((p, v));
            }
        }
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Reads only `summary.json` files, so deleting checkpoints never breaks it.
fn report(dir: &RunDir, runs: &Path) -> Result<Value> {
    let mut found = Vec::new();
    collect_summaries(runs, &mut found)?;
    let mut retrieval: BTreeMap<(String, String), Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut identity: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (path, s) in &found {
        if path.starts_with(&dir.path) {
            continue;
        }
        let text = |k: &str| s.get(k).and_then(Value::as_str).unwrap_or("unknown").to_string();
        let num = |k: &str| s.get(k).and_then(Value::as_f64).unwrap_or(f64::NAN);
        match s.get("subcommand").and_then(Value::as_str) {
            Some("evaluate") => retrieval
                .entry((text("method"), text("backbone")))
                .or_default()
                .push((num("rank1"), num("rank5"), num("mAP"))),
            Some("audit-identity") => identity.entry(text("method")).or_default().push(num("identity_accuracy")),
            _ => {}
        }
    }
    let label = |m: &str| match m {
        "direct" => "Direct Transfer".to_string(),
        "stargan" => "StarGAN ablation".to_string(),
        "ipgan" => "IPGAN".to_string(),
        other => other.to_string(),
    };
    let mut table = String::from("| training data | backbone | runs | rank-1 | rank-5 | mAP |\n|---|---|---|---|---|---|\n");
    let mut rows = Vec::new();
    for ((method, backbone), v) in &retrieval {
        let r1 = mean(&v.iter().map(|x| x.0).collect::<Vec<_>>());
        let r5 = mean(&v.iter().map(|x| x.1).collect::<Vec<_>>());
        let map = mean(&v.iter().map(|x| x.2).collect::<Vec<_>>());
        table += &format!("| {} | {backbone} | {} | {r1:.4} | {r5:.4} | {map:.4} |\n", label(method), v.len());
        rows.push(json!({ "method": method, "backbone": backbone, "runs": v.len(), "rank1": r1, "rank5": r5, "mAP": map }));
    }
    if !identity.is_empty() {
        table += "\n| translated by | runs | identity accuracy |\n|---|---|---|\n";
        for (method, v) in &identity {
            table += &format!("| {} | {} | {:.4} |\n", label(method), v.len(), mean(v));
        }
    }
    let path = dir.file("report.md");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(json!({ "summaries_read": found.len(), "retrieval": rows }))
}
