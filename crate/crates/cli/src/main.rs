//! `kinesics`: data preparation, training, feature extraction and evaluation
//! for skeleton-based kinesics recognition.

mod config;

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use kinesics_core::backbone::{extract_features, Backbone, BackboneConfig};
use kinesics_core::checkpoint::{load_features, read_checkpoint, save_checkpoint, save_features};
use kinesics_core::dataset::{build_bundle, deserialize_bundle, serialize_bundle, BuildOptions, DatasetBundle};
use kinesics_core::evaluation::{category_mapping, render_report, run_experiment, summarize, ExperimentResult, Preset, SUBSETS};
use kinesics_core::head::HeadConfig;
use kinesics_core::synthetic::{generate, write_raw_csvs, SyntheticSpec};
use kinesics_core::taxonomy::kinesic_of;
use kinesics_core::training::{train_backbone, train_head, HeadData};

use crate::config::RunConfig;

const BACKBONE_CHECKPOINT: &str = "backbone.kckpt";
const HEAD_CHECKPOINT: &str = "head.kckpt";
const FEATURES_FILE: &str = "features.kfeat";
const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Parser)]
#[command(name = "kinesics", version, about = "Skeleton-based kinesics recognition pipeline", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a bundle from a directory of capture CSVs.
    Prepare(PrepareArgs),
    /// Generate a synthetic bundle.
    Synth(SynthArgs),
    /// Train the activity backbone on a bundle.
    TrainBackbone(TrainArgs),
    /// Run a trained backbone over a bundle and store its feature maps.
    ExtractFeatures(ExtractArgs),
    /// Train the kinesics head on stored features.
    TrainHead(TrainHeadArgs),
    /// Run one or all subset experiments end to end.
    Evaluate(EvaluateArgs),
    /// Re-render the report of an earlier evaluation.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[arg(long, env = "KINESICS_INPUT")]
    input: PathBuf,
    #[arg(long, env = "KINESICS_OUTPUT")]
    output: PathBuf,
    /// Keep only these activity labels.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..12))]
    labels: Option<Vec<u8>>,
    /// Fail on unparsable file names instead of skipping them.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    target_frames: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..12))]
    activities: Option<Vec<u8>>,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    per_class: u64,
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write raw 32-joint capture CSVs here.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, env = "KINESICS_OUT")]
    out: PathBuf,
}

/// Options shared by the commands that train.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, env = "KINESICS_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, env = "KINESICS_BUNDLE")]
    bundle: Option<PathBuf>,
    #[arg(long, env = "KINESICS_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum PresetArg {
    Reference,
    Compact,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Reference => Preset::Reference,
            PresetArg::Compact => Preset::Compact,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long, env = "KINESICS_BUNDLE")]
    bundle: PathBuf,
    /// Backbone checkpoint.
    #[arg(long, env = "KINESICS_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "KINESICS_OUT")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainHeadArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Backbone checkpoint the features came from.
    #[arg(long, env = "KINESICS_CHECKPOINT")]
    checkpoint: PathBuf,
    #[arg(long, env = "KINESICS_FEATURES")]
    features: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long, env = "KINESICS_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long, env = "KINESICS_BUNDLE")]
    bundle: Option<PathBuf>,
    #[arg(long, env = "KINESICS_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["4", "6", "8", "10", "12", "all"])]
    subset: String,
    /// One run per seed; repeat the flag or give a comma list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    backbone_epochs: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    head_epochs: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory of an earlier `evaluate` run.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, env = "KINESICS_OUT")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a).context("prepare"),
        Command::Synth(a) => synth(a).context("synth"),
        Command::TrainBackbone(a) => train_backbone_cmd(a).context("train-backbone"),
        Command::ExtractFeatures(a) => extract_cmd(a).context("extract-features"),
        Command::TrainHead(a) => train_head_cmd(a).context("train-head"),
        Command::Evaluate(a) => evaluate(a).context("evaluate"),
        Command::Report(a) => report(a).context("report"),
    }
}

/// JSON-lines log in the run directory; console output stays human-readable.
fn start_logging(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("log.jsonl");
    let file = File::options().create(true).append(true).open(&path).with_context(|| format!("opening {}", path.display()))?;
    let _ = tracing_subscriber::fmt().json().with_ansi(false).with_writer(Mutex::new(file)).try_init();
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Resolved config plus what went in, written next to every run's outputs.
fn write_provenance(dir: &Path, command: &str, config: Option<&RunConfig>, inputs: serde_json::Value) -> Result<()> {
    if let Some(c) = config {
        std::fs::write(dir.join("config.toml"), c.to_toml()).context("writing resolved config")?;
    }
    let record = json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "inputs": inputs,
    });
    write_json(&dir.join("run.json"), &record)
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(args.config.as_deref(), args.preset.map(Into::into))?;
    if let Some(b) = &args.bundle {
        config.paths.bundle = Some(b.clone());
    }
    if let Some(o) = &args.out {
        config.paths.out = Some(o.clone());
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    Ok(config)
}

fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    deserialize_bundle(path).with_context(|| format!("loading bundle {}", path.display()))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    start_logging(&a.output)?;
    let options = BuildOptions { strict: a.strict, target_frames: a.target_frames.map(|t| t as usize), ..BuildOptions::default() };
    let mut bundle = build_bundle(&a.input, &options)?;
    if let Some(labels) = &a.labels {
        bundle = bundle.filter_by_labels(&labels.iter().map(|&l| l as usize).collect())?;
    }
    serialize_bundle(&bundle, &a.output)?;
    write_provenance(
        &a.output,
        "prepare",
        None,
        json!({ "input": a.input, "strict": a.strict, "labels": a.labels, "target_frames": a.target_frames, "bundle_checksum": bundle.checksum() }),
    )?;
    println!("prepared {} records ({} train, {} test) into {}", bundle.len(), bundle.train_names.len(), bundle.val_names.len(), a.output.display());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    start_logging(&a.out)?;
    let spec = SyntheticSpec {
        activities: a.activities.map_or_else(|| SyntheticSpec::default().activities, |v| v.iter().map(|&l| l as usize).collect()),
        samples_per_activity: a.per_class as usize,
        frames: a.frames as usize,
        noise: a.noise,
        seed: a.seed,
    };
    let bundle = generate(&spec)?;
    serialize_bundle(&bundle, &a.out)?;
    if let Some(dir) = &a.csv {
        write_raw_csvs(&bundle, dir)?;
    }
    write_provenance(&a.out, "synth", None, json!({ "spec": spec, "bundle_checksum": bundle.checksum() }))?;
    println!("generated {} synthetic records into {}", bundle.len(), a.out.display());
    Ok(())
}

fn train_backbone_cmd(a: TrainArgs) -> Result<()> {
    let mut config = resolve(&a.run)?;
    if let Some(e) = a.epochs {
        config.backbone_training.epochs = e as usize;
    }
    let out = config.require_out()?.to_path_buf();
    start_logging(&out)?;
    let bundle = load_bundle(config.require_bundle()?)?;
    let classes = bundle.labels().into_iter().collect::<BTreeSet<_>>().len();
    let backbone = config.backbone_for(classes);
    let training = kinesics_core::training::TrainConfig { seed: config.seed, ..config.backbone_training.clone() };
    write_provenance(&out, "train-backbone", Some(&config), json!({ "bundle_checksum": bundle.checksum() }))?;
    let trained = train_backbone(&bundle, &backbone, &training)?;
    let extra = json!({ "class_labels": trained.class_labels, "bundle_checksum": bundle.checksum() });
    let checksum = save_checkpoint(&out.join(BACKBONE_CHECKPOINT), "backbone", &backbone, &trained.model, extra)?;
    write_json(&out.join("report.json"), &trained.report)?;
    println!(
        "backbone: best epoch {} val accuracy {:.2}% (checkpoint {})",
        trained.report.best_epoch,
        trained.report.best_val_accuracy.unwrap_or(f64::NAN),
        &checksum[..12]
    );
    Ok(())
}

fn load_backbone(path: &Path) -> Result<Backbone<f32>> {
    let stored = read_checkpoint(path, "backbone")?;
    let config: BackboneConfig = stored.config()?;
    let mut model = Backbone::<f32>::new(&config, 0)?;
    stored.load_into(&config, &mut model)?;
    Ok(model)
}

fn extract_cmd(a: ExtractArgs) -> Result<()> {
    start_logging(&a.out)?;
    let mut model = load_backbone(&a.checkpoint)?;
    let bundle = load_bundle(&a.bundle)?;
    let features = extract_features(&mut model, &bundle)?;
    save_features(&a.out.join(FEATURES_FILE), &features)?;
    write_provenance(
        &a.out,
        "extract-features",
        None,
        json!({ "bundle_checksum": bundle.checksum(), "backbone_checksum": features.backbone_checksum, "checkpoint": a.checkpoint }),
    )?;
    println!("extracted {} feature maps of shape {:?}", features.len(), features.shape);
    Ok(())
}

fn train_head_cmd(a: TrainHeadArgs) -> Result<()> {
    let mut config = resolve(&a.run)?;
    if let Some(e) = a.epochs {
        config.head_training.epochs = e as usize;
    }
    let out = config.require_out()?.to_path_buf();
    start_logging(&out)?;
    let bundle = load_bundle(config.require_bundle()?)?;
    let backbone = load_backbone(&a.checkpoint)?;
    let features = load_features(&a.features)?;
    let labels: Vec<usize> = bundle.labels().into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let mapping = category_mapping(&labels, config.category_mode)?;
    let rows = |names: &[String]| -> Result<Vec<(String, usize)>> {
        names
            .iter()
            .map(|n| {
                let label = bundle.record(n).with_context(|| format!("no record {n}"))?.label;
                let index = mapping.index_of(kinesic_of(label)?).context("category without a head output")?;
                Ok((n.clone(), index))
            })
            .collect()
    };
    let data = HeadData { train: rows(&bundle.train_names)?, val: rows(&bundle.val_names)? };
    let head_config: HeadConfig = config.head_for(features.shape, mapping.len());
    let training = kinesics_core::training::TrainConfig { seed: config.seed, ..config.head_training.clone() };
    write_provenance(
        &out,
        "train-head",
        Some(&config),
        json!({ "bundle_checksum": bundle.checksum(), "backbone_checksum": features.backbone_checksum }),
    )?;
    let (head, report) = train_head(&features, &data, &head_config, &training, &backbone)?;
    let extra = json!({ "categories": mapping, "backbone_checksum": features.backbone_checksum });
    save_checkpoint(&out.join(HEAD_CHECKPOINT), "head", &head_config, &head, extra)?;
    write_json(&out.join("report.json"), &report)?;
    println!("head: best epoch {} val accuracy {:.2}%", report.best_epoch, report.best_val_accuracy.unwrap_or(f64::NAN));
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let run_args = RunArgs { config: a.config, preset: a.preset, bundle: a.bundle, out: a.out, seed: None };
    let mut config = resolve(&run_args)?;
    if let Some(e) = a.backbone_epochs {
        config.backbone_training.epochs = e as usize;
    }
    if let Some(e) = a.head_epochs {
        config.head_training.epochs = e as usize;
    }
    let seeds = if a.seed.is_empty() { vec![config.seed] } else { a.seed.clone() };
    config.seed = seeds[0];
    let subsets: Vec<usize> = match a.subset.as_str() {
        "all" => SUBSETS.iter().map(|(s, _)| *s).collect(),
        s => vec![s.parse().expect("restricted by the parser")],
    };
    let out = config.require_out()?.to_path_buf();
    start_logging(&out)?;
    let bundle = load_bundle(config.require_bundle()?)?;
    let specs = subsets
        .iter()
        .flat_map(|&subset| seeds.iter().map(move |&seed| (subset, seed)))
        .map(|(subset, seed)| Ok(kinesics_core::evaluation::ExperimentSpec { seed, ..config.experiment(subset)? }))
        .collect::<Result<Vec<_>>>()?;
    write_provenance(&out, "evaluate", Some(&config), json!({ "bundle_checksum": bundle.checksum(), "subsets": subsets, "seeds": seeds }))?;
    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        tracing::info!(subset = spec.subset_id, seed = spec.seed, "experiment started");
        let result = run_experiment(spec, &bundle)?;
        println!(
            "subset {:>2} seed {}: backbone {:.2}%  head {:.2}%",
            result.subset_id, spec.seed, result.stgcn_accuracy, result.cnn_accuracy
        );
        results.push(result);
    }
    write_json(&out.join(RESULTS_FILE), &results)?;
    let files = render_report(&results, &out)?;
    print!("{}", std::fs::read_to_string(&files.summary)?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let path = a.results.join(RESULTS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let results: Vec<ExperimentResult> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let files = render_report(&results, &a.out)?;
    let summary = summarize(&results)?;
    write_json(&a.out.join("trend.json"), &summary)?;
    print!("{}", std::fs::read_to_string(&files.summary)?);
    Ok(())
}
