//! `kws`: train, evaluate, and inspect the keyword-spotting models.
//!
//! Machine-readable results go to standard output (JSON, or CSV where noted);
//! progress and diagnostics go to standard error. Exit codes: 0 success,
//! 2 usage error, 3 data error, 4 numeric failure.

use clap::{Args, Parser, Subcommand};
use kws_core::audio::{pad_or_clip, read_wav, FrontendConfig, MfccExtractor};
use kws_core::dataset::{scan_dataset, write_manifest, AugmentationConfig, DatasetScan, Split};
use kws_core::error::Error as CoreError;
use kws_core::evaluation::{
    argmax_lowest, evaluate, score_all, write_averaged_csv, write_roc_csv, EvalReport,
};
use kws_core::models::{footprint, ArchSpec, Model, ARCH_NAMES};
use kws_core::nn::SgdMomentum;
use kws_core::training::{
    load_checkpoint, save_checkpoint, train, Checkpoint, EpochMetrics, TrainConfig,
};
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "kws", version, about = "Keyword spotting on Speech Commands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus per-epoch metrics
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split; report JSON + ROC CSVs
    Eval(EvalArgs),
    /// Per-layer parameter and multiply counts for an architecture
    Footprint(FootprintArgs),
    /// Classify a single WAV file with a trained checkpoint
    Predict(PredictArgs),
    /// Export the dataset scan as a JSONL manifest (path, label, split)
    Manifest(ManifestArgs),
    /// Averaged ROC polylines for one or more checkpoints, as CSV
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture: res8, res8-narrow, res15, res15-narrow, res26, res26-narrow
    #[arg(long)]
    arch: String,
    /// Dataset root (falls back to $SPEECH_COMMANDS_DIR)
    #[arg(long, env = "SPEECH_COMMANDS_DIR")]
    data: PathBuf,
    /// Output directory [default: runs/<arch>-seed<seed>]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 26)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Initial learning rate
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,
    /// Probability of mixing background noise into a training clip
    #[arg(long, default_value_t = 0.8)]
    noise_prob: f64,
    /// Random time shift is drawn from [-shift-ms, +shift-ms]
    #[arg(long, default_value_t = 100.0)]
    shift_ms: f64,
    /// Fraction of the feature cache evicted between epochs
    #[arg(long, default_value_t = 0.3)]
    eviction: f64,
    /// Subsample the dataset to at most N clips (smoke testing)
    #[arg(long)]
    limit: Option<usize>,
    /// Continue from a saved checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root (falls back to $SPEECH_COMMANDS_DIR)
    #[arg(long, env = "SPEECH_COMMANDS_DIR")]
    data: PathBuf,
    /// Expected architecture; fails if the checkpoint disagrees
    #[arg(long)]
    arch: Option<String>,
    /// Split to score: train, validation, or test
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Directory for roc.csv and roc-averaged.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Subsample the dataset to at most N clips (smoke testing)
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct FootprintArgs {
    /// Architecture name, or "all" for every variant
    #[arg(long)]
    arch: String,
    /// Input frames (T)
    #[arg(long, default_value_t = 98)]
    frames: usize,
    /// Input MFCC coefficients per frame (F)
    #[arg(long, default_value_t = 40)]
    coeffs: usize,
    /// Emit JSON instead of the text table
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 16 kHz mono 16-bit PCM WAV file
    #[arg(long)]
    wav: PathBuf,
}

#[derive(Args)]
struct ManifestArgs {
    /// Dataset root (falls back to $SPEECH_COMMANDS_DIR)
    #[arg(long, env = "SPEECH_COMMANDS_DIR")]
    data: PathBuf,
    /// Write to a file instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Dataset root (falls back to $SPEECH_COMMANDS_DIR)
    #[arg(long, env = "SPEECH_COMMANDS_DIR")]
    data: PathBuf,
    /// Checkpoint to evaluate; repeat for several curves
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Subsample the dataset to at most N clips (smoke testing)
    #[arg(long)]
    limit: Option<usize>,
    /// Write to a file instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" | "val" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(format!(
            "unknown split '{other}'; expected train, validation, or test"
        )),
    }
}

/// Failure carrying its process exit code; message goes to standard error.
struct Failure {
    code: i32,
    message: String,
}

type CliResult = Result<(), Failure>;

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::UnknownArch(_) => 2,
            CoreError::NonFiniteLoss { .. } | CoreError::NonFiniteGradient(_) => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: 3,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            code: 3,
            message: e.to_string(),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Footprint(args) => cmd_footprint(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Manifest(args) => cmd_manifest(args),
        Command::PlotData(args) => cmd_plot_data(args),
    };
    if let Err(f) = result {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

fn load_scan(data: &Path, limit: Option<usize>) -> Result<DatasetScan, Failure> {
    let mut scan = scan_dataset(data)?;
    if let Some(n) = limit {
        scan.subsample(n);
    }
    Ok(scan)
}

/// Rebuild a model (and a throwaway optimizer) from a checkpoint file.
fn load_model(path: &Path) -> Result<(Checkpoint, Model), Failure> {
    let ck = load_checkpoint(path)?;
    let spec = ArchSpec::named(ck.arch);
    let mut model = Model::build(&spec, 0);
    let mut opt = SgdMomentum::new(ck.state.lr as f32, 0.9, 0.0);
    ck.restore(&mut model, &mut opt)?;
    Ok((ck, model))
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    version: &'static str,
    command: &'static str,
    arch: &'a str,
    seed: u64,
    deterministic: bool,
    dataset_root: &'a Path,
    limit: Option<usize>,
    n_samples: usize,
    n_noise_clips: usize,
    train_config: &'a TrainConfig,
    augmentation: &'a AugmentationConfig,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    arch: &'a str,
    seed: u64,
    epochs: &'a [EpochMetrics],
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let spec = ArchSpec::from_name(&args.arch)?;
    let scan = load_scan(&args.data, args.limit)?;
    let cfg = TrainConfig {
        lr0: args.lr,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let aug = AugmentationConfig {
        noise_prob: args.noise_prob,
        shift_range_ms: args.shift_ms,
        cache_eviction_frac: args.eviction,
        ..AugmentationConfig::default()
    };
    let resume = match &args.resume {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let out_dir = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", args.arch, args.seed)));
    fs::create_dir_all(&out_dir)?;

    eprintln!(
        "training {} on {} ({} clips, {} noise files)",
        args.arch,
        args.data.display(),
        scan.samples.len(),
        scan.noise.clips.len()
    );
    let mut report = |m: &EpochMetrics| {
        eprintln!(
            "epoch {:>3}  lr {:<8.6}  train loss {:.4}  val accuracy {:.4}",
            m.epoch, m.lr, m.train_loss, m.val_accuracy
        );
    };
    let outcome = train(&spec, &scan, &cfg, &aug, resume.as_ref(), Some(&mut report))?;

    save_checkpoint(out_dir.join("best.ckpt"), &outcome.best)?;
    save_checkpoint(out_dir.join("last.ckpt"), &outcome.last)?;
    write_json(
        &out_dir.join("metrics.json"),
        &MetricsFile {
            arch: &args.arch,
            seed: args.seed,
            epochs: &outcome.history,
        },
    )?;
    write_json(
        &out_dir.join("run.json"),
        &RunMetadata {
            version: env!("CARGO_PKG_VERSION"),
            command: "train",
            arch: &args.arch,
            seed: args.seed,
            deterministic: true,
            dataset_root: &args.data,
            limit: args.limit,
            n_samples: scan.samples.len(),
            n_noise_clips: scan.noise.clips.len(),
            train_config: &cfg,
            augmentation: &aug,
        },
    )?;

    #[derive(Serialize)]
    struct Summary<'a> {
        arch: &'a str,
        seed: u64,
        epochs_trained: usize,
        best_val_accuracy: f64,
        last_val_accuracy: f64,
        out_dir: &'a Path,
    }
    println!(
        "{}",
        serde_json::to_string(&Summary {
            arch: &args.arch,
            seed: args.seed,
            epochs_trained: outcome.history.len(),
            best_val_accuracy: outcome.best.state.val_accuracy,
            last_val_accuracy: outcome.last.state.val_accuracy,
            out_dir: &out_dir,
        })?
    );
    Ok(())
}

/// Score a checkpoint on one split; shared by eval and plot-data.
fn report_on_split(
    model: &mut Model,
    scan: &DatasetScan,
    split: Split,
    batch_size: usize,
) -> Result<EvalReport, Failure> {
    let extractor = MfccExtractor::new(FrontendConfig::default());
    let set = kws_core::training::assemble_eval_set(scan, split, &extractor)?;
    let probs = score_all(model, &set.features, batch_size)?;
    Ok(evaluate(&probs, &set.labels)?)
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let (ck, mut model) = load_model(&args.checkpoint)?;
    if let Some(expected) = &args.arch {
        let want = ArchSpec::from_name(expected)?;
        if want.name != ck.arch {
            return Err(CoreError::CheckpointMismatch(format!(
                "checkpoint holds {} but --arch asked for {}",
                ck.arch.as_str(),
                want.name.as_str()
            ))
            .into());
        }
    }
    let scan = load_scan(&args.data, args.limit)?;
    let report = report_on_split(&mut model, &scan, args.split, args.batch_size)?;

    fs::create_dir_all(&args.out)?;
    write_roc_csv(
        BufWriter::new(File::create(args.out.join("roc.csv"))?),
        &report.roc,
    )?;
    write_averaged_csv(
        BufWriter::new(File::create(args.out.join("roc-averaged.csv"))?),
        &report.roc,
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn render_footprint_table(fp: &kws_core::Footprint) -> String {
    let mut out = format!(
        "arch: {} (T={}, F={})\n{:<12} {:>3} {:>3} {:>5} {:>4} {:>4} {:>10} {:>14}\n",
        fp.arch,
        fp.input_frames,
        fp.input_coeffs,
        "type",
        "m",
        "r",
        "n",
        "d_w",
        "d_h",
        "params",
        "multiplies"
    );
    let dash = "-".to_string();
    for row in &fp.rows {
        let (m, r) = row
            .kernel
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or((dash.clone(), dash.clone()));
        let (dw, dh) = row
            .dilation
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or((dash.clone(), dash.clone()));
        let params = if row.params == 0 {
            dash.clone()
        } else {
            row.params.to_string()
        };
        out.push_str(&format!(
            "{:<12} {:>3} {:>3} {:>5} {:>4} {:>4} {:>10} {:>14}\n",
            row.label, m, r, row.n_maps, dw, dh, params, row.multiplies
        ));
    }
    out.push_str(&format!(
        "{:<12} {:>3} {:>3} {:>5} {:>4} {:>4} {:>10} {:>14}\n",
        "total", "-", "-", "-", "-", "-", fp.n_params, fp.n_multiplies
    ));
    out
}

fn cmd_footprint(args: FootprintArgs) -> CliResult {
    let names: Vec<&str> = if args.arch == "all" {
        ARCH_NAMES.to_vec()
    } else {
        vec![args.arch.as_str()]
    };
    let footprints: Vec<kws_core::Footprint> = names
        .iter()
        .map(|n| {
            Ok(footprint(
                &ArchSpec::from_name(n)?,
                args.frames,
                args.coeffs,
            ))
        })
        .collect::<Result<_, CoreError>>()?;
    if args.json {
        if footprints.len() == 1 {
            println!("{}", serde_json::to_string_pretty(&footprints[0])?);
        } else {
            println!("{}", serde_json::to_string_pretty(&footprints)?);
        }
    } else {
        let tables: Vec<String> = footprints.iter().map(render_footprint_table).collect();
        print!("{}", tables.join("\n"));
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CliResult {
    let (_, mut model) = load_model(&args.checkpoint)?;
    let wav = read_wav(&args.wav)?;
    let clip = pad_or_clip(&wav)?;
    let extractor = MfccExtractor::new(FrontendConfig::default());
    let feats = extractor.extract(&clip)?;
    let probs = score_all(&mut model, &[feats], 1)?;
    let label = argmax_lowest(&probs[0]);

    #[derive(Serialize)]
    struct Prediction<'a> {
        label: &'a str,
        classes: Vec<&'static str>,
        probabilities: Vec<f32>,
    }
    let classes: Vec<&'static str> = (0..kws_core::dataset::N_CLASSES)
        .map(kws_core::dataset::LabelSpace::label_name)
        .collect();
    println!(
        "{}",
        serde_json::to_string(&Prediction {
            label: classes[label],
            classes: classes.clone(),
            probabilities: probs[0].to_vec(),
        })?
    );
    Ok(())
}

fn cmd_manifest(args: ManifestArgs) -> CliResult {
    let scan = load_scan(&args.data, None)?;
    match &args.out {
        Some(path) => write_manifest(BufWriter::new(File::create(path)?), &scan.samples)?,
        None => write_manifest(std::io::stdout().lock(), &scan.samples)?,
    }
    Ok(())
}

fn cmd_plot_data(args: PlotDataArgs) -> CliResult {
    let scan = load_scan(&args.data, args.limit)?;
    let mut curves: Vec<(String, EvalReport)> = Vec::new();
    for path in &args.checkpoints {
        let (ck, mut model) = load_model(path)?;
        let report = report_on_split(&mut model, &scan, args.split, args.batch_size)?;
        let mut label = ck.arch.as_str().to_string();
        if curves.iter().any(|(l, _)| *l == label) {
            label = format!("{label}#{}", curves.len());
        }
        curves.push((label, report));
    }
    let mut csv = String::from("model,far,frr\n");
    for (label, report) in &curves {
        for p in &report.roc.averaged.points {
            csv.push_str(&format!("{label},{},{}\n", p.far, p.frr));
        }
    }
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Frozen defaults: any drift from these is a recipe change.
    #[test]
    fn train_defaults_match_frozen_table() {
        let cli = Cli::parse_from(["kws", "train", "--arch", "res8", "--data", "/tmp/x"]);
        let Command::Train(a) = cli.command else {
            panic!("expected train");
        };
        assert_eq!(a.lr, 0.1);
        assert_eq!(a.momentum, 0.9);
        assert_eq!(a.weight_decay, 1e-5);
        assert_eq!(a.batch_size, 64);
        assert_eq!(a.epochs, 26);
        assert_eq!(a.noise_prob, 0.8);
        assert_eq!(a.shift_ms, 100.0);
        assert_eq!(a.eviction, 0.3);
        assert_eq!(a.seed, 1);
        assert_eq!(a.limit, None);
    }

    #[test]
    fn core_defaults_match_cli_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr0, 0.1);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 1e-5);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.epochs, 26);
        let aug = AugmentationConfig::default();
        assert_eq!(aug.noise_prob, 0.8);
        assert_eq!(aug.shift_range_ms, 100.0);
        assert_eq!(aug.cache_eviction_frac, 0.3);
    }

    #[test]
    fn split_parser_accepts_aliases() {
        assert_eq!(parse_split("val").unwrap(), Split::Validation);
        assert_eq!(parse_split("test").unwrap(), Split::Test);
        assert!(parse_split("dev").is_err());
    }

    #[test]
    fn footprint_table_lines_up() {
        let fp = footprint(&ArchSpec::from_name("res8-narrow").unwrap(), 98, 40);
        let table = render_footprint_table(&fp);
        assert!(table.contains("res8-narrow"));
        assert!(table.lines().last().unwrap().contains("7540017"));
        assert!(table.contains("softmax"));
    }
}
