//! Command-line entry points. The binary is a thin wrapper over these;
//! each subcommand returns a process exit code: 0 success, 1 usage error,
//! 2 data/format error, 3 check failure.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::augment::{global_transform, random_erase_traced};
use crate::backbone::{BackboneConfig, BackboneKind};
use crate::checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gradcheck::gradient_check;
use crate::image::Image;
use crate::metrics::{evaluate_topk, format_table, Metrics};
use crate::model::{ModelConfig, RafaParams, Variant};
use crate::refine::cross_entropy;
use crate::rng::Rng;
use crate::settings::Settings;
use crate::synth::{generate, SynthConfig};
use crate::train::train;

#[derive(Parser)]
#[command(
    name = "rafa",
    version,
    about = "Region-attention image classifier: train, evaluate, augment, gradcheck, synth"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; expects <data>/train and <data>/val manifest dirs
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest dir and write a JSON report
    Eval(EvalArgs),
    /// Apply training augmentation to a dataset and write the results
    Augment(AugmentArgs),
    /// Compare analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Generate the synthetic texture dataset
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file with one key=value per line
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.load_file(path)?;
        }
        for assignment in &self.overrides {
            s.apply_assignment(assignment)?;
        }
        Ok(s)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root containing train/ and val/ manifest directories
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the log and checkpoint
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Training epochs (default 100)
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size (default 8)
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate (default 0.008)
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch at which the rate drops (default 50)
    #[arg(long)]
    lr_drop_epoch: Option<usize>,
    /// Base seed for init, shuffling, augmentation, dropout (default 1)
    #[arg(long)]
    seed: Option<u64>,
    /// Model variant: baseline | roi_attention | roi_ffn | full
    #[arg(long)]
    variant: Option<Variant>,
    /// Gaussian dropout rate (default 0.25)
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest directory to evaluate (for example <data>/test)
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint produced by train
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report top-k accuracy for this k
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Where to write the JSON report
    #[arg(long, default_value = "eval_report.json")]
    json: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Model variant the checkpoint was trained with
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Manifest directory of source images
    #[arg(long)]
    data: PathBuf,
    /// Output directory for augmented copies, manifest, and stats
    #[arg(long)]
    out: PathBuf,
    /// Base seed; each sample gets its own derived stream (default 1)
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the probe instance (default 1)
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Maximum allowed relative error per parameter group
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Upsampled grid side of the probe model
    #[arg(long, default_value_t = 12)]
    grid: usize,
    /// Region side length
    #[arg(long, default_value_t = 4)]
    region_size: usize,
    /// Feature channels of the probe model
    #[arg(long, default_value_t = 16)]
    channels: usize,
    /// Classifier outputs of the probe model
    #[arg(long, default_value_t = 4)]
    classes: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; train/, val/, test/ are created inside
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Training images per class
    #[arg(long, default_value_t = 70)]
    per_class: usize,
    #[arg(long, default_value_t = 20)]
    val_per_class: usize,
    #[arg(long, default_value_t = 20)]
    test_per_class: usize,
    /// Square image side in pixels
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Additive pixel noise standard deviation
    #[arg(long, default_value_t = 22.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl clap::builder::ValueParserFactory for Variant {
    type Parser = clap::builder::ValueParser;
    fn value_parser() -> Self::Parser {
        clap::builder::ValueParser::new(|s: &str| {
            s.parse::<Variant>().map_err(|e| e.to_string())
        })
    }
}

/// Parse `args` and run the chosen subcommand, returning the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits, not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut settings = a.config.settings()?;
    if let Some(v) = a.epochs {
        settings.epochs = v;
    }
    if let Some(v) = a.batch_size {
        settings.batch_size = v;
    }
    if let Some(v) = a.lr {
        settings.lr_initial = v;
    }
    if let Some(v) = a.lr_drop_epoch {
        settings.lr_drop_epoch = v;
    }
    if let Some(v) = a.seed {
        settings.seed = v;
    }
    if let Some(v) = a.variant {
        settings.variant = v;
    }
    if let Some(v) = a.dropout {
        settings.dropout = v;
    }

    let train_ds = Dataset::load(&a.data.join("train"))?;
    let val_ds = Dataset::load(&a.data.join("val"))?;
    let classes = train_ds.classes.max(val_ds.classes);
    let params = RafaParams::init(settings.model_config(classes), settings.seed)?;

    fs::create_dir_all(&a.out)?;
    let log_path = a.out.join("train_log.csv");
    let ckpt_path = a.out.join("checkpoint.rafa");
    let outcome = train(
        &params,
        &train_ds,
        &val_ds,
        &settings.train_config(true),
        &settings.erase_config(),
        Some(&log_path),
        Some(&ckpt_path),
    )?;
    println!(
        "best val top-1 {:.4} at epoch {}; log {}; checkpoint {}",
        outcome.best_val_top1,
        outcome.best_epoch,
        log_path.display(),
        ckpt_path.display()
    );
    Ok(0)
}

#[derive(Serialize)]
struct EvalReport {
    topk: usize,
    #[serde(flatten)]
    metrics: Metrics,
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let mut settings = a.config.settings()?;
    if let Some(v) = a.variant {
        settings.variant = v;
    }
    // The classifier bias fixes the class count of the stored model.
    let stored = checkpoint::load(&a.checkpoint)?;
    let classes = stored
        .iter()
        .find(|t| t.name == "refine.classifier_b")
        .map(|t| t.shape.first().copied().unwrap_or(0))
        .ok_or_else(|| {
            Error::Format("checkpoint has no refine.classifier_b tensor".to_string())
        })?;
    let params = RafaParams::load(settings.model_config(classes), &a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let metrics = evaluate_topk(&params, &dataset, a.topk)?;
    print!("{}", format_table(&metrics));
    let report = EvalReport {
        topk: a.topk,
        metrics,
    };
    fs::write(&a.json, serde_json::to_string_pretty(&report).expect("serializable"))?;
    println!("report written to {}", a.json.display());
    Ok(0)
}

#[derive(Serialize)]
struct AugmentStats {
    count: usize,
    erased_count: usize,
    mean_erased_fraction: f64,
    min_erased_fraction: f64,
    max_erased_fraction: f64,
}

fn cmd_augment(a: AugmentArgs) -> Result<i32> {
    let mut settings = a.config.settings()?;
    if let Some(v) = a.seed {
        settings.seed = v;
    }
    let dataset = Dataset::load(&a.data)?;
    let cfg = settings.erase_config();
    fs::create_dir_all(&a.out)?;

    let mut manifest = String::from("path,label\n");
    let mut fractions: Vec<f64> = Vec::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let img = Image::read_ppm(&sample.path)?;
        cfg.validate(img.height, img.width)?;
        let mut erase_rng = Rng::derive(settings.seed, &[i as u64, 1]);
        let (erased, rect) = random_erase_traced(&img, &cfg, &mut erase_rng);
        if let Some(r) = rect {
            fractions.push(r.fraction(img.height, img.width));
        }
        let mut transform_rng = Rng::derive(settings.seed, &[i as u64, 2]);
        let out_img = global_transform(&erased, &cfg, &mut transform_rng)?;
        let name = sample
            .path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Manifest(format!("bad file name {}", sample.path.display())))?
            .to_string();
        out_img.write_ppm(&a.out.join(&name))?;
        manifest.push_str(&format!("{name},{}\n", sample.label));
    }
    fs::write(a.out.join("manifest.csv"), manifest)?;

    let stats = AugmentStats {
        count: dataset.len(),
        erased_count: fractions.len(),
        mean_erased_fraction: if fractions.is_empty() {
            0.0
        } else {
            fractions.iter().sum::<f64>() / fractions.len() as f64
        },
        min_erased_fraction: if fractions.is_empty() {
            0.0
        } else {
            fractions.iter().cloned().fold(f64::INFINITY, f64::min)
        },
        max_erased_fraction: fractions.iter().cloned().fold(0.0, f64::max),
    };
    fs::write(
        a.out.join("stats.json"),
        serde_json::to_string_pretty(&stats).expect("serializable"),
    )?;
    println!(
        "augmented {} images into {} (erased {}, mean fraction {:.4})",
        stats.count,
        a.out.display(),
        stats.erased_count,
        stats.mean_erased_fraction
    );
    Ok(0)
}

/// Build the desk-scale full-model probe used by `gradcheck`: a random
/// image through two convolution stages to a small grid, upsampled to
/// `grid x grid` with `channels` channels.
pub fn gradcheck_probe(
    seed: u64,
    grid: usize,
    region_size: usize,
    channels: usize,
    classes: usize,
) -> Result<(RafaParams, Image)> {
    let config = ModelConfig {
        backbone: BackboneConfig {
            kind: BackboneKind::TinyCnn,
            conv_stages: vec![(8, 2), (channels, 2)],
            input_h: 16,
            input_w: 16,
            upsample_target: grid,
        },
        region_size,
        pyramid: Default::default(),
        classes,
        dropout_rate: 0.25,
        variant: Variant::Full,
        feature_channels: None,
        normalize_logits: false,
    };
    let params = RafaParams::init(config, seed)?;
    let mut rng = Rng::derive(seed, &[0x6C]);
    let mut img = Image::new(16, 16);
    for p in img.pixels.iter_mut() {
        *p = rng.below(256) as u8;
    }
    Ok((params, img))
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let (params, img) = gradcheck_probe(a.seed, a.grid, a.region_size, a.channels, a.classes)?;
    let named = params.named_parameters();
    let f = || {
        // Dropout runs in inference mode so the loss is deterministic.
        let mut rng = Rng::new(0);
        let pred = params.forward_image(&img, false, &mut rng)?;
        cross_entropy(&pred.probs, 0)
    };
    let started = std::time::Instant::now();
    let report = gradient_check(f, &named, a.eps)?;
    for group in &report.groups {
        println!(
            "{:26} elements {:5}  max rel err {:.3e}  {}",
            group.name,
            group.elements,
            group.max_rel_err,
            if group.max_rel_err <= a.tol { "ok" } else { "FAIL" }
        );
    }
    println!(
        "overall max rel err {:.3e} (tolerance {:.1e}, {} groups, {:.1}s)",
        report.max_rel_err(),
        a.tol,
        report.groups.len(),
        started.elapsed().as_secs_f64()
    );
    if report.passes(a.tol) {
        Ok(0)
    } else {
        let failing: Vec<&str> = report
            .failing_groups(a.tol)
            .iter()
            .map(|g| g.name.as_str())
            .collect();
        eprintln!("gradient check failed for: {}", failing.join(", "));
        Ok(3)
    }
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        classes: a.classes,
        per_class_train: a.per_class,
        per_class_val: a.val_per_class,
        per_class_test: a.test_per_class,
        size: a.size,
        noise_std: a.noise_std,
        seed: a.seed,
    };
    let summary = generate(&a.out, &cfg)?;
    println!(
        "wrote {} train / {} val / {} test images over {} classes to {}",
        summary.train,
        summary.val,
        summary.test,
        summary.classes,
        a.out.display()
    );
    Ok(0)
}
