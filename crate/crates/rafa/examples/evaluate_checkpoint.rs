//! Evaluate a trained checkpoint on a manifest directory and print the
//! metric table plus the confusion matrix. Trains a quick model first if
//! no checkpoint path is given.
//!
//!     cargo run --release --example evaluate_checkpoint [checkpoint dataset_dir]

use std::path::PathBuf;

use rafa::augment::EraseConfig;
use rafa::dataset::Dataset;
use rafa::metrics::{evaluate, format_table};
use rafa::model::{ModelConfig, RafaParams, Variant};
use rafa::synth::{generate, SynthConfig};
use rafa::train::{train, TrainConfig};

fn main() -> rafa::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (ckpt, test_dir, cfg) = if args.len() == 2 {
        let cfg = ModelConfig::desk_default(4);
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]), cfg)
    } else {
        // No arguments: build a small dataset and train a short run.
        let dir = std::env::temp_dir().join("rafa-eval-demo");
        generate(&dir, &SynthConfig::default())?;
        let mut cfg = ModelConfig::desk_default(4);
        cfg.variant = Variant::Full;
        let params = RafaParams::init(cfg.clone(), 7)?;
        let ckpt = dir.join("checkpoint.rafa");
        train(
            &params,
            &Dataset::load(&dir.join("train"))?,
            &Dataset::load(&dir.join("val"))?,
            &TrainConfig {
                epochs: 10,
                lr_drop_epoch: 5,
                seed: 7,
                ..TrainConfig::default()
            },
            &EraseConfig {
                crop_h: 48,
                crop_w: 48,
                ..EraseConfig::default()
            },
            None,
            Some(&ckpt),
        )?;
        (ckpt, dir.join("test"), cfg)
    };

    let params = RafaParams::load(cfg, &ckpt)?;
    let dataset = Dataset::load(&test_dir)?;
    let metrics = evaluate(&params, &dataset)?;
    print!("{}", format_table(&metrics));
    println!("confusion matrix (rows = true class):");
    for row in &metrics.confusion {
        println!("  {row:?}");
    }
    Ok(())
}
