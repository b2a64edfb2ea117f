//! Train every model variant on the same synthetic dataset and seed, then
//! print the ablation ladder: baseline, +region attention, +feed-forward
//! paths, full model with weighted refinement. Each variant is scored with
//! its best-by-validation checkpoint.
//!
//!     cargo run --release --example ablation_ladder

use rafa::augment::EraseConfig;
use rafa::dataset::Dataset;
use rafa::metrics::evaluate;
use rafa::model::{ModelConfig, RafaParams, Variant};
use rafa::synth::{generate, SynthConfig};
use rafa::train::{train, TrainConfig};

fn main() -> rafa::Result<()> {
    let dir = std::env::temp_dir().join("rafa-ablation");
    generate(&dir, &SynthConfig::default())?;
    let train_ds = Dataset::load(&dir.join("train"))?;
    let val_ds = Dataset::load(&dir.join("val"))?;
    let test_ds = Dataset::load(&dir.join("test"))?;

    let seed = 7;
    let cfg = TrainConfig {
        epochs: 30,
        lr_drop_epoch: 15,
        seed,
        ..TrainConfig::default()
    };
    let aug = EraseConfig {
        crop_h: 48,
        crop_w: 48,
        ..EraseConfig::default()
    };

    println!("{:<16} {:>9} {:>9} {:>8}", "variant", "test top1", "best val", "seconds");
    for variant in Variant::ALL {
        let mut model_cfg = ModelConfig::desk_default(4);
        model_cfg.variant = variant;
        let params = RafaParams::init(model_cfg.clone(), seed)?;
        let ckpt = dir.join(format!("{}.rafa", variant.name()));
        let started = std::time::Instant::now();
        let outcome = train(&params, &train_ds, &val_ds, &cfg, &aug, None, Some(&ckpt))?;
        let best = RafaParams::load(model_cfg, &ckpt)?;
        let metrics = evaluate(&best, &test_ds)?;
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>8.1}",
            variant.name(),
            metrics.top1,
            outcome.best_val_top1,
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
