//! Save a model to the tensor checkpoint format, load it back, and verify
//! the weights bit for bit; also round-trip a standalone feature grid.
//!
//!     cargo run --example checkpoint_roundtrip

use rafa::backbone::{load_feature_grid, save_feature_grid, FeatureGrid};
use rafa::model::{ModelConfig, RafaParams, Variant};
use rafa::rng::Rng;
use rafa::tensor::Tensor;

fn main() -> rafa::Result<()> {
    let dir = std::env::temp_dir().join("rafa-checkpoint-demo");
    std::fs::create_dir_all(&dir)?;

    let mut cfg = ModelConfig::desk_default(4);
    cfg.variant = Variant::Full;
    let params = RafaParams::init(cfg.clone(), 21)?;
    let path = dir.join("model.rafa");
    params.save(&path)?;
    let bytes = std::fs::metadata(&path)?.len();

    let loaded = RafaParams::load(cfg, &path)?;
    let mut tensors = 0;
    for ((name, a), (_, b)) in params
        .named_parameters()
        .iter()
        .zip(loaded.named_parameters().iter())
    {
        let same = a
            .to_vec()
            .iter()
            .zip(b.to_vec())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "mismatch in {name}");
        tensors += 1;
    }
    println!("{tensors} tensors round-tripped bit-exactly through {bytes} bytes");

    let mut rng = Rng::new(5);
    let grid_values: Vec<f64> = (0..6 * 6 * 8).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let grid = FeatureGrid::from_tensor(Tensor::new(vec![6, 6, 8], grid_values)?)?;
    let grid_path = dir.join("features.rafa");
    save_feature_grid(&grid_path, &grid)?;
    let back = load_feature_grid(&grid_path)?;
    assert_eq!(back.values.to_vec(), grid.values.to_vec());
    println!(
        "feature grid {}x{}x{} round-tripped through {}",
        back.height,
        back.width,
        back.channels,
        grid_path.display()
    );
    Ok(())
}
