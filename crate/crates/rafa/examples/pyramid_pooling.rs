//! The fixed-length property of spatial pyramid pooling: grids of
//! different sizes map to the same 14-row descriptor under levels 1, 2, 3.
//!
//!     cargo run --example pyramid_pooling

use rafa::ffn::{spatial_pyramid_pool, PyramidConfig};
use rafa::regions::RegionSequence;
use rafa::rng::Rng;
use rafa::tensor::Tensor;

fn main() -> rafa::Result<()> {
    let cfg = PyramidConfig::default();
    println!(
        "levels {:?} -> {} bins regardless of grid side",
        cfg.levels,
        cfg.bin_count()
    );

    // The counting grid makes the bin structure visible.
    let counting = RegionSequence::from_descriptors(
        Tensor::new(vec![9, 1], (1..=9).map(|v| v as f64).collect())?,
        3,
    )?;
    let pooled = spatial_pyramid_pool(&counting, &cfg)?;
    let v = pooled.to_vec();
    println!("3x3 grid holding 1..9:");
    println!("  level 1 (global mean):    {:?}", &v[0..1]);
    println!("  level 2 (2x2 windows):    {:?}", &v[1..5]);
    println!("  level 3 (one per region): {:?}", &v[5..14]);

    let mut rng = Rng::new(9);
    for side in [3usize, 6] {
        let c = 4;
        let data: Vec<f64> = (0..side * side * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let regions =
            RegionSequence::from_descriptors(Tensor::new(vec![side * side, c], data)?, side)?;
        let out = spatial_pyramid_pool(&regions, &cfg)?;
        println!(
            "grid side {side} ({} regions, {c} channels) -> pyramid shape {:?}",
            side * side,
            out.shape()
        );
    }
    Ok(())
}
