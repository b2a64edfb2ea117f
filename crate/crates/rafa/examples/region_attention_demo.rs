//! Pool a feature grid into nine regions, run region attention over them,
//! and inspect the mixing matrix.
//!
//!     cargo run --example region_attention_demo

use rafa::backbone::FeatureGrid;
use rafa::regions::{pool_regions, region_attention_detailed, AttentionParams};
use rafa::rng::Rng;
use rafa::tensor::Tensor;

fn main() -> rafa::Result<()> {
    let mut rng = Rng::new(3);
    let (side, channels) = (12, 8);
    let data: Vec<f64> = (0..side * side * channels)
        .map(|_| rng.uniform(0.0, 1.0))
        .collect();
    let grid = FeatureGrid::from_tensor(Tensor::new(vec![side, side, channels], data)?)?;

    let regions = pool_regions(&grid, 4)?;
    println!(
        "pooled {}x{} grid into {} regions of {} channels (grid side {})",
        side, side, regions.region_count, regions.channels, regions.grid_side
    );

    let params = AttentionParams::init(channels, &mut rng);
    let out = region_attention_detailed(&regions, &params)?;
    let m = out.mixing.to_vec();
    let r = regions.region_count;
    println!("mixing matrix (row = query region, column = candidate):");
    for i in 0..r {
        let row: Vec<String> = (0..r).map(|j| format!("{:.3}", m[i * r + j])).collect();
        let sum: f64 = m[i * r..(i + 1) * r].iter().sum();
        println!("  [{}]  row sum {:.12}", row.join(" "), sum);
    }
    println!(
        "attended descriptors shape: {:?} (layer-normalized per region)",
        out.regions.descriptors.shape()
    );
    Ok(())
}
