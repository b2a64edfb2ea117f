//! Run the central-difference gradient check over every parameter group
//! of the full model at desk scale (12x12 upsampled grid, nine 4x4
//! regions, 16 channels, 4 classes). Same machinery as `rafa gradcheck`.
//!
//!     cargo run --release --example gradcheck_full_model

use rafa::cli::gradcheck_probe;
use rafa::gradcheck::gradient_check;
use rafa::refine::cross_entropy;
use rafa::rng::Rng;

fn main() -> rafa::Result<()> {
    let (params, img) = gradcheck_probe(1, 12, 4, 16, 4)?;
    let named = params.named_parameters();
    let f = || {
        let mut rng = Rng::new(0);
        let pred = params.forward_image(&img, false, &mut rng)?;
        cross_entropy(&pred.probs, 0)
    };
    let started = std::time::Instant::now();
    let report = gradient_check(f, &named, 1e-6)?;
    for group in &report.groups {
        println!(
            "{:26} {:5} elements  max rel err {:.3e}",
            group.name, group.elements, group.max_rel_err
        );
    }
    println!(
        "overall max rel err {:.3e} across {} groups in {:.1}s",
        report.max_rel_err(),
        report.groups.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
