//! Render one synthetic image per texture family and write the original,
//! the erased version, and the fully augmented version as PPM files.
//!
//!     cargo run --example augment_preview

use rafa::augment::{augment_pipeline, random_erase_traced, EraseConfig};
use rafa::rng::Rng;
use rafa::synth::synth_image;

fn main() -> rafa::Result<()> {
    let out = std::env::temp_dir().join("rafa-augment-preview");
    std::fs::create_dir_all(&out)?;
    let cfg = EraseConfig {
        crop_h: 48,
        crop_w: 48,
        ..EraseConfig::default()
    };
    let mut rng = Rng::new(42);
    for class in 0..4 {
        let img = synth_image(class, 64, 22.0, &mut rng);
        img.write_ppm(&out.join(format!("class{class}_original.ppm")))?;

        let (erased, rect) = random_erase_traced(&img, &cfg, &mut rng);
        erased.write_ppm(&out.join(format!("class{class}_erased.ppm")))?;
        let r = rect.expect("apply_prob 1.0");
        println!(
            "class {class}: erased {}x{} at ({}, {}) = {:.1}% of the image",
            r.h,
            r.w,
            r.y,
            r.x,
            100.0 * r.fraction(img.height, img.width)
        );

        let augmented = augment_pipeline(&img, &cfg, &mut rng, true)?;
        augmented.write_ppm(&out.join(format!("class{class}_augmented.ppm")))?;
    }
    println!("wrote previews to {}", out.display());
    Ok(())
}
