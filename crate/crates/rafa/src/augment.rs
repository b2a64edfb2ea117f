//! Hybrid training-time augmentation: stochastic rectangle erasing followed
//! by a global rotation / scale / random-crop pass. Inference applies a
//! deterministic center crop only.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Augmentation settings. Defaults follow the full-scale recipe
/// (256x256 inputs cropped to 224x224); the desk-scale training pipeline
/// overrides the crop size.
#[derive(Debug, Clone)]
pub struct EraseConfig {
    /// Lower bound of the per-side erased fraction.
    pub frac_lo: f64,
    /// Upper bound of the per-side erased fraction.
    pub frac_hi: f64,
    /// Fill value written to every channel of the erased rectangle and to
    /// out-of-bounds samples during rotation.
    pub fill: u8,
    /// Rotation drawn uniformly from [-rotation_deg, +rotation_deg].
    pub rotation_deg: f64,
    /// Scale factor drawn uniformly from [1 - scale_frac, 1 + scale_frac].
    pub scale_frac: f64,
    pub crop_h: usize,
    pub crop_w: usize,
    /// Probability that the erase step runs at all.
    pub apply_prob: f64,
}

impl Default for EraseConfig {
    fn default() -> Self {
        EraseConfig {
            frac_lo: 0.2,
            frac_hi: 0.7,
            fill: 127,
            rotation_deg: 25.0,
            scale_frac: 0.25,
            crop_h: 224,
            crop_w: 224,
            apply_prob: 1.0,
        }
    }
}

impl EraseConfig {
    /// Validate against the input image geometry. Run once when a pipeline
    /// is constructed so per-sample calls cannot hit config errors.
    pub fn validate(&self, img_h: usize, img_w: usize) -> Result<()> {
        if !(self.frac_lo > 0.0 && self.frac_lo <= self.frac_hi && self.frac_hi <= 1.0) {
            return Err(Error::Config(format!(
                "erase fractions must satisfy 0 < lo <= hi <= 1, got [{}, {}]",
                self.frac_lo, self.frac_hi
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!(
                "apply_prob must lie in [0, 1], got {}",
                self.apply_prob
            )));
        }
        if self.scale_frac < 0.0 || self.scale_frac >= 1.0 {
            return Err(Error::Config(format!(
                "scale_frac must lie in [0, 1), got {}",
                self.scale_frac
            )));
        }
        // The random crop must fit even at the smallest scale draw.
        let min_h = (img_h as f64 * (1.0 - self.scale_frac)).floor() as usize;
        let min_w = (img_w as f64 * (1.0 - self.scale_frac)).floor() as usize;
        if self.crop_h > min_h || self.crop_w > min_w {
            return Err(Error::Config(format!(
                "crop {}x{} larger than the smallest scaled image {}x{} (input {}x{}, scale_frac {})",
                self.crop_h, self.crop_w, min_h, min_w, img_h, img_w, self.scale_frac
            )));
        }
        Ok(())
    }
}

/// Erased rectangle, in pixels.
#[derive(Debug, Clone, Copy)]
pub struct EraseRect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl EraseRect {
    /// Erased area as a fraction of the image area.
    pub fn fraction(&self, img_h: usize, img_w: usize) -> f64 {
        (self.h * self.w) as f64 / (img_h * img_w) as f64
    }
}

/// Side length for one axis: a uniform fraction of the side, rounded to the
/// nearest pixel. The rounding is clamped back into the configured fraction
/// range so the erased-area bounds hold exactly for every draw.
fn erase_side(side: usize, lo: f64, hi: f64, rng: &mut Rng) -> usize {
    let frac = rng.uniform(lo, hi);
    let raw = (frac * side as f64).round() as usize;
    let min = ((lo * side as f64) - 1e-9).ceil().max(1.0) as usize;
    let max = (((hi * side as f64) + 1e-9).floor() as usize).max(min);
    raw.clamp(min, max)
}

/// Erase a random rectangle, returning the new image and the rectangle
/// (None when the probability gate skips the erase).
pub fn random_erase_traced(
    img: &Image,
    cfg: &EraseConfig,
    rng: &mut Rng,
) -> (Image, Option<EraseRect>) {
    if rng.next_f64() >= cfg.apply_prob {
        return (img.clone(), None);
    }
    let (h, w) = (img.height, img.width);
    let dh = erase_side(h, cfg.frac_lo, cfg.frac_hi, rng);
    let dw = erase_side(w, cfg.frac_lo, cfg.frac_hi, rng);
    // Rejection sampling keeps the origin distribution uniform over the
    // feasible positions instead of biasing erases toward the edges.
    let (sy, sx) = loop {
        let sy = rng.below(h);
        let sx = rng.below(w);
        if sy + dh <= h && sx + dw <= w {
            break (sy, sx);
        }
    };
    let mut out = img.clone();
    for y in sy..sy + dh {
        let row = (y * w + sx) * 3;
        out.pixels[row..row + dw * 3].fill(cfg.fill);
    }
    (
        out,
        Some(EraseRect {
            y: sy,
            x: sx,
            h: dh,
            w: dw,
        }),
    )
}

/// Erase a random rectangle (fill value `cfg.fill` in all channels).
pub fn random_erase(img: &Image, cfg: &EraseConfig, rng: &mut Rng) -> Image {
    random_erase_traced(img, cfg, rng).0
}

/// Rotate about the image center by `angle_deg` (bilinear resampling,
/// `fill` outside the source bounds). Output keeps the input size.
///
/// The forward map sends a source offset (dx, dy) from the center to
/// (dx cos t - dy sin t, dx sin t + dy cos t).
pub fn rotate(img: &Image, angle_deg: f64, fill: u8) -> Image {
    let t = angle_deg.to_radians();
    let (cos_t, sin_t) = (t.cos(), t.sin());
    let (h, w) = (img.height, img.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Image::new(h, w);
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            // Inverse map: rotate the destination offset by -t.
            let sx = cos_t * dx + sin_t * dy + cx;
            let sy = -sin_t * dx + cos_t * dy + cy;
            out.set(y, x, sample_bilinear(img, sy, sx, fill));
        }
    }
    out
}

/// Bilinear resize to `new_h x new_w` (half-pixel centers, edge clamp).
pub fn resize(img: &Image, new_h: usize, new_w: usize) -> Image {
    if new_h == img.height && new_w == img.width {
        return img.clone();
    }
    let (h, w) = (img.height, img.width);
    let mut out = Image::new(new_h, new_w);
    for y in 0..new_h {
        let sy = (y as f64 + 0.5) * h as f64 / new_h as f64 - 0.5;
        for x in 0..new_w {
            let sx = (x as f64 + 0.5) * w as f64 / new_w as f64 - 0.5;
            out.set(y, x, sample_clamped(img, sy, sx));
        }
    }
    out
}

/// Copy the `crop_h x crop_w` window with top-left corner (`oy`, `ox`).
pub fn crop(img: &Image, oy: usize, ox: usize, crop_h: usize, crop_w: usize) -> Result<Image> {
    if oy + crop_h > img.height || ox + crop_w > img.width {
        return Err(Error::Contract(format!(
            "crop {}x{} at ({oy}, {ox}) exceeds image {}x{}",
            crop_h, crop_w, img.height, img.width
        )));
    }
    let mut out = Image::new(crop_h, crop_w);
    for y in 0..crop_h {
        let src = ((oy + y) * img.width + ox) * 3;
        let dst = y * crop_w * 3;
        out.pixels[dst..dst + crop_w * 3].copy_from_slice(&img.pixels[src..src + crop_w * 3]);
    }
    Ok(out)
}

pub fn center_crop(img: &Image, crop_h: usize, crop_w: usize) -> Result<Image> {
    if crop_h > img.height || crop_w > img.width {
        return Err(Error::Config(format!(
            "center crop {}x{} larger than image {}x{}",
            crop_h, crop_w, img.height, img.width
        )));
    }
    crop(
        img,
        (img.height - crop_h) / 2,
        (img.width - crop_w) / 2,
        crop_h,
        crop_w,
    )
}

fn sample_bilinear(img: &Image, sy: f64, sx: f64, fill: u8) -> [u8; 3] {
    let (h, w) = (img.height as isize, img.width as isize);
    let y0 = sy.floor();
    let x0 = sx.floor();
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut acc = [0.0f64; 3];
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let wgt = wy * wx;
            if wgt == 0.0 {
                continue;
            }
            let (yy, xx) = (y0 + dy, x0 + dx);
            let px = if yy < 0 || yy >= h || xx < 0 || xx >= w {
                [fill; 3]
            } else {
                img.get(yy as usize, xx as usize)
            };
            for c in 0..3 {
                acc[c] += wgt * px[c] as f64;
            }
        }
    }
    [
        acc[0].round().clamp(0.0, 255.0) as u8,
        acc[1].round().clamp(0.0, 255.0) as u8,
        acc[2].round().clamp(0.0, 255.0) as u8,
    ]
}

fn sample_clamped(img: &Image, sy: f64, sx: f64) -> [u8; 3] {
    let (h, w) = (img.height as isize, img.width as isize);
    let y0 = sy.floor();
    let x0 = sx.floor();
    let (fy, fx) = (sy - y0, sx - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let mut acc = [0.0f64; 3];
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let yy = (y0 + dy).clamp(0, h - 1) as usize;
            let xx = (x0 + dx).clamp(0, w - 1) as usize;
            let px = img.get(yy, xx);
            for c in 0..3 {
                acc[c] += wy * wx * px[c] as f64;
            }
        }
    }
    [
        acc[0].round().clamp(0.0, 255.0) as u8,
        acc[1].round().clamp(0.0, 255.0) as u8,
        acc[2].round().clamp(0.0, 255.0) as u8,
    ]
}

/// Rotation, scaling, then a random crop.
pub fn global_transform(img: &Image, cfg: &EraseConfig, rng: &mut Rng) -> Result<Image> {
    let angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg);
    let scale = rng.uniform(1.0 - cfg.scale_frac, 1.0 + cfg.scale_frac);
    let rotated = rotate(img, angle, cfg.fill);
    let sh = (img.height as f64 * scale).round() as usize;
    let sw = (img.width as f64 * scale).round() as usize;
    let scaled = resize(&rotated, sh, sw);
    if scaled.height < cfg.crop_h || scaled.width < cfg.crop_w {
        return Err(Error::Config(format!(
            "crop {}x{} does not fit scaled image {}x{}",
            cfg.crop_h, cfg.crop_w, scaled.height, scaled.width
        )));
    }
    let oy = rng.below(scaled.height - cfg.crop_h + 1);
    let ox = rng.below(scaled.width - cfg.crop_w + 1);
    crop(&scaled, oy, ox, cfg.crop_h, cfg.crop_w)
}

/// Full augmentation pipeline. Training mode erases then applies the global
/// transform; inference mode is a deterministic center crop with no other
/// processing. The two stages draw from split sub-streams of `rng`.
pub fn augment_pipeline(
    img: &Image,
    cfg: &EraseConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<Image> {
    if !training {
        return center_crop(img, cfg.crop_h, cfg.crop_w);
    }
    let mut erase_rng = rng.split();
    let mut transform_rng = rng.split();
    let erased = random_erase(img, cfg, &mut erase_rng);
    global_transform(&erased, cfg, &mut transform_rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(h: usize, w: usize) -> Image {
        let mut img = Image::new(h, w);
        for y in 0..h {
            for x in 0..w {
                img.set(
                    y,
                    x,
                    [(y * 7 % 256) as u8, (x * 11 % 256) as u8, ((y + x) % 256) as u8],
                );
            }
        }
        img
    }

    #[test]
    fn full_erase_when_fractions_forced_to_one() {
        let img = test_image(16, 16);
        let cfg = EraseConfig {
            frac_lo: 1.0,
            frac_hi: 1.0,
            ..EraseConfig::default()
        };
        let mut rng = Rng::new(5);
        let out = random_erase(&img, &cfg, &mut rng);
        assert!(out.pixels.iter().all(|&p| p == cfg.fill));
    }

    #[test]
    fn erased_rectangle_contained_and_filled() {
        let img = test_image(37, 53);
        let cfg = EraseConfig::default();
        let mut rng = Rng::new(99);
        for _ in 0..500 {
            let (out, rect) = random_erase_traced(&img, &cfg, &mut rng);
            let r = rect.expect("apply_prob 1.0 always erases");
            assert!(r.y + r.h <= img.height && r.x + r.w <= img.width);
            for y in 0..img.height {
                for x in 0..img.width {
                    let inside = y >= r.y && y < r.y + r.h && x >= r.x && x < r.x + r.w;
                    if inside {
                        assert_eq!(out.get(y, x), [cfg.fill; 3]);
                    } else {
                        assert_eq!(out.get(y, x), img.get(y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn erased_fraction_bounds() {
        let img = test_image(256, 256);
        let cfg = EraseConfig::default();
        let mut rng = Rng::new(3);
        for _ in 0..2000 {
            let (_, rect) = random_erase_traced(&img, &cfg, &mut rng);
            let f = rect.unwrap().fraction(img.height, img.width);
            assert!((0.04..=0.49).contains(&f), "fraction {f}");
        }
    }

    #[test]
    fn rotation_zero_scale_one_full_crop_is_identity() {
        let img = test_image(20, 20);
        let rotated = rotate(&img, 0.0, 127);
        assert_eq!(rotated, img);
        let resized = resize(&img, 20, 20);
        assert_eq!(resized, img);
        let cropped = crop(&img, 0, 0, 20, 20).unwrap();
        assert_eq!(cropped, img);
    }

    #[test]
    fn rotation_90_moves_marker_per_rotation_matrix() {
        // Black 5x5 with one white pixel at (y=1, x=2); rotating by +90
        // degrees about the center (2, 2) sends offset (dx, dy) = (0, -1)
        // to (1, 0), i.e. the marker lands at (y=2, x=3).
        let mut img = Image::new(5, 5);
        img.set(1, 2, [255, 255, 255]);
        let out = rotate(&img, 90.0, 0);
        assert_eq!(out.get(2, 3), [255, 255, 255]);
        let lit = (0..5)
            .flat_map(|y| (0..5).map(move |x| (y, x)))
            .filter(|&(y, x)| out.get(y, x) != [0, 0, 0])
            .count();
        assert_eq!(lit, 1);
    }

    #[test]
    fn pipeline_output_dims_match_crop() {
        let img = test_image(64, 64);
        let cfg = EraseConfig {
            crop_h: 48,
            crop_w: 48,
            ..EraseConfig::default()
        };
        cfg.validate(64, 64).unwrap();
        let mut rng = Rng::new(17);
        for _ in 0..20 {
            let out = augment_pipeline(&img, &cfg, &mut rng, true).unwrap();
            assert_eq!((out.height, out.width), (48, 48));
        }
    }

    #[test]
    fn inference_is_deterministic_and_erase_free() {
        let img = test_image(64, 64);
        let cfg = EraseConfig {
            crop_h: 48,
            crop_w: 48,
            ..EraseConfig::default()
        };
        let mut r1 = Rng::new(1);
        let mut r2 = Rng::new(999);
        let a = augment_pipeline(&img, &cfg, &mut r1, false).unwrap();
        let b = augment_pipeline(&img, &cfg, &mut r2, false).unwrap();
        assert_eq!(a, b);
        let c = center_crop(&img, 48, 48).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn training_same_seed_identical() {
        let img = test_image(64, 64);
        let cfg = EraseConfig {
            crop_h: 48,
            crop_w: 48,
            ..EraseConfig::default()
        };
        let a = augment_pipeline(&img, &cfg, &mut Rng::new(7), true).unwrap();
        let b = augment_pipeline(&img, &cfg, &mut Rng::new(7), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_prob_zero_equals_global_transform_alone() {
        let img = test_image(64, 64);
        let cfg = EraseConfig {
            crop_h: 48,
            crop_w: 48,
            apply_prob: 0.0,
            ..EraseConfig::default()
        };
        let mut rng = Rng::new(13);
        let out = augment_pipeline(&img, &cfg, &mut rng, true).unwrap();

        let mut rng2 = Rng::new(13);
        let _erase_stream = rng2.split();
        let mut transform_rng = rng2.split();
        let expect = global_transform(&img, &cfg, &mut transform_rng).unwrap();
        assert_eq!(out, expect);
    }

    #[test]
    fn crop_too_large_is_config_error() {
        let cfg = EraseConfig {
            crop_h: 64,
            crop_w: 64,
            ..EraseConfig::default()
        };
        assert!(matches!(cfg.validate(64, 64), Err(Error::Config(_))));
        let ok = EraseConfig {
            crop_h: 48,
            crop_w: 48,
            ..EraseConfig::default()
        };
        assert!(ok.validate(64, 64).is_ok());
    }
}
