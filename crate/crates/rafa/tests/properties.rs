//! Property tests for the invariants that hold over whole input families.

use proptest::prelude::*;

use rafa::augment::{random_erase_traced, EraseConfig};
use rafa::backbone::{tiny_cnn_forward, ConvStageParams};
use rafa::checkpoint;
use rafa::image::Image;
use rafa::metrics::topk_hit;
use rafa::rng::Rng;
use rafa::tensor::{avgpool1d, bilinear_upsample, layer_norm, Padding, Tensor};

proptest! {
    /// Every softmax slice along the trailing axis sums to 1 within 1e-12.
    #[test]
    fn softmax_slices_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(-40.0, 40.0)).collect();
        let y = Tensor::new(vec![rows, cols], data).unwrap().softmax_last().to_vec();
        for r in 0..rows {
            let sum: f64 = y[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
            prop_assert!(y[r * cols..(r + 1) * cols].iter().all(|&v| v > 0.0));
        }
    }

    /// Adding one constant to every element of a vector leaves the
    /// layer-norm output unchanged (up to epsilon effects below 1e-9).
    #[test]
    fn layer_norm_shift_invariance(
        len in 2usize..16,
        shift in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..len).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let gain = Tensor::new(vec![len], vec![1.0; len]).unwrap();
        let bias = Tensor::new(vec![len], vec![0.0; len]).unwrap();
        let base = layer_norm(&Tensor::new(vec![len], data.clone()).unwrap(), &gain, &bias, 1e-5)
            .unwrap()
            .to_vec();
        let shifted_in: Vec<f64> = data.iter().map(|v| v + shift).collect();
        let shifted = layer_norm(&Tensor::new(vec![len], shifted_in).unwrap(), &gain, &bias, 1e-5)
            .unwrap()
            .to_vec();
        for (a, b) in base.iter().zip(shifted) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// The erased rectangle is always contained in the image, every erased
    /// pixel carries the fill value, and untouched pixels survive exactly.
    #[test]
    fn erase_contained_and_exact(
        h in 8usize..64,
        w in 8usize..64,
        seed in any::<u64>(),
    ) {
        let mut img = Image::new(h, w);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            *p = (i % 253) as u8;
        }
        let cfg = EraseConfig::default();
        let mut rng = Rng::new(seed);
        let (out, rect) = random_erase_traced(&img, &cfg, &mut rng);
        let r = rect.unwrap();
        prop_assert!(r.y + r.h <= h && r.x + r.w <= w);
        for y in 0..h {
            for x in 0..w {
                let inside = y >= r.y && y < r.y + r.h && x >= r.x && x < r.x + r.w;
                if inside {
                    prop_assert_eq!(out.get(y, x), [cfg.fill; 3]);
                } else {
                    prop_assert_eq!(out.get(y, x), img.get(y, x));
                }
            }
        }
    }

    /// Bilinear upsampling is a convex blend: per-channel values stay
    /// inside the source min/max, and constants stay constant.
    #[test]
    fn upsample_preserves_bounds(
        side in 2usize..6,
        channels in 1usize..4,
        extra in 0usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..side * side * channels).map(|_| rng.uniform(-9.0, 9.0)).collect();
        let x = Tensor::new(vec![side, side, channels], data.clone()).unwrap();
        let target = side + extra;
        let up = bilinear_upsample(&x, target).unwrap().to_vec();
        for ch in 0..channels {
            let chan: Vec<f64> = data.iter().skip(ch).step_by(channels).cloned().collect();
            let lo = chan.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = chan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in up.iter().skip(ch).step_by(channels) {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    /// Global average pooling equals the per-channel arithmetic mean.
    #[test]
    fn global_avgpool_is_mean(
        len in 1usize..10,
        channels in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..len * channels).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let x = Tensor::new(vec![len, channels], data.clone()).unwrap();
        let pooled = avgpool1d(&x, len, len, Padding::None).unwrap().to_vec();
        for ch in 0..channels {
            let mean: f64 =
                (0..len).map(|r| data[r * channels + ch]).sum::<f64>() / len as f64;
            prop_assert!((pooled[ch] - mean).abs() < 1e-12);
        }
    }

    /// Top-k membership is monotone in k, and k = classes always hits.
    #[test]
    fn topk_monotone(
        classes in 2usize..10,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let probs: Vec<f64> = (0..classes).map(|_| rng.next_f64()).collect();
        let label = rng.below(classes);
        let mut prev = false;
        for k in 1..=classes {
            let hit = topk_hit(&probs, label, k);
            prop_assert!(!prev || hit, "hit at k-1 but not at k={k}");
            prev = hit;
        }
        prop_assert!(topk_hit(&probs, label, classes));
    }

    /// Checkpoint encode/decode restores names, shapes, and exact bits.
    #[test]
    fn checkpoint_round_trip(
        dims in proptest::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let n: usize = dims.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1e6, 1e6)).collect();
        let t = Tensor::new(dims.clone(), data.clone()).unwrap();
        let bytes = checkpoint::encode(&[("t".to_string(), t)]);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].shape, &dims);
        for (a, b) in back[0].data.iter().zip(&data) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// The backbone output shape is a pure function of the stage list and
    /// input side.
    #[test]
    fn tiny_cnn_shape_is_config_function(
        base in 1usize..5,
        c1 in 1usize..6,
        c2 in 1usize..6,
        seed in any::<u64>(),
    ) {
        let side = base * 4;
        let mut rng = Rng::new(seed);
        let stages = vec![
            ConvStageParams::init(3, c1, 2, &mut rng),
            ConvStageParams::init(c1, c2, 2, &mut rng),
        ];
        let mut img = Image::new(side, side);
        for p in img.pixels.iter_mut() {
            *p = rng.below(256) as u8;
        }
        let grid = tiny_cnn_forward(&img, &stages).unwrap();
        prop_assert_eq!((grid.height, grid.width, grid.channels), (side / 4, side / 4, c2));
    }
}
