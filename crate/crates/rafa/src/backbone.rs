//! Base feature extraction: a small trainable CNN over the input image (or
//! a precomputed feature map loaded from file), followed by bilinear
//! upsampling to the side length used for region pooling.

use std::path::Path;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;
use crate::tensor::{bilinear_upsample, conv2d, Tensor};

/// Spatial feature map, `height x width x channels`.
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub values: Tensor,
}

impl FeatureGrid {
    pub fn from_tensor(values: Tensor) -> Result<FeatureGrid> {
        let shape = values.shape();
        if shape.len() != 3 {
            return Err(Error::Format(format!(
                "feature grid must be rank 3, got rank {}",
                shape.len()
            )));
        }
        Ok(FeatureGrid {
            height: shape[0],
            width: shape[1],
            channels: shape[2],
            values,
        })
    }
}

/// Which feature source feeds the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    /// Small trainable stack of strided 3x3 convolutions.
    TinyCnn,
    /// Feature grids precomputed elsewhere and loaded from tensor files.
    FileFeatures,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<BackboneKind> {
        match s {
            "tiny-cnn" | "tiny_cnn" => Ok(BackboneKind::TinyCnn),
            "file-features" | "file_features" => Ok(BackboneKind::FileFeatures),
            other => Err(Error::Config(format!("unknown backbone kind '{other}'"))),
        }
    }
}

/// Backbone geometry.
#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// (out_channels, stride) per 3x3 convolution stage.
    pub conv_stages: Vec<(usize, usize)>,
    pub input_h: usize,
    pub input_w: usize,
    /// Side length the feature map is upsampled to before region pooling.
    pub upsample_target: usize,
}

impl BackboneConfig {
    /// Grid side produced by the stride chain.
    pub fn output_side(&self) -> Result<usize> {
        if self.input_h != self.input_w {
            return Err(Error::Config(format!(
                "backbone input must be square, got {}x{}",
                self.input_h, self.input_w
            )));
        }
        let mut side = self.input_h;
        for (i, &(_, stride)) in self.conv_stages.iter().enumerate() {
            if stride == 0 || side % stride != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: stride {stride} does not divide side {side} (input {}x{})",
                    self.input_h, self.input_w
                )));
            }
            side /= stride;
        }
        Ok(side)
    }

    pub fn output_channels(&self) -> usize {
        self.conv_stages.last().map(|&(c, _)| c).unwrap_or(0)
    }

    pub fn validate(&self, region_size: usize) -> Result<()> {
        match self.kind {
            BackboneKind::TinyCnn => {
                if self.conv_stages.is_empty() {
                    return Err(Error::Config("backbone needs at least one stage".to_string()));
                }
                let side = self.output_side()?;
                if self.upsample_target < side {
                    return Err(Error::Config(format!(
                        "upsample target {} below backbone output side {side}",
                        self.upsample_target
                    )));
                }
            }
            BackboneKind::FileFeatures => {}
        }
        if region_size == 0 || self.upsample_target % region_size != 0 {
            return Err(Error::Config(format!(
                "upsampled side {} not divisible by region size {region_size}",
                self.upsample_target
            )));
        }
        Ok(())
    }
}

/// Learnable weights of one convolution stage.
#[derive(Debug, Clone)]
pub struct ConvStageParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl ConvStageParams {
    pub fn init(in_channels: usize, out_channels: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = 9 * in_channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let kernel: Vec<f64> = (0..9 * in_channels * out_channels)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        ConvStageParams {
            kernel: Tensor::param(vec![3, 3, in_channels, out_channels], kernel).unwrap(),
            bias: Tensor::param(vec![out_channels], vec![0.0; out_channels]).unwrap(),
            stride,
        }
    }
}

/// Convert 8-bit RGB pixels to an `h x w x 3` tensor scaled to [0, 1].
pub fn image_to_tensor(img: &Image) -> Tensor {
    let data: Vec<f64> = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Tensor::new(vec![img.height, img.width, 3], data).expect("pixel buffer matches dims")
}

/// Run the tiny CNN: a stack of (3x3 conv, stride, relu) stages over the
/// image scaled to [0, 1].
pub fn tiny_cnn_forward(img: &Image, stages: &[ConvStageParams]) -> Result<FeatureGrid> {
    let mut x = image_to_tensor(img);
    for stage in stages {
        x = conv2d(&x, &stage.kernel, &stage.bias, stage.stride)?.relu();
    }
    FeatureGrid::from_tensor(x)
}

/// Upsample a feature grid to `target x target` with bilinear
/// interpolation (half-pixel centers, edge clamp).
pub fn upsample(grid: &FeatureGrid, target: usize) -> Result<FeatureGrid> {
    FeatureGrid::from_tensor(bilinear_upsample(&grid.values, target)?)
}

/// Load a feature grid stored as a single rank-3 tensor in the checkpoint
/// tensor format. No gradient tracking.
pub fn load_feature_grid(path: &Path) -> Result<FeatureGrid> {
    let tensors = checkpoint::load(path)?;
    if tensors.len() != 1 {
        return Err(Error::Format(format!(
            "feature file must hold exactly one tensor, found {}",
            tensors.len()
        )));
    }
    let t = &tensors[0];
    if t.shape.len() != 3 {
        return Err(Error::Format(format!(
            "feature tensor '{}' must be rank 3, got rank {}",
            t.name,
            t.shape.len()
        )));
    }
    FeatureGrid::from_tensor(Tensor::new(t.shape.clone(), t.data.clone())?)
}

/// Write a feature grid as a single-tensor checkpoint file.
pub fn save_feature_grid(path: &Path, grid: &FeatureGrid) -> Result<()> {
    checkpoint::save(path, &[("features".to_string(), grid.values.detach())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::gradient_check;

    #[test]
    fn stride_chain_arithmetic() {
        let cfg = BackboneConfig {
            kind: BackboneKind::TinyCnn,
            conv_stages: vec![(8, 2), (16, 2), (32, 2)],
            input_h: 64,
            input_w: 64,
            upsample_target: 12,
        };
        assert_eq!(cfg.output_side().unwrap(), 8);
        let mut rng = Rng::new(1);
        let mut stages = Vec::new();
        let mut cin = 3;
        for &(cout, stride) in &cfg.conv_stages {
            stages.push(ConvStageParams::init(cin, cout, stride, &mut rng));
            cin = cout;
        }
        let img = Image::filled(64, 64, 90);
        let grid = tiny_cnn_forward(&img, &stages).unwrap();
        assert_eq!((grid.height, grid.width, grid.channels), (8, 8, 32));
    }

    #[test]
    fn incompatible_stride_chain_is_config_error() {
        let cfg = BackboneConfig {
            kind: BackboneKind::TinyCnn,
            conv_stages: vec![(8, 2), (16, 3)],
            input_h: 64,
            input_w: 64,
            upsample_target: 12,
        };
        assert!(matches!(cfg.output_side(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_grid() {
        let mut rng = Rng::new(2);
        let stages = vec![
            ConvStageParams::init(3, 4, 2, &mut rng),
            ConvStageParams::init(4, 8, 2, &mut rng),
        ];
        let img = Image::new(16, 16);
        let grid = tiny_cnn_forward(&img, &stages).unwrap();
        assert!(grid.values.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_stage_gradient_check() {
        let mut rng = Rng::new(3);
        let stages = vec![
            ConvStageParams::init(3, 4, 2, &mut rng),
            ConvStageParams::init(4, 6, 2, &mut rng),
        ];
        let mut img = Image::new(8, 8);
        for p in img.pixels.iter_mut() {
            *p = (rng.below(256)) as u8;
        }
        let weights = Tensor::new(
            vec![2 * 2 * 6],
            (0..24).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect(),
        )
        .unwrap();
        let f = || {
            let grid = tiny_cnn_forward(&img, &stages)?;
            Ok(grid.values.reshape(vec![24])?.mul(&weights)?.sum())
        };
        let params: Vec<(String, Tensor)> = stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                vec![
                    (format!("stage{i}.kernel"), s.kernel.clone()),
                    (format!("stage{i}.bias"), s.bias.clone()),
                ]
            })
            .collect();
        let report = gradient_check(f, &params, 1e-6).unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn feature_grid_round_trip_and_rank_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.rafa");
        let values = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f64 * 0.5).collect()).unwrap();
        let grid = FeatureGrid::from_tensor(values).unwrap();
        save_feature_grid(&path, &grid).unwrap();
        let back = load_feature_grid(&path).unwrap();
        assert_eq!(back.values.to_vec(), grid.values.to_vec());
        assert_eq!((back.height, back.width, back.channels), (2, 2, 3));

        let rank2 = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        checkpoint::save(&path, &[("features".to_string(), rank2)]).unwrap();
        assert!(matches!(load_feature_grid(&path), Err(Error::Format(_))));
    }
}
