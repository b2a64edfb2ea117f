//! The assembled classifier: backbone, region attention, feed-forward
//! paths, weighted refinement, and classifier, with an ablation ladder of
//! variants that switch the stages on one by one.

use std::path::Path;

use crate::backbone::{
    tiny_cnn_forward, upsample, BackboneConfig, BackboneKind, ConvStageParams, FeatureGrid,
};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::ffn::{fuse_paths, path_a, path_b, FfnParams, PyramidConfig};
use crate::image::Image;
use crate::refine::{attention_weights, classify, context_gate, Prediction, RefineParams};
use crate::regions::{pool_regions, region_attention, AttentionParams};
use crate::rng::Rng;
use crate::tensor::{avgpool1d, Padding, Tensor};

/// Ablation ladder. Each step adds one stage on top of the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Backbone, global average pooling, classifier.
    Baseline,
    /// Adds region pooling and region attention.
    RoiAttention,
    /// Adds both feed-forward paths and their fusion.
    RoiFfn,
    /// Adds attention-weighted refinement and context gating.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::RoiAttention,
        Variant::RoiFfn,
        Variant::Full,
    ];

    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn uses_ffn(self) -> bool {
        matches!(self, Variant::RoiFfn | Variant::Full)
    }

    pub fn uses_gate(self) -> bool {
        matches!(self, Variant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RoiAttention => "roi_attention",
            Variant::RoiFfn => "roi_ffn",
            Variant::Full => "full",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "roi_attention" | "roi-attention" => Ok(Variant::RoiAttention),
            "roi_ffn" | "roi-ffn" => Ok(Variant::RoiFfn),
            "full" => Ok(Variant::Full),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Complete model geometry and behavior switches.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Region side length; the upsampled grid is cut into
    /// (side / region_size)^2 regions.
    pub region_size: usize,
    pub pyramid: PyramidConfig,
    pub classes: usize,
    pub dropout_rate: f64,
    pub variant: Variant,
    /// Channel count when features come from files instead of the CNN.
    pub feature_channels: Option<usize>,
    /// Ablation switch: extra parameterless layer norm on the logits.
    pub normalize_logits: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: 48x48 crops through three stride-2 stages to a
    /// 6x6x32 grid, upsampled to 12x12 and cut into nine 4x4 regions.
    pub fn desk_default(classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                kind: BackboneKind::TinyCnn,
                conv_stages: vec![(8, 2), (16, 2), (32, 2)],
                input_h: 48,
                input_w: 48,
                upsample_target: 12,
            },
            region_size: 4,
            pyramid: PyramidConfig::default(),
            classes,
            dropout_rate: 0.25,
            variant: Variant::Full,
            feature_channels: None,
            normalize_logits: false,
        }
    }

    pub fn channels(&self) -> Result<usize> {
        match self.backbone.kind {
            BackboneKind::TinyCnn => Ok(self.backbone.output_channels()),
            BackboneKind::FileFeatures => self.feature_channels.ok_or_else(|| {
                Error::Config("file-features backbone needs feature_channels".to_string())
            }),
        }
    }

    pub fn region_grid_side(&self) -> usize {
        self.backbone.upsample_target / self.region_size
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate(self.region_size)?;
        if self.variant.uses_ffn() {
            self.pyramid.validate(self.region_grid_side())?;
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.classes == 0 {
            return Err(Error::Config("need at least one class".to_string()));
        }
        let c = self.channels()?;
        if c == 0 {
            return Err(Error::Config("backbone produces zero channels".to_string()));
        }
        Ok(())
    }
}

/// All learnable weights of a model instance. Only the groups the variant
/// actually uses are allocated, so the optimizer and checkpoints see
/// exactly the active parameters.
#[derive(Debug, Clone)]
pub struct RafaParams {
    pub config: ModelConfig,
    pub backbone: Vec<ConvStageParams>,
    pub attention: Option<AttentionParams>,
    pub ffn: Option<FfnParams>,
    pub refine: RefineParams,
}

impl RafaParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<RafaParams> {
        config.validate()?;
        let mut rng = Rng::derive(seed, &[0x9a7a]);
        let mut backbone = Vec::new();
        if config.backbone.kind == BackboneKind::TinyCnn {
            let mut cin = 3;
            for &(cout, stride) in &config.backbone.conv_stages {
                backbone.push(ConvStageParams::init(cin, cout, stride, &mut rng));
                cin = cout;
            }
        }
        let c = config.channels()?;
        let attention = config
            .variant
            .uses_attention()
            .then(|| AttentionParams::init(c, &mut rng));
        let ffn = config.variant.uses_ffn().then(|| FfnParams::init(c, &mut rng));
        let mut refine = RefineParams::init(
            c,
            config.classes,
            config.dropout_rate,
            config.variant.uses_gate(),
            &mut rng,
        );
        refine.normalize_logits = config.normalize_logits;
        Ok(RafaParams {
            config,
            backbone,
            attention,
            ffn,
            refine,
        })
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, stage) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{i}.kernel"), stage.kernel.clone()));
            out.push((format!("backbone.{i}.bias"), stage.bias.clone()));
        }
        if let Some(att) = &self.attention {
            out.extend(att.named("attention"));
        }
        if let Some(ffn) = &self.ffn {
            out.extend(ffn.named("ffn"));
        }
        out.extend(self.refine.named("refine"));
        out
    }

    /// Forward pass from an already-cropped image.
    pub fn forward_image(&self, img: &Image, training: bool, rng: &mut Rng) -> Result<Prediction> {
        if self.config.backbone.kind != BackboneKind::TinyCnn {
            return Err(Error::Config(
                "this model reads feature files; images need the tiny-cnn backbone".to_string(),
            ));
        }
        if img.height != self.config.backbone.input_h || img.width != self.config.backbone.input_w
        {
            return Err(Error::Contract(format!(
                "input image {}x{} does not match configured {}x{}",
                img.height, img.width, self.config.backbone.input_h, self.config.backbone.input_w
            )));
        }
        let grid = tiny_cnn_forward(img, &self.backbone)?;
        self.forward_grid(&grid, training, rng)
    }

    /// Forward pass from a base feature grid.
    pub fn forward_grid(
        &self,
        grid: &FeatureGrid,
        training: bool,
        rng: &mut Rng,
    ) -> Result<Prediction> {
        match self.config.variant {
            Variant::Baseline => {
                let pooled = global_avg_grid(grid)?;
                classify(&pooled, &self.refine, training, rng)
            }
            Variant::RoiAttention => {
                let attended = self.attend(grid)?;
                let pooled = global_avg_rows(&attended)?;
                classify(&pooled, &self.refine, training, rng)
            }
            Variant::RoiFfn => {
                let fused = self.fused_paths(grid)?.0;
                classify(&fused, &self.refine, training, rng)
            }
            Variant::Full => {
                let (fused, seq) = self.fused_paths(grid)?;
                let gate = self
                    .refine
                    .gate
                    .as_ref()
                    .expect("full variant carries gate parameters");
                let weighted = attention_weights(&seq, gate)?;
                let gated = context_gate(&fused, &weighted)?;
                classify(&gated, &self.refine, training, rng)
            }
        }
    }

    /// Upsample, pool regions, apply region attention; the shared front of
    /// every non-baseline variant. Returns the normalized `R x c` sequence.
    fn attend(&self, grid: &FeatureGrid) -> Result<Tensor> {
        let up = upsample(grid, self.config.backbone.upsample_target)?;
        let regions = pool_regions(&up, self.config.region_size)?;
        let att = self
            .attention
            .as_ref()
            .expect("variant with attention carries attention parameters");
        Ok(region_attention(&regions, att)?.descriptors)
    }

    /// Both feed-forward paths and their fusion; also returns the path-B
    /// sequence for the weighted refinement.
    fn fused_paths(&self, grid: &FeatureGrid) -> Result<(Tensor, Tensor)> {
        let attended = self.attend(grid)?;
        let regions = crate::regions::RegionSequence::from_descriptors(
            attended,
            self.config.region_grid_side(),
        )?;
        let ffn = self
            .ffn
            .as_ref()
            .expect("variant with ffn carries ffn parameters");
        let s_hat = path_a(&regions, &self.config.pyramid, ffn)?;
        let (seq, t_hat) = path_b(&regions, ffn)?;
        let fused = fuse_paths(&s_hat, &t_hat, ffn)?;
        Ok((fused, seq))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.named_parameters())
    }

    /// Load weights from a checkpoint into a fresh instance of `config`.
    /// Every tensor must match the model's parameter set by name and shape.
    pub fn load(config: ModelConfig, path: &Path) -> Result<RafaParams> {
        let params = RafaParams::init(config, 0)?;
        let stored = checkpoint::load(path)?;
        let expected = params.named_parameters();
        if let Some(extra) = stored
            .iter()
            .find(|s| !expected.iter().any(|(name, _)| name == &s.name))
        {
            return Err(Error::Format(format!(
                "checkpoint tensor '{}' does not belong to this model",
                extra.name
            )));
        }
        for (name, tensor) in &expected {
            let found = stored
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor '{name}'")))?;
            if found.shape != tensor.shape() {
                return Err(Error::Format(format!(
                    "tensor '{name}': checkpoint shape {:?} does not match model {:?}",
                    found.shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(&found.data);
        }
        Ok(params)
    }
}

fn global_avg_grid(grid: &FeatureGrid) -> Result<Tensor> {
    let cells = grid.height * grid.width;
    let flat = grid.values.reshape(vec![cells, grid.channels])?;
    global_avg_rows(&flat)
}

fn global_avg_rows(x: &Tensor) -> Result<Tensor> {
    let shape = x.shape();
    avgpool1d(x, shape[0], shape[0], Padding::None)?.reshape(vec![shape[1]])
}
