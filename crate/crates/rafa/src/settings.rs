//! Flat key=value settings shared by the CLI subcommands. Defaults follow
//! the standard training recipe (lr 0.008 halved by 10 at epoch 50, batch
//! 8, dropout 0.25, nine regions, pyramid levels 1,2,3) at desk-scale
//! geometry, so a bare `train` run uses the full recipe. A config file
//! holds one `key=value` per line; `#` starts a comment. Unknown keys are
//! rejected by name.

use std::fs;
use std::path::Path;

use crate::augment::EraseConfig;
use crate::backbone::{BackboneConfig, BackboneKind};
use crate::error::{Error, Result};
use crate::ffn::{BinAgg, PyramidConfig};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Clone)]
pub struct Settings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub momentum: f64,
    pub seed: u64,
    pub variant: Variant,

    pub backbone: BackboneKind,
    /// (out_channels, stride) per stage, written `8x2,16x2,32x2`.
    pub stages: Vec<(usize, usize)>,
    pub input_h: usize,
    pub input_w: usize,
    pub upsample_target: usize,
    pub region_size: usize,
    pub pyramid_levels: Vec<usize>,
    pub bin_agg: BinAgg,
    pub dropout: f64,
    pub normalize_logits: bool,
    pub feature_channels: Option<usize>,

    pub erase_lo: f64,
    pub erase_hi: f64,
    pub erase_fill: u8,
    pub erase_prob: f64,
    pub rotation_deg: f64,
    pub scale_frac: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            epochs: 100,
            batch_size: 8,
            lr_initial: 0.008,
            lr_drop_epoch: 50,
            lr_drop_factor: 10.0,
            momentum: 0.9,
            seed: 1,
            variant: Variant::Full,
            backbone: BackboneKind::TinyCnn,
            stages: vec![(8, 2), (16, 2), (32, 2)],
            input_h: 48,
            input_w: 48,
            upsample_target: 12,
            region_size: 4,
            pyramid_levels: vec![1, 2, 3],
            bin_agg: BinAgg::Mean,
            dropout: 0.25,
            normalize_logits: false,
            feature_channels: None,
            erase_lo: 0.2,
            erase_hi: 0.7,
            erase_fill: 127,
            erase_prob: 1.0,
            rotation_deg: 25.0,
            scale_frac: 0.25,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for key '{key}'")))
}

fn parse_stages(value: &str) -> Result<Vec<(usize, usize)>> {
    value
        .split(',')
        .map(|part| {
            let (c, s) = part
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::Config(format!("stage '{part}' must look like 8x2")))?;
            Ok((parse("stages", c)?, parse("stages", s)?))
        })
        .collect()
}

fn parse_levels(value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|p| parse("pyramid_levels", p)).collect()
}

impl Settings {
    /// Apply one `key=value` assignment. Unknown keys are errors that name
    /// the offending key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr_initial" => self.lr_initial = parse(key, value)?,
            "lr_drop_epoch" => self.lr_drop_epoch = parse(key, value)?,
            "lr_drop_factor" => self.lr_drop_factor = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "backbone" => self.backbone = value.trim().parse()?,
            "stages" => self.stages = parse_stages(value)?,
            "input_h" => self.input_h = parse(key, value)?,
            "input_w" => self.input_w = parse(key, value)?,
            "upsample_target" => self.upsample_target = parse(key, value)?,
            "region_size" => self.region_size = parse(key, value)?,
            "pyramid_levels" => self.pyramid_levels = parse_levels(value)?,
            "bin_agg" => self.bin_agg = value.trim().parse()?,
            "dropout" => self.dropout = parse(key, value)?,
            "normalize_logits" => self.normalize_logits = parse(key, value)?,
            "feature_channels" => self.feature_channels = Some(parse(key, value)?),
            "erase_lo" => self.erase_lo = parse(key, value)?,
            "erase_hi" => self.erase_hi = parse(key, value)?,
            "erase_fill" => self.erase_fill = parse(key, value)?,
            "erase_prob" => self.erase_prob = parse(key, value)?,
            "rotation_deg" => self.rotation_deg = parse(key, value)?,
            "scale_frac" => self.scale_frac = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Apply a `key=value` pair given as one string.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{assignment}' must look like key=value"))
        })?;
        self.apply(key.trim(), value)
    }

    /// Merge assignments from a config file.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_assignment(line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        }
        Ok(())
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                kind: self.backbone,
                conv_stages: self.stages.clone(),
                input_h: self.input_h,
                input_w: self.input_w,
                upsample_target: self.upsample_target,
            },
            region_size: self.region_size,
            pyramid: PyramidConfig {
                levels: self.pyramid_levels.clone(),
                aggregation: self.bin_agg,
            },
            classes,
            dropout_rate: self.dropout,
            variant: self.variant,
            feature_channels: self.feature_channels,
            normalize_logits: self.normalize_logits,
        }
    }

    pub fn train_config(&self, verbose: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_initial: self.lr_initial,
            lr_drop_epoch: self.lr_drop_epoch,
            lr_drop_factor: self.lr_drop_factor,
            momentum: self.momentum,
            seed: self.seed,
            verbose,
        }
    }

    pub fn erase_config(&self) -> EraseConfig {
        EraseConfig {
            frac_lo: self.erase_lo,
            frac_hi: self.erase_hi,
            fill: self.erase_fill,
            rotation_deg: self.rotation_deg,
            scale_frac: self.scale_frac,
            crop_h: self.input_h,
            crop_w: self.input_w,
            apply_prob: self.erase_prob,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let s = Settings::default();
        assert_eq!(s.lr_initial, 0.008);
        assert_eq!(s.lr_drop_epoch, 50);
        assert_eq!(s.batch_size, 8);
        assert_eq!(s.dropout, 0.25);
        assert_eq!(s.pyramid_levels, vec![1, 2, 3]);
        // Desk geometry keeps the nine-region layout.
        assert_eq!(s.upsample_target / s.region_size, 3);
    }

    #[test]
    fn unknown_key_named_in_error() {
        let mut s = Settings::default();
        let err = s.apply_assignment("learning_rate=0.1").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn file_and_override_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# comment\nepochs=30\nstages=4x2,8x2\npyramid_levels=1,3\n").unwrap();
        let mut s = Settings::default();
        s.load_file(&path).unwrap();
        assert_eq!(s.epochs, 30);
        assert_eq!(s.stages, vec![(4, 2), (8, 2)]);
        assert_eq!(s.pyramid_levels, vec![1, 3]);
        s.apply_assignment("epochs=5").unwrap();
        assert_eq!(s.epochs, 5);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut s = Settings::default();
        assert!(s.apply_assignment("epochs=many").is_err());
        assert!(s.apply_assignment("stages=8-2").is_err());
        assert!(s.apply_assignment("variant=huge").is_err());
        assert!(s.apply_assignment("no_equals").is_err());
    }
}
