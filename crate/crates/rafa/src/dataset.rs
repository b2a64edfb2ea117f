//! Dataset manifests: a directory holding `manifest.csv` with header
//! `path,label` and image (or feature-file) paths relative to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Sample {
    /// Absolute path to the image or feature file.
    pub path: PathBuf,
    /// Zero-based class index.
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub samples: Vec<Sample>,
    /// One past the largest label in the manifest.
    pub classes: usize,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest = dir.join("manifest.csv");
        let text = fs::read_to_string(&manifest)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", manifest.display())))?;
        let mut lines = text.lines();
        match lines.next() {
            Some("path,label") => {}
            other => {
                return Err(Error::Manifest(format!(
                    "manifest must start with 'path,label', found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut samples = Vec::new();
        let mut classes = 0;
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            // Labels are the last field so paths may contain commas.
            let (path, label) = line.rsplit_once(',').ok_or_else(|| {
                Error::Manifest(format!("line {}: expected 'path,label'", lineno + 2))
            })?;
            let label: usize = label.trim().parse().map_err(|_| {
                Error::Manifest(format!("line {}: bad label '{label}'", lineno + 2))
            })?;
            classes = classes.max(label + 1);
            samples.push(Sample {
                path: dir.join(path),
                label,
            });
        }
        if samples.is_empty() {
            return Err(Error::Manifest(format!(
                "manifest {} lists no samples",
                manifest.display()
            )));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            samples,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Per-class sample counts, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Reject labels outside the model's class count.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        for s in &self.samples {
            if s.label >= classes {
                return Err(Error::Manifest(format!(
                    "{}: label {} out of range for {classes} classes",
                    s.path.display(),
                    s.label
                )));
            }
        }
        Ok(())
    }
}
