//! Evaluation: top-k accuracy, macro precision/recall/F1 from the confusion
//! matrix, and the class-imbalance ratio.

use serde::Serialize;

use crate::augment::center_crop;
use crate::backbone::{load_feature_grid, BackboneKind};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::RafaParams;
use crate::rng::Rng;
use crate::tensor::no_grad;

/// Evaluation record for one dataset pass.
#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub samples: usize,
    pub top1: f64,
    pub top5: f64,
    /// Macro-averaged over classes, zero-division counted as 0.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Smallest class count over largest.
    pub cir: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
}

/// min(counts) / max(counts); all counts must be positive.
pub fn compute_cir(counts: &[usize]) -> Result<f64> {
    if counts.is_empty() || counts.iter().any(|&c| c == 0) {
        return Err(Error::Contract(
            "class-imbalance ratio needs positive per-class counts".to_string(),
        ));
    }
    let min = *counts.iter().min().unwrap() as f64;
    let max = *counts.iter().max().unwrap() as f64;
    Ok(min / max)
}

/// True when the label ranks inside the top k by probability, breaking
/// ties toward lower class indices.
pub fn topk_hit(probs: &[f64], label: usize, k: usize) -> bool {
    let p = probs[label];
    let rank = probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count();
    rank < k
}

/// Build the full metric record from per-sample probability vectors.
pub fn metrics_from_predictions(
    predictions: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    topk: usize,
) -> Result<Metrics> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "need matching non-empty predictions and labels, got {} and {}",
            predictions.len(),
            labels.len()
        )));
    }
    let n = predictions.len();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut top1_hits = 0usize;
    let mut topk_hits = 0usize;
    for (probs, &label) in predictions.iter().zip(labels) {
        if label >= classes {
            return Err(Error::Contract(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let pred = crate::refine::argmax(probs);
        confusion[label][pred] += 1;
        if pred == label {
            top1_hits += 1;
        }
        if topk_hit(probs, label, topk) {
            topk_hits += 1;
        }
    }

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;
    for k in 0..classes {
        let tp = confusion[k][k] as f64;
        let predicted: f64 = (0..classes).map(|j| confusion[j][k] as f64).sum();
        let actual: f64 = (0..classes).map(|j| confusion[k][j] as f64).sum();
        let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let r = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision_sum += p;
        recall_sum += r;
        f1_sum += f1;
    }

    let counts: Vec<usize> = (0..classes)
        .map(|k| confusion[k].iter().sum::<usize>())
        .collect();
    // CIR is defined over classes that appear; evaluation sets may miss
    // some classes entirely, which would make the ratio meaningless.
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    let cir = compute_cir(&present)?;

    Ok(Metrics {
        samples: n,
        top1: top1_hits as f64 / n as f64,
        top5: topk_hits as f64 / n as f64,
        precision: precision_sum / classes as f64,
        recall: recall_sum / classes as f64,
        f1: f1_sum / classes as f64,
        cir,
        confusion,
    })
}

/// Run the model over a dataset in inference mode (center crop, no
/// augmentation, no dropout) and compute all metrics.
pub fn evaluate(params: &RafaParams, dataset: &Dataset) -> Result<Metrics> {
    evaluate_topk(params, dataset, 5)
}

pub fn evaluate_topk(params: &RafaParams, dataset: &Dataset, topk: usize) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Contract("evaluation dataset is empty".to_string()));
    }
    dataset.check_labels(params.config.classes)?;
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    let mut rng = Rng::new(0);
    no_grad(|| -> Result<()> {
        for sample in &dataset.samples {
            let pred = match params.config.backbone.kind {
                BackboneKind::TinyCnn => {
                    let img = Image::read_ppm(&sample.path)?;
                    let cropped = center_crop(
                        &img,
                        params.config.backbone.input_h,
                        params.config.backbone.input_w,
                    )?;
                    params.forward_image(&cropped, false, &mut rng)?
                }
                BackboneKind::FileFeatures => {
                    let grid = load_feature_grid(&sample.path)?;
                    params.forward_grid(&grid, false, &mut rng)?
                }
            };
            predictions.push(pred.probs.to_vec());
            labels.push(sample.label);
        }
        Ok(())
    })?;
    metrics_from_predictions(&predictions, &labels, params.config.classes, topk)
}

/// Render the metric table the CLI prints after evaluation.
pub fn format_table(m: &Metrics) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12} {:>10}\n", "metric", "value"));
    out.push_str(&format!("{:<12} {:>10}\n", "samples", m.samples));
    out.push_str(&format!("{:<12} {:>10.4}\n", "top-1", m.top1));
    out.push_str(&format!("{:<12} {:>10.4}\n", "top-5", m.top5));
    out.push_str(&format!("{:<12} {:>10.4}\n", "precision", m.precision));
    out.push_str(&format!("{:<12} {:>10.4}\n", "recall", m.recall));
    out.push_str(&format!("{:<12} {:>10.4}\n", "f1", m.f1));
    out.push_str(&format!("{:<12} {:>10.4}\n", "cir", m.cir));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(k: usize, classes: usize, hi: f64) -> Vec<f64> {
        let lo = (1.0 - hi) / (classes - 1) as f64;
        (0..classes).map(|j| if j == k { hi } else { lo }).collect()
    }

    #[test]
    fn perfect_predictor_on_balanced_set() {
        let preds: Vec<Vec<f64>> = (0..10).map(|i| one_hot(i % 2, 2, 0.9)).collect();
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let m = metrics_from_predictions(&preds, &labels, 2, 5).unwrap();
        assert_eq!(m.top1, 1.0);
        assert_eq!(m.top5, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
        assert_eq!(m.cir, 1.0);
        assert_eq!(m.confusion[0][0] + m.confusion[1][1], 10);
        assert_eq!(m.confusion[0][1] + m.confusion[1][0], 0);
    }

    #[test]
    fn uniform_random_predictor_topk_expectation() {
        let classes = 20;
        let n = 2000;
        let mut rng = Rng::new(40);
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let logits: Vec<f64> = (0..classes).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            preds.push(exps.iter().map(|e| e / s).collect());
            labels.push(rng.below(classes));
        }
        let m = metrics_from_predictions(&preds, &labels, classes, 5).unwrap();
        assert!((m.top5 - 5.0 / classes as f64).abs() < 0.05, "top5 {}", m.top5);
        assert!(m.top1 <= m.top5);
    }

    #[test]
    fn confusion_sums_to_sample_count() {
        let mut rng = Rng::new(41);
        let classes = 6;
        let n = 300;
        let preds: Vec<Vec<f64>> = (0..n).map(|_| one_hot(rng.below(classes), classes, 0.8)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let m = metrics_from_predictions(&preds, &labels, classes, 5).unwrap();
        let total: usize = m.confusion.iter().flatten().sum();
        assert_eq!(total, n);
        assert!(m.top1 <= m.top5);
    }

    #[test]
    fn cir_cases() {
        assert_eq!(compute_cir(&[7, 7, 7]).unwrap(), 1.0);
        assert_eq!(compute_cir(&[10, 100]).unwrap(), 0.1);
        assert_eq!(compute_cir(&[25, 250, 100]).unwrap(), 0.1);
        assert!(compute_cir(&[3, 0]).is_err());
    }

    #[test]
    fn macro_f1_uses_per_class_definition_not_the_shortcut() {
        // Skewed two-class outcome: class 0 precise but low-recall, class 1
        // the other way round. The mean of per-class F1 differs from the
        // harmonic mean of macro precision and macro recall.
        let preds = vec![
            one_hot(0, 2, 0.9), // true 0, predicted 0
            one_hot(1, 2, 0.9), // true 0, predicted 1
            one_hot(1, 2, 0.9), // true 0, predicted 1
            one_hot(1, 2, 0.9), // true 1, predicted 1
        ];
        let labels = vec![0, 0, 0, 1];
        let m = metrics_from_predictions(&preds, &labels, 2, 5).unwrap();
        // Class 0: P = 1, R = 1/3, F1 = 1/2. Class 1: P = 1/3, R = 1,
        // F1 = 1/2. Macro F1 = 1/2.
        assert!((m.f1 - 0.5).abs() < 1e-12);
        let shortcut = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        assert!((m.f1 - shortcut).abs() > 0.1, "shortcut {shortcut} vs f1 {}", m.f1);
    }

    #[test]
    fn topk_tie_breaking_prefers_lower_index() {
        let probs = vec![0.3, 0.3, 0.3, 0.1];
        assert!(topk_hit(&probs, 0, 1));
        assert!(!topk_hit(&probs, 1, 1));
        assert!(topk_hit(&probs, 1, 2));
        assert!(!topk_hit(&probs, 3, 3));
        assert!(topk_hit(&probs, 3, 4));
    }
}
