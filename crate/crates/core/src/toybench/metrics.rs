//! Classification and part-segmentation scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub overall_accuracy: f64,
    pub mean_class_accuracy: f64,
}

/// OA and mAcc; mAcc averages over classes that occur in `labels`.
pub fn classification_metrics(preds: &[u32], labels: &[u32]) -> Result<ClassificationMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        total[y as usize] += 1;
        if p == y {
            correct[y as usize] += 1;
        }
    }
    let hits: usize = correct.iter().sum();
    let per_class: Vec<f64> = correct
        .iter()
        .zip(&total)
        .filter(|(_, &t)| t > 0)
        .map(|(&c, &t)| c as f64 / t as f64)
        .collect();
    Ok(ClassificationMetrics {
        overall_accuracy: hits as f64 / labels.len() as f64,
        mean_class_accuracy: per_class.iter().sum::<f64>() / per_class.len() as f64,
    })
}

/// IoU per valid part of one instance, averaged; a part absent from both
/// prediction and truth scores 1.
pub fn instance_iou(preds: &[u32], labels: &[u32], valid_parts: &[u32]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            found: preds.len(),
        });
    }
    if valid_parts.is_empty() {
        return Err(Error::Empty("valid parts"));
    }
    let mut sum = 0.0;
    for &part in valid_parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &y) in preds.iter().zip(labels) {
            let (a, b) = (p == part, y == part);
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(sum / valid_parts.len() as f64)
}

/// Instance-averaged mIoU over `(preds, labels, valid_parts)` triples.
pub fn mean_instance_iou<'a, I>(instances: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [u32], &'a [u32], &'a [u32])>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, y, parts) in instances {
        sum += instance_iou(p, y, parts)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("instances"));
    }
    Ok(sum / count as f64)
}
