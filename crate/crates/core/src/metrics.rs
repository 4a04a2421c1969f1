//! Evaluation metrics.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use libm::{fabs, sqrt};

use crate::error::{Error, Result};
use crate::types::VideoSequence;

/// Mean absolute RSD error of one video, in minutes.
pub fn video_mae(pred: &[f64], video: &VideoSequence) -> Result<f64> {
    if pred.len() != video.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction length",
            expected: video.len(),
            found: pred.len(),
        });
    }
    let sum: f64 = pred
        .iter()
        .enumerate()
        .map(|(t, &y)| fabs(y - video.remaining_min(t)))
        .sum();
    Ok(sum / video.len() as f64)
}

/// Macro-averaged MAE in minutes: per-video mean first, then the mean over
/// videos.
pub fn mae_minutes(predictions: &[Vec<f64>], videos: &[&VideoSequence]) -> Result<f64> {
    if predictions.len() != videos.len() {
        return Err(Error::DimensionMismatch {
            what: "number of prediction sequences",
            expected: videos.len(),
            found: predictions.len(),
        });
    }
    if videos.is_empty() {
        return Err(Error::EmptyInput("videos for MAE"));
    }
    let mut sum = 0.0;
    for (p, v) in predictions.iter().zip(videos) {
        sum += video_mae(p, v)?;
    }
    Ok(sum / videos.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMapping {
    /// Predicted label to reference label.
    pub mapping: BTreeMap<usize, usize>,
    pub accuracy: f64,
}

/// Many-to-one mapping of predicted labels onto reference labels that
/// maximizes framewise agreement. Each predicted label independently maps to
/// its majority reference label (ties to the smaller reference id), which is
/// the exact optimum for many-to-one assignment.
pub fn hungarian_accuracy(pred: &[usize], reference: &[usize]) -> Result<LabelMapping> {
    if pred.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            what: "reference labels",
            expected: pred.len(),
            found: reference.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("label sequences"));
    }
    let n_ref = reference.iter().max().map_or(0, |&m| m + 1);
    let mut table: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&p, &r) in pred.iter().zip(reference) {
        table.entry(p).or_insert_with(|| vec![0; n_ref])[r] += 1;
    }
    let mut mapping = BTreeMap::new();
    let mut hits = 0;
    for (p, counts) in table {
        let mut best = 0;
        for (r, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = r;
            }
        }
        hits += counts[best];
        mapping.insert(p, best);
    }
    Ok(LabelMapping {
        mapping,
        accuracy: hits as f64 / pred.len() as f64,
    })
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, sqrt(var))
}
