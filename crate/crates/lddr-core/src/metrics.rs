//! Normalized mean error and cumulative error distribution data.

use crate::error::{Error, Result};
use crate::shape::Shape;

/// Error normalizer protocols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NmeProtocol {
    /// All 68 points, normalized by the inter-pupil distance (each eye
    /// center is the mean of its six eye landmarks).
    Interpupil68,
    /// The 49-point inner subset (jaw contour and the two inner mouth
    /// corners excluded), same normalizer.
    Interpupil49,
    /// Three points (left eye, right eye, nose base), normalized by the
    /// distance from the nose to the midpoint of the eye centers.
    EyeNose3,
    /// Normalized by face size: the geometric mean of the face-box width
    /// and height.
    FaceSize { width: f64, height: f64 },
}

impl NmeProtocol {
    pub fn name(&self) -> &'static str {
        match self {
            NmeProtocol::Interpupil68 => "interpupil68",
            NmeProtocol::Interpupil49 => "interpupil49",
            NmeProtocol::EyeNose3 => "eye_nose_3pt",
            NmeProtocol::FaceSize { .. } => "facesize",
        }
    }
}

/// 1-based indices of the six landmarks of each eye in the 68-point markup.
const LEFT_EYE: std::ops::RangeInclusive<usize> = 37..=42;
const RIGHT_EYE: std::ops::RangeInclusive<usize> = 43..=48;

/// 1-based indices of the 49-point inner subset: points 18-68 minus the
/// inner mouth corners 61 and 65. Kept as one table so the convention can
/// be swapped in a single place.
pub fn inner_49_indices() -> Vec<usize> {
    (18..=68).filter(|i| *i != 61 && *i != 65).collect()
}

fn centroid(shape: &Shape, indices_1based: impl Iterator<Item = usize>) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0usize;
    for i in indices_1based {
        let (x, y) = shape.points()[i - 1];
        sx += x;
        sy += y;
        n += 1;
    }
    (sx / n as f64, sy / n as f64)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn interpupil_distance(gt: &Shape) -> f64 {
    dist(centroid(gt, LEFT_EYE), centroid(gt, RIGHT_EYE))
}

/// Mean landmark error of `pred` against `gt`, divided by the protocol's
/// normalizer. The normalizer always comes from the ground truth.
pub fn nme(pred: &Shape, gt: &Shape, protocol: NmeProtocol) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::input(format!(
            "landmark count mismatch: pred {} vs gt {}",
            pred.len(),
            gt.len()
        )));
    }
    let (indices, normalizer): (Vec<usize>, f64) = match protocol {
        NmeProtocol::Interpupil68 => {
            if gt.len() != 68 {
                return Err(Error::input(format!(
                    "interpupil68 protocol requires 68 points, got {}",
                    gt.len()
                )));
            }
            ((1..=68).collect(), interpupil_distance(gt))
        }
        NmeProtocol::Interpupil49 => {
            if gt.len() != 68 {
                return Err(Error::input(format!(
                    "interpupil49 protocol requires 68 points, got {}",
                    gt.len()
                )));
            }
            (inner_49_indices(), interpupil_distance(gt))
        }
        NmeProtocol::EyeNose3 => {
            if gt.len() != 3 {
                return Err(Error::input(format!(
                    "eye_nose_3pt protocol requires 3 points, got {}",
                    gt.len()
                )));
            }
            let p = gt.points();
            let mid = ((p[0].0 + p[1].0) / 2.0, (p[0].1 + p[1].1) / 2.0);
            ((1..=3).collect(), dist(p[2], mid))
        }
        NmeProtocol::FaceSize { width, height } => {
            if width <= 0.0 || height <= 0.0 {
                return Err(Error::Metric(format!(
                    "degenerate face box {width} x {height}"
                )));
            }
            ((1..=gt.len()).collect(), (width * height).sqrt())
        }
    };
    if normalizer <= 0.0 || !normalizer.is_finite() {
        return Err(Error::Metric(format!(
            "degenerate {} normalizer {normalizer}",
            protocol.name()
        )));
    }
    let sum: f64 = indices
        .iter()
        .map(|&i| dist(pred.points()[i - 1], gt.points()[i - 1]))
        .sum();
    Ok(sum / indices.len() as f64 / normalizer)
}

/// Per-image errors of a prediction set.
///
/// Degenerate-normalizer images are excluded from the mean but counted.
#[derive(Debug, Clone)]
pub struct NmeResult {
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub protocol: &'static str,
    pub degenerate: usize,
}

pub fn evaluate_set(
    pairs: &[(Shape, Shape)],
    protocol: NmeProtocol,
) -> Result<NmeResult> {
    if pairs.is_empty() {
        return Err(Error::input("no prediction/ground-truth pairs to evaluate"));
    }
    let mut per_image = Vec::with_capacity(pairs.len());
    let mut degenerate = 0usize;
    for (pred, gt) in pairs {
        match nme(pred, gt, protocol) {
            Ok(e) => per_image.push(e),
            Err(Error::Metric(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if per_image.is_empty() {
        return Err(Error::Metric("all images had degenerate normalizers".into()));
    }
    let mean = per_image.iter().sum::<f64>() / per_image.len() as f64;
    Ok(NmeResult { per_image, mean, protocol: protocol.name(), degenerate })
}

/// Fraction of images with error <= threshold, per threshold.
pub fn ced_curve(errors: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::input("ced_curve over empty error list"));
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::input("ced thresholds must be sorted ascending"));
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let count = errors.iter().filter(|&&e| e <= t).count();
            (t, count as f64 / n)
        })
        .collect())
}

/// Evenly spaced thresholds from 0 to `max`, inclusive.
pub fn linspace_thresholds(max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| max * i as f64 / steps as f64).collect()
}
