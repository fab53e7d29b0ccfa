//! Landmark shapes, the canonical face frame, patch extraction under the
//! coarse-to-fine schedule, augmentation, and shape-indexed feature
//! assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{Descriptor, DESCRIPTOR_LEN};
use crate::tensor::Tensor;

/// Side length of the canonical face frame in pixels.
pub const CANONICAL_SIZE: usize = 224;

/// Ordered list of L 2-D landmark coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    points: Vec<(f64, f64)>,
}

impl Shape {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("shape must have at least one landmark"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::input("shape contains non-finite coordinates"));
        }
        Ok(Shape { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Flattened `[x1, y1, x2, y2, ...]` vector of length 2L.
    pub fn to_vector(&self) -> Vec<f64> {
        self.points.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.is_empty() || v.len() % 2 != 0 {
            return Err(Error::input(format!(
                "shape vector length {} is not a positive even number",
                v.len()
            )));
        }
        Shape::new(v.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    /// Mean Euclidean distance per landmark to another shape of the same L.
    pub fn mean_point_distance(&self, other: &Shape) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::input(format!(
                "landmark count mismatch: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let sum: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(&(ax, ay), &(bx, by))| ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt())
            .sum();
        Ok(sum / self.len() as f64)
    }
}

/// Similarity map between a source face box and the canonical square.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFrame {
    pub box_x: f64,
    pub box_y: f64,
    pub box_w: f64,
    pub box_h: f64,
}

impl FaceFrame {
    pub fn new(box_x: f64, box_y: f64, box_w: f64, box_h: f64) -> Result<Self> {
        if box_w <= 0.0 || box_h <= 0.0 || !box_w.is_finite() || !box_h.is_finite() {
            return Err(Error::input(format!(
                "degenerate face box: {box_w} x {box_h}"
            )));
        }
        Ok(FaceFrame { box_x, box_y, box_w, box_h })
    }

    pub fn to_canonical_point(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let s = CANONICAL_SIZE as f64;
        ((x - self.box_x) * s / self.box_w, (y - self.box_y) * s / self.box_h)
    }

    pub fn from_canonical_point(&self, (u, v): (f64, f64)) -> (f64, f64) {
        let s = CANONICAL_SIZE as f64;
        (self.box_x + u * self.box_w / s, self.box_y + v * self.box_h / s)
    }
}

pub fn to_canonical(shape: &Shape, frame: &FaceFrame) -> Shape {
    Shape {
        points: shape.points().iter().map(|&p| frame.to_canonical_point(p)).collect(),
    }
}

pub fn from_canonical(shape: &Shape, frame: &FaceFrame) -> Shape {
    Shape {
        points: shape.points().iter().map(|&p| frame.from_canonical_point(p)).collect(),
    }
}

/// Coarse-to-fine patch sizes, one per cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSchedule {
    sizes: Vec<usize>,
}

impl PatchSchedule {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::input("patch schedule must be non-empty"));
        }
        if sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::input(format!(
                "patch schedule must be strictly decreasing, got {sizes:?}"
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::input("patch sizes must be positive"));
        }
        Ok(PatchSchedule { sizes })
    }

    pub fn standard() -> Self {
        PatchSchedule { sizes: vec![92, 68, 42, 21] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn stages(&self) -> usize {
        self.sizes.len()
    }
}

/// Patch size for a 1-based stage index.
pub fn patch_size_for_stage(schedule: &PatchSchedule, stage: usize) -> Result<usize> {
    if stage == 0 || stage > self_len(schedule) {
        return Err(Error::input(format!(
            "stage {stage} out of range 1..={}",
            self_len(schedule)
        )));
    }
    Ok(schedule.sizes[stage - 1])
}

fn self_len(schedule: &PatchSchedule) -> usize {
    schedule.sizes.len()
}

/// Coordinate-wise arithmetic mean of shapes with uniform L.
pub fn mean_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = shapes.first().ok_or_else(|| Error::input("mean_shape of empty list"))?;
    let l = first.len();
    if shapes.iter().any(|s| s.len() != l) {
        return Err(Error::input("mean_shape over mixed landmark counts"));
    }
    let mut acc = vec![(0.0f64, 0.0f64); l];
    for s in shapes {
        for (a, &(x, y)) in acc.iter_mut().zip(s.points()) {
            a.0 += x;
            a.1 += y;
        }
    }
    let n = shapes.len() as f64;
    Shape::new(acc.into_iter().map(|(x, y)| (x / n, y / n)).collect())
}

/// Extracts a `size x size` patch centered (with floor offset) on `center`.
/// Out-of-image pixels are filled by edge replication.
pub fn extract_patch(image: &Tensor, center: (f64, f64), size: usize) -> Result<Tensor> {
    if size == 0 {
        return Err(Error::input("patch size must be positive"));
    }
    if size > image.height() || size > image.width() {
        return Err(Error::input(format!(
            "patch size {size} exceeds image {}x{}",
            image.height(),
            image.width()
        )));
    }
    if !center.0.is_finite() || !center.1.is_finite() {
        return Err(Error::input("patch center is not finite"));
    }
    let half = (size as isize - 1) / 2;
    let cx = center.0.floor() as isize;
    let cy = center.1.floor() as isize;
    let x0 = cx - half;
    let y0 = cy - half;
    let ch = image.channels();
    let mut out = Tensor::zeros(size, size, ch);
    for dy in 0..size {
        let sy = (y0 + dy as isize).clamp(0, image.height() as isize - 1) as usize;
        for dx in 0..size {
            let sx = (x0 + dx as isize).clamp(0, image.width() as isize - 1) as usize;
            for c in 0..ch {
                out.set(dy, dx, c, image.get(sy, sx, c));
            }
        }
    }
    Ok(out)
}

/// Concatenated per-landmark descriptors, landmark-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeIndexedFeature {
    values: Vec<f64>,
}

impl ShapeIndexedFeature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn landmark_block(&self, l: usize) -> &[f64] {
        &self.values[l * DESCRIPTOR_LEN..(l + 1) * DESCRIPTOR_LEN]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Landmark-major concatenation of exactly `l` descriptors.
pub fn assemble_features(descriptors: &[Descriptor], l: usize) -> Result<ShapeIndexedFeature> {
    if descriptors.len() != l {
        return Err(Error::input(format!(
            "expected {l} descriptors, got {}",
            descriptors.len()
        )));
    }
    let mut values = Vec::with_capacity(l * DESCRIPTOR_LEN);
    for d in descriptors {
        values.extend_from_slice(d.values());
    }
    Ok(ShapeIndexedFeature { values })
}

/// Left-right correspondence for the 68-point markup, 0-based. The table is
/// an involution; midline points map to themselves.
pub fn flip_index_map(l: usize) -> Result<Vec<usize>> {
    if l != 68 {
        return Err(Error::config(format!(
            "no flip index map registered for L = {l}"
        )));
    }
    // 1-based symmetric pairs of the Multi-PIE 68-point markup.
    const PAIRS: &[(usize, usize)] = &[
        // jaw
        (1, 17), (2, 16), (3, 15), (4, 14), (5, 13), (6, 12), (7, 11), (8, 10),
        // brows
        (18, 27), (19, 26), (20, 25), (21, 24), (22, 23),
        // nostril row
        (32, 36), (33, 35),
        // eyes
        (37, 46), (38, 45), (39, 44), (40, 43), (41, 48), (42, 47),
        // outer mouth
        (49, 55), (50, 54), (51, 53), (56, 60), (57, 59),
        // inner mouth
        (61, 65), (62, 64), (66, 68),
    ];
    let mut map: Vec<usize> = (0..68).collect();
    for &(a, b) in PAIRS {
        map[a - 1] = b - 1;
        map[b - 1] = a - 1;
    }
    Ok(map)
}

/// Mirrors an image about its vertical center line.
pub fn flip_image(image: &Tensor) -> Tensor {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut out = Tensor::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out.set(y, x, c, image.get(y, w - 1 - x, c));
            }
        }
    }
    out
}

/// Mirrors a shape about pixel column `(width - 1) / 2` and reorders the
/// landmarks with the flip index map.
pub fn flip_shape(shape: &Shape, width: usize) -> Result<Shape> {
    let map = flip_index_map(shape.len())?;
    let axis = (width - 1) as f64;
    let mut points = vec![(0.0, 0.0); shape.len()];
    for (i, &(x, y)) in shape.points().iter().enumerate() {
        points[map[i]] = (axis - x, y);
    }
    Shape::new(points)
}

fn bilinear(image: &Tensor, x: f64, y: f64, c: usize) -> f64 {
    let xc = x.clamp(0.0, image.width() as f64 - 1.0);
    let yc = y.clamp(0.0, image.height() as f64 - 1.0);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    let a = image.get(y0, x0, c);
    let b = image.get(y0, x1, c);
    let d = image.get(y1, x0, c);
    let e = image.get(y1, x1, c);
    a * (1.0 - fx) * (1.0 - fy) + b * fx * (1.0 - fy) + d * (1.0 - fx) * fy + e * fx * fy
}

/// Warps the source image into the canonical frame with bilinear sampling
/// (edge-clamped outside the source).
pub fn warp_to_canonical(image: &Tensor, frame: &FaceFrame) -> Tensor {
    let s = CANONICAL_SIZE;
    let ch = image.channels();
    let mut out = Tensor::zeros(s, s, ch);
    for v in 0..s {
        for u in 0..s {
            let (sx, sy) = frame.from_canonical_point((u as f64, v as f64));
            for c in 0..ch {
                out.set(v, u, c, bilinear(image, sx, sy, c));
            }
        }
    }
    out
}

/// Rotates an image by `theta_deg` about the pixel-grid center, bilinear,
/// edge-clamped. `theta = 0` is an exact copy.
pub fn rotate_image(image: &Tensor, theta_deg: f64) -> Tensor {
    if theta_deg == 0.0 {
        return image.clone();
    }
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let cx = (w - 1) as f64 / 2.0;
    let cy = (h - 1) as f64 / 2.0;
    let t = theta_deg.to_radians();
    let (sin, cos) = t.sin_cos();
    let mut out = Tensor::zeros(h, w, ch);
    for y in 0..h {
        for x in 0..w {
            // inverse rotation of the output grid point
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for c in 0..ch {
                out.set(y, x, c, bilinear(image, sx, sy, c));
            }
        }
    }
    out
}

/// Rotates a shape by `theta_deg` about the same pixel-grid center used by
/// [`rotate_image`].
pub fn rotate_shape(shape: &Shape, theta_deg: f64, width: usize, height: usize) -> Shape {
    let cx = (width - 1) as f64 / 2.0;
    let cy = (height - 1) as f64 / 2.0;
    let t = theta_deg.to_radians();
    let (sin, cos) = t.sin_cos();
    Shape {
        points: shape
            .points()
            .iter()
            .map(|&(x, y)| {
                let dx = x - cx;
                let dy = y - cy;
                (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub seed: u64,
    pub max_rotation_deg: f64,
    /// Rotated copies generated per base sample (original and flipped).
    pub rotations: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { seed: 0, max_rotation_deg: 15.0, rotations: 1 }
    }
}

fn sample_rng(seed: u64, sample_index: usize) -> ChaCha8Rng {
    // index-derived sub-seed so parallel order cannot affect output
    ChaCha8Rng::seed_from_u64(seed ^ (sample_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Expands one canonical-frame sample into original + flipped + rotated
/// copies of each. Deterministic per (seed, sample index).
pub fn augment(
    image: &Tensor,
    shape: &Shape,
    cfg: &AugmentConfig,
    sample_index: usize,
) -> Result<Vec<(Tensor, Shape)>> {
    let mut rng = sample_rng(cfg.seed, sample_index);
    let flipped_img = flip_image(image);
    let flipped_shape = flip_shape(shape, image.width())?;
    let mut out = Vec::with_capacity(2 * (1 + cfg.rotations));
    out.push((image.clone(), shape.clone()));
    out.push((flipped_img.clone(), flipped_shape.clone()));
    for _ in 0..cfg.rotations {
        for (img, shp) in [(image, shape), (&flipped_img, &flipped_shape)] {
            let theta = if cfg.max_rotation_deg == 0.0 {
                0.0
            } else {
                rng.gen_range(-cfg.max_rotation_deg..cfg.max_rotation_deg)
            };
            out.push((
                rotate_image(img, theta),
                rotate_shape(shp, theta, img.width(), img.height()),
            ));
        }
    }
    Ok(out)
}

/// Training-time initial shape: the mean shape under a small random
/// similarity (scale and translation), seeded per sample.
pub fn perturb_initial_shape(
    mean: &Shape,
    seed: u64,
    sample_index: usize,
    scale_range: (f64, f64),
    max_translate_frac: f64,
) -> Shape {
    let mut rng = sample_rng(seed.wrapping_add(0x5eed), sample_index);
    let s = rng.gen_range(scale_range.0..=scale_range.1);
    let max_t = max_translate_frac * CANONICAL_SIZE as f64;
    let tx = rng.gen_range(-max_t..=max_t);
    let ty = rng.gen_range(-max_t..=max_t);
    let c = CANONICAL_SIZE as f64 / 2.0;
    Shape {
        points: mean
            .points()
            .iter()
            .map(|&(x, y)| (c + s * (x - c) + tx, c + s * (y - c) + ty))
            .collect(),
    }
}
