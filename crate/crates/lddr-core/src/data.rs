//! Dataset ingestion: pts annotation files, binary PGM/PPM images, tab
//! separated manifests, and a deterministic synthetic-face generator for
//! desk-scale end-to-end runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::tensor::Tensor;

/// One dataset entry: an image, its face box, and (optionally) ground truth.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub pts_path: Option<PathBuf>,
    pub face_box: (f64, f64, f64, f64),
    pub shape: Option<Shape>,
}

/// Parses the standard pts annotation format:
///
/// ```text
/// version: 1
/// n_points: 68
/// {
/// x y
/// ...
/// }
/// ```
pub fn parse_pts(text: &str) -> Result<Shape> {
    let mut lines = text.lines().enumerate();
    let mut n_points: Option<usize> = None;
    let mut brace_line = None;
    for (idx, line) in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "{" {
            brace_line = Some(idx);
            break;
        }
        if let Some(rest) = line.strip_prefix("version:") {
            rest.trim()
                .parse::<u32>()
                .map_err(|_| Error::parse_at(format!("bad version {:?}", rest.trim()), idx + 1))?;
        } else if let Some(rest) = line.strip_prefix("n_points:") {
            let n = rest
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::parse_at(format!("bad n_points {:?}", rest.trim()), idx + 1))?;
            n_points = Some(n);
        } else {
            return Err(Error::parse_at(format!("unexpected header line {line:?}"), idx + 1));
        }
    }
    let n = n_points.ok_or_else(|| Error::parse("missing n_points header"))?;
    brace_line.ok_or_else(|| Error::parse("missing '{' opening the coordinate block"))?;
    let mut points = Vec::with_capacity(n);
    let mut closed = false;
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "}" {
            closed = true;
            break;
        }
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .ok_or_else(|| Error::parse_at("missing x coordinate", idx + 1))?
            .parse()
            .map_err(|_| Error::parse_at(format!("non-numeric token in {line:?}"), idx + 1))?;
        let y: f64 = it
            .next()
            .ok_or_else(|| Error::parse_at("missing y coordinate", idx + 1))?
            .parse()
            .map_err(|_| Error::parse_at(format!("non-numeric token in {line:?}"), idx + 1))?;
        if it.next().is_some() {
            return Err(Error::parse_at(format!("extra tokens in {line:?}"), idx + 1));
        }
        points.push((x, y));
    }
    if !closed {
        return Err(Error::parse("missing '}' closing the coordinate block"));
    }
    if points.len() != n {
        return Err(Error::parse(format!(
            "n_points says {n} but {} coordinate lines were found",
            points.len()
        )));
    }
    Shape::new(points)
}

/// Serializes a shape in the pts format. Coordinates use the shortest
/// round-tripping decimal form, so `parse_pts` recovers them exactly.
pub fn serialize_pts(shape: &Shape) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "version: 1");
    let _ = writeln!(out, "n_points: {}", shape.len());
    let _ = writeln!(out, "{{");
    for &(x, y) in shape.points() {
        let _ = writeln!(out, "{x} {y}");
    }
    let _ = writeln!(out, "}}");
    out
}

pub fn load_pts(path: &Path) -> Result<Shape> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pts(&text)
}

pub fn save_pts(shape: &Shape, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_pts(shape)).map_err(|e| Error::io(path, e))
}

fn pnm_tokens(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    // reads the 3 header numbers after the magic, skipping whitespace and
    // '#' comments; returns (numbers, offset of first payload byte)
    let mut nums = Vec::new();
    let mut i = 2usize;
    while nums.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(Error::parse("malformed PNM header"));
        }
        let tok = std::str::from_utf8(&bytes[start..i]).unwrap();
        nums.push(tok.parse::<usize>().map_err(|_| Error::parse("bad PNM header number"))?);
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::parse("malformed PNM header"));
    }
    Ok((nums, i + 1))
}

/// Decodes a binary PGM (P5) or PPM (P6) image into a tensor with 1 or 3
/// channels, values scaled to `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 2 {
        return Err(Error::parse("file too short for a PNM header"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        other => {
            return Err(Error::parse(format!(
                "unsupported format magic {:?} (binary P5/P6 expected)",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let (nums, payload_at) = pnm_tokens(bytes)?;
    let (width, height, maxval) = (nums[0], nums[1], nums[2]);
    if width == 0 || height == 0 {
        return Err(Error::parse("zero PNM dimensions"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(format!("invalid PNM maxval {maxval}")));
    }
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let expect = width * height * channels * bytes_per;
    let payload = &bytes[payload_at..];
    if payload.len() < expect {
        return Err(Error::parse(format!(
            "truncated PNM payload: expected {expect} bytes, found {}",
            payload.len()
        )));
    }
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if bytes_per == 1 {
        payload[..expect].iter().map(|&b| b as f64 * scale).collect()
    } else {
        payload[..expect]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    Tensor::new(height, width, channels, data)
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// Encodes a 1- or 3-channel tensor with values in `[0, 1]` as binary
/// PGM/PPM with maxval 255.
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::input(format!("cannot encode {c}-channel image as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pnm(image)?).map_err(|e| Error::io(path, e))
}

/// Manifest line format: `image<TAB>pts<TAB>x<TAB>y<TAB>w<TAB>h`, paths
/// relative to the manifest file, `-` for a missing pts file.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut landmark_count: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::parse_at(
                format!("expected 6 tab-separated fields, got {}", fields.len()),
                idx + 1,
            ));
        }
        let image_path = base.join(fields[0]);
        if !image_path.is_file() {
            return Err(Error::input(format!(
                "manifest references missing image {}",
                image_path.display()
            )));
        }
        let pts_path = if fields[1] == "-" {
            None
        } else {
            let p = base.join(fields[1]);
            if !p.is_file() {
                return Err(Error::input(format!(
                    "manifest references missing pts file {}",
                    p.display()
                )));
            }
            Some(p)
        };
        let nums: Vec<f64> = fields[2..6]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse_at(format!("bad box number {f:?}"), idx + 1))
            })
            .collect::<Result<_>>()?;
        let shape = pts_path.as_deref().map(load_pts).transpose()?;
        if let Some(s) = &shape {
            match landmark_count {
                None => landmark_count = Some(s.len()),
                Some(l) if l != s.len() => {
                    return Err(Error::input(format!(
                        "inconsistent landmark counts in manifest: {l} vs {} ({})",
                        s.len(),
                        fields[1]
                    )))
                }
                _ => {}
            }
        }
        let id = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("sample_{idx}"));
        samples.push(Sample {
            id,
            image_path,
            pts_path,
            face_box: (nums[0], nums[1], nums[2], nums[3]),
            shape,
        });
    }
    Ok(samples)
}

pub fn write_manifest(entries: &[(String, String, (f64, f64, f64, f64))], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (img, pts, (x, y, w, h)) in entries {
        let _ = writeln!(out, "{img}\t{pts}\t{x}\t{y}\t{w}\t{h}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic face generator.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub image_size: usize,
    pub scale_range: (f64, f64),
    pub max_rotation_deg: f64,
    /// Relative amount of per-sample template deformation (0 = rigid faces).
    pub deform: f64,
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            count: 1,
            image_size: 160,
            scale_range: (0.9, 1.1),
            max_rotation_deg: 12.0,
            deform: 1.0,
            noise: 0.03,
        }
    }
}

/// Per-sample face geometry in a unit frame (x right, y down, origin at the
/// face center, chin around y = +1).
struct FaceParams {
    face_w: f64,
    eye_y: f64,
    eye_dx: f64,
    eye_w: f64,
    eye_h: f64,
    brow_y: f64,
    nose_y: f64,
    mouth_y: f64,
    mouth_w: f64,
    mouth_h: f64,
}

impl FaceParams {
    fn draw(rng: &mut ChaCha8Rng, deform: f64) -> Self {
        let d = |rng: &mut ChaCha8Rng, amp: f64| rng.gen_range(-amp..=amp) * deform;
        FaceParams {
            face_w: 0.95 + d(rng, 0.08),
            eye_y: -0.30 + d(rng, 0.06),
            eye_dx: 0.40 + d(rng, 0.05),
            eye_w: 0.16 + d(rng, 0.02),
            eye_h: 0.07 + d(rng, 0.015),
            brow_y: -0.52 + d(rng, 0.05),
            nose_y: 0.18 + d(rng, 0.05),
            mouth_y: 0.55 + d(rng, 0.07),
            mouth_w: 0.34 + d(rng, 0.06),
            mouth_h: 0.10 + d(rng, 0.03),
        }
    }

    /// Landmarks 1..=68 in the unit face frame.
    fn landmarks(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(68);
        // jaw 1-17: half ellipse from the left temple around the chin
        for i in 0..17 {
            let a = std::f64::consts::PI * i as f64 / 16.0;
            pts.push((-self.face_w * a.cos(), self.eye_y + 1.25 * a.sin()));
        }
        // brows 18-27: five-point arches
        for side in [-1.0, 1.0] {
            let cx = side * self.eye_dx;
            for i in 0..5 {
                let f = i as f64 / 4.0 - 0.5;
                let x = cx + f * 2.2 * self.eye_w;
                let arch = 0.04 * (1.0 - (2.0 * f).powi(2));
                pts.push((x, self.brow_y - arch));
            }
        }
        // nose bridge 28-31
        for i in 0..4 {
            let f = i as f64 / 3.0;
            pts.push((0.0, self.eye_y + f * (self.nose_y - 0.08 - self.eye_y)));
        }
        // nostril row 32-36
        for i in 0..5 {
            let f = i as f64 / 4.0 - 0.5;
            pts.push((f * 0.24, self.nose_y + 0.02 * (1.0 - (2.0 * f).powi(2))));
        }
        // eyes 37-48: same hexagon constructor for both sides
        for side in [-1.0, 1.0] {
            let cx = side * self.eye_dx;
            let (ew, eh) = (self.eye_w, self.eye_h);
            pts.push((cx - ew, self.eye_y));
            pts.push((cx - ew / 2.0, self.eye_y - eh));
            pts.push((cx + ew / 2.0, self.eye_y - eh));
            pts.push((cx + ew, self.eye_y));
            pts.push((cx + ew / 2.0, self.eye_y + eh));
            pts.push((cx - ew / 2.0, self.eye_y + eh));
        }
        // outer mouth 49-60: ellipse at 30 degree steps starting at the
        // left corner and running over the top
        for i in 0..12 {
            let a = std::f64::consts::PI * (180.0 - 30.0 * i as f64) / 180.0;
            pts.push((self.mouth_w * a.cos(), self.mouth_y - self.mouth_h * a.sin()));
        }
        // inner mouth 61-68: smaller ellipse at 45 degree steps
        for i in 0..8 {
            let a = std::f64::consts::PI * (180.0 - 45.0 * i as f64) / 180.0;
            pts.push((
                0.6 * self.mouth_w * a.cos(),
                self.mouth_y - 0.45 * self.mouth_h * a.sin(),
            ));
        }
        pts
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 { 0.0 } else { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

fn in_ellipse(p: (f64, f64), c: (f64, f64), rx: f64, ry: f64) -> bool {
    let dx = (p.0 - c.0) / rx;
    let dy = (p.1 - c.1) / ry;
    dx * dx + dy * dy <= 1.0
}

/// Renders one face image. The pixel intensity at every feature is tied to
/// the same parameters that place the landmarks, so appearance and geometry
/// are correlated by construction.
fn render_face(params: &FaceParams, to_unit: impl Fn(f64, f64) -> (f64, f64), size: usize, rng: &mut ChaCha8Rng, noise: f64) -> Tensor {
    let mut img = Tensor::zeros(size, size, 1);
    let brow_half = 1.1 * params.eye_w;
    for py in 0..size {
        for px in 0..size {
            let p = to_unit(px as f64, py as f64);
            let mut v = 0.32;
            if in_ellipse(p, (0.0, 0.12), params.face_w, 1.15) {
                v = 0.72;
                // brows
                for side in [-1.0, 1.0] {
                    let cx = side * params.eye_dx;
                    let a = (cx - brow_half, params.brow_y);
                    let b = (cx + brow_half, params.brow_y);
                    if dist_to_segment(p, a, b) < 0.035 {
                        v = 0.18;
                    }
                }
                // eyes
                for side in [-1.0, 1.0] {
                    if in_ellipse(
                        p,
                        (side * params.eye_dx, params.eye_y),
                        params.eye_w,
                        1.3 * params.eye_h,
                    ) {
                        v = 0.10;
                    }
                }
                // nose wedge: bridge line plus nostril base
                let top = (0.0, params.eye_y + 0.05);
                let base_l = (-0.12, params.nose_y);
                let base_r = (0.12, params.nose_y);
                if dist_to_segment(p, top, base_l) < 0.03
                    || dist_to_segment(p, top, base_r) < 0.03
                    || dist_to_segment(p, base_l, base_r) < 0.03
                {
                    v = 0.30;
                }
                // mouth
                if in_ellipse(p, (0.0, params.mouth_y), params.mouth_w, params.mouth_h) {
                    v = 0.16;
                }
            }
            if noise > 0.0 {
                v += rng.gen_range(-noise..=noise);
            }
            img.set(py, px, 0, v.clamp(0.0, 1.0));
        }
    }
    img
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0xd134_2543_de82_ef95))
}

/// Renders `spec.count` synthetic faces into `out_dir` and writes
/// `manifest.tsv`. Byte-deterministic per spec.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    if spec.count == 0 {
        return Err(Error::input("synth count must be >= 1"));
    }
    if spec.image_size < 32 {
        return Err(Error::input("synth image size must be >= 32"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = sample_rng(spec.seed, i);
        let params = FaceParams::draw(&mut rng, spec.deform);
        let size = spec.image_size as f64;
        let scale = size * 0.30 * rng.gen_range(spec.scale_range.0..=spec.scale_range.1);
        let theta = if spec.max_rotation_deg > 0.0 {
            rng.gen_range(-spec.max_rotation_deg..=spec.max_rotation_deg).to_radians()
        } else {
            0.0
        };
        let (sin, cos) = theta.sin_cos();
        let cx = size / 2.0 + rng.gen_range(-0.04..=0.04) * size;
        let cy = size / 2.0 + rng.gen_range(-0.04..=0.04) * size;

        let to_image = |(ux, uy): (f64, f64)| {
            (cx + scale * (cos * ux - sin * uy), cy + scale * (sin * ux + cos * uy))
        };
        let to_unit = |px: f64, py: f64| {
            let dx = (px - cx) / scale;
            let dy = (py - cy) / scale;
            (cos * dx + sin * dy, -sin * dx + cos * dy)
        };

        let landmarks: Vec<(f64, f64)> = params.landmarks().into_iter().map(to_image).collect();
        let shape = Shape::new(landmarks.clone())?;
        let image = render_face(&params, to_unit, spec.image_size, &mut rng, spec.noise);

        // face box: landmark bounding box with a 15% margin, clipped
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &landmarks {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let mx = 0.15 * (x1 - x0);
        let my = 0.15 * (y1 - y0);
        let bx0 = (x0 - mx).max(0.0);
        let by0 = (y0 - my).max(0.0);
        let bx1 = (x1 + mx).min(size);
        let by1 = (y1 + my).min(size);
        let face_box = (bx0, by0, bx1 - bx0, by1 - by0);
        for &(x, y) in &landmarks {
            if x < bx0 || x > bx1 || y < by0 || y > by1 {
                return Err(Error::Numerical(format!(
                    "synth sample {i}: landmark ({x:.1}, {y:.1}) escaped face box"
                )));
            }
        }

        let img_name = format!("face_{i:04}.pgm");
        let pts_name = format!("face_{i:04}.pts");
        save_image(&image, &out_dir.join(&img_name))?;
        save_pts(&shape, &out_dir.join(&pts_name))?;
        entries.push((img_name, pts_name, face_box));
    }
    let manifest = out_dir.join("manifest.tsv");
    write_manifest(&entries, &manifest)?;
    Ok(manifest)
}
