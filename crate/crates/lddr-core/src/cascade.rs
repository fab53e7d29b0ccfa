//! Stage-wise training of the linear shape regressors and iterative shape
//! prediction, plus the trained-model container and its serialization.
//!
//! Each stage solves `min_W sum_i ||t_i - W phi_i||^2 + lambda ||W||^2` in
//! closed form via regularized normal equations. For the high-dimensional
//! shape-indexed features (17K+ for 68 landmarks) the dual N x N system is
//! solved instead of the D x D one; the two routes give the identical
//! minimizer.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{Engine, DESCRIPTOR_LEN};
use crate::shape::{
    assemble_features, augment, extract_patch, from_canonical, mean_shape, perturb_initial_shape,
    to_canonical, warp_to_canonical, AugmentConfig, FaceFrame, PatchSchedule, Shape,
    CANONICAL_SIZE,
};
use crate::tensor::Tensor;

/// Linear projection of one cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRegressor {
    /// `(2L) x D` projection; D includes the appended constant bias column.
    pub w: DMatrix<f64>,
    pub lambda: f64,
}

/// General matrix product with optional transposes, backed by a blocked
/// GEMM. nalgebra stores column-major.
fn gemm(a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool) -> DMatrix<f64> {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { (a.nrows(), a.ncols()) };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { (b.nrows(), b.ncols()) };
    assert_eq!(k, kb, "gemm inner dimensions");
    let mut c = DMatrix::<f64>::zeros(m, n);
    let (rsa, csa) = if ta { (a.nrows() as isize, 1) } else { (1, a.nrows() as isize) };
    let (rsb, csb) = if tb { (b.nrows() as isize, 1) } else { (1, b.nrows() as isize) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_slice().as_ptr(),
            rsa,
            csa,
            b.as_slice().as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_slice().as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

fn solve_spd(mut a: DMatrix<f64>, rhs: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    // fall back to a pivoted factorization
    let lu = a.full_piv_lu();
    match lu.solve(rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::numerical(
            "normal system is singular; increase lambda (> 0)".to_string(),
        )),
    }
}

/// Solves the regularized least-squares objective for one stage.
///
/// `features` is N x D (one row per sample), `targets` is N x 2L. Picks the
/// primal D x D or dual N x N normal system, whichever is smaller.
pub fn train_stage(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
) -> Result<StageRegressor> {
    let n = features.nrows();
    let d = features.ncols();
    if n == 0 || d == 0 {
        return Err(Error::input("train_stage needs at least one sample and one feature"));
    }
    if targets.nrows() != n {
        return Err(Error::input(format!(
            "feature/target row mismatch: {n} vs {}",
            targets.nrows()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::input(format!("lambda must be >= 0, got {lambda}")));
    }
    let w = if d <= n {
        // primal: (Phi^T Phi + lambda I) W^T = Phi^T T
        let a = gemm(features, true, features, false);
        let rhs = gemm(features, true, targets, false);
        solve_spd(a, &rhs, lambda)?.transpose()
    } else {
        // dual: W = T^T (Phi Phi^T + lambda I)^-1 Phi
        let g = gemm(features, false, features, true);
        let y = solve_spd(g, targets, lambda)?;
        gemm(&y, true, features, false)
    };
    Ok(StageRegressor { w, lambda })
}

/// Ridge objective value, for monotonicity checks.
pub fn ridge_objective(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let pred = gemm(features, false, w, true);
    let resid = targets - pred;
    resid.iter().map(|v| v * v).sum::<f64>() + lambda * w.iter().map(|v| v * v).sum::<f64>()
}

/// How the per-stage regularization strength is chosen.
#[derive(Debug, Clone)]
pub enum LambdaChoice {
    Fixed(f64),
    CrossValidate { folds: usize, grid: Vec<f64>, seed: u64 },
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::CrossValidate {
            folds: 5,
            grid: vec![1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
            seed: 0,
        }
    }
}

/// K-fold cross-validation over a lambda grid, all in the dual so only the
/// N x N Gram matrix is touched. Returns (best lambda, mean CV error per
/// grid entry).
pub fn choose_lambda_cv(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n = features.nrows();
    if folds < 2 || folds > n {
        return Err(Error::input(format!("cv folds {folds} out of range for {n} samples")));
    }
    if grid.is_empty() {
        return Err(Error::input("empty lambda grid"));
    }
    let gram = gemm(features, false, features, true);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let mut scores = vec![0.0f64; grid.len()];
    for fold in 0..folds {
        let val: Vec<usize> =
            order.iter().copied().skip(fold).step_by(folds).collect();
        let tr: Vec<usize> =
            order.iter().copied().filter(|i| !val.contains(i)).collect();
        let g_tt = gram.select_rows(tr.iter()).select_columns(tr.iter());
        let g_tv = gram.select_rows(tr.iter()).select_columns(val.iter());
        let t_t = targets.select_rows(tr.iter());
        let t_v = targets.select_rows(val.iter());
        for (gi, &lambda) in grid.iter().enumerate() {
            let y = solve_spd(g_tt.clone(), &t_t, lambda)?;
            // predictions for the held-out fold: (2L x Nv) = Y^T G_tv
            let pred = gemm(&y, true, &g_tv, false);
            let err: f64 = (pred.transpose() - &t_v).iter().map(|v| v * v).sum();
            scores[gi] += err;
        }
    }
    for s in scores.iter_mut() {
        *s /= n as f64;
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok((grid[best], scores))
}

/// Serializable trained artifact: mean shape, patch schedule, stage stride
/// table, weight-set hash, and the T stage regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub landmarks: usize,
    pub schedule: PatchSchedule,
    pub mean_shape: Shape,
    /// (conv1, max1, conv2, max2) strides per stage, from the engine the
    /// model was trained with.
    pub stage_strides: Vec<[usize; 4]>,
    pub weights_hash: String,
    pub regressors: Vec<StageRegressor>,
}

impl CascadeModel {
    pub fn stages(&self) -> usize {
        self.regressors.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.landmarks * DESCRIPTOR_LEN + 1
    }
}

fn engine_stage_strides(engine: &Engine, stage_index: usize) -> Result<[usize; 4]> {
    use crate::net::LayerKind;
    let stage = engine
        .stages()
        .iter()
        .find(|s| s.stage_index == stage_index)
        .ok_or_else(|| Error::config(format!("engine has no stage {stage_index}")))?;
    let mut out = [0usize; 4];
    for (slot, name) in ["conv1", "max1", "conv2", "max2"].iter().enumerate() {
        let layer = stage
            .layers
            .iter()
            .find(|l| &l.name == name)
            .ok_or_else(|| Error::config(format!("stage {stage_index} has no layer {name}")))?;
        out[slot] = match layer.kind {
            LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => stride,
            _ => return Err(Error::config(format!("layer {name} is not strided"))),
        };
    }
    Ok(out)
}

/// Checks that `engine` carries the exact weight set and per-stage stride
/// tables the model was trained with.
pub fn verify_model_engine(model: &CascadeModel, engine: &Engine) -> Result<()> {
    let hash = engine.weights().content_hash();
    if hash != model.weights_hash {
        return Err(Error::config(format!(
            "weight-set hash mismatch: model wants {}, engine has {hash}",
            model.weights_hash
        )));
    }
    if engine.stages().len() < model.stages() {
        return Err(Error::config(format!(
            "engine registers {} stages, model needs {}",
            engine.stages().len(),
            model.stages()
        )));
    }
    for (t, expect) in model.stage_strides.iter().enumerate() {
        let got = engine_stage_strides(engine, t + 1)?;
        if &got != expect {
            return Err(Error::config(format!(
                "stage {} stride table mismatch: model {expect:?}, engine {got:?}",
                t + 1
            )));
        }
    }
    Ok(())
}

/// Shape-indexed feature row (with trailing bias 1) for one canonical-frame
/// image at one shape estimate.
fn feature_row(
    canonical: &Tensor,
    shape: &Shape,
    engine: &Engine,
    stage_index: usize,
    patch_size: usize,
) -> Result<Vec<f64>> {
    let patches: Vec<Tensor> = shape
        .points()
        .iter()
        .map(|&p| extract_patch(canonical, p, patch_size))
        .collect::<Result<_>>()?;
    let descriptors = engine.forward_batch(stage_index, &patches)?;
    let feat = assemble_features(&descriptors, shape.len())?;
    let mut row = feat.values().to_vec();
    row.push(1.0); // constant bias feature
    Ok(row)
}

/// One training sample: source image, face box, ground-truth shape in image
/// coordinates.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Tensor,
    pub frame: FaceFrame,
    pub shape: Shape,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: PatchSchedule,
    pub lambda: LambdaChoice,
    pub augment: Option<AugmentConfig>,
    /// Seed for the random similarity applied to each training sample's
    /// initial shape.
    pub init_seed: u64,
    pub init_scale_range: (f64, f64),
    pub init_translate_frac: f64,
    /// Keep per-stage target matrices in the report.
    pub record_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: PatchSchedule::standard(),
            lambda: LambdaChoice::default(),
            augment: Some(AugmentConfig::default()),
            init_seed: 0,
            init_scale_range: (0.9, 1.1),
            init_translate_frac: 0.05,
            record_targets: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean canonical-pixel error before any stage, i.e. the initialization
    /// error.
    pub initial_error: f64,
    /// Mean canonical-pixel training error after each stage.
    pub stage_errors: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cv_scores: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
    /// Per-stage training target matrices (N x 2L), when requested.
    pub targets: Vec<DMatrix<f64>>,
}

fn mean_error(current: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (c, t) in current.iter().zip(truth) {
        let l = c.len() / 2;
        let mut e = 0.0;
        for i in 0..l {
            e += ((c[2 * i] - t[2 * i]).powi(2) + (c[2 * i + 1] - t[2 * i + 1]).powi(2)).sqrt();
        }
        total += e / l as f64;
    }
    total / current.len() as f64
}

/// Trains the full cascade on canonical-frame data derived from `dataset`.
pub fn train_cascade(
    dataset: &[TrainSample],
    engine: &Engine,
    config: &TrainConfig,
) -> Result<(CascadeModel, TrainReport)> {
    let stages = config.schedule.stages();
    if engine.stages().len() != stages {
        return Err(Error::config(format!(
            "engine registers {} stages but schedule has {}",
            engine.stages().len(),
            stages
        )));
    }
    for (t, &size) in config.schedule.sizes().iter().enumerate() {
        let stage = engine
            .stages()
            .iter()
            .find(|s| s.stage_index == t + 1)
            .ok_or_else(|| Error::config(format!("engine has no stage {}", t + 1)))?;
        if stage.input_size != size {
            return Err(Error::config(format!(
                "stage {} input size {} does not match schedule patch size {size}",
                t + 1,
                stage.input_size
            )));
        }
    }
    let first = dataset
        .first()
        .ok_or_else(|| Error::input("empty training dataset"))?;
    let l = first.shape.len();
    if dataset.iter().any(|s| s.shape.len() != l) {
        return Err(Error::input("mixed landmark counts in training dataset"));
    }

    // canonicalize and augment
    let canonical: Vec<(Tensor, Shape)> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<Vec<(Tensor, Shape)>> {
            let img = warp_to_canonical(&s.image, &s.frame);
            let shp = to_canonical(&s.shape, &s.frame);
            match &config.augment {
                Some(aug) => augment(&img, &shp, aug, i),
                None => Ok(vec![(img, shp)]),
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let n = canonical.len();
    if n < 2 {
        return Err(Error::input(format!(
            "need at least 2 samples after augmentation, got {n}"
        )));
    }

    let gt_shapes: Vec<Shape> = canonical.iter().map(|(_, s)| s.clone()).collect();
    let mean = mean_shape(&gt_shapes)?;
    let truth: Vec<Vec<f64>> = gt_shapes.iter().map(|s| s.to_vector()).collect();
    let mut current: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            perturb_initial_shape(
                &mean,
                config.init_seed,
                i,
                config.init_scale_range,
                config.init_translate_frac,
            )
            .to_vector()
        })
        .collect();

    let mut report = TrainReport {
        initial_error: mean_error(&current, &truth),
        ..Default::default()
    };
    let mut regressors = Vec::with_capacity(stages);
    let d = l * DESCRIPTOR_LEN + 1;

    for t in 1..=stages {
        let patch_size = config.schedule.sizes()[t - 1];
        let rows: Vec<Vec<f64>> = canonical
            .par_iter()
            .zip(current.par_iter())
            .map(|((img, _), cur)| {
                let shape = Shape::from_vector(cur)?;
                feature_row(img, &shape, engine, t, patch_size)
            })
            .collect::<Result<_>>()?;
        let mut features = DMatrix::<f64>::zeros(n, d);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                features[(i, j)] = v;
            }
        }
        let mut targets = DMatrix::<f64>::zeros(n, 2 * l);
        for i in 0..n {
            for j in 0..2 * l {
                targets[(i, j)] = truth[i][j] - current[i][j];
            }
        }

        let (lambda, cv_scores) = match &config.lambda {
            LambdaChoice::Fixed(v) => (*v, Vec::new()),
            LambdaChoice::CrossValidate { folds, grid, seed } => {
                choose_lambda_cv(&features, &targets, *folds, grid, seed.wrapping_add(t as u64))?
            }
        };
        let reg = train_stage(&features, &targets, lambda)?;

        // advance training shapes with the just-trained regressor
        let increments = gemm(&features, false, &reg.w, true); // N x 2L
        for i in 0..n {
            for j in 0..2 * l {
                current[i][j] += increments[(i, j)];
            }
        }
        let err = mean_error(&current, &truth);
        let prev = *report.stage_errors.last().unwrap_or(&report.initial_error);
        if err > prev {
            report.warnings.push(format!(
                "stage {t}: training error increased from {prev:.4} to {err:.4}"
            ));
        }
        report.stage_errors.push(err);
        report.lambdas.push(lambda);
        report.cv_scores.push(cv_scores);
        if config.record_targets {
            report.targets.push(targets);
        }
        regressors.push(reg);
    }

    let mut stage_strides = Vec::with_capacity(stages);
    for t in 1..=stages {
        stage_strides.push(engine_stage_strides(engine, t)?);
    }
    let model = CascadeModel {
        landmarks: l,
        schedule: config.schedule.clone(),
        mean_shape: mean,
        stage_strides,
        weights_hash: engine.weights().content_hash(),
        regressors,
    };
    Ok((model, report))
}

/// Runs the cascade on one image: initialize with the mean shape, then per
/// stage extract patches, compute descriptors, and apply the linear update.
/// Returns the shape in image coordinates.
pub fn predict(
    model: &CascadeModel,
    image: &Tensor,
    frame: &FaceFrame,
    engine: &Engine,
) -> Result<Shape> {
    verify_model_engine(model, engine)?;
    let canonical = warp_to_canonical(image, frame);
    let mut current = model.mean_shape.to_vector();
    for (t, reg) in model.regressors.iter().enumerate() {
        let patch_size = model.schedule.sizes()[t];
        let shape = Shape::from_vector(&current)?;
        let row = feature_row(&canonical, &shape, engine, t + 1, patch_size)?;
        let phi = DMatrix::from_column_slice(row.len(), 1, &row);
        let inc = gemm(&reg.w, false, &phi, false);
        for (c, dv) in current.iter_mut().zip(inc.iter()) {
            *c += dv;
        }
    }
    Ok(from_canonical(&Shape::from_vector(&current)?, frame))
}

/// Canonical-frame prediction error of the plain mean shape, the cascade's
/// initialization baseline.
pub fn mean_shape_baseline(model: &CascadeModel, gt_canonical: &Shape) -> Result<f64> {
    model.mean_shape.mean_point_distance(gt_canonical)
}

const MODEL_MAGIC: &[u8; 8] = b"LDDRM001";

pub fn serialize_model(model: &CascadeModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&(model.landmarks as u32).to_le_bytes());
    buf.extend_from_slice(&(model.stages() as u32).to_le_bytes());
    for &s in model.schedule.sizes() {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for strides in &model.stage_strides {
        for &s in strides {
            buf.extend_from_slice(&(s as u32).to_le_bytes());
        }
    }
    let hash = model.weights_hash.as_bytes();
    buf.extend_from_slice(&(hash.len() as u32).to_le_bytes());
    buf.extend_from_slice(hash);
    for &(x, y) in model.mean_shape.points() {
        buf.extend_from_slice(&x.to_le_bytes());
        buf.extend_from_slice(&y.to_le_bytes());
    }
    for reg in &model.regressors {
        buf.extend_from_slice(&reg.lambda.to_le_bytes());
        buf.extend_from_slice(&(reg.w.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(reg.w.ncols() as u32).to_le_bytes());
        for v in reg.w.iter() {
            // column-major
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse(format!(
                "truncated model file: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn deserialize_model(bytes: &[u8]) -> Result<CascadeModel> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(8)?;
    if magic != MODEL_MAGIC {
        return Err(Error::config(format!(
            "unsupported model version tag {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let landmarks = cur.u32()?;
    let stages = cur.u32()?;
    if landmarks == 0 || stages == 0 || stages > 64 {
        return Err(Error::parse("implausible model header"));
    }
    let mut sizes = Vec::with_capacity(stages);
    for _ in 0..stages {
        sizes.push(cur.u32()?);
    }
    let schedule = PatchSchedule::new(sizes)
        .map_err(|e| Error::parse(format!("bad schedule in model: {e}")))?;
    let mut stage_strides = Vec::with_capacity(stages);
    for _ in 0..stages {
        let mut s = [0usize; 4];
        for v in s.iter_mut() {
            *v = cur.u32()?;
        }
        stage_strides.push(s);
    }
    let hash_len = cur.u32()?;
    let weights_hash = std::str::from_utf8(cur.take(hash_len)?)
        .map_err(|_| Error::parse("weight hash is not UTF-8"))?
        .to_string();
    let mut pts = Vec::with_capacity(landmarks);
    for _ in 0..landmarks {
        let x = cur.f64()?;
        let y = cur.f64()?;
        pts.push((x, y));
    }
    let mean = Shape::new(pts)?;
    let mut regressors = Vec::with_capacity(stages);
    for _ in 0..stages {
        let lambda = cur.f64()?;
        let rows = cur.u32()?;
        let cols = cur.u32()?;
        if rows != 2 * landmarks || cols != landmarks * DESCRIPTOR_LEN + 1 {
            return Err(Error::parse(format!(
                "regressor shape {rows}x{cols} inconsistent with L = {landmarks}"
            )));
        }
        let mut w = DMatrix::<f64>::zeros(rows, cols);
        for v in w.iter_mut() {
            *v = cur.f64()?;
        }
        regressors.push(StageRegressor { w, lambda });
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(format!(
            "model file has {} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(CascadeModel {
        landmarks,
        schedule,
        mean_shape: mean,
        stage_strides,
        weights_hash,
        regressors,
    })
}

pub fn save_model(model: &CascadeModel, path: &Path) -> Result<()> {
    let bytes = serialize_model(model);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<CascadeModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    deserialize_model(&bytes)
}

/// Convenience: builds a model with all-zero regressors, useful for tests
/// of the identity property of Eq.-style updates.
pub fn zero_model(
    landmarks: usize,
    schedule: PatchSchedule,
    mean: Shape,
    engine: &Engine,
) -> Result<CascadeModel> {
    let stages = schedule.stages();
    let d = landmarks * DESCRIPTOR_LEN + 1;
    let mut stage_strides = Vec::with_capacity(stages);
    for t in 1..=stages {
        stage_strides.push(engine_stage_strides(engine, t)?);
    }
    Ok(CascadeModel {
        landmarks,
        schedule,
        mean_shape: mean,
        stage_strides,
        weights_hash: engine.weights().content_hash(),
        regressors: (0..stages)
            .map(|_| StageRegressor { w: DMatrix::zeros(2 * landmarks, d), lambda: 0.0 })
            .collect(),
    })
}

/// Canonical-size constant re-exported for report writers.
pub const CANONICAL_FRAME: usize = CANONICAL_SIZE;
