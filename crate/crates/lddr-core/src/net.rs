//! Stage-specific descriptor networks: layer stacks with per-stage stride
//! overrides, geometry and receptive-field calculators, batched forward
//! passes, and the weight archive.
//!
//! All four stages share a single weight set; a stage is just a stride view
//! over those weights.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv_out_dim, lrn, maxpool2d, pool_out_dim, relu, ConvWeights, Tensor};

/// Length of the descriptor produced by the final conv layer.
pub const DESCRIPTOR_LEN: usize = 256;

/// Canonical per-stage input sizes (pixels, square).
pub const STAGE_INPUT_SIZES: [usize; 4] = [92, 68, 42, 21];

/// Per-stage strides for (conv1, max1, conv2, max2).
pub const STAGE_STRIDES: [(usize, usize, usize, usize); 4] =
    [(4, 2, 1, 1), (3, 2, 1, 1), (2, 1, 1, 2), (1, 1, 1, 1)];

/// Default LRN constants: n, alpha, beta, k.
pub const LRN_DEFAULTS: (usize, f64, f64, f64) = (5, 1e-4, 0.75, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        stride: usize,
        pad: usize,
        out_channels: usize,
        groups: usize,
    },
    Relu,
    Lrn {
        n: usize,
        alpha: f64,
        beta: f64,
        k: f64,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
        ceil_mode: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: usize, stride: usize, pad: usize, out_channels: usize, groups: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv { kernel, stride, pad, out_channels, groups },
        }
    }
    pub fn relu(name: &str) -> Self {
        LayerSpec { name: name.to_string(), kind: LayerKind::Relu }
    }
    pub fn lrn_default(name: &str) -> Self {
        let (n, alpha, beta, k) = LRN_DEFAULTS;
        LayerSpec { name: name.to_string(), kind: LayerKind::Lrn { n, alpha, beta, k } }
    }
    pub fn maxpool(name: &str, kernel: usize, stride: usize, pad: usize, ceil_mode: bool) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::MaxPool { kernel, stride, pad, ceil_mode },
        }
    }
}

/// Channel widths and group counts for the five conv layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPlan {
    pub in_channels: usize,
    pub widths: [usize; 5],
    pub groups: [usize; 5],
}

impl ChannelPlan {
    /// The base network's published widths; conv2/conv4/conv5 are split in
    /// two groups to stay compatible with reference weight dumps.
    pub fn standard(in_channels: usize) -> Self {
        ChannelPlan {
            in_channels,
            widths: [96, 256, 384, 384, 256],
            groups: [1, 2, 1, 2, 2],
        }
    }

    /// Narrow widths for desk-scale training; the descriptor stays 256-d.
    pub fn slim(in_channels: usize) -> Self {
        ChannelPlan {
            in_channels,
            widths: [8, 16, 24, 24, 256],
            groups: [1, 1, 1, 1, 1],
        }
    }
}

/// One stage of the descriptor network: an input size plus an ordered stack
/// of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage_index: usize,
    pub input_size: usize,
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// Canonical layer stack for one of the four stages, with strides per the
/// stage stride table and the standard channel plan.
pub fn standard_stage_config(stage: usize) -> Result<StageConfig> {
    stage_config_with_plan(stage, &ChannelPlan::standard(3))
}

/// Same stack as [`standard_stage_config`] over an arbitrary channel plan.
pub fn stage_config_with_plan(stage: usize, plan: &ChannelPlan) -> Result<StageConfig> {
    if !(1..=4).contains(&stage) {
        return Err(Error::config(format!("stage must be in 1..=4, got {stage}")));
    }
    let (s_conv1, s_max1, s_conv2, s_max2) = STAGE_STRIDES[stage - 1];
    let w = &plan.widths;
    let g = &plan.groups;
    let layers = vec![
        LayerSpec::conv("conv1", 11, s_conv1, 0, w[0], g[0]),
        LayerSpec::relu("relu1"),
        LayerSpec::lrn_default("lrn1"),
        LayerSpec::maxpool("max1", 3, s_max1, 1, true),
        LayerSpec::conv("conv2", 5, s_conv2, 0, w[1], g[1]),
        LayerSpec::relu("relu2"),
        LayerSpec::lrn_default("lrn2"),
        LayerSpec::maxpool("max2", 3, s_max2, 1, true),
        LayerSpec::conv("conv3", 3, 1, 0, w[2], g[2]),
        LayerSpec::relu("relu3"),
        LayerSpec::conv("conv4", 3, 1, 0, w[3], g[3]),
        LayerSpec::relu("relu4"),
        LayerSpec::conv("conv5", 3, 1, 0, w[4], g[4]),
    ];
    Ok(StageConfig {
        stage_index: stage,
        input_size: STAGE_INPUT_SIZES[stage - 1],
        in_channels: plan.in_channels,
        layers,
    })
}

/// The unmodified base network up to pool5, with its original strides and
/// pads. Used for receptive-field inspection only.
pub fn original_network_layers() -> Vec<LayerSpec> {
    let w = ChannelPlan::standard(3).widths;
    vec![
        LayerSpec::conv("conv1", 11, 4, 0, w[0], 1),
        LayerSpec::relu("relu1"),
        LayerSpec::lrn_default("lrn1"),
        LayerSpec::maxpool("max1", 3, 2, 0, false),
        LayerSpec::conv("conv2", 5, 1, 2, w[1], 2),
        LayerSpec::relu("relu2"),
        LayerSpec::lrn_default("lrn2"),
        LayerSpec::maxpool("max2", 3, 2, 0, false),
        LayerSpec::conv("conv3", 3, 1, 1, w[2], 1),
        LayerSpec::relu("relu3"),
        LayerSpec::conv("conv4", 3, 1, 1, w[3], 2),
        LayerSpec::relu("relu4"),
        LayerSpec::conv("conv5", 3, 1, 1, w[4], 2),
        LayerSpec::maxpool("pool5", 3, 2, 0, false),
    ]
}

/// Per-layer output geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGeometry {
    pub name: String,
    pub out_h: usize,
    pub out_w: usize,
    pub out_channels: usize,
}

fn layer_out_dim(kind: &LayerKind, dim: usize) -> Option<usize> {
    match kind {
        LayerKind::Conv { kernel, stride, pad, .. } => conv_out_dim(dim, *kernel, *stride, *pad),
        LayerKind::MaxPool { kernel, stride, pad, ceil_mode } => {
            pool_out_dim(dim, *kernel, *stride, *pad, *ceil_mode)
        }
        LayerKind::Relu | LayerKind::Lrn { .. } => Some(dim),
    }
}

/// Applies each layer's size formula in sequence and reports per-layer
/// spatial dims and channels.
pub fn output_geometry(cfg: &StageConfig) -> Result<Vec<LayerGeometry>> {
    geometry_of(&cfg.layers, cfg.input_size, cfg.input_size, cfg.in_channels)
}

pub fn geometry_of(
    layers: &[LayerSpec],
    in_h: usize,
    in_w: usize,
    in_channels: usize,
) -> Result<Vec<LayerGeometry>> {
    let mut h = in_h;
    let mut w = in_w;
    let mut ch = in_channels;
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        let nh = layer_out_dim(&layer.kind, h);
        let nw = layer_out_dim(&layer.kind, w);
        match (nh, nw) {
            (Some(nh), Some(nw)) if nh >= 1 && nw >= 1 => {
                h = nh;
                w = nw;
            }
            _ => {
                return Err(Error::geometry(format!(
                    "layer {} produces dimension < 1 from {h}x{w} input",
                    layer.name
                )))
            }
        }
        if let LayerKind::Conv { out_channels, .. } = layer.kind {
            ch = out_channels;
        }
        out.push(LayerGeometry { name: layer.name.clone(), out_h: h, out_w: w, out_channels: ch });
    }
    Ok(out)
}

/// Smallest square input for which the stack still yields a >= 1x1 output,
/// found by inverting each layer's size formula back-to-front.
pub fn min_input_size(cfg: &StageConfig) -> usize {
    let mut need = 1usize;
    for layer in cfg.layers.iter().rev() {
        need = match layer.kind {
            LayerKind::Conv { kernel, stride, pad, .. } => {
                ((need - 1) * stride + kernel).saturating_sub(2 * pad).max(1)
            }
            LayerKind::MaxPool { kernel, stride, pad, ceil_mode } => {
                let floor_need = (need - 1) * stride + kernel;
                let raw = if ceil_mode && need >= 2 {
                    // ceil((in + 2p - k)/s) + 1 >= need  <=>  in + 2p - k >= s(need-2) + 1
                    (need - 2) * stride + 1 + kernel
                } else {
                    floor_need
                };
                // padded input must still cover the kernel
                raw.saturating_sub(2 * pad).max(kernel.saturating_sub(2 * pad)).max(1)
            }
            LayerKind::Relu | LayerKind::Lrn { .. } => need,
        };
    }
    need
}

/// Theoretical receptive field and jump after each conv/pool layer, from the
/// recurrence `rf += (kernel - 1) * jump; jump *= stride`.
pub fn receptive_field_table(layers: &[LayerSpec]) -> Vec<(String, usize, usize)> {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers {
        match layer.kind {
            LayerKind::Conv { kernel, stride, .. }
            | LayerKind::MaxPool { kernel, stride, .. } => {
                rf += (kernel - 1) * jump;
                jump *= stride;
            }
            LayerKind::Relu | LayerKind::Lrn { .. } => {}
        }
        out.push((layer.name.clone(), rf, jump));
    }
    out
}

/// Receptive field and jump up to and including the named layer.
pub fn receptive_field(layers: &[LayerSpec], upto: &str) -> Result<(usize, usize)> {
    for (name, rf, jump) in receptive_field_table(layers) {
        if name == upto {
            return Ok((rf, jump));
        }
    }
    Err(Error::config(format!("unknown layer name {upto:?}")))
}

/// One shared set of conv weights, keyed by layer name, ordered conv1..conv5.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub version: u32,
    layers: Vec<(String, ConvWeights)>,
}

impl WeightSet {
    pub fn new(layers: Vec<(String, ConvWeights)>) -> Result<Self> {
        // channel chain must be consistent
        for pair in layers.windows(2) {
            let (a_name, a) = &pair[0];
            let (b_name, b) = &pair[1];
            if a.out_channels != b.in_channels {
                return Err(Error::config(format!(
                    "channel chain broken: {a_name} outputs {} but {b_name} expects {}",
                    a.out_channels, b.in_channels
                )));
            }
        }
        Ok(WeightSet { version: 1, layers })
    }

    pub fn get(&self, name: &str) -> Option<&ConvWeights> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, w)| w)
    }

    pub fn layers(&self) -> &[(String, ConvWeights)] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map(|(_, w)| w.in_channels).unwrap_or(0)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|(_, w)| w.out_channels).unwrap_or(0)
    }

    /// Total f64 values held (weights + biases).
    pub fn value_count(&self) -> usize {
        self.layers.iter().map(|(_, w)| w.weights.len() + w.bias.len()).sum()
    }

    /// Hex SHA-256 of the canonical archive serialization. Models pin this
    /// to refuse prediction with the wrong weights.
    pub fn content_hash(&self) -> String {
        let bytes = serialize_weights(self);
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Deterministic seeded initializer: zero-mean uniform values with standard
/// deviation `scale`, zero biases. Stands in for pretrained weights.
pub fn init_random_weights(seed: u64, scale: f64, plan: &ChannelPlan) -> Result<WeightSet> {
    if scale <= 0.0 {
        return Err(Error::config(format!("weight scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = [11usize, 5, 3, 3, 3];
    let mut in_c = plan.in_channels;
    let mut layers = Vec::with_capacity(5);
    for i in 0..5 {
        let out_c = plan.widths[i];
        let g = plan.groups[i];
        let k = kernels[i];
        let fan_in = (in_c / g) * k * k;
        // per-layer std = scale / sqrt(fan_in), so activation magnitudes
        // neither explode nor vanish across the five conv layers
        let half_width = scale * 3f64.sqrt() / (fan_in as f64).sqrt();
        let n = out_c * fan_in;
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-half_width..half_width)).collect();
        let bias = vec![0.0; out_c];
        layers.push((
            format!("conv{}", i + 1),
            ConvWeights::new(k, k, in_c, out_c, g, weights, bias)?,
        ));
        in_c = out_c;
    }
    WeightSet::new(layers)
}

fn check_stage_against_weights(stage: &StageConfig, weights: &WeightSet) -> Result<()> {
    if stage.in_channels != weights.in_channels() {
        return Err(Error::config(format!(
            "stage {} expects {} input channels but weights have {}",
            stage.stage_index,
            stage.in_channels,
            weights.in_channels()
        )));
    }
    for layer in &stage.layers {
        if let LayerKind::Conv { out_channels, groups, kernel, .. } = layer.kind {
            let w = weights.get(&layer.name).ok_or_else(|| {
                Error::config(format!("no weights for conv layer {}", layer.name))
            })?;
            if w.out_channels != out_channels || w.groups != groups || w.kernel_h != kernel {
                return Err(Error::config(format!(
                    "weights for {} ({}c k{} g{}) do not match stage spec ({}c k{} g{})",
                    layer.name, w.out_channels, w.kernel_h, w.groups, out_channels, kernel, groups
                )));
            }
        }
    }
    let geom = output_geometry(stage)?;
    let last = geom.last().expect("stage has layers");
    if last.out_h != 1 || last.out_w != 1 || last.out_channels != DESCRIPTOR_LEN {
        return Err(Error::config(format!(
            "stage {} geometry ends at {}x{}x{}, expected 1x1x{DESCRIPTOR_LEN}",
            stage.stage_index, last.out_h, last.out_w, last.out_channels
        )));
    }
    Ok(())
}

/// 256-dimensional descriptor of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != DESCRIPTOR_LEN {
            return Err(Error::input(format!(
                "descriptor must have {DESCRIPTOR_LEN} values, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("descriptor contains non-finite values".into()));
        }
        Ok(Descriptor { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Runs the stage's layer stack on one patch and flattens the 1x1x256
/// output.
pub fn forward_patch(patch: &Tensor, stage: &StageConfig, weights: &WeightSet) -> Result<Descriptor> {
    if patch.height() != stage.input_size || patch.width() != stage.input_size {
        return Err(Error::geometry(format!(
            "patch is {}x{} but stage {} expects {}x{}",
            patch.height(),
            patch.width(),
            stage.stage_index,
            stage.input_size,
            stage.input_size
        )));
    }
    if patch.channels() != stage.in_channels {
        return Err(Error::config(format!(
            "patch has {} channels but stage expects {}",
            patch.channels(),
            stage.in_channels
        )));
    }
    let mut cur = patch.clone();
    for layer in &stage.layers {
        cur = match &layer.kind {
            LayerKind::Conv { stride, pad, .. } => {
                let w = weights.get(&layer.name).ok_or_else(|| {
                    Error::config(format!("no weights for conv layer {}", layer.name))
                })?;
                conv2d(&cur, w, *stride, *pad)?
            }
            LayerKind::Relu => relu(&cur),
            LayerKind::Lrn { n, alpha, beta, k } => lrn(&cur, *n, *alpha, *beta, *k)?,
            LayerKind::MaxPool { kernel, stride, pad, ceil_mode } => {
                maxpool2d(&cur, *kernel, *stride, *pad, *ceil_mode)?
            }
        };
    }
    if cur.height() != 1 || cur.width() != 1 {
        return Err(Error::geometry(format!(
            "stage {} output is {}x{}, expected 1x1",
            stage.stage_index,
            cur.height(),
            cur.width()
        )));
    }
    Descriptor::new(cur.into_data())
}

/// Batched forward pass; result `i` is bit-identical to
/// `forward_patch(patches[i])`.
pub fn forward_batch(
    patches: &[Tensor],
    stage: &StageConfig,
    weights: &WeightSet,
) -> Result<Vec<Descriptor>> {
    patches
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            forward_patch(p, stage, weights)
                .map_err(|e| Error::config(format!("patch {i}: {e}")))
        })
        .collect()
}

/// Single-copy inference engine over all registered stages.
///
/// Holds exactly one copy of the weights; every stage's forward pass routes
/// through it.
#[derive(Debug, Clone)]
pub struct Engine {
    weights: WeightSet,
    stages: Vec<StageConfig>,
    weight_copies: usize,
}

impl Engine {
    pub fn new(weights: WeightSet, stages: Vec<StageConfig>) -> Result<Self> {
        for stage in &stages {
            check_stage_against_weights(stage, &weights)?;
        }
        Ok(Engine { weights, stages, weight_copies: 1 })
    }

    fn stage(&self, stage_index: usize) -> Result<&StageConfig> {
        self.stages
            .iter()
            .find(|s| s.stage_index == stage_index)
            .ok_or_else(|| Error::config(format!("stage {stage_index} not registered with engine")))
    }

    pub fn stages(&self) -> &[StageConfig] {
        &self.stages
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    /// Number of weight-set allocations held; always 1 however many stages
    /// are registered.
    pub fn weight_copies(&self) -> usize {
        self.weight_copies
    }

    pub fn forward(&self, stage_index: usize, patch: &Tensor) -> Result<Descriptor> {
        forward_patch(patch, self.stage(stage_index)?, &self.weights)
    }

    pub fn forward_batch(&self, stage_index: usize, patches: &[Tensor]) -> Result<Vec<Descriptor>> {
        forward_batch(patches, self.stage(stage_index)?, &self.weights)
    }
}

const WEIGHTS_MAGIC: &[u8; 8] = b"LDDRW001";

/// Canonical little-endian serialization of a weight set; also the hashing
/// preimage for [`WeightSet::content_hash`].
pub fn serialize_weights(ws: &WeightSet) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + ws.value_count() * 8);
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.extend_from_slice(&(ws.layers.len() as u32).to_le_bytes());
    for (name, w) in &ws.layers {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        for v in [w.out_channels, w.in_channels, w.kernel_h, w.kernel_w, w.groups] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &w.weights {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &w.bias {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_weights(ws: &WeightSet, path: &Path) -> Result<()> {
    let bytes = serialize_weights(ws);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::parse(format!(
                "truncated weight archive: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<WeightSet> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(8)?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::config(format!(
            "unsupported weight archive version tag {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::parse("layer name is not valid UTF-8"))?
            .to_string();
        let out_c = cur.u32()? as usize;
        let in_c = cur.u32()? as usize;
        let kh = cur.u32()? as usize;
        let kw = cur.u32()? as usize;
        let groups = cur.u32()? as usize;
        if groups == 0 || in_c == 0 || out_c == 0 || in_c % groups != 0 {
            return Err(Error::parse(format!("bad shape header for layer {name}")));
        }
        let weights = cur.f64s(out_c * (in_c / groups) * kh * kw)?;
        let bias = cur.f64s(out_c)?;
        layers.push((name, ConvWeights::new(kh, kw, in_c, out_c, groups, weights, bias)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(format!(
            "weight archive has {} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    WeightSet::new(layers)
}

pub fn load_weights(path: &Path) -> Result<WeightSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    deserialize_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_strides() {
        let s1 = standard_stage_config(1).unwrap();
        assert_eq!(s1.input_size, 92);
        let strides: Vec<usize> = s1
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv { stride, .. } => Some(stride),
                LayerKind::MaxPool { stride, .. } => Some(stride),
                _ => None,
            })
            .collect();
        assert_eq!(&strides[..4], &[4, 2, 1, 1]);

        let s4 = standard_stage_config(4).unwrap();
        assert_eq!(s4.input_size, 21);
        assert!(s4.layers.iter().all(|l| match l.kind {
            LayerKind::Conv { stride, .. } | LayerKind::MaxPool { stride, .. } => stride == 1,
            _ => true,
        }));

        let s3 = standard_stage_config(3).unwrap();
        assert_eq!(s3.input_size, 42);
        let max2 = s3.layers.iter().find(|l| l.name == "max2").unwrap();
        assert!(matches!(max2.kind, LayerKind::MaxPool { stride: 2, .. }));

        assert!(standard_stage_config(0).is_err());
        assert!(standard_stage_config(5).is_err());
    }

    #[test]
    fn all_stages_end_at_1x1x256() {
        for stage in 1..=4 {
            let cfg = standard_stage_config(stage).unwrap();
            let geom = output_geometry(&cfg).unwrap();
            let last = geom.last().unwrap();
            assert_eq!(
                (last.out_h, last.out_w, last.out_channels),
                (1, 1, 256),
                "stage {stage}"
            );
        }
    }

    #[test]
    fn stage1_layerwise_geometry() {
        // 92 -> 21 -> 11 -> 7 -> 7 -> 5 -> 3 -> 1 under ceil-mode pooling
        let cfg = standard_stage_config(1).unwrap();
        let geom = output_geometry(&cfg).unwrap();
        let dims: Vec<(String, usize)> =
            geom.iter().map(|g| (g.name.clone(), g.out_h)).collect();
        let expect = [
            ("conv1", 21),
            ("max1", 11),
            ("conv2", 7),
            ("max2", 7),
            ("conv3", 5),
            ("conv4", 3),
            ("conv5", 1),
        ];
        for (name, d) in expect {
            assert!(dims.contains(&(name.to_string(), d)), "{name} should be {d}: {dims:?}");
        }
    }

    #[test]
    fn stage4_rejects_input_20() {
        let mut cfg = standard_stage_config(4).unwrap();
        cfg.input_size = 20;
        assert!(matches!(output_geometry(&cfg), Err(Error::Geometry(_))));
    }

    #[test]
    fn min_input_matches_exhaustive_search() {
        for stage in 1..=4 {
            let cfg = standard_stage_config(stage).unwrap();
            let inverted = min_input_size(&cfg);
            let searched = (1..=128)
                .find(|&n| {
                    let mut c = cfg.clone();
                    c.input_size = n;
                    output_geometry(&c).is_ok()
                })
                .unwrap();
            assert_eq!(inverted, searched, "stage {stage}");
        }
        assert_eq!(min_input_size(&standard_stage_config(4).unwrap()), 21);
    }

    #[test]
    fn min_input_single_conv() {
        let cfg = StageConfig {
            stage_index: 1,
            input_size: 3,
            in_channels: 1,
            layers: vec![LayerSpec::conv("conv1", 3, 1, 0, 1, 1)],
        };
        assert_eq!(min_input_size(&cfg), 3);
    }

    #[test]
    fn receptive_field_original_network() {
        let layers = original_network_layers();
        assert_eq!(receptive_field(&layers, "conv5").unwrap(), (163, 16));
        assert_eq!(receptive_field(&layers, "pool5").unwrap().0, 195);
        assert!(matches!(receptive_field(&layers, "pool9"), Err(Error::Config(_))));
    }

    #[test]
    fn receptive_field_stage4() {
        let cfg = standard_stage_config(4).unwrap();
        assert_eq!(receptive_field(&cfg.layers, "conv5").unwrap(), (25, 1));
    }

    #[test]
    fn receptive_field_unit_conv() {
        let layers = vec![LayerSpec::conv("c", 1, 1, 0, 1, 1)];
        assert_eq!(receptive_field(&layers, "c").unwrap(), (1, 1));
    }

    #[test]
    fn random_weights_deterministic() {
        let plan = ChannelPlan::slim(1);
        let a = init_random_weights(7, 0.05, &plan).unwrap();
        let b = init_random_weights(7, 0.05, &plan).unwrap();
        assert_eq!(a, b);
        let c = init_random_weights(8, 0.05, &plan).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_weights_scale_bound() {
        let plan = ChannelPlan::slim(1);
        let ws = init_random_weights(3, 0.01, &plan).unwrap();
        for (_, w) in ws.layers() {
            let fan_in = (w.in_channels / w.groups) * w.kernel_h * w.kernel_w;
            let bound = 0.01 * 3f64.sqrt() / (fan_in as f64).sqrt();
            assert!(w.weights.iter().all(|v| v.is_finite() && v.abs() <= bound));
            assert!(w.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn weights_roundtrip() {
        let ws = init_random_weights(42, 0.05, &ChannelPlan::slim(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&ws, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(ws, back);
        assert_eq!(ws.content_hash(), back.content_hash());
    }

    #[test]
    fn weights_truncation_and_version_errors() {
        let ws = init_random_weights(42, 0.05, &ChannelPlan::slim(1)).unwrap();
        let mut bytes = serialize_weights(&ws);
        bytes.truncate(bytes.len() - 9);
        assert!(matches!(deserialize_weights(&bytes), Err(Error::Parse { .. })));

        let mut bad = serialize_weights(&ws);
        bad[7] = b'9';
        assert!(matches!(deserialize_weights(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn forward_zero_patch_zero_weights_bias() {
        let plan = ChannelPlan::slim(1);
        let ws = init_random_weights(1, 0.05, &plan).unwrap();
        let cfg = stage_config_with_plan(4, &plan).unwrap();
        let patch = Tensor::zeros(21, 21, 1);
        let d = forward_patch(&patch, &cfg, &ws).unwrap();
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_deterministic_and_finite() {
        let plan = ChannelPlan::slim(3);
        let ws = init_random_weights(5, 0.05, &plan).unwrap();
        let cfg = stage_config_with_plan(4, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..21 * 21 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let patch = Tensor::new(21, 21, 3, data).unwrap();
        let a = forward_patch(&patch, &cfg, &ws).unwrap();
        let b = forward_patch(&patch, &cfg, &ws).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values().len(), 256);
        assert!(a.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_matches_serial_and_empty() {
        let plan = ChannelPlan::slim(1);
        let ws = init_random_weights(11, 0.05, &plan).unwrap();
        let cfg = stage_config_with_plan(4, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patches: Vec<Tensor> = (0..16)
            .map(|_| {
                let data: Vec<f64> = (0..21 * 21).map(|_| rng.gen_range(0.0..1.0)).collect();
                Tensor::new(21, 21, 1, data).unwrap()
            })
            .collect();
        let batch = forward_batch(&patches, &cfg, &ws).unwrap();
        for (i, p) in patches.iter().enumerate() {
            assert_eq!(batch[i], forward_patch(p, &cfg, &ws).unwrap());
        }
        assert!(forward_batch(&[], &cfg, &ws).unwrap().is_empty());
    }

    #[test]
    fn engine_unregistered_stage() {
        let plan = ChannelPlan::slim(1);
        let ws = init_random_weights(11, 0.05, &plan).unwrap();
        let stages = vec![stage_config_with_plan(4, &plan).unwrap()];
        let engine = Engine::new(ws, stages).unwrap();
        assert_eq!(engine.weight_copies(), 1);
        let patch = Tensor::zeros(21, 21, 1);
        assert!(matches!(engine.forward(2, &patch), Err(Error::Config(_))));
    }

    #[test]
    fn engine_rejects_mismatched_weights_at_construction() {
        let ws = init_random_weights(11, 0.05, &ChannelPlan::slim(1)).unwrap();
        let stages = vec![standard_stage_config(4).unwrap()]; // standard plan, 3 channels
        assert!(matches!(Engine::new(ws, stages), Err(Error::Config(_))));
    }
}
