//! Detector/descriptor network with hand-written reverse-mode gradients.
//!
//! A three-layer shared convolutional encoder (stride 2 at layers two and
//! three) feeds two heads: a heatmap head whose logits are bilinearly
//! upsampled to full resolution and normalized by a spatial softmax, and a
//! descriptor head producing a dense field that is bilinearly upsampled and
//! unit-normalized at lookup time. The whole network is small enough that
//! every parameter gradient can be checked against central finite
//! differences.

mod checkpoint;
pub(crate) mod plane;

pub use checkpoint::{read_checkpoint, write_checkpoint};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use plane::{
    conv2d, conv2d_backward, relu, relu_backward, upsample, upsample_backward,
    upsample_channel_last, upsample_channel_last_backward, Plane,
};

/// Spatial downsampling factor between the input image and the head outputs.
pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("coordinate ({x}, {y}) outside the field")]
    OutOfBounds { x: f64, y: f64 },
    #[error("forward cache is stale: parameters were updated after the forward pass")]
    StaleCache,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Channel widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub enc1: usize,
    pub enc2: usize,
    pub enc3: usize,
    pub desc_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc1: 8,
            enc2: 16,
            enc3: 32,
            desc_dim: 32,
        }
    }
}

impl ModelConfig {
    /// A deliberately tiny instantiation for exhaustive finite-difference
    /// checks.
    pub fn tiny() -> Self {
        Self {
            enc1: 2,
            enc2: 3,
            enc3: 4,
            desc_dim: 3,
        }
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape,
            data,
        }
    }
}

/// Tensor indices in [`ModelParams::tensors`]; the order is part of the
/// checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Layer {
    Enc1W = 0,
    Enc1B = 1,
    Enc2W = 2,
    Enc2B = 3,
    Enc3W = 4,
    Enc3B = 5,
    HeatW = 6,
    HeatB = 7,
    DescW = 8,
    DescB = 9,
}

pub const N_TENSORS: usize = 10;

/// All learnable parameters plus a revision counter used to detect stale
/// forward caches.
#[derive(Debug, Clone)]
pub struct ModelParams {
    cfg: ModelConfig,
    revision: u64,
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    /// Fan-in-scaled uniform initialization with zero biases.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernel = |name: &str, out_c: usize, in_c: usize| {
            let bound = 1.0 / ((in_c * 9) as f64).sqrt();
            let data: Vec<f64> = (0..out_c * in_c * 9)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            NamedTensor::new(name, vec![out_c, in_c, 3, 3], data)
        };
        let bias = |name: &str, n: usize| NamedTensor::new(name, vec![n], vec![0.0; n]);
        let tensors = vec![
            kernel("enc1.weight", cfg.enc1, 1),
            bias("enc1.bias", cfg.enc1),
            kernel("enc2.weight", cfg.enc2, cfg.enc1),
            bias("enc2.bias", cfg.enc2),
            kernel("enc3.weight", cfg.enc3, cfg.enc2),
            bias("enc3.bias", cfg.enc3),
            kernel("heat.weight", 1, cfg.enc3),
            bias("heat.bias", 1),
            kernel("desc.weight", cfg.desc_dim, cfg.enc3),
            bias("desc.bias", cfg.desc_dim),
        ];
        Self {
            cfg,
            revision: 0,
            tensors,
        }
    }

    pub(crate) fn from_tensors(cfg: ModelConfig, tensors: Vec<NamedTensor>) -> Self {
        Self {
            cfg,
            revision: 0,
            tensors,
        }
    }

    pub fn config(&self) -> ModelConfig {
        self.cfg
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensor(&self, layer: Layer) -> &NamedTensor {
        &self.tensors[layer as usize]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Flat read access for finite-difference sweeps.
    pub fn get_scalar(&self, flat: usize) -> f64 {
        let (t, k) = self.locate(flat);
        self.tensors[t].data[k]
    }

    /// Flat write access for finite-difference sweeps. Bumps the revision.
    pub fn set_scalar(&mut self, flat: usize, value: f64) {
        let (t, k) = self.locate(flat);
        self.tensors[t].data[k] = value;
        self.revision += 1;
    }

    fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.data.len() {
                return (i, flat);
            }
            flat -= t.data.len();
        }
        panic!("flat index out of range");
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors.iter_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flatten().cloned().collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Keypoint probability map: nonnegative entries summing to one, stored with
/// exact log-probabilities.
#[derive(Debug, Clone)]
pub struct HeatMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
    log_values: Vec<f64>,
}

impl HeatMap {
    /// Wraps an existing distribution; entries must be nonnegative and sum to
    /// one within 1e-6. Zero entries get `-inf` log-probability.
    pub fn from_values(h: usize, w: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != h * w {
            return Err(ModelError::ShapeMismatch(format!(
                "{} values for {h}x{w} heatmap",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::ShapeMismatch(
                "heatmap entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(ModelError::ShapeMismatch(format!(
                "heatmap sums to {sum}, expected 1"
            )));
        }
        let log_values = values
            .iter()
            .map(|&v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            h,
            w,
            values,
            log_values,
        })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.w + x]
    }

    #[inline]
    pub fn log_value(&self, x: usize, y: usize) -> f64 {
        self.log_values[y * self.w + x]
    }

    /// Distribution contract: nonnegative, sums to one within 1e-6.
    pub fn is_valid_distribution(&self) -> bool {
        self.values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (self.values.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }
}

/// Dense per-pixel descriptor field, channel-last, not yet unit-normalized.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    h: usize,
    w: usize,
    dim: usize,
    data: Vec<f64>,
}

impl DescriptorField {
    pub fn new(h: usize, w: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), h * w * dim);
        Self { h, w, dim, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn node(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.w + x) * self.dim;
        &self.data[base..base + self.dim]
    }
}

/// Activations retained for the backward pass.
pub struct ForwardCache {
    revision: u64,
    h: usize,
    w: usize,
    input: Plane,
    r1: Plane,
    r2: Plane,
    r3: Plane,
    heat_values: Vec<f64>,
}

impl ForwardCache {
    pub fn image_size(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

/// Full forward pass on a grayscale image in `[0, 1]`.
///
/// The image sides must be multiples of [`DOWNSAMPLE`]. Returns the heatmap
/// (softmax over upsampled logits), the dense descriptor field, and the
/// activation cache needed by [`backward_scalar`].
pub fn forward(
    image: &[f64],
    h: usize,
    w: usize,
    params: &ModelParams,
) -> Result<(HeatMap, DescriptorField, ForwardCache), ModelError> {
    if image.len() != h * w {
        return Err(ModelError::ShapeMismatch(format!(
            "{} pixels for {h}x{w} image",
            image.len()
        )));
    }
    if h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 || h == 0 || w == 0 {
        return Err(ModelError::ShapeMismatch(format!(
            "image sides must be positive multiples of {DOWNSAMPLE}, got {h}x{w}"
        )));
    }
    let cfg = params.cfg;
    let input = Plane {
        channels: 1,
        h,
        w,
        data: image.to_vec(),
    };
    let t = |l: Layer| params.tensor(l);
    let a1 = conv2d(&input, &t(Layer::Enc1W).data, &t(Layer::Enc1B).data, cfg.enc1, 1);
    let r1 = relu(&a1);
    let a2 = conv2d(&r1, &t(Layer::Enc2W).data, &t(Layer::Enc2B).data, cfg.enc2, 2);
    let r2 = relu(&a2);
    let a3 = conv2d(&r2, &t(Layer::Enc3W).data, &t(Layer::Enc3B).data, cfg.enc3, 2);
    let r3 = relu(&a3);

    let heat_logits_coarse = conv2d(&r3, &t(Layer::HeatW).data, &t(Layer::HeatB).data, 1, 1);
    let heat_logits = upsample(&heat_logits_coarse, DOWNSAMPLE);
    let (heat_values, heat_log) = spatial_softmax(&heat_logits.data);

    let desc_coarse = conv2d(&r3, &t(Layer::DescW).data, &t(Layer::DescB).data, cfg.desc_dim, 1);
    let field_data = upsample_channel_last(&desc_coarse, DOWNSAMPLE);

    let heat = HeatMap {
        h,
        w,
        values: heat_values.clone(),
        log_values: heat_log,
    };
    let field = DescriptorField::new(h, w, cfg.desc_dim, field_data);
    let cache = ForwardCache {
        revision: params.revision,
        h,
        w,
        input,
        r1,
        r2,
        r3,
        heat_values,
    };
    Ok((heat, field, cache))
}

/// Softmax over all pixels with exact log-probabilities.
fn spatial_softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - m).exp()).sum();
    let lse = m + sum.ln();
    let log: Vec<f64> = logits.iter().map(|&v| v - lse).collect();
    let values = log.iter().map(|&v| v.exp()).collect();
    (values, log)
}

/// Gradient of `Σ_p g_p · log softmax_p` with respect to the logits:
/// `g_q − (Σ_p g_p) · softmax_q`.
pub fn softmax_log_backward(d_log: &[f64], probs: &[f64]) -> Vec<f64> {
    let total: f64 = d_log.iter().sum();
    d_log
        .iter()
        .zip(probs)
        .map(|(&g, &p)| g - total * p)
        .collect()
}

/// Reverse-mode pass for a scalar objective that is linear in the heatmap
/// log-probabilities and in the raw descriptor field.
///
/// `d_log_heat[p]` is the objective's coefficient on `log P(p)` and
/// `d_field` (channel-last, full resolution) its gradient with respect to the
/// pre-normalization descriptor field. Returns exact parameter gradients.
pub fn backward_scalar(
    params: &ModelParams,
    cache: &ForwardCache,
    d_log_heat: &[f64],
    d_field: &[f64],
) -> Result<Grads, ModelError> {
    if cache.revision != params.revision {
        return Err(ModelError::StaleCache);
    }
    let cfg = params.cfg;
    let (h, w) = (cache.h, cache.w);
    if d_log_heat.len() != h * w {
        return Err(ModelError::ShapeMismatch(
            "heatmap gradient size mismatch".into(),
        ));
    }
    if d_field.len() != h * w * cfg.desc_dim {
        return Err(ModelError::ShapeMismatch(
            "descriptor field gradient size mismatch".into(),
        ));
    }
    let (ch, cw) = (h / DOWNSAMPLE, w / DOWNSAMPLE);

    // Heat head: log-softmax backward, then down through the upsampling.
    let d_logits_full = Plane {
        channels: 1,
        h,
        w,
        data: softmax_log_backward(d_log_heat, &cache.heat_values),
    };
    let d_heat_coarse = upsample_backward(&d_logits_full, ch, cw, DOWNSAMPLE);
    let (d_heat_w, d_heat_b, d_r3_heat) = conv2d_backward(
        &d_heat_coarse,
        &cache.r3,
        &params.tensor(Layer::HeatW).data,
        1,
    );

    // Descriptor head.
    let d_desc_coarse = upsample_channel_last_backward(d_field, cfg.desc_dim, ch, cw, DOWNSAMPLE);
    let (d_desc_w, d_desc_b, d_r3_desc) = conv2d_backward(
        &d_desc_coarse,
        &cache.r3,
        &params.tensor(Layer::DescW).data,
        1,
    );

    // Shared encoder: heads' input gradients sum.
    let mut d_r3 = d_r3_heat;
    for (a, b) in d_r3.data.iter_mut().zip(&d_r3_desc.data) {
        *a += b;
    }
    let d_a3 = relu_backward(&d_r3, &cache.r3);
    let (d_w3, d_b3, d_r2) =
        conv2d_backward(&d_a3, &cache.r2, &params.tensor(Layer::Enc3W).data, 2);
    let d_a2 = relu_backward(&d_r2, &cache.r2);
    let (d_w2, d_b2, d_r1) =
        conv2d_backward(&d_a2, &cache.r1, &params.tensor(Layer::Enc2W).data, 2);
    let d_a1 = relu_backward(&d_r1, &cache.r1);
    let (d_w1, d_b1, _) =
        conv2d_backward(&d_a1, &cache.input, &params.tensor(Layer::Enc1W).data, 1);

    Ok(Grads {
        tensors: vec![
            d_w1, d_b1, d_w2, d_b2, d_w3, d_b3, d_heat_w, d_heat_b, d_desc_w, d_desc_b,
        ],
    })
}

/// Bilinear lookup in the descriptor field followed by L2 normalization.
pub fn descriptor_at(field: &DescriptorField, x: f64, y: f64) -> Result<Vec<f64>, ModelError> {
    let (v, _, _) = bilinear_descriptor(field, x, y)?;
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n = n.max(f64::MIN_POSITIVE);
    Ok(v.iter().map(|a| a / n).collect())
}

/// Accumulates the gradient of a unit-normalized descriptor lookup back into
/// a dense field gradient (channel-last, same layout as the field).
pub fn descriptor_at_backward(
    field: &DescriptorField,
    x: f64,
    y: f64,
    d_unit: &[f64],
    acc: &mut [f64],
) -> Result<(), ModelError> {
    if d_unit.len() != field.dim || acc.len() != field.data.len() {
        return Err(ModelError::ShapeMismatch(
            "descriptor gradient size mismatch".into(),
        ));
    }
    let (v, corners, weights) = bilinear_descriptor(field, x, y)?;
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let u: Vec<f64> = v.iter().map(|a| a / n).collect();
    let proj: f64 = u.iter().zip(d_unit).map(|(a, b)| a * b).sum();
    // d/dv of v/|v| applied to d_unit: (d_unit − u·(uᵀd_unit)) / |v|.
    let d_v: Vec<f64> = d_unit
        .iter()
        .zip(&u)
        .map(|(&g, &uc)| (g - uc * proj) / n)
        .collect();
    for (corner, wgt) in corners.iter().zip(weights.iter()) {
        let base = (corner.1 * field.w + corner.0) * field.dim;
        for (c, &dv) in d_v.iter().enumerate() {
            acc[base + c] += wgt * dv;
        }
    }
    Ok(())
}

type Corners = [(usize, usize); 4];

fn bilinear_descriptor(
    field: &DescriptorField,
    x: f64,
    y: f64,
) -> Result<(Vec<f64>, Corners, [f64; 4]), ModelError> {
    if !x.is_finite()
        || !y.is_finite()
        || x < 0.0
        || y < 0.0
        || x > (field.w - 1) as f64
        || y > (field.h - 1) as f64
    {
        return Err(ModelError::OutOfBounds { x, y });
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(field.w - 1);
    let y1 = (y0 + 1).min(field.h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let corners: Corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    let weights = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    let mut v = vec![0.0; field.dim];
    for (corner, wgt) in corners.iter().zip(weights.iter()) {
        let node = field.node(corner.0, corner.1);
        for (c, val) in node.iter().enumerate() {
            v[c] += wgt * val;
        }
    }
    Ok((v, corners, weights))
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
            v: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update; mutates the parameters and state in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), ModelError> {
    if grads.tensors.len() != params.tensors.len() {
        return Err(ModelError::ShapeMismatch("gradient tensor count".into()));
    }
    for (g, t) in grads.tensors.iter().zip(&params.tensors) {
        if g.len() != t.data.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "gradient size for {}",
                t.name
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (ti, tensor) in params.tensors.iter_mut().enumerate() {
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        let g = &grads.tensors[ti];
        for k in 0..tensor.data.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            tensor.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.revision += 1;
    Ok(())
}

#[cfg(test)]
mod tests;
