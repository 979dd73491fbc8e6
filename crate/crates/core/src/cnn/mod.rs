//! Small 3D convolutional network built from scratch: forward pass,
//! backpropagation, AdaGrad updates, rotational augmentation and
//! patch-stitched whole-volume inference.
//!
//! Default architecture: three 3x3x3 "same" convolutions with ReLU
//! activations and an ascending filter count, inverted dropout after the
//! first two, then a 1x1x1 convolution to one channel with a sigmoid, so
//! the output patch has the input patch's shape and values in (0, 1).

mod conv;
mod float;

pub use float::CnnFloat;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::volume::{extract_patches, stitch_patches, BinaryMask3, Dims, Volume3};
use conv::{col2im_into, conv_gemm_dcols, conv_gemm_dweights, conv_gemm_forward, im2col_into, ConvGeom};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnParams {
    pub patch_shape: (usize, usize, usize),
    /// Strictly ascending filter counts for the three hidden convolutions.
    pub filters: Vec<usize>,
    pub kernel_shape: (usize, usize, usize),
    /// Inverted-dropout ratio in [0, 1).
    pub dropout_ratio: f64,
    pub learning_rate: f64,
    pub adagrad_epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Strict threshold on the stitched soft volume.
    pub binarize_threshold: f64,
}

impl Default for CnnParams {
    fn default() -> Self {
        Self {
            patch_shape: (5, 10, 10),
            filters: vec![4, 8, 16],
            kernel_shape: (3, 3, 3),
            dropout_ratio: 0.2,
            learning_rate: 0.01,
            adagrad_epsilon: 1e-8,
            epochs: 20,
            batch_size: 32,
            binarize_threshold: 0.5,
        }
    }
}

impl CnnParams {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.filters.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(format!(
                "filters must be non-empty and strictly ascending, got {:?}",
                self.filters
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::Parameter(format!(
                "dropout_ratio must be in [0, 1), got {}",
                self.dropout_ratio
            )));
        }
        if self.learning_rate <= 0.0 || self.adagrad_epsilon <= 0.0 {
            return Err(Error::Parameter(
                "learning_rate and adagrad_epsilon must be > 0".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if !(0.0 < self.binarize_threshold && self.binarize_threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "binarize_threshold must be in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        for k in [self.kernel_shape.0, self.kernel_shape.1, self.kernel_shape.2] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Parameter(format!(
                    "kernel components must be odd, got {:?}",
                    self.kernel_shape
                )));
            }
        }
        if self.patch_shape.0 == 0 || self.patch_shape.1 == 0 || self.patch_shape.2 == 0 {
            return Err(Error::Parameter("patch_shape components must be >= 1".into()));
        }
        Ok(())
    }

    /// Patch extraction stride for training and inference: half the patch
    /// shape per axis, at least 1.
    pub fn stride(&self) -> Dims {
        (
            (self.patch_shape.0 / 2).max(1),
            (self.patch_shape.1 / 2).max(1),
            (self.patch_shape.2 / 2).max(1),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F: CnnFloat> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Dims,
    /// Flattened `out x in x kz x ky x kx`.
    pub weights: Vec<F>,
    pub bias: Vec<F>,
    pub activation: Activation,
    /// Inverted-dropout ratio applied after the activation in train mode.
    pub dropout: Option<f64>,
}

impl<F: CnnFloat> ConvLayer<F> {
    fn weight_rows(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1 * self.kernel.2
    }
}

/// Per-layer AdaGrad squared-gradient accumulators, shaped like the layer.
#[derive(Debug, Clone)]
pub struct AdaGradState<F: CnnFloat> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct CnnModel<F: CnnFloat> {
    pub params: CnnParams,
    pub layers: Vec<ConvLayer<F>>,
    pub accumulators: Vec<AdaGradState<F>>,
}

impl<F: CnnFloat> CnnModel<F> {
    /// Builds the default architecture with symmetric uniform weight init
    /// (`±sqrt(6 / (fan_in + fan_out))`) from the seed; biases start at 0.
    pub fn new(params: &CnnParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_ch = 1;
        let n = params.filters.len();
        for (i, &out_ch) in params.filters.iter().enumerate() {
            let dropout = if i + 1 < n && params.dropout_ratio > 0.0 {
                Some(params.dropout_ratio)
            } else {
                None
            };
            layers.push(init_layer(
                in_ch,
                out_ch,
                params.kernel_shape,
                Activation::Relu,
                dropout,
                &mut rng,
            ));
            in_ch = out_ch;
        }
        layers.push(init_layer(in_ch, 1, (1, 1, 1), Activation::Sigmoid, None, &mut rng));
        Ok(Self::from_layers(params.clone(), layers))
    }

    /// Wraps explicit layers (used by tests and by model loading); the
    /// AdaGrad accumulators start at zero.
    pub fn from_layers(params: CnnParams, layers: Vec<ConvLayer<F>>) -> Self {
        let accumulators = layers
            .iter()
            .map(|l| AdaGradState {
                weights: vec![F::ZERO; l.weights.len()],
                bias: vec![F::ZERO; l.bias.len()],
            })
            .collect();
        Self {
            params,
            layers,
            accumulators,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }
}

fn init_layer<F: CnnFloat>(
    in_channels: usize,
    out_channels: usize,
    kernel: Dims,
    activation: Activation,
    dropout: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> ConvLayer<F> {
    let klen = kernel.0 * kernel.1 * kernel.2;
    let fan_in = in_channels * klen;
    let fan_out = out_channels * klen;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let weights = (0..out_channels * fan_in)
        .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    ConvLayer {
        in_channels,
        out_channels,
        kernel,
        weights,
        bias: vec![F::ZERO; out_channels],
        activation,
        dropout,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

struct LayerCache<F: CnnFloat> {
    /// im2col matrix (absent for 1x1x1 kernels, where the input itself is
    /// kept instead).
    cols: Option<Vec<F>>,
    input: Option<Vec<F>>,
    /// Post-activation, pre-dropout output.
    post_act: Vec<F>,
    /// Per-element dropout scale (0 or 1/(1-r)).
    drop_scale: Option<Vec<F>>,
}

/// Intermediates retained by a train-mode forward pass for backprop.
pub struct ForwardCache<F: CnnFloat> {
    layers: Vec<LayerCache<F>>,
    outputs: Vec<F>,
    n_samples: usize,
    patch_shape: Dims,
    train_mode: bool,
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words.
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reusable buffer pool. Fresh multi-megabyte allocations dominate the
/// per-batch cost once the arithmetic sits in cache-blocked kernels, so the
/// training and inference loops recycle every large buffer through one of
/// these.
#[derive(Default)]
pub struct CnnScratch<F: CnnFloat> {
    pool: Vec<Vec<F>>,
}

impl<F: CnnFloat> CnnScratch<F> {
    pub fn new() -> Self {
        Self { pool: Vec::new() }
    }

    fn take(&mut self) -> Vec<F> {
        self.pool.pop().unwrap_or_default()
    }

    fn put(&mut self, mut buf: Vec<F>) {
        buf.clear();
        self.pool.push(buf);
    }

    /// Returns every buffer owned by a spent forward cache to the pool.
    pub fn absorb(&mut self, cache: ForwardCache<F>) {
        for lc in cache.layers {
            if let Some(c) = lc.cols {
                self.put(c);
            }
            if let Some(i) = lc.input {
                self.put(i);
            }
            self.put(lc.post_act);
            if let Some(d) = lc.drop_scale {
                self.put(d);
            }
        }
        self.put(cache.outputs);
    }

    pub fn recycle(&mut self, buf: Vec<F>) {
        self.put(buf);
    }
}

/// Forward pass over a batch of single-channel patches (concatenated
/// z-major grids). In train mode dropout layers zero units with ratio `r`
/// and scale survivors by `1/(1-r)`; in infer mode they are the identity.
pub fn cnn_forward<F: CnnFloat>(
    model: &CnnModel<F>,
    batch: &[F],
    n_samples: usize,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(Vec<F>, ForwardCache<F>)> {
    let mut scratch = CnnScratch::new();
    cnn_forward_scratch(model, batch, n_samples, mode, dropout_seed, &mut scratch)
}

/// [`cnn_forward`] drawing its buffers from a caller-held pool.
pub fn cnn_forward_scratch<F: CnnFloat>(
    model: &CnnModel<F>,
    batch: &[F],
    n_samples: usize,
    mode: Mode,
    dropout_seed: u64,
    scratch: &mut CnnScratch<F>,
) -> Result<(Vec<F>, ForwardCache<F>)> {
    let patch = model.params.patch_shape;
    let dhw = patch.0 * patch.1 * patch.2;
    if n_samples == 0 || batch.len() != n_samples * dhw {
        return Err(Error::Dimension(format!(
            "batch of {} values does not hold {} samples of shape {:?}",
            batch.len(),
            n_samples,
            patch
        )));
    }
    let cols_n = n_samples * dhw;
    let mut act: Vec<F> = scratch.take();
    act.extend_from_slice(batch);
    let mut caches = Vec::with_capacity(model.layers.len());

    for (li, layer) in model.layers.iter().enumerate() {
        if act.len() != layer.in_channels * cols_n {
            return Err(Error::Dimension(format!(
                "layer {li} expects {} input channels",
                layer.in_channels
            )));
        }
        let geom = ConvGeom {
            patch,
            kernel: layer.kernel,
            n_samples,
        };
        let rows = layer.weight_rows();
        let is_1x1 = layer.kernel == (1, 1, 1);
        let cols_mat = if is_1x1 {
            None
        } else {
            let mut cols = scratch.take();
            im2col_into(&act, layer.in_channels, &geom, &mut cols);
            Some(cols)
        };
        let mut out = scratch.take();
        {
            let mat = cols_mat.as_deref().unwrap_or(&act);
            conv_gemm_forward(
                &layer.weights,
                &layer.bias,
                mat,
                layer.out_channels,
                rows,
                cols_n,
                &mut out,
            );
        }
        // For 1x1 kernels the input itself is the column matrix; keep it
        // for backprop instead.
        let kept_input = if is_1x1 {
            Some(act)
        } else {
            scratch.put(act);
            None
        };

        match layer.activation {
            Activation::Relu => {
                for v in &mut out {
                    if *v < F::ZERO {
                        *v = F::ZERO;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in &mut out {
                    *v = F::ONE / (F::ONE + (-*v).exp());
                }
            }
            Activation::Identity => {}
        }
        let mut post_act = scratch.take();
        post_act.extend_from_slice(&out);

        let drop_scale = match (mode, layer.dropout) {
            (Mode::Train, Some(r)) if r > 0.0 => {
                let keep_scale = F::from_f64(1.0 / (1.0 - r));
                let ch_dhw = layer.out_channels * dhw;
                let mut scale = scratch.take();
                scale.resize(layer.out_channels * cols_n, F::ZERO);
                for s in 0..n_samples {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(mix_seed(dropout_seed, li as u64, s as u64));
                    for u in 0..ch_dhw {
                        let c = u / dhw;
                        let v = u % dhw;
                        let idx = c * cols_n + s * dhw + v;
                        scale[idx] = if rng.gen::<f64>() < r { F::ZERO } else { keep_scale };
                    }
                }
                for (o, &sc) in out.iter_mut().zip(&scale) {
                    *o *= sc;
                }
                Some(scale)
            }
            _ => None,
        };

        caches.push(LayerCache {
            cols: cols_mat,
            input: kept_input,
            post_act,
            drop_scale,
        });
        act = out;
    }

    let mut outputs = scratch.take();
    outputs.extend_from_slice(&act);
    let cache = ForwardCache {
        layers: caches,
        outputs,
        n_samples,
        patch_shape: patch,
        train_mode: mode == Mode::Train,
    };
    Ok((act, cache))
}

/// Mean squared error over every voxel in the batch.
pub fn cnn_loss<F: CnnFloat>(outputs: &[F], targets: &[F]) -> Result<f64> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::Dimension(format!(
            "loss shapes differ: {} outputs vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let sum: f64 = outputs
        .iter()
        .zip(targets)
        .map(|(&o, &t)| {
            let d = o.to_f64() - t.to_f64();
            d * d
        })
        .sum();
    Ok(sum / outputs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct LayerGradients<F: CnnFloat> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct CnnGradients<F: CnnFloat> {
    pub layers: Vec<LayerGradients<F>>,
}

/// Gradients of [`cnn_loss`] with respect to every weight and bias, using
/// the dropout masks recorded in the cache. `loss_scale` multiplies the
/// loss (1.0 for plain MSE; exposed so linearity is testable).
pub fn cnn_backward<F: CnnFloat>(
    model: &CnnModel<F>,
    cache: &ForwardCache<F>,
    targets: &[F],
    loss_scale: f64,
) -> Result<CnnGradients<F>> {
    let mut scratch = CnnScratch::new();
    cnn_backward_scratch(model, cache, targets, loss_scale, &mut scratch)
}

/// [`cnn_backward`] drawing its buffers from a caller-held pool.
pub fn cnn_backward_scratch<F: CnnFloat>(
    model: &CnnModel<F>,
    cache: &ForwardCache<F>,
    targets: &[F],
    loss_scale: f64,
    scratch: &mut CnnScratch<F>,
) -> Result<CnnGradients<F>> {
    if !cache.train_mode {
        return Err(Error::State("backward requires a train-mode forward cache".into()));
    }
    if cache.layers.len() != model.layers.len() {
        return Err(Error::State("cache does not match model layer count".into()));
    }
    if targets.len() != cache.outputs.len() {
        return Err(Error::Dimension(format!(
            "targets length {} does not match outputs {}",
            targets.len(),
            cache.outputs.len()
        )));
    }
    let patch = cache.patch_shape;
    let dhw = patch.0 * patch.1 * patch.2;
    let cols_n = cache.n_samples * dhw;

    // d(mean squared error)/d(output).
    let scale = F::from_f64(2.0 * loss_scale / targets.len() as f64);
    let mut d_act: Vec<F> = scratch.take();
    d_act.extend(
        cache
            .outputs
            .iter()
            .zip(targets)
            .map(|(&o, &t)| (o - t) * scale),
    );

    let mut d_cols_buf: Vec<F> = scratch.take();
    let mut grads: Vec<LayerGradients<F>> = Vec::with_capacity(model.layers.len());
    for (layer, lc) in model.layers.iter().zip(&cache.layers).rev() {
        // Through dropout.
        if let Some(scale) = &lc.drop_scale {
            for (d, &s) in d_act.iter_mut().zip(scale) {
                *d *= s;
            }
        }
        // Through the activation.
        let mut dz = d_act;
        match layer.activation {
            Activation::Relu => {
                for (d, &a) in dz.iter_mut().zip(&lc.post_act) {
                    if a <= F::ZERO {
                        *d = F::ZERO;
                    }
                }
            }
            Activation::Sigmoid => {
                for (d, &s) in dz.iter_mut().zip(&lc.post_act) {
                    *d *= s * (F::ONE - s);
                }
            }
            Activation::Identity => {}
        }

        let rows = layer.weight_rows();
        let cols_mat = lc.cols.as_deref().or(lc.input.as_deref()).ok_or_else(|| {
            Error::State("layer cache missing its column matrix".into())
        })?;
        let dw = conv_gemm_dweights(&dz, cols_mat, layer.out_channels, rows, cols_n);
        let mut db = vec![F::ZERO; layer.out_channels];
        for (o, dbo) in db.iter_mut().enumerate() {
            let mut acc = F::ZERO;
            for &v in &dz[o * cols_n..(o + 1) * cols_n] {
                acc += v;
            }
            *dbo = acc;
        }
        d_act = if layer.kernel == (1, 1, 1) {
            let mut d_input = scratch.take();
            conv_gemm_dcols(&layer.weights, &dz, layer.out_channels, rows, cols_n, &mut d_input);
            d_input
        } else {
            conv_gemm_dcols(&layer.weights, &dz, layer.out_channels, rows, cols_n, &mut d_cols_buf);
            let geom = ConvGeom {
                patch,
                kernel: layer.kernel,
                n_samples: cache.n_samples,
            };
            let mut d_input = scratch.take();
            col2im_into(&d_cols_buf, layer.in_channels, &geom, &mut d_input);
            d_input
        };
        scratch.put(dz);
        grads.push(LayerGradients { weights: dw, bias: db });
    }
    scratch.put(d_act);
    scratch.put(d_cols_buf);
    grads.reverse();
    Ok(CnnGradients { layers: grads })
}

/// One AdaGrad update: `G += g^2; w -= eta * g / (sqrt(G) + epsilon)`.
/// Accumulators persist in the model across steps.
pub fn adagrad_step<F: CnnFloat>(
    model: &mut CnnModel<F>,
    gradients: &CnnGradients<F>,
    eta: f64,
    epsilon: f64,
) -> Result<()> {
    if gradients.layers.len() != model.layers.len() {
        return Err(Error::Dimension("gradient layer count does not match model".into()));
    }
    let eta = F::from_f64(eta);
    let eps = F::from_f64(epsilon);
    for ((layer, acc), grad) in model
        .layers
        .iter_mut()
        .zip(&mut model.accumulators)
        .zip(&gradients.layers)
    {
        if grad.weights.len() != layer.weights.len() || grad.bias.len() != layer.bias.len() {
            return Err(Error::Dimension("gradient shapes do not match layer".into()));
        }
        if grad.weights.iter().chain(&grad.bias).any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in adagrad step".into()));
        }
        for ((w, g), a) in layer.weights.iter_mut().zip(&grad.weights).zip(&mut acc.weights) {
            *a += *g * *g;
            *w -= eta * *g / (a.sqrt() + eps);
        }
        for ((b, g), a) in layer.bias.iter_mut().zip(&grad.bias).zip(&mut acc.bias) {
            *a += *g * *g;
            *b -= eta * *g / (a.sqrt() + eps);
        }
    }
    Ok(())
}

/// One training sample: an input patch and its target label grid, both
/// z-major with the model's patch shape.
#[derive(Debug, Clone)]
pub struct TrainSample<F: CnnFloat> {
    pub input: Vec<F>,
    pub target: Vec<F>,
}

/// Rotates a z-major grid by 90 degrees in the (y, x) plane, `quarter`
/// times. In-plane dims must be square.
fn rotate_quarter<F: CnnFloat>(grid: &[F], shape: Dims, quarters: usize) -> Vec<F> {
    let (d, h, w) = shape;
    debug_assert_eq!(h, w);
    let mut src = grid.to_vec();
    for _ in 0..quarters % 4 {
        let mut dst = vec![F::ZERO; src.len()];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    // 90-degree rotation: (y, x) <- (x, h-1-y).
                    dst[(z * h + y) * w + x] = src[(z * h + x) * w + (h - 1 - y)];
                }
            }
        }
        src = dst;
    }
    src
}

/// Emits each sample under the four right-angle rotations about the z axis
/// (labels rotate identically); output order is sample-major, rotation
/// k = 0..3 within each sample.
pub fn augment_rotations<F: CnnFloat>(
    samples: &[TrainSample<F>],
    shape: Dims,
) -> Result<Vec<TrainSample<F>>> {
    if shape.1 != shape.2 {
        return Err(Error::Dimension(format!(
            "rotational augmentation needs square in-plane dims, got {:?}",
            shape
        )));
    }
    let mut out = Vec::with_capacity(samples.len() * 4);
    for sample in samples {
        for k in 0..4 {
            out.push(TrainSample {
                input: rotate_quarter(&sample.input, shape, k),
                target: rotate_quarter(&sample.target, shape, k),
            });
        }
    }
    Ok(out)
}

/// Extracts aligned (patch, label) samples from a volume and mask at the
/// model stride.
pub fn extract_training_samples<F: CnnFloat>(
    volume: &Volume3,
    mask: &BinaryMask3,
    params: &CnnParams,
) -> Result<Vec<TrainSample<F>>> {
    if volume.dims() != mask.dims() {
        return Err(Error::Dimension(format!(
            "volume dims {:?} do not match mask dims {:?}",
            volume.dims(),
            mask.dims()
        )));
    }
    let shape = params.patch_shape;
    let patches = extract_patches(volume, shape, params.stride())?;
    let mut samples = Vec::with_capacity(patches.len());
    for patch in patches {
        let input: Vec<F> = patch
            .intensities
            .iter()
            .map(|&v| F::from_f64(f64::from(v)))
            .collect();
        let mut target = Vec::with_capacity(patch.len());
        let (oz, oy, ox) = patch.origin;
        for z in 0..shape.0 {
            for y in 0..shape.1 {
                for x in 0..shape.2 {
                    target.push(F::from_f64(f64::from(mask.get(oz + z, oy + y, ox + x))));
                }
            }
        }
        samples.push(TrainSample { input, target });
    }
    Ok(samples)
}

/// Mini-batch AdaGrad training over patch/label pairs extracted from the
/// given cases: augment by rotation, shuffle once with the seed, then run
/// the configured number of epochs. Returns the per-epoch mean loss.
pub fn cnn_train<F: CnnFloat>(
    model: &mut CnnModel<F>,
    cases: &[(&Volume3, &BinaryMask3)],
    params: &CnnParams,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if cases.is_empty() {
        return Err(Error::Input("training requires at least one volume".into()));
    }
    if params.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut samples: Vec<TrainSample<F>> = Vec::new();
    for (volume, mask) in cases {
        samples.extend(extract_training_samples(volume, mask, params)?);
    }
    if samples.is_empty() {
        return Err(Error::Input("no training patches could be extracted".into()));
    }
    let mut samples = augment_rotations(&samples, params.patch_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5F, 1));
    shuffle(&mut samples, &mut rng);

    // Start the output layer at the foreground prior. From a zero bias the
    // background majority drives the pre-activation deep into sigmoid
    // saturation before the minority gradient can balance it, and AdaGrad's
    // accumulated history then freezes the collapse; starting at the
    // logit of the target mean removes the transient entirely.
    if let Some(last) = model.layers.last_mut() {
        let total: f64 = samples
            .iter()
            .map(|s| s.target.iter().map(|t| t.to_f64()).sum::<f64>())
            .sum();
        let count: usize = samples.iter().map(|s| s.target.len()).sum();
        let q = (total / count as f64).clamp(1e-3, 1.0 - 1e-3);
        let prior = F::from_f64((q / (1.0 - q)).ln());
        for b in &mut last.bias {
            *b = prior;
        }
    }

    train_on_samples(model, &samples, params, seed)
}

// Fisher-Yates; rand's SliceRandom would work too, this keeps the swap
// order explicit and version-independent.
fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Epoch/batch loop shared by [`cnn_train`] and the single-patch overfit
/// oracle; samples are consumed in the given order.
pub fn train_on_samples<F: CnnFloat>(
    model: &mut CnnModel<F>,
    samples: &[TrainSample<F>],
    params: &CnnParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(params.epochs);
    let mut step: u64 = 0;
    let mut scratch = CnnScratch::new();
    let mut inputs: Vec<F> = Vec::new();
    let mut targets: Vec<F> = Vec::new();
    for _epoch in 0..params.epochs {
        let mut epoch_loss = 0.0;
        let mut counted = 0usize;
        for batch in samples.chunks(params.batch_size) {
            let n = batch.len();
            inputs.clear();
            targets.clear();
            for s in batch {
                inputs.extend_from_slice(&s.input);
                targets.extend_from_slice(&s.target);
            }
            let dropout_seed = mix_seed(seed, 0xD0, step);
            let (outputs, cache) =
                cnn_forward_scratch(model, &inputs, n, Mode::Train, dropout_seed, &mut scratch)?;
            let loss = cnn_loss(&outputs, &targets)?;
            let grads = cnn_backward_scratch(model, &cache, &targets, 1.0, &mut scratch)?;
            adagrad_step(model, &grads, params.learning_rate, params.adagrad_epsilon)?;
            scratch.absorb(cache);
            scratch.recycle(outputs);
            epoch_loss += loss * n as f64;
            counted += n;
            step += 1;
        }
        trace.push(epoch_loss / counted as f64);
    }
    Ok(trace)
}

/// Infer-mode forward over stride-half patches, stitched by mean and
/// binarized with a strict threshold.
pub fn cnn_segment_volume<F: CnnFloat>(
    model: &CnnModel<F>,
    volume: &Volume3,
    params: &CnnParams,
) -> Result<BinaryMask3> {
    params.validate()?;
    let shape = params.patch_shape;
    let dims = volume.dims();
    if shape.0 > dims.0 || shape.1 > dims.1 || shape.2 > dims.2 {
        return Err(Error::Dimension(format!(
            "volume dims {:?} smaller than patch shape {:?}",
            dims, shape
        )));
    }
    let patches = extract_patches(volume, shape, params.stride())?;
    let dhw = shape.0 * shape.1 * shape.2;
    let mut scratch = CnnScratch::new();
    let mut inputs: Vec<F> = Vec::new();
    let mut stitched: Vec<(crate::volume::Patch3, Vec<f32>)> = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(params.batch_size.max(1)) {
        inputs.clear();
        for p in chunk {
            inputs.extend(p.intensities.iter().map(|&v| F::from_f64(f64::from(v))));
        }
        let (outputs, cache) =
            cnn_forward_scratch(model, &inputs, chunk.len(), Mode::Infer, 0, &mut scratch)?;
        for (i, p) in chunk.iter().enumerate() {
            let values: Vec<f32> = outputs[i * dhw..(i + 1) * dhw]
                .iter()
                .map(|&v| v.to_f64() as f32)
                .collect();
            stitched.push((p.clone(), values));
        }
        scratch.absorb(cache);
        scratch.recycle(outputs);
    }
    let soft = stitch_patches(&stitched, dims, volume.spacing())?;
    let threshold = params.binarize_threshold as f32;
    let data: Vec<u8> = soft.data().iter().map(|&v| u8::from(v > threshold)).collect();
    BinaryMask3::new(dims, data)
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 3],
    activation: Activation,
    dropout: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    params: CnnParams,
    layers: Vec<LayerHeader>,
    payload: String,
}

/// Persists an f32 model: JSON header describing the architecture plus a
/// little-endian f32 payload of weights, bias and both AdaGrad accumulators
/// per layer, in layer order. Roundtrip is bit-exact.
pub fn save_model(model: &CnnModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let payload_name = format!("{stem}.raw");
    let header = ModelHeader {
        params: model.params.clone(),
        layers: model
            .layers
            .iter()
            .map(|l| LayerHeader {
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                kernel: [l.kernel.0, l.kernel.1, l.kernel.2],
                activation: l.activation,
                dropout: l.dropout,
            })
            .collect(),
        payload: payload_name.clone(),
    };
    let mut bytes = Vec::new();
    for (layer, acc) in model.layers.iter().zip(&model.accumulators) {
        for v in layer
            .weights
            .iter()
            .chain(&layer.bias)
            .chain(&acc.weights)
            .chain(&acc.bias)
        {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    write_atomic(&dir.join(&payload_name), &bytes)?;
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(path, text.as_bytes())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel<f32>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: ModelHeader = serde_json::from_str(&text).map_err(|e| Error::HeaderParse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let raw_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let mut expected = 0usize;
    for l in &header.layers {
        let klen = l.kernel.iter().product::<usize>();
        expected += 2 * (l.out_channels * l.in_channels * klen + l.out_channels);
    }
    if floats.len() != expected {
        return Err(Error::LengthMismatch {
            path: raw_path,
            expected: expected * 4,
            found: bytes.len(),
        });
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    let mut accumulators = Vec::with_capacity(header.layers.len());
    let mut offset = 0usize;
    for lh in &header.layers {
        let klen = lh.kernel.iter().product::<usize>();
        let w_len = lh.out_channels * lh.in_channels * klen;
        let b_len = lh.out_channels;
        let weights = floats[offset..offset + w_len].to_vec();
        offset += w_len;
        let bias = floats[offset..offset + b_len].to_vec();
        offset += b_len;
        let acc_w = floats[offset..offset + w_len].to_vec();
        offset += w_len;
        let acc_b = floats[offset..offset + b_len].to_vec();
        offset += b_len;
        layers.push(ConvLayer {
            in_channels: lh.in_channels,
            out_channels: lh.out_channels,
            kernel: (lh.kernel[0], lh.kernel[1], lh.kernel[2]),
            weights,
            bias,
            activation: lh.activation,
            dropout: lh.dropout,
        });
        accumulators.push(AdaGradState {
            weights: acc_w,
            bias: acc_b,
        });
    }
    Ok(CnnModel {
        params: header.params,
        layers,
        accumulators,
    })
}



#[cfg(test)]
mod bench_probe {
    use super::*;

    #[test]
    #[ignore]
    fn epoch_timing() {
        let suite = crate::phantom::standard_suite(crate::phantom::Difficulty::Easy);
        let cases: Vec<(&Volume3, &crate::volume::BinaryMask3)> = [0usize, 2, 4]
            .iter()
            .map(|&i| (&suite[i].volume, &suite[i].mask))
            .collect();
        for filters in [vec![2usize, 4, 8], vec![4, 8, 16], vec![8, 16, 32]] {
            let params = CnnParams {
                filters: filters.clone(),
                epochs: 1,
                ..CnnParams::default()
            };
            let mut model = CnnModel::<f32>::new(&params, 1).unwrap();
            let t = std::time::Instant::now();
            let trace = cnn_train(&mut model, &cases, &params, 2).unwrap();
            eprintln!(
                "filters {:?}: 1 epoch in {:.1?} (loss {:.5})",
                filters,
                t.elapsed(),
                trace[0]
            );
        }
    }
}
