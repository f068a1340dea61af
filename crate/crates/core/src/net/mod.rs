//! The fingerprint classifier: a stack of 1-D convolutions with selu
//! activations and max-pooling, a spatial-attention block with a skip
//! connection, and a dense head with alpha dropout and a softmax output.
//! Forward, backward and the training loop are implemented here directly;
//! everything is f64 and deterministic under a seed.

mod adam;
mod checkpoint;
mod layers;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use layers::{SELU_ALPHA, SELU_LAMBDA};

use crate::chansim::gaussian;
use layers::*;
use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match configured {want:?}")]
    ShapeMismatch {
        want: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("training set is degenerate: {0}")]
    Degenerate(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_conv: usize,
    pub filters: usize,
    /// One odd kernel width per conv layer.
    pub kernel_widths: Vec<usize>,
    pub pool_width: usize,
    pub attention_kernel_width: usize,
    pub dense_sizes: Vec<usize>,
    /// Retain probabilities of the alpha-dropout layers, one per hidden
    /// dense layer.
    pub dropout_keep: Vec<f64>,
    pub n_classes: usize,
    /// `(rows, cols, channels)` of the input tensor.
    pub input_shape: (usize, usize, usize),
}

impl NetConfig {
    /// The stock architecture: five 128-filter conv layers with widths
    /// 7/7/7/5/3, pooling by 2 after each, a width-5 attention kernel and
    /// a 128/64 dense head with 0.5/0.2 retain rates.
    pub fn with_defaults(n_classes: usize, input_shape: (usize, usize, usize)) -> Self {
        Self {
            n_conv: 5,
            filters: 128,
            kernel_widths: vec![7, 7, 7, 5, 3],
            pool_width: 2,
            attention_kernel_width: 5,
            dense_sizes: vec![128, 64],
            dropout_keep: vec![0.5, 0.2],
            n_classes,
            input_shape,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.kernel_widths.len() != self.n_conv {
            return Err(NetError::Config(format!(
                "{} kernel widths for {} conv layers",
                self.kernel_widths.len(),
                self.n_conv
            )));
        }
        if self.kernel_widths.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(NetError::Config(
                "kernel widths must be odd for same padding".into(),
            ));
        }
        if self.attention_kernel_width == 0 || self.attention_kernel_width % 2 == 0 {
            return Err(NetError::Config("attention kernel width must be odd".into()));
        }
        if self.dropout_keep.len() != self.dense_sizes.len() {
            return Err(NetError::Config(format!(
                "{} dropout rates for {} dense layers",
                self.dropout_keep.len(),
                self.dense_sizes.len()
            )));
        }
        if self.dropout_keep.iter().any(|&k| !(0.0 < k && k <= 1.0)) {
            return Err(NetError::Config("retain probabilities must be in (0, 1]".into()));
        }
        if self.n_classes < 2 || self.filters == 0 || self.n_conv == 0 || self.pool_width == 0 {
            return Err(NetError::Config("all counts must be >= 1, classes >= 2".into()));
        }
        let (rows, cols, ch) = self.input_shape;
        if rows == 0 || cols == 0 || ch == 0 {
            return Err(NetError::Config("input shape must be non-zero".into()));
        }
        if self.final_width() == 0 {
            return Err(NetError::Config(
                "input too narrow: pooling collapses it to zero columns".into(),
            ));
        }
        Ok(())
    }

    /// Column count after the conv/pool stack (floor division per pool).
    pub fn final_width(&self) -> usize {
        let mut w = self.input_shape.1;
        for _ in 0..self.n_conv {
            w /= self.pool_width;
        }
        w
    }

    pub fn flatten_len(&self) -> usize {
        self.input_shape.0 * self.final_width() * self.filters
    }

    /// Trainable scalar count derived from the layer formulas.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut cin = self.input_shape.2;
        for &kw in &self.kernel_widths {
            total += kw * cin * self.filters + self.filters;
            cin = self.filters;
        }
        total += self.attention_kernel_width * 2 + 1;
        let mut fan_in = self.flatten_len();
        for &d in &self.dense_sizes {
            total += fan_in * d + d;
            fan_in = d;
        }
        total += fan_in * self.n_classes + self.n_classes;
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `(width, c_in, c_out)`.
    pub kernel: Array3<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `(in, out)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// The trainable tensors, in forward order. The same structure doubles as
/// the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub convs: Vec<ConvParams>,
    pub attention: ConvParams,
    /// Hidden dense layers followed by the output layer.
    pub dense: Vec<DenseParams>,
}

impl ModelParams {
    pub fn zeros(config: &NetConfig) -> Self {
        let mut convs = Vec::with_capacity(config.n_conv);
        let mut cin = config.input_shape.2;
        for &kw in &config.kernel_widths {
            convs.push(ConvParams {
                kernel: Array3::zeros((kw, cin, config.filters)),
                bias: Array1::zeros(config.filters),
            });
            cin = config.filters;
        }
        let attention = ConvParams {
            kernel: Array3::zeros((config.attention_kernel_width, 2, 1)),
            bias: Array1::zeros(1),
        };
        let mut dense = Vec::new();
        let mut fan_in = config.flatten_len();
        for &d in config.dense_sizes.iter().chain(&[config.n_classes]) {
            dense.push(DenseParams {
                weight: Array2::zeros((fan_in, d)),
                bias: Array1::zeros(d),
            });
            fan_in = d;
        }
        Self {
            convs,
            attention,
            dense,
        }
    }

    /// LeCun-normal weights (std `1/sqrt(fan_in)`), zero biases; the
    /// standard init for selu stacks.
    pub fn init(config: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        for conv in &mut p.convs {
            let fan_in = (conv.kernel.dim().0 * conv.kernel.dim().1) as f64;
            let std = fan_in.sqrt().recip();
            conv.kernel.mapv_inplace(|_| gaussian(&mut rng) * std);
        }
        {
            let fan_in = (p.attention.kernel.dim().0 * p.attention.kernel.dim().1) as f64;
            let std = fan_in.sqrt().recip();
            p.attention.kernel.mapv_inplace(|_| gaussian(&mut rng) * std);
        }
        for d in &mut p.dense {
            let std = (d.weight.dim().0 as f64).sqrt().recip();
            d.weight.mapv_inplace(|_| gaussian(&mut rng) * std);
        }
        p
    }

    /// Total trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Named views of every tensor, in a stable order.
    pub fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.kernel"), c.kernel.iter().copied().collect()));
            out.push((format!("conv{i}.bias"), c.bias.to_vec()));
        }
        out.push((
            "attention.kernel".into(),
            self.attention.kernel.iter().copied().collect(),
        ));
        out.push(("attention.bias".into(), self.attention.bias.to_vec()));
        for (i, d) in self.dense.iter().enumerate() {
            out.push((format!("dense{i}.weight"), d.weight.iter().copied().collect()));
            out.push((format!("dense{i}.bias"), d.bias.to_vec()));
        }
        out
    }

    /// Element-wise `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.kernel.zip_mut_with(&b.kernel, |x, &y| *x += y * scale);
            a.bias.zip_mut_with(&b.bias, |x, &y| *x += y * scale);
        }
        self.attention
            .kernel
            .zip_mut_with(&other.attention.kernel, |x, &y| *x += y * scale);
        self.attention
            .bias
            .zip_mut_with(&other.attention.bias, |x, &y| *x += y * scale);
        for (a, b) in self.dense.iter_mut().zip(&other.dense) {
            a.weight.zip_mut_with(&b.weight, |x, &y| *x += y * scale);
            a.bias.zip_mut_with(&b.bias, |x, &y| *x += y * scale);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for c in &mut self.convs {
            c.kernel.mapv_inplace(|v| v * factor);
            c.bias.mapv_inplace(|v| v * factor);
        }
        self.attention.kernel.mapv_inplace(|v| v * factor);
        self.attention.bias.mapv_inplace(|v| v * factor);
        for d in &mut self.dense {
            d.weight.mapv_inplace(|v| v * factor);
            d.bias.mapv_inplace(|v| v * factor);
        }
    }
}

/// Pre-sampled dropout masks, one per hidden dense layer.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub masks: Vec<Array1<f64>>,
}

impl DropoutMasks {
    pub fn sample(config: &NetConfig, rng: &mut impl Rng) -> Self {
        let masks = config
            .dense_sizes
            .iter()
            .zip(&config.dropout_keep)
            .map(|(&size, &keep)| {
                Array1::from_shape_fn(size, |_| f64::from(rng.gen_bool(keep)))
            })
            .collect();
        Self { masks }
    }
}

struct ConvStageCache {
    conv: ConvCache,
    pre_act: Array3<f64>,
    act_shape: (usize, usize, usize),
    argmax: Array3<usize>,
}

struct ForwardCache {
    conv_stages: Vec<ConvStageCache>,
    attn: AttentionCache,
    attn_out_shape: (usize, usize, usize),
    flat: Array1<f64>,
    dense_pre: Vec<Array1<f64>>,
    dense_dropped: Vec<Array1<f64>>,
    probs: Array1<f64>,
}

fn forward_impl(
    params: &ModelParams,
    config: &NetConfig,
    x: &Array3<f64>,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardCache, NetError> {
    if x.dim() != config.input_shape {
        return Err(NetError::ShapeMismatch {
            want: config.input_shape,
            got: x.dim(),
        });
    }
    let mut cur = x.clone();
    let mut conv_stages = Vec::with_capacity(config.n_conv);
    for conv in &params.convs {
        let (pre, cache) = conv_forward(&cur, &conv.kernel, &conv.bias);
        let act = selu_forward3(&pre);
        let (pooled, argmax) = pool_forward(&act, config.pool_width);
        conv_stages.push(ConvStageCache {
            conv: cache,
            pre_act: pre,
            act_shape: act.dim(),
            argmax,
        });
        cur = pooled;
    }

    let (attn_out, attn) =
        attention_forward(&cur, &params.attention.kernel, &params.attention.bias);
    let attn_out_shape = attn_out.dim();
    let flat = Array1::from_iter(attn_out.iter().copied());

    let mut dense_pre = Vec::new();
    let mut dense_dropped = Vec::new();
    let mut vec = flat.clone();
    let hidden = params.dense.len() - 1;
    for (i, d) in params.dense.iter().take(hidden).enumerate() {
        let pre = dense_forward(&vec, &d.weight, &d.bias);
        let act = selu_forward1(&pre);
        let dropped = alpha_dropout_forward(
            &act,
            config.dropout_keep[i],
            masks.map(|m| &m.masks[i]),
        );
        dense_pre.push(pre);
        dense_dropped.push(dropped.clone());
        vec = dropped;
    }
    let out = params.dense.last().expect("output layer");
    let logits = dense_forward(&vec, &out.weight, &out.bias);
    let probs = softmax(&logits);

    Ok(ForwardCache {
        conv_stages,
        attn,
        attn_out_shape,
        flat,
        dense_pre,
        dense_dropped,
        probs,
    })
}

/// Class probabilities for one input (inference mode, no dropout).
pub fn forward(
    params: &ModelParams,
    config: &NetConfig,
    x: &Array3<f64>,
) -> Result<Array1<f64>, NetError> {
    Ok(forward_impl(params, config, x, None)?.probs)
}

/// Cross-entropy of one sample under the given dropout masks.
pub fn sample_loss(
    params: &ModelParams,
    config: &NetConfig,
    x: &Array3<f64>,
    label: usize,
    masks: Option<&DropoutMasks>,
) -> Result<f64, NetError> {
    let cache = forward_impl(params, config, x, masks)?;
    Ok(-cache.probs[label].max(1e-300).ln())
}

/// Mean cross-entropy over a batch (inference mode).
pub fn loss(
    params: &ModelParams,
    config: &NetConfig,
    batch: &[(Array3<f64>, usize)],
) -> Result<f64, NetError> {
    let mut total = 0.0;
    for (x, label) in batch {
        total += sample_loss(params, config, x, *label, None)?;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Loss and parameter gradients for one sample.
pub fn backward_sample(
    params: &ModelParams,
    config: &NetConfig,
    x: &Array3<f64>,
    label: usize,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, ModelParams), NetError> {
    let cache = forward_impl(params, config, x, masks)?;
    let loss = -cache.probs[label].max(1e-300).ln();
    let mut grads = ModelParams::zeros(config);

    // Softmax + cross-entropy: dlogits = p - onehot.
    let mut dvec = cache.probs.clone();
    dvec[label] -= 1.0;

    let hidden = params.dense.len() - 1;
    let out_layer = &params.dense[hidden];
    let out_input = if hidden == 0 {
        &cache.flat
    } else {
        &cache.dense_dropped[hidden - 1]
    };
    let (mut dvec, dw, db) = dense_backward(out_input, &out_layer.weight, &dvec);
    grads.dense[hidden].weight = dw;
    grads.dense[hidden].bias = db;

    for i in (0..hidden).rev() {
        let d_dropped = alpha_dropout_backward(
            config.dropout_keep[i],
            masks.map(|m| &m.masks[i]),
            &dvec,
        );
        let d_pre = selu_backward1(&cache.dense_pre[i], &d_dropped);
        let input = if i == 0 {
            &cache.flat
        } else {
            &cache.dense_dropped[i - 1]
        };
        let (dx, dw, db) = dense_backward(input, &params.dense[i].weight, &d_pre);
        grads.dense[i].weight = dw;
        grads.dense[i].bias = db;
        dvec = dx;
    }

    let d_attn_out = dvec
        .into_shape_with_order(cache.attn_out_shape)
        .expect("flatten round trip");
    let (mut dcur, d_attn_kernel, d_attn_bias) =
        attention_backward(&cache.attn, &params.attention.kernel, &d_attn_out);
    grads.attention.kernel = d_attn_kernel;
    grads.attention.bias = d_attn_bias;

    for (i, stage) in cache.conv_stages.iter().enumerate().rev() {
        let d_act = pool_backward(stage.act_shape, &stage.argmax, &dcur);
        let d_pre = selu_backward3(&stage.pre_act, &d_act);
        let (dx, dk, db) = conv_backward(&stage.conv, &params.convs[i].kernel, &d_pre);
        grads.convs[i].kernel = dk;
        grads.convs[i].bias = db;
        dcur = dx;
    }

    Ok((loss, grads))
}

/// Mean loss and mean gradients over a batch, with per-sample dropout
/// masks. Samples are processed in fixed-size chunks that reduce in
/// order, so the result does not depend on the thread count.
pub fn backward(
    params: &ModelParams,
    config: &NetConfig,
    batch: &[(Array3<f64>, usize)],
    masks: Option<&[DropoutMasks]>,
) -> Result<(f64, ModelParams), NetError> {
    const CHUNK: usize = 8;
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(NetError::Config("one mask set per sample required".into()));
        }
    }
    let chunks: Result<Vec<(f64, ModelParams)>, NetError> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut loss_sum = 0.0;
            let mut grad_sum = ModelParams::zeros(config);
            for (j, (x, label)) in chunk.iter().enumerate() {
                let mask = masks.map(|m| &m[ci * CHUNK + j]);
                let (l, g) = backward_sample(params, config, x, *label, mask)?;
                loss_sum += l;
                grad_sum.add_scaled(&g, 1.0);
            }
            Ok((loss_sum, grad_sum))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut grads = ModelParams::zeros(config);
    for (l, g) in chunks? {
        loss_sum += l;
        grads.add_scaled(&g, 1.0);
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((loss_sum / n, grads))
}

/// A labeled feature collection ready for training or evaluation.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet {
    pub samples: Vec<Array3<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stop after this many epochs without a new best validation
    /// accuracy.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub class_names: Vec<String>,
}

/// Mini-batch training with the adaptive moment optimizer and early
/// stopping on validation accuracy. Returns the parameters of the best
/// validation epoch. Deterministic for a given seed.
pub fn train(
    config: &NetConfig,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    opts: &TrainOptions,
) -> Result<TrainResult, NetError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NetError::Degenerate("empty training set".into()));
    }
    let distinct: std::collections::BTreeSet<usize> = train_set.labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(NetError::Degenerate(format!(
            "training set has {} distinct class(es)",
            distinct.len()
        )));
    }
    if let Some(&max_label) = distinct.iter().max() {
        if max_label >= config.n_classes {
            return Err(NetError::Degenerate(format!(
                "label {max_label} outside 0..{}",
                config.n_classes
            )));
        }
    }

    let mut params = ModelParams::init(config, opts.seed);
    let mut optimizer = Adam::new(config, opts.learning_rate);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..opts.max_epochs {
        let mut shuffle_rng =
            ChaCha12Rng::seed_from_u64(crate::chansim::mix_seed(opts.seed, 0x5u64, epoch as u64));
        // Fisher-Yates.
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut mask_rng =
            ChaCha12Rng::seed_from_u64(crate::chansim::mix_seed(opts.seed, 0xdu64, epoch as u64));
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(opts.batch_size) {
            let batch: Vec<(Array3<f64>, usize)> = batch_idx
                .iter()
                .map(|&i| (train_set.samples[i].clone(), train_set.labels[i]))
                .collect();
            let masks: Vec<DropoutMasks> = batch
                .iter()
                .map(|_| DropoutMasks::sample(config, &mut mask_rng))
                .collect();
            let (l, grads) = backward(&params, config, &batch, Some(&masks))?;
            optimizer.step(&mut params, &grads);
            epoch_loss += l * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = epoch_loss / seen.max(1) as f64;

        let val_accuracy = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate(&params, config, val_set)?.accuracy
        };
        history.push(EpochStats {
            epoch,
            train_loss,
            val_accuracy,
        });

        if val_set.is_empty() || val_accuracy > best_acc {
            best_acc = val_accuracy;
            best_params = params.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= opts.patience {
            break;
        }
    }

    Ok(TrainResult {
        params: best_params,
        history,
        best_epoch,
        class_names: train_set.class_names.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Rows are true classes, columns predicted.
    pub confusion: Array2<usize>,
}

/// Accuracy and confusion matrix over a labeled set (inference mode).
pub fn evaluate(
    params: &ModelParams,
    config: &NetConfig,
    set: &LabeledSet,
) -> Result<EvalReport, NetError> {
    let preds: Result<Vec<usize>, NetError> = set
        .samples
        .par_iter()
        .map(|x| {
            let p = forward(params, config, x)?;
            Ok(argmax(&p))
        })
        .collect();
    let preds = preds?;
    let mut confusion = Array2::<usize>::zeros((config.n_classes, config.n_classes));
    let mut correct = 0usize;
    for (&pred, &truth) in preds.iter().zip(&set.labels) {
        confusion[(truth, pred)] += 1;
        if pred == truth {
            correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / set.len().max(1) as f64,
        confusion,
    })
}

pub fn argmax(p: &Array1<f64>) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetConfig {
        NetConfig {
            n_conv: 2,
            filters: 8,
            kernel_widths: vec![5, 3],
            pool_width: 2,
            attention_kernel_width: 3,
            dense_sizes: vec![8, 4],
            dropout_keep: vec![0.8, 0.9],
            n_classes: 3,
            input_shape: (1, 8, 3),
        }
    }

    fn random_input(rng: &mut impl Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn stock_architecture_has_the_documented_parameter_count() {
        let config = NetConfig::with_defaults(10, (1, 234, 5));
        assert_eq!(config.final_width(), 7);
        assert_eq!(config.flatten_len(), 896);
        assert_eq!(config.param_count(), 489_301);
        let params = ModelParams::init(&config, 1);
        assert_eq!(params.count(), 489_301);
    }

    #[test]
    fn parameter_count_decomposes_per_block() {
        let config = NetConfig::with_defaults(10, (1, 234, 5));
        let conv: usize = config
            .kernel_widths
            .iter()
            .scan(config.input_shape.2, |cin, &kw| {
                let p = kw * *cin * config.filters + config.filters;
                *cin = config.filters;
                Some(p)
            })
            .sum();
        assert_eq!(conv, 365_568);
        let attention = config.attention_kernel_width * 2 + 1;
        assert_eq!(attention, 11);
        let dense = 896 * 128 + 128 + 128 * 64 + 64 + 64 * 10 + 10;
        assert_eq!(dense, 123_722);
        assert_eq!(conv + attention + dense, 489_301);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x = random_input(&mut rng, config.input_shape);
            let p = forward(&params, &config, &x).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn zero_params_give_uniform_output() {
        let config = tiny_config();
        let params = ModelParams::zeros(&config);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = random_input(&mut rng, config.input_shape);
        let p = forward(&params, &config, &x).unwrap();
        for &v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let config = tiny_config();
        let params = ModelParams::zeros(&config);
        let x = Array3::zeros((1, 9, 3));
        assert!(matches!(
            forward(&params, &config, &x),
            Err(NetError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn uniform_loss_is_log_n_classes() {
        let config = tiny_config();
        let params = ModelParams::zeros(&config);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let batch: Vec<(Array3<f64>, usize)> = (0..4)
            .map(|i| (random_input(&mut rng, config.input_shape), i % 3))
            .collect();
        let l = loss(&params, &config, &batch).unwrap();
        assert!((l - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_cross_entropy() {
        // p = (0.8, 0.2), label 0 -> loss = -ln 0.8.
        let p: Array1<f64> = ndarray::array![0.8, 0.2];
        let l = -p[0].max(1e-300).ln();
        assert!((l - 0.223_143_551_314_209_7).abs() < 1e-12);
    }

    #[test]
    fn softmax_logit_gradient_is_p_minus_onehot() {
        // Checked through a dense-output-only model: gradients of the
        // output bias equal p - onehot exactly.
        let config = tiny_config();
        let params = ModelParams::init(&config, 7);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x = random_input(&mut rng, config.input_shape);
        let p = forward(&params, &config, &x).unwrap();
        let (_, grads) = backward_sample(&params, &config, &x, 1, None).unwrap();
        let out_bias_grad = &grads.dense.last().unwrap().bias;
        for i in 0..3 {
            let want = p[i] - f64::from(u8::from(i == 1));
            assert!((out_bias_grad[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let config = tiny_config();
        let mut params = ModelParams::init(&config, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let batch: Vec<(Array3<f64>, usize)> = (0..3)
            .map(|i| (random_input(&mut rng, config.input_shape), i % 3))
            .collect();
        let masks: Vec<DropoutMasks> = batch
            .iter()
            .map(|_| DropoutMasks::sample(&config, &mut rng))
            .collect();
        let (_, grads) = backward(&params, &config, &batch, Some(&masks)).unwrap();

        let batch_loss = |params: &ModelParams| -> f64 {
            batch
                .iter()
                .zip(&masks)
                .map(|((x, label), m)| {
                    sample_loss(params, &config, x, *label, Some(m)).unwrap()
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let h = 1e-4;
        let mut checked = 0;
        // A few entries of every tensor kind.
        let probes: Vec<(&str, usize)> = vec![
            ("conv0.kernel", 3),
            ("conv0.bias", 1),
            ("conv1.kernel", 7),
            ("conv1.bias", 0),
            ("attention.kernel", 2),
            ("attention.bias", 0),
            ("dense0.weight", 11),
            ("dense0.bias", 2),
            ("dense1.weight", 5),
            ("dense1.bias", 1),
            ("dense2.weight", 3),
            ("dense2.bias", 0),
        ];
        for (name, flat_idx) in probes {
            let analytic = read_tensor(&grads, name)[flat_idx];
            let original = read_tensor(&params, name)[flat_idx];
            write_tensor(&mut params, name, flat_idx, original + h);
            let up = batch_loss(&params);
            write_tensor(&mut params, name, flat_idx, original - h);
            let down = batch_loss(&params);
            write_tensor(&mut params, name, flat_idx, original);
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-6);
            assert!(
                rel <= 1e-4,
                "{name}[{flat_idx}]: analytic {analytic} vs fd {fd} (rel {rel})"
            );
            checked += 1;
        }
        assert_eq!(checked, 12);
    }

    pub(super) fn read_tensor(p: &ModelParams, name: &str) -> Vec<f64> {
        p.tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .expect("tensor name")
    }

    pub(super) fn write_tensor(p: &mut ModelParams, name: &str, flat_idx: usize, value: f64) {
        let slot: &mut f64 = match name {
            "attention.kernel" => &mut p.attention.kernel.as_slice_mut().unwrap()[flat_idx],
            "attention.bias" => &mut p.attention.bias.as_slice_mut().unwrap()[flat_idx],
            _ => {
                let (kind, rest) = name.split_at(4);
                match kind {
                    "conv" => {
                        let (idx, field) = rest.split_once('.').unwrap();
                        let i: usize = idx.parse().unwrap();
                        match field {
                            "kernel" => &mut p.convs[i].kernel.as_slice_mut().unwrap()[flat_idx],
                            _ => &mut p.convs[i].bias.as_slice_mut().unwrap()[flat_idx],
                        }
                    }
                    "dens" => {
                        let rest = rest.strip_prefix('e').unwrap();
                        let (idx, field) = rest.split_once('.').unwrap();
                        let i: usize = idx.parse().unwrap();
                        match field {
                            "weight" => &mut p.dense[i].weight.as_slice_mut().unwrap()[flat_idx],
                            _ => &mut p.dense[i].bias.as_slice_mut().unwrap()[flat_idx],
                        }
                    }
                    other => panic!("unknown tensor kind {other}"),
                }
            }
        };
        *slot = value;
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 11);
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let x = random_input(&mut rng, config.input_shape);
        let a = forward(&params, &config, &x).unwrap();
        let b = forward(&params, &config, &x).unwrap();
        assert_eq!(a, b);
    }

    fn toy_set(n_per_class: usize, seed: u64) -> LabeledSet {
        // Two synthetic classes separated by a constant channel offset.
        let config = tiny_config();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut set = LabeledSet {
            class_names: vec!["a".into(), "b".into(), "c".into()],
            ..Default::default()
        };
        for label in 0..2 {
            for _ in 0..n_per_class {
                let mut x = random_input(&mut rng, config.input_shape);
                x.mapv_inplace(|v| v * 0.1);
                if label == 1 {
                    x[(0, 0, 0)] += 1.0;
                    x[(0, 3, 1)] -= 1.0;
                }
                set.samples.push(x);
                set.labels.push(label);
            }
        }
        set
    }

    #[test]
    fn training_learns_a_separable_toy_problem() {
        let config = tiny_config();
        let train_set = toy_set(24, 13);
        let val_set = toy_set(8, 14);
        let opts = TrainOptions {
            batch_size: 8,
            max_epochs: 15,
            ..TrainOptions::default()
        };
        let result = train(&config, &train_set, &val_set, &opts).unwrap();
        let eval = evaluate(&result.params, &config, &toy_set(8, 15)).unwrap();
        assert!(
            eval.accuracy >= 0.9,
            "toy accuracy {} too low",
            eval.accuracy
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let config = tiny_config();
        let train_set = toy_set(12, 16);
        let val_set = toy_set(4, 17);
        let opts = TrainOptions {
            batch_size: 8,
            max_epochs: 3,
            ..TrainOptions::default()
        };
        let a = train(&config, &train_set, &val_set, &opts).unwrap();
        let b = train(&config, &train_set, &val_set, &opts).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn single_class_training_is_refused() {
        let config = tiny_config();
        let mut set = toy_set(6, 18);
        set.labels.iter_mut().for_each(|l| *l = 0);
        assert!(matches!(
            train(&config, &set, &set, &TrainOptions::default()),
            Err(NetError::Degenerate(_))
        ));
    }

    #[test]
    fn confusion_matrix_rows_sum_to_support() {
        let config = tiny_config();
        let params = ModelParams::init(&config, 19);
        let set = toy_set(10, 20);
        let report = evaluate(&params, &config, &set).unwrap();
        for class in 0..3 {
            let support = set.labels.iter().filter(|&&l| l == class).count();
            let row_sum: usize = report.confusion.row(class).sum();
            assert_eq!(row_sum, support);
        }
        let perfect: usize = (0..3).map(|i| report.confusion[(i, i)]).sum();
        assert!(report.accuracy >= perfect as f64 / set.len() as f64 - 1e-12);
    }
}
