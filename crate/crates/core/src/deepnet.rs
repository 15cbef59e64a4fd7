//! Feed-forward network `ŷ = (f_n ∘ … ∘ f₁)(x)` trained by mini-batch SGD.
//!
//! Hidden layers compute `z = f(W a + b)`; the last layer is affine. The
//! training objective on a batch of `B` rows is
//!
//! ```text
//! 1/B · Σ ½‖y_i − ŷ_i‖² + λ φ(W, b)
//! ```
//!
//! with `φ = Σ w² + Σ b²` (l2) or `Σ |w| + Σ |b|` (l1).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::LagDesign;
use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::Param(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L2,
    L1,
    None,
}

/// Step size `η_t = initial / (1 + decay·t)` at SGD step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRate {
    pub initial: f64,
    pub decay: f64,
}

impl LearningRate {
    pub fn at(&self, step: usize) -> f64 {
        self.initial / (1.0 + self.decay * step as f64)
    }
}

impl Default for LearningRate {
    fn default() -> Self {
        Self {
            initial: 0.01,
            decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
    pub penalty_kind: PenaltyKind,
    pub penalty_weight: f64,
    pub dropout_p: f64,
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden_widths: Vec::new(),
            activation: Activation::Tanh,
            output_dim: 1,
            penalty_kind: PenaltyKind::L2,
            penalty_weight: 0.0,
            dropout_p: 0.0,
            learning_rate: LearningRate::default(),
            batch_size: 32,
            epochs: 200,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Param("network input and output sizes must be at least 1".into()));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::Param("hidden layer widths must be at least 1".into()));
        }
        if !(self.penalty_weight >= 0.0) || !self.penalty_weight.is_finite() {
            return Err(Error::Param(format!("penalty weight {} must be ≥ 0", self.penalty_weight)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Param(format!("dropout probability {} not in [0, 1)", self.dropout_p)));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.initial > 0.0) || !(self.learning_rate.decay >= 0.0) {
            return Err(Error::Param("learning rate must be positive with non-negative decay".into()));
        }
        Ok(())
    }

    /// Layer sizes from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden_widths);
        s.push(self.output_dim);
        s
    }

    pub fn n_parameters(&self) -> usize {
        self.sizes().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// One affine map; `weights` is `[out × in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training objective over the epoch's batches (scaled target units).
    pub train_loss: f64,
    /// Validation MSE in target units with inference-mode weights.
    pub valid_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepNet {
    pub config: NetConfig,
    pub layers: Vec<Layer>,
    /// Network outputs are mapped to targets as `center + scale · output`.
    pub output_center: Vec<f64>,
    pub output_scale: Vec<f64>,
    pub loss_trace: Vec<EpochLoss>,
    pub best_epoch: Option<usize>,
}

/// Glorot-uniform weights and zero biases, deterministic in `config.seed`.
pub fn init_network(config: &NetConfig) -> Result<DeepNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = config
        .sizes()
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-r..=r)).collect();
            Layer {
                weights: Matrix::from_vec(fan_out, fan_in, data).expect("shape"),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(DeepNet {
        config: config.clone(),
        layers,
        output_center: vec![0.0; config.output_dim],
        output_scale: vec![1.0; config.output_dim],
        loss_trace: Vec::new(),
        best_epoch: None,
    })
}

/// Keep/drop indicators (1 or 0) for a batch: entry `l` masks the input
/// (`l = 0`) or hidden layer `l`, shaped `[batch × width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub layers: Vec<Matrix>,
}

impl DropoutMask {
    /// Each unit kept independently with probability `1 − p`.
    pub fn sample<R: Rng>(config: &NetConfig, batch: usize, rng: &mut R) -> Self {
        let keep = 1.0 - config.dropout_p;
        let sizes = config.sizes();
        let layers = sizes[..sizes.len() - 1]
            .iter()
            .map(|&w| {
                let data = (0..batch * w)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 } else { 0.0 })
                    .collect();
                Matrix::from_vec(batch, w, data).expect("shape")
            })
            .collect();
        Self { layers }
    }
}

/// Parameter gradients, shaped like [`DeepNet::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.biases);
    }
    out
}

impl DeepNet {
    pub fn n_parameters(&self) -> usize {
        self.config.n_parameters()
    }

    /// All weights and biases, layer by layer, weights row-major before biases.
    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_parameters() {
            return Err(Error::Dimension(format!(
                "{} parameters given, network has {}",
                theta.len(),
                self.n_parameters()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&theta[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&theta[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// `φ(W, b)` for the configured penalty kind.
    pub fn penalty(&self) -> f64 {
        let p = self.parameters();
        match self.config.penalty_kind {
            PenaltyKind::L2 => p.iter().map(|v| v * v).sum(),
            PenaltyKind::L1 => p.iter().map(|v| v.abs()).sum(),
            PenaltyKind::None => 0.0,
        }
    }

    /// Euclidean norm of all weight matrices (biases excluded).
    pub fn weight_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "input has {cols} features, network expects {}",
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Batched forward pass. Returns post-activation values of the input and
    /// every hidden layer (masked when a mask is given) and the raw output.
    fn forward_batch(&self, x: &[f64], batch: usize, mask: Option<&DropoutMask>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let act = self.config.activation;
        let n_layers = self.layers.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut a = x.to_vec();
        if let Some(m) = mask {
            a.iter_mut().zip(m.layers[0].as_slice()).for_each(|(v, k)| *v *= k);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, inp) = layer.weights.shape();
            let mut z = vec![0.0; batch * out];
            for row in z.chunks_mut(out) {
                row.copy_from_slice(&layer.biases);
            }
            gemm(batch, inp, out, 1.0, &a, false, layer.weights.as_slice(), true, 1.0, &mut z);
            acts.push(a);
            if l + 1 == n_layers {
                return (acts, z);
            }
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            if let Some(m) = mask {
                z.iter_mut().zip(m.layers[l + 1].as_slice()).for_each(|(v, k)| *v *= k);
            }
            a = z;
        }
        unreachable!("a network always has an output layer")
    }

    fn to_target_scale(&self, out: &mut [f64]) {
        let d = self.config.output_dim;
        for row in out.chunks_mut(d) {
            for ((v, c), s) in row.iter_mut().zip(&self.output_center).zip(&self.output_scale) {
                *v = c + s * *v;
            }
        }
    }
}

/// Forward pass of one input vector: the prediction and the activations of
/// every hidden layer.
pub fn forward(net: &DeepNet, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    net.check_input(x.len())?;
    let (acts, mut out) = net.forward_batch(x, 1, None);
    net.to_target_scale(&mut out);
    Ok((out, acts.into_iter().skip(1).collect()))
}

/// Objective and its gradient on one batch. Targets are compared with the raw
/// network output, i.e. in the scaled units set by `output_center`/`output_scale`.
pub fn loss_and_gradients(
    net: &DeepNet,
    x: &Matrix,
    y: &Matrix,
    mask: Option<&DropoutMask>,
) -> Result<(f64, Gradients)> {
    let batch = x.rows();
    if batch == 0 {
        return Err(Error::Empty("empty training batch".into()));
    }
    net.check_input(x.cols())?;
    if y.rows() != batch || y.cols() != net.config.output_dim {
        return Err(Error::Dimension(format!(
            "targets are {}×{}, expected {}×{}",
            y.rows(),
            y.cols(),
            batch,
            net.config.output_dim
        )));
    }
    let (loss, grads) = batch_gradients(net, x.as_slice(), y.as_slice(), batch, mask);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, grads))
}

fn batch_gradients(net: &DeepNet, x: &[f64], y: &[f64], batch: usize, mask: Option<&DropoutMask>) -> (f64, Gradients) {
    let act = net.config.activation;
    let (acts, out) = net.forward_batch(x, batch, mask);
    let inv_b = 1.0 / batch as f64;
    let mut delta: Vec<f64> = out.iter().zip(y).map(|(o, t)| (o - t) * inv_b).collect();
    let data_loss = out.iter().zip(y).map(|(o, t)| (o - t).powi(2)).sum::<f64>() * 0.5 * inv_b;

    let lam = net.config.penalty_weight;
    let mut grads: Vec<Layer> = Vec::with_capacity(net.layers.len());
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let (out_w, in_w) = layer.weights.shape();
        let a = &acts[l];
        let mut gw = vec![0.0; out_w * in_w];
        // gW = δᵀ a
        gemm(out_w, batch, in_w, 1.0, &delta, true, a, false, 0.0, &mut gw);
        let mut gb = vec![0.0; out_w];
        for row in delta.chunks(out_w) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        if l > 0 {
            let mut prev = vec![0.0; batch * in_w];
            gemm(batch, out_w, in_w, 1.0, &delta, false, layer.weights.as_slice(), false, 0.0, &mut prev);
            // a already carries the mask, and a masked unit has a = 0 while its
            // derivative may not vanish (tanh), so apply the mask explicitly.
            for (i, p) in prev.iter_mut().enumerate() {
                *p *= act.derivative_from_output(a[i]);
            }
            if let Some(m) = mask {
                prev.iter_mut().zip(m.layers[l].as_slice()).for_each(|(p, k)| *p *= k);
            }
            delta = prev;
        }
        grads.push(Layer {
            weights: Matrix::from_vec(out_w, in_w, gw).expect("shape"),
            biases: gb,
        });
    }
    grads.reverse();

    let penalty = match net.config.penalty_kind {
        PenaltyKind::None => 0.0,
        _ if lam == 0.0 => 0.0,
        kind => {
            for (g, l) in grads.iter_mut().zip(&net.layers) {
                let pairs = g
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(l.weights.as_slice())
                    .chain(g.biases.iter_mut().zip(&l.biases));
                for (gv, w) in pairs {
                    *gv += match kind {
                        PenaltyKind::L2 => 2.0 * lam * w,
                        _ => lam * sign0(*w),
                    };
                }
            }
            lam * net.penalty()
        }
    };
    (data_loss + penalty, Gradients { layers: grads })
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Dropout-marginalised ridge term `p(1−p) Σ_j (XᵀX)_jj w_j²` for a linear
/// predictor whose weights are kept with probability `p`.
pub fn dropout_ridge_penalty(x: &Matrix, w: &[f64], p: f64) -> Result<f64> {
    if w.len() != x.cols() {
        return Err(Error::Dimension(format!("{} weights for {} columns", w.len(), x.cols())));
    }
    let mut diag = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (d, v) in diag.iter_mut().zip(x.row(i)) {
            *d += v * v;
        }
    }
    Ok(p * (1.0 - p) * diag.iter().zip(w).map(|(d, wj)| d * wj * wj).sum::<f64>())
}

/// Row-wise predictions in target units.
pub fn predict(net: &DeepNet, design: &LagDesign) -> Result<Matrix> {
    predict_matrix(net, &design.x)
}

pub fn predict_matrix(net: &DeepNet, x: &Matrix) -> Result<Matrix> {
    net.check_input(x.cols())?;
    let d = net.config.output_dim;
    let mut out = Vec::with_capacity(x.rows() * d);
    // bounded chunks keep activations small on long designs
    const CHUNK: usize = 4096;
    for start in (0..x.rows()).step_by(CHUNK) {
        let end = (start + CHUNK).min(x.rows());
        let slice = &x.as_slice()[start * x.cols()..end * x.cols()];
        let (_, mut o) = net.forward_batch(slice, end - start, None);
        net.to_target_scale(&mut o);
        out.extend(o);
    }
    Matrix::from_vec(x.rows(), d, out)
}

fn mse_matrix(pred: &Matrix, y: &Matrix) -> f64 {
    let n = pred.as_slice().len();
    pred.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / n as f64
}

/// Copy of the net with weights scaled by the keep probability, as used at inference.
fn inference_copy(net: &DeepNet) -> DeepNet {
    let mut out = net.clone();
    let keep = 1.0 - net.config.dropout_p;
    if keep < 1.0 {
        for l in &mut out.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|w| *w *= keep);
        }
    }
    out
}

/// Mini-batch SGD from the net's current parameters.
///
/// Targets are centred and scaled by the training means and standard
/// deviations before fitting; the network learns in those units and
/// [`predict`] maps back. The returned parameters are those of the epoch with
/// the lowest validation MSE (or the inputs when `epochs == 0`), followed by
/// one exact minimization of the training objective over the output biases.
/// SGD with a decaying step rarely settles the output bias, and a leftover
/// offset shows up directly as forecast bias.
pub fn sgd_train(net: &DeepNet, train: &LagDesign, valid: &LagDesign) -> Result<DeepNet> {
    let cfg = net.config.clone();
    cfg.validate()?;
    net.check_input(train.x.cols())?;
    net.check_input(valid.x.cols())?;
    if train.y.cols() != cfg.output_dim || valid.y.cols() != cfg.output_dim {
        return Err(Error::Dimension("target count does not match output_dim".into()));
    }
    if train.rows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    let mut net = net.clone();
    if cfg.epochs == 0 {
        return Ok(net);
    }
    let d = cfg.output_dim;
    let (center, scale) = target_scaling(&train.y);
    net.output_center = center;
    net.output_scale = scale;
    let mut y_scaled = train.y.clone();
    for row in y_scaled.as_mut_slice().chunks_mut(d) {
        for ((v, c), s) in row.iter_mut().zip(&net.output_center).zip(&net.output_scale) {
            *v = (*v - c) / s;
        }
    }

    let p_in = cfg.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut theta = net.parameters();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut bx = Vec::with_capacity(cfg.batch_size * p_in);
    let mut by = Vec::with_capacity(cfg.batch_size * d);
    let has_valid = valid.rows() > 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(train.x.row(i));
                by.extend_from_slice(y_scaled.row(i));
            }
            let mask = (cfg.dropout_p > 0.0).then(|| DropoutMask::sample(&cfg, chunk.len(), &mut rng));
            let (loss, grads) = batch_gradients(&net, &bx, &by, chunk.len(), mask.as_ref());
            if !loss.is_finite() || loss > 1e12 {
                return Err(Error::Training {
                    epoch,
                    message: format!(
                        "loss {loss:e} at step {step}; epoch losses so far {:?}",
                        trace.iter().map(|e: &EpochLoss| e.train_loss).collect::<Vec<_>>()
                    ),
                });
            }
            let eta = cfg.learning_rate.at(step);
            for (t, g) in theta.iter_mut().zip(grads.flatten()) {
                *t -= eta * g;
            }
            net.set_parameters(&theta)?;
            loss_sum += loss;
            n_batches += 1;
            step += 1;
        }
        let inf = inference_copy(&net);
        let valid_mse = if has_valid {
            mse_matrix(&predict_matrix(&inf, &valid.x)?, &valid.y)
        } else {
            f64::NAN
        };
        if has_valid && !valid_mse.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("validation loss {valid_mse}"),
            });
        }
        trace.push(EpochLoss {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            valid_mse,
        });
        let score = if has_valid { valid_mse } else { -(epoch as f64) };
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, theta.clone()));
        }
    }
    let (_, best_epoch, best_theta) = best.expect("at least one epoch ran");
    net.set_parameters(&best_theta)?;
    let mut out = inference_copy(&net);
    settle_output_bias(&mut out, train)?;
    out.loss_trace = trace;
    out.best_epoch = Some(best_epoch);
    Ok(out)
}

/// Minimize `½ mean (r − δ)² + λφ(b + δ)` over the shift `δ` of each output
/// bias, in the scaled units the net was trained in.
fn settle_output_bias(net: &mut DeepNet, train: &LagDesign) -> Result<()> {
    let pred = predict_matrix(net, &train.x)?;
    let n = train.rows() as f64;
    let lam = net.config.penalty_weight;
    let kind = net.config.penalty_kind;
    let last = net.layers.last_mut().expect("a net has an output layer");
    for j in 0..last.biases.len() {
        let s = net.output_scale[j];
        let rbar = (0..train.rows()).map(|i| train.y.row(i)[j] - pred.row(i)[j]).sum::<f64>() / n / s;
        let b = last.biases[j];
        let delta = match kind {
            PenaltyKind::None => rbar,
            PenaltyKind::L2 => (rbar - 2.0 * lam * b) / (1.0 + 2.0 * lam),
            PenaltyKind::L1 => {
                let v = b + rbar;
                v.signum() * (v.abs() - lam).max(0.0) - b
            }
        };
        last.biases[j] = b + delta;
    }
    Ok(())
}

fn target_scaling(y: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = y.rows() as f64;
    (0..y.cols())
        .map(|j| {
            let col = y.column(j);
            let m = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            (m, if sd > 1e-12 { sd } else { 1.0 })
        })
        .unzip()
}

const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetFile {
    version: u32,
    #[serde(flatten)]
    net: DeepNet,
}

impl DeepNet {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetFile {
            version: MODEL_VERSION,
            net: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: NetFile = serde_json::from_str(s)?;
        if f.version != MODEL_VERSION {
            return Err(Error::Param(format!("unsupported model version {}", f.version)));
        }
        let sizes = f.net.config.sizes();
        let chained = f.net.layers.len() == sizes.len() - 1
            && f.net.layers.iter().zip(sizes.windows(2)).all(|(l, w)| {
                l.weights.shape() == (w[1], w[0]) && l.biases.len() == w[1]
            });
        if !chained {
            return Err(Error::Dimension("layer shapes do not match the config".into()));
        }
        Ok(f.net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
