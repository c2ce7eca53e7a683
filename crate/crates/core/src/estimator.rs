//! A pointwise two-layer estimator of grid encodings with hand-derived
//! gradients, trained by plain SGD under a step-decay schedule.
//!
//! Each `(t, k)` bin is an independent sample: the input is the
//! channel-normalised mixture vector (real and imaginary parts) plus the
//! normalised bin index, the hidden layer uses `tanh` and the output layer a
//! sigmoid over the `Theta` grid cells.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coding::{CodingKind, CodingTensor, SpatialGrid};
use crate::container::{Container, PayloadKind};
use crate::stft::Spectrogram;
use crate::{par, Error, Result};

const NORM_EPS: f64 = 1e-8;
/// Bins per work unit. Fixed so that summation order, and therefore every
/// result bit, does not depend on the thread count.
const CHUNK: usize = 256;

/// Per-bin input vectors, row-major `(t, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    frames: usize,
    bins: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(frames: usize, bins: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * bins * dim {
            return Err(Error::Shape(format!(
                "{} feature values for {frames}x{bins}x{dim}",
                data.len()
            )));
        }
        Ok(Self {
            frames,
            bins,
            dim,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> usize {
        self.frames * self.bins
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }
}

/// Channel-normalised mixture features: `Y_tk / (||Y_tk|| + 1e-8)` split into
/// real and imaginary parts, followed by `k / K`.
pub fn features(mixture: &Spectrogram) -> Result<Features> {
    let c = mixture.channels();
    if c < 2 {
        return Err(Error::Shape(format!(
            "features need a multichannel mixture, got {c} channel(s)"
        )));
    }
    let (frames, bins) = (mixture.frames(), mixture.bins());
    let dim = 2 * c + 1;
    let mut data = Vec::with_capacity(frames * bins * dim);
    for t in 0..frames {
        for k in 0..bins {
            let y = mixture.channel_vector(t, k);
            let norm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() + NORM_EPS;
            data.extend(y.iter().map(|z| z.re / norm));
            data.extend(y.iter().map(|z| z.im / norm));
            data.push(k as f64 / bins as f64);
        }
    }
    Features::new(frames, bins, dim, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// `hidden x input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `output x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub seed: u64,
}

impl EstimatorParams {
    /// Xavier-uniform weights, zero hidden bias, constant output bias.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, output_bias: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |fan_in: usize, fan_out: usize| -> Vec<f64> {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()
        };
        let w1 = xavier(input_dim, hidden_dim);
        let w2 = xavier(hidden_dim, output_dim);
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1,
            b1: vec![0.0; hidden_dim],
            w2,
            b2: vec![output_bias; output_dim],
            seed,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * output_dim],
            b2: vec![0.0; output_dim],
            seed: 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check(&self) -> Result<()> {
        let (i, h, o) = (self.input_dim, self.hidden_dim, self.output_dim);
        if self.w1.len() != h * i || self.b1.len() != h || self.w2.len() != o * h || self.b2.len() != o {
            return Err(Error::Shape("parameter arrays inconsistent with dimensions".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_iter().all(f64::is_finite)
    }

    fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.flat_iter().collect()
    }

    fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    pub fn set_flat(&mut self, j: usize, v: f64) {
        if let Some(p) = self.flat_mut().nth(j) {
            *p = v;
        }
    }

    fn apply_step(&mut self, grads: &Gradients, lr: f64) {
        for (p, g) in self.flat_mut().zip(grads.flat_iter()) {
            *p -= lr * g;
        }
    }

    pub fn to_container(&self) -> Container {
        Container {
            kind: PayloadKind::EstimatorParams,
            dims: vec![self.param_count() as u32],
            attrs: vec![
                self.seed as f64,
                self.input_dim as f64,
                self.hidden_dim as f64,
                self.output_dim as f64,
            ],
            values: self.flat_iter().map(|v| v as f32).collect(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != PayloadKind::EstimatorParams {
            return Err(Error::Format("container does not hold estimator parameters".into()));
        }
        let [seed, i, h, o] = c.attrs[..] else {
            return Err(Error::Format("estimator parameters need 4 attributes".into()));
        };
        let (i, h, o) = (i as usize, h as usize, o as usize);
        let expected = h * i + h + o * h + o;
        if c.values.len() != expected {
            return Err(Error::Format(format!(
                "{} parameter values, expected {expected}",
                c.values.len()
            )));
        }
        let v: Vec<f64> = c.values.iter().map(|&x| f64::from(x)).collect();
        let (w1, rest) = v.split_at(h * i);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(o * h);
        Ok(Self {
            input_dim: i,
            hidden_dim: h,
            output_dim: o,
            w1: w1.to_vec(),
            b1: b1.to_vec(),
            w2: w2.to_vec(),
            b2: b2.to_vec(),
            seed: seed as u64,
        })
    }
}

/// Parameter gradients, shaped like [`EstimatorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros_like(p: &EstimatorParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        }
    }

    fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).copied()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.flat_iter().collect()
    }

    fn add_scaled(&mut self, other: &Gradients, s: f64) {
        let pairs = [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn norm_l1(&self) -> f64 {
        self.flat_iter().map(f64::abs).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.flat_iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn hidden(params: &EstimatorParams, x: &[f64], h: &mut [f64]) {
    for (j, hj) in h.iter_mut().enumerate() {
        let row = &params.w1[j * params.input_dim..(j + 1) * params.input_dim];
        let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.b1[j];
        *hj = z.tanh();
    }
}

fn output(params: &EstimatorParams, h: &[f64], out: &mut [f64]) {
    for (g, o) in out.iter_mut().enumerate() {
        let row = &params.w2[g * params.hidden_dim..(g + 1) * params.hidden_dim];
        let z: f64 = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + params.b2[g];
        *o = sigmoid(z);
    }
}

fn check_features(params: &EstimatorParams, feats: &Features) -> Result<()> {
    params.check()?;
    if feats.dim != params.input_dim {
        return Err(Error::Shape(format!(
            "features have dimension {}, estimator expects {}",
            feats.dim, params.input_dim
        )));
    }
    Ok(())
}

/// Evaluates the estimator on every bin.
pub fn forward(params: &EstimatorParams, feats: &Features, grid: &SpatialGrid) -> Result<CodingTensor> {
    check_features(params, feats)?;
    if grid.theta_count() != params.output_dim {
        return Err(Error::Shape(format!(
            "grid has {} cells, estimator outputs {}",
            grid.theta_count(),
            params.output_dim
        )));
    }
    let n = params.output_dim;
    let mut values = vec![0.0; feats.items() * n];
    par::for_each_chunk_mut(&mut values, CHUNK * n, |c, chunk| {
        let mut h = vec![0.0; params.hidden_dim];
        for (r, out) in chunk.chunks_exact_mut(n).enumerate() {
            hidden(params, feats.item(c * CHUNK + r), &mut h);
            output(params, &h, out);
        }
    });
    CodingTensor::new(feats.frames, feats.bins, *grid, CodingKind::Estimated, values)
}

/// Mean-MSE loss over all bins and cells with its parameter gradient.
pub fn backward(params: &EstimatorParams, feats: &Features, target: &CodingTensor) -> Result<(Gradients, f64)> {
    check_features(params, feats)?;
    if target.theta_count() != params.output_dim || target.frames() != feats.frames || target.bins() != feats.bins {
        return Err(Error::Shape(format!(
            "target {}x{}x{} does not match {}x{}x{}",
            target.frames(),
            target.bins(),
            target.theta_count(),
            feats.frames,
            feats.bins,
            params.output_dim
        )));
    }
    let items = feats.items();
    let n = params.output_dim;
    let scale = 2.0 / (items * n) as f64;
    let chunks = items.div_ceil(CHUNK);

    let partials = par::map_range(chunks, |c| {
        let mut grads = Gradients::zeros_like(params);
        let mut sq = 0.0;
        let mut h = vec![0.0; params.hidden_dim];
        let mut out = vec![0.0; n];
        let mut dz2 = vec![0.0; n];
        let mut dh = vec![0.0; params.hidden_dim];
        for j in c * CHUNK..((c + 1) * CHUNK).min(items) {
            let x = feats.item(j);
            hidden(params, x, &mut h);
            output(params, &h, &mut out);
            let t = target.cell_row(j / feats.bins, j % feats.bins);
            for g in 0..n {
                let diff = out[g] - t[g];
                sq += diff * diff;
                dz2[g] = scale * diff * out[g] * (1.0 - out[g]);
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for g in 0..n {
                let d = dz2[g];
                if d == 0.0 {
                    continue;
                }
                grads.b2[g] += d;
                let row = g * params.hidden_dim;
                for m in 0..params.hidden_dim {
                    grads.w2[row + m] += d * h[m];
                    dh[m] += params.w2[row + m] * d;
                }
            }
            for m in 0..params.hidden_dim {
                let dz1 = dh[m] * (1.0 - h[m] * h[m]);
                grads.b1[m] += dz1;
                let row = m * params.input_dim;
                for (i, xi) in x.iter().enumerate() {
                    grads.w1[row + i] += dz1 * xi;
                }
            }
        }
        (grads, sq)
    });

    let mut grads = Gradients::zeros_like(params);
    let mut sq = 0.0;
    for (g, s) in &partials {
        grads.add_scaled(g, 1.0);
        sq += s;
    }
    let loss = sq / (items * n) as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok((grads, loss))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub hidden_dim: usize,
    /// Initial output-layer bias. Strongly negative values start the
    /// estimator near the all-zero coding.
    pub output_bias_init: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            decay_factor: 0.63,
            decay_every: 10,
            epochs: 100,
            batch_size: 5,
            patience: 10,
            hidden_dim: 64,
            output_bias_init: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Argument("decay factor must lie in (0, 1)".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::Argument(
                "decay interval, batch size and hidden size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step-decayed rate for a zero-based epoch index.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean over batches of the L1 norm of the parameter gradient.
    pub grad_norm_l1: f64,
    pub grad_norm_l2: f64,
    pub improved: bool,
    pub stopped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str =
        "epoch,learning_rate,train_loss,val_loss,grad_norm_l1,grad_norm_l2,improved,stopped";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{:.9e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}\n",
                e.epoch,
                e.learning_rate,
                e.train_loss,
                e.val_loss,
                e.grad_norm_l1,
                e.grad_norm_l2,
                e.improved,
                e.stopped
            ));
        }
        s
    }
}

/// A training sample: mixture features and the target coding.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub features: Features,
    pub target: CodingTensor,
}

fn mean_loss(params: &EstimatorParams, scenes: &[TrainingScene]) -> Result<f64> {
    let losses = par::map_slice(scenes, |s| backward(params, &s.features, &s.target).map(|r| r.1));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / scenes.len() as f64)
}

/// Minibatch SGD over scenes. Returns the parameters of the best validation
/// epoch together with the per-epoch history.
pub fn train(
    train_set: &[TrainingScene],
    val_set: &[TrainingScene],
    cfg: &TrainConfig,
) -> Result<(EstimatorParams, TrainHistory)> {
    cfg.validate()?;
    let first = train_set
        .first()
        .ok_or_else(|| Error::Argument("empty training split".into()))?;
    if val_set.is_empty() {
        return Err(Error::Argument("empty validation split".into()));
    }
    let mut params = EstimatorParams::init(
        first.features.dim(),
        cfg.hidden_dim,
        first.target.theta_count(),
        cfg.output_bias_init,
        cfg.seed,
    );
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let (mut loss_sum, mut l1_sum, mut l2_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let scenes: Vec<&TrainingScene> = batch.iter().map(|&i| &train_set[i]).collect();
            let results = par::map_slice(&scenes, |s| backward(&params, &s.features, &s.target));
            let mut grads = Gradients::zeros_like(&params);
            let mut loss = 0.0;
            let w = 1.0 / scenes.len() as f64;
            for r in results {
                let (g, l) = r.map_err(|e| Error::Training {
                    epoch,
                    reason: e.to_string(),
                })?;
                grads.add_scaled(&g, w);
                loss += w * l;
            }
            params.apply_step(&grads, lr);
            if !params.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
            loss_sum += loss;
            l1_sum += grads.norm_l1();
            l2_sum += grads.norm_l2();
            batches += 1;
        }
        let val_loss = mean_loss(&params, val_set).map_err(|e| Error::Training {
            epoch,
            reason: e.to_string(),
        })?;
        let improved = val_loss < best_val;
        if improved {
            best_val = val_loss;
            best = params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stopped = since_best >= cfg.patience;
        history.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / batches as f64,
            val_loss,
            grad_norm_l1: l1_sum / batches as f64,
            grad_norm_l2: l2_sum / batches as f64,
            improved,
            stopped,
        });
        if stopped {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best, history))
}

/// Degrades a coding: circular moving-average blur of half-width
/// `blur_cells` over the grid axis, then additive Gaussian noise clipped to
/// `+-5 noise_std`, then clipping to [0, 1].
pub fn corrupt_oracle(coding: &CodingTensor, noise_std: f64, blur_cells: usize, seed: u64) -> Result<CodingTensor> {
    if !(noise_std >= 0.0) {
        return Err(Error::Argument("noise std must be non-negative".into()));
    }
    let n = coding.theta_count();
    let mut values = coding.values().to_vec();
    if blur_cells > 0 {
        let width = 2 * blur_cells + 1;
        for row in values.chunks_exact_mut(n) {
            let src = row.to_vec();
            if width >= n {
                let mean = src.iter().sum::<f64>() / n as f64;
                row.iter_mut().for_each(|v| *v = mean);
            } else {
                for (g, v) in row.iter_mut().enumerate() {
                    let s: f64 = (0..width).map(|o| src[(g + n + o - blur_cells) % n]).sum();
                    *v = s / width as f64;
                }
            }
        }
    }
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 5.0 * noise_std;
        for v in &mut values {
            let z: f64 = rng.sample(StandardNormal);
            *v += (z * noise_std).clamp(-bound, bound);
        }
    }
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    CodingTensor::new(coding.frames(), coding.bins(), *coding.grid(), coding.kind(), values)
}
