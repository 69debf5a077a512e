//! Dense feed-forward classifier trained with focal loss, L1 weight
//! penalty, inverted dropout and Adam, plus seeded hyperparameter search.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_units: Vec<usize>,
    pub output_dim: usize,
    pub l1: f64,
    pub dropout_rate: f64,
    pub learning_rate: f64,
}

impl MlpArch {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.output_dim < 2 {
            return bad(format!("need input_dim >= 1 and output_dim >= 2, got {} and {}", self.input_dim, self.output_dim));
        }
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return bad("every hidden layer needs at least one unit".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.l1 >= 0.0) || !(self.learning_rate > 0.0) {
            return bad("l1 must be >= 0 and learning_rate > 0".into());
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_units.len() + 1);
        let mut prev = self.input_dim;
        for &u in self.hidden_units.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, u));
            prev = u;
        }
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation macro-F1 improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            batch_size: 256,
            max_epochs: 200,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("train: need gamma >= 0, batch_size >= 1, max_epochs >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("train: invalid Adam constants".into()));
        }
        Ok(())
    }
}

/// One dense layer: `z = a * w + b` with `w` stored `inputs x outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub arch: MlpArch,
    pub layers: Vec<Dense>,
}

/// Design matrix with class-index targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: DMatrix<f64>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn new(x: DMatrix<f64>, y: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::shape(x.nrows(), y.len()));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(idx.len(), self.x.ncols(), |r, c| self.x[(idx[r], c)]);
        (x, idx.iter().map(|&i| self.y[i]).collect())
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Samples) -> Result<Samples> {
        if self.x.ncols() != other.x.ncols() {
            return Err(Error::shape(self.x.ncols(), other.x.ncols()));
        }
        let (n1, n2) = (self.len(), other.len());
        let x = DMatrix::from_fn(n1 + n2, self.x.ncols(), |r, c| {
            if r < n1 {
                self.x[(r, c)]
            } else {
                other.x[(r - n1, c)]
            }
        });
        let y = self.y.iter().chain(&other.y).copied().collect();
        Samples::new(x, y)
    }
}

fn relu_inplace(m: &mut DMatrix<f64>) {
    m.apply(|v| *v = v.max(0.0));
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for (j, mut col) in z.column_iter_mut().enumerate() {
        col.add_scalar_mut(b[j]);
    }
}

fn softmax_rows(z: &mut DMatrix<f64>) {
    for mut row in z.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Intermediate values kept for backpropagation.
struct ForwardCache {
    /// Layer inputs (post-activation, post-dropout); `inputs[0]` is the batch.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<DMatrix<f64>>,
    /// Inverted-dropout multipliers per hidden layer (0 or 1/(1-p)).
    masks: Vec<Option<DMatrix<f64>>>,
    probs: DMatrix<f64>,
}

/// Parameter-shaped container used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    fn zeros_like(model: &Mlp) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Dense {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
        }
    }
}

impl Mlp {
    /// He-uniform weights (`±sqrt(6 / fan_in)`), zero biases.
    pub fn new(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / fan_in as f64).sqrt();
                Dense {
                    w: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-limit..limit)),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params()
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::shape(self.arch.input_dim, x.ncols()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite network input".into()));
        }
        Ok(())
    }

    /// Class probabilities in inference mode (no dropout).
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.forward_impl(x, None).probs)
    }

    fn forward_impl(&self, x: &DMatrix<f64>, mut rng: Option<&mut ChaCha8Rng>) -> ForwardCache {
        let n_layers = self.layers.len();
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut masks = Vec::with_capacity(n_layers - 1);
        let p = self.arch.dropout_rate;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &inputs[i] * &layer.w;
            add_bias(&mut z, &layer.b);
            if i + 1 == n_layers {
                softmax_rows(&mut z);
                return ForwardCache {
                    inputs,
                    pre,
                    masks,
                    probs: z,
                };
            }
            let mut a = z.clone();
            relu_inplace(&mut a);
            let mask = match rng.as_deref_mut() {
                Some(rng) if p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep });
                    a.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            inputs.push(a);
        }
        unreachable!("network has an output layer")
    }

    /// Gradients of `focal_loss + l1 * sum|W|` for one batch.
    fn backward(&self, cache: &ForwardCache, y: &[usize], gamma: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = focal_loss_grad_logits(&cache.probs, y, gamma);
        for i in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[i];
            g.w = cache.inputs[i].transpose() * &delta;
            g.b = delta.row_sum().transpose();
            if self.arch.l1 > 0.0 {
                let l1 = self.arch.l1;
                g.w.zip_apply(&self.layers[i].w, |gw, w| *gw += l1 * sign(w));
            }
            if i == 0 {
                break;
            }
            let mut upstream = &delta * self.layers[i].w.transpose();
            if let Some(mask) = &cache.masks[i - 1] {
                upstream.component_mul_assign(mask);
            }
            upstream.zip_apply(&cache.pre[i - 1], |u, z| {
                if z <= 0.0 {
                    *u = 0.0
                }
            });
            delta = upstream;
        }
        grads
    }

    /// Analytic gradient of the training objective in inference mode.
    pub fn objective_gradient(&self, x: &DMatrix<f64>, y: &[usize], gamma: f64) -> Result<Gradients> {
        self.check_input(x)?;
        let cache = self.forward_impl(x, None);
        Ok(self.backward(&cache, y, gamma))
    }

    /// `focal_loss + l1 * sum|W|` in inference mode.
    pub fn objective(&self, x: &DMatrix<f64>, y: &[usize], gamma: f64) -> Result<f64> {
        let probs = self.forward(x)?;
        Ok(focal_loss(&probs, y, gamma) + self.l1_penalty())
    }

    pub fn l1_penalty(&self) -> f64 {
        self.arch.l1 * self.layers.iter().map(|l| l.w.iter().map(|v| v.abs()).sum::<f64>()).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let probs = self.forward(x)?;
        Ok(probs.row_iter().map(|r| metrics::argmax(r.transpose().as_slice())).collect())
    }

    /// Rounds every parameter through `f32`, matching what is persisted.
    pub fn round_to_f32(&self) -> Mlp {
        let r = |v: f64| v as f32 as f64;
        Mlp {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    w: l.w.map(r),
                    b: l.b.map(r),
                })
                .collect(),
        }
    }

    /// Parameters in persisted order: per layer, `w` row-major
    /// (`inputs x outputs`) then `b`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            for r in 0..l.w.nrows() {
                out.extend(l.w.row(r).iter());
            }
            out.extend(l.b.iter());
        }
        out
    }

    pub fn from_flat_params(arch: MlpArch, params: &[f64]) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::shape(arch.n_params(), params.len()));
        }
        let mut offset = 0;
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| {
                let w = DMatrix::from_row_slice(i, o, &params[offset..offset + i * o]);
                offset += i * o;
                let b = DVector::from_column_slice(&params[offset..offset + o]);
                offset += o;
                Dense { w, b }
            })
            .collect();
        Ok(Self { arch, layers })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean over rows of `-(1 - p_t)^gamma * ln(p_t)` with `p_t` the clamped
/// probability of the true class.
pub fn focal_loss(probs: &DMatrix<f64>, y: &[usize], gamma: f64) -> f64 {
    let n = y.len();
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = probs[(i, t)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(1.0 - p).powf(gamma) * p.ln()
        })
        .sum();
    total / n as f64
}

/// Gradient of [`focal_loss`] with respect to the softmax logits.
fn focal_loss_grad_logits(probs: &DMatrix<f64>, y: &[usize], gamma: f64) -> DMatrix<f64> {
    let n = y.len() as f64;
    let mut grad = DMatrix::zeros(probs.nrows(), probs.ncols());
    for (i, &t) in y.iter().enumerate() {
        let p_raw = probs[(i, t)];
        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p_raw) {
            continue;
        }
        let p = p_raw;
        let mut dl_dp = -(1.0 - p).powf(gamma) / p;
        if gamma != 0.0 {
            dl_dp += gamma * (1.0 - p).powf(gamma - 1.0) * p.ln();
        }
        // dp_t / dz_j = p_t (delta_tj - p_j)
        for j in 0..probs.ncols() {
            let kron = if j == t { 1.0 } else { 0.0 };
            grad[(i, j)] = dl_dp * p * (kron - probs[(i, j)]) / n;
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_macro_f1: Option<f64>,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_macro_f1\n");
    for h in history {
        let f1 = h.val_macro_f1.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, f1));
    }
    out
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    fn new(model: &Mlp) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Mlp, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let lr = model.arch.learning_rate;
        let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (i, layer) in model.layers.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m.layers[i], &mut self.v.layers[i], &grads.layers[i]);
            for k in 0..layer.w.len() {
                update(&mut layer.w[k], g.w[k], &mut m.w[k], &mut v.w[k]);
            }
            for k in 0..layer.b.len() {
                update(&mut layer.b[k], g.b[k], &mut m.b[k], &mut v.b[k]);
            }
        }
    }
}

fn check_targets(model: &Mlp, s: &Samples, what: &str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::InvalidInput(format!("{what} set is empty")));
    }
    model.check_input(&s.x)?;
    if let Some(&bad) = s.y.iter().find(|&&t| t >= model.arch.output_dim) {
        return Err(Error::InvalidInput(format!("{what} target {bad} >= output_dim")));
    }
    Ok(())
}

fn run_epoch(model: &mut Mlp, adam: &mut Adam, data: &Samples, cfg: &TrainConfig, rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    for batch in order.chunks(cfg.batch_size) {
        let (x, y) = data.rows(batch);
        let cache = model.forward_impl(&x, Some(rng));
        let grads = model.backward(&cache, &y, cfg.gamma);
        adam.step(model, &grads, cfg);
    }
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Mini-batch Adam with early stopping on validation macro-F1.
///
/// Training stops once `max(patience, 1)` consecutive epochs fail to beat the
/// best validation score; the best epoch's parameters are returned.
pub fn train(model: Mlp, train_set: &Samples, val_set: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_targets(&model, train_set, "training")?;
    check_targets(&model, val_set, "validation")?;
    let n_classes = model.arch.output_dim;
    let mut rng = training_rng(cfg.seed);
    let mut model = model;
    let mut adam = Adam::new(&model);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        run_epoch(&mut model, &mut adam, train_set, cfg, &mut rng);
        let train_loss = model.objective(&train_set.x, &train_set.y, cfg.gamma)?;
        let predictions = model.predict(&val_set.x)?;
        let val_f1 = metrics::f1(&val_set.y, &predictions, n_classes).macro_f1;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_macro_f1: Some(val_f1),
        });
        match &best {
            Some((score, _, _)) if val_f1 <= *score => {
                stale += 1;
                if stale >= cfg.patience.max(1) {
                    break;
                }
            }
            _ => {
                best = Some((val_f1, epoch, model.clone()));
                stale = 0;
            }
        }
    }
    let (score, best_epoch, best_model) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        best_val_macro_f1: Some(score),
    })
}

/// Trains for exactly `epochs` epochs without validation.
pub fn train_epochs(model: Mlp, train_set: &Samples, epochs: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_targets(&model, train_set, "training")?;
    let mut rng = training_rng(cfg.seed);
    let mut model = model;
    let mut adam = Adam::new(&model);
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs.max(1) {
        run_epoch(&mut model, &mut adam, train_set, cfg, &mut rng);
        history.push(EpochStats {
            epoch,
            train_loss: model.objective(&train_set.x, &train_set.y, cfg.gamma)?,
            val_macro_f1: None,
        });
    }
    Ok(TrainOutcome {
        best_epoch: history.len(),
        model,
        history,
        best_val_macro_f1: None,
    })
}

/// Hyperparameter ranges. Units are drawn independently per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub min_layers: usize,
    pub max_layers: usize,
    pub min_units: usize,
    pub max_units: usize,
    pub units_step: usize,
    pub l1: (f64, f64),
    pub dropout: (f64, f64),
    pub learning_rate: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            min_layers: 1,
            max_layers: 4,
            min_units: 32,
            max_units: 512,
            units_step: 32,
            l1: (1e-12, 1e-6),
            dropout: (0.0, 0.1),
            learning_rate: (1e-7, 1e-4),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_layers >= 1
            && self.max_layers >= self.min_layers
            && self.units_step >= 1
            && self.min_units >= 1
            && self.max_units >= self.min_units
            && self.l1.0 > 0.0
            && self.l1.1 >= self.l1.0
            && self.dropout.0 >= 0.0
            && self.dropout.1 >= self.dropout.0
            && self.dropout.1 < 1.0
            && self.learning_rate.0 > 0.0
            && self.learning_rate.1 >= self.learning_rate.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid search space {self:?}")))
        }
    }

    pub fn contains(&self, arch: &MlpArch) -> bool {
        let n = arch.hidden_units.len();
        (self.min_layers..=self.max_layers).contains(&n)
            && arch
                .hidden_units
                .iter()
                .all(|&u| (self.min_units..=self.max_units).contains(&u) && (u - self.min_units).is_multiple_of(self.units_step))
            && (self.l1.0..=self.l1.1).contains(&arch.l1)
            && (self.dropout.0..=self.dropout.1).contains(&arch.dropout_rate)
            && (self.learning_rate.0..=self.learning_rate.1).contains(&arch.learning_rate)
    }

    /// Uniform per dimension; log-uniform for `l1` and `learning_rate`.
    pub fn sample(&self, rng: &mut impl Rng, input_dim: usize, output_dim: usize) -> MlpArch {
        let log_uniform = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if hi > lo {
                (rng.gen_range(lo.ln()..=hi.ln())).exp().clamp(lo, hi)
            } else {
                lo
            }
        };
        let n_layers = rng.gen_range(self.min_layers..=self.max_layers);
        let steps = (self.max_units - self.min_units) / self.units_step;
        let hidden_units = (0..n_layers)
            .map(|_| self.min_units + self.units_step * rng.gen_range(0..=steps))
            .collect();
        let l1 = log_uniform(rng, self.l1);
        let dropout_rate = if self.dropout.1 > self.dropout.0 {
            rng.gen_range(self.dropout.0..=self.dropout.1)
        } else {
            self.dropout.0
        };
        let learning_rate = log_uniform(rng, self.learning_rate);
        MlpArch {
            input_dim,
            hidden_units,
            output_dim,
            l1,
            dropout_rate,
            learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub arch: MlpArch,
    pub seed: u64,
    pub val_macro_f1: f64,
    pub best_epoch: usize,
    pub n_params: usize,
}

/// Proposes the next configuration given the trials run so far.
pub trait SearchStrategy {
    fn propose(&mut self, trial: usize, history: &[TrialRecord], input_dim: usize, output_dim: usize) -> MlpArch;
}

/// Independent seeded draws from a [`SearchSpace`].
#[derive(Debug, Clone)]
pub struct RandomSearch {
    space: SearchSpace,
    rng: ChaCha8Rng,
}

impl RandomSearch {
    pub fn new(space: SearchSpace, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self { space, rng }
    }
}

impl SearchStrategy for RandomSearch {
    fn propose(&mut self, _trial: usize, _history: &[TrialRecord], input_dim: usize, output_dim: usize) -> MlpArch {
        self.space.sample(&mut self.rng, input_dim, output_dim)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub trials: Vec<TrialRecord>,
    pub best: usize,
    pub best_model: Mlp,
    pub best_history: Vec<EpochStats>,
}

impl SearchOutcome {
    pub fn best_trial(&self) -> &TrialRecord {
        &self.trials[self.best]
    }
}

/// Index of the winning trial: highest validation macro-F1, then fewer
/// parameters, then earlier trial.
pub fn select_best(trials: &[TrialRecord]) -> Option<usize> {
    (0..trials.len()).min_by(|&a, &b| {
        let (ta, tb) = (&trials[a], &trials[b]);
        tb.val_macro_f1
            .total_cmp(&ta.val_macro_f1)
            .then(ta.n_params.cmp(&tb.n_params))
            .then(ta.trial.cmp(&tb.trial))
    })
}

/// Runs `budget` trials; trial `i` trains with seed `cfg.seed + i`.
pub fn hyperparameter_search(
    strategy: &mut dyn SearchStrategy,
    budget: usize,
    train_set: &Samples,
    val_set: &Samples,
    cfg: &TrainConfig,
    output_dim: usize,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::InvalidInput("search budget must be >= 1".into()));
    }
    let input_dim = train_set.x.ncols();
    let mut trials = Vec::with_capacity(budget);
    let mut models = Vec::with_capacity(budget);
    for trial in 0..budget {
        let arch = strategy.propose(trial, &trials, input_dim, output_dim);
        let seed = cfg.seed.wrapping_add(trial as u64);
        let trial_cfg = TrainConfig { seed, ..cfg.clone() };
        let outcome = train(Mlp::new(arch.clone(), seed)?, train_set, val_set, &trial_cfg)?;
        log::info!(
            "trial {trial}: layers {:?} lr {:.2e} l1 {:.2e} dropout {:.3} -> val macro-F1 {:.4} (epoch {})",
            arch.hidden_units,
            arch.learning_rate,
            arch.l1,
            arch.dropout_rate,
            outcome.best_val_macro_f1.unwrap_or(0.0),
            outcome.best_epoch
        );
        trials.push(TrialRecord {
            trial,
            n_params: arch.n_params(),
            arch,
            seed,
            val_macro_f1: outcome.best_val_macro_f1.unwrap_or(0.0),
            best_epoch: outcome.best_epoch,
        });
        models.push((outcome.model, outcome.history));
    }
    let best = select_best(&trials).expect("budget >= 1");
    let (best_model, best_history) = models.swap_remove(best);
    Ok(SearchOutcome {
        best_model,
        best_history,
        trials,
        best,
    })
}

/// JSON header stored next to the `<base>.f32` weight blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub arch: MlpArch,
    pub seed: u64,
    #[serde(default)]
    pub metrics: serde_json::Value,
    /// Class names for each output unit.
    pub classes: Vec<String>,
    /// Indices of the store features fed to PCA (absent = all features).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_mask: Option<Vec<usize>>,
    #[serde(default)]
    pub config: serde_json::Value,
}

pub fn model_paths(base: &Path) -> (PathBuf, PathBuf) {
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (base.with_file_name(format!("{name}.json")), base.with_file_name(format!("{name}.f32")))
}

pub fn save_model(base: impl AsRef<Path>, model: &Mlp, header: &ModelHeader) -> Result<()> {
    let (json, blob) = model_paths(base.as_ref());
    let bytes: Vec<u8> = model.flat_params().into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(blob, bytes)?;
    fs::write(json, serde_json::to_string_pretty(header)? + "\n")?;
    Ok(())
}

pub fn load_model(base: impl AsRef<Path>) -> Result<(Mlp, ModelHeader)> {
    let (json, blob) = model_paths(base.as_ref());
    let header: ModelHeader = serde_json::from_str(&fs::read_to_string(json)?)?;
    let bytes = fs::read(blob)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Store("model blob length is not a multiple of 4".into()));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let model = Mlp::from_flat_params(header.arch.clone(), &params)?;
    Ok((model, header))
}
