//! Losses, the Adam optimizer and the fit/evaluate loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetBundle, Split, Task};
use crate::dfs::EmbeddingSpec;
use crate::encoder::{worker_threads, PositionalEncoder};
use crate::error::{GeoError, Result};
use crate::geom::{uniform_points, SpherePoint};
use crate::matrix::Matrix;
use crate::net::{Model, NetworkArch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    BinaryCrossEntropy,
    MeanSquaredError,
    /// Presence-only multi-label loss: every class output is a sigmoid
    /// logit, unobserved classes and outputs at random locations count as
    /// negatives, and the observed class is weighted by `lambda_pos`.
    AssumeNegative {
        lambda_pos: f64,
    },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::SoftmaxCrossEntropy => "ce",
            LossKind::BinaryCrossEntropy => "bce",
            LossKind::MeanSquaredError => "mse",
            LossKind::AssumeNegative { .. } => "assume_negative",
        }
    }

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::MultiClass(_) => LossKind::SoftmaxCrossEntropy,
            Task::Binary => LossKind::BinaryCrossEntropy,
            Task::Regression(_) => LossKind::MeanSquaredError,
        }
    }

    fn check_task(&self, task: Task) -> Result<()> {
        let ok = matches!(
            (self, task),
            (LossKind::SoftmaxCrossEntropy, Task::MultiClass(_))
                | (LossKind::AssumeNegative { .. }, Task::MultiClass(_))
                | (LossKind::BinaryCrossEntropy, Task::Binary)
                | (LossKind::MeanSquaredError, Task::Regression(_))
        );
        if ok {
            Ok(())
        } else {
            Err(GeoError::invalid(format!(
                "loss `{}` does not fit task {task}",
                self.name()
            )))
        }
    }
}

/// Per-sample supervision for one split.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Binary(Vec<bool>),
    Values(Matrix),
    /// `n` samples with no observed class; only meaningful for the
    /// random-location term of [`LossKind::AssumeNegative`].
    Absent(usize),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Binary(v) => v.len(),
            Targets::Values(m) => m.rows(),
            Targets::Absent(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(indices.iter().map(|&i| v[i]).collect()),
            Targets::Binary(v) => Targets::Binary(indices.iter().map(|&i| v[i]).collect()),
            Targets::Values(m) => Targets::Values(m.select_rows(indices)),
            Targets::Absent(_) => Targets::Absent(indices.len()),
        }
    }
}

fn shape_error(msg: impl Into<String>) -> GeoError {
    GeoError::invalid(msg)
}

fn log_sigmoid(z: f64) -> f64 {
    // ln σ(z) = -softplus(-z)
    -softplus(-z)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean loss over the batch together with `∂loss/∂predictions`.
pub fn loss_and_output_grad(
    kind: LossKind,
    pred: &Matrix,
    targets: &Targets,
) -> Result<(f64, Matrix)> {
    let n = pred.rows();
    if n == 0 || targets.len() != n {
        return Err(shape_error(format!(
            "{} predictions for {} targets",
            n,
            targets.len()
        )));
    }
    let k = pred.cols();
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, k);
    let mut total = 0.0;
    match (kind, targets) {
        (LossKind::SoftmaxCrossEntropy, Targets::Classes(cls)) => {
            for (i, &c) in cls.iter().enumerate() {
                if c >= k {
                    return Err(shape_error(format!("class {c} outside 0..{k}")));
                }
                let row = pred.row(i);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let g = grad.row_mut(i);
                let mut sum = 0.0;
                for (gj, &z) in g.iter_mut().zip(row) {
                    *gj = (z - max).exp();
                    sum += *gj;
                }
                total += sum.ln() + max - row[c];
                for gj in g.iter_mut() {
                    *gj *= inv_n / sum;
                }
                g[c] -= inv_n;
            }
        }
        (LossKind::BinaryCrossEntropy, Targets::Binary(labels)) => {
            if k != 1 {
                return Err(shape_error(
                    "binary cross-entropy expects one logit per sample",
                ));
            }
            for (i, &t) in labels.iter().enumerate() {
                let z = pred.row(i)[0];
                let t = if t { 1.0 } else { 0.0 };
                total += softplus(z) - t * z;
                grad.row_mut(i)[0] = (sigmoid(z) - t) * inv_n;
            }
        }
        (LossKind::MeanSquaredError, Targets::Values(t)) => {
            if t.cols() != k {
                return Err(shape_error(format!(
                    "{} output channels for {} target channels",
                    k,
                    t.cols()
                )));
            }
            let scale = 1.0 / (n * k) as f64;
            for ((g, &y), &v) in grad.data_mut().iter_mut().zip(pred.data()).zip(t.data()) {
                let d = y - v;
                total += d * d;
                *g = 2.0 * d * scale;
            }
            return Ok((total * scale, grad));
        }
        (LossKind::AssumeNegative { lambda_pos }, Targets::Classes(cls)) => {
            let inv_s = 1.0 / k as f64;
            for (i, &c) in cls.iter().enumerate() {
                if c >= k {
                    return Err(shape_error(format!("class {c} outside 0..{k}")));
                }
                let row = pred.row(i);
                let g = grad.row_mut(i);
                for (s, (&z, gs)) in row.iter().zip(g.iter_mut()).enumerate() {
                    if s == c {
                        total -= lambda_pos * log_sigmoid(z) * inv_s;
                        *gs = -lambda_pos * (1.0 - sigmoid(z)) * inv_s * inv_n;
                    } else {
                        total += softplus(z) * inv_s;
                        *gs = sigmoid(z) * inv_s * inv_n;
                    }
                }
            }
        }
        (LossKind::AssumeNegative { .. }, Targets::Absent(_)) => {
            let inv_s = 1.0 / k as f64;
            for (g, &z) in grad.data_mut().iter_mut().zip(pred.data()) {
                total += softplus(z) * inv_s;
                *g = sigmoid(z) * inv_s * inv_n;
            }
        }
        (kind, _) => {
            return Err(shape_error(format!(
                "targets do not match loss `{}`",
                kind.name()
            )))
        }
    }
    Ok((total * inv_n, grad))
}

/// Mean loss only.
pub fn loss(kind: LossKind, pred: &Matrix, targets: &Targets) -> Result<f64> {
    loss_and_output_grad(kind, pred, targets).map(|(l, _)| l)
}

fn check_probabilities(p: &[f64], what: &str) -> Result<()> {
    match p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        Some(v) => Err(GeoError::invalid(format!(
            "{what} probability {v} outside (0, 1)"
        ))),
        None => Ok(()),
    }
}

/// Assume-negative loss of one sample on per-class probabilities:
/// `-(1/S) Σ_s [1{s=pos} λ ln ŷ_s + 1{s≠pos} ln(1-ŷ_s) + ln(1-ŷ'_s)]`,
/// where `ŷ'` are the predictions at a random location.
pub fn assume_negative_loss(
    pred: &[f64],
    positive_class: usize,
    pred_rand: &[f64],
    lambda_pos: f64,
) -> Result<f64> {
    let s = pred.len();
    if s == 0 || pred_rand.len() != s || positive_class >= s {
        return Err(GeoError::invalid(
            "assume-negative loss needs equal-length predictions and a valid positive class",
        ));
    }
    check_probabilities(pred, "prediction")?;
    check_probabilities(pred_rand, "random-location")?;
    let mut total = 0.0;
    for (j, (&y, &r)) in pred.iter().zip(pred_rand).enumerate() {
        total += if j == positive_class {
            lambda_pos * y.ln()
        } else {
            (1.0 - y).ln()
        };
        total += (1.0 - r).ln();
    }
    Ok(-total / s as f64)
}

/// Gradients of [`assume_negative_loss`] with respect to `pred` and
/// `pred_rand`.
pub fn assume_negative_grad(
    pred: &[f64],
    positive_class: usize,
    pred_rand: &[f64],
    lambda_pos: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assume_negative_loss(pred, positive_class, pred_rand, lambda_pos)?;
    let inv_s = 1.0 / pred.len() as f64;
    let gp = pred
        .iter()
        .enumerate()
        .map(|(j, &y)| {
            if j == positive_class {
                -lambda_pos / y * inv_s
            } else {
                inv_s / (1.0 - y)
            }
        })
        .collect();
    let gr = pred_rand.iter().map(|&r| inv_s / (1.0 - r)).collect();
    Ok((gp, gr))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay applied first.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(GeoError::invalid(
            "optimizer vectors have different lengths",
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(GeoError::numeric("optimizer gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let decay = 1.0 - learning_rate * weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        *p *= decay;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// `None` picks the natural loss for the task.
    pub loss_kind: Option<LossKind>,
    pub lambda_pos: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 512,
            max_epochs: 100,
            patience: 30,
            seed: 0,
            loss_kind: None,
            lambda_pos: 1.0,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str, source_name: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            GeoError::parse(
                source_name,
                format!("line {}", i + 1),
                "expected key = value",
            )
        })?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(GeoError::parse(
                source_name,
                format!("line {}", i + 1),
                format!("duplicate key `{k}`"),
            ));
        }
    }
    Ok(map)
}

fn take_parsed<T: FromStr>(
    map: &mut BTreeMap<String, String>,
    key: &str,
    source_name: &str,
) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|e: T::Err| {
            GeoError::parse(source_name, key, format!("bad value `{v}`: {e}"))
        }),
    }
}

impl TrainConfig {
    /// Consumes the training keys from `map`, leaving any others in place.
    pub fn from_map(map: &mut BTreeMap<String, String>, source_name: &str) -> Result<Self> {
        let d = TrainConfig::default();
        let lambda_pos = take_parsed(map, "lambda_pos", source_name)?.unwrap_or(d.lambda_pos);
        let loss_kind = match map.remove("loss").as_deref() {
            None | Some("auto") => None,
            Some("ce") => Some(LossKind::SoftmaxCrossEntropy),
            Some("bce") => Some(LossKind::BinaryCrossEntropy),
            Some("mse") => Some(LossKind::MeanSquaredError),
            Some("assume_negative") => Some(LossKind::AssumeNegative { lambda_pos }),
            Some(other) => {
                return Err(GeoError::parse(
                    source_name,
                    "loss",
                    format!("unknown loss `{other}`"),
                ))
            }
        };
        let cfg = Self {
            learning_rate: take_parsed(map, "learning_rate", source_name)?
                .unwrap_or(d.learning_rate),
            weight_decay: take_parsed(map, "weight_decay", source_name)?.unwrap_or(d.weight_decay),
            batch_size: take_parsed(map, "batch_size", source_name)?.unwrap_or(d.batch_size),
            max_epochs: take_parsed(map, "max_epochs", source_name)?.unwrap_or(d.max_epochs),
            patience: take_parsed(map, "patience", source_name)?.unwrap_or(d.patience),
            seed: take_parsed(map, "seed", source_name)?.unwrap_or(d.seed),
            loss_kind,
            lambda_pos,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GeoError::invalid(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.lambda_pos.is_finite() && self.lambda_pos > 0.0) {
            return bad("lambda_pos must be > 0");
        }
        Ok(())
    }

    /// Key=value text that [`TrainConfig::from_map`] reads back.
    pub fn to_kv_text(&self) -> String {
        let loss = self.loss_kind.map_or("auto", |k| k.name());
        format!(
            "learning_rate = {}\nweight_decay = {}\nbatch_size = {}\nmax_epochs = {}\npatience = {}\nseed = {}\nloss = {}\nlambda_pos = {}\n",
            self.learning_rate,
            self.weight_decay,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.seed,
            loss,
            self.lambda_pos
        )
    }
}

impl FromStr for TrainConfig {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        let mut map = parse_key_values(s, "train config")?;
        let cfg = TrainConfig::from_map(&mut map, "train config")?;
        if let Some(k) = map.keys().next() {
            return Err(GeoError::parse("train config", k, "unknown key"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl FitResult {
    pub fn best_val_loss(&self) -> f64 {
        self.history[self.best_epoch - 1].val_loss
    }

    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.history {
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Output width the network needs for a task.
pub fn output_dim(task: Task) -> usize {
    match task {
        Task::MultiClass(k) => k,
        Task::Binary => 1,
        Task::Regression(c) => c,
    }
}

const EVAL_CHUNK: usize = 2048;
const RANDOM_LOCATION_STREAM: u64 = 3;

/// Eval-mode predictions for embedded inputs, chunked and spread over
/// [`worker_threads`] threads.
pub fn predict_embedded(model: &Model, x: &Matrix) -> Result<Matrix> {
    let out_dim = model.spec().out_dim;
    let n = x.rows();
    let chunks: Vec<Vec<usize>> = (0..n)
        .collect::<Vec<_>>()
        .chunks(EVAL_CHUNK)
        .map(<[usize]>::to_vec)
        .collect();
    let threads = worker_threads().min(chunks.len()).max(1);
    let mut parts: Vec<Result<Matrix>> = Vec::with_capacity(chunks.len());
    if threads == 1 {
        for c in &chunks {
            parts.push(model.forward_batch(&x.select_rows(c), None));
        }
    } else {
        let per = chunks.len().div_ceil(threads);
        parts = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| {
                    scope.spawn(move || {
                        group
                            .iter()
                            .map(|c| model.forward_batch(&x.select_rows(c), None))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        });
    }
    let mut data = Vec::with_capacity(n * out_dim);
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Ok(Matrix::from_vec(n, out_dim, data))
}

/// Eval-mode predictions at raw points.
pub fn predict(
    model: &Model,
    encoder: &PositionalEncoder,
    points: &[SpherePoint],
) -> Result<Matrix> {
    let mut data = Vec::with_capacity(points.len() * model.spec().out_dim);
    for chunk in points.chunks(16 * EVAL_CHUNK) {
        data.extend_from_slice(predict_embedded(model, &encoder.embed_batch(chunk))?.data());
    }
    Ok(Matrix::from_vec(points.len(), model.spec().out_dim, data))
}

/// Mean eval-mode loss of `model` on already embedded inputs. For the
/// assume-negative loss `random` supplies the embedded random locations.
fn dataset_loss(
    model: &Model,
    x: &Matrix,
    targets: &Targets,
    loss: LossKind,
    random: Option<&Matrix>,
) -> Result<f64> {
    let pred = predict_embedded(model, x)?;
    let mut value = self::loss(loss, &pred, targets)?;
    if let (LossKind::AssumeNegative { .. }, Some(r)) = (loss, random) {
        let pr = predict_embedded(model, r)?;
        value += self::loss(loss, &pr, &Targets::Absent(r.rows()))?;
    }
    Ok(value)
}

/// Loss of `model` on a split, embedding every batch from scratch.
pub fn split_loss(
    model: &Model,
    encoder: &PositionalEncoder,
    split: &Split,
    loss: LossKind,
) -> Result<f64> {
    let pred = predict(model, encoder, &split.points)?;
    self::loss(loss, &pred, &split.targets)
}

/// Trains a fresh network of architecture `arch` on top of embedding `pe`.
///
/// Embeddings are computed once per split. Each epoch visits the training
/// set in a seeded random order; after it the validation loss decides
/// whether the weights become the new best. Training stops once `patience`
/// epochs pass without improvement and the best weights are returned.
pub fn fit(
    bundle: &DatasetBundle,
    pe: &EmbeddingSpec,
    arch: NetworkArch,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if bundle.train.is_empty() || bundle.val.is_empty() {
        return Err(GeoError::invalid(
            "fit needs non-empty train and val splits",
        ));
    }
    let loss_kind = cfg.loss_kind.unwrap_or(LossKind::default_for(bundle.task));
    loss_kind.check_task(bundle.task)?;
    let encoder = PositionalEncoder::new(pe)?;
    let spec = arch.with_dims(encoder.dim(), output_dim(bundle.task))?;
    let mut model = Model::init(spec, cfg.seed)?;

    let x_train = encoder.embed_batch(&bundle.train.points);
    let x_val = encoder.embed_batch(&bundle.val.points);

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);
    let mut random_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    random_rng.set_stream(RANDOM_LOCATION_STREAM);
    let assume_negative = matches!(loss_kind, LossKind::AssumeNegative { .. });
    let val_random = assume_negative
        .then(|| encoder.embed_batch(&uniform_points(&mut random_rng, bundle.val.len())));

    let mut opt = AdamState::new(model.num_params());
    let mut order: Vec<usize> = (0..bundle.train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut order_rng);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x_train.select_rows(batch);
            let tb = bundle.train.targets.select(batch);
            let (mut value, mut grad) = model
                .loss_and_grad(&xb, &tb, loss_kind, Some(&mut dropout_rng))
                .map_err(|e| at_epoch(e, epoch))?;
            if assume_negative {
                let xr = encoder.embed_batch(&uniform_points(&mut random_rng, batch.len()));
                let (vr, gr) = model
                    .loss_and_grad(
                        &xr,
                        &Targets::Absent(batch.len()),
                        loss_kind,
                        Some(&mut dropout_rng),
                    )
                    .map_err(|e| at_epoch(e, epoch))?;
                value += vr;
                for (g, r) in grad.iter_mut().zip(gr) {
                    *g += r;
                }
            }
            weighted += value * batch.len() as f64;
            adam_step(
                model.params_mut(),
                &grad,
                &mut opt,
                cfg.learning_rate,
                cfg.weight_decay,
            )
            .map_err(|e| at_epoch(e, epoch))?;
        }
        let train_loss = weighted / order.len() as f64;
        let val_loss = dataset_loss(
            &model,
            &x_val,
            &bundle.val.targets,
            loss_kind,
            val_random.as_ref(),
        )
        .map_err(|e| at_epoch(e, epoch))?;
        if !val_loss.is_finite() {
            return Err(GeoError::numeric(format!(
                "validation loss at epoch {epoch}"
            )));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match &best {
            Some((_, b, _)) if val_loss >= *b => {}
            _ => best = Some((epoch, val_loss, model.params().to_vec())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if epoch - best_epoch >= cfg.patience && epoch < cfg.max_epochs {
            stopped_early = true;
            break;
        }
    }

    let (best_epoch, _, params) = best.expect("at least one epoch runs");
    model.params_mut().copy_from_slice(&params);
    Ok(FitResult {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

fn at_epoch(e: GeoError, epoch: usize) -> GeoError {
    match e {
        GeoError::NumericFailure { context } => {
            GeoError::numeric(format!("{context} at epoch {epoch}"))
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Accuracy,
    Mse,
    BandedAccuracy { band_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandAccuracy {
    pub south_deg: f64,
    pub north_deg: f64,
    /// `NaN` for a band without points.
    pub accuracy: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricReport {
    Scalar(f64),
    Bands(Vec<BandAccuracy>),
}

impl MetricReport {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            MetricReport::Scalar(v) => Some(*v),
            MetricReport::Bands(_) => None,
        }
    }
}

/// Per-sample correctness of classification predictions.
pub fn correct_predictions(pred: &Matrix, targets: &Targets) -> Result<Vec<bool>> {
    if pred.rows() != targets.len() {
        return Err(shape_error("prediction count does not match targets"));
    }
    match targets {
        Targets::Classes(cls) => Ok(pred
            .iter_rows()
            .zip(cls)
            .map(|(row, &c)| argmax(row) == c)
            .collect()),
        Targets::Binary(labels) => Ok(pred
            .iter_rows()
            .zip(labels)
            .map(|(row, &t)| (row[0] > 0.0) == t)
            .collect()),
        _ => Err(GeoError::invalid("accuracy needs class or binary targets")),
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Latitude bands `[-90, -90+w), …, [90-w, 90]`; the last band is closed
/// and absorbs any remainder when `w` does not divide 180.
pub fn latitude_bands(band_deg: f64) -> Result<Vec<(f64, f64)>> {
    if !(band_deg.is_finite() && band_deg > 0.0 && band_deg <= 180.0) {
        return Err(GeoError::invalid(format!(
            "band width {band_deg} outside (0, 180]"
        )));
    }
    let count = ((180.0 / band_deg) - 1e-9).ceil().max(1.0) as usize;
    Ok((0..count)
        .map(|i| {
            let south = -90.0 + i as f64 * band_deg;
            let north = if i + 1 == count {
                90.0
            } else {
                south + band_deg
            };
            (south, north)
        })
        .collect())
}

pub fn banded_accuracy(
    points: &[SpherePoint],
    correct: &[bool],
    band_deg: f64,
) -> Result<Vec<BandAccuracy>> {
    let bands = latitude_bands(band_deg)?;
    let mut hits = vec![0usize; bands.len()];
    let mut counts = vec![0usize; bands.len()];
    for (p, &ok) in points.iter().zip(correct) {
        let lat = p.lat_deg();
        let i = bands
            .iter()
            .position(|&(s, n)| lat >= s && lat < n)
            .unwrap_or(bands.len() - 1);
        counts[i] += 1;
        hits[i] += ok as usize;
    }
    Ok(bands
        .into_iter()
        .zip(hits.iter().zip(&counts))
        .map(|((south_deg, north_deg), (&h, &n))| BandAccuracy {
            south_deg,
            north_deg,
            accuracy: if n == 0 {
                f64::NAN
            } else {
                h as f64 / n as f64
            },
            n_points: n,
        })
        .collect())
}

pub fn evaluate(
    model: &Model,
    encoder: &PositionalEncoder,
    split: &Split,
    metric: Metric,
) -> Result<MetricReport> {
    if split.is_empty() {
        return Err(GeoError::invalid("cannot evaluate on an empty split"));
    }
    let pred = predict(model, encoder, &split.points)?;
    match metric {
        Metric::Accuracy => {
            let c = correct_predictions(&pred, &split.targets)?;
            Ok(MetricReport::Scalar(
                c.iter().filter(|&&b| b).count() as f64 / c.len() as f64,
            ))
        }
        Metric::Mse => match &split.targets {
            Targets::Values(_) => Ok(MetricReport::Scalar(loss(
                LossKind::MeanSquaredError,
                &pred,
                &split.targets,
            )?)),
            _ => Err(GeoError::invalid("mse needs regression targets")),
        },
        Metric::BandedAccuracy { band_deg } => {
            let c = correct_predictions(&pred, &split.targets)?;
            Ok(MetricReport::Bands(banded_accuracy(
                &split.points,
                &c,
                band_deg,
            )?))
        }
    }
}
