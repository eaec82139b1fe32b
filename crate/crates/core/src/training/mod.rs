//! Training of the unfolded network: weighted NMSE loss, exact gradients,
//! first-order optimizers, layer-wise growth and mixed-configuration runs.

mod backward;
mod optim;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use backward::{e_step_backward, sample_gradient, PreparedSample, SampleGrad, StateGrad};
pub use optim::{adam_step, adam_update, optimizer_step, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::config::noise_variance;
use crate::error::{Error, Result};
use crate::estimators::{reconstruct, WhitenedOperator};
use crate::measurement::measurement_matrices;
use crate::rng::stream;
use crate::unfolded::{unfolded_forward_whitened, LayerWeights, UnfoldedModel, TENSOR_NAMES};
use crate::CMatrix;

/// A system configuration `(M, SNR dB)`.
pub type ConfigKey = (usize, f64);

pub fn same_config(a: ConfigKey, b: ConfigKey) -> bool {
    a.0 == b.0 && (a.1 - b.1).abs() < 1e-9
}

pub fn config_label(key: ConfigKey) -> String {
    format!("{}:{}", key.0, key.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub lr_decay: f64,
    /// Epochs without validation improvement before the rate is decayed.
    pub lr_patience: usize,
    /// Epochs without validation improvement before a stage stops.
    pub early_stop: usize,
    pub layerwise_max: usize,
    pub hidden: usize,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip, off when absent.
    pub grad_clip: Option<f64>,
    /// `(M, SNR dB)` pairs.
    pub grid: Vec<ConfigKey>,
    pub middle: ConfigKey,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let grid = [16, 32, 48, 64]
            .into_iter()
            .flat_map(|m| [0.0, 5.0, 10.0, 15.0, 20.0].map(|snr| (m, snr)))
            .collect();
        Self {
            lr0: 1e-3,
            batch: 16,
            max_epochs: 100,
            lr_decay: 0.5,
            lr_patience: 5,
            early_stop: 10,
            layerwise_max: 10,
            hidden: crate::unfolded::DEFAULT_HIDDEN,
            optimizer: OptimizerKind::Adam,
            grad_clip: None,
            grid,
            middle: (48, 10.0),
            n_train: 8000,
            n_val: 1000,
            n_test: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if self.batch == 0 || self.max_epochs == 0 || self.layerwise_max == 0 || self.hidden == 0 {
            return bad("batch, max_epochs, layerwise_max and hidden must be >= 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.grid.is_empty() {
            return bad("config grid is empty");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

/// Per-configuration loss weights `a(M, SNR)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigWeightTable {
    pub weights: Vec<(ConfigKey, f64)>,
    pub middle: ConfigKey,
}

impl ConfigWeightTable {
    /// All weights equal to one.
    pub fn uniform(grid: &[ConfigKey], middle: ConfigKey) -> Self {
        Self { weights: grid.iter().map(|&k| (k, 1.0)).collect(), middle }
    }

    pub fn weight(&self, m: usize, snr_db: f64) -> Result<f64> {
        self.weights
            .iter()
            .find(|(k, _)| same_config(*k, (m, snr_db)))
            .map(|(_, w)| *w)
            .ok_or(Error::MissingConfig { m, snr_db })
    }
}

/// `a(M, SNR) = NMSE(middle) / NMSE(M, SNR)` from baseline NMSEs (linear).
pub fn compute_config_weights(baseline_nmse: &[(ConfigKey, f64)], middle: ConfigKey) -> Result<ConfigWeightTable> {
    let reference = baseline_nmse
        .iter()
        .find(|(k, _)| same_config(*k, middle))
        .map(|(_, v)| *v)
        .ok_or(Error::MissingConfig { m: middle.0, snr_db: middle.1 })?;
    let mut weights = Vec::with_capacity(baseline_nmse.len());
    for &(key, v) in baseline_nmse {
        if !(v > 0.0) || !(reference > 0.0) {
            return Err(Error::InvalidConfig(format!("baseline NMSE at {} is {v}", config_label(key))));
        }
        weights.push((key, reference / v));
    }
    Ok(ConfigWeightTable { weights, middle })
}

/// `a(M, SNR) * ||H - H_hat||_F^2 / ||H||_F^2`.
pub fn weighted_nmse_loss(h: &CMatrix, h_hat: &CMatrix, m: usize, snr_db: f64, table: &ConfigWeightTable) -> Result<f64> {
    let a = table.weight(m, snr_db)?;
    let energy = h.norm_squared();
    if energy == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(a * (h - h_hat).norm_squared() / energy)
}

/// One tagged sample: true channel and raw observations.
#[derive(Debug, Clone)]
pub struct Sample {
    pub h: CMatrix,
    pub y: CMatrix,
    pub m: usize,
    pub snr_db: f64,
}

/// Dictionaries and whitened operators shared by every sample; the pilot
/// matrix for pilot length `M` is the first `M` rows of a master matrix.
#[derive(Debug, Clone)]
pub struct TrainingContext {
    pub dicts: Vec<CMatrix>,
    pub operators: Vec<(usize, WhitenedOperator)>,
    pub s: usize,
    pub q: usize,
}

impl TrainingContext {
    pub fn new(dicts: Vec<CMatrix>, master_pilot: &DMatrix<f64>, pilot_lengths: &[usize], s: usize, q: usize) -> Result<Self> {
        let mut operators = Vec::new();
        for &m in pilot_lengths {
            if operators.iter().any(|(mm, _)| *mm == m) {
                continue;
            }
            if m == 0 || m > master_pilot.nrows() {
                return Err(Error::InvalidConfig(format!("pilot length {m} outside 1..={}", master_pilot.nrows())));
            }
            let w = master_pilot.rows(0, m).into_owned();
            let phi = measurement_matrices(&w, &dicts)?;
            operators.push((m, WhitenedOperator::new(&phi)?));
        }
        Ok(Self { dicts, operators, s, q })
    }

    pub fn operator(&self, m: usize) -> Result<&WhitenedOperator> {
        self.operators
            .iter()
            .find(|(mm, _)| *mm == m)
            .map(|(_, op)| op)
            .ok_or_else(|| Error::InvalidConfig(format!("no measurement operator for M={m}")))
    }

    pub fn prepare(&self, sample: &Sample) -> Result<PreparedSample> {
        let op = self.operator(sample.m)?;
        Ok(PreparedSample {
            h: sample.h.clone(),
            r: op.project(&sample.y)?,
            m: sample.m,
            snr_db: sample.snr_db,
            sigma2: noise_variance(sample.snr_db),
        })
    }

    pub fn prepare_all(&self, samples: &[Sample]) -> Result<Vec<PreparedSample>> {
        samples.iter().map(|s| self.prepare(s)).collect()
    }

    /// Channel estimate of `model` for one prepared sample.
    pub fn estimate(&self, model: &UnfoldedModel, sample: &PreparedSample) -> Result<CMatrix> {
        let op = self.operator(sample.m)?;
        let out = unfolded_forward_whitened(op, &sample.r, sample.sigma2, sample.m, sample.snr_db, model, false)?;
        reconstruct(&self.dicts, &out.mu)
    }
}

/// Mean NMSE per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `(config, mean linear NMSE, sample count)`.
    pub per_config: Vec<(ConfigKey, f64, usize)>,
    /// Samples whose forward pass produced non-finite values.
    pub failures: usize,
}

impl Evaluation {
    pub fn nmse_db(&self, key: ConfigKey) -> Option<f64> {
        self.per_config
            .iter()
            .find(|(k, _, _)| same_config(*k, key))
            .map(|(_, v, _)| 10.0 * v.log10())
    }

    /// Weighted loss averaged over samples.
    pub fn weighted_loss(&self, table: &ConfigWeightTable) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for &(key, v, n) in &self.per_config {
            total += table.weight(key.0, key.1)? * v * n as f64;
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }
}

/// Evaluates `model` on every sample; a diverging forward pass counts as
/// infinite NMSE.
pub fn evaluate(model: &UnfoldedModel, ctx: &TrainingContext, samples: &[PreparedSample]) -> Result<Evaluation> {
    let mut per_config: Vec<(ConfigKey, f64, usize)> = Vec::new();
    let mut failures = 0;
    for s in samples {
        let nmse = match ctx.estimate(model, s) {
            Ok(h_hat) => (&s.h - h_hat).norm_squared() / s.h.norm_squared(),
            Err(Error::NonFinite { .. }) => {
                failures += 1;
                f64::INFINITY
            }
            Err(e) => return Err(e),
        };
        let key = (s.m, s.snr_db);
        match per_config.iter_mut().find(|(k, _, _)| same_config(*k, key)) {
            Some(entry) => {
                entry.1 += nmse;
                entry.2 += 1;
            }
            None => per_config.push((key, nmse, 1)),
        }
    }
    for entry in &mut per_config {
        entry.1 /= entry.2 as f64;
    }
    per_config.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));
    Ok(Evaluation { per_config, failures })
}

/// Mean loss and gradients over a batch; samples with non-finite forward
/// passes are skipped and counted.
pub fn batch_gradient(
    model: &UnfoldedModel,
    ctx: &TrainingContext,
    batch: &[&PreparedSample],
    table: &ConfigWeightTable,
) -> Result<(f64, Vec<LayerWeights>, usize)> {
    let mut grads: Vec<LayerWeights> = model.layers.iter().map(LayerWeights::zeros_like).collect();
    let mut loss = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for s in batch {
        let weight = table.weight(s.m, s.snr_db)?;
        match sample_gradient(model, ctx.operator(s.m)?, &ctx.dicts, s, weight) {
            Ok(sg) => {
                loss += sg.loss;
                used += 1;
                for (acc, g) in grads.iter_mut().zip(&sg.layers) {
                    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                        a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Err(Error::NonFinite { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used > 0 {
        let scale = 1.0 / used as f64;
        for g in &mut grads {
            for t in g.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v *= scale);
            }
        }
        loss *= scale;
    }
    Ok((loss, grads, skipped))
}

fn clip(grads: &mut [LayerWeights], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.tensors())
        .flat_map(|t| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            for t in g.tensors_mut() {
                t.data.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub stage: usize,
    /// Epoch 0 is the evaluation before any update.
    pub epoch: usize,
    pub lr: f64,
    /// Mean batch loss of the epoch; `None` at epoch 0.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_nmse_db: Vec<(ConfigKey, f64)>,
    pub skipped: usize,
}

impl LogEntry {
    /// `key=value` pairs separated by spaces.
    pub fn to_line(&self) -> String {
        let mut line = format!(
            "stage={} epoch={} lr={} train_loss={} val_loss={} skipped={}",
            self.stage,
            self.epoch,
            self.lr,
            self.train_loss.map_or("-".to_string(), |v| v.to_string()),
            self.val_loss,
            self.skipped
        );
        for (key, db) in &self.val_nmse_db {
            let _ = write!(line, " val_nmse_db[{}]={db:.4}", config_label(*key));
        }
        line
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|e| e.to_line() + "\n").collect()
    }

    /// Best validation loss reached in `stage`.
    pub fn stage_best(&self, stage: usize) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.val_loss)
            .min_by(f64::total_cmp)
    }

    /// Validation loss before the first update of `stage`.
    pub fn stage_start(&self, stage: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.stage == stage && e.epoch == 0).map(|e| e.val_loss)
    }

    pub fn stages(&self) -> usize {
        self.entries.iter().map(|e| e.stage).max().unwrap_or(0)
    }
}

fn log_entry(stage: usize, epoch: usize, lr: f64, train_loss: Option<f64>, eval: &Evaluation, table: &ConfigWeightTable, skipped: usize) -> Result<LogEntry> {
    Ok(LogEntry {
        stage,
        epoch,
        lr,
        train_loss,
        val_loss: eval.weighted_loss(table)?,
        val_nmse_db: eval.per_config.iter().map(|(k, v, _)| (*k, 10.0 * v.log10())).collect(),
        skipped,
    })
}

/// Trains every layer of `model` jointly until early stopping and returns
/// the weights with the best validation loss.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    model: &UnfoldedModel,
    ctx: &TrainingContext,
    train: &[PreparedSample],
    val: &[PreparedSample],
    table: &ConfigWeightTable,
    cfg: &TrainConfig,
    stage: usize,
    log: &mut TrainingLog,
) -> Result<(UnfoldedModel, f64)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let mut rng = stream(cfg.seed, stage as u64);
    let mut current = model.clone();
    let mut state = OptimizerState::new(cfg.optimizer, &current);
    let mut lr = cfg.lr0;

    let eval = evaluate(&current, ctx, val)?;
    let first = log_entry(stage, 0, lr, None, &eval, table, 0)?;
    let mut best = (current.clone(), first.val_loss);
    log.entries.push(first);
    let (mut since_best, mut since_decay) = (0, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches, mut skipped) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads, sk) = batch_gradient(&current, ctx, &batch, table)?;
            skipped += sk;
            if sk == batch.len() {
                continue;
            }
            if let Some(c) = cfg.grad_clip {
                clip(&mut grads, c);
            }
            optimizer_step(&mut current, &grads, &mut state, lr);
            total += loss;
            batches += 1;
        }
        let eval = evaluate(&current, ctx, val)?;
        let entry = log_entry(stage, epoch, lr, Some(total / batches.max(1) as f64), &eval, table, skipped)?;
        let val_loss = entry.val_loss;
        log.entries.push(entry);
        if val_loss < best.1 {
            best = (current.clone(), val_loss);
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.early_stop {
                break;
            }
            if since_decay >= cfg.lr_patience {
                lr *= cfg.lr_decay;
                since_decay = 0;
            }
        }
    }
    Ok(best)
}

/// Result of a (layer-wise) training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: UnfoldedModel,
    pub log: TrainingLog,
    /// Best validation loss of each completed stage.
    pub stage_losses: Vec<f64>,
}

fn check_tags(samples: &[PreparedSample], table: &ConfigWeightTable) -> Result<()> {
    for s in samples {
        table.weight(s.m, s.snr_db)?;
    }
    Ok(())
}

fn grow_and_train(
    ctx: &TrainingContext,
    train: &[PreparedSample],
    val: &[PreparedSample],
    table: &ConfigWeightTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    check_tags(train, table)?;
    check_tags(val, table)?;
    let mut log = TrainingLog::default();
    let mut init_rng = stream(cfg.seed, u64::MAX);
    let mut model = UnfoldedModel::new(1, ctx.s, ctx.q, cfg.hidden, &mut init_rng)?;
    model.configs = table.weights.iter().map(|(k, _)| *k).collect();
    let mut stage_losses = Vec::new();
    let mut best: Option<(UnfoldedModel, f64)> = None;

    for stage in 1..=cfg.layerwise_max {
        let start = match &best {
            None => model.clone(),
            Some((m, _)) => m.grown(),
        };
        let (trained, loss) = train_stage(&start, ctx, train, val, table, cfg, stage, &mut log)?;
        stage_losses.push(loss);
        match &best {
            Some((_, prev)) if loss >= *prev => break,
            _ => best = Some((trained, loss)),
        }
    }
    let (model, _) = best.expect("at least one stage");
    Ok(TrainOutcome { model, log, stage_losses })
}

/// Layer-wise training with unit loss weights: starts at one layer, grows
/// by cloning the last layer, retrains all layers, and stops at the first
/// stage that does not improve the validation loss.
pub fn layerwise_train(ctx: &TrainingContext, train: &[PreparedSample], val: &[PreparedSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut keys: Vec<ConfigKey> = Vec::new();
    for s in train.iter().chain(val) {
        if !keys.iter().any(|k| same_config(*k, (s.m, s.snr_db))) {
            keys.push((s.m, s.snr_db));
        }
    }
    let middle = keys.first().copied().unwrap_or(cfg.middle);
    grow_and_train(ctx, train, val, &ConfigWeightTable::uniform(&keys, middle), cfg)
}

/// Layer-wise training on samples from several configurations with the
/// weighted NMSE loss; every sample's `(M, SNR)` must be in `table`.
pub fn mixed_train(
    ctx: &TrainingContext,
    train: &[PreparedSample],
    val: &[PreparedSample],
    table: &ConfigWeightTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    grow_and_train(ctx, train, val, table, cfg)
}

/// Per-tensor comparison of the analytic gradient with central differences:
/// `(name, ||analytic - fd|| / max(||analytic||, ||fd||))`.
pub fn gradient_check(
    model: &UnfoldedModel,
    op: &WhitenedOperator,
    dicts: &[CMatrix],
    sample: &PreparedSample,
    step: f64,
) -> Result<Vec<(String, f64)>> {
    let analytic = sample_gradient(model, op, dicts, sample, 1.0)?;
    let loss_of = |m: &UnfoldedModel| -> Result<f64> {
        let out = unfolded_forward_whitened(op, &sample.r, sample.sigma2, sample.m, sample.snr_db, m, false)?;
        let h_hat = reconstruct(dicts, &out.mu)?;
        Ok((&sample.h - h_hat).norm_squared() / sample.h.norm_squared())
    };
    let mut report = Vec::new();
    let mut probe = model.clone();
    for l in 0..model.depth() {
        for (t, name) in TENSOR_NAMES.iter().enumerate() {
            let len = model.layers[l].tensors()[t].len();
            let mut diff = 0.0;
            let mut norm_a = 0.0;
            let mut norm_fd = 0.0;
            for i in 0..len {
                let orig = model.layers[l].tensors()[t].data[i];
                probe.layers[l].tensors_mut()[t].data[i] = orig + step;
                let plus = loss_of(&probe)?;
                probe.layers[l].tensors_mut()[t].data[i] = orig - step;
                let minus = loss_of(&probe)?;
                probe.layers[l].tensors_mut()[t].data[i] = orig;
                let fd = (plus - minus) / (2.0 * step);
                let a = analytic.layers[l].tensors()[t].data[i];
                diff += (a - fd) * (a - fd);
                norm_a += a * a;
                norm_fd += fd * fd;
            }
            let denom = norm_a.sqrt().max(norm_fd.sqrt());
            let rel = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
            report.push((format!("layer{l}.{name}"), rel));
        }
    }
    Ok(report)
}
