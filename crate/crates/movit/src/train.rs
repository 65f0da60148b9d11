//! Training loop (AdamW with cosine annealing), per-batch fact caching,
//! and evaluation metrics.

use crate::data::Dataset;
use crate::error::{MovitError, Result};
use crate::memory::{alpha_schedule, EmaOrientation, FactStore, MemoryBank, ScheduleState};
use crate::tensor::{Scalar, Tape};
use crate::vit::{ForwardOptions, Mode, ParamSet, VitModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub alpha0: f64,
    pub t0_fraction: f64,
    pub knn_k: usize,
    pub tau: f64,
    pub prototype_multiplier: usize,
    pub seed: u64,
    pub data_fraction: f64,
    #[serde(skip, default)]
    pub ema_orientation: EmaOrientation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            total_epochs: 50,
            batch_size: 16,
            weight_decay: 0.01,
            alpha0: 0.01,
            t0_fraction: 0.10,
            knn_k: 32,
            tau: 0.5,
            prototype_multiplier: 32,
            seed: 0,
            data_fraction: 1.0,
            ema_orientation: EmaOrientation::Paper,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("learning_rate", self.learning_rate),
            ("alpha0", self.alpha0),
            ("t0_fraction", self.t0_fraction),
            ("tau", self.tau),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(MovitError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(MovitError::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.total_epochs == 0
            || self.batch_size == 0
            || self.knn_k == 0
            || self.prototype_multiplier == 0
        {
            return Err(MovitError::Config(
                "total_epochs, batch_size, knn_k, and prototype_multiplier must be positive"
                    .into(),
            ));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(MovitError::Config(format!(
                "data_fraction must lie in (0, 1], got {}",
                self.data_fraction
            )));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<ScheduleState> {
        ScheduleState::new(self.alpha0, self.total_epochs, self.t0_fraction)
    }
}

/// Classification quality plus mean loss over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![Vec::new(); num_params],
            v: vec![Vec::new(); num_params],
        }
    }

    /// One update over all parameters. `grads[i]` of `None` skips the
    /// parameter entirely (it did not participate in the pass).
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &[Option<Vec<T>>],
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (ib1, ib2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let eps = T::from_f64(self.eps);
        let lr_t = T::from_f64(lr);
        let decay = T::from_f64(1.0 - lr * self.weight_decay);
        let (ibc1, ibc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        for (idx, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let param = params.get_mut(idx);
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(MovitError::Optimizer {
                    name: param.name.clone(),
                    message: format!("non-finite gradient component {bad}"),
                });
            }
            if self.m[idx].is_empty() {
                self.m[idx] = vec![T::zero(); grad.len()];
                self.v[idx] = vec![T::zero(); grad.len()];
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..grad.len() {
                let g = grad[i];
                param.data[i] = param.data[i] * decay;
                m[i] = b1 * m[i] + ib1 * g;
                v[i] = b2 * v[i] + ib2 * g * g;
                let m_hat = m[i] * ibc1;
                let v_hat = v[i] * ibc2;
                param.data[i] = param.data[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing: `lr_min + (lr_max−lr_min)·(1+cos(π·t/total))/2`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

/// Per-epoch training outcome.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub alpha: f64,
    pub lr: f64,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

/// One pass over the dataset in seeded shuffled order. Each batch runs
/// forward (emitting attention facts at the memorizing layer), backward,
/// an AdamW step, and then blends the emitted facts into the bank with
/// the scheduled coefficient.
pub fn train_epoch(
    model: &mut VitModel<f32>,
    bank: &mut MemoryBank<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
    optimizer: &mut AdamW<f32>,
) -> Result<EpochStats> {
    if dataset.is_empty() {
        return Err(MovitError::Contract("training dataset is empty".into()));
    }
    if epoch >= cfg.total_epochs {
        return Err(MovitError::Contract(format!(
            "epoch {epoch} out of range for {} total",
            cfg.total_epochs
        )));
    }
    let schedule = cfg.schedule()?;
    let alpha = alpha_schedule(epoch, &schedule);
    let alpha_eff = match cfg.ema_orientation {
        EmaOrientation::Paper => alpha,
        EmaOrientation::Inverted => 1.0 - alpha,
    };
    let lr = cosine_lr(epoch, cfg.total_epochs, cfg.learning_rate, 0.0);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut epoch_rng(cfg.seed, epoch));

    let uses_memory = model.cfg.movit_layer.is_some();
    let mut loss_sum = 0.0f64;
    let mut batches = 0usize;
    for chunk in order.chunks(cfg.batch_size) {
        let images = dataset.gather(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
        let sample_ids: Vec<u64> = chunk.iter().map(|&i| i as u64).collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let opts = ForwardOptions {
            mode: Mode::Train,
            store: if uses_memory { Some(bank as &dyn FactStore<f32>) } else { None },
            knn_k: cfg.knn_k,
            sample_ids: &sample_ids,
        };
        let (logits, emissions) = crate::vit::vit_forward(&mut tape, &bound, &images, chunk.len(), &opts)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        tape.ensure_finite(loss, "training loss")?;
        loss_sum += tape.data(loss)[0] as f64;
        batches += 1;
        tape.backward(loss)?;
        let grads: Vec<Option<Vec<f32>>> = bound
            .ids
            .iter()
            .map(|&id| tape.grad(id).map(|g| g.to_vec()))
            .collect();
        optimizer.step(&mut model.params, &grads, lr)?;
        for fact in emissions {
            bank.cache_or_update(fact, alpha_eff, alpha_eff)?;
        }
    }
    bank.epoch_counter = bank.epoch_counter.max(epoch as u32 + 1);
    Ok(EpochStats {
        mean_loss: loss_sum / batches as f64,
        alpha,
        lr,
    })
}

/// Rank-statistic AUC with tie-averaged ranks; 0.5 when a class is
/// absent.
fn rank_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    (pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64
}

/// Metrics from per-sample class probabilities and labels. Binary tasks
/// treat class 1 as positive; multiclass tasks macro-average one-vs-rest.
pub fn metrics_from_scores(
    probs: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    mean_loss: f64,
) -> Metrics {
    let n = labels.len();
    let predictions: Vec<usize> = probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect();
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / n as f64;

    let classes: Vec<usize> = if num_classes == 2 { vec![1] } else { (0..num_classes).collect() };
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut aucs = Vec::new();
    for &c in &classes {
        let tp = predictions
            .iter()
            .zip(labels)
            .filter(|(&p, &l)| p == c && l == c)
            .count() as f64;
        let fp = predictions
            .iter()
            .zip(labels)
            .filter(|(&p, &l)| p == c && l != c)
            .count() as f64;
        let fn_ = predictions
            .iter()
            .zip(labels)
            .filter(|(&p, &l)| p != c && l == c)
            .count() as f64;
        precisions.push(if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
        recalls.push(if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 });
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        aucs.push(rank_auc(&scores, &positive));
    }
    let precision = precisions.iter().sum::<f64>() / precisions.len() as f64;
    let recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    Metrics {
        accuracy,
        auc,
        precision,
        recall,
        f1,
        loss: mean_loss,
    }
}

/// Side-effect-free evaluation: batched inference, then all metrics.
pub fn evaluate(
    model: &VitModel<f32>,
    store: Option<&dyn FactStore<f32>>,
    dataset: &Dataset,
    knn_k: usize,
    batch_size: usize,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(MovitError::Contract("evaluation dataset is empty".into()));
    }
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(dataset.len());
    let mut loss_sum = 0.0f64;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let images = dataset.gather(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape)?;
        let opts = ForwardOptions::infer(store, knn_k);
        let (logits, _) = crate::vit::vit_forward(&mut tape, &bound, &images, chunk.len(), &opts)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        loss_sum += tape.data(loss)[0] as f64 * chunk.len() as f64;
        let c = dataset.num_classes;
        for row in tape.data(logits).chunks(c) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f64> = row.iter().map(|&v| ((v - max) as f64).exp()).collect();
            let sum: f64 = exps.iter().sum();
            probs.push(exps.into_iter().map(|e| e / sum).collect());
        }
    }
    Ok(metrics_from_scores(
        &probs,
        &dataset.labels,
        dataset.num_classes,
        loss_sum / dataset.len() as f64,
    ))
}
