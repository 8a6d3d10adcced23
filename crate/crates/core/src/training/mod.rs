//! Loss, gradients, Adam and the mini-batch training loop.

mod adam;
mod backward;
pub mod gradcheck;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};

pub use adam::AdamState;
pub use backward::{backward, baseline_backward, baseline_loss, loss};

use crate::error::{Error, Result};
use crate::evaluation::{compute_metrics, Metrics};
use crate::model::baseline::BaselineRnn;
use crate::model::{Mode, Model, Params, Prediction};
use crate::numerics::Rng;
use crate::series::FeatureSequence;

/// Probabilities are clipped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    /// λ, the attention penalty coefficient.
    pub attention_penalty: f64,
    /// γ, the weight decay coefficient.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop once the epoch-mean loss improves by less than this for
    /// `patience` consecutive epochs.
    pub convergence_threshold: f64,
    pub patience: usize,
    pub seed: u64,
    /// Write wall-clock seconds into the epoch log (breaks byte-identical
    /// reruns, so off by default).
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.45,
            dropout: 0.3,
            attention_penalty: 1.5,
            weight_decay: 1e-5,
            epochs: 30,
            batch_size: 16,
            convergence_threshold: 1e-4,
            patience: 3,
            seed: 7,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.attention_penalty < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Validation("attention_penalty and weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Validation("epochs, batch_size and patience must be >= 1".into()));
        }
        Ok(())
    }

    fn mode(&self) -> Mode {
        Mode::Train { dropout: self.dropout }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cross_entropy: f64,
    pub attention_penalty: f64,
    pub weight_decay: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(cross_entropy: f64, attention_penalty: f64, weight_decay: f64) -> Self {
        LossBreakdown {
            cross_entropy,
            attention_penalty,
            weight_decay,
            total: cross_entropy + attention_penalty + weight_decay,
        }
    }

    fn accumulate(&mut self, other: &LossBreakdown) {
        *self = LossBreakdown::new(
            self.cross_entropy + other.cross_entropy,
            self.attention_penalty + other.attention_penalty,
            self.weight_decay + other.weight_decay,
        );
    }

    fn scaled(&self, s: f64) -> Self {
        LossBreakdown::new(self.cross_entropy * s, self.attention_penalty * s, self.weight_decay * s)
    }
}

/// A network the training loop can optimise.
pub trait Trainable: Params {
    fn loss_and_grad(&self, seq: &FeatureSequence, cfg: &TrainConfig, rng: &mut Rng) -> Result<(LossBreakdown, Self)>;

    /// Loss of a deterministic (dropout-free) forward pass.
    fn loss_value(&self, seq: &FeatureSequence, cfg: &TrainConfig) -> Result<LossBreakdown>;

    fn predict(&self, seq: &FeatureSequence) -> Result<Prediction>;
}

impl Trainable for Model {
    fn loss_and_grad(&self, seq: &FeatureSequence, cfg: &TrainConfig, rng: &mut Rng) -> Result<(LossBreakdown, Self)> {
        let trace = self.forward(seq, cfg.mode(), rng)?;
        let l = loss(self, &trace, seq.label, cfg);
        Ok((l, backward(self, seq, &trace, cfg)?))
    }

    fn loss_value(&self, seq: &FeatureSequence, cfg: &TrainConfig) -> Result<LossBreakdown> {
        Ok(loss(self, &self.forward_infer(seq)?, seq.label, cfg))
    }

    fn predict(&self, seq: &FeatureSequence) -> Result<Prediction> {
        Model::predict(self, seq)
    }
}

impl Trainable for BaselineRnn {
    fn loss_and_grad(&self, seq: &FeatureSequence, cfg: &TrainConfig, rng: &mut Rng) -> Result<(LossBreakdown, Self)> {
        let trace = self.forward(seq, cfg.mode(), rng)?;
        let l = baseline_loss(self, &trace, seq.label, cfg);
        Ok((l, baseline_backward(self, seq, &trace, cfg)?))
    }

    fn loss_value(&self, seq: &FeatureSequence, cfg: &TrainConfig) -> Result<LossBreakdown> {
        Ok(baseline_loss(self, &self.forward_infer(seq)?, seq.label, cfg))
    }

    fn predict(&self, seq: &FeatureSequence) -> Result<Prediction> {
        BaselineRnn::predict(self, seq)
    }
}

/// Metrics of `model` over labelled sequences; zero metrics when empty.
pub fn metrics_on<P: Trainable>(model: &P, seqs: &[FeatureSequence]) -> Result<Metrics> {
    if seqs.is_empty() {
        return Ok(Metrics::default());
    }
    let pairs = seqs
        .iter()
        .map(|s| Ok((model.predict(s)?.class, s.label)))
        .collect::<Result<Vec<_>>>()?;
    compute_metrics(&pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub holdout: Metrics,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str =
        "epoch,ce,att_penalty,decay,total,holdout_precision,holdout_recall,holdout_f1,seconds";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.6},{:.6},{:.6},{:.3}",
            self.epoch,
            self.loss.cross_entropy,
            self.loss.attention_penalty,
            self.loss.weight_decay,
            self.loss.total,
            self.holdout.precision,
            self.holdout.recall,
            self.holdout.f_measure,
            self.seconds
        )
    }
}

pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::new();
    writeln!(out, "{}", EpochLog::HEADER).unwrap();
    for e in log {
        writeln!(out, "{}", e.to_csv()).unwrap();
    }
    out
}

pub fn write_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_log(log)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<P> {
    /// Parameters of the epoch with the best holdout F-measure (latest on ties).
    pub model: P,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// One Adam step on the averaged gradient of a batch.
pub fn train_step<P: Trainable>(
    model: &mut P,
    adam: &mut AdamState<P>,
    batch: &[&FeatureSequence],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<LossBreakdown> {
    let mut grads = model.zeros_like();
    let mut total = LossBreakdown::default();
    for seq in batch {
        let (l, g) = model.loss_and_grad(seq, cfg, rng)?;
        total.accumulate(&l);
        grads.add_scaled(&g, 1.0);
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale_all(inv);
    adam.update(model, &grads, cfg.learning_rate);
    Ok(total.scaled(inv))
}

pub fn train<P: Trainable>(
    mut model: P,
    train_set: &[FeatureSequence],
    holdout: &[FeatureSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<P>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut adam = AdamState::new(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, P)> = None;
    let mut prev_total = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&FeatureSequence> = chunk.iter().map(|&i| &train_set[i]).collect();
            let l = train_step(&mut model, &mut adam, &batch, cfg, &mut rng)?;
            if !l.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss {} at epoch {epoch}, batch {}",
                    l.total,
                    b + 1
                )));
            }
            sum.accumulate(&l.scaled(batch.len() as f64));
        }
        let mean = sum.scaled(1.0 / train_set.len() as f64);
        let holdout_metrics = metrics_on(&model, holdout)?;
        let seconds = if cfg.record_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        info!(
            "epoch {epoch}: loss {:.6} (ce {:.6}, att {:.6}) holdout F1 {:.4}",
            mean.total, mean.cross_entropy, mean.attention_penalty, holdout_metrics.f_measure
        );
        if best.as_ref().is_none_or(|(f, _, _)| holdout_metrics.f_measure >= *f) {
            best = Some((holdout_metrics.f_measure, epoch, model.clone()));
        }
        log.push(EpochLog {
            epoch,
            loss: mean,
            holdout: holdout_metrics,
            seconds,
        });

        if prev_total - mean.total < cfg.convergence_threshold {
            stale += 1;
            if mean.total > prev_total {
                warn!("epoch {epoch}: loss rose from {prev_total:.6} to {:.6}", mean.total);
            }
        } else {
            stale = 0;
        }
        prev_total = mean.total;
        if stale >= cfg.patience {
            info!("converged after epoch {epoch}");
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
    })
}
