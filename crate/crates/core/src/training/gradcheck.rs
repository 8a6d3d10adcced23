//! Analytic-vs-finite-difference gradient comparison per parameter tensor.

use std::fmt;

use super::{TrainConfig, Trainable};
use crate::corpus::Label;
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::numerics::{finite_diff_grad, Mat, Rng};
use crate::series::{FeatureSequence, SeriesConfig};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is near zero are judged by absolute error instead. Central
/// differences with `h = 1e-5` carry about 1e-10 of round-off and
/// truncation noise, which this keeps well under 1e-4.
pub const REL_ERR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub size: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < tolerance)
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn failing(&self, tolerance: f64) -> Vec<&GroupError> {
        self.groups.iter().filter(|g| g.max_rel_error >= tolerance).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "group,size,max_rel_error,worst_index,analytic,numeric")?;
        for g in &self.groups {
            writeln!(
                f,
                "{},{},{:.3e},{},{:.10e},{:.10e}",
                g.name, g.size, g.max_rel_error, g.worst_index, g.analytic, g.numeric
            )?;
        }
        Ok(())
    }
}

/// Compares `analytic` (shaped like `model`) with central differences of
/// the deterministic loss on `seq`, one group per named tensor.
pub fn compare_gradients<P: Trainable>(
    model: &P,
    seq: &FeatureSequence,
    cfg: &TrainConfig,
    analytic: &P,
    h: f64,
) -> Result<GradCheckReport> {
    let theta = model.flatten();
    let mut probe = model.clone();
    let mut failure = None;
    let numeric = finite_diff_grad(
        |t| {
            probe.set_flat(t);
            match probe.loss_value(seq, cfg) {
                Ok(l) => l.total,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &theta,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let numeric = numeric?;

    let mut groups = Vec::new();
    let mut off = 0;
    for (name, m) in analytic.tensors() {
        let mut g = GroupError {
            name,
            size: m.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in m.as_slice().iter().enumerate() {
            let n = numeric[off + i];
            let err = relative_error(a, n);
            if err > g.max_rel_error || i == 0 {
                g.max_rel_error = err;
                g.worst_index = i;
                g.analytic = a;
                g.numeric = n;
            }
        }
        off += m.len();
        groups.push(g);
    }
    Ok(GradCheckReport { groups })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub train: TrainConfig,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            model: ModelConfig {
                series: SeriesConfig {
                    posts_per_interval: 4,
                    min_series_len: 2,
                    vocab_size: 12,
                },
                layers: vec![8, 6],
                init_hidden: 5,
                classifier_hidden: 5,
            },
            steps: 3,
            train: TrainConfig {
                dropout: 0.0,
                attention_penalty: 1.5,
                weight_decay: 1e-5,
                ..TrainConfig::default()
            },
            h: 1e-5,
            seed: 1234,
        }
    }
}

/// Random non-negative `K × N` sequence, sparse like tf-idf input.
pub fn random_sequence(rng: &mut Rng, series: &SeriesConfig, steps: usize, label: Label) -> FeatureSequence {
    let (k, n) = (series.vocab_size, series.posts_per_interval);
    let matrices = (0..steps)
        .map(|_| {
            let data = (0..k * n)
                .map(|_| if rng.bernoulli(0.4) { rng.uniform(0.5, 3.0) } else { 0.0 })
                .collect();
            Mat::from_vec(k, n, data).expect("finite")
        })
        .collect();
    FeatureSequence {
        event_id: "gradcheck".into(),
        label,
        matrices,
    }
}

/// Gradient check of the attention model on a random tiny instance.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    grad_check_with(cfg, |_| {})
}

/// As [`grad_check`], with a hook that may tamper with the analytic
/// gradients before comparison.
pub fn grad_check_with(cfg: &GradCheckConfig, tamper: impl FnOnce(&mut Model)) -> Result<GradCheckReport> {
    let mut rng = Rng::new(cfg.seed);
    let model = Model::new(cfg.model.clone(), &mut rng)?;
    let seq = random_sequence(&mut rng, &cfg.model.series, cfg.steps, Label::Rumor);
    let train = TrainConfig {
        dropout: 0.0,
        ..cfg.train.clone()
    };
    let (_, mut grads) = model.loss_and_grad(&seq, &train, &mut rng)?;
    tamper(&mut grads);
    compare_gradients(&model, &seq, &train, &grads, cfg.h)
}
