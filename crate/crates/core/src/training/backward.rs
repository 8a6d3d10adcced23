//! Loss and analytic gradients (backpropagation through time).

use super::{LossBreakdown, TrainConfig, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::model::baseline::{BaselineRnn, BaselineTrace};
use crate::model::{ForwardTrace, Model, Params};
use crate::series::FeatureSequence;
use crate::corpus::Label;

fn cross_entropy<'a>(probs: impl Iterator<Item = &'a [f64]>, label: Label) -> f64 {
    probs.map(|p| -p[label.index()].max(PROB_FLOOR).ln()).sum()
}

/// Cross-entropy summed over steps (label broadcast to every step), the
/// doubly stochastic attention penalty, and `γ‖φ‖²`.
pub fn loss(model: &Model, trace: &ForwardTrace, label: Label, cfg: &TrainConfig) -> LossBreakdown {
    let ce = cross_entropy(trace.steps.iter().map(|s| s.probs.as_slice()), label);
    let k = trace.steps.first().map_or(0, |s| s.attention.len());
    let mut col = vec![0.0; k];
    for s in &trace.steps {
        for (acc, a) in col.iter_mut().zip(&s.attention) {
            *acc += a;
        }
    }
    let penalty = cfg.attention_penalty * col.iter().map(|s| (1.0 - s) * (1.0 - s)).sum::<f64>();
    LossBreakdown::new(ce, penalty, cfg.weight_decay * model.sum_sq())
}

pub fn baseline_loss(model: &BaselineRnn, trace: &BaselineTrace, label: Label, cfg: &TrainConfig) -> LossBreakdown {
    let ce = cross_entropy(trace.steps.iter().map(|s| s.probs.as_slice()), label);
    LossBreakdown::new(ce, 0.0, cfg.weight_decay * model.sum_sq())
}

/// `∂ŷ-cross-entropy / ∂logits` for one step.
fn dlogits(probs: &[f64], label: Label) -> Vec<f64> {
    let y = label.index();
    if probs[y] < PROB_FLOOR {
        // clipped: the loss is locally constant
        return vec![0.0; probs.len()];
    }
    let mut d = probs.to_vec();
    d[y] -= 1.0;
    d
}

fn masked(v: Vec<f64>, mask: &Option<Vec<f64>>) -> Vec<f64> {
    match mask {
        Some(m) => v.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => v,
    }
}

/// Gradients of `loss(...).total` with respect to every parameter of
/// `model`, returned in a `Model`-shaped container. `trace` must come from
/// `model.forward` on `seq`; recorded dropout masks are reused.
pub fn backward(model: &Model, seq: &FeatureSequence, trace: &ForwardTrace, cfg: &TrainConfig) -> Result<Model> {
    let nl = model.layers.len();
    if trace.len() != seq.len()
        || trace.init.len() != nl
        || trace.steps.iter().any(|s| s.layers.len() != nl)
    {
        return Err(Error::Validation(format!(
            "trace ({} steps) does not belong to this model/sequence ({} steps, {nl} layers)",
            trace.len(),
            seq.len()
        )));
    }
    let top = nl - 1;
    let label = seq.label;
    let mut g = model.zeros_like();

    let k = model.config.series.vocab_size;
    let mut col = vec![0.0; k];
    for s in &trace.steps {
        for (acc, a) in col.iter_mut().zip(&s.attention) {
            *acc += a;
        }
    }
    let penalty_grad: Vec<f64> = col
        .iter()
        .map(|s| -2.0 * cfg.attention_penalty * (1.0 - s))
        .collect();

    let mut dh_next: Vec<Vec<f64>> = model.config.layers.iter().map(|&h| vec![0.0; h]).collect();
    let mut dc_next = dh_next.clone();
    let cls = &model.classifier;

    for (t, step) in trace.steps.iter().enumerate().rev() {
        // classifier head
        let dlog = dlogits(&step.probs, label);
        g.classifier.w2.add_outer(&dlog, &step.cls_hidden);
        g.classifier.b2.add_assign_slice(&dlog);
        let mut dz = vec![0.0; step.cls_hidden.len()];
        cls.w2.t_mul_vec_acc(&dlog, &mut dz);
        for (d, s) in dz.iter_mut().zip(&step.cls_hidden) {
            *d *= s * (1.0 - s);
        }
        g.classifier.w1.add_outer(&dz, &step.cls_input);
        g.classifier.b1.add_assign_slice(&dz);
        let mut d_cls_in = vec![0.0; step.cls_input.len()];
        cls.w1.t_mul_vec_acc(&dz, &mut d_cls_in);
        let d_cls_in = masked(d_cls_in, &step.cls_mask);

        // LSTM stack, top down
        let mut from_above = d_cls_in;
        let mut dx = Vec::new();
        for l in (0..nl).rev() {
            let dh: Vec<f64> = dh_next[l].iter().zip(&from_above).map(|(a, b)| a + b).collect();
            let out = model.layers[l].backward(&step.layers[l], &dh, &dc_next[l], &mut g.layers[l]);
            dh_next[l] = out.h_prev;
            dc_next[l] = out.c_prev;
            let du = masked(out.input, &step.masks[l]);
            if l > 0 {
                from_above = du;
            } else {
                dx = du;
            }
        }

        // attention a_t = softmax(W h_{t-1}^top), x_t = d_tᵀ a_t
        let d = &seq.matrices[t];
        let mut da = penalty_grad.clone();
        d.mul_vec_acc(&dx, &mut da);
        let a = &step.attention;
        let mean: f64 = a.iter().zip(&da).map(|(p, q)| p * q).sum();
        let dlogit: Vec<f64> = a.iter().zip(&da).map(|(p, q)| p * (q - mean)).collect();
        let h_prev_top = &step.layers[top].h_prev;
        g.attention.w.add_outer(&dlogit, h_prev_top);
        model.attention.w.t_mul_vec_acc(&dlogit, &mut dh_next[top]);
    }

    // initial states come from the per-layer MLPs
    for (l, nets) in model.init.iter().enumerate() {
        let cache = &trace.init[l];
        let gi = &mut g.init[l];
        nets.fc.backward(&trace.mean_input, &cache.fc_hidden, &dc_next[l], &mut gi.fc);
        nets.fh.backward(&trace.mean_input, &cache.fh_hidden, &dh_next[l], &mut gi.fh);
    }

    g.add_scaled(model, 2.0 * cfg.weight_decay);
    Ok(g)
}

pub fn baseline_backward(
    model: &BaselineRnn,
    seq: &FeatureSequence,
    trace: &BaselineTrace,
    cfg: &TrainConfig,
) -> Result<BaselineRnn> {
    if trace.steps.len() != seq.len() {
        return Err(Error::Validation("baseline trace length differs from sequence".into()));
    }
    let mut g = model.zeros_like();
    let mut dh_next = vec![0.0; model.hidden_size()];
    for step in trace.steps.iter().rev() {
        let dlog = dlogits(&step.probs, seq.label);
        g.v.add_outer(&dlog, &step.h);
        g.c.add_assign_slice(&dlog);
        let mut dh = dh_next;
        model.v.t_mul_vec_acc(&dlog, &mut dh);
        let dz: Vec<f64> = dh.iter().zip(&step.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        g.u.add_outer(&dz, &step.input);
        g.w.add_outer(&dz, &step.h_prev);
        g.b.add_assign_slice(&dz);
        dh_next = vec![0.0; model.hidden_size()];
        model.w.t_mul_vec_acc(&dz, &mut dh_next);
    }
    g.add_scaled(model, 2.0 * cfg.weight_decay);
    Ok(g)
}
