//! Precision / recall / F-measure, full-data and earliness evaluation, and
//! attention export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;

use crate::corpus::{truncate_fraction, Event, Label};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::series::{build_series, encode_event, equal_split_series, FeatureSequence, SeriesConfig, Vocabulary};
use crate::training::Trainable;

/// Confusion counts with rumor as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f_measure = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f_measure,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

/// `pairs` are `(predicted, actual)`.
pub fn compute_metrics(pairs: &[(Label, Label)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::Validation("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for &(pred, actual) in pairs {
        match (pred, actual) {
            (Label::Rumor, Label::Rumor) => tp += 1,
            (Label::Rumor, Label::NonRumor) => fp += 1,
            (Label::NonRumor, Label::Rumor) => fn_ += 1,
            (Label::NonRumor, Label::NonRumor) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}

/// F-measure of always predicting the majority class of `labels`.
pub fn majority_baseline(labels: &[Label]) -> Result<Metrics> {
    let rumors = labels.iter().filter(|&&l| l == Label::Rumor).count();
    let guess = if 2 * rumors >= labels.len() { Label::Rumor } else { Label::NonRumor };
    let pairs: Vec<_> = labels.iter().map(|&l| (guess, l)).collect();
    compute_metrics(&pairs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Encodes events with a frozen vocabulary; events shorter than `Min` are
/// skipped and counted.
pub fn encode_all(events: &[Event], vocab: &Vocabulary, cfg: &SeriesConfig) -> Result<(Vec<FeatureSequence>, usize)> {
    let mut seqs = Vec::with_capacity(events.len());
    let mut skipped = 0;
    for e in events {
        if e.posts.len() < cfg.min_series_len {
            skipped += 1;
            continue;
        }
        let series = build_series(e, cfg)?;
        seqs.push(encode_event(e, &series, vocab, cfg)?);
    }
    Ok((seqs, skipped))
}

fn score<P: Trainable>(model: &P, seqs: &[FeatureSequence], skipped: usize) -> Result<Evaluation> {
    if seqs.is_empty() {
        return Err(Error::Validation(format!("no evaluable events ({skipped} skipped)")));
    }
    let pairs = seqs
        .iter()
        .map(|s| Ok((model.predict(s)?.class, s.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        metrics: compute_metrics(&pairs)?,
        evaluated: seqs.len(),
        skipped,
    })
}

pub fn evaluate<P: Trainable>(model: &P, events: &[Event], vocab: &Vocabulary, cfg: &SeriesConfig) -> Result<Evaluation> {
    let (seqs, skipped) = encode_all(events, vocab, cfg)?;
    if skipped > 0 {
        info!("evaluate: skipped {skipped} events shorter than {} posts", cfg.min_series_len);
    }
    score(model, &seqs, skipped)
}

pub fn default_fractions() -> Vec<f64> {
    (1..=8).map(|i| i as f64 / 10.0).collect()
}

pub fn validate_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() {
        return Err(Error::Argument("no fractions given".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Argument(format!("fractions {fractions:?} must lie in (0, 1]")));
    }
    if fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(format!("fractions {fractions:?} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlinessCurve {
    pub fractions: Vec<f64>,
    pub points: Vec<Evaluation>,
}

impl EarlinessCurve {
    pub fn f_at(&self, fraction: f64) -> Option<f64> {
        self.fractions
            .iter()
            .position(|&f| (f - fraction).abs() < 1e-12)
            .map(|i| self.points[i].metrics.f_measure)
    }

    pub fn rows(&self) -> Vec<(f64, Metrics)> {
        self.fractions
            .iter()
            .zip(&self.points)
            .map(|(&f, p)| (f, p.metrics))
            .collect()
    }
}

/// Encodes the leading `fraction` of an event. Prefixes too short for `Min`
/// intervals fall back to one post per interval; single-post prefixes are
/// not scored.
pub fn encode_prefix(event: &Event, fraction: f64, vocab: &Vocabulary, cfg: &SeriesConfig) -> Result<Option<FeatureSequence>> {
    let prefix = truncate_fraction(event, fraction)?;
    let n = prefix.posts.len();
    let series = if n >= cfg.min_series_len {
        build_series(&prefix, cfg)?
    } else if n >= 2 {
        equal_split_series(&prefix, n)?
    } else {
        return Ok(None);
    };
    encode_event(&prefix, &series, vocab, cfg).map(Some)
}

/// Scores each fraction of every test event's leading posts. Events that
/// `evaluate` would skip are skipped at every fraction.
pub fn earliness_sweep<P: Trainable>(
    model: &P,
    events: &[Event],
    vocab: &Vocabulary,
    cfg: &SeriesConfig,
    fractions: &[f64],
) -> Result<EarlinessCurve> {
    validate_fractions(fractions)?;
    let mut points = Vec::with_capacity(fractions.len());
    for &frac in fractions {
        let mut seqs = Vec::with_capacity(events.len());
        let mut skipped = 0;
        for e in events {
            if e.posts.len() < cfg.min_series_len {
                skipped += 1;
                continue;
            }
            match encode_prefix(e, frac, vocab, cfg)? {
                Some(s) => seqs.push(s),
                None => skipped += 1,
            }
        }
        if skipped > 0 {
            info!("earliness {frac}: skipped {skipped} events");
        }
        points.push(score(model, &seqs, skipped)?);
    }
    Ok(EarlinessCurve {
        fractions: fractions.to_vec(),
        points,
    })
}

pub const METRICS_HEADER: &str = "fraction,tp,fp,fn,tn,precision,recall,f_measure";

pub fn format_metrics_report(rows: &[(f64, Metrics)]) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for (f, m) in rows {
        writeln!(
            out,
            "{f:.2},{},{},{},{},{:.6},{:.6},{:.6}",
            m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f_measure
        )
        .unwrap();
    }
    out
}

pub fn write_metrics_report(rows: &[(f64, Metrics)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_metrics_report(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepAttention {
    pub step: usize,
    /// `(term, weight)` for every word row; rows past the vocabulary are
    /// named `#<row>`.
    pub weights: Vec<(String, f64)>,
    pub prob_rumor: f64,
}

fn row_name(vocab: &Vocabulary, i: usize) -> String {
    vocab.terms().get(i).cloned().unwrap_or_else(|| format!("#{i}"))
}

pub fn attention_records(model: &Model, seq: &FeatureSequence, vocab: &Vocabulary) -> Result<Vec<StepAttention>> {
    let trace = model.forward_infer(seq)?;
    Ok(trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| StepAttention {
            step: t + 1,
            weights: s
                .attention
                .iter()
                .enumerate()
                .map(|(i, &w)| (row_name(vocab, i), w))
                .collect(),
            prob_rumor: s.probs[Label::Rumor.index()],
        })
        .collect())
}

pub fn format_attention(records: &[StepAttention]) -> String {
    let mut out = String::from("step,term,weight\n");
    for r in records {
        for (term, w) in &r.weights {
            writeln!(out, "{},{},{:e}", r.step, term, w).unwrap();
        }
        writeln!(out, "{},prob_rumor,{:e}", r.step, r.prob_rumor).unwrap();
    }
    out
}

/// Writes per-step `step,term,weight` rows plus a `step,prob_rumor,p` row.
pub fn attention_dump(
    model: &Model,
    event: &Event,
    vocab: &Vocabulary,
    cfg: &SeriesConfig,
    path: impl AsRef<Path>,
) -> Result<Vec<StepAttention>> {
    let series = build_series(event, cfg)?;
    let seq = encode_event(event, &series, vocab, cfg)?;
    let records = attention_records(model, &seq, vocab)?;
    let path = path.as_ref();
    fs::write(path, format_attention(&records)).map_err(|e| Error::io(path, e))?;
    Ok(records)
}

/// Mean over events and steps of the attention mass on `rows`.
pub fn attention_mass(model: &Model, seqs: &[FeatureSequence], rows: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in seqs {
        for step in model.forward_infer(s)?.steps {
            total += rows.iter().map(|&i| step.attention[i]).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Validation("no steps to measure attention on".into()));
    }
    Ok(total / count as f64)
}
