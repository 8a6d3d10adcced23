//! Run configuration and the command implementations behind the `rumor`
//! binary.
//!
//! A config file is flat `key = value` text; `#` starts a comment. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `seed` | seeds synthesis, splitting and training |
//! | `posts_per_interval`, `min_series_len`, `vocab_size` | series shape (`N`, `Min`, `K`) |
//! | `model` | `attention` or `rnn` |
//! | `layers` | comma-separated LSTM sizes, bottom first |
//! | `init_hidden`, `classifier_hidden`, `rnn_hidden` | other hidden sizes |
//! | `learning_rate`, `dropout`, `attention_penalty`, `weight_decay` | optimisation |
//! | `epochs`, `batch_size`, `convergence_threshold`, `patience`, `record_time` | training loop |
//! | `events`, `class_balance`, `posts_min`, `posts_max`, `tokens_per_post`, `background_vocab`, `signal_vocab`, `signal_rate`, `duplication_rate` | synthetic corpus |
//! | `holdout_frac`, `train_parts`, `test_parts` | split |
//! | `corpus`, `checkpoint`, `vocab`, `log`, `out` | paths |
//! | `fractions` | comma-separated earliness fractions |
//! | `eval_on` | `test` (default) or `all` events of the corpus |
//! | `event` | event id for `attention-dump` |
//!
//! Corpus files hold one JSON object per line with fields `event_id`
//! (string), `label` (0 = non-rumor, 1 = rumor) and `posts`, an array of
//! `{"text": string, "timestamp": integer}`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::corpus::{load_corpus, save_corpus, split_dataset, synth_generate, Event, SplitConfig, SynthConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    attention_dump, default_fractions, earliness_sweep, encode_all, evaluate, validate_fractions,
    write_metrics_report, EarlinessCurve, Evaluation,
};
use crate::model::baseline::BaselineRnn;
use crate::model::checkpoint::{checkpoint_kind, load_baseline, load_model, save_baseline, save_model};
use crate::model::{Model, ModelConfig};
use crate::numerics::Rng;
use crate::series::{SeriesConfig, Vocabulary};
use crate::training::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use crate::training::{train, write_log, TrainConfig, Trainable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Attention,
    Rnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalOn {
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub series: SeriesConfig,
    pub model: ModelKind,
    pub layers: Vec<usize>,
    pub init_hidden: usize,
    pub classifier_hidden: usize,
    pub rnn_hidden: usize,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fractions: Vec<f64>,
    pub eval_on: EvalOn,
    pub event: Option<String>,
    /// Keys set by a config file or flag rather than defaulted.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let mut cfg = RunConfig {
            seed: 7,
            series: model.series,
            model: ModelKind::Attention,
            layers: model.layers,
            init_hidden: model.init_hidden,
            classifier_hidden: model.classifier_hidden,
            rnn_hidden: 64,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            corpus: None,
            checkpoint: None,
            vocab: None,
            log: None,
            out: None,
            fractions: default_fractions(),
            eval_on: EvalOn::Test,
            event: None,
            explicit: BTreeSet::new(),
        };
        cfg.set_seed(7);
        cfg
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Argument(format!("invalid value {value:?} for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
    }

    /// Sets one key; unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.set_seed(parse(key, v)?),
            "posts_per_interval" => self.series.posts_per_interval = parse(key, v)?,
            "min_series_len" => self.series.min_series_len = parse(key, v)?,
            "vocab_size" => self.series.vocab_size = parse(key, v)?,
            "model" => {
                self.model = match v {
                    "attention" => ModelKind::Attention,
                    "rnn" => ModelKind::Rnn,
                    _ => return Err(Error::Argument(format!("`model` must be attention or rnn, got {v:?}"))),
                }
            }
            "layers" => self.layers = parse_list(key, v)?,
            "init_hidden" => self.init_hidden = parse(key, v)?,
            "classifier_hidden" => self.classifier_hidden = parse(key, v)?,
            "rnn_hidden" => self.rnn_hidden = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "dropout" => self.train.dropout = parse(key, v)?,
            "attention_penalty" => self.train.attention_penalty = parse(key, v)?,
            "weight_decay" => self.train.weight_decay = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "convergence_threshold" => self.train.convergence_threshold = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "record_time" => self.train.record_time = parse(key, v)?,
            "events" => self.synth.event_count = parse(key, v)?,
            "class_balance" => self.synth.class_balance = parse(key, v)?,
            "posts_min" => self.synth.posts_per_event_min = parse(key, v)?,
            "posts_max" => self.synth.posts_per_event_max = parse(key, v)?,
            "tokens_per_post" => self.synth.tokens_per_post = parse(key, v)?,
            "background_vocab" => self.synth.background_vocab_size = parse(key, v)?,
            "signal_vocab" => self.synth.signal_vocab_size = parse(key, v)?,
            "signal_rate" => self.synth.signal_rate = parse(key, v)?,
            "duplication_rate" => self.synth.duplication_rate = parse(key, v)?,
            "holdout_frac" => self.split.holdout_frac = parse(key, v)?,
            "train_parts" => self.split.train_parts = parse(key, v)?,
            "test_parts" => self.split.test_parts = parse(key, v)?,
            "corpus" => self.corpus = Some(v.into()),
            "checkpoint" => self.checkpoint = Some(v.into()),
            "vocab" => self.vocab = Some(v.into()),
            "log" => self.log = Some(v.into()),
            "out" => self.out = Some(v.into()),
            "fractions" => self.fractions = parse_list(key, v)?,
            "eval_on" => {
                self.eval_on = match v {
                    "test" => EvalOn::Test,
                    "all" => EvalOn::All,
                    _ => return Err(Error::Argument(format!("`eval_on` must be test or all, got {v:?}"))),
                }
            }
            "event" => self.event = Some(v.to_string()),
            _ => return Err(Error::Argument(format!("unknown config key `{key}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, origin)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr(format!("expected `key = value`, got {line:?}")))?;
            self.set(key.trim(), value).map_err(|e| perr(e.to_string()))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            series: self.series,
            layers: self.layers.clone(),
            init_hidden: self.init_hidden,
            classifier_hidden: self.classifier_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        validate_fractions(&self.fractions)?;
        if self.rnn_hidden == 0 {
            return Err(Error::Validation("rnn_hidden must be >= 1".into()));
        }
        Ok(())
    }

    fn required<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Argument(format!("`{key}` path is required for this command")))
    }

    fn derived(&self, path: &Option<PathBuf>, suffix: &str, key: &str) -> Result<PathBuf> {
        match path {
            Some(p) => Ok(p.clone()),
            None => {
                let ck = self.required(&self.checkpoint, "checkpoint")?;
                let mut s = ck.as_os_str().to_owned();
                s.push(suffix);
                info!("`{key}` not set, using {}", Path::new(&s).display());
                Ok(s.into())
            }
        }
    }

    /// Vocabulary path, defaulting to `<checkpoint>.vocab`.
    pub fn vocab_path(&self) -> Result<PathBuf> {
        self.derived(&self.vocab, ".vocab", "vocab")
    }

    /// Epoch log path, defaulting to `<checkpoint>.log.csv`.
    pub fn log_path(&self) -> Result<PathBuf> {
        self.derived(&self.log, ".log.csv", "log")
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String> {
    cfg.synth.validate()?;
    let out = cfg.required(&cfg.out, "out")?;
    let corpus = synth_generate(&cfg.synth)?;
    save_corpus(&corpus, out)?;
    Ok(format!("wrote {} events to {}", corpus.len(), out.display()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub holdout_f1: f64,
    pub train_events: usize,
    pub skipped: usize,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let corpus = load_corpus(cfg.required(&cfg.corpus, "corpus")?)?;
    let checkpoint = cfg.required(&cfg.checkpoint, "checkpoint")?;
    let split = split_dataset(&corpus, &cfg.split)?;
    let vocab = Vocabulary::build(&split.train, cfg.series.vocab_size)?;
    let (train_set, s1) = encode_all(&split.train, &vocab, &cfg.series)?;
    let (holdout, s2) = encode_all(&split.holdout, &vocab, &cfg.series)?;
    info!(
        "train: {} train / {} holdout sequences, {} events too short",
        train_set.len(),
        holdout.len(),
        s1 + s2
    );
    let mut rng = Rng::new(cfg.seed);
    let (best_epoch, log) = match cfg.model {
        ModelKind::Attention => {
            let model = Model::new(cfg.model_config(), &mut rng)?;
            let out = train(model, &train_set, &holdout, &cfg.train)?;
            save_model(&out.model, checkpoint)?;
            (out.best_epoch, out.log)
        }
        ModelKind::Rnn => {
            let model = BaselineRnn::new(cfg.series, cfg.rnn_hidden, &mut rng);
            let out = train(model, &train_set, &holdout, &cfg.train)?;
            save_baseline(&out.model, checkpoint)?;
            (out.best_epoch, out.log)
        }
    };
    vocab.save(cfg.vocab_path()?)?;
    write_log(&log, cfg.log_path()?)?;
    Ok(TrainSummary {
        best_epoch,
        epochs_run: log.len(),
        holdout_f1: log[best_epoch - 1].holdout.f_measure,
        train_events: train_set.len(),
        skipped: s1 + s2,
    })
}

pub enum LoadedModel {
    Attention(Model),
    Rnn(BaselineRnn),
}

impl LoadedModel {
    pub fn series(&self) -> SeriesConfig {
        match self {
            LoadedModel::Attention(m) => m.config.series,
            LoadedModel::Rnn(m) => m.series,
        }
    }
}

/// Loads checkpoint and vocabulary and checks them against each other and
/// against any sizes set explicitly in `cfg`.
pub fn load_trained(cfg: &RunConfig) -> Result<(LoadedModel, Vocabulary)> {
    let path = cfg.required(&cfg.checkpoint, "checkpoint")?;
    let model = match checkpoint_kind(path)?.as_str() {
        "attention" => LoadedModel::Attention(load_model(path)?),
        "baseline" => LoadedModel::Rnn(load_baseline(path)?),
        other => return Err(Error::Validation(format!("unknown checkpoint kind {other:?}"))),
    };
    let vocab = Vocabulary::load(cfg.vocab_path()?)?;
    let series = model.series();
    if vocab.capacity() != series.vocab_size {
        return Err(Error::Validation(format!(
            "vocabulary has K = {} but checkpoint expects K = {}",
            vocab.capacity(),
            series.vocab_size
        )));
    }
    if cfg.explicit.contains("vocab_size") && cfg.series.vocab_size != series.vocab_size {
        return Err(Error::Validation(format!(
            "config vocab_size {} but checkpoint has K = {}",
            cfg.series.vocab_size, series.vocab_size
        )));
    }
    if let LoadedModel::Attention(m) = &model {
        if cfg.explicit.contains("layers") && cfg.layers != m.config.layers {
            return Err(Error::Validation(format!(
                "config layers {:?} but checkpoint has layers {:?}",
                cfg.layers, m.config.layers
            )));
        }
    }
    Ok((model, vocab))
}

fn eval_events(cfg: &RunConfig) -> Result<Vec<Event>> {
    let corpus = load_corpus(cfg.required(&cfg.corpus, "corpus")?)?;
    Ok(match cfg.eval_on {
        EvalOn::All => corpus.events,
        EvalOn::Test => split_dataset(&corpus, &cfg.split)?.test,
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Evaluation> {
    let (model, vocab) = load_trained(cfg)?;
    let events = eval_events(cfg)?;
    let series = model.series();
    let result = match &model {
        LoadedModel::Attention(m) => evaluate(m, &events, &vocab, &series)?,
        LoadedModel::Rnn(m) => evaluate(m, &events, &vocab, &series)?,
    };
    if let Some(out) = &cfg.out {
        write_metrics_report(&[(1.0, result.metrics)], out)?;
    }
    Ok(result)
}

fn sweep<P: Trainable>(m: &P, events: &[Event], vocab: &Vocabulary, cfg: &RunConfig, series: &SeriesConfig) -> Result<EarlinessCurve> {
    earliness_sweep(m, events, vocab, series, &cfg.fractions)
}

pub fn cmd_earliness(cfg: &RunConfig) -> Result<EarlinessCurve> {
    validate_fractions(&cfg.fractions)?;
    let (model, vocab) = load_trained(cfg)?;
    let events = eval_events(cfg)?;
    let series = model.series();
    let curve = match &model {
        LoadedModel::Attention(m) => sweep(m, &events, &vocab, cfg, &series)?,
        LoadedModel::Rnn(m) => sweep(m, &events, &vocab, cfg, &series)?,
    };
    if let Some(out) = &cfg.out {
        write_metrics_report(&curve.rows(), out)?;
    }
    Ok(curve)
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    let gc = GradCheckConfig {
        seed: cfg.seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&gc)?;
    if let Some(out) = &cfg.out {
        fs::write(out, report.to_string()).map_err(|e| Error::io(out, e))?;
    }
    Ok(report)
}

pub fn cmd_attention_dump(cfg: &RunConfig) -> Result<String> {
    let (model, vocab) = load_trained(cfg)?;
    let LoadedModel::Attention(model) = model else {
        return Err(Error::Validation("attention-dump needs an attention checkpoint".into()));
    };
    let out = cfg.required(&cfg.out, "out")?;
    let events = eval_events(cfg)?;
    let series = model.config.series;
    let event = match &cfg.event {
        Some(id) => events
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| Error::Argument(format!("event {id:?} not among the evaluated events")))?,
        None => events
            .iter()
            .find(|e| e.posts.len() >= series.min_series_len)
            .ok_or_else(|| Error::Validation("no event long enough to dump".into()))?,
    };
    let records = attention_dump(&model, event, &vocab, &series, out)?;
    let p = records.last().map_or(0.0, |r| r.prob_rumor);
    Ok(format!(
        "wrote {} steps of attention for {} (rumor probability {p:.4}) to {}",
        records.len(),
        event.id,
        out.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_lists() {
        let cfg = RunConfig::parse(
            "# desk run\nseed = 11\nlayers = 64, 32,16\nvocab_size=500 # K\n\nmodel = rnn\n",
            "t.conf",
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!((cfg.train.seed, cfg.synth.seed, cfg.split.seed), (11, 11, 11));
        assert_eq!(cfg.layers, [64, 32, 16]);
        assert_eq!(cfg.series.vocab_size, 500);
        assert_eq!(cfg.model, ModelKind::Rnn);
        assert!(cfg.explicit.contains("layers"));
        assert!(!cfg.explicit.contains("epochs"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("seed = 1\nlearning_rat = 0.1\n", "t.conf").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rat") && msg.contains("2"), "{msg}");
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::parse("epochs = many", "t").is_err());
        assert!(RunConfig::parse("no equals sign", "t").is_err());
        let cfg = RunConfig::parse("signal_rate = 1.5", "t").unwrap();
        let msg = cmd_synth(&cfg).unwrap_err().to_string();
        assert!(msg.contains("signal_rate"), "{msg}");
    }

    #[test]
    fn derived_paths_follow_checkpoint() {
        let mut cfg = RunConfig::default();
        assert!(cfg.vocab_path().is_err());
        cfg.set("checkpoint", "run/model.ckpt").unwrap();
        assert_eq!(cfg.vocab_path().unwrap(), PathBuf::from("run/model.ckpt.vocab"));
        assert_eq!(cfg.log_path().unwrap(), PathBuf::from("run/model.ckpt.log.csv"));
        cfg.set("log", "x.csv").unwrap();
        assert_eq!(cfg.log_path().unwrap(), PathBuf::from("x.csv"));
    }
}
