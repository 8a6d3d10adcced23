//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test --release --test acceptance`.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rumor_core::cli::{cmd_train, RunConfig};
use rumor_core::corpus::{signal_token, split_dataset, synth_generate, Event, Label, Post, SplitConfig, SynthConfig};
use rumor_core::evaluation::{attention_mass, earliness_sweep, encode_all, evaluate, majority_baseline, default_fractions};
use rumor_core::model::{Model, ModelConfig};
use rumor_core::numerics::{Mat, Rng};
use rumor_core::series::{build_series, interval_sizes, SeriesConfig, Vocabulary};
use rumor_core::training::gradcheck::{grad_check, GradCheckConfig};
use rumor_core::training::{loss, train, TrainConfig};
use rumor_core::{BaselineRnn, FeatureSequence};

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn line(id: usize, name: &'static str, passed: bool, detail: String) -> Line {
    let l = Line { id, name, passed, detail };
    println!(
        "[{}] criterion {}: {}: {}",
        if l.passed { "PASS" } else { "FAIL" },
        l.id,
        l.name,
        l.detail
    );
    l
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// Tolerances and thresholds.
const GRAD_TOL: f64 = 1e-4;
const GRAD_LIMIT: Duration = Duration::from_secs(60);
const SERIES_TRIPLES: usize = 1000;
const SERIES_LIMIT: Duration = Duration::from_secs(1);
const PROB_TOL: f64 = 1e-9;
const PROB_MODELS: usize = 100;
const SEPARABILITY_F: f64 = 0.90;
const MAJORITY_MARGIN: f64 = 0.35;
const SEPARABILITY_LIMIT: Duration = Duration::from_secs(600);
const FOCUS_RATIO: f64 = 2.0;
const EARLY_F: f64 = 0.75;
const EARLY_SLACK: f64 = 0.05;
const LOSS_TOL: f64 = 1e-12;

fn gradient_oracle() -> Line {
    let started = Instant::now();
    let report = grad_check(&GradCheckConfig::default()).expect("gradcheck runs");
    let elapsed = started.elapsed();
    let worst = report
        .groups
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("groups");
    line(
        1,
        "gradient oracle",
        report.passed(GRAD_TOL) && elapsed < GRAD_LIMIT,
        format!(
            "{} groups, max rel err {:.2e} in {} (< {GRAD_TOL:e}), {} (< {}s)",
            report.groups.len(),
            worst.max_rel_error,
            worst.name,
            secs(elapsed),
            GRAD_LIMIT.as_secs()
        ),
    )
}

/// Closed-form interval sizes, derived independently of the library.
fn oracle_sizes(n: usize, big_n: usize, min: usize) -> Option<Vec<usize>> {
    if n < min {
        return None;
    }
    let (count, each) = if n >= big_n * min { (n / big_n, big_n) } else { (min - 1, n / min) };
    let mut sizes = vec![each; count];
    let last = n - count * each;
    if last > 0 {
        sizes.push(last);
    }
    Some(sizes)
}

fn event_of(n: usize) -> Event {
    let posts = (0..n)
        .map(|i| Post {
            text: format!("p{i}"),
            timestamp: i as i64,
        })
        .collect();
    Event::new("e", Label::Rumor, posts).expect("valid event")
}

fn series_oracle() -> Line {
    let mut rng = Rng::new(2024);
    let events: Vec<(usize, usize, usize)> = (0..SERIES_TRIPLES)
        .map(|_| (rng.below(1500), 1 + rng.below(60), 2 + rng.below(12)))
        .collect();
    // an event needs at least one post; n = 0 goes through `interval_sizes`
    let prebuilt: Vec<Option<Event>> = events.iter().map(|&(n, _, _)| (n > 0).then(|| event_of(n))).collect();
    let started = Instant::now();
    let mut failures = 0;
    for (&(n, big_n, min), event) in events.iter().zip(&prebuilt) {
        let cfg = SeriesConfig {
            posts_per_interval: big_n,
            min_series_len: min,
            vocab_size: 1,
        };
        let ok = match (event, oracle_sizes(n, big_n, min)) {
            (Some(event), expected) => match (build_series(event, &cfg), expected) {
                (Ok(s), Some(expected)) => {
                    let flat: Vec<usize> = s.intervals.concat();
                    s.sizes() == expected && flat == (0..n).collect::<Vec<_>>()
                }
                (Err(_), None) => true,
                _ => false,
            },
            (None, expected) => interval_sizes(n, &cfg).ok() == expected,
        };
        failures += usize::from(!ok);
    }
    let elapsed = started.elapsed();
    line(
        2,
        "interval construction oracle",
        failures == 0 && elapsed < SERIES_LIMIT,
        format!("{SERIES_TRIPLES} triples, {failures} failures, {} (< 1s)", secs(elapsed)),
    )
}

fn random_model_and_input(rng: &mut Rng) -> (Model, FeatureSequence) {
    let k = 1 + rng.below(30);
    let n = 1 + rng.below(8);
    let layers: Vec<usize> = (0..1 + rng.below(3)).map(|_| 1 + rng.below(10)).collect();
    let config = ModelConfig {
        series: SeriesConfig {
            posts_per_interval: n,
            min_series_len: 2,
            vocab_size: k,
        },
        layers,
        init_hidden: 1 + rng.below(6),
        classifier_hidden: 1 + rng.below(6),
    };
    let mut model = Model::new(config, rng).expect("valid config");
    // larger weights than the initialiser, to stress the softmaxes
    let scale = rng.uniform(0.5, 8.0);
    model.attention.w.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    let tau = 1 + rng.below(12);
    let matrices = (0..tau)
        .map(|_| {
            let data = (0..k * n).map(|_| if rng.bernoulli(0.3) { rng.uniform(0.0, 12.0) } else { 0.0 }).collect();
            Mat::from_vec(k, n, data).expect("finite")
        })
        .collect();
    let seq = FeatureSequence {
        event_id: "r".into(),
        label: if rng.bernoulli(0.5) { Label::Rumor } else { Label::NonRumor },
        matrices,
    };
    (model, seq)
}

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL
}

fn probability_invariants() -> Line {
    let mut rng = Rng::new(99);
    let mut bad = 0;
    for _ in 0..PROB_MODELS {
        let (model, seq) = random_model_and_input(&mut rng);
        let trace = model.forward_infer(&seq).expect("forward");
        bad += trace
            .steps
            .iter()
            .filter(|s| !is_distribution(&s.attention) || !is_distribution(&s.probs))
            .count();
    }

    // a trace whose attention visits each row exactly once
    let k = 4;
    let config = ModelConfig {
        series: SeriesConfig {
            posts_per_interval: 3,
            min_series_len: 2,
            vocab_size: k,
        },
        layers: vec![5],
        init_hidden: 3,
        classifier_hidden: 3,
    };
    let model = Model::new(config, &mut rng).expect("model");
    let seq = FeatureSequence {
        event_id: "c".into(),
        label: Label::Rumor,
        matrices: vec![Mat::from_vec(k, 3, vec![1.0; k * 3]).expect("finite"); k],
    };
    let mut trace = model.forward_infer(&seq).expect("forward");
    for (t, step) in trace.steps.iter_mut().enumerate() {
        step.attention = (0..k).map(|i| if i == t { 1.0 } else { 0.0 }).collect();
    }
    let cfg = TrainConfig {
        attention_penalty: 1.5,
        ..TrainConfig::default()
    };
    let penalty = loss(&model, &trace, Label::Rumor, &cfg).attention_penalty;
    line(
        3,
        "probability invariants",
        bad == 0 && penalty == 0.0,
        format!("{PROB_MODELS} random models, {bad} bad distributions (tol {PROB_TOL:e}); constructed-trace penalty {penalty}"),
    )
}

struct Trained {
    model: Model,
    vocab: Vocabulary,
    series: SeriesConfig,
    test: Vec<Event>,
    test_seqs: Vec<FeatureSequence>,
}

fn separability() -> (Line, Option<Trained>) {
    let started = Instant::now();
    let synth = SynthConfig::default();
    let corpus = synth_generate(&synth).expect("synth");
    let split = split_dataset(&corpus, &SplitConfig::default()).expect("split");
    let series = SeriesConfig {
        posts_per_interval: 10,
        min_series_len: 5,
        vocab_size: 500,
    };
    let vocab = Vocabulary::build(&split.train, series.vocab_size).expect("vocab");
    let (train_seqs, _) = encode_all(&split.train, &vocab, &series).expect("encode");
    let (holdout_seqs, _) = encode_all(&split.holdout, &vocab, &series).expect("encode");
    let (test_seqs, _) = encode_all(&split.test, &vocab, &series).expect("encode");

    let model_cfg = ModelConfig {
        series,
        layers: vec![64, 32, 16],
        init_hidden: 16,
        classifier_hidden: 16,
    };
    let train_cfg = TrainConfig {
        learning_rate: 0.02,
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut rng = Rng::new(train_cfg.seed);
    let model = Model::new(model_cfg, &mut rng).expect("model");
    let outcome = train(model, &train_seqs, &holdout_seqs, &train_cfg).expect("train");
    let ours = evaluate(&outcome.model, &split.test, &vocab, &series).expect("eval");

    let rnn = BaselineRnn::new(series, 16, &mut rng);
    let rnn_out = train(rnn, &train_seqs, &holdout_seqs, &train_cfg).expect("train baseline");
    let theirs = evaluate(&rnn_out.model, &split.test, &vocab, &series).expect("eval baseline");

    let labels: Vec<Label> = split.test.iter().map(|e| e.label).collect();
    let majority = majority_baseline(&labels).expect("majority");
    let elapsed = started.elapsed();

    let f = ours.metrics.f_measure;
    let passed = f >= SEPARABILITY_F
        && f >= majority.accuracy() + MAJORITY_MARGIN
        && f >= theirs.metrics.f_measure
        && elapsed < SEPARABILITY_LIMIT;
    let l = line(
        4,
        "synthetic separability",
        passed,
        format!(
            "test F {f:.4} (P {:.4}, R {:.4}; >= {SEPARABILITY_F}); majority accuracy {:.4} (F {:.4}) + {MAJORITY_MARGIN}; \
             baseline RNN F {:.4}; best epoch {}/{}; {} (< {}s)",
            ours.metrics.precision,
            ours.metrics.recall,
            majority.accuracy(),
            majority.f_measure,
            theirs.metrics.f_measure,
            outcome.best_epoch,
            outcome.log.len(),
            secs(elapsed),
            SEPARABILITY_LIMIT.as_secs()
        ),
    );
    let trained = Trained {
        model: outcome.model,
        vocab,
        series,
        test: split.test,
        test_seqs,
    };
    (l, Some(trained))
}

fn attention_focus(t: &Trained, synth: &SynthConfig) -> Line {
    let rows: Vec<usize> = (1..=synth.signal_vocab_size)
        .filter_map(|i| t.vocab.position(&signal_token(i)))
        .collect();
    let mass = attention_mass(&t.model, &t.test_seqs, &rows).expect("attention");
    let uniform = synth.signal_vocab_size as f64 / t.series.vocab_size as f64;
    line(
        5,
        "attention focus",
        mass >= FOCUS_RATIO * uniform,
        format!(
            "mean mass on {} signal rows {mass:.4} vs uniform share {uniform:.4} ({:.2}x, need {FOCUS_RATIO}x)",
            rows.len(),
            mass / uniform
        ),
    )
}

fn earliness(t: &Trained) -> Line {
    let fractions = default_fractions();
    let curve = earliness_sweep(&t.model, &t.test, &t.vocab, &t.series, &fractions).expect("sweep");
    let f = |x: f64| curve.f_at(x).expect("fraction present");
    let (f01, f02, f08) = (f(0.1), f(0.2), f(0.8));
    let all: Vec<String> = curve.rows().iter().map(|(x, m)| format!("{x:.1}:{:.3}", m.f_measure)).collect();
    line(
        6,
        "earliness",
        f02 >= EARLY_F && f08 >= f01 - EARLY_SLACK,
        format!("F(0.2) {f02:.4} (>= {EARLY_F}); F(0.8) {f08:.4} vs F(0.1) {f01:.4} - {EARLY_SLACK}; [{}]", all.join(" ")),
    )
}

fn determinism() -> Line {
    let dir = tempfile::tempdir().expect("tempdir");
    let synth = SynthConfig {
        event_count: 80,
        posts_per_event_min: 30,
        posts_per_event_max: 60,
        ..SynthConfig::default()
    };
    let corpus_path = dir.path().join("corpus.jsonl");
    let corpus = synth_generate(&synth).expect("synth");
    rumor_core::corpus::save_corpus(&corpus, &corpus_path).expect("save");

    let run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let ck = dir.path().join(format!("{tag}.ckpt"));
        let text = format!(
            "corpus = {}\ncheckpoint = {}\nposts_per_interval = 10\nvocab_size = 100\nlayers = 12,8\n\
             init_hidden = 6\nclassifier_hidden = 6\nlearning_rate = 0.02\nepochs = 4\nbatch_size = 8\n",
            corpus_path.display(),
            ck.display()
        );
        let cfg = RunConfig::parse(&text, "determinism").expect("config");
        cmd_train(&cfg).expect("train");
        let log = fs::read(cfg.log_path().expect("log path")).expect("log");
        (log, fs::read(&ck).expect("checkpoint"))
    };
    let (log_a, ck_a) = run("a");
    let (log_b, ck_b) = run("b");
    line(
        7,
        "determinism",
        log_a == log_b && ck_a == ck_b,
        format!(
            "epoch logs identical: {}, checkpoints identical: {} ({} bytes)",
            log_a == log_b,
            ck_a == ck_b,
            ck_a.len()
        ),
    )
}

fn loss_units() -> Line {
    let config = ModelConfig {
        series: SeriesConfig {
            posts_per_interval: 2,
            min_series_len: 2,
            vocab_size: 2,
        },
        layers: vec![3],
        init_hidden: 2,
        classifier_hidden: 2,
    };
    let model = Model::zeros(config).expect("model");
    let seq = FeatureSequence {
        event_id: "u".into(),
        label: Label::NonRumor,
        matrices: vec![Mat::from_vec(2, 2, vec![1.0, 0.5, 0.0, 2.0]).expect("finite")],
    };
    let trace = model.forward_infer(&seq).expect("forward");
    let plain = TrainConfig {
        attention_penalty: 0.0,
        weight_decay: 0.0,
        ..TrainConfig::default()
    };
    let ce = loss(&model, &trace, seq.label, &plain).total;
    let penalised = TrainConfig {
        attention_penalty: 1.5,
        ..plain
    };
    let penalty = loss(&model, &trace, seq.label, &penalised).attention_penalty;
    let ce_err = (ce - std::f64::consts::LN_2).abs();
    let pen_err = (penalty - 0.75).abs();
    line(
        8,
        "loss unit values",
        trace.steps[0].attention == [0.5, 0.5] && ce_err <= LOSS_TOL && pen_err <= LOSS_TOL,
        format!("cross-entropy {ce:.15} (|err| {ce_err:.1e}), penalty {penalty:.15} (|err| {pen_err:.1e}), tol {LOSS_TOL:e}"),
    )
}

fn main() -> ExitCode {
    let mut lines = vec![gradient_oracle(), series_oracle(), probability_invariants()];
    let (l4, trained) = separability();
    lines.push(l4);
    match trained {
        Some(t) => {
            lines.push(attention_focus(&t, &SynthConfig::default()));
            lines.push(earliness(&t));
        }
        None => {
            lines.push(line(5, "attention focus", false, "no trained model".into()));
            lines.push(line(6, "earliness", false, "no trained model".into()));
        }
    }
    lines.push(determinism());
    lines.push(loss_units());

    let passed = lines.iter().filter(|l| l.passed).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    if passed == lines.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
