use std::path::PathBuf;

use rumor_core::corpus::{load_corpus, split_dataset, synth_generate, SplitConfig, SynthConfig};
use rumor_core::evaluation::{
    attention_dump, default_fractions, earliness_sweep, encode_all, evaluate, format_metrics_report,
};
use rumor_core::model::checkpoint::{load_model, save_model};
use rumor_core::numerics::Rng;
use rumor_core::series::encode;
use rumor_core::training::train;
use rumor_core::{Label, Model, ModelConfig, SeriesConfig, TrainConfig, Vocabulary};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn fixture_corpus_loads_in_order() {
    let c = load_corpus(fixture("three_events.jsonl")).unwrap();
    let labels: Vec<Label> = c.events.iter().map(|e| e.label).collect();
    assert_eq!(labels, [Label::Rumor, Label::NonRumor, Label::Rumor]);
    assert_eq!(c.events[0].posts.len(), 3);
    assert_eq!(c.events[2].posts[0].text, "really?? fake");
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        event_count: 80,
        posts_per_event_min: 30,
        posts_per_event_max: 60,
        ..SynthConfig::default()
    }
}

fn series() -> SeriesConfig {
    SeriesConfig {
        posts_per_interval: 10,
        min_series_len: 3,
        vocab_size: 120,
    }
}

fn small_model(rng: &mut Rng) -> Model {
    let config = ModelConfig {
        series: series(),
        layers: vec![12, 8],
        init_hidden: 6,
        classifier_hidden: 6,
    };
    Model::new(config, rng).unwrap()
}

#[test]
fn end_to_end_on_a_small_synthetic_corpus() {
    let corpus = synth_generate(&small_synth()).unwrap();
    let split = split_dataset(&corpus, &SplitConfig::default()).unwrap();
    let vocab = Vocabulary::build(&split.train, series().vocab_size).unwrap();
    let (train_set, skipped) = encode_all(&split.train, &vocab, &series()).unwrap();
    assert_eq!(skipped, 0);
    let (holdout, _) = encode_all(&split.holdout, &vocab, &series()).unwrap();

    let cfg = TrainConfig {
        learning_rate: 0.02,
        epochs: 6,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let out = train(small_model(&mut Rng::new(3)), &train_set, &holdout, &cfg).unwrap();
    assert!(out.log.len() <= 6 && out.best_epoch <= out.log.len());

    let eval = evaluate(&out.model, &split.test, &vocab, &series()).unwrap();
    assert_eq!(eval.evaluated, split.test.len());
    assert_eq!(eval.metrics.total(), split.test.len());

    let curve = earliness_sweep(&out.model, &split.test, &vocab, &series(), &default_fractions()).unwrap();
    let report = format_metrics_report(&curve.rows());
    assert_eq!(report.lines().count(), 9);

    let full = earliness_sweep(&out.model, &split.test, &vocab, &series(), &[1.0]).unwrap();
    assert_eq!(full.points[0].metrics, eval.metrics);
}

#[test]
fn checkpoint_and_vocabulary_round_trip_preserve_predictions() {
    let corpus = synth_generate(&small_synth()).unwrap();
    let vocab = Vocabulary::build(&corpus.events, series().vocab_size).unwrap();
    let model = small_model(&mut Rng::new(5));
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path().join("m.ckpt")).unwrap();
    vocab.save(dir.path().join("m.vocab")).unwrap();
    let model2 = load_model(dir.path().join("m.ckpt")).unwrap();
    let vocab2 = Vocabulary::load(dir.path().join("m.vocab")).unwrap();
    for e in corpus.events.iter().take(10) {
        let a = model.predict(&encode(e, &vocab, &series()).unwrap()).unwrap();
        let b = model2.predict(&encode(e, &vocab2, &series()).unwrap()).unwrap();
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }
}

#[test]
fn attention_dump_lists_every_row_per_step() {
    let corpus = synth_generate(&small_synth()).unwrap();
    let vocab = Vocabulary::build(&corpus.events, series().vocab_size).unwrap();
    let model = small_model(&mut Rng::new(6));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("att.csv");
    let event = &corpus.events[0];
    let records = attention_dump(&model, event, &vocab, &series(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let k = series().vocab_size;
    assert_eq!(text.lines().count(), 1 + records.len() * (k + 1));
    assert!(text.starts_with("step,term,weight\n"));
    for r in &records {
        let total: f64 = r.weights.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(r.weights[0].0, vocab.terms()[0]);
    }
}

#[test]
fn wrong_vocabulary_size_is_rejected() {
    let corpus = synth_generate(&small_synth()).unwrap();
    let vocab = Vocabulary::build(&corpus.events, 50).unwrap();
    let model = small_model(&mut Rng::new(7));
    let err = evaluate(&model, &corpus.events, &vocab, &series()).unwrap_err();
    assert!(err.to_string().contains("K=50"), "{err}");
}
