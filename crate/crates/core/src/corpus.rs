//! Events, posts, corpus files, synthetic generation, splitting and
//! earliness truncation.
//!
//! A corpus file is UTF-8 with one JSON object per line:
//!
//! ```text
//! {"event_id":"e1","label":1,"posts":[{"text":"is this true?","timestamp":1500000000}]}
//! ```
//!
//! Unknown fields are ignored. Posts are re-sorted by timestamp on load,
//! keeping file order for equal timestamps.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::info;
use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub text: String,
    pub timestamp: i64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    NonRumor,
    Rumor,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::NonRumor => 0,
            Label::Rumor => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Rumor
        } else {
            Label::NonRumor
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::NonRumor => Label::Rumor,
            Label::Rumor => Label::NonRumor,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::NonRumor),
            1 => Ok(Label::Rumor),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "event_id")]
    pub id: String,
    pub label: Label,
    pub posts: Vec<Post>,
}

impl Event {
    /// Validates the invariants and sorts posts by timestamp (stable).
    pub fn new(id: impl Into<String>, label: Label, mut posts: Vec<Post>) -> Result<Self> {
        let id = id.into();
        if posts.is_empty() {
            return Err(Error::Validation(format!("event {id:?} has no posts")));
        }
        for (j, p) in posts.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(Error::Validation(format!("event {id:?} post {j} has empty text")));
            }
            if p.timestamp < 0 {
                return Err(Error::Validation(format!(
                    "event {id:?} post {j} has negative timestamp {}",
                    p.timestamp
                )));
            }
        }
        posts.sort_by_key(|p| p.timestamp);
        Ok(Event { id, label, posts })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub events: Vec<Event>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(events: Vec<Event>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &events {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate event id {:?}", e.id)));
            }
        }
        Ok(Corpus {
            events,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.events.iter().filter(|e| e.label == label).count()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: n + 1,
            msg,
        };
        let raw: Event = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let event = Event::new(raw.id, raw.label, raw.posts).map_err(|e| parse_err(e.to_string()))?;
        events.push(event);
    }
    Corpus::new(events, format!("loaded from {}", path.display()))
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &corpus.events {
        let line = serde_json::to_string(e).expect("events always serialize");
        writeln!(w, "{line}").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Synthetic corpus parameters. Rumor posts carry "enquiry" signal tokens
/// and every event is dominated by reposts.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub event_count: usize,
    pub class_balance: f64,
    pub posts_per_event_min: usize,
    pub posts_per_event_max: usize,
    pub tokens_per_post: usize,
    pub background_vocab_size: usize,
    pub signal_vocab_size: usize,
    pub signal_rate: f64,
    pub duplication_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            event_count: 400,
            class_balance: 0.5,
            posts_per_event_min: 50,
            posts_per_event_max: 150,
            tokens_per_post: 2,
            background_vocab_size: 500,
            signal_vocab_size: 10,
            signal_rate: 0.3,
            duplication_rate: 0.8,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("class_balance", self.class_balance),
            ("signal_rate", self.signal_rate),
            ("duplication_rate", self.duplication_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.posts_per_event_min < 1 {
            return Err(Error::Validation("posts_per_event_min must be >= 1".into()));
        }
        if self.posts_per_event_max < self.posts_per_event_min {
            return Err(Error::Validation(
                "posts_per_event_max must be >= posts_per_event_min".into(),
            ));
        }
        for (name, v) in [
            ("tokens_per_post", self.tokens_per_post),
            ("background_vocab_size", self.background_vocab_size),
            ("signal_vocab_size", self.signal_vocab_size),
        ] {
            if v < 1 {
                return Err(Error::Validation(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

pub fn background_token(rank: usize) -> String {
    format!("w{rank}")
}

pub fn signal_token(i: usize) -> String {
    format!("sig{i}")
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);

    let rumors = (cfg.event_count as f64 * cfg.class_balance).round() as usize;
    let mut labels: Vec<Label> = (0..cfg.event_count)
        .map(|i| if i < rumors { Label::Rumor } else { Label::NonRumor })
        .collect();
    rng.shuffle(&mut labels);

    // rank-r frequency ∝ 1/r
    let zipf = WeightedIndex::new((1..=cfg.background_vocab_size).map(|r| 1.0 / r as f64))
        .expect("non-empty positive weights");

    let mut events = Vec::with_capacity(cfg.event_count);
    for (idx, label) in labels.into_iter().enumerate() {
        let n = cfg.posts_per_event_min + rng.below(cfg.posts_per_event_max - cfg.posts_per_event_min + 1);
        let mut ts = 1_400_000_000 + rng.below(100_000_000) as i64;
        let mut texts: Vec<String> = Vec::with_capacity(n);
        let mut posts = Vec::with_capacity(n);
        for j in 0..n {
            let text = if j > 0 && rng.bernoulli(cfg.duplication_rate) {
                texts[rng.below(j)].clone()
            } else {
                let mut tokens: Vec<String> = (0..cfg.tokens_per_post)
                    .map(|_| background_token(zipf.sample(&mut rng) + 1))
                    .collect();
                if label == Label::Rumor && rng.bernoulli(cfg.signal_rate) {
                    let slot = rng.below(tokens.len());
                    tokens[slot] = signal_token(rng.below(cfg.signal_vocab_size) + 1);
                }
                tokens.join(" ")
            };
            ts += 1 + rng.below(600) as i64;
            texts.push(text.clone());
            posts.push(Post { text, timestamp: ts });
        }
        events.push(Event::new(format!("ev{idx:05}"), label, posts)?);
    }
    Corpus::new(
        events,
        format!(
            "synthetic seed={} events={} p={} q={}",
            cfg.seed, cfg.event_count, cfg.signal_rate, cfg.duplication_rate
        ),
    )
}

/// Fraction of posts whose text repeats an earlier post of the same event.
pub fn duplicate_fraction(corpus: &Corpus) -> f64 {
    let mut dup = 0usize;
    let mut total = 0usize;
    for e in &corpus.events {
        let mut seen = HashSet::new();
        for p in &e.posts {
            if !seen.insert(p.text.as_str()) {
                dup += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        dup as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub holdout_frac: f64,
    /// Train share of the non-holdout remainder (3:2 → 3, 2).
    pub train_parts: usize,
    pub test_parts: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            holdout_frac: 0.15,
            train_parts: 3,
            test_parts: 2,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub holdout: Vec<Event>,
    pub train: Vec<Event>,
    pub test: Vec<Event>,
    /// Majority-class events removed to keep train and test at 1:1.
    pub dropped: usize,
}

/// Stratified holdout / train / test split keeping train and test balanced.
pub fn split_dataset(corpus: &Corpus, cfg: &SplitConfig) -> Result<Split> {
    if !(0.0..1.0).contains(&cfg.holdout_frac) || cfg.train_parts + cfg.test_parts == 0 {
        return Err(Error::Argument("bad split configuration".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut by_class: [Vec<&Event>; 2] = [Vec::new(), Vec::new()];
    for e in &corpus.events {
        by_class[e.label.index()].push(e);
    }
    for (label, events) in by_class.iter().enumerate() {
        if events.len() < 10 {
            return Err(Error::Validation(format!(
                "split needs at least 10 events per class, class {label} has {}",
                events.len()
            )));
        }
    }
    for events in by_class.iter_mut() {
        rng.shuffle(events);
    }

    let holdout_n: Vec<usize> = by_class
        .iter()
        .map(|ev| ((ev.len() as f64 * cfg.holdout_frac).floor() as usize).max(1))
        .collect();
    let rest = (0..2).map(|c| by_class[c].len() - holdout_n[c]).min().unwrap();
    let train_n = rest * cfg.train_parts / (cfg.train_parts + cfg.test_parts);

    let mut split = Split {
        holdout: Vec::new(),
        train: Vec::new(),
        test: Vec::new(),
        dropped: 0,
    };
    for c in 0..2 {
        let ev = &by_class[c];
        let h = holdout_n[c];
        split.holdout.extend(ev[..h].iter().map(|e| (*e).clone()));
        split.train.extend(ev[h..h + train_n].iter().map(|e| (*e).clone()));
        split.test.extend(ev[h + train_n..h + rest].iter().map(|e| (*e).clone()));
        split.dropped += ev.len() - h - rest;
    }
    if split.dropped > 0 {
        info!("split: dropped {} surplus events to keep classes 1:1", split.dropped);
    }
    rng.shuffle(&mut split.holdout);
    rng.shuffle(&mut split.train);
    rng.shuffle(&mut split.test);
    Ok(split)
}

/// Keeps the first `ceil(frac · n)` posts, never fewer than one.
pub fn truncate_fraction(event: &Event, frac: f64) -> Result<Event> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Argument(format!("fraction {frac} outside (0, 1]")));
    }
    let n = event.posts.len();
    // guard against 0.3 * 10 = 3.0000000000000004 style rounding
    let keep = ((frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(Event {
        id: event.id.clone(),
        label: event.label,
        posts: event.posts[..keep].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(text: &str, ts: i64) -> Post {
        Post {
            text: text.into(),
            timestamp: ts,
        }
    }

    fn event_with(n: usize) -> Event {
        let posts = (0..n).map(|i| post(&format!("p{i}"), i as i64)).collect();
        Event::new("e", Label::Rumor, posts).unwrap()
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_sorts_posts() {
        let f = write_tmp(
            r#"{"event_id":"e1","label":1,"posts":[{"text":"later","timestamp":20},{"text":"earlier","timestamp":10}]}"#,
        );
        let c = load_corpus(f.path()).unwrap();
        let texts: Vec<_> = c.events[0].posts.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["earlier", "later"]);
    }

    #[test]
    fn load_ties_keep_file_order() {
        let f = write_tmp(
            r#"{"event_id":"e1","label":0,"posts":[{"text":"b","timestamp":5},{"text":"a","timestamp":5},{"text":"c","timestamp":1}]}"#,
        );
        let c = load_corpus(f.path()).unwrap();
        let texts: Vec<_> = c.events[0].posts.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["c", "b", "a"]);
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let line = r#"{"event_id":"e1","label":1,"posts":[{"text":"x","timestamp":1}]}"#;
        let f = write_tmp(&format!("{line}\n{line}\n"));
        let err = load_corpus(f.path()).unwrap_err();
        assert!(err.to_string().contains("\"e1\""), "{err}");
    }

    #[test]
    fn load_reports_line_numbers() {
        let good = r#"{"event_id":"e1","label":1,"posts":[{"text":"x","timestamp":1}]}"#;
        let f = write_tmp(&format!("{good}\n{{not json\n"));
        match load_corpus(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let f = write_tmp(r#"{"event_id":"e1","label":1,"posts":[]}"#);
        assert!(matches!(load_corpus(f.path()), Err(Error::Parse { line: 1, .. })));
        let f = write_tmp(r#"{"event_id":"e1","label":2,"posts":[{"text":"x","timestamp":1}]}"#);
        assert!(load_corpus(f.path()).is_err());
        let f = write_tmp(r#"{"event_id":"e1","label":1,"posts":[{"text":"  ","timestamp":1}]}"#);
        assert!(load_corpus(f.path()).is_err());
    }

    #[test]
    fn load_ignores_unknown_fields() {
        let f = write_tmp(
            r#"{"event_id":"e1","label":1,"source":"x","posts":[{"text":"x","timestamp":1,"user":"u"}]}"#,
        );
        assert_eq!(load_corpus(f.path()).unwrap().len(), 1);
    }

    #[test]
    fn forced_duplication_copies_first_post() {
        let cfg = SynthConfig {
            event_count: 20,
            duplication_rate: 1.0,
            ..SynthConfig::default()
        };
        let c = synth_generate(&cfg).unwrap();
        for e in &c.events {
            assert!(e.posts.iter().all(|p| p.text == e.posts[0].text));
        }
    }

    #[test]
    fn zero_signal_rate_has_no_signal_tokens() {
        let cfg = SynthConfig {
            event_count: 40,
            signal_rate: 0.0,
            ..SynthConfig::default()
        };
        let c = synth_generate(&cfg).unwrap();
        assert!(c
            .events
            .iter()
            .flat_map(|e| &e.posts)
            .all(|p| !p.text.contains("sig")));
    }

    #[test]
    fn default_corpus_duplication_and_balance() {
        let c = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(c.len(), 400);
        assert_eq!(c.count(Label::Rumor), 200);
        let dup = duplicate_fraction(&c);
        assert!((0.75..=0.85).contains(&dup), "duplicate fraction {dup}");
        // signal tokens only ever appear in rumors
        for e in &c.events {
            let has_sig = e.posts.iter().any(|p| p.text.contains("sig"));
            if e.label == Label::NonRumor {
                assert!(!has_sig);
            }
        }
    }

    #[test]
    fn synth_is_reproducible_and_round_trips() {
        let cfg = SynthConfig {
            event_count: 30,
            ..SynthConfig::default()
        };
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_corpus(&a, &p1).unwrap();
        save_corpus(&b, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let back = load_corpus(&p1).unwrap();
        assert_eq!(back.events, a.events);
    }

    #[test]
    fn synth_rejects_bad_rates() {
        let cfg = SynthConfig {
            signal_rate: 1.5,
            ..SynthConfig::default()
        };
        let err = synth_generate(&cfg).unwrap_err();
        assert!(err.to_string().contains("signal_rate"));
    }

    fn balanced(n_per_class: usize) -> Corpus {
        let events = (0..2 * n_per_class)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Rumor } else { Label::NonRumor };
                Event::new(format!("e{i}"), label, vec![post("x", 0)]).unwrap()
            })
            .collect();
        Corpus::new(events, "test").unwrap()
    }

    fn class_counts(events: &[Event]) -> (usize, usize) {
        let r = events.iter().filter(|e| e.label == Label::Rumor).count();
        (r, events.len() - r)
    }

    #[test]
    fn split_sizes_match_ratios() {
        let s = split_dataset(&balanced(500), &SplitConfig::default()).unwrap();
        assert_eq!(class_counts(&s.holdout), (75, 75));
        assert_eq!(class_counts(&s.train), (255, 255));
        assert_eq!(class_counts(&s.test), (170, 170));

        let s = split_dataset(&balanced(10), &SplitConfig::default()).unwrap();
        assert_eq!(class_counts(&s.holdout), (1, 1));
        assert_eq!(class_counts(&s.train), (5, 5));
        assert_eq!(class_counts(&s.test), (4, 4));
    }

    #[test]
    fn split_is_deterministic_disjoint_and_balanced() {
        let mut c = balanced(40);
        // make it imbalanced: 40 rumors, 25 non-rumors
        c.events.retain(|e| {
            e.label == Label::Rumor || e.id[1..].parse::<usize>().unwrap() < 50
        });
        let cfg = SplitConfig {
            seed: 3,
            ..SplitConfig::default()
        };
        let a = split_dataset(&c, &cfg).unwrap();
        assert_eq!(a, split_dataset(&c, &cfg).unwrap());
        let (tr, tn) = class_counts(&a.train);
        let (sr, sn) = class_counts(&a.test);
        assert!(tr.abs_diff(tn) <= 1 && sr.abs_diff(sn) <= 1);
        let mut ids: Vec<&str> = a
            .holdout
            .iter()
            .chain(&a.train)
            .chain(&a.test)
            .map(|e| e.id.as_str())
            .collect();
        let total = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), total);
        assert_eq!(total + a.dropped, c.len());
    }

    #[test]
    fn split_rejects_small_corpora() {
        assert!(matches!(
            split_dataset(&balanced(9), &SplitConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn truncation_examples() {
        let e = event_with(10);
        assert_eq!(truncate_fraction(&e, 0.3).unwrap().posts, e.posts[..3]);
        let e8 = event_with(8);
        assert_eq!(truncate_fraction(&e8, 0.1).unwrap().posts.len(), 1);
        assert_eq!(truncate_fraction(&e, 1.0).unwrap(), e);
        assert!(truncate_fraction(&e, 0.0).is_err());
        assert!(truncate_fraction(&e, 1.2).is_err());
    }

    proptest! {
        #[test]
        fn truncation_is_monotone_prefix(n in 1usize..300, f1 in 0.001f64..1.0, f2 in 0.001f64..1.0) {
            let e = event_with(n);
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = truncate_fraction(&e, lo).unwrap();
            let b = truncate_fraction(&e, hi).unwrap();
            prop_assert!(a.posts.len() >= 1);
            prop_assert!(a.posts.len() <= b.posts.len());
            prop_assert_eq!(&a.posts[..], &b.posts[..a.posts.len()]);
        }
    }
}
