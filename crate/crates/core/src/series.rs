//! Variable-length post series and tf-idf interval matrices.
//!
//! An event's posts are grouped into intervals (one recurrent time step
//! each). Every interval becomes a `K × N` matrix whose column `j` is the
//! tf-idf vector of the interval's `j`-th post, zero padded on the right.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::debug;

use crate::corpus::{Event, Label, Post};
use crate::error::{Error, Result};
use crate::numerics::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeriesConfig {
    /// Posts per interval (`N`), also the matrix column count.
    pub posts_per_interval: usize,
    /// Minimum number of intervals per event (`Min`).
    pub min_series_len: usize,
    /// Vocabulary capacity (`K`), also the matrix row count.
    pub vocab_size: usize,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig {
            posts_per_interval: 50,
            min_series_len: 5,
            vocab_size: 10_000,
        }
    }
}

impl SeriesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.posts_per_interval < 1 {
            return Err(Error::Validation("posts_per_interval must be >= 1".into()));
        }
        if self.min_series_len < 2 {
            return Err(Error::Validation("min_series_len must be >= 2".into()));
        }
        if self.vocab_size < 1 {
            return Err(Error::Validation("vocab_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostSeries {
    pub event_id: String,
    /// Post indices into the source event, one list per interval.
    pub intervals: Vec<Vec<usize>>,
}

impl PostSeries {
    pub fn sizes(&self) -> Vec<usize> {
        self.intervals.iter().map(Vec::len).collect()
    }

    fn from_sizes(event_id: &str, sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut start = 0;
        let intervals = sizes
            .into_iter()
            .map(|s| {
                let iv = (start..start + s).collect();
                start += s;
                iv
            })
            .collect();
        PostSeries {
            event_id: event_id.to_string(),
            intervals,
        }
    }
}

/// Interval sizes for an event of `n` posts.
///
/// Long events (`n >= N·Min`) take consecutive blocks of `N` posts and put
/// the remainder in a final interval, which is dropped when empty. Shorter
/// events get `Min - 1` intervals of `⌊n / Min⌋` posts and a final interval
/// holding the rest.
pub fn interval_sizes(n: usize, cfg: &SeriesConfig) -> Result<Vec<usize>> {
    let (big_n, min) = (cfg.posts_per_interval, cfg.min_series_len);
    if n < min {
        return Err(Error::Validation(format!(
            "event too short: {n} posts cannot form {min} non-empty intervals"
        )));
    }
    let mut sizes;
    if n >= big_n * min {
        sizes = vec![big_n; n / big_n];
        let rest = n % big_n;
        if rest > 0 {
            sizes.push(rest);
        }
    } else {
        let per = n / min;
        sizes = vec![per; min - 1];
        sizes.push(n - per * (min - 1));
    }
    Ok(sizes)
}

pub fn build_series(event: &Event, cfg: &SeriesConfig) -> Result<PostSeries> {
    let sizes = interval_sizes(event.posts.len(), cfg)
        .map_err(|e| Error::Validation(format!("event {:?}: {e}", event.id)))?;
    Ok(PostSeries::from_sizes(&event.id, sizes))
}

/// Splits `n` posts into `parts` near-equal consecutive intervals, larger
/// ones first. Used when a truncated event cannot reach `Min` intervals.
pub fn equal_split_series(event: &Event, parts: usize) -> Result<PostSeries> {
    let n = event.posts.len();
    if parts == 0 || parts > n {
        return Err(Error::Argument(format!("cannot split {n} posts into {parts} intervals")));
    }
    let (base, extra) = (n / parts, n % parts);
    Ok(PostSeries::from_sizes(
        &event.id,
        (0..parts).map(|i| base + usize::from(i < extra)),
    ))
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    total_docs: usize,
    capacity: usize,
}

impl Vocabulary {
    /// Keeps the `k` most frequent tokens of the training posts (ties broken
    /// lexicographically). Document frequencies are per post.
    pub fn build<'a>(events: impl IntoIterator<Item = &'a Event>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("vocabulary size must be >= 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut posts: Vec<&Post> = Vec::new();
        for e in events {
            for p in &e.posts {
                for tok in tokenize(&p.text) {
                    *counts.entry(tok).or_default() += 1;
                }
                posts.push(p);
            }
        }
        if posts.is_empty() {
            return Err(Error::Validation("empty training set for vocabulary".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        let terms: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
        let index: HashMap<String, usize> =
            terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut doc_freq = vec![0usize; terms.len()];
        let mut seen = vec![usize::MAX; terms.len()];
        for (doc, p) in posts.iter().enumerate() {
            for tok in tokenize(&p.text) {
                if let Some(&i) = index.get(&tok) {
                    if seen[i] != doc {
                        seen[i] = doc;
                        doc_freq[i] += 1;
                    }
                }
            }
        }
        Ok(Vocabulary {
            terms,
            index,
            doc_freq,
            total_docs: posts.len(),
            capacity: k,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn doc_freq(&self, term: &str) -> Option<usize> {
        self.position(term).map(|i| self.doc_freq[i])
    }

    /// Smoothed idf: `ln((1 + total_docs) / (1 + df)) + 1`.
    pub fn idf(&self, i: usize) -> f64 {
        ((1 + self.total_docs) as f64 / (1 + self.doc_freq[i]) as f64).ln() + 1.0
    }

    /// tf-idf vector of one post over the stored terms.
    pub fn tfidf_vector(&self, post: &Post) -> Vec<f64> {
        let mut tf = vec![0usize; self.terms.len()];
        for tok in tokenize(&post.text) {
            if let Some(&i) = self.index.get(&tok) {
                tf[i] += 1;
            }
        }
        tf.iter()
            .enumerate()
            .map(|(i, &c)| if c == 0 { 0.0 } else { c as f64 * self.idf(i) })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "total_docs\t{}\tcapacity\t{}", self.total_docs, self.capacity).map_err(io)?;
        for (i, t) in self.terms.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}", i + 1, t, self.doc_freq[i]).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let perr = |line: usize, msg: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
        let (total_docs, capacity) = match header.as_slice() {
            ["total_docs", n, "capacity", k] => (
                n.parse().map_err(|_| perr(1, "bad total_docs"))?,
                k.parse().map_err(|_| perr(1, "bad capacity"))?,
            ),
            _ => return Err(perr(1, "expected `total_docs\\t<n>\\tcapacity\\t<k>` header")),
        };
        let mut terms = Vec::new();
        let mut doc_freq = Vec::new();
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            let fields: Vec<&str> = line.split('\t').collect();
            let [rank, term, df] = fields.as_slice() else {
                return Err(perr(lineno, "expected `rank\\tterm\\tdoc_freq`"));
            };
            if rank.parse::<usize>().ok() != Some(terms.len() + 1) {
                return Err(perr(lineno, "ranks must be consecutive from 1"));
            }
            let df: usize = df.parse().map_err(|_| perr(lineno, "bad doc_freq"))?;
            if df == 0 {
                return Err(perr(lineno, "doc_freq must be >= 1"));
            }
            terms.push(term.to_string());
            doc_freq.push(df);
        }
        if terms.len() > capacity {
            return Err(perr(1, "more terms than capacity"));
        }
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary {
            terms,
            index,
            doc_freq,
            total_docs,
            capacity,
        })
    }
}

/// The per-step `K × N` input matrices of one event.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub event_id: String,
    pub label: Label,
    pub matrices: Vec<Mat>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.matrices.first().map(Mat::shape)
    }
}

pub fn encode_event(
    event: &Event,
    series: &PostSeries,
    vocab: &Vocabulary,
    cfg: &SeriesConfig,
) -> Result<FeatureSequence> {
    if vocab.capacity() != cfg.vocab_size {
        return Err(Error::shape(
            "encode_event",
            format!("vocabulary K={}", vocab.capacity()),
            format!("config K={}", cfg.vocab_size),
        ));
    }
    if series.event_id != event.id {
        return Err(Error::Argument(format!(
            "series for {:?} applied to event {:?}",
            series.event_id, event.id
        )));
    }
    let (k, n) = (cfg.vocab_size, cfg.posts_per_interval);
    let mut matrices = Vec::with_capacity(series.intervals.len());
    for interval in &series.intervals {
        if interval.len() > n {
            debug!(
                "event {:?}: interval of {} posts truncated to {n}",
                event.id,
                interval.len()
            );
        }
        let mut m = Mat::zeros(k, n);
        for (j, &pi) in interval.iter().take(n).enumerate() {
            let post = event.posts.get(pi).ok_or_else(|| {
                Error::Argument(format!("post index {pi} out of range for {:?}", event.id))
            })?;
            for (i, v) in vocab.tfidf_vector(post).into_iter().enumerate() {
                if v != 0.0 {
                    m.set(i, j, v);
                }
            }
        }
        matrices.push(m);
    }
    Ok(FeatureSequence {
        event_id: event.id.clone(),
        label: event.label,
        matrices,
    })
}

/// `build_series` followed by `encode_event`.
pub fn encode(event: &Event, vocab: &Vocabulary, cfg: &SeriesConfig) -> Result<FeatureSequence> {
    let series = build_series(event, cfg)?;
    encode_event(event, &series, vocab, cfg)
}
