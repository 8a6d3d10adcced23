//! Early rumor detection from the first posts of a social-media event.
//!
//! Posts are grouped into variable-length time intervals, each interval is
//! encoded as a `K × N` tf-idf matrix, and a stacked LSTM with a location
//! softmax over word rows reads the sequence and emits a rumor probability
//! after every interval. Everything (forward pass, backpropagation through
//! time, Adam) is implemented on plain `f64` buffers.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod series;
pub mod training;

pub use corpus::{Corpus, Event, Label, Post};
pub use error::{Error, Result};
pub use evaluation::{Evaluation, Metrics};
pub use model::baseline::BaselineRnn;
pub use model::{Model, ModelConfig, Prediction};
pub use series::{FeatureSequence, SeriesConfig, Vocabulary};
pub use training::{TrainConfig, Trainable};
