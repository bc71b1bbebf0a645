//! Hebrew diacritization at desk scale: Unicode-correct text handling, a
//! character-level bidirectional-LSTM tagger with three classification
//! heads, corpus packing, training, prediction, and the four-metric
//! evaluation protocol (decision / character / word / vocalization
//! accuracy).

pub mod checkpoint;
pub mod corpus;
pub mod hebrew;
pub mod infer;
pub mod metrics;
pub mod model;
pub mod train;

pub use corpus::{DatasetSplit, Document, LabeledSentence, PackedSequence};
pub use hebrew::{AnalyzedText, LetterLabel};
pub use model::{CharVocab, ModelParams, TrainingConfig};
pub use train::TrainLog;
