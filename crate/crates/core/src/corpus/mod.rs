//! Labelled event mentions: file formats, vocabulary, embeddings, position
//! features, type-disjoint splits and a synthetic generator.

mod mention;
mod position;
mod split;
mod synth;
mod vocab;

pub use mention::{load_jsonl, parse_jsonl, save_jsonl, write_jsonl, EventMention, LoadReport, RejectedRecord};
pub use position::{position_features, PositionFeature, DEFAULT_POSITION_ROWS};
pub use split::{split_by_type, DatasetSplit, SplitName, SplitSection, SplitSpec};
pub use synth::{signature_word, synth_generate, type_label, SynthConfig, SIGNATURES_PER_TYPE};
pub use vocab::{
    build_vocab, load_embeddings, parse_embeddings, EmbeddingTable, Vocabulary, OOV_INIT_BOUND, PAD, UNK,
};
