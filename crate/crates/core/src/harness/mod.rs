//! Run orchestration: configuration, corpora, output directories, the
//! end-to-end pipelines, and figures.

pub mod config;
pub mod corpus;
pub mod persist;
pub mod pipeline;
pub mod plot;

pub use config::{CorpusConfig, DetectorSection, EvalConfig, RunConfig, SplitSelection};
pub use corpus::{
    generate_corpus, ingest_corpus, BackgroundStyle, Corpus, Lighting, ManifestRecord, Split, SyntheticCorpusSpec,
    MANIFEST,
};
pub use persist::{OutputDir, LOCK_FILE};
pub use pipeline::*;
