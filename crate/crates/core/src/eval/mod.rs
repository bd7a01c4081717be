//! Correlation metrics, five-crop inference and the labeled benchmarks.

mod bench;
mod five_crop;
mod metrics;

pub use bench::{
    base_texture, export_bench, gen_corpus, gen_synthetic_bench, ingest_external, random_split, write_manifest,
    Family, Ingested, ScoredItem, ScoredSet, Split, SyntheticBenchSpec, MANIFEST_HEADER,
};
pub use five_crop::{five_crop_score, five_crops};
pub use metrics::{average_ranks, median, plcc, srcc};
