//! Assay ingestion, dataset splitting, and synthetic ground-truth datasets.

pub mod assay;
pub mod split;
pub mod synth;

pub use assay::{
    load_assays, load_structures, read_assays, save_assays, write_assays, Dataset, ScoreType, StructureSet,
    VariantRecord, ASSAY_HEADER,
};
pub use split::{split_supervised, split_zero_shot, DatasetSplit, SplitManifest, SplitMode, SUPERVISED_RATIOS};
pub use synth::{synth_generate, AssayOracle, SyntheticData, SyntheticOracle, SyntheticOracleConfig};
