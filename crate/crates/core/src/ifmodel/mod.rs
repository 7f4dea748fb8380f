//! Miniature inverse-folding model: geometry featurizer, freezable structure
//! encoder, autoregressive decoder, and constrained variant generation.

pub mod features;
pub mod generate;
pub mod model;
pub mod params;
pub mod structure;
pub mod vocab;

pub use features::{backbone_dihedrals, featurize, featurize_all, FeatureStore, StructureFeatures};
pub use generate::{generate_variants, mutable_pool, GeneratedVariants, GenerationConfig, MutablePool, PoolEntry, Variant};
pub use model::{
    decode_graph, decode_logprobs, encode, encode_graph, loglik_graph, score_sequences, sequence_loglik,
    teacher_forced_rows, ResidueEmbeddings, SequenceLogLik,
};
pub use params::{FreezeMask, ModelDims, ModelParameters, NamedParam, ParamGroup, ParamVars};
pub use structure::{BackboneStructure, Residue};
pub use vocab::{ScoreSpan, TokenizedSequence, Vocabulary};
