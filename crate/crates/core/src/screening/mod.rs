//! Two-stage candidate screening: quantile prefilter on two channels, then a
//! Pareto-optimal panel over the frontier metrics.

pub mod filter;
pub mod pipeline;
pub mod scorer;

pub use filter::{
    default_specs, dominates, pareto_front, quantile_cut, stage1_filter, validate_specs, CandidateScore, MetricSpec,
    Orientation, Stage, Stage1Result,
};
pub use pipeline::{run_pipeline, Dropped, PipelineConfig, PipelineResult, StageCounts};
pub use scorer::{
    load_external_scores, surrogate_scorers, Candidate, ExternalScorer, ScoreOutcome, Scorer, ScorerRegistry,
    ScoringContext, Surrogate, SurrogateKind, BURIAL_RADIUS, SCORES_HEADER,
};
