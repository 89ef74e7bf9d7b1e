//! Relation-centric question answering over knowledge graphs.
//!
//! The crate covers the full desk-scale pipeline: a triple store with hub
//! penalty and IDF statistics, seed-driven subgraph retrieval, textualisation
//! and strict answer parsing, the rule-based reward, an exhaustive oracle over
//! candidate answers, benchmark generation, evaluation metrics, a GRPO toy
//! trainer and a line-delimited scoring service.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod answer;
pub mod eval;
pub mod graph;
pub mod grpo;
pub mod oracle;
pub mod querygen;
pub mod retriever;
pub mod scalar;
pub mod service;
pub mod subgraph;
pub mod verifier;

pub use answer::{format_answer, parse_answer, parse_answer_bytes, textualize, ParseOptions, ParsedAnswer, RawTriple};
pub use eval::{aggregate, subgraph_f1, EvalAccumulator, EvalError, EvalReport, F1Score};
pub use graph::{
    EntityId, GraphBuilder, GraphError, GraphStats, KnowledgeGraph, LoadOptions, RelationId, Triple, TripleId,
};
pub use grpo::{GrpoConfig, GrpoError, PolicyState, TrainOutcome};
pub use oracle::{enumerate_candidates, optimal_answer, CandidateSet, EnumerationLimits, OracleError};
pub use querygen::{QueryGenError, Split, TemplateSet};
pub use retriever::{retrieve, PruneConfig, PruningTrace, Retrieval, RetrieveError};
pub use scalar::Scalar;
pub use service::{Registry, ScoreRequest, ScoreResponse, ScoreResult, ServiceError};
pub use subgraph::{Subgraph, SubgraphError};
pub use verifier::{score, score_subgraph, RewardBreakdown, RewardConfig, ShortCircuit, VerifierError};

pub type RewardConfig64 = RewardConfig<f64>;
pub type RewardConfig32 = RewardConfig<f32>;
pub type RewardBreakdown64 = RewardBreakdown<f64>;
pub type RewardBreakdown32 = RewardBreakdown<f32>;
pub type PruneConfig64 = PruneConfig<f64>;
pub type PruningTrace64 = PruningTrace<f64>;
pub type EvalReport64 = EvalReport<f64>;
pub type GrpoConfig64 = GrpoConfig<f64>;
pub type PolicyState64 = PolicyState<f64>;
