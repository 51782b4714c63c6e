//! Multi-objective, self-reflective keyword generation for sponsored search.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`domain`]: keywords, clusters, metric schemas and the persisted campaign state.
//! - [`ranking`]: min-max normalisation, entropy weights, TOPSIS and cluster ranking.
//! - [`clustering`]: embeddings, affinity propagation and LLM-assisted assignment.
//! - [`llm`]: chat backends, prompt templates and reply parsers.
//! - [`tools`]: the generation tool suite (search, filters, volume, lexical, category).
//! - [`orchestrator`]: the constraint-feedback generation loop, reflection and the campaign loop.
//! - [`simulator`]: a seeded sponsored-search market, baseline policies and an A/B harness.
//! - [`evaluation`]: ROUGE-1, embedding similarity and normalised result tables.

pub mod clustering;
pub mod domain;
pub mod evaluation;
pub mod llm;
pub mod orchestrator;
pub mod ranking;
pub mod simulator;
pub mod text;
pub mod tools;

pub use domain::{
    canonical, BrandClass, CampaignState, Cluster, ClusterId, Keyword, KeywordId, KeywordStatus,
    MetricSchema, Orientation, PerformanceRecord, ProductInfo, ToolOutcome, ToolVerdict,
    WeightMode,
};
pub use ranking::{NormalizedMatrix, RankedClusters, RankedKeywords, WeightVector};
