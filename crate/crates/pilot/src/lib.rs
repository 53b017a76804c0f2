//! PILOT toolkit: structured psycholinguistic persona profiles, steering
//! prompt rendering, a pluggable generation provider gateway, and the
//! steerability/diversity/quality evaluation pipeline.

pub mod corpus;
pub mod diversity;
pub mod pipeline;
pub mod prompt;
pub mod provider;
pub mod schema;
pub mod stats;
pub mod steer;
