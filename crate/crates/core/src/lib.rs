pub mod annotator;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod introspect;
pub mod models;
pub mod rng;
pub mod rules;
pub mod spl;
pub mod synth;
pub mod tfidf;
pub mod topic;

pub use error::{Error, Result};
pub use topic::Topic;
