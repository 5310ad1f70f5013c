//! Procedural reasoning over multimodal recipes.
//!
//! An entity-aware comprehension model that reads step-structured
//! instructions, tracks ingredient states in a relational memory updated
//! after every step, attends between text, entities, and question images,
//! and answers multiple-choice visual questions by cosine ranking.
//!
//! The crate ships the full stack: corpus ingestion and a deterministic
//! synthetic benchmark ([`corpus`]), entity extraction ([`entities`]),
//! encoders and the memory/attention/fusion/scoring pipeline, training and
//! evaluation loops, heuristic baselines, and analysis exports. All math
//! runs on an in-crate reverse-mode tape ([`graph`]) so every module's
//! analytic gradients are verified against finite differences.

pub mod analysis;
pub mod attention;
pub mod benchmark;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod entities;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod memory;
pub mod model;
pub mod params;
pub mod scoring;
pub mod training;
pub mod tensor;

pub use config::{ModelConfig, Variant};
pub use error::{PrnError, Result};
