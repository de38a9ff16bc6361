//! Knowledge-graph grounded synthetic data for conversational movie search.
//!
//! The pipeline runs `catalog` → `kg` → `grammar` → `synth`, renders the
//! result with `promptkit`, and scores model output with `evaluation`.
//! `retrieval` ranks catalog records against extracted entities.

pub mod catalog;
pub mod cli;
pub mod entity;
pub mod evaluation;
pub mod grammar;
pub mod http;
pub mod kg;
pub mod kv;
pub mod promptkit;
pub mod retrieval;
pub mod synth;
pub mod text;

pub use entity::{EntityClass, EntityMap, Intent};
