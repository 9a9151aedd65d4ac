//! Curation toolkit that turns a multilingual knowledge graph into culturally
//! grounded visual question-answering records.

pub mod exec;
pub mod images;
pub mod kg;
pub mod replay;
pub mod select;
pub mod text;
pub mod dataset;
pub mod gateway;
pub mod qa;
pub mod sampler;
pub mod eval;
pub mod synth;
pub mod pipeline;
