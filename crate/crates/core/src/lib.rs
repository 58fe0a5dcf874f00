//! Sequence-to-forest extraction of nested, overlapping and discontinuous
//! named entities.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod detector;
pub mod encoder;
pub mod eval;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod training;
