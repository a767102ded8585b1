//! Executable placement programs for indoor scene synthesis.
//!
//! Programs are CSG trees of spatial constraints that evaluate to binary
//! placement masks over (cell, orientation). The crate covers the scene
//! model, the program language and executor, initial program extraction,
//! a procedural bedroom oracle, the placement classifier, the bootstrapping
//! loop that grows programs, evaluation metrics and autoregressive synthesis.

pub mod bootstrap;
pub mod classifier;
pub mod config;
pub mod dsl;
pub mod eval;
pub mod exec;
pub mod extract;
pub mod features;
pub mod geom;
pub mod mask;
pub mod procgen;
pub mod scene;
pub mod seeds;
pub mod store;
pub mod synth;
