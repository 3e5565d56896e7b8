//! Simulation of on-line nearest-neighbour graphs and geometric preferential
//! attachment graphs on random point sequences, with degree-sequence
//! estimators and seeded replicate experiments.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod growth;
pub mod spatial_index;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{Density, Domain, DomainKind, Point, RngStream};
pub use growth::{Attractiveness, GraphState, GrowthOptions, Model, SamplerKind};
pub use spatial_index::{Backend, OnlineIndex};
