//! Simulation environments: a frictionless cart-pole and a battery-limited
//! multi-agent coverage world.

pub mod cartpole;
pub mod coverage;
pub mod voronoi;

pub use cartpole::{CartPole, CartPoleParams, FeatureScaling};
pub use coverage::{CoverageConfig, CoverageWorld, StepRecord};
pub use voronoi::{polygon_area, voronoi_cells, Polygon};
