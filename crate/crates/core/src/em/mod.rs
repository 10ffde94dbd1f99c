//! 2D electrostatics of coplanar strips on a dielectric half-space.

mod geometry;
mod refine;
mod solver;

pub use geometry::{
    interdigital_unit_cell, CrossSection, Parity, Strip, DEFAULT_DISCRETIZATION,
    DEFAULT_EDGE_CUTOFF_UM, MIN_DISCRETIZATION,
};
pub use refine::{refine_until_converged, refine_with, RefineOptions, RefinedSolution};
pub use solver::{solve_cross_section, FieldSolution, GapSample, MetalSample};
